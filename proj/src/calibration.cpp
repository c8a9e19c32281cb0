#include "oracle_uq/calibration.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <numeric>

#include "oracle_uq/error.hpp"
#include "oracle_uq/random.hpp"

namespace oracle_uq {
namespace {

void require_both_classes(std::span<const Outcome> xs, const char* what) {
  require(!xs.empty(), ErrorCode::kEmptyInput, std::string(what) + " fit on no records");
  std::size_t pos = 0;
  for (const auto& x : xs) pos += x.correct;
  require(pos > 0 && pos < xs.size(), ErrorCode::kSingleClass,
          std::string(what) + " fit needs both correct and wrong records");
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

struct LogisticFit {
  Eigen::VectorXd w;
  int iterations = 0;
};

// Damped Newton on the mean logistic loss plus ridge/2 * |w_slopes|^2.
// The last column of X is the intercept and is not penalized.
LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const SolverOptions& opts,
                         Eigen::VectorXd w) {
  const auto n = static_cast<double>(X.rows());
  const Eigen::Index p = X.cols();
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, opts.ridge);
  penalty(p - 1) = 0.0;

  const auto loss = [&](const Eigen::VectorXd& v) {
    const Eigen::VectorXd z = X * v;
    double s = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) s += softplus(z(i)) - y(i) * z(i);
    return s / n + 0.5 * (penalty.array() * v.array().square()).sum();
  };

  double current = loss(w);
  for (int it = 0; it < opts.max_iterations; ++it) {
    const Eigen::VectorXd z = X * w;
    Eigen::VectorXd mu(z.size()), weight(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      mu(i) = sigmoid(z(i));
      weight(i) = mu(i) * (1.0 - mu(i));
    }
    const Eigen::VectorXd grad = X.transpose() * (mu - y) / n + penalty.cwiseProduct(w);
    if (grad.norm() < opts.gradient_tolerance) return {w, it};

    Eigen::MatrixXd H = X.transpose() * weight.asDiagonal() * X / n;
    H.diagonal() += penalty;
    H.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = H.ldlt().solve(grad);

    double t = 1.0;
    Eigen::VectorXd next = w - step;
    double next_loss = loss(next);
    for (int halvings = 0; halvings < 40 && !(next_loss <= current); ++halvings) {
      t *= 0.5;
      next = w - t * step;
      next_loss = loss(next);
    }
    if (!(next_loss <= current)) break;
    w = std::move(next);
    current = next_loss;
  }
  const Eigen::VectorXd z = X * w;
  Eigen::VectorXd mu(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) mu(i) = sigmoid(z(i));
  const Eigen::VectorXd grad = X.transpose() * (mu - y) / n + penalty.cwiseProduct(w);
  require(grad.norm() < opts.gradient_tolerance, ErrorCode::kNonConvergence,
          "logistic fit did not converge after " + std::to_string(opts.max_iterations) +
              " iterations (gradient norm " + std::to_string(grad.norm()) + ")");
  return {w, opts.max_iterations};
}

Eigen::VectorXd labels_of(std::span<const Outcome> xs) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) y(static_cast<Eigen::Index>(i)) = xs[i].correct ? 1.0 : 0.0;
  return y;
}

double clamp_eps(double c, double eps) { return std::clamp(c, eps, 1.0 - eps); }

}  // namespace

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

std::string_view to_string(CalibratorKind kind) {
  switch (kind) {
    case CalibratorKind::kTemperature: return "temperature";
    case CalibratorKind::kPlatt: return "platt";
    case CalibratorKind::kIsotonic: return "isotonic";
    case CalibratorKind::kBeta: return "beta";
  }
  return "unknown";
}

CalibratorKind parse_calibrator_kind(std::string_view text) {
  for (auto k : kAllCalibrators) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown calibrator '" + std::string(text) + "'");
}

CalibratorModel::CalibratorModel(Params params, double epsilon) : params_(std::move(params)), epsilon_(epsilon) {
  if (const auto* t = std::get_if<TemperatureParams>(&params_)) {
    require(t->tau > 0.0 && std::isfinite(t->tau), ErrorCode::kInvalidArgument, "temperature must be positive");
  }
  if (const auto* iso = std::get_if<IsotonicParams>(&params_)) {
    require(!iso->breakpoints.empty() && iso->breakpoints.size() == iso->values.size(),
            ErrorCode::kInvalidArgument, "isotonic breakpoints and values must match");
    require(std::is_sorted(iso->values.begin(), iso->values.end()), ErrorCode::kInvalidArgument,
            "isotonic values must be non-decreasing");
  }
}

CalibratorKind CalibratorModel::kind() const {
  return static_cast<CalibratorKind>(params_.index());
}

double CalibratorModel::apply(double c) const {
  const double ct = clamp_eps(c, epsilon_);
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, TemperatureParams>) {
          return sigmoid(logit(ct) / p.tau);
        } else if constexpr (std::is_same_v<P, PlattParams>) {
          return sigmoid(p.a * logit(ct) + p.b);
        } else if constexpr (std::is_same_v<P, BetaParams>) {
          return sigmoid(p.beta1 * std::log(ct) - p.beta2 * std::log1p(-ct) + p.intercept);
        } else {
          const auto it = std::upper_bound(p.breakpoints.begin(), p.breakpoints.end(), c);
          if (it == p.breakpoints.begin()) return p.values.front();
          return p.values[static_cast<std::size_t>(it - p.breakpoints.begin()) - 1];
        }
      },
      params_);
}

std::vector<Outcome> CalibratorModel::apply(std::span<const Outcome> xs) const {
  std::vector<Outcome> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back({apply(x.confidence), x.correct});
  return out;
}

nlohmann::json CalibratorModel::to_json() const {
  nlohmann::json j{{"kind", to_string(kind())}, {"epsilon", epsilon_}};
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, TemperatureParams>) {
          j["tau"] = p.tau;
        } else if constexpr (std::is_same_v<P, PlattParams>) {
          j["a"] = p.a;
          j["b"] = p.b;
        } else if constexpr (std::is_same_v<P, BetaParams>) {
          j["beta1"] = p.beta1;
          j["beta2"] = p.beta2;
          j["intercept"] = p.intercept;
        } else {
          j["breakpoints"] = p.breakpoints;
          j["values"] = p.values;
        }
      },
      params_);
  return j;
}

CalibratorModel CalibratorModel::from_json(const nlohmann::json& j) {
  const double eps = j.value("epsilon", kDefaultNllEpsilon);
  switch (parse_calibrator_kind(j.at("kind").get<std::string>())) {
    case CalibratorKind::kTemperature:
      return CalibratorModel(TemperatureParams{j.at("tau").get<double>()}, eps);
    case CalibratorKind::kPlatt:
      return CalibratorModel(PlattParams{j.at("a").get<double>(), j.at("b").get<double>()}, eps);
    case CalibratorKind::kBeta:
      return CalibratorModel(BetaParams{j.at("beta1").get<double>(), j.at("beta2").get<double>(),
                                        j.at("intercept").get<double>()},
                             eps);
    case CalibratorKind::kIsotonic:
      return CalibratorModel(IsotonicParams{j.at("breakpoints").get<std::vector<double>>(),
                                            j.at("values").get<std::vector<double>>()},
                             eps);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown calibrator kind");
}

double temperature_objective(std::span<const Outcome> xs, double tau, double epsilon) {
  double s = 0.0;
  for (const auto& x : xs) {
    const double z = logit(clamp_eps(x.confidence, epsilon)) / tau;
    s += x.correct ? softplus(-z) : softplus(z);
  }
  return s / static_cast<double>(xs.size());
}

CalibratorModel fit_temperature(std::span<const Outcome> fit_set, double epsilon) {
  require_both_classes(fit_set, "temperature");
  const auto objective = [&](double log_tau) { return temperature_objective(fit_set, std::exp(log_tau), epsilon); };
  // 2^-20 relative precision keeps |d ln tau| near 1e-6.
  const auto [log_tau, _] = boost::math::tools::brent_find_minima(objective, -4.0, 4.0, 20);
  return CalibratorModel(TemperatureParams{std::exp(log_tau)}, epsilon);
}

CalibratorModel fit_platt(std::span<const Outcome> fit_set, const SolverOptions& opts, double epsilon) {
  require_both_classes(fit_set, "Platt");
  const auto n = static_cast<Eigen::Index>(fit_set.size());
  Eigen::MatrixXd X(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = logit(clamp_eps(fit_set[static_cast<std::size_t>(i)].confidence, epsilon));
    X(i, 1) = 1.0;
  }
  const auto fit = fit_logistic(X, labels_of(fit_set), opts, Eigen::Vector2d(1.0, 0.0));
  return CalibratorModel(PlattParams{fit.w(0), fit.w(1)}, epsilon);
}

CalibratorModel fit_beta(std::span<const Outcome> fit_set, const SolverOptions& opts, double epsilon) {
  require_both_classes(fit_set, "beta");
  const auto n = static_cast<Eigen::Index>(fit_set.size());
  Eigen::MatrixXd X(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double c = clamp_eps(fit_set[static_cast<std::size_t>(i)].confidence, epsilon);
    X(i, 0) = std::log(c);
    X(i, 1) = -std::log1p(-c);
    X(i, 2) = 1.0;
  }
  const auto fit = fit_logistic(X, labels_of(fit_set), opts, Eigen::Vector3d(1.0, 1.0, 0.0));
  return CalibratorModel(BetaParams{fit.w(0), fit.w(1), fit.w(2)}, epsilon);
}

namespace {

struct IsotonicSolution {
  std::vector<double> levels;  // distinct confidences, ascending
  std::vector<double> values;  // fitted value per level
};

IsotonicSolution solve_isotonic(std::span<const Outcome> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a].confidence < xs[b].confidence; });

  IsotonicSolution sol;
  std::vector<double> sums, weights;
  for (std::size_t i : order) {
    const double y = xs[i].correct ? 1.0 : 0.0;
    if (!sol.levels.empty() && sol.levels.back() == xs[i].confidence) {
      sums.back() += y;
      weights.back() += 1.0;
    } else {
      sol.levels.push_back(xs[i].confidence);
      sums.push_back(y);
      weights.push_back(1.0);
    }
  }

  struct Block {
    double sum, weight;
    std::size_t first, last;  // level indices, inclusive
  };
  std::vector<Block> stack;
  for (std::size_t i = 0; i < sums.size(); ++i) {
    stack.push_back({sums[i], weights[i], i, i});
    while (stack.size() > 1) {
      const Block& b = stack.back();
      const Block& a = stack[stack.size() - 2];
      if (a.sum / a.weight <= b.sum / b.weight) break;
      Block merged{a.sum + b.sum, a.weight + b.weight, a.first, b.last};
      stack.pop_back();
      stack.back() = merged;
    }
  }
  sol.values.resize(sol.levels.size());
  for (const auto& b : stack) {
    for (std::size_t i = b.first; i <= b.last; ++i) sol.values[i] = b.sum / b.weight;
  }
  return sol;
}

}  // namespace

std::vector<double> isotonic_fitted_values(std::span<const Outcome> xs) {
  const auto sol = solve_isotonic(xs);
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) {
    const auto it = std::lower_bound(sol.levels.begin(), sol.levels.end(), x.confidence);
    out.push_back(sol.values[static_cast<std::size_t>(it - sol.levels.begin())]);
  }
  return out;
}

CalibratorModel fit_isotonic(std::span<const Outcome> fit_set) {
  require(!fit_set.empty(), ErrorCode::kEmptyInput, "isotonic fit on no records");
  auto sol = solve_isotonic(fit_set);
  return CalibratorModel(IsotonicParams{std::move(sol.levels), std::move(sol.values)});
}

CalibratorModel fit_calibrator(CalibratorKind kind, std::span<const Outcome> fit_set) {
  switch (kind) {
    case CalibratorKind::kTemperature: return fit_temperature(fit_set);
    case CalibratorKind::kPlatt: return fit_platt(fit_set);
    case CalibratorKind::kIsotonic: return fit_isotonic(fit_set);
    case CalibratorKind::kBeta: return fit_beta(fit_set);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown calibrator kind");
}

MetricRow evaluate_calibrated(const CalibratorModel& cal, std::span<const Outcome> test_set) {
  const auto mapped = cal.apply(test_set);
  return metric_row(mapped);
}

std::string_view to_string(SplitKind kind) {
  return kind == SplitKind::kWordDisjoint ? "word_disjoint" : "random_half";
}

std::vector<std::string> word_disjoint_fit_words(std::vector<std::string> words, std::uint64_t seed) {
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  require(words.size() >= 2 && words.size() % 2 == 0, ErrorCode::kTooFewWords,
          "word-disjoint split needs an even number of words >= 2, got " + std::to_string(words.size()));
  Rng rng(seed);
  shuffle(words, rng);
  words.resize(words.size() / 2);
  std::sort(words.begin(), words.end());
  return words;
}

SplitResult split(std::span<const EvalRecord> records, const SplitSpec& spec) {
  SplitResult out;
  if (spec.kind == SplitKind::kWordDisjoint) {
    std::vector<std::string> words;
    for (const auto& r : records) words.push_back(r.key.word);
    const auto fit_words = word_disjoint_fit_words(std::move(words), spec.seed);
    for (const auto& r : records) {
      const bool fit = std::binary_search(fit_words.begin(), fit_words.end(), r.key.word);
      (fit ? out.fit : out.test).push_back(r);
    }
    return out;
  }
  require(records.size() >= 2, ErrorCode::kEmptyInput, "random split needs at least two records");
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(spec.seed);
  shuffle(idx, rng);
  std::vector<bool> in_fit(records.size(), false);
  for (std::size_t i = 0; i < records.size() / 2; ++i) in_fit[idx[i]] = true;
  for (std::size_t i = 0; i < records.size(); ++i) (in_fit[i] ? out.fit : out.test).push_back(records[i]);
  return out;
}

}  // namespace oracle_uq
