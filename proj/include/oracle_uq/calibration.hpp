#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "oracle_uq/metrics.hpp"

namespace oracle_uq {

enum class CalibratorKind { kTemperature, kPlatt, kIsotonic, kBeta };

inline constexpr std::array<CalibratorKind, 4> kAllCalibrators{
    CalibratorKind::kTemperature, CalibratorKind::kPlatt, CalibratorKind::kIsotonic,
    CalibratorKind::kBeta};

std::string_view to_string(CalibratorKind kind);
CalibratorKind parse_calibrator_kind(std::string_view text);

struct TemperatureParams {
  double tau = 1.0;
};

struct PlattParams {
  double a = 1.0;
  double b = 0.0;
};

struct IsotonicParams {
  std::vector<double> breakpoints;  // ascending distinct confidences
  std::vector<double> values;       // non-decreasing step values
};

struct BetaParams {
  double beta1 = 1.0;
  double beta2 = 1.0;
  double intercept = 0.0;
};

class CalibratorModel {
 public:
  using Params = std::variant<TemperatureParams, PlattParams, IsotonicParams, BetaParams>;

  CalibratorModel() : params_(TemperatureParams{}) {}
  explicit CalibratorModel(Params params, double epsilon = kDefaultNllEpsilon);

  CalibratorKind kind() const;
  const Params& params() const { return params_; }
  double epsilon() const { return epsilon_; }

  double apply(double confidence) const;
  std::vector<Outcome> apply(std::span<const Outcome> xs) const;

  nlohmann::json to_json() const;
  static CalibratorModel from_json(const nlohmann::json& j);

 private:
  Params params_;
  double epsilon_ = kDefaultNllEpsilon;
};

double sigmoid(double z);
double logit(double p);

struct SolverOptions {
  double ridge = 1e-8;  // on slope coefficients only
  double gradient_tolerance = 1e-8;
  int max_iterations = 200;
};

CalibratorModel fit_temperature(std::span<const Outcome> fit_set, double epsilon = kDefaultNllEpsilon);
CalibratorModel fit_platt(std::span<const Outcome> fit_set, const SolverOptions& opts = {},
                          double epsilon = kDefaultNllEpsilon);
CalibratorModel fit_isotonic(std::span<const Outcome> fit_set);
CalibratorModel fit_beta(std::span<const Outcome> fit_set, const SolverOptions& opts = {},
                         double epsilon = kDefaultNllEpsilon);
CalibratorModel fit_calibrator(CalibratorKind kind, std::span<const Outcome> fit_set);

/// PAV fitted value for each input, in input order. Equal confidences are
/// pooled before the violator pass.
std::vector<double> isotonic_fitted_values(std::span<const Outcome> xs);

/// Mean negative log-likelihood of sigma(logit(c)/tau); the temperature objective.
double temperature_objective(std::span<const Outcome> xs, double tau, double epsilon = kDefaultNllEpsilon);

MetricRow evaluate_calibrated(const CalibratorModel& cal, std::span<const Outcome> test_set);

enum class SplitKind { kWordDisjoint, kRandomHalf };

std::string_view to_string(SplitKind kind);

struct SplitSpec {
  SplitKind kind = SplitKind::kWordDisjoint;
  std::uint64_t seed = 1;

  static SplitSpec word_disjoint(std::uint64_t seed = 1) { return {SplitKind::kWordDisjoint, seed}; }
  static SplitSpec random_half(std::uint64_t seed = 2) { return {SplitKind::kRandomHalf, seed}; }
};

struct SplitResult {
  std::vector<EvalRecord> fit;
  std::vector<EvalRecord> test;
};

/// Word-disjoint: seeded shuffle of the sorted distinct words, the first half
/// fits. Random half: seeded shuffle of records, the first floor(n/2) fit.
SplitResult split(std::span<const EvalRecord> records, const SplitSpec& spec);

/// The fit-half word set of a word-disjoint split over `words`.
std::vector<std::string> word_disjoint_fit_words(std::vector<std::string> words, std::uint64_t seed);

}  // namespace oracle_uq
