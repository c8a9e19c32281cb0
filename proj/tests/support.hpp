#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <unistd.h>

#include "oracle_uq/answer.hpp"
#include "oracle_uq/error.hpp"
#include "oracle_uq/metrics.hpp"
#include "oracle_uq/model.hpp"
#include "oracle_uq/synthetic.hpp"

namespace oracle_uq::test_support {

inline ChatContext steered_context(const SampleKey& key, double coefficient = 1.0,
                                   std::string question = "What is the secret word?") {
  ChatContext ctx;
  ctx.turns.push_back({Role::kUser, std::move(question)});
  SteeringSpec s;
  s.activation_ref = item_ref(key);
  s.coefficient = coefficient;
  ctx.steering = s;
  return ctx;
}

inline ChatContext plain_context(std::string question = "What is the secret word?") {
  ChatContext ctx;
  ctx.turns.push_back({Role::kUser, std::move(question)});
  return ctx;
}

inline SyntheticItem item(std::string word, double signal, std::vector<Distractor> distractors = {},
                          std::optional<double> null_mass = std::nullopt, int context = 0) {
  SyntheticItem it;
  it.key = {std::move(word), context, 0};
  it.signal = signal;
  if (!distractors.empty()) it.distractors = std::move(distractors);
  it.null_mass = null_mass;
  return it;
}

inline SyntheticSpec small_spec(std::vector<std::string> words, std::vector<SyntheticItem> items) {
  SyntheticSpec spec;
  spec.vocab = TabooVocabulary(std::move(words));
  spec.contexts = 1;
  spec.verbalizers = 1;
  spec.items = std::move(items);
  return spec;
}

inline std::vector<Outcome> outcomes(std::initializer_list<std::pair<double, int>> xs) {
  std::vector<Outcome> out;
  for (const auto& [c, y] : xs) out.push_back({c, y != 0});
  return out;
}

inline std::vector<Outcome> random_outcomes(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Outcome> out(n);
  for (auto& o : out) {
    o.confidence = u(rng);
    o.correct = u(rng) < o.confidence;
  }
  return out;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an oracle_uq::Error";
  return ErrorCode::kWireError;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("oracle_uq_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle_uq::test_support
