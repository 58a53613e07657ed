#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guard/corpus.hpp"

namespace guard {

// Keyword-pool corpus: each class owns a disjoint slice of the word
// inventory; a shared noise pool is mixed in at noise_fraction. Class
// balance and the train/test split are exact and deterministic.
struct SyntheticSpec {
  std::size_t instances = 2000;
  std::size_t vocabulary = 1000;  // target size for Vocabulary::build
  double noise_fraction = 0.2;
  std::size_t noise_tokens = 200;
  std::size_t min_tokens = 10;
  std::size_t max_tokens = 24;
  double train_fraction = 0.8;
  std::uint64_t seed = 21;
  std::vector<std::string> categories = {"safe", "violence", "harassment", "criminal_planning"};

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

std::vector<ReconciledInstance> generate_synthetic_corpus(const SyntheticSpec& spec);

}  // namespace guard
