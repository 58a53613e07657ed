#include "guard/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "guard/common.hpp"

namespace guard {

namespace {

std::string pool_token(const std::string& prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%s%03zu", prefix.c_str(), i);
  return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (categories.size() < 2) throw ConfigError("synthetic: need at least two categories");
  if (std::set<std::string>(categories.begin(), categories.end()).size() != categories.size()) {
    throw ConfigError("synthetic: duplicate categories");
  }
  if (std::find(categories.begin(), categories.end(), "safe") == categories.end()) {
    throw ConfigError("synthetic: categories must include safe");
  }
  if (instances < categories.size()) throw ConfigError("synthetic: too few instances");
  if (min_tokens < 1 || max_tokens < min_tokens) throw ConfigError("synthetic: bad token range");
  if (noise_fraction < 0.0 || noise_fraction >= 1.0) {
    throw ConfigError("synthetic: noise_fraction must be in [0, 1)");
  }
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw ConfigError("synthetic: train_fraction must be in (0, 1)");
  }
  if (noise_tokens < 1) throw ConfigError("synthetic: need a noise pool");
  // Specials + a small character set also occupy vocabulary slots.
  constexpr std::size_t kReserved = 24;
  if (vocabulary < kReserved + noise_tokens + categories.size()) {
    throw ConfigError("synthetic: vocabulary too small for the pools");
  }
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"instances", instances},
          {"vocabulary", vocabulary},
          {"noise_fraction", noise_fraction},
          {"noise_tokens", noise_tokens},
          {"min_tokens", min_tokens},
          {"max_tokens", max_tokens},
          {"train_fraction", train_fraction},
          {"seed", seed},
          {"categories", categories}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  if (j.contains("instances")) s.instances = j.at("instances").get<std::size_t>();
  if (j.contains("vocabulary")) s.vocabulary = j.at("vocabulary").get<std::size_t>();
  if (j.contains("noise_fraction")) s.noise_fraction = j.at("noise_fraction").get<double>();
  if (j.contains("noise_tokens")) s.noise_tokens = j.at("noise_tokens").get<std::size_t>();
  if (j.contains("min_tokens")) s.min_tokens = j.at("min_tokens").get<std::size_t>();
  if (j.contains("max_tokens")) s.max_tokens = j.at("max_tokens").get<std::size_t>();
  if (j.contains("train_fraction")) s.train_fraction = j.at("train_fraction").get<double>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("categories")) s.categories = j.at("categories").get<std::vector<std::string>>();
  return s;
}

std::vector<ReconciledInstance> generate_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  const Taxonomy& taxonomy = Taxonomy::aegis();
  std::vector<std::size_t> label_ids;
  for (const auto& category : spec.categories) {
    const auto id = taxonomy.resolve(category);
    if (!id) throw ConfigError("synthetic: unknown category '" + category + "'");
    label_ids.push_back(*id);
  }
  constexpr std::size_t kReserved = 24;
  const std::size_t pool_size =
      (spec.vocabulary - kReserved - spec.noise_tokens) / spec.categories.size();

  std::vector<std::vector<std::string>> pools(spec.categories.size());
  for (std::size_t k = 0; k < spec.categories.size(); ++k) {
    for (std::size_t i = 0; i < pool_size; ++i) {
      pools[k].push_back(pool_token("c" + std::to_string(k) + "w", i));
    }
  }
  std::vector<std::string> noise;
  for (std::size_t i = 0; i < spec.noise_tokens; ++i) noise.push_back(pool_token("nz", i));

  std::vector<ReconciledInstance> out;
  out.reserve(spec.instances);
  const double test_fraction = 1.0 - spec.train_fraction;
  std::vector<std::size_t> class_counter(spec.categories.size(), 0);
  for (std::size_t i = 0; i < spec.instances; ++i) {
    const std::size_t k = i % spec.categories.size();
    std::mt19937_64 rng = derive_rng(spec.seed, i);
    std::uniform_int_distribution<std::size_t> length_dist(spec.min_tokens, spec.max_tokens);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> noise_dist(0, noise.size() - 1);
    std::uniform_int_distribution<std::size_t> pool_dist(0, pools[k].size() - 1);

    const std::size_t length = length_dist(rng);
    std::string text;
    for (std::size_t t = 0; t < length; ++t) {
      if (t > 0) text.push_back(' ');
      text += coin(rng) < spec.noise_fraction ? noise[noise_dist(rng)] : pools[k][pool_dist(rng)];
    }

    // Even within-class test cadence so the split is exact and stratified.
    const std::size_t c = class_counter[k]++;
    const bool is_test =
        std::floor(static_cast<double>(c + 1) * test_fraction) -
            std::floor(static_cast<double>(c) * test_fraction) >=
        1.0;
    out.push_back(
        ReconciledInstance{text, label_ids[k], is_test ? Split::kTest : Split::kTrain});
  }
  return out;
}

}  // namespace guard
