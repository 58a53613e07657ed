#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guard/experiment.hpp"
#include "guard/synthetic.hpp"

namespace guard {

// One knob swept over a list of values, each value retrained per seed and
// averaged. The base config supplies everything the axis does not touch.
struct AblationSpec {
  std::string axis;
  std::vector<nlohmann::json> values;
  std::vector<std::uint64_t> seeds = {21};
  ExperimentConfig base;
  SyntheticSpec synthetic;
  std::string data_path;  // preprocessed instances JSONL; empty -> synthetic

  void validate() const;
  static AblationSpec from_json(const nlohmann::json& j);
};

std::vector<std::string> ablation_axes();

// Returns the config with `value` applied to `axis`. Seeds are applied
// separately via ExperimentConfig::set_seed.
ExperimentConfig apply_axis(const ExperimentConfig& base, const std::string& axis,
                            const nlohmann::json& value);

struct AblationRow {
  std::string value;
  double accuracy = 0.0;
  double f1 = 0.0;
  double uap = 0.0;
  double auprc = 0.0;
};

struct AblationTable {
  std::string axis;
  std::vector<AblationRow> rows;

  std::string to_csv() const;
  void save_csv(const std::string& path) const;
};

AblationTable run_ablation(const AblationSpec& spec);

}  // namespace guard
