#include "guard/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "guard/common.hpp"

namespace guard {

std::vector<std::string> ablation_axes() {
  return {"finetune_ratio", "loss_function", "embedding_dim", "pooling",
          "epochs",         "normalization", "topology",      "classifier_kind"};
}

void AblationSpec::validate() const {
  const auto axes = ablation_axes();
  if (std::find(axes.begin(), axes.end(), axis) == axes.end()) {
    throw ConfigError("unknown ablation axis: " + axis);
  }
  if (values.empty()) throw ConfigError("ablation needs at least one value");
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (data_path.empty()) synthetic.validate();
}

AblationSpec AblationSpec::from_json(const nlohmann::json& j) {
  AblationSpec spec;
  spec.axis = j.at("axis").get<std::string>();
  for (const auto& v : j.at("values")) spec.values.push_back(v);
  if (j.contains("seeds")) spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("base")) spec.base = ExperimentConfig::from_json(j.at("base"));
  if (j.contains("synthetic")) spec.synthetic = SyntheticSpec::from_json(j.at("synthetic"));
  spec.data_path = j.value("data", spec.data_path);
  spec.validate();
  return spec;
}

ExperimentConfig apply_axis(const ExperimentConfig& base, const std::string& axis,
                            const nlohmann::json& value) {
  ExperimentConfig config = base;
  try {
    if (axis == "finetune_ratio") {
      config.train.finetune_ratio = value.get<double>();
    } else if (axis == "loss_function") {
      config.loss.kind = parse_loss_kind(value.get<std::string>());
    } else if (axis == "embedding_dim") {
      config.encoder.output_dim = value.get<std::size_t>();
    } else if (axis == "pooling") {
      config.encoder.pooling = parse_pooling(value.get<std::string>());
    } else if (axis == "epochs") {
      config.train.epochs = value.get<std::size_t>();
    } else if (axis == "normalization") {
      config.encoder.add_normalization = value.get<bool>();
    } else if (axis == "topology") {
      config.topology = parse_topology(value.get<std::string>());
    } else if (axis == "classifier_kind") {
      config.head = parse_head_kind(value.get<std::string>());
    } else {
      throw ConfigError("unknown ablation axis: " + axis);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad value for axis " + axis + ": " + e.what());
  }
  return config;
}

std::string AblationTable::to_csv() const {
  std::string out = "axis,value,accuracy,f1,uap,auprc\n";
  char buf[256];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f,%.6f\n", row.accuracy, row.f1, row.uap,
                  row.auprc);
    out += axis;
    out += ',';
    out += row.value;
    out += buf;
  }
  return out;
}

void AblationTable::save_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << to_csv();
}

AblationTable run_ablation(const AblationSpec& spec) {
  spec.validate();
  const std::vector<ReconciledInstance> data = spec.data_path.empty()
                                                   ? generate_synthetic_corpus(spec.synthetic)
                                                   : load_instances(spec.data_path);

  AblationTable table;
  table.axis = spec.axis;
  for (const auto& value : spec.values) {
    const ExperimentConfig with_value = apply_axis(spec.base, spec.axis, value);
    AblationRow row;
    row.value = value.is_string() ? value.get<std::string>() : value.dump();
    for (const std::uint64_t seed : spec.seeds) {
      ExperimentConfig config = with_value;
      config.set_seed(seed);
      const ExperimentResult result = run_experiment(data, config);
      row.accuracy += result.report.binary.accuracy;
      row.f1 += result.report.binary.f1;
      row.uap += result.report.binary.uap;
      row.auprc += result.report.auprc;
    }
    const double n = static_cast<double>(spec.seeds.size());
    row.accuracy /= n;
    row.f1 /= n;
    row.uap /= n;
    row.auprc /= n;
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace guard
