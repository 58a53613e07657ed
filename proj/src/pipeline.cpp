#include "guard/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>

#include "guard/common.hpp"

namespace guard {

namespace {

namespace fs = std::filesystem;

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// Binary heads are [safe, <unsafe class>]; the head flags unsafe when the
// argmax leaves id 0.
struct HeadCall {
  bool unsafe;
  double p_unsafe;
};

HeadCall call_binary_head(const ClassifierHead& head, const Eigen::VectorXf& embedding) {
  const std::vector<double> probs = head.predict_proba(embedding);
  return {argmax_index(probs) != 0, probs[1]};
}

}  // namespace

std::string topology_name(TopologyKind topology) {
  switch (topology) {
    case TopologyKind::kBebc:
      return "bebc";
    case TopologyKind::kMemc:
      return "memc";
    case TopologyKind::kMcemc:
      return "mcemc";
    case TopologyKind::kMcemcc:
      return "mcemcc";
  }
  throw ConfigError("unknown topology");
}

TopologyKind parse_topology(const std::string& name) {
  std::string key;
  for (char c : name) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (key == "bebc") return TopologyKind::kBebc;
  if (key == "memc") return TopologyKind::kMemc;
  if (key == "mcemc") return TopologyKind::kMcemc;
  if (key == "mcemcc") return TopologyKind::kMcemcc;
  throw ConfigError("unknown topology '" + name + "'");
}

bool aggregate_all_agree(const std::vector<bool>& head_unsafe) {
  return std::any_of(head_unsafe.begin(), head_unsafe.end(), [](bool u) { return u; });
}

void GuardrailPipeline::validate() const {
  const std::size_t want_encoders = topology_ == TopologyKind::kMemc ? 7 : 1;
  const std::size_t want_heads =
      (topology_ == TopologyKind::kMemc || topology_ == TopologyKind::kMcemc) ? 7 : 1;
  if (encoders_.size() != want_encoders) {
    throw ConfigError("pipeline: topology " + topology_name(topology_) + " needs " +
                      std::to_string(want_encoders) + " encoder(s), got " +
                      std::to_string(encoders_.size()));
  }
  if (heads_.size() != want_heads) {
    throw ConfigError("pipeline: topology " + topology_name(topology_) + " needs " +
                      std::to_string(want_heads) + " head(s), got " +
                      std::to_string(heads_.size()));
  }
  if (head_classes_.size() != heads_.size()) {
    throw ConfigError("pipeline: head class names missing");
  }
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const std::size_t enc = topology_ == TopologyKind::kMemc ? i : 0;
    if (heads_[i]->input_dim() != encoders_[enc].config().output_dim) {
      throw ConfigError("pipeline: head input dim does not match encoder output dim");
    }
    if (head_classes_[i].size() != heads_[i]->num_classes()) {
      throw ConfigError("pipeline: head class name count mismatch");
    }
    const bool binary_topology = topology_ != TopologyKind::kMcemcc;
    if (binary_topology && (heads_[i]->num_classes() != 2 || head_classes_[i][0] != kSafeLabel)) {
      throw ConfigError("pipeline: binary heads must be [safe, unsafe-class]");
    }
  }
  if (topology_ == TopologyKind::kMcemcc) {
    const auto& classes = head_classes_[0];
    if (std::find(classes.begin(), classes.end(), kSafeLabel) == classes.end()) {
      throw ConfigError("pipeline: multi-class head needs a safe class");
    }
  }
}

GuardrailPipeline GuardrailPipeline::assemble(TopologyKind topology, std::vector<Encoder> encoders,
                                              std::vector<std::unique_ptr<ClassifierHead>> heads,
                                              std::vector<std::vector<std::string>> head_classes,
                                              std::string model_id) {
  GuardrailPipeline p;
  p.topology_ = topology;
  p.encoders_ = std::move(encoders);
  p.heads_ = std::move(heads);
  p.head_classes_ = std::move(head_classes);
  p.model_id_ = std::move(model_id);
  p.validate();
  return p;
}

Verdict GuardrailPipeline::classify(const std::string& text) const {
  const auto start = std::chrono::steady_clock::now();
  Verdict verdict;

  switch (topology_) {
    case TopologyKind::kBebc: {
      const Eigen::VectorXf embedding = encoders_[0].embed_text(text);
      const HeadCall call = call_binary_head(*heads_[0], embedding);
      verdict.unsafe = call.unsafe;
      verdict.unsafe_score = call.p_unsafe;
      verdict.category_scores[head_classes_[0][0]] = 1.0 - call.p_unsafe;
      verdict.category_scores[head_classes_[0][1]] = call.p_unsafe;
      verdict.top_category = head_classes_[0][call.unsafe ? 1 : 0];
      break;
    }
    case TopologyKind::kMemc:
    case TopologyKind::kMcemc: {
      Eigen::VectorXf shared;
      if (topology_ == TopologyKind::kMcemc) shared = encoders_[0].embed_text(text);
      std::vector<bool> head_unsafe(heads_.size());
      double best = -1.0;
      for (std::size_t i = 0; i < heads_.size(); ++i) {
        const Eigen::VectorXf embedding =
            topology_ == TopologyKind::kMemc ? encoders_[i].embed_text(text) : shared;
        const HeadCall call = call_binary_head(*heads_[i], embedding);
        head_unsafe[i] = call.unsafe;
        const std::string& category = head_classes_[i][1];
        verdict.category_scores[category] = call.p_unsafe;
        if (call.p_unsafe > best) {
          best = call.p_unsafe;
          verdict.top_category = category;
        }
      }
      verdict.unsafe = aggregate_all_agree(head_unsafe);
      verdict.unsafe_score = best;
      break;
    }
    case TopologyKind::kMcemcc: {
      const Eigen::VectorXf embedding = encoders_[0].embed_text(text);
      const std::vector<double> probs = heads_[0]->predict_proba(embedding);
      const auto& classes = head_classes_[0];
      const std::size_t top = argmax_index(probs);
      double p_safe = 0.0;
      for (std::size_t c = 0; c < classes.size(); ++c) {
        verdict.category_scores[classes[c]] = probs[c];
        if (classes[c] == kSafeLabel) p_safe = probs[c];
      }
      verdict.top_category = classes[top];
      verdict.unsafe = classes[top] != kSafeLabel;
      verdict.unsafe_score = 1.0 - p_safe;
      break;
    }
  }

  verdict.label = verdict.unsafe ? "unsafe" : kSafeLabel;
  verdict.latency_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return verdict;
}

void GuardrailPipeline::save_bundle(const std::string& dir) const {
  fs::create_directories(dir);
  nlohmann::json manifest = {{"format_version", 1},
                             {"topology", topology_name(topology_)},
                             {"model_id", model_id_}};
  nlohmann::json encoders = nlohmann::json::array();
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    const std::string name = "encoder_" + std::to_string(i) + ".grd";
    encoders_[i].save((fs::path(dir) / name).string());
    encoders.push_back(name);
  }
  nlohmann::json heads = nlohmann::json::array();
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const std::string name = "head_" + std::to_string(i) + ".grd";
    heads_[i]->save((fs::path(dir) / name).string());
    heads.push_back({{"file", name}, {"classes", head_classes_[i]}});
  }
  manifest["encoders"] = std::move(encoders);
  manifest["heads"] = std::move(heads);

  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw InputError("bundle: cannot write manifest in " + dir);
  out << manifest.dump(2) << '\n';
  if (!out) throw InputError("bundle: manifest write failed in " + dir);
}

GuardrailPipeline GuardrailPipeline::load_bundle(const std::string& dir) {
  const nlohmann::json manifest = read_json_file(fs::path(dir) / "manifest.json");
  if (manifest.at("format_version").get<int>() != 1) {
    throw ParseError(dir + ": unsupported bundle format_version");
  }
  GuardrailPipeline p;
  p.topology_ = parse_topology(manifest.at("topology").get<std::string>());
  p.model_id_ = manifest.at("model_id").get<std::string>();
  for (const auto& name : manifest.at("encoders")) {
    p.encoders_.push_back(Encoder::load((fs::path(dir) / name.get<std::string>()).string()));
  }
  for (const auto& head : manifest.at("heads")) {
    p.heads_.push_back(load_head((fs::path(dir) / head.at("file").get<std::string>()).string()));
    p.head_classes_.push_back(head.at("classes").get<std::vector<std::string>>());
  }
  p.validate();
  return p;
}

}  // namespace guard
