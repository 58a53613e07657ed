#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "guard/classifier.hpp"
#include "guard/encoder.hpp"

namespace guard {

enum class TopologyKind { kBebc, kMemc, kMcemc, kMcemcc };

std::string topology_name(TopologyKind topology);  // "bebc" | "memc" | "mcemc" | "mcemcc"
TopologyKind parse_topology(const std::string& name);

inline constexpr const char* kSafeLabel = "safe";

struct Verdict {
  bool unsafe = false;
  std::string label;  // "safe" | "unsafe"
  std::map<std::string, double> category_scores;
  std::string top_category;    // argmax category (multi-class) or strongest head
  double unsafe_score = 0.0;   // score used for PR curves
  double latency_seconds = 0.0;
};

// MEMC/McEMC aggregation: safe iff every head agrees safe.
bool aggregate_all_agree(const std::vector<bool>& head_unsafe);

// An assembled topology: encoders + heads + the class names each head's
// dense ids map to. Immutable after assembly; classify is reentrant.
class GuardrailPipeline {
 public:
  GuardrailPipeline() = default;  // empty shell; assemble() or load_bundle() make real ones

  // head_classes[i][c] names class id c of head i; binary heads must put
  // "safe" at id 0.
  static GuardrailPipeline assemble(TopologyKind topology, std::vector<Encoder> encoders,
                                    std::vector<std::unique_ptr<ClassifierHead>> heads,
                                    std::vector<std::vector<std::string>> head_classes,
                                    std::string model_id);

  Verdict classify(const std::string& text) const;

  void save_bundle(const std::string& dir) const;
  static GuardrailPipeline load_bundle(const std::string& dir);

  TopologyKind topology() const { return topology_; }
  const std::string& model_id() const { return model_id_; }
  std::size_t encoder_count() const { return encoders_.size(); }
  std::size_t head_count() const { return heads_.size(); }
  const Encoder& encoder(std::size_t i) const { return encoders_[i]; }
  const ClassifierHead& head(std::size_t i) const { return *heads_[i]; }
  const std::vector<std::vector<std::string>>& head_classes() const { return head_classes_; }

 private:
  void validate() const;

  TopologyKind topology_ = TopologyKind::kBebc;
  std::string model_id_;
  std::vector<Encoder> encoders_;
  std::vector<std::unique_ptr<ClassifierHead>> heads_;
  std::vector<std::vector<std::string>> head_classes_;
};

}  // namespace guard
