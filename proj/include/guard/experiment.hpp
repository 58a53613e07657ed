#pragma once

#include <string>
#include <vector>

#include "guard/corpus.hpp"
#include "guard/metrics.hpp"
#include "guard/pipeline.hpp"
#include "guard/trainer.hpp"

namespace guard {

enum class HeadKind { kSvm, kNn };

std::string head_kind_name(HeadKind head);
HeadKind parse_head_kind(const std::string& name);

// Everything needed to train one pipeline end to end. The encoder's
// vocabulary is built from the training texts at run time.
struct ExperimentConfig {
  TopologyKind topology = TopologyKind::kMcemcc;
  HeadKind head = HeadKind::kSvm;
  EncoderConfig encoder;
  LossConfig loss;
  TrainConfig train;
  LinearSvmHead::Config svm;
  ShallowNnHead::Config nn;
  std::size_t vocab_target = 1000;
  // MEMC/McEMC heads see only Safe + own-category data unless this is set,
  // in which case other categories' unsafe instances join the negatives.
  bool memc_include_other_unsafe = false;

  // Applies one seed to every seeded component.
  void set_seed(std::uint64_t seed);

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

EmbeddingMatrix embed_texts(const Encoder& encoder, const std::vector<std::string>& texts);

// Fine-tunes encoder(s) on the train split and fits the topology's heads.
// MEMC fine-tunes seven per-category encoders; McEMC/McEMcC share one
// multi-class-fine-tuned encoder; BEBC uses binary labels throughout.
GuardrailPipeline train_pipeline(const std::vector<ReconciledInstance>& instances,
                                 const ExperimentConfig& config,
                                 const Taxonomy& taxonomy = Taxonomy::aegis(),
                                 std::vector<TrainLog>* logs = nullptr);

struct EvaluationOutput {
  EvalReport report;
  PRCurve curve;
};

// Classifies the test split; truth is binary with every non-Safe category
// counting as unsafe.
EvaluationOutput evaluate_pipeline(const GuardrailPipeline& pipeline,
                                   const std::vector<ReconciledInstance>& instances,
                                   const Taxonomy& taxonomy = Taxonomy::aegis());

struct ExperimentResult {
  GuardrailPipeline pipeline;
  std::vector<TrainLog> train_logs;
  EvalReport report;
  PRCurve curve;
};

ExperimentResult run_experiment(const std::vector<ReconciledInstance>& instances,
                                const ExperimentConfig& config,
                                const Taxonomy& taxonomy = Taxonomy::aegis());

}  // namespace guard
