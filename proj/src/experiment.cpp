#include "guard/experiment.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <utility>

#include "guard/common.hpp"

namespace guard {
namespace {

nlohmann::json loss_to_json(const LossConfig& loss) {
  return {{"kind", loss_kind_name(loss.kind)},
          {"margin", loss.margin},
          {"mining", mining_name(loss.mining)}};
}

LossConfig loss_from_json(const nlohmann::json& j) {
  LossConfig loss;
  if (j.contains("kind")) loss.kind = parse_loss_kind(j.at("kind").get<std::string>());
  loss.margin = j.value("margin", loss.margin);
  if (j.contains("mining")) loss.mining = parse_mining(j.at("mining").get<std::string>());
  return loss;
}

std::unique_ptr<ClassifierHead> train_head(const EmbeddingMatrix& embeddings,
                                           const std::vector<int>& labels,
                                           const ExperimentConfig& config) {
  if (config.head == HeadKind::kSvm) {
    return std::make_unique<LinearSvmHead>(LinearSvmHead::train(embeddings, labels, config.svm));
  }
  return std::make_unique<ShallowNnHead>(ShallowNnHead::train(embeddings, labels, config.nn));
}

std::vector<TrainExample> to_examples(const std::vector<const ReconciledInstance*>& rows,
                                      const std::map<std::size_t, int>& dense) {
  std::vector<TrainExample> out;
  out.reserve(rows.size());
  for (const auto* row : rows) out.push_back({row->text, dense.at(row->label)});
  return out;
}

EmbeddingMatrix select_rows(const EmbeddingMatrix& all, const std::vector<std::size_t>& idx) {
  EmbeddingMatrix out(static_cast<Eigen::Index>(idx.size()), all.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

}  // namespace

std::string head_kind_name(HeadKind head) {
  return head == HeadKind::kSvm ? "svm" : "nn";
}

HeadKind parse_head_kind(const std::string& name) {
  if (name == "svm") return HeadKind::kSvm;
  if (name == "nn") return HeadKind::kNn;
  throw ConfigError("unknown head kind: " + name);
}

void ExperimentConfig::set_seed(std::uint64_t seed) {
  encoder.seed = seed;
  train.seed = seed;
  nn.seed = seed;
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"topology", topology_name(topology)},
          {"head", head_kind_name(head)},
          {"encoder", encoder.to_json()},
          {"loss", loss_to_json(loss)},
          {"train", train.to_json()},
          {"svm", {{"C", svm.C}, {"iterations", svm.iterations}}},
          {"nn",
           {{"hidden", nn.hidden},
            {"epochs", nn.epochs},
            {"batch_size", nn.batch_size},
            {"learning_rate", nn.learning_rate},
            {"seed", nn.seed}}},
          {"vocab_target", vocab_target},
          {"memc_include_other_unsafe", memc_include_other_unsafe}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig config;
  if (j.contains("topology")) config.topology = parse_topology(j.at("topology").get<std::string>());
  if (j.contains("head")) config.head = parse_head_kind(j.at("head").get<std::string>());
  if (j.contains("encoder")) config.encoder = EncoderConfig::from_json(j.at("encoder"));
  if (j.contains("loss")) config.loss = loss_from_json(j.at("loss"));
  if (j.contains("train")) config.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("svm")) {
    const auto& s = j.at("svm");
    config.svm.C = s.value("C", config.svm.C);
    config.svm.iterations = s.value("iterations", config.svm.iterations);
  }
  if (j.contains("nn")) {
    const auto& n = j.at("nn");
    config.nn.hidden = n.value("hidden", config.nn.hidden);
    config.nn.epochs = n.value("epochs", config.nn.epochs);
    config.nn.batch_size = n.value("batch_size", config.nn.batch_size);
    config.nn.learning_rate = n.value("learning_rate", config.nn.learning_rate);
    config.nn.seed = n.value("seed", config.nn.seed);
  }
  config.vocab_target = j.value("vocab_target", config.vocab_target);
  config.memc_include_other_unsafe =
      j.value("memc_include_other_unsafe", config.memc_include_other_unsafe);
  return config;
}

EmbeddingMatrix embed_texts(const Encoder& encoder, const std::vector<std::string>& texts) {
  EmbeddingMatrix out(static_cast<Eigen::Index>(texts.size()),
                      static_cast<Eigen::Index>(encoder.config().output_dim));
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto emb = encoder.embed_text(texts[i]);
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      out(static_cast<Eigen::Index>(i), c) = emb[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

GuardrailPipeline train_pipeline(const std::vector<ReconciledInstance>& instances,
                                 const ExperimentConfig& config,
                                 const Taxonomy& taxonomy,
                                 std::vector<TrainLog>* logs) {
  // vocab_size is bound once the vocabulary is built; validate the rest now.
  EncoderConfig encoder_check = config.encoder;
  encoder_check.vocab_size = std::max<std::size_t>(encoder_check.vocab_size, 3);
  encoder_check.validate();
  config.train.validate();
  config.loss.validate();

  std::vector<const ReconciledInstance*> train_rows;
  for (const auto& inst : instances) {
    if (inst.split == Split::kTrain) train_rows.push_back(&inst);
  }
  if (train_rows.empty()) throw ConfigError("train_pipeline: no training instances");

  std::vector<std::string> train_texts;
  train_texts.reserve(train_rows.size());
  for (const auto* row : train_rows) train_texts.push_back(row->text);
  const Vocabulary vocab =
      Vocabulary::build(train_texts, config.vocab_target, config.encoder.max_sequence_length);

  // Classes present in the training data, ordered by taxonomy index.
  std::vector<std::size_t> present;
  for (const auto* row : train_rows) present.push_back(row->label);
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());
  std::map<std::size_t, int> dense;
  for (std::size_t i = 0; i < present.size(); ++i) {
    dense[present[i]] = static_cast<int>(i);
  }
  const bool has_safe = dense.count(taxonomy.safe_index()) > 0;

  const std::string model_id =
      "guard-" + topology_name(config.topology) + "-" + head_kind_name(config.head);
  std::vector<Encoder> encoders;
  std::vector<std::unique_ptr<ClassifierHead>> heads;
  std::vector<std::vector<std::string>> head_classes;

  const auto record_log = [&](TrainLog log) {
    if (logs != nullptr) logs->push_back(std::move(log));
  };
  const auto resolve_category = [&](const std::string& name) {
    const auto idx = taxonomy.resolve(name);
    if (!idx) throw ConfigError("unknown category: " + name);
    return *idx;
  };

  switch (config.topology) {
    case TopologyKind::kBebc: {
      std::vector<TrainExample> examples;
      std::vector<int> labels;
      examples.reserve(train_rows.size());
      for (const auto* row : train_rows) {
        const int y = taxonomy.is_safe(row->label) ? 0 : 1;
        examples.push_back({row->text, y});
        labels.push_back(y);
      }
      Encoder encoder(config.encoder, vocab);
      record_log(finetune(encoder, examples, config.loss, config.train));
      const EmbeddingMatrix emb = embed_texts(encoder, train_texts);
      heads.push_back(train_head(emb, labels, config));
      head_classes.push_back({std::string(kSafeLabel), "unsafe"});
      encoders.push_back(std::move(encoder));
      break;
    }
    case TopologyKind::kMemc: {
      for (const auto& name : Taxonomy::subset_category_names()) {
        const std::size_t cat = resolve_category(name);
        std::vector<TrainExample> examples;
        std::vector<std::string> texts;
        std::vector<int> labels;
        for (const auto* row : train_rows) {
          const bool in_subset = taxonomy.is_safe(row->label) || row->label == cat;
          if (!in_subset && !config.memc_include_other_unsafe) continue;
          const int y = row->label == cat ? 1 : 0;
          examples.push_back({row->text, y});
          texts.push_back(row->text);
          labels.push_back(y);
        }
        if (std::count(labels.begin(), labels.end(), 1) == 0 ||
            std::count(labels.begin(), labels.end(), 0) == 0) {
          throw ConfigError("train_pipeline: category " + name +
                            " needs both safe and unsafe training instances");
        }
        Encoder encoder(config.encoder, vocab);
        record_log(finetune(encoder, examples, config.loss, config.train));
        const EmbeddingMatrix emb = embed_texts(encoder, texts);
        heads.push_back(train_head(emb, labels, config));
        head_classes.push_back({std::string(kSafeLabel), name});
        encoders.push_back(std::move(encoder));
      }
      break;
    }
    case TopologyKind::kMcemc:
    case TopologyKind::kMcemcc: {
      const std::vector<TrainExample> examples = to_examples(train_rows, dense);
      Encoder encoder(config.encoder, vocab);
      record_log(finetune(encoder, examples, config.loss, config.train));
      const EmbeddingMatrix all = embed_texts(encoder, train_texts);
      if (config.topology == TopologyKind::kMcemc) {
        if (!has_safe) throw ConfigError("train_pipeline: mcemc needs Safe training instances");
        for (const auto& name : Taxonomy::subset_category_names()) {
          const std::size_t cat = resolve_category(name);
          std::vector<std::size_t> rows;
          std::vector<int> labels;
          for (std::size_t i = 0; i < train_rows.size(); ++i) {
            const std::size_t label = train_rows[i]->label;
            const bool in_subset = taxonomy.is_safe(label) || label == cat;
            if (!in_subset && !config.memc_include_other_unsafe) continue;
            rows.push_back(i);
            labels.push_back(label == cat ? 1 : 0);
          }
          if (std::count(labels.begin(), labels.end(), 1) == 0) {
            throw ConfigError("train_pipeline: category " + name + " has no training instances");
          }
          heads.push_back(train_head(select_rows(all, rows), labels, config));
          head_classes.push_back({std::string(kSafeLabel), name});
        }
        encoders.push_back(std::move(encoder));
      } else {
        std::vector<int> labels;
        labels.reserve(train_rows.size());
        for (const auto* row : train_rows) labels.push_back(dense.at(row->label));
        std::vector<std::string> classes;
        for (const std::size_t idx : present) classes.push_back(taxonomy.name(idx));
        heads.push_back(train_head(all, labels, config));
        head_classes.push_back(std::move(classes));
        encoders.push_back(std::move(encoder));
      }
      break;
    }
  }

  return GuardrailPipeline::assemble(config.topology, std::move(encoders), std::move(heads),
                                     std::move(head_classes), model_id);
}

EvaluationOutput evaluate_pipeline(const GuardrailPipeline& pipeline,
                                   const std::vector<ReconciledInstance>& instances,
                                   const Taxonomy& taxonomy) {
  std::vector<int> predictions;
  std::vector<double> scores;
  std::vector<int> truths;
  std::vector<std::string> categories;
  for (const auto& inst : instances) {
    if (inst.split != Split::kTest) continue;
    const Verdict verdict = pipeline.classify(inst.text);
    predictions.push_back(verdict.unsafe ? 1 : 0);
    scores.push_back(verdict.unsafe_score);
    truths.push_back(taxonomy.is_safe(inst.label) ? 0 : 1);
    categories.push_back(taxonomy.name(inst.label));
  }
  if (predictions.empty()) throw InputError("evaluate_pipeline: no test instances");

  EvaluationOutput out;
  out.report = evaluate_predictions(predictions, scores, truths, categories);
  out.curve = pr_curve(scores, truths);
  return out;
}

ExperimentResult run_experiment(const std::vector<ReconciledInstance>& instances,
                                const ExperimentConfig& config,
                                const Taxonomy& taxonomy) {
  ExperimentResult result;
  result.pipeline = train_pipeline(instances, config, taxonomy, &result.train_logs);
  auto eval = evaluate_pipeline(result.pipeline, instances, taxonomy);
  result.report = std::move(eval.report);
  result.curve = std::move(eval.curve);
  return result;
}

}  // namespace guard
