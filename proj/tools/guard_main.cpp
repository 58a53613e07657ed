#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "guard/ablation.hpp"
#include "guard/common.hpp"
#include "guard/corpus.hpp"
#include "guard/experiment.hpp"
#include "guard/latency.hpp"
#include "guard/service.hpp"
#include "guard/synthetic.hpp"
#include "guard/tensor_file.hpp"
#include "guard/trainer.hpp"

namespace {

using guard::ConfigError;
using guard::InputError;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto pos = bind.rfind(':');
  if (pos == std::string::npos || pos + 1 >= bind.size()) {
    throw ConfigError("bind must look like host:port, got: " + bind);
  }
  return {bind.substr(0, pos), std::stoi(bind.substr(pos + 1))};
}

nlohmann::json verdict_json(const guard::Verdict& verdict, const std::string& model_id) {
  nlohmann::json scores = nlohmann::json::object();
  for (const auto& [category, score] : verdict.category_scores) scores[category] = score;
  return {{"label", verdict.label},
          {"top_category", verdict.top_category},
          {"unsafe_score", verdict.unsafe_score},
          {"category_scores", scores},
          {"model_id", model_id},
          {"latency_seconds", verdict.latency_seconds}};
}

// Embeddings file: tensors "embeddings" [N x D] and "labels" [N x 1]
// (taxonomy indices); meta carries the taxonomy and source checkpoint so
// train-classifier can rebuild class names and bundle the encoder.
void write_embeddings_file(const std::string& path, const guard::EmbeddingMatrix& embeddings,
                           const std::vector<std::size_t>& labels,
                           const std::string& encoder_checkpoint, const guard::Taxonomy& taxonomy) {
  guard::TensorFile file;
  file.kind = "embeddings";
  file.meta = {{"encoder_checkpoint", encoder_checkpoint},
               {"categories", taxonomy.categories()},
               {"count", labels.size()}};
  guard::NamedTensor emb;
  emb.name = "embeddings";
  emb.rows = static_cast<std::size_t>(embeddings.rows());
  emb.cols = static_cast<std::size_t>(embeddings.cols());
  emb.data.assign(embeddings.data(), embeddings.data() + embeddings.size());
  file.tensors.push_back(std::move(emb));

  guard::NamedTensor lab;
  lab.name = "labels";
  lab.rows = labels.size();
  lab.cols = 1;
  lab.data.reserve(labels.size());
  for (const std::size_t l : labels) lab.data.push_back(static_cast<float>(l));
  file.tensors.push_back(std::move(lab));
  guard::save_tensor_file(file, path);
}

struct EmbeddingsData {
  guard::EmbeddingMatrix embeddings;
  std::vector<std::size_t> labels;
  std::string encoder_checkpoint;
  std::vector<std::string> categories;
};

EmbeddingsData read_embeddings_file(const std::string& path) {
  const guard::TensorFile file = guard::load_tensor_file(path);
  if (file.kind != "embeddings") throw InputError(path + " is not an embeddings file");
  const auto& emb = file.tensor("embeddings");
  const auto& lab = file.tensor("labels");
  if (lab.rows != emb.rows || lab.cols != 1) throw InputError(path + ": label shape mismatch");

  EmbeddingsData data;
  data.embeddings.resize(static_cast<Eigen::Index>(emb.rows), static_cast<Eigen::Index>(emb.cols));
  std::copy(emb.data.begin(), emb.data.end(), data.embeddings.data());
  data.labels.reserve(lab.rows);
  for (const float v : lab.data) data.labels.push_back(static_cast<std::size_t>(v));
  data.encoder_checkpoint = file.meta.at("encoder_checkpoint").get<std::string>();
  data.categories = file.meta.at("categories").get<std::vector<std::string>>();
  return data;
}

int cmd_preprocess(const std::string& in_path, const std::string& out_path, std::uint64_t seed) {
  const auto records = guard::load_corpus(in_path);
  const auto result = guard::preprocess_corpus(records, seed);
  guard::save_instances(result.instances, out_path);

  nlohmann::json summary{{"instances", result.instances.size()},
                         {"dropped_other", result.dropped_other},
                         {"dropped_needs_caution", result.dropped_needs_caution},
                         {"dropped_duplicates", result.dropped_duplicates},
                         {"train", nlohmann::json::object()},
                         {"test", nlohmann::json::object()}};
  summary["train"]["total"] = result.train_histogram.total;
  summary["test"]["total"] = result.test_histogram.total;
  for (const auto& [name, count] : result.train_histogram.counts) summary["train"][name] = count;
  for (const auto& [name, count] : result.test_histogram.counts) summary["test"][name] = count;
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_finetune(const std::string& data_path, const std::string& config_path,
                 const std::string& out_path) {
  const auto instances = guard::load_instances(data_path);
  const auto config = guard::ExperimentConfig::from_json(read_json_file(config_path));
  const auto& taxonomy = guard::Taxonomy::aegis();

  std::vector<std::string> texts;
  std::vector<std::size_t> raw_labels;
  for (const auto& inst : instances) {
    if (inst.split != guard::Split::kTrain) continue;
    texts.push_back(inst.text);
    raw_labels.push_back(inst.label);
  }
  if (texts.empty()) throw ConfigError("no training instances in " + data_path);

  const auto vocab =
      guard::Vocabulary::build(texts, config.vocab_target, config.encoder.max_sequence_length);
  guard::Encoder encoder(config.encoder, vocab);

  std::vector<guard::TrainExample> examples;
  if (config.topology == guard::TopologyKind::kBebc) {
    for (std::size_t i = 0; i < texts.size(); ++i) {
      examples.push_back({texts[i], taxonomy.is_safe(raw_labels[i]) ? 0 : 1});
    }
  } else {
    std::vector<std::size_t> present = raw_labels;
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());
    std::map<std::size_t, int> dense;
    for (std::size_t i = 0; i < present.size(); ++i) dense[present[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      examples.push_back({texts[i], dense.at(raw_labels[i])});
    }
  }

  const guard::TrainLog log = guard::finetune(encoder, examples, config.loss, config.train);
  encoder.save(out_path);
  log.save_jsonl(out_path + ".log.jsonl");
  if (!log.epochs.empty()) {
    std::printf("final train loss %.6f over %zu epochs\n", log.epochs.back().train_loss,
                log.epochs.size());
  }
  std::printf("checkpoint written to %s\n", out_path.c_str());
  return 0;
}

int cmd_embed(const std::string& encoder_path, const std::string& data_path,
              const std::string& out_path, const std::string& split) {
  const guard::Encoder encoder = guard::Encoder::load(encoder_path);
  const auto instances = guard::load_instances(data_path);
  std::vector<std::string> texts;
  std::vector<std::size_t> labels;
  for (const auto& inst : instances) {
    if (split == "train" && inst.split != guard::Split::kTrain) continue;
    if (split == "test" && inst.split != guard::Split::kTest) continue;
    texts.push_back(inst.text);
    labels.push_back(inst.label);
  }
  if (texts.empty()) throw InputError("no instances selected from " + data_path);
  const guard::EmbeddingMatrix embeddings = guard::embed_texts(encoder, texts);
  write_embeddings_file(out_path, embeddings, labels, encoder_path, guard::Taxonomy::aegis());
  std::printf("embedded %zu instances -> %s\n", texts.size(), out_path.c_str());
  return 0;
}

int cmd_train_classifier(const std::vector<std::string>& embeddings_paths,
                         const std::string& topology_name, const std::string& head_name,
                         const std::string& out_dir, double svm_c, std::size_t nn_hidden) {
  const auto topology = guard::parse_topology(topology_name);
  const auto head_kind = guard::parse_head_kind(head_name);
  const auto& taxonomy = guard::Taxonomy::aegis();

  guard::ExperimentConfig head_config;
  head_config.head = head_kind;
  head_config.svm.C = svm_c;
  head_config.nn.hidden = nn_hidden;

  const auto train_one = [&](const guard::EmbeddingMatrix& emb, const std::vector<int>& labels)
      -> std::unique_ptr<guard::ClassifierHead> {
    if (head_kind == guard::HeadKind::kSvm) {
      return std::make_unique<guard::LinearSvmHead>(
          guard::LinearSvmHead::train(emb, labels, head_config.svm));
    }
    return std::make_unique<guard::ShallowNnHead>(
        guard::ShallowNnHead::train(emb, labels, head_config.nn));
  };

  std::vector<guard::Encoder> encoders;
  std::vector<std::unique_ptr<guard::ClassifierHead>> heads;
  std::vector<std::vector<std::string>> head_classes;

  const std::size_t expected = topology == guard::TopologyKind::kMemc ? 7 : 1;
  if (embeddings_paths.size() != expected) {
    throw ConfigError("topology " + topology_name + " needs " + std::to_string(expected) +
                      " embeddings file(s), got " + std::to_string(embeddings_paths.size()));
  }

  if (topology == guard::TopologyKind::kMemc) {
    for (const auto& path : embeddings_paths) {
      const EmbeddingsData data = read_embeddings_file(path);
      // Each file must hold Safe plus exactly one subset category.
      std::size_t category = taxonomy.size();
      std::vector<int> labels;
      for (const std::size_t l : data.labels) {
        if (taxonomy.is_safe(l)) {
          labels.push_back(0);
          continue;
        }
        if (category == taxonomy.size()) category = l;
        if (l != category) throw ConfigError(path + ": more than one unsafe category");
        labels.push_back(1);
      }
      if (category == taxonomy.size()) throw ConfigError(path + ": no unsafe instances");
      heads.push_back(train_one(data.embeddings, labels));
      head_classes.push_back({std::string(guard::kSafeLabel), taxonomy.name(category)});
      encoders.push_back(guard::Encoder::load(data.encoder_checkpoint));
    }
  } else {
    const EmbeddingsData data = read_embeddings_file(embeddings_paths.front());
    encoders.push_back(guard::Encoder::load(data.encoder_checkpoint));
    if (topology == guard::TopologyKind::kBebc) {
      std::vector<int> labels;
      for (const std::size_t l : data.labels) labels.push_back(taxonomy.is_safe(l) ? 0 : 1);
      heads.push_back(train_one(data.embeddings, labels));
      head_classes.push_back({std::string(guard::kSafeLabel), "unsafe"});
    } else if (topology == guard::TopologyKind::kMcemc) {
      for (const auto& name : guard::Taxonomy::subset_category_names()) {
        const std::size_t cat = taxonomy.resolve(name).value();
        std::vector<std::size_t> rows;
        std::vector<int> labels;
        for (std::size_t i = 0; i < data.labels.size(); ++i) {
          if (!taxonomy.is_safe(data.labels[i]) && data.labels[i] != cat) continue;
          rows.push_back(i);
          labels.push_back(data.labels[i] == cat ? 1 : 0);
        }
        guard::EmbeddingMatrix subset(static_cast<Eigen::Index>(rows.size()),
                                      data.embeddings.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          subset.row(static_cast<Eigen::Index>(i)) =
              data.embeddings.row(static_cast<Eigen::Index>(rows[i]));
        }
        heads.push_back(train_one(subset, labels));
        head_classes.push_back({std::string(guard::kSafeLabel), name});
      }
    } else {
      std::vector<std::size_t> present = data.labels;
      std::sort(present.begin(), present.end());
      present.erase(std::unique(present.begin(), present.end()), present.end());
      std::map<std::size_t, int> dense;
      std::vector<std::string> classes;
      for (std::size_t i = 0; i < present.size(); ++i) {
        dense[present[i]] = static_cast<int>(i);
        classes.push_back(taxonomy.name(present[i]));
      }
      std::vector<int> labels;
      for (const std::size_t l : data.labels) labels.push_back(dense.at(l));
      heads.push_back(train_one(data.embeddings, labels));
      head_classes.push_back(std::move(classes));
    }
  }

  const std::string model_id = "guard-" + topology_name + "-" + head_name;
  auto pipeline = guard::GuardrailPipeline::assemble(topology, std::move(encoders),
                                                     std::move(heads), std::move(head_classes),
                                                     model_id);
  pipeline.save_bundle(out_dir);
  std::printf("bundle written to %s\n", out_dir.c_str());
  return 0;
}

int cmd_evaluate(const std::string& bundle_dir, const std::string& data_path,
                 const std::string& report_path, const std::string& pr_path) {
  const auto pipeline = guard::GuardrailPipeline::load_bundle(bundle_dir);
  const auto instances = guard::load_instances(data_path);
  const auto eval = guard::evaluate_pipeline(pipeline, instances);

  nlohmann::json report = eval.report.to_json();
  report["model_id"] = pipeline.model_id();
  report["topology"] = guard::topology_name(pipeline.topology());
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw InputError("cannot open for writing: " + report_path);
    out << report.dump(2) << "\n";
  }
  if (!pr_path.empty()) eval.curve.save_csv(pr_path);
  std::printf("accuracy %.4f f1 %.4f uap %.4f auprc %.4f\n", eval.report.binary.accuracy,
              eval.report.binary.f1, eval.report.binary.uap, eval.report.auprc);
  return 0;
}

int cmd_ablate(const std::string& spec_path, const std::string& out_path) {
  const auto spec = guard::AblationSpec::from_json(read_json_file(spec_path));
  const auto table = guard::run_ablation(spec);
  table.save_csv(out_path);
  std::cout << table.to_csv();
  return 0;
}

int cmd_bench(const std::string& bundle_dir, const std::string& data_path, std::size_t iters,
              const std::string& out_path) {
  const auto pipeline = guard::GuardrailPipeline::load_bundle(bundle_dir);
  const auto instances = guard::load_instances(data_path);
  std::vector<std::string> prompts;
  for (const auto& inst : instances) {
    if (inst.split == guard::Split::kTest) prompts.push_back(inst.text);
  }
  if (prompts.empty()) {
    for (const auto& inst : instances) prompts.push_back(inst.text);
  }
  const auto report = guard::latency_bench(pipeline, prompts, iters);
  if (!out_path.empty()) report.save_csv(out_path);
  std::printf("mean %.6f s  p99 %.6f s over %zu samples\n", report.overall_mean_seconds(),
              report.percentile_seconds(99.0), report.samples.size());
  return 0;
}

int cmd_gen_synth(const std::string& out_path, const guard::SyntheticSpec& spec) {
  const auto instances = guard::generate_synthetic_corpus(spec);
  guard::save_instances(instances, out_path);
  std::printf("wrote %zu instances to %s\n", instances.size(), out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lightweight LLM guardrail toolkit"};
  app.require_subcommand(1);

  std::string in_path, out_path, data_path, config_path, bundle_dir, text, bind = "127.0.0.1:8080";
  std::string report_path, pr_path, split = "train", topology = "mcemcc", head = "svm";
  std::string encoder_path, spec_path;
  std::vector<std::string> embeddings_paths;
  std::uint64_t seed = 21;
  std::size_t iters = 3, nn_hidden = 256;
  double svm_c = 1.0;
  guard::ServiceConfig service_config;
  guard::SyntheticSpec synth;

  auto* preprocess = app.add_subcommand("preprocess", "reconcile annotations into instances");
  preprocess->add_option("--in", in_path)->required();
  preprocess->add_option("--out", out_path)->required();
  preprocess->add_option("--seed", seed);

  auto* finetune = app.add_subcommand("finetune", "fine-tune a sentence encoder");
  finetune->add_option("--data", data_path)->required();
  finetune->add_option("--config", config_path)->required();
  finetune->add_option("--out", out_path)->required();

  auto* embed = app.add_subcommand("embed", "embed instances with a checkpoint");
  embed->add_option("--encoder", encoder_path)->required();
  embed->add_option("--data", data_path)->required();
  embed->add_option("--out", out_path)->required();
  embed->add_option("--split", split)->check(CLI::IsMember({"train", "test", "all"}));

  auto* train_classifier = app.add_subcommand("train-classifier", "fit heads and build a bundle");
  train_classifier->add_option("--embeddings", embeddings_paths)->required();
  train_classifier->add_option("--topology", topology)
      ->check(CLI::IsMember({"bebc", "memc", "mcemc", "mcemcc"}));
  train_classifier->add_option("--head", head)->check(CLI::IsMember({"svm", "nn"}));
  train_classifier->add_option("--out", out_path)->required();
  train_classifier->add_option("--svm-c", svm_c);
  train_classifier->add_option("--nn-hidden", nn_hidden);

  auto* classify = app.add_subcommand("classify", "classify one prompt");
  classify->add_option("--bundle", bundle_dir)->required();
  classify->add_option("--text", text)->required();

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a bundle on a test split");
  evaluate->add_option("--bundle", bundle_dir)->required();
  evaluate->add_option("--data", data_path)->required();
  evaluate->add_option("--report", report_path);
  evaluate->add_option("--pr-curve", pr_path);

  auto* ablate = app.add_subcommand("ablate", "run an ablation sweep");
  ablate->add_option("--spec", spec_path)->required();
  ablate->add_option("--out", out_path)->required();

  auto* bench = app.add_subcommand("bench", "measure inference latency");
  bench->add_option("--bundle", bundle_dir)->required();
  bench->add_option("--data", data_path)->required();
  bench->add_option("--iters", iters);
  bench->add_option("--out", out_path);

  auto* serve = app.add_subcommand("serve", "run the moderation HTTP service");
  serve->add_option("--bundle", bundle_dir)->required();
  serve->add_option("--bind", bind);
  serve->add_option("--max-bytes", service_config.max_text_bytes);
  serve->add_option("--refusal", service_config.refusal_template);

  auto* classify_file = app.add_subcommand("classify-file", "classify a JSONL file of prompts");
  classify_file->add_option("--bundle", bundle_dir)->required();
  classify_file->add_option("--in", in_path)->required();
  classify_file->add_option("--out", out_path)->required();

  auto* gen_synth = app.add_subcommand("gen-synth", "generate a synthetic labelled corpus");
  gen_synth->add_option("--out", out_path)->required();
  gen_synth->add_option("--instances", synth.instances);
  gen_synth->add_option("--vocab", synth.vocabulary);
  gen_synth->add_option("--noise", synth.noise_fraction);
  gen_synth->add_option("--seed", synth.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (preprocess->parsed()) return cmd_preprocess(in_path, out_path, seed);
    if (finetune->parsed()) return cmd_finetune(data_path, config_path, out_path);
    if (embed->parsed()) return cmd_embed(encoder_path, data_path, out_path, split);
    if (train_classifier->parsed()) {
      return cmd_train_classifier(embeddings_paths, topology, head, out_path, svm_c, nn_hidden);
    }
    if (classify->parsed()) {
      const auto pipeline = guard::GuardrailPipeline::load_bundle(bundle_dir);
      std::cout << verdict_json(pipeline.classify(text), pipeline.model_id()).dump(2) << "\n";
      return 0;
    }
    if (evaluate->parsed()) return cmd_evaluate(bundle_dir, data_path, report_path, pr_path);
    if (ablate->parsed()) return cmd_ablate(spec_path, out_path);
    if (bench->parsed()) return cmd_bench(bundle_dir, data_path, iters, out_path);
    if (serve->parsed()) {
      const auto [host, port] = parse_bind(bind);
      return guard::run_service(bundle_dir, host, port, service_config);
    }
    if (classify_file->parsed()) {
      const auto pipeline = guard::GuardrailPipeline::load_bundle(bundle_dir);
      const auto summary = guard::classify_file(pipeline, in_path, out_path, service_config);
      nlohmann::json counts{{"total", summary.total},
                            {"safe_count", summary.safe_count},
                            {"unsafe_count", summary.unsafe_count}};
      std::cout << counts.dump() << "\n";
      return 0;
    }
    if (gen_synth->parsed()) return cmd_gen_synth(out_path, synth);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
