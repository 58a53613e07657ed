#include "guard/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "guard/common.hpp"

namespace guard {

namespace {

constexpr std::uint64_t kSubsampleStream = 1;
constexpr std::uint64_t kHoldoutStream = 2;
constexpr std::uint64_t kEpochStreamBase = 100;

using FloatMatrix = LossMatrix<float>;

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
  if (learning_rate <= 0.0) throw ConfigError("train: learning_rate must be > 0");
  if (holdout_ratio < 0.0 || holdout_ratio >= 1.0) {
    throw ConfigError("train: holdout_ratio must be in [0, 1)");
  }
  if (finetune_ratio <= 0.0 || finetune_ratio > 1.0) {
    throw ConfigError("train: finetune_ratio must be in (0, 1]");
  }
  if (early_stop_patience < 1) throw ConfigError("train: early_stop_patience must be >= 1");
  if (early_stop_threshold < 0.0) throw ConfigError("train: early_stop_threshold must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"holdout_ratio", holdout_ratio},
          {"early_stop_patience", early_stop_patience},
          {"early_stop_threshold", early_stop_threshold},
          {"finetune_ratio", finetune_ratio},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("holdout_ratio")) c.holdout_ratio = j.at("holdout_ratio").get<double>();
  if (j.contains("early_stop_patience")) {
    c.early_stop_patience = j.at("early_stop_patience").get<std::size_t>();
  }
  if (j.contains("early_stop_threshold")) {
    c.early_stop_threshold = j.at("early_stop_threshold").get<double>();
  }
  if (j.contains("finetune_ratio")) c.finetune_ratio = j.at("finetune_ratio").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

nlohmann::json EpochLog::to_json() const {
  nlohmann::json j = {{"epoch", epoch},
                      {"train_loss", train_loss},
                      {"lr", lr},
                      {"skipped_batches", skipped_batches}};
  if (holdout_loss) j["holdout_loss"] = *holdout_loss;
  return j;
}

void TrainLog::save_jsonl(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("train log: cannot open " + path + " for writing");
  for (const auto& e : epochs) out << e.to_json().dump() << '\n';
  if (!out) throw InputError("train log: write failed for " + path);
}

template <typename Scalar>
void Adam<Scalar>::step(std::vector<typename TransformerEncoder<Scalar>::ParamView>& views,
                        double lr) {
  if (m_.empty()) {
    m_.resize(views.size());
    v_.resize(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(views[i].size), Scalar(0));
      v_[i].assign(static_cast<std::size_t>(views[i].size), Scalar(0));
    }
  }
  ++t_;
  const double c1 = 1.0 / (1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const double c2 = 1.0 / (1.0 - std::pow(beta2_, static_cast<double>(t_)));
  for (std::size_t i = 0; i < views.size(); ++i) {
    auto& view = views[i];
    for (std::ptrdiff_t k = 0; k < view.size; ++k) {
      const double g = static_cast<double>(view.grad[k]);
      const double m = beta1_ * static_cast<double>(m_[i][static_cast<std::size_t>(k)]) +
                       (1.0 - beta1_) * g;
      const double v = beta2_ * static_cast<double>(v_[i][static_cast<std::size_t>(k)]) +
                       (1.0 - beta2_) * g * g;
      m_[i][static_cast<std::size_t>(k)] = Scalar(m);
      v_[i][static_cast<std::size_t>(k)] = Scalar(v);
      view.value[k] -= Scalar(lr * (m * c1) / (std::sqrt(v * c2) + eps_));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

std::vector<std::size_t> stratified_subsample_indices(const std::vector<int>& labels, double ratio,
                                                      std::uint64_t seed) {
  if (ratio <= 0.0 || ratio > 1.0) throw ConfigError("subsample: ratio must be in (0, 1]");
  std::vector<std::size_t> kept;
  if (ratio == 1.0) {
    kept.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) kept[i] = i;
    return kept;
  }

  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);

  const auto total =
      static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(labels.size())));
  // Largest-remainder apportionment of `total` across labels.
  std::vector<std::pair<int, std::size_t>> base;  // label -> floor quota
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (const auto& [label, idx] : by_label) {
    const double quota = ratio * static_cast<double>(idx.size());
    const auto b = static_cast<std::size_t>(std::floor(quota));
    base.emplace_back(label, b);
    remainders.emplace_back(quota - static_cast<double>(b), label);
    assigned += b;
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::map<int, std::size_t> take;
  for (const auto& [label, b] : base) take[label] = b;
  for (std::size_t i = 0; i < remainders.size() && assigned < total; ++i) {
    const int label = remainders[i].second;
    if (take[label] < by_label[label].size()) {
      ++take[label];
      ++assigned;
    }
  }

  std::mt19937_64 rng = derive_rng(seed, kSubsampleStream);
  for (auto& [label, idx] : by_label) {
    std::shuffle(idx.begin(), idx.end(), rng);
    kept.insert(kept.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take[label]));
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::vector<std::vector<std::size_t>> build_epoch_batches(const std::vector<int>& labels,
                                                          std::size_t batch_size,
                                                          std::mt19937_64& rng) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);

  struct PairQueue {
    int label;
    std::vector<std::size_t> items;  // shuffled; consumed two at a time
    std::size_t next = 0;
    std::size_t pairs_left() const { return (items.size() - next) / 2; }
  };
  std::vector<PairQueue> queues;
  std::vector<std::size_t> singles;
  for (auto& [label, idx] : by_label) {
    std::shuffle(idx.begin(), idx.end(), rng);
    queues.push_back(PairQueue{label, idx, 0});
  }

  // Deal same-label pairs, always from the label with the most pairs left, so
  // every span of the sequence mixes classes for as long as possible.
  std::vector<std::size_t> sequence;
  sequence.reserve(labels.size());
  for (;;) {
    PairQueue* best = nullptr;
    for (auto& q : queues) {
      if (q.pairs_left() == 0) continue;
      if (!best || q.pairs_left() > best->pairs_left()) best = &q;
    }
    if (!best) break;
    sequence.push_back(best->items[best->next++]);
    sequence.push_back(best->items[best->next++]);
  }
  for (auto& q : queues) {
    if (q.next < q.items.size()) singles.push_back(q.items[q.next]);
  }
  std::shuffle(singles.begin(), singles.end(), rng);
  sequence.insert(sequence.end(), singles.begin(), singles.end());

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < sequence.size(); start += batch_size) {
    const std::size_t end = std::min(sequence.size(), start + batch_size);
    batches.emplace_back(sequence.begin() + static_cast<std::ptrdiff_t>(start),
                         sequence.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

namespace {

// Mean batch loss over fixed-order chunks; used for holdout evaluation.
double evaluate_loss(const Encoder& encoder, const std::vector<std::vector<std::size_t>>& tokens,
                     const std::vector<int>& labels, const std::vector<std::size_t>& subset,
                     std::size_t batch_size, const LossConfig& loss_config) {
  double sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < subset.size(); start += batch_size) {
    const std::size_t end = std::min(subset.size(), start + batch_size);
    const std::size_t b = end - start;
    FloatMatrix emb(static_cast<Eigen::Index>(b),
                    static_cast<Eigen::Index>(encoder.config().output_dim));
    std::vector<int> batch_labels(b);
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t idx = subset[start + i];
      emb.row(static_cast<Eigen::Index>(i)) = encoder.embed_tokens(tokens[idx]).transpose();
      batch_labels[i] = labels[idx];
    }
    const LossResult<float> result = batch_loss<float>(emb, batch_labels, loss_config);
    if (!result.valid) continue;
    sum += static_cast<double>(result.value);
    ++batches;
  }
  return batches == 0 ? 0.0 : sum / static_cast<double>(batches);
}

}  // namespace

TrainLog finetune(Encoder& encoder, const std::vector<TrainExample>& examples,
                  const LossConfig& loss_config, const TrainConfig& train_config) {
  loss_config.validate();
  train_config.validate();
  if (examples.empty()) throw ConfigError("finetune: empty training set");
  const bool triplet = loss_config.kind != LossKind::kContrastive;
  if (triplet && train_config.batch_size < 4) {
    throw ConfigError("finetune: triplet mining needs batch_size >= 4");
  }

  std::vector<int> labels(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) labels[i] = examples[i].label;

  std::vector<std::size_t> pool =
      stratified_subsample_indices(labels, train_config.finetune_ratio, train_config.seed);

  // Holdout split comes out of the (possibly subsampled) training pool.
  std::vector<std::size_t> train_idx, holdout_idx;
  if (train_config.holdout_ratio > 0.0) {
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i : pool) by_label[labels[i]].push_back(i);
    std::mt19937_64 rng = derive_rng(train_config.seed, kHoldoutStream);
    for (auto& [label, idx] : by_label) {
      std::shuffle(idx.begin(), idx.end(), rng);
      const auto nh = static_cast<std::size_t>(
          std::floor(train_config.holdout_ratio * static_cast<double>(idx.size())));
      holdout_idx.insert(holdout_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nh));
      train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(nh), idx.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(holdout_idx.begin(), holdout_idx.end());
  } else {
    train_idx = pool;
  }
  if (train_idx.empty()) throw ConfigError("finetune: empty training set after splits");

  std::vector<std::vector<std::size_t>> tokens(examples.size());
  for (std::size_t i : train_idx) tokens[i] = tokenize(examples[i].text, encoder.vocabulary());
  for (std::size_t i : holdout_idx) tokens[i] = tokenize(examples[i].text, encoder.vocabulary());

  const std::size_t batches_per_epoch =
      (train_idx.size() + train_config.batch_size - 1) / train_config.batch_size;
  const std::size_t total_steps = train_config.epochs * batches_per_epoch;
  const std::size_t warmup_steps = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(total_steps))));
  auto lr_at = [&](std::size_t update) {  // 1-based update index
    if (update <= warmup_steps) {
      return train_config.learning_rate * static_cast<double>(update) /
             static_cast<double>(warmup_steps);
    }
    return train_config.learning_rate;
  };

  Adam<float> adam;
  auto views = encoder.parameter_views();
  const auto out_dim = static_cast<Eigen::Index>(encoder.config().output_dim);

  TrainLog log;
  double best_holdout = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  std::size_t updates = 0;

  std::vector<Encoder::Trace> traces;
  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    std::mt19937_64 rng = derive_rng(train_config.seed, kEpochStreamBase + epoch);
    std::vector<int> train_labels(train_idx.size());
    for (std::size_t i = 0; i < train_idx.size(); ++i) train_labels[i] = labels[train_idx[i]];
    const auto batches = build_epoch_batches(train_labels, train_config.batch_size, rng);

    double loss_sum = 0.0;
    std::size_t applied = 0, skipped = 0;
    double last_lr = train_config.learning_rate;
    for (const auto& batch : batches) {
      const std::size_t b = batch.size();
      traces.assign(b, Encoder::Trace{});
      FloatMatrix emb(static_cast<Eigen::Index>(b), out_dim);
      std::vector<int> batch_labels(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t idx = train_idx[batch[i]];
        emb.row(static_cast<Eigen::Index>(i)) =
            encoder.embed_tokens(tokens[idx], &traces[i]).transpose();
        batch_labels[i] = labels[idx];
      }
      const LossResult<float> result = batch_loss<float>(emb, batch_labels, loss_config);
      if (!result.valid) {
        ++skipped;
        continue;
      }
      encoder.zero_grad();
      for (std::size_t i = 0; i < b; ++i) {
        encoder.backward(traces[i], result.grad.row(static_cast<Eigen::Index>(i)).transpose());
      }
      ++updates;
      last_lr = lr_at(updates);
      adam.step(views, last_lr);
      loss_sum += static_cast<double>(result.value);
      ++applied;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = applied == 0 ? 0.0 : loss_sum / static_cast<double>(applied);
    entry.lr = last_lr;
    entry.skipped_batches = skipped;

    bool stop = false;
    if (!holdout_idx.empty()) {
      const double holdout = evaluate_loss(encoder, tokens, labels, holdout_idx,
                                           train_config.batch_size, loss_config);
      entry.holdout_loss = holdout;
      if (best_holdout - holdout > train_config.early_stop_threshold) {
        best_holdout = holdout;
        bad_epochs = 0;
      } else if (++bad_epochs >= train_config.early_stop_patience) {
        stop = true;
      }
    }
    log.epochs.push_back(entry);
    if (stop) break;
  }
  return log;
}

double gradient_check(TransformerEncoder<double>& encoder,
                      const std::vector<std::vector<std::size_t>>& batch_tokens,
                      const std::vector<int>& labels, const LossConfig& loss_config,
                      double step) {
  if (step <= 0.0) throw ConfigError("gradient_check: step must be > 0");
  using Matrix = LossMatrix<double>;
  const auto out_dim = static_cast<Eigen::Index>(encoder.config().output_dim);
  const auto b = static_cast<Eigen::Index>(batch_tokens.size());

  auto loss_value = [&]() {
    Matrix emb(b, out_dim);
    for (Eigen::Index i = 0; i < b; ++i) {
      emb.row(i) = encoder.embed_tokens(batch_tokens[static_cast<std::size_t>(i)]).transpose();
    }
    const LossResult<double> result = batch_loss<double>(emb, labels, loss_config);
    if (!result.valid) throw InputError("gradient_check: batch has no valid loss terms");
    return result.value;
  };

  // Analytic pass.
  encoder.zero_grad();
  {
    Matrix emb(b, out_dim);
    std::vector<TransformerEncoder<double>::Trace> traces(batch_tokens.size());
    for (Eigen::Index i = 0; i < b; ++i) {
      emb.row(i) = encoder
                       .embed_tokens(batch_tokens[static_cast<std::size_t>(i)],
                                     &traces[static_cast<std::size_t>(i)])
                       .transpose();
    }
    const LossResult<double> result = batch_loss<double>(emb, labels, loss_config);
    if (!result.valid) throw InputError("gradient_check: batch has no valid loss terms");
    for (Eigen::Index i = 0; i < b; ++i) {
      encoder.backward(traces[static_cast<std::size_t>(i)], result.grad.row(i).transpose());
    }
  }

  double max_rel = 0.0;
  for (auto& view : encoder.parameter_views()) {
    for (std::ptrdiff_t k = 0; k < view.size; ++k) {
      const double saved = view.value[k];
      view.value[k] = saved + step;
      const double up = loss_value();
      view.value[k] = saved - step;
      const double down = loss_value();
      view.value[k] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double analytic = view.grad[k];
      const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-4});
      max_rel = std::max(max_rel, std::abs(analytic - fd) / denom);
    }
  }
  return max_rel;
}

}  // namespace guard
