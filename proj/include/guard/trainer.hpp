#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "guard/encoder.hpp"
#include "guard/losses.hpp"

namespace guard {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 2e-5;
  double holdout_ratio = 0.0;  // 0 disables early stopping
  std::size_t early_stop_patience = 3;
  double early_stop_threshold = 1e-4;
  double finetune_ratio = 1.0;
  std::uint64_t seed = 21;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainExample {
  std::string text;
  int label = 0;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> holdout_loss;
  double lr = 0.0;
  std::size_t skipped_batches = 0;

  nlohmann::json to_json() const;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  void save_jsonl(const std::string& path) const;
};

// Adam with bias correction; state lives per parameter view, first step
// allocates.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<typename TransformerEncoder<Scalar>::ParamView>& views, double lr);
  long steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<Scalar>> m_, v_;
};

// Keeps exactly ceil(ratio*N) indices, per-label counts within +-1 of
// ratio*count via largest-remainder apportionment. Returned sorted.
std::vector<std::size_t> stratified_subsample_indices(const std::vector<int>& labels, double ratio,
                                                      std::uint64_t seed);

// Label-stratified batches: per-label shuffled pair queues dealt
// most-remaining-first so batches mix classes; leftover singles go last;
// final batch may be short. Invalid batches are the trainer's job to skip.
std::vector<std::vector<std::size_t>> build_epoch_batches(const std::vector<int>& labels,
                                                          std::size_t batch_size,
                                                          std::mt19937_64& rng);

// Siamese fine-tuning: every sequence in a batch flows through the single
// shared parameter set; loss gradients from all rows accumulate before one
// Adam step. Linear warmup over the first 10% of planned updates.
TrainLog finetune(Encoder& encoder, const std::vector<TrainExample>& examples,
                  const LossConfig& loss_config, const TrainConfig& train_config);

// Central finite differences over every parameter against the analytic
// backward pass; returns the max error relative to
// max(|analytic|, |numeric|, 1e-4). The default step keeps truncation noise
// well below that floor while staying far from double-precision cancellation.
double gradient_check(TransformerEncoder<double>& encoder,
                      const std::vector<std::vector<std::size_t>>& batch_tokens,
                      const std::vector<int>& labels, const LossConfig& loss_config,
                      double step = 1e-5);

}  // namespace guard
