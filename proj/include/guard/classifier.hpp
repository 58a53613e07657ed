#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace guard {

using EmbeddingMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Lowest index wins ties.
std::size_t argmax_index(const std::vector<double>& values);

// Trained head over dense class ids 0..K-1. Parameters are finalized to
// float32 after training so in-memory and round-tripped heads predict
// identically; prediction arithmetic promotes to double.
class ClassifierHead {
 public:
  virtual ~ClassifierHead() = default;
  virtual std::string kind() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual std::size_t input_dim() const = 0;
  // Probability-like scores, one per class, summing to 1 within 1e-6.
  virtual std::vector<double> predict_proba(const Eigen::VectorXf& x) const = 0;
  virtual void save(const std::string& path) const = 0;

  std::size_t predict(const Eigen::VectorXf& x) const { return argmax_index(predict_proba(x)); }
};

std::unique_ptr<ClassifierHead> load_head(const std::string& path);

// One-vs-rest linear SVM trained by deterministic full-batch subgradient
// descent on J(w) = 1/(2C) * ||w||^2 + mean hinge, bias folded in as an
// augmented always-1 feature (so it is regularized too). The mean-form
// objective makes training invariant to duplicating the whole dataset.
class LinearSvmHead : public ClassifierHead {
 public:
  struct Config {
    double C = 1.0;
    std::size_t iterations = 2000;
  };

  static LinearSvmHead train(const EmbeddingMatrix& embeddings, const std::vector<int>& labels,
                             const Config& config);
  static LinearSvmHead load_file(const std::string& path);

  // The exact objective minimized for one one-vs-rest problem; exposed so
  // tests can compare against independent minimizers. `weights` carries the
  // augmented bias as its last entry.
  static double primal_objective(const Eigen::VectorXd& weights, const EmbeddingMatrix& embeddings,
                                 const std::vector<int>& signs, double C);

  std::string kind() const override { return "svm"; }
  std::size_t num_classes() const override { return static_cast<std::size_t>(weights_.rows()); }
  std::size_t input_dim() const override { return static_cast<std::size_t>(weights_.cols()) - 1; }
  std::vector<double> decision_scores(const Eigen::VectorXf& x) const;
  std::vector<double> predict_proba(const Eigen::VectorXf& x) const override;
  void save(const std::string& path) const override;

 private:
  EmbeddingMatrix weights_;  // K x (D+1)
  EmbeddingMatrix platt_;    // K x 2 (A, B)
  Config config_;
};

// One ReLU hidden layer + softmax cross-entropy head, Adam, seeded batches.
class ShallowNnHead : public ClassifierHead {
 public:
  struct Config {
    std::size_t hidden = 256;
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 21;
  };

  static ShallowNnHead train(const EmbeddingMatrix& embeddings, const std::vector<int>& labels,
                             const Config& config);
  static ShallowNnHead load_file(const std::string& path);

  std::string kind() const override { return "nn"; }
  std::size_t num_classes() const override { return static_cast<std::size_t>(w2_.rows()); }
  std::size_t input_dim() const override { return static_cast<std::size_t>(w1_.cols()); }
  std::vector<double> predict_proba(const Eigen::VectorXf& x) const override;
  void save(const std::string& path) const override;

 private:
  EmbeddingMatrix w1_;  // H x D
  Eigen::VectorXf b1_;
  EmbeddingMatrix w2_;  // K x H
  Eigen::VectorXf b2_;
  Config config_;
};

}  // namespace guard
