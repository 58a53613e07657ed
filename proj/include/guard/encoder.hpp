#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "guard/vocab.hpp"

namespace guard {

enum class Pooling { kCls, kMean, kMax };

std::string pooling_name(Pooling pooling);
Pooling parse_pooling(const std::string& name);

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden_dim = 128;
  std::size_t output_dim = 128;
  Pooling pooling = Pooling::kMean;
  bool add_feedforward = true;
  bool add_normalization = true;
  std::uint64_t seed = 21;
  // Bound from the vocabulary when the encoder is constructed.
  std::size_t vocab_size = 0;
  std::size_t max_sequence_length = 512;

  // Feedforward inner width follows the usual 4x convention; not independently
  // configurable.
  std::size_t ffn_dim() const { return 4 * hidden_dim; }
  std::size_t head_dim() const { return hidden_dim / heads; }

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

inline constexpr double kLayerNormEps = 1e-5;

// Reduce per-token rows to one vector. Sequences are always processed at their
// true length (no PAD rows), so MEAN/MAX run over every row given.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pool(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& rows,
    Pooling method);

// Pre-norm transformer encoder with learned position embeddings, erf-exact
// GELU, and an optional tanh projection head. Parameters are float32 on disk;
// Scalar selects the compute/storage precision (float in production, double
// for finite-difference gradient checks).
template <typename Scalar>
class TransformerEncoder {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct LayerParams {
    RowVec ln1_gamma, ln1_beta;
    Matrix wq, wk, wv, wo;
    RowVec bq, bk, bv, bo;
    RowVec ln2_gamma, ln2_beta;
    Matrix w1;
    RowVec b1;
    Matrix w2;
    RowVec b2;
  };

  struct Params {
    Matrix token_embedding;     // V x H
    Matrix position_embedding;  // S x H
    std::vector<LayerParams> layers;
    RowVec final_gamma, final_beta;
    Matrix proj_w;  // O x H, empty unless add_feedforward
    RowVec proj_b;
  };

  struct LayerTrace {
    Matrix x_in;
    Matrix n1_hat;  // LayerNorm output before gamma/beta
    Vector n1_inv_std;
    Matrix n1;
    Matrix q, k, v;
    std::vector<Matrix> attn_probs;  // per head, L x L
    Matrix attn_concat;
    Matrix x_mid;
    Matrix n2_hat;
    Vector n2_inv_std;
    Matrix n2;
    Matrix ffn_pre;  // pre-GELU
    Matrix ffn_act;
  };

  // Everything backward() needs; one trace per forward pass.
  struct Trace {
    std::vector<std::size_t> tokens;
    std::vector<LayerTrace> layers;
    Matrix final_hat;
    Vector final_inv_std;
    Matrix final_out;
    Vector pooled;
    std::vector<Eigen::Index> max_rows;  // argmax row per column (MAX pooling)
    Vector proj_pre;                     // pre-tanh
    Vector unnormalized;
    Scalar norm = Scalar(0);
  };

  // View into one parameter tensor and its gradient, for optimizers.
  struct ParamView {
    Scalar* value;
    Scalar* grad;
    std::ptrdiff_t size;
  };

  TransformerEncoder(EncoderConfig config, Vocabulary vocab);

  Vector embed_tokens(const std::vector<std::size_t>& tokens, Trace* trace = nullptr) const;
  Vector embed_text(const std::string& text, Trace* trace = nullptr) const;

  void zero_grad();
  // Accumulates parameter gradients for one sequence; call once per traced
  // forward pass with dLoss/dEmbedding.
  void backward(const Trace& trace, const Vector& grad_output);

  std::vector<ParamView> parameter_views();
  std::size_t parameter_count() const;

  void save(const std::string& path) const;
  static TransformerEncoder load(const std::string& path);

  const EncoderConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

 private:
  TransformerEncoder(EncoderConfig config, Vocabulary vocab, bool initialize);
  Matrix token_rows(const std::vector<std::size_t>& tokens) const;

  EncoderConfig config_;
  Vocabulary vocab_;
  Params params_;
  Params grads_;
};

using Encoder = TransformerEncoder<float>;

}  // namespace guard
