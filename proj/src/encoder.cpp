#include "guard/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "guard/common.hpp"
#include "guard/tensor_file.hpp"

namespace guard {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  return Scalar(0.5) * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2)))) +
         x * std::exp(Scalar(-0.5) * x * x) * Scalar(kInvSqrt2Pi);
}

// Per-row LayerNorm; writes the pre-affine normalized rows and 1/std so the
// backward pass can reuse them.
template <typename Mat, typename Row, typename Vec>
Mat layer_norm(const Mat& x, const Row& gamma, const Row& beta, Mat& x_hat, Vec& inv_std) {
  using Scalar = typename Mat::Scalar;
  const Eigen::Index rows = x.rows(), cols = x.cols();
  x_hat.resize(rows, cols);
  inv_std.resize(rows);
  Mat out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Scalar mu = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mu).square().mean();
    const Scalar is = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEps));
    inv_std(r) = is;
    x_hat.row(r) = (x.row(r).array() - mu) * is;
    out.row(r) = x_hat.row(r).cwiseProduct(gamma) + beta;
  }
  return out;
}

template <typename Mat, typename Row, typename Vec>
Mat layer_norm_backward(const Mat& d_out, const Row& gamma, const Mat& x_hat, const Vec& inv_std,
                        Row& d_gamma, Row& d_beta) {
  using Scalar = typename Mat::Scalar;
  const Eigen::Index rows = d_out.rows(), cols = d_out.cols();
  Mat d_x(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    d_gamma += d_out.row(r).cwiseProduct(x_hat.row(r));
    d_beta += d_out.row(r);
    Row d_hat = d_out.row(r).cwiseProduct(gamma);
    const Scalar sum_d = d_hat.sum();
    const Scalar sum_dx = d_hat.cwiseProduct(x_hat.row(r)).sum();
    d_x.row(r) =
        (inv_std(r) / Scalar(cols)) *
        (Scalar(cols) * d_hat - Row::Constant(cols, sum_d) - x_hat.row(r) * sum_dx).eval();
  }
  return d_x;
}

// Visits every parameter tensor of `a` and `b` pairwise, in the fixed order
// used by checkpoints and optimizers.
template <typename Params, typename Fn>
void zip_params(Params& a, Params& b, Fn&& fn) {
  fn("token_embedding", a.token_embedding, b.token_embedding);
  fn("position_embedding", a.position_embedding, b.position_embedding);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    auto& la = a.layers[i];
    auto& lb = b.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    fn(p + "ln1.gamma", la.ln1_gamma, lb.ln1_gamma);
    fn(p + "ln1.beta", la.ln1_beta, lb.ln1_beta);
    fn(p + "attn.wq", la.wq, lb.wq);
    fn(p + "attn.bq", la.bq, lb.bq);
    fn(p + "attn.wk", la.wk, lb.wk);
    fn(p + "attn.bk", la.bk, lb.bk);
    fn(p + "attn.wv", la.wv, lb.wv);
    fn(p + "attn.bv", la.bv, lb.bv);
    fn(p + "attn.wo", la.wo, lb.wo);
    fn(p + "attn.bo", la.bo, lb.bo);
    fn(p + "ln2.gamma", la.ln2_gamma, lb.ln2_gamma);
    fn(p + "ln2.beta", la.ln2_beta, lb.ln2_beta);
    fn(p + "ffn.w1", la.w1, lb.w1);
    fn(p + "ffn.b1", la.b1, lb.b1);
    fn(p + "ffn.w2", la.w2, lb.w2);
    fn(p + "ffn.b2", la.b2, lb.b2);
  }
  fn("final_norm.gamma", a.final_gamma, b.final_gamma);
  fn("final_norm.beta", a.final_beta, b.final_beta);
  if (a.proj_w.size() > 0) {
    fn("projection.weight", a.proj_w, b.proj_w);
    fn("projection.bias", a.proj_b, b.proj_b);
  }
}

}  // namespace

std::string pooling_name(Pooling pooling) {
  switch (pooling) {
    case Pooling::kCls:
      return "CLS";
    case Pooling::kMean:
      return "MEAN";
    case Pooling::kMax:
      return "MAX";
  }
  throw ConfigError("unknown pooling");
}

Pooling parse_pooling(const std::string& name) {
  std::string upper = name;
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  if (upper == "CLS") return Pooling::kCls;
  if (upper == "MEAN") return Pooling::kMean;
  if (upper == "MAX") return Pooling::kMax;
  throw ConfigError("unknown pooling '" + name + "'");
}

void EncoderConfig::validate() const {
  if (layers < 1) throw ConfigError("encoder: layers must be >= 1");
  if (heads < 1) throw ConfigError("encoder: heads must be >= 1");
  if (hidden_dim == 0 || hidden_dim % heads != 0) {
    throw ConfigError("encoder: hidden_dim must be a positive multiple of heads");
  }
  if (output_dim == 0) throw ConfigError("encoder: output_dim must be >= 1");
  if (!add_feedforward && output_dim != hidden_dim) {
    throw ConfigError("encoder: output_dim must equal hidden_dim when add_feedforward is off");
  }
  if (vocab_size < 3) throw ConfigError("encoder: vocabulary must contain the special tokens");
  if (max_sequence_length < 2) throw ConfigError("encoder: max_sequence_length must be >= 2");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"layers", layers},
          {"heads", heads},
          {"hidden_dim", hidden_dim},
          {"output_dim", output_dim},
          {"pooling", pooling_name(pooling)},
          {"add_feedforward", add_feedforward},
          {"add_normalization", add_normalization},
          {"seed", seed},
          {"vocab_size", vocab_size},
          {"max_sequence_length", max_sequence_length}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.output_dim = j.value("output_dim", c.output_dim);
  if (j.contains("pooling")) c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  c.add_feedforward = j.value("add_feedforward", c.add_feedforward);
  c.add_normalization = j.value("add_normalization", c.add_normalization);
  c.seed = j.value("seed", c.seed);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
  return c;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pool(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& rows,
    Pooling method) {
  if (rows.rows() == 0) throw InputError("pool: no token rows");
  switch (method) {
    case Pooling::kCls:
      return rows.row(0).transpose();
    case Pooling::kMean:
      return rows.colwise().mean().transpose();
    case Pooling::kMax:
      return rows.colwise().maxCoeff().transpose();
  }
  throw ConfigError("unknown pooling");
}

template <typename Scalar>
TransformerEncoder<Scalar>::TransformerEncoder(EncoderConfig config, Vocabulary vocab)
    : TransformerEncoder(std::move(config), std::move(vocab), true) {}

template <typename Scalar>
TransformerEncoder<Scalar>::TransformerEncoder(EncoderConfig config, Vocabulary vocab,
                                               bool initialize)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.vocab_size = vocab_.size();
  config_.max_sequence_length = vocab_.max_sequence_length();
  config_.validate();

  const auto H = static_cast<Eigen::Index>(config_.hidden_dim);
  const auto F = static_cast<Eigen::Index>(config_.ffn_dim());
  const auto O = static_cast<Eigen::Index>(config_.output_dim);
  const auto V = static_cast<Eigen::Index>(config_.vocab_size);
  const auto S = static_cast<Eigen::Index>(config_.max_sequence_length);

  auto alloc = [&](Params& p) {
    p.token_embedding = Matrix::Zero(V, H);
    p.position_embedding = Matrix::Zero(S, H);
    p.layers.resize(config_.layers);
    for (auto& l : p.layers) {
      l.ln1_gamma = RowVec::Ones(H);
      l.ln1_beta = RowVec::Zero(H);
      l.wq = Matrix::Zero(H, H);
      l.wk = Matrix::Zero(H, H);
      l.wv = Matrix::Zero(H, H);
      l.wo = Matrix::Zero(H, H);
      l.bq = RowVec::Zero(H);
      l.bk = RowVec::Zero(H);
      l.bv = RowVec::Zero(H);
      l.bo = RowVec::Zero(H);
      l.ln2_gamma = RowVec::Ones(H);
      l.ln2_beta = RowVec::Zero(H);
      l.w1 = Matrix::Zero(F, H);
      l.b1 = RowVec::Zero(F);
      l.w2 = Matrix::Zero(H, F);
      l.b2 = RowVec::Zero(H);
    }
    p.final_gamma = RowVec::Ones(H);
    p.final_beta = RowVec::Zero(H);
    if (config_.add_feedforward) {
      p.proj_w = Matrix::Zero(O, H);
      p.proj_b = RowVec::Zero(O);
    }
  };
  alloc(params_);
  alloc(grads_);
  zero_grad();

  if (!initialize) return;

  // Weight matrices and embeddings drawn from N(0, 0.02); biases zero, norm
  // scales one. Drawn in double so float and double instantiations share the
  // same stream.
  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  auto fill = [&](Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(dist(rng));
  };
  fill(params_.token_embedding);
  fill(params_.position_embedding);
  for (auto& l : params_.layers) {
    fill(l.wq);
    fill(l.wk);
    fill(l.wv);
    fill(l.wo);
    fill(l.w1);
    fill(l.w2);
  }
  if (config_.add_feedforward) fill(params_.proj_w);
}

template <typename Scalar>
typename TransformerEncoder<Scalar>::Matrix TransformerEncoder<Scalar>::token_rows(
    const std::vector<std::size_t>& tokens) const {
  if (tokens.empty()) throw InputError("encoder: empty token sequence");
  if (tokens.size() > config_.max_sequence_length) {
    throw InputError("encoder: sequence exceeds max_sequence_length");
  }
  const auto L = static_cast<Eigen::Index>(tokens.size());
  Matrix x(L, static_cast<Eigen::Index>(config_.hidden_dim));
  for (Eigen::Index i = 0; i < L; ++i) {
    if (tokens[static_cast<std::size_t>(i)] >= config_.vocab_size) {
      throw InputError("encoder: token id out of range");
    }
    x.row(i) = params_.token_embedding.row(
                   static_cast<Eigen::Index>(tokens[static_cast<std::size_t>(i)])) +
               params_.position_embedding.row(i);
  }
  return x;
}

template <typename Scalar>
typename TransformerEncoder<Scalar>::Vector TransformerEncoder<Scalar>::embed_tokens(
    const std::vector<std::size_t>& tokens, Trace* trace) const {
  Trace local;
  Trace& t = trace ? *trace : local;
  t.tokens = tokens;
  t.layers.clear();
  t.layers.resize(config_.layers);

  const auto L = static_cast<Eigen::Index>(tokens.size());
  const auto dh = static_cast<Eigen::Index>(config_.head_dim());
  const Scalar alpha = Scalar(1) / std::sqrt(Scalar(dh));

  Matrix x = token_rows(tokens);
  for (std::size_t li = 0; li < config_.layers; ++li) {
    const auto& p = params_.layers[li];
    auto& lt = t.layers[li];
    lt.x_in = x;
    lt.n1 = layer_norm(lt.x_in, p.ln1_gamma, p.ln1_beta, lt.n1_hat, lt.n1_inv_std);

    lt.q = (lt.n1 * p.wq.transpose()).rowwise() + p.bq;
    lt.k = (lt.n1 * p.wk.transpose()).rowwise() + p.bk;
    lt.v = (lt.n1 * p.wv.transpose()).rowwise() + p.bv;

    lt.attn_probs.assign(config_.heads, Matrix());
    lt.attn_concat.resize(L, static_cast<Eigen::Index>(config_.hidden_dim));
    for (std::size_t h = 0; h < config_.heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      Matrix scores = (lt.q.middleCols(c0, dh) * lt.k.middleCols(c0, dh).transpose()) * alpha;
      for (Eigen::Index r = 0; r < L; ++r) {
        const Scalar m = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - m).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      lt.attn_probs[h] = scores;
      lt.attn_concat.middleCols(c0, dh) = scores * lt.v.middleCols(c0, dh);
    }
    lt.x_mid = lt.x_in + ((lt.attn_concat * p.wo.transpose()).rowwise() + p.bo);

    lt.n2 = layer_norm(lt.x_mid, p.ln2_gamma, p.ln2_beta, lt.n2_hat, lt.n2_inv_std);
    lt.ffn_pre = (lt.n2 * p.w1.transpose()).rowwise() + p.b1;
    lt.ffn_act = lt.ffn_pre.unaryExpr([](Scalar v) { return gelu(v); });
    x = lt.x_mid + ((lt.ffn_act * p.w2.transpose()).rowwise() + p.b2);
  }

  t.final_out = layer_norm(x, params_.final_gamma, params_.final_beta, t.final_hat,
                           t.final_inv_std);

  t.max_rows.clear();
  if (config_.pooling == Pooling::kMax) {
    t.max_rows.resize(static_cast<std::size_t>(t.final_out.cols()));
    for (Eigen::Index c = 0; c < t.final_out.cols(); ++c) {
      Eigen::Index row = 0;
      t.final_out.col(c).maxCoeff(&row);
      t.max_rows[static_cast<std::size_t>(c)] = row;
    }
  }
  t.pooled = pool<Scalar>(t.final_out, config_.pooling);

  Vector out;
  if (config_.add_feedforward) {
    t.proj_pre = params_.proj_w * t.pooled + params_.proj_b.transpose();
    out = t.proj_pre.array().tanh();
  } else {
    out = t.pooled;
  }
  t.unnormalized = out;
  t.norm = out.norm();
  if (config_.add_normalization && t.norm > Scalar(0)) out /= t.norm;
  return out;
}

template <typename Scalar>
typename TransformerEncoder<Scalar>::Vector TransformerEncoder<Scalar>::embed_text(
    const std::string& text, Trace* trace) const {
  return embed_tokens(tokenize(text, vocab_), trace);
}

template <typename Scalar>
void TransformerEncoder<Scalar>::zero_grad() {
  zip_params(grads_, grads_, [](const std::string&, auto& g, auto&) { g.setZero(); });
}

template <typename Scalar>
void TransformerEncoder<Scalar>::backward(const Trace& trace, const Vector& grad_output) {
  const auto L = static_cast<Eigen::Index>(trace.tokens.size());
  const auto H = static_cast<Eigen::Index>(config_.hidden_dim);
  const auto dh = static_cast<Eigen::Index>(config_.head_dim());
  const Scalar alpha = Scalar(1) / std::sqrt(Scalar(dh));

  Vector d_un = grad_output;
  if (config_.add_normalization && trace.norm > Scalar(0)) {
    const Vector y = trace.unnormalized / trace.norm;
    d_un = (grad_output - y * y.dot(grad_output)) / trace.norm;
  }

  Vector d_pooled;
  if (config_.add_feedforward) {
    // unnormalized == tanh(proj_pre)
    const Vector d_pre =
        d_un.cwiseProduct(Vector::Ones(d_un.size()) - trace.unnormalized.cwiseAbs2());
    grads_.proj_w += d_pre * trace.pooled.transpose();
    grads_.proj_b += d_pre.transpose();
    d_pooled = params_.proj_w.transpose() * d_pre;
  } else {
    d_pooled = d_un;
  }

  Matrix d_final = Matrix::Zero(L, H);
  switch (config_.pooling) {
    case Pooling::kCls:
      d_final.row(0) = d_pooled.transpose();
      break;
    case Pooling::kMean:
      d_final.rowwise() += (d_pooled / Scalar(L)).transpose();
      break;
    case Pooling::kMax:
      for (Eigen::Index c = 0; c < H; ++c) {
        d_final(trace.max_rows[static_cast<std::size_t>(c)], c) = d_pooled(c);
      }
      break;
  }

  Matrix d_x = layer_norm_backward(d_final, params_.final_gamma, trace.final_hat,
                                   trace.final_inv_std, grads_.final_gamma, grads_.final_beta);

  for (std::size_t li = config_.layers; li-- > 0;) {
    const auto& p = params_.layers[li];
    auto& g = grads_.layers[li];
    const auto& lt = trace.layers[li];

    // FFN block: x = x_mid + ffn(n2(x_mid))
    const Matrix& d_out = d_x;
    Matrix d_act = d_out * p.w2;
    g.w2 += d_out.transpose() * lt.ffn_act;
    g.b2 += d_out.colwise().sum();
    Matrix d_pre = d_act.cwiseProduct(lt.ffn_pre.unaryExpr([](Scalar v) { return gelu_grad(v); }));
    Matrix d_n2 = d_pre * p.w1;
    g.w1 += d_pre.transpose() * lt.n2;
    g.b1 += d_pre.colwise().sum();
    Matrix d_x_mid =
        d_out + layer_norm_backward(d_n2, p.ln2_gamma, lt.n2_hat, lt.n2_inv_std, g.ln2_gamma,
                                    g.ln2_beta);

    // Attention block: x_mid = x_in + wo(attention(n1(x_in)))
    const Matrix& d_attn_out = d_x_mid;
    Matrix d_concat = d_attn_out * p.wo;
    g.wo += d_attn_out.transpose() * lt.attn_concat;
    g.bo += d_attn_out.colwise().sum();

    Matrix d_q = Matrix::Zero(L, H), d_k = Matrix::Zero(L, H), d_v = Matrix::Zero(L, H);
    for (std::size_t h = 0; h < config_.heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      const Matrix& probs = lt.attn_probs[h];
      Matrix d_head = d_concat.middleCols(c0, dh);
      Matrix d_probs = d_head * lt.v.middleCols(c0, dh).transpose();
      d_v.middleCols(c0, dh) = probs.transpose() * d_head;
      Matrix d_scores(L, L);
      for (Eigen::Index r = 0; r < L; ++r) {
        const Scalar s = d_probs.row(r).dot(probs.row(r));
        d_scores.row(r) =
            (probs.row(r).array() * (d_probs.row(r).array() - s)).matrix();
      }
      d_q.middleCols(c0, dh) = (d_scores * lt.k.middleCols(c0, dh)) * alpha;
      d_k.middleCols(c0, dh) = (d_scores.transpose() * lt.q.middleCols(c0, dh)) * alpha;
    }

    Matrix d_n1 = d_q * p.wq + d_k * p.wk + d_v * p.wv;
    g.wq += d_q.transpose() * lt.n1;
    g.bq += d_q.colwise().sum();
    g.wk += d_k.transpose() * lt.n1;
    g.bk += d_k.colwise().sum();
    g.wv += d_v.transpose() * lt.n1;
    g.bv += d_v.colwise().sum();

    d_x = d_x_mid + layer_norm_backward(d_n1, p.ln1_gamma, lt.n1_hat, lt.n1_inv_std, g.ln1_gamma,
                                        g.ln1_beta);
  }

  for (Eigen::Index i = 0; i < L; ++i) {
    grads_.token_embedding.row(
        static_cast<Eigen::Index>(trace.tokens[static_cast<std::size_t>(i)])) += d_x.row(i);
    grads_.position_embedding.row(i) += d_x.row(i);
  }
}

template <typename Scalar>
std::vector<typename TransformerEncoder<Scalar>::ParamView>
TransformerEncoder<Scalar>::parameter_views() {
  std::vector<ParamView> views;
  zip_params(params_, grads_, [&](const std::string&, auto& value, auto& grad) {
    views.push_back(ParamView{value.data(), grad.data(), value.size()});
  });
  return views;
}

template <typename Scalar>
std::size_t TransformerEncoder<Scalar>::parameter_count() const {
  std::size_t n = 0;
  zip_params(const_cast<Params&>(params_), const_cast<Params&>(params_),
             [&](const std::string&, auto& value, auto&) {
               n += static_cast<std::size_t>(value.size());
             });
  return n;
}

template <typename Scalar>
void TransformerEncoder<Scalar>::save(const std::string& path) const {
  TensorFile file;
  file.kind = "encoder";
  file.meta = {{"config", config_.to_json()},
               {"vocab", {{"tokens", vocab_.tokens()},
                          {"max_sequence_length", vocab_.max_sequence_length()}}}};
  zip_params(const_cast<Params&>(params_), const_cast<Params&>(params_),
             [&](const std::string& name, auto& value, auto&) {
               NamedTensor t;
               t.name = name;
               t.rows = static_cast<std::size_t>(value.rows());
               t.cols = static_cast<std::size_t>(value.cols());
               t.data.resize(static_cast<std::size_t>(value.size()));
               for (Eigen::Index i = 0; i < value.size(); ++i) {
                 t.data[static_cast<std::size_t>(i)] = static_cast<float>(value.data()[i]);
               }
               file.tensors.push_back(std::move(t));
             });
  save_tensor_file(file, path);
}

template <typename Scalar>
TransformerEncoder<Scalar> TransformerEncoder<Scalar>::load(const std::string& path) {
  TensorFile file = load_tensor_file(path);
  if (file.kind != "encoder") throw ParseError(path + ": not an encoder checkpoint");
  EncoderConfig config = EncoderConfig::from_json(file.meta.at("config"));
  const auto& vj = file.meta.at("vocab");
  Vocabulary vocab(vj.at("tokens").get<std::vector<std::string>>(),
                   vj.at("max_sequence_length").get<std::size_t>());

  TransformerEncoder enc(std::move(config), std::move(vocab), false);
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : file.tensors) by_name[t.name] = &t;
  zip_params(enc.params_, enc.params_, [&](const std::string& name, auto& value, auto&) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(path + ": missing tensor " + name);
    const NamedTensor& t = *it->second;
    if (static_cast<Eigen::Index>(t.rows) != value.rows() ||
        static_cast<Eigen::Index>(t.cols) != value.cols()) {
      throw ParseError(path + ": shape mismatch for tensor " + name);
    }
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      value.data()[i] = Scalar(t.data[static_cast<std::size_t>(i)]);
    }
  });
  return enc;
}

template class TransformerEncoder<float>;
template class TransformerEncoder<double>;

template Eigen::Matrix<float, Eigen::Dynamic, 1> pool<float>(
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>&, Pooling);
template Eigen::Matrix<double, Eigen::Dynamic, 1> pool<double>(
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>&, Pooling);

}  // namespace guard
