#include "guard/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "guard/common.hpp"
#include "guard/tensor_file.hpp"

namespace guard {

namespace {

// Dense-id check shared by both heads.
std::size_t class_count(const EmbeddingMatrix& embeddings, const std::vector<int>& labels) {
  if (embeddings.rows() == 0) throw ConfigError("classifier: empty training set");
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    throw ConfigError("classifier: embeddings/labels length mismatch");
  }
  int max_label = 0;
  for (int l : labels) {
    if (l < 0) throw ConfigError("classifier: negative class id");
    max_label = std::max(max_label, l);
  }
  const auto k = static_cast<std::size_t>(max_label) + 1;
  std::vector<bool> seen(k, false);
  for (int l : labels) seen[static_cast<std::size_t>(l)] = true;
  if (k < 2) throw ConfigError("classifier: single-class input");
  for (std::size_t c = 0; c < k; ++c) {
    if (!seen[c]) throw ConfigError("classifier: class ids must be dense 0..K-1");
  }
  return k;
}

// Platt scaling fitted by Newton iterations with backtracking on the
// cross-entropy of smoothed targets.
std::pair<double, double> fit_platt(const Eigen::VectorXd& scores,
                                    const std::vector<bool>& positive) {
  const auto n = static_cast<std::size_t>(scores.size());
  double prior1 = 0, prior0 = 0;
  for (bool p : positive) (p ? prior1 : prior0) += 1.0;
  const double hi = (prior1 + 1.0) / (prior1 + 2.0);
  const double lo = 1.0 / (prior0 + 2.0);

  std::vector<double> target(n);
  for (std::size_t i = 0; i < n; ++i) target[i] = positive[i] ? hi : lo;

  double a = 0.0, b = std::log((prior0 + 1.0) / (prior1 + 1.0));
  auto objective = [&](double A, double B) {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double fApB = scores(static_cast<Eigen::Index>(i)) * A + B;
      f += fApB >= 0 ? target[i] * fApB + std::log1p(std::exp(-fApB))
                     : (target[i] - 1.0) * fApB + std::log1p(std::exp(fApB));
    }
    return f;
  };

  double fval = objective(a, b);
  constexpr int kMaxIter = 100;
  constexpr double kMinStep = 1e-10;
  constexpr double kSigma = 1e-12;
  for (int iter = 0; iter < kMaxIter; ++iter) {
    double h11 = kSigma, h22 = kSigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = scores(static_cast<Eigen::Index>(i));
      const double fApB = s * a + b;
      double p, q;
      if (fApB >= 0) {
        p = std::exp(-fApB) / (1.0 + std::exp(-fApB));
        q = 1.0 / (1.0 + std::exp(-fApB));
      } else {
        p = 1.0 / (1.0 + std::exp(fApB));
        q = std::exp(fApB) / (1.0 + std::exp(fApB));
      }
      const double d2 = p * q;
      h11 += s * s * d2;
      h22 += d2;
      h21 += s * d2;
      const double d1 = target[i] - p;
      g1 += s * d1;
      g2 += d1;
    }
    if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;

    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;
    double stepsize = 1.0;
    while (stepsize >= kMinStep) {
      const double na = a + stepsize * da;
      const double nb = b + stepsize * db;
      const double nf = objective(na, nb);
      if (nf < fval + 1e-4 * stepsize * gd) {
        a = na;
        b = nb;
        fval = nf;
        break;
      }
      stepsize /= 2.0;
    }
    if (stepsize < kMinStep) break;
  }
  return {a, b};
}

Eigen::MatrixXd augment(const EmbeddingMatrix& embeddings) {
  Eigen::MatrixXd x(embeddings.rows(), embeddings.cols() + 1);
  x.leftCols(embeddings.cols()) = embeddings.cast<double>();
  x.col(embeddings.cols()).setConstant(1.0);
  return x;
}

}  // namespace

std::size_t argmax_index(const std::vector<double>& values) {
  if (values.empty()) throw InputError("argmax of empty vector");
  return static_cast<std::size_t>(
      std::distance(values.begin(), std::max_element(values.begin(), values.end())));
}

double LinearSvmHead::primal_objective(const Eigen::VectorXd& weights,
                                       const EmbeddingMatrix& embeddings,
                                       const std::vector<int>& signs, double C) {
  const Eigen::MatrixXd x = augment(embeddings);
  double hinge = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double margin = static_cast<double>(signs[static_cast<std::size_t>(i)]) *
                          x.row(i).dot(weights);
    hinge += std::max(0.0, 1.0 - margin);
  }
  return weights.squaredNorm() / (2.0 * C) + hinge / static_cast<double>(x.rows());
}

LinearSvmHead LinearSvmHead::train(const EmbeddingMatrix& embeddings,
                                   const std::vector<int>& labels, const Config& config) {
  if (config.C <= 0.0) throw ConfigError("svm: C must be > 0");
  const std::size_t k = class_count(embeddings, labels);
  const Eigen::MatrixXd x = augment(embeddings);
  const auto n = static_cast<double>(x.rows());
  const double lambda = 1.0 / config.C;

  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), x.cols());
  Eigen::MatrixXd platt(static_cast<Eigen::Index>(k), 2);
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::VectorXd signs(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      signs(i) = labels[static_cast<std::size_t>(i)] == static_cast<int>(c) ? 1.0 : -1.0;
    }
    Eigen::VectorXd w = Eigen::VectorXd::Zero(x.cols());
    for (std::size_t t = 0; t < config.iterations; ++t) {
      const double eta = 1.0 / (lambda * static_cast<double>(t + 2));
      const Eigen::VectorXd margins = signs.cwiseProduct(x * w);
      Eigen::VectorXd active = (margins.array() < 1.0).cast<double>();
      const Eigen::VectorXd grad =
          lambda * w - x.transpose() * signs.cwiseProduct(active) / n;
      w -= eta * grad;
    }
    weights.row(static_cast<Eigen::Index>(c)) = w.transpose();

    const Eigen::VectorXd scores = x * w;
    std::vector<bool> positive(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) positive[static_cast<std::size_t>(i)] = signs(i) > 0;
    const auto [pa, pb] = fit_platt(scores, positive);
    platt(static_cast<Eigen::Index>(c), 0) = pa;
    platt(static_cast<Eigen::Index>(c), 1) = pb;
  }

  LinearSvmHead head;
  head.weights_ = weights.cast<float>();
  head.platt_ = platt.cast<float>();
  head.config_ = config;
  return head;
}

std::vector<double> LinearSvmHead::decision_scores(const Eigen::VectorXf& x) const {
  if (x.size() + 1 != weights_.cols()) throw InputError("svm: input dimension mismatch");
  Eigen::VectorXd xa(weights_.cols());
  xa.head(x.size()) = x.cast<double>();
  xa(x.size()) = 1.0;
  const Eigen::VectorXd s = weights_.cast<double>() * xa;
  return {s.data(), s.data() + s.size()};
}

std::vector<double> LinearSvmHead::predict_proba(const Eigen::VectorXf& x) const {
  const std::vector<double> scores = decision_scores(x);
  std::vector<double> probs(scores.size());
  double total = 0.0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const double fApB = static_cast<double>(platt_(static_cast<Eigen::Index>(c), 0)) * scores[c] +
                        static_cast<double>(platt_(static_cast<Eigen::Index>(c), 1));
    probs[c] = fApB >= 0 ? std::exp(-fApB) / (1.0 + std::exp(-fApB)) : 1.0 / (1.0 + std::exp(fApB));
    total += probs[c];
  }
  for (double& p : probs) p /= total;
  return probs;
}

void LinearSvmHead::save(const std::string& path) const {
  TensorFile file;
  file.kind = "svm_head";
  file.meta = {{"classes", num_classes()}, {"C", config_.C}, {"iterations", config_.iterations}};
  NamedTensor w{"weights", static_cast<std::size_t>(weights_.rows()),
                static_cast<std::size_t>(weights_.cols()),
                {weights_.data(), weights_.data() + weights_.size()}};
  NamedTensor p{"platt", static_cast<std::size_t>(platt_.rows()),
                static_cast<std::size_t>(platt_.cols()),
                {platt_.data(), platt_.data() + platt_.size()}};
  file.tensors = {std::move(w), std::move(p)};
  save_tensor_file(file, path);
}

LinearSvmHead LinearSvmHead::load_file(const std::string& path) {
  TensorFile file = load_tensor_file(path);
  if (file.kind != "svm_head") throw ParseError(path + ": not an svm head");
  const NamedTensor& w = file.tensor("weights");
  const NamedTensor& p = file.tensor("platt");
  LinearSvmHead head;
  head.weights_ = Eigen::Map<const EmbeddingMatrix>(w.data.data(),
                                                    static_cast<Eigen::Index>(w.rows),
                                                    static_cast<Eigen::Index>(w.cols));
  head.platt_ = Eigen::Map<const EmbeddingMatrix>(p.data.data(), static_cast<Eigen::Index>(p.rows),
                                                  static_cast<Eigen::Index>(p.cols));
  head.config_.C = file.meta.at("C").get<double>();
  head.config_.iterations = file.meta.at("iterations").get<std::size_t>();
  return head;
}

ShallowNnHead ShallowNnHead::train(const EmbeddingMatrix& embeddings,
                                   const std::vector<int>& labels, const Config& config) {
  if (config.hidden < 1) throw ConfigError("nn: hidden width must be >= 1");
  const std::size_t k = class_count(embeddings, labels);
  const Eigen::MatrixXd x = embeddings.cast<double>();
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = x.cols();
  const auto h = static_cast<Eigen::Index>(config.hidden);
  const auto ko = static_cast<Eigen::Index>(k);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd w1(h, d), w2(ko, h);
  const double s1 = std::sqrt(2.0 / static_cast<double>(d));
  const double s2 = std::sqrt(2.0 / static_cast<double>(h));
  for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = dist(rng) * s1;
  for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = dist(rng) * s2;
  Eigen::VectorXd b1 = Eigen::VectorXd::Zero(h), b2 = Eigen::VectorXd::Zero(ko);

  // Adam state per tensor.
  Eigen::MatrixXd mw1 = Eigen::MatrixXd::Zero(h, d), vw1 = mw1;
  Eigen::MatrixXd mw2 = Eigen::MatrixXd::Zero(ko, h), vw2 = mw2;
  Eigen::VectorXd mb1 = Eigen::VectorXd::Zero(h), vb1 = mb1;
  Eigen::VectorXd mb2 = Eigen::VectorXd::Zero(ko), vb2 = mb2;
  long t = 0;
  constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;
  auto adam = [&](auto& w, auto& m, auto& v, const auto& g) {
    m = kB1 * m + (1.0 - kB1) * g;
    v = kB2 * v + (1.0 - kB2) * g.cwiseProduct(g);
    const double c1 = 1.0 / (1.0 - std::pow(kB1, static_cast<double>(t)));
    const double c2 = 1.0 / (1.0 - std::pow(kB2, static_cast<double>(t)));
    w.array() -= config.learning_rate * (m.array() * c1) /
                 ((v.array() * c2).sqrt() + kEps);
  };

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const auto b = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd xb(b, d);
      Eigen::MatrixXd y = Eigen::MatrixXd::Zero(b, ko);
      for (Eigen::Index i = 0; i < b; ++i) {
        const std::size_t idx = order[start + static_cast<std::size_t>(i)];
        xb.row(i) = x.row(static_cast<Eigen::Index>(idx));
        y(i, labels[idx]) = 1.0;
      }
      Eigen::MatrixXd z1 = (xb * w1.transpose()).rowwise() + b1.transpose();
      Eigen::MatrixXd a1 = z1.cwiseMax(0.0);
      Eigen::MatrixXd z2 = (a1 * w2.transpose()).rowwise() + b2.transpose();
      Eigen::MatrixXd p(b, ko);
      for (Eigen::Index i = 0; i < b; ++i) {
        const Eigen::ArrayXd row = (z2.row(i).array() - z2.row(i).maxCoeff()).exp();
        p.row(i) = (row / row.sum()).matrix().transpose();
      }
      const Eigen::MatrixXd dz2 = (p - y) / static_cast<double>(b);
      const Eigen::MatrixXd gw2 = dz2.transpose() * a1;
      const Eigen::VectorXd gb2 = dz2.colwise().sum().transpose();
      Eigen::MatrixXd dz1 = (dz2 * w2).cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
      const Eigen::MatrixXd gw1 = dz1.transpose() * xb;
      const Eigen::VectorXd gb1 = dz1.colwise().sum().transpose();

      ++t;
      adam(w1, mw1, vw1, gw1);
      adam(w2, mw2, vw2, gw2);
      adam(b1, mb1, vb1, gb1);
      adam(b2, mb2, vb2, gb2);
    }
  }

  ShallowNnHead head;
  head.w1_ = w1.cast<float>();
  head.b1_ = b1.cast<float>();
  head.w2_ = w2.cast<float>();
  head.b2_ = b2.cast<float>();
  head.config_ = config;
  return head;
}

std::vector<double> ShallowNnHead::predict_proba(const Eigen::VectorXf& x) const {
  if (x.size() != w1_.cols()) throw InputError("nn: input dimension mismatch");
  const Eigen::VectorXd xd = x.cast<double>();
  const Eigen::VectorXd z1 = w1_.cast<double>() * xd + b1_.cast<double>();
  const Eigen::VectorXd a1 = z1.cwiseMax(0.0);
  const Eigen::VectorXd z2 = w2_.cast<double>() * a1 + b2_.cast<double>();
  const Eigen::ArrayXd e = (z2.array() - z2.maxCoeff()).exp();
  const Eigen::ArrayXd p = e / e.sum();
  return {p.data(), p.data() + p.size()};
}

void ShallowNnHead::save(const std::string& path) const {
  TensorFile file;
  file.kind = "nn_head";
  file.meta = {{"classes", num_classes()},
               {"hidden", config_.hidden},
               {"epochs", config_.epochs},
               {"batch_size", config_.batch_size},
               {"learning_rate", config_.learning_rate},
               {"seed", config_.seed}};
  auto tensor = [](const char* name, const auto& m) {
    return NamedTensor{name, static_cast<std::size_t>(m.rows()),
                       static_cast<std::size_t>(m.cols()),
                       std::vector<float>(m.data(), m.data() + m.size())};
  };
  file.tensors = {tensor("w1", w1_), tensor("b1", b1_), tensor("w2", w2_), tensor("b2", b2_)};
  save_tensor_file(file, path);
}

ShallowNnHead ShallowNnHead::load_file(const std::string& path) {
  TensorFile file = load_tensor_file(path);
  if (file.kind != "nn_head") throw ParseError(path + ": not an nn head");
  ShallowNnHead head;
  const NamedTensor& w1 = file.tensor("w1");
  const NamedTensor& w2 = file.tensor("w2");
  head.w1_ = Eigen::Map<const EmbeddingMatrix>(w1.data.data(), static_cast<Eigen::Index>(w1.rows),
                                               static_cast<Eigen::Index>(w1.cols));
  head.w2_ = Eigen::Map<const EmbeddingMatrix>(w2.data.data(), static_cast<Eigen::Index>(w2.rows),
                                               static_cast<Eigen::Index>(w2.cols));
  const NamedTensor& b1 = file.tensor("b1");
  const NamedTensor& b2 = file.tensor("b2");
  head.b1_ = Eigen::Map<const Eigen::VectorXf>(b1.data.data(),
                                               static_cast<Eigen::Index>(b1.data.size()));
  head.b2_ = Eigen::Map<const Eigen::VectorXf>(b2.data.data(),
                                               static_cast<Eigen::Index>(b2.data.size()));
  head.config_.hidden = file.meta.at("hidden").get<std::size_t>();
  head.config_.epochs = file.meta.at("epochs").get<std::size_t>();
  head.config_.batch_size = file.meta.at("batch_size").get<std::size_t>();
  head.config_.learning_rate = file.meta.at("learning_rate").get<double>();
  head.config_.seed = file.meta.at("seed").get<std::uint64_t>();
  return head;
}

std::unique_ptr<ClassifierHead> load_head(const std::string& path) {
  TensorFile file = load_tensor_file(path);
  if (file.kind == "svm_head") {
    return std::make_unique<LinearSvmHead>(LinearSvmHead::load_file(path));
  }
  if (file.kind == "nn_head") {
    return std::make_unique<ShallowNnHead>(ShallowNnHead::load_file(path));
  }
  throw ParseError(path + ": unknown head kind '" + file.kind + "'");
}

}  // namespace guard
