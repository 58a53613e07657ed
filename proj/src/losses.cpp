#include "guard/losses.hpp"

#include <algorithm>
#include <cmath>

#include "guard/common.hpp"

namespace guard {

namespace {

template <typename Scalar>
Scalar softplus(Scalar x) {
  return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

// Converts per-distance coefficients C(i,j) = dLoss/dD(i,j) into embedding
// gradients via dD(i,j)/de_i = (e_i - e_j) / D(i,j). Coincident points get the
// zero subgradient.
template <typename Scalar>
LossMatrix<Scalar> grad_from_coeffs(const LossMatrix<Scalar>& emb, const LossMatrix<Scalar>& dist,
                                    const LossMatrix<Scalar>& coeffs) {
  LossMatrix<Scalar> grad = LossMatrix<Scalar>::Zero(emb.rows(), emb.cols());
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < emb.rows(); ++j) {
      const Scalar w = coeffs(i, j) + coeffs(j, i);
      if (w == Scalar(0) || dist(i, j) <= Scalar(0)) continue;
      const auto dir = ((emb.row(i) - emb.row(j)) / dist(i, j)).eval();
      grad.row(i) += w * dir;
      grad.row(j) -= w * dir;
    }
  }
  return grad;
}

struct AnchorSets {
  std::vector<std::vector<Eigen::Index>> positives;
  std::vector<std::vector<Eigen::Index>> negatives;
};

AnchorSets anchor_sets(const std::vector<int>& labels) {
  const auto b = static_cast<Eigen::Index>(labels.size());
  AnchorSets sets;
  sets.positives.resize(labels.size());
  sets.negatives.resize(labels.size());
  for (Eigen::Index a = 0; a < b; ++a) {
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j == a) continue;
      auto& dst = labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(a)]
                      ? sets.positives
                      : sets.negatives;
      dst[static_cast<std::size_t>(a)].push_back(j);
    }
  }
  return sets;
}

template <typename Scalar>
void check_batch(const LossMatrix<Scalar>& embeddings, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    throw InputError("loss: embeddings/labels length mismatch");
  }
}

}  // namespace

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kContrastive:
      return "contrastive";
    case LossKind::kTripletAll:
      return "triplet-all";
    case LossKind::kTripletHard:
      return "triplet-hard";
    case LossKind::kTripletSoft:
      return "triplet-soft";
  }
  throw ConfigError("unknown loss kind");
}

LossKind parse_loss_kind(const std::string& name) {
  std::string key;
  for (char c : name) key.push_back(c == '_' ? '-' : static_cast<char>(std::tolower(c)));
  if (key == "contrastive") return LossKind::kContrastive;
  if (key == "triplet-all") return LossKind::kTripletAll;
  if (key == "triplet-hard") return LossKind::kTripletHard;
  if (key == "triplet-soft") return LossKind::kTripletSoft;
  throw ConfigError("unknown loss kind '" + name + "'");
}

std::string mining_name(Mining mining) {
  return mining == Mining::kCanonical ? "canonical" : "paper-literal";
}

Mining parse_mining(const std::string& name) {
  std::string key;
  for (char c : name) key.push_back(c == '_' ? '-' : static_cast<char>(std::tolower(c)));
  if (key == "canonical") return Mining::kCanonical;
  if (key == "paper-literal") return Mining::kPaperLiteral;
  throw ConfigError("unknown mining mode '" + name + "'");
}

void LossConfig::validate() const {
  if (kind != LossKind::kTripletSoft && margin <= 0.0) {
    throw ConfigError("loss: margin must be > 0 for margin-based losses");
  }
}

template <typename Scalar>
LossMatrix<Scalar> pairwise_distances(const LossMatrix<Scalar>& embeddings) {
  const Eigen::Index b = embeddings.rows();
  LossMatrix<Scalar> dist = LossMatrix<Scalar>::Zero(b, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = i + 1; j < b; ++j) {
      dist(i, j) = dist(j, i) = (embeddings.row(i) - embeddings.row(j)).norm();
    }
  }
  return dist;
}

template <typename Scalar>
Scalar contrastive_loss(const std::vector<Scalar>& pair_distances,
                        const std::vector<int>& pair_labels, Scalar margin) {
  if (margin < Scalar(0)) throw ConfigError("contrastive: negative margin");
  if (pair_distances.size() != pair_labels.size()) {
    throw InputError("contrastive: distances/labels length mismatch");
  }
  if (pair_distances.empty()) throw InputError("contrastive: no pairs");
  Scalar sum = 0;
  for (std::size_t i = 0; i < pair_distances.size(); ++i) {
    const int y = pair_labels[i];
    if (y != 0 && y != 1) throw InputError("contrastive: labels must be 0 or 1");
    const Scalar d = pair_distances[i];
    sum += y == 1 ? d * d : std::pow(std::max(Scalar(0), margin - d), Scalar(2));
  }
  return sum / Scalar(pair_distances.size());
}

template <typename Scalar>
LossResult<Scalar> contrastive_batch_loss(const LossMatrix<Scalar>& embeddings,
                                          const std::vector<int>& labels, Scalar margin) {
  check_batch(embeddings, labels);
  LossResult<Scalar> result;
  const Eigen::Index b = embeddings.rows();
  if (b < 2) return result;

  const LossMatrix<Scalar> dist = pairwise_distances(embeddings);
  LossMatrix<Scalar> coeffs = LossMatrix<Scalar>::Zero(b, b);
  const Scalar pairs = Scalar(b) * Scalar(b - 1) / Scalar(2);
  Scalar sum = 0;
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = i + 1; j < b; ++j) {
      const Scalar d = dist(i, j);
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
        sum += d * d;
        coeffs(i, j) += Scalar(2) * d / pairs;
      } else if (d < margin) {
        sum += (margin - d) * (margin - d);
        coeffs(i, j) -= Scalar(2) * (margin - d) / pairs;
      }
    }
  }
  result.value = sum / pairs;
  result.grad = grad_from_coeffs(embeddings, dist, coeffs);
  result.valid = true;
  result.term_count = static_cast<std::size_t>(pairs);
  return result;
}

template <typename Scalar>
LossResult<Scalar> batch_all_triplet_loss(const LossMatrix<Scalar>& embeddings,
                                          const std::vector<int>& labels, Scalar margin) {
  check_batch(embeddings, labels);
  LossResult<Scalar> result;
  const Eigen::Index b = embeddings.rows();
  const LossMatrix<Scalar> dist = pairwise_distances(embeddings);
  const AnchorSets sets = anchor_sets(labels);

  std::size_t count = 0;
  for (Eigen::Index a = 0; a < b; ++a) {
    count += sets.positives[static_cast<std::size_t>(a)].size() *
             sets.negatives[static_cast<std::size_t>(a)].size();
  }
  if (count == 0) return result;

  LossMatrix<Scalar> coeffs = LossMatrix<Scalar>::Zero(b, b);
  const Scalar inv = Scalar(1) / Scalar(count);
  Scalar sum = 0;
  for (Eigen::Index a = 0; a < b; ++a) {
    for (Eigen::Index p : sets.positives[static_cast<std::size_t>(a)]) {
      for (Eigen::Index n : sets.negatives[static_cast<std::size_t>(a)]) {
        const Scalar slack = dist(a, p) - dist(a, n) + margin;
        if (slack > Scalar(0)) {
          sum += slack;
          coeffs(a, p) += inv;
          coeffs(a, n) -= inv;
        }
      }
    }
  }
  result.value = sum * inv;
  result.grad = grad_from_coeffs(embeddings, dist, coeffs);
  result.valid = true;
  result.term_count = count;
  return result;
}

namespace {

// Shared batch-hard mining: per eligible anchor, hardest positive (max d) and
// hardest negative (min d), first index on ties.
template <typename Scalar, typename PerAnchor>
LossResult<Scalar> hard_mined_loss(const LossMatrix<Scalar>& embeddings,
                                   const std::vector<int>& labels, PerAnchor&& per_anchor) {
  check_batch(embeddings, labels);
  LossResult<Scalar> result;
  const Eigen::Index b = embeddings.rows();
  const LossMatrix<Scalar> dist = pairwise_distances(embeddings);
  const AnchorSets sets = anchor_sets(labels);

  struct Mined {
    Eigen::Index anchor, pos, neg;
  };
  std::vector<Mined> mined;
  for (Eigen::Index a = 0; a < b; ++a) {
    const auto& pos = sets.positives[static_cast<std::size_t>(a)];
    const auto& neg = sets.negatives[static_cast<std::size_t>(a)];
    if (pos.empty() || neg.empty()) continue;
    Eigen::Index hp = pos[0], hn = neg[0];
    for (Eigen::Index p : pos) {
      if (dist(a, p) > dist(a, hp)) hp = p;
    }
    for (Eigen::Index n : neg) {
      if (dist(a, n) < dist(a, hn)) hn = n;
    }
    mined.push_back({a, hp, hn});
  }
  if (mined.empty()) return result;

  LossMatrix<Scalar> coeffs = LossMatrix<Scalar>::Zero(b, b);
  const Scalar inv = Scalar(1) / Scalar(mined.size());
  Scalar sum = 0;
  for (const Mined& m : mined) {
    const Scalar gap = dist(m.anchor, m.pos) - dist(m.anchor, m.neg);
    // per_anchor returns {loss, dLoss/dgap}
    const auto [value, slope] = per_anchor(gap);
    sum += value;
    coeffs(m.anchor, m.pos) += slope * inv;
    coeffs(m.anchor, m.neg) -= slope * inv;
  }
  result.value = sum * inv;
  result.grad = grad_from_coeffs(embeddings, dist, coeffs);
  result.valid = true;
  result.term_count = mined.size();
  return result;
}

// Single globally hardest triplet (the literal reading of the batch-hard
// description).
template <typename Scalar>
LossResult<Scalar> global_max_triplet_loss(const LossMatrix<Scalar>& embeddings,
                                           const std::vector<int>& labels, Scalar margin) {
  check_batch(embeddings, labels);
  LossResult<Scalar> result;
  const Eigen::Index b = embeddings.rows();
  const LossMatrix<Scalar> dist = pairwise_distances(embeddings);
  const AnchorSets sets = anchor_sets(labels);

  bool found = false;
  Eigen::Index ba = 0, bp = 0, bn = 0;
  Scalar best = 0;
  for (Eigen::Index a = 0; a < b; ++a) {
    for (Eigen::Index p : sets.positives[static_cast<std::size_t>(a)]) {
      for (Eigen::Index n : sets.negatives[static_cast<std::size_t>(a)]) {
        const Scalar slack = dist(a, p) - dist(a, n) + margin;
        if (!found || slack > best) {
          found = true;
          best = slack;
          ba = a;
          bp = p;
          bn = n;
        }
      }
    }
  }
  if (!found) return result;

  LossMatrix<Scalar> coeffs = LossMatrix<Scalar>::Zero(b, b);
  if (best > Scalar(0)) {
    result.value = best;
    coeffs(ba, bp) += Scalar(1);
    coeffs(ba, bn) -= Scalar(1);
  }
  result.grad = grad_from_coeffs(embeddings, dist, coeffs);
  result.valid = true;
  result.term_count = 1;
  return result;
}

// Batch-all enumeration with softplus terms (the literal reading of the
// batch-hard-soft-margin description).
template <typename Scalar>
LossResult<Scalar> all_soft_triplet_loss(const LossMatrix<Scalar>& embeddings,
                                         const std::vector<int>& labels) {
  check_batch(embeddings, labels);
  LossResult<Scalar> result;
  const Eigen::Index b = embeddings.rows();
  const LossMatrix<Scalar> dist = pairwise_distances(embeddings);
  const AnchorSets sets = anchor_sets(labels);

  std::size_t count = 0;
  for (Eigen::Index a = 0; a < b; ++a) {
    count += sets.positives[static_cast<std::size_t>(a)].size() *
             sets.negatives[static_cast<std::size_t>(a)].size();
  }
  if (count == 0) return result;

  LossMatrix<Scalar> coeffs = LossMatrix<Scalar>::Zero(b, b);
  const Scalar inv = Scalar(1) / Scalar(count);
  Scalar sum = 0;
  for (Eigen::Index a = 0; a < b; ++a) {
    for (Eigen::Index p : sets.positives[static_cast<std::size_t>(a)]) {
      for (Eigen::Index n : sets.negatives[static_cast<std::size_t>(a)]) {
        const Scalar gap = dist(a, p) - dist(a, n);
        sum += softplus(gap);
        const Scalar s = sigmoid(gap);
        coeffs(a, p) += s * inv;
        coeffs(a, n) -= s * inv;
      }
    }
  }
  result.value = sum * inv;
  result.grad = grad_from_coeffs(embeddings, dist, coeffs);
  result.valid = true;
  result.term_count = count;
  return result;
}

}  // namespace

template <typename Scalar>
LossResult<Scalar> batch_hard_triplet_loss(const LossMatrix<Scalar>& embeddings,
                                           const std::vector<int>& labels, Scalar margin) {
  return hard_mined_loss(embeddings, labels, [margin](Scalar gap) {
    return gap + margin > Scalar(0) ? std::make_pair(gap + margin, Scalar(1))
                                    : std::make_pair(Scalar(0), Scalar(0));
  });
}

template <typename Scalar>
LossResult<Scalar> batch_hard_soft_margin_loss(const LossMatrix<Scalar>& embeddings,
                                               const std::vector<int>& labels) {
  return hard_mined_loss(embeddings, labels, [](Scalar gap) {
    return std::make_pair(softplus(gap), sigmoid(gap));
  });
}

template <typename Scalar>
LossResult<Scalar> batch_loss(const LossMatrix<Scalar>& embeddings, const std::vector<int>& labels,
                              const LossConfig& config) {
  config.validate();
  const Scalar margin = Scalar(config.margin);
  switch (config.kind) {
    case LossKind::kContrastive:
      return contrastive_batch_loss(embeddings, labels, margin);
    case LossKind::kTripletAll:
      return batch_all_triplet_loss(embeddings, labels, margin);
    case LossKind::kTripletHard:
      return config.mining == Mining::kPaperLiteral
                 ? global_max_triplet_loss(embeddings, labels, margin)
                 : batch_hard_triplet_loss(embeddings, labels, margin);
    case LossKind::kTripletSoft:
      return config.mining == Mining::kPaperLiteral
                 ? all_soft_triplet_loss(embeddings, labels)
                 : batch_hard_soft_margin_loss(embeddings, labels);
  }
  throw ConfigError("unknown loss kind");
}

#define GUARD_INSTANTIATE_LOSSES(S)                                                            \
  template LossMatrix<S> pairwise_distances<S>(const LossMatrix<S>&);                          \
  template S contrastive_loss<S>(const std::vector<S>&, const std::vector<int>&, S);           \
  template LossResult<S> contrastive_batch_loss<S>(const LossMatrix<S>&, const std::vector<int>&, \
                                                   S);                                         \
  template LossResult<S> batch_all_triplet_loss<S>(const LossMatrix<S>&, const std::vector<int>&, \
                                                   S);                                         \
  template LossResult<S> batch_hard_triplet_loss<S>(const LossMatrix<S>&,                      \
                                                    const std::vector<int>&, S);               \
  template LossResult<S> batch_hard_soft_margin_loss<S>(const LossMatrix<S>&,                  \
                                                        const std::vector<int>&);              \
  template LossResult<S> batch_loss<S>(const LossMatrix<S>&, const std::vector<int>&,          \
                                       const LossConfig&);

GUARD_INSTANTIATE_LOSSES(float)
GUARD_INSTANTIATE_LOSSES(double)

#undef GUARD_INSTANTIATE_LOSSES

}  // namespace guard
