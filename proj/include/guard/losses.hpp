#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace guard {

enum class LossKind { kContrastive, kTripletAll, kTripletHard, kTripletSoft };
enum class Mining { kCanonical, kPaperLiteral };

std::string loss_kind_name(LossKind kind);
LossKind parse_loss_kind(const std::string& name);
std::string mining_name(Mining mining);
Mining parse_mining(const std::string& name);

struct LossConfig {
  LossKind kind = LossKind::kTripletSoft;
  double margin = 1.0;  // ignored by TripletSoft
  Mining mining = Mining::kCanonical;

  void validate() const;  // throws ConfigError
};

template <typename Scalar>
using LossMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct LossResult {
  Scalar value = Scalar(0);
  LossMatrix<Scalar> grad;  // dLoss/dEmbeddings, B x D
  // false means the batch has no valid pair/triplet and must be skipped.
  bool valid = false;
  std::size_t term_count = 0;  // pairs, triplets, or anchors averaged over
};

// Symmetric zero-diagonal Euclidean distances between embedding rows.
template <typename Scalar>
LossMatrix<Scalar> pairwise_distances(const LossMatrix<Scalar>& embeddings);

// mean over pairs of [label * d^2 + (1-label) * max(0, margin-d)^2]
template <typename Scalar>
Scalar contrastive_loss(const std::vector<Scalar>& pair_distances,
                        const std::vector<int>& pair_labels, Scalar margin);

// In-batch variants over a labeled batch. Contrastive pairs every i<j with
// label 1 iff classes match; triplet variants follow the batch-all /
// batch-hard / batch-hard-soft-margin mining schemes.
template <typename Scalar>
LossResult<Scalar> contrastive_batch_loss(const LossMatrix<Scalar>& embeddings,
                                          const std::vector<int>& labels, Scalar margin);
template <typename Scalar>
LossResult<Scalar> batch_all_triplet_loss(const LossMatrix<Scalar>& embeddings,
                                          const std::vector<int>& labels, Scalar margin);
template <typename Scalar>
LossResult<Scalar> batch_hard_triplet_loss(const LossMatrix<Scalar>& embeddings,
                                           const std::vector<int>& labels, Scalar margin);
template <typename Scalar>
LossResult<Scalar> batch_hard_soft_margin_loss(const LossMatrix<Scalar>& embeddings,
                                               const std::vector<int>& labels);

template <typename Scalar>
LossResult<Scalar> batch_loss(const LossMatrix<Scalar>& embeddings, const std::vector<int>& labels,
                              const LossConfig& config);

}  // namespace guard
