#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "guard/taxonomy.hpp"

namespace guard {

enum class Split { kTrain, kTest };

const char* split_name(Split split);
std::optional<Split> parse_split(const std::string& name);

// One corpus item as shipped: prompt text plus the label set of every
// annotator that looked at it (at least three).
struct RawAnnotationRecord {
  std::uint64_t original_index = 0;
  std::string text;
  std::vector<std::vector<std::size_t>> annotations;  // per annotator, taxonomy indices
  Split split = Split::kTrain;
};

// A prompt with exactly one final taxonomy label. Auxiliary labels
// (needs_caution, other) never appear here.
struct ReconciledInstance {
  std::string text;
  std::size_t label = 0;
  Split split = Split::kTrain;
};

struct CategoryHistogram {
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t total = 0;

  void add(const std::string& category);
};

struct PreprocessResult {
  std::vector<ReconciledInstance> instances;  // ordered by original_index
  CategoryHistogram train_histogram;
  CategoryHistogram test_histogram;
  std::uint64_t dropped_other = 0;          // every annotator said only "other"
  std::uint64_t dropped_needs_caution = 0;  // resolved to needs_caution
  std::uint64_t dropped_duplicates = 0;     // same text, larger original_index
};

// Resolves one record's annotator disagreements to a single taxonomy index,
// or nullopt when the record is dropped (nothing but "other" labels).
// Deterministic for a fixed seed; the random stream is derived from
// (rng_seed, original_index) so results do not depend on processing order.
//
// Resolution order: start from the second annotator's labels; replace an
// all-"other" list with the first non-"other" label another annotator gave
// (drop if none exists); a lone Safe label must be unanimous across the
// other annotators, otherwise one of the disagreeing annotators' unsafe
// categories is chosen uniformly at random; a multi-label list resolves to
// its first label unless that is Safe, in which case one of its unsafe
// labels is chosen uniformly at random.
std::optional<std::size_t> reconcile_labels(const RawAnnotationRecord& record,
                                            std::uint64_t rng_seed,
                                            const Taxonomy& taxonomy = Taxonomy::aegis());

// Full reconciliation pipeline: reconcile every record, drop unresolvable
// ones, remove needs_caution instances from both splits, then deduplicate
// identical texts keeping the occurrence with the smallest original_index.
PreprocessResult preprocess_corpus(const std::vector<RawAnnotationRecord>& records,
                                   std::uint64_t rng_seed,
                                   const Taxonomy& taxonomy = Taxonomy::aegis());

// JSONL I/O. One record per line:
//   {"index": int, "text": str, "annotations": [[str,...],...], "split": "train"|"test"}
// Malformed lines raise ParseError naming the 1-based line number.
std::vector<RawAnnotationRecord> load_corpus(const std::string& path,
                                             const Taxonomy& taxonomy = Taxonomy::aegis());

// Instances as JSONL: {"text": str, "label": str, "split": str}.
void save_instances(const std::vector<ReconciledInstance>& instances, const std::string& path,
                    const Taxonomy& taxonomy = Taxonomy::aegis());
std::vector<ReconciledInstance> load_instances(const std::string& path,
                                               const Taxonomy& taxonomy = Taxonomy::aegis());

}  // namespace guard
