#pragma once

#include <optional>
#include <string>
#include <vector>

namespace guard {

// Ordered safety taxonomy: one Safe category, 13 risk areas, and the two
// auxiliary labels (needs_caution, other) that only exist while raw
// annotations are being reconciled. Category order is stable and defines
// multi-class indices.
class Taxonomy {
 public:
  Taxonomy(std::vector<std::string> categories, std::size_t safe_index,
           std::size_t needs_caution_index, std::size_t other_index);

  static const Taxonomy& aegis();

  const std::vector<std::string>& categories() const { return categories_; }
  std::size_t size() const { return categories_.size(); }

  const std::string& name(std::size_t index) const { return categories_.at(index); }
  std::optional<std::size_t> index_of(const std::string& canonical_name) const;

  // Accepts canonical ids as well as the verbose label spellings found in
  // annotation exports ("Criminal Planning/Confessions" etc).
  std::optional<std::size_t> resolve(const std::string& label) const;

  std::size_t safe_index() const { return safe_index_; }
  std::size_t needs_caution_index() const { return needs_caution_index_; }
  std::size_t other_index() const { return other_index_; }

  bool is_safe(std::size_t index) const { return index == safe_index_; }
  // Auxiliary labels never survive reconciliation.
  bool is_auxiliary(std::size_t index) const {
    return index == needs_caution_index_ || index == other_index_;
  }
  // An actual risk area: not Safe and not auxiliary.
  bool is_unsafe_category(std::size_t index) const {
    return index < size() && !is_safe(index) && !is_auxiliary(index);
  }

  // Categories eligible for reconciled instances (everything but the aux pair).
  std::vector<std::size_t> reconciled_indices() const;

  // The seven populated unsafe categories used by the MEMC / McEMC topologies.
  static const std::vector<std::string>& subset_category_names();
  std::vector<std::size_t> subset_indices() const;

 private:
  std::vector<std::string> categories_;
  std::size_t safe_index_;
  std::size_t needs_caution_index_;
  std::size_t other_index_;
};

// Lowercases and squashes runs of non-alphanumerics to '_' so that label
// spellings like "Guns and Illegal Weapons" become comparable keys.
std::string normalize_label_key(const std::string& label);

}  // namespace guard
