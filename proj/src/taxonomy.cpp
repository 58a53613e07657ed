#include "guard/taxonomy.hpp"

#include <cctype>
#include <stdexcept>
#include <unordered_map>

namespace guard {

namespace {

constexpr const char* kSafe = "safe";
constexpr const char* kNeedsCaution = "needs_caution";
constexpr const char* kOther = "other";

// Canonical ids in table order (alphabetical over the published category
// names), followed by the two auxiliary reconciliation labels.
const std::vector<std::string> kAegisCategories = {
    "controlled_substances",  // Controlled/Regulated Substances
    "criminal_planning",      // Criminal Planning/Confessions
    "fraud_deception",        // Fraud/Deception
    "guns_illegal_weapons",   // Guns and Illegal Weapons
    "harassment",             // Harassment
    "hate_identity_hate",     // Hate/Identity Hate
    "pii_privacy",            // PII/Privacy
    "profanity",              // Profanity
    kSafe,                    // Safe
    "sexual",                 // Sexual
    "sexual_minor",           // Sexual (minor)
    "suicide_self_harm",      // Suicide and Self Harm
    "threat",                 // Threat
    "violence",               // Violence
    kNeedsCaution,            // auxiliary
    kOther,                   // auxiliary
};

// Verbose spellings seen in annotation exports, keyed by normalized form.
const std::unordered_map<std::string, std::string>& alias_map() {
  static const std::unordered_map<std::string, std::string> aliases = {
      {"controlled_regulated_substances", "controlled_substances"},
      {"regulated_substances", "controlled_substances"},
      {"criminal_planning_confessions", "criminal_planning"},
      {"guns_and_illegal_weapons", "guns_illegal_weapons"},
      {"hate_identity_hate", "hate_identity_hate"},
      {"identity_hate", "hate_identity_hate"},
      {"pii_privacy", "pii_privacy"},
      {"privacy", "pii_privacy"},
      {"pii", "pii_privacy"},
      {"sexual_minor", "sexual_minor"},
      {"suicide_and_self_harm", "suicide_self_harm"},
      {"suicide_self_harm", "suicide_self_harm"},
  };
  return aliases;
}

}  // namespace

std::string normalize_label_key(const std::string& label) {
  std::string key;
  key.reserve(label.size());
  bool pending_sep = false;
  for (unsigned char c : label) {
    if (std::isalnum(c)) {
      if (pending_sep && !key.empty()) key.push_back('_');
      pending_sep = false;
      key.push_back(static_cast<char>(std::tolower(c)));
    } else {
      pending_sep = true;
    }
  }
  return key;
}

Taxonomy::Taxonomy(std::vector<std::string> categories, std::size_t safe_index,
                   std::size_t needs_caution_index, std::size_t other_index)
    : categories_(std::move(categories)),
      safe_index_(safe_index),
      needs_caution_index_(needs_caution_index),
      other_index_(other_index) {
  if (safe_index_ >= categories_.size() || needs_caution_index_ >= categories_.size() ||
      other_index_ >= categories_.size()) {
    throw std::invalid_argument("taxonomy: special index out of range");
  }
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    for (std::size_t j = i + 1; j < categories_.size(); ++j) {
      if (categories_[i] == categories_[j]) {
        throw std::invalid_argument("taxonomy: duplicate category " + categories_[i]);
      }
    }
  }
}

const Taxonomy& Taxonomy::aegis() {
  static const Taxonomy taxonomy(kAegisCategories, 8, 14, 15);
  return taxonomy;
}

std::optional<std::size_t> Taxonomy::index_of(const std::string& canonical_name) const {
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    if (categories_[i] == canonical_name) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> Taxonomy::resolve(const std::string& label) const {
  if (auto direct = index_of(label)) return direct;
  const std::string key = normalize_label_key(label);
  if (auto normalized = index_of(key)) return normalized;
  const auto& aliases = alias_map();
  if (auto it = aliases.find(key); it != aliases.end()) return index_of(it->second);
  return std::nullopt;
}

std::vector<std::size_t> Taxonomy::reconciled_indices() const {
  std::vector<std::size_t> out;
  out.reserve(categories_.size());
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    if (!is_auxiliary(i)) out.push_back(i);
  }
  return out;
}

const std::vector<std::string>& Taxonomy::subset_category_names() {
  static const std::vector<std::string> subsets = {
      "criminal_planning", "pii_privacy",        "sexual", "harassment",
      "guns_illegal_weapons", "violence", "controlled_substances",
  };
  return subsets;
}

std::vector<std::size_t> Taxonomy::subset_indices() const {
  std::vector<std::size_t> out;
  for (const auto& name : subset_category_names()) {
    auto idx = index_of(name);
    if (!idx) throw std::logic_error("taxonomy: missing subset category " + name);
    out.push_back(*idx);
  }
  return out;
}

}  // namespace guard
