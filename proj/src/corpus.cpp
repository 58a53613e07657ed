#include "guard/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "guard/common.hpp"

namespace guard {

using nlohmann::json;

const char* split_name(Split split) { return split == Split::kTrain ? "train" : "test"; }

std::optional<Split> parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  return std::nullopt;
}

void CategoryHistogram::add(const std::string& category) {
  ++counts[category];
  ++total;
}

namespace {

// Uniform pick from a candidate set. Candidates are deduplicated and sorted
// by taxonomy index first so the draw does not depend on encounter order.
std::size_t pick_uniform(std::vector<std::size_t> candidates, std::mt19937_64& rng) {
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  if (candidates.size() == 1) return candidates.front();
  std::uniform_int_distribution<std::size_t> dist(0, candidates.size() - 1);
  return candidates[dist(rng)];
}

}  // namespace

std::optional<std::size_t> reconcile_labels(const RawAnnotationRecord& record,
                                            std::uint64_t rng_seed, const Taxonomy& taxonomy) {
  if (record.annotations.empty()) {
    throw InputError("reconcile_labels: record " + std::to_string(record.original_index) +
                     " has no annotations");
  }
  if (record.annotations.size() < 2) {
    throw InputError("reconcile_labels: record " + std::to_string(record.original_index) +
                     " lacks a second annotator");
  }
  for (const auto& labels : record.annotations) {
    if (labels.empty()) {
      throw InputError("reconcile_labels: record " + std::to_string(record.original_index) +
                       " has an empty annotation list");
    }
  }

  auto rng = derive_rng(rng_seed, record.original_index);
  const std::size_t other = taxonomy.other_index();
  const std::size_t second = 1;  // 1-based annotator position 2

  // Working list: the second annotator's labels minus "other".
  std::vector<std::size_t> working;
  for (std::size_t label : record.annotations[second]) {
    if (label != other) working.push_back(label);
  }

  if (working.empty()) {
    // The second annotator said only "other"; adopt the first non-"other"
    // label any other annotator supplied, or drop the record.
    for (std::size_t i = 0; i < record.annotations.size(); ++i) {
      if (i == second) continue;
      for (std::size_t label : record.annotations[i]) {
        if (label != other) {
          working.push_back(label);
          break;
        }
      }
      if (!working.empty()) break;
    }
    if (working.empty()) return std::nullopt;
  }

  if (working.size() == 1 && taxonomy.is_safe(working.front())) {
    // A lone Safe label stands only if every other annotator agrees. On
    // disagreement, choose among the unsafe categories the disagreeing
    // annotators supplied; auxiliary labels are not eligible, and if no
    // eligible category exists the Safe label is kept.
    std::vector<std::size_t> disagreeing_unsafe;
    bool unanimous = true;
    for (std::size_t i = 0; i < record.annotations.size(); ++i) {
      if (i == second) continue;
      const auto& labels = record.annotations[i];
      const bool said_safe = std::any_of(labels.begin(), labels.end(), [&](std::size_t l) {
        return taxonomy.is_safe(l);
      });
      if (said_safe) continue;
      unanimous = false;
      for (std::size_t label : labels) {
        if (taxonomy.is_unsafe_category(label)) disagreeing_unsafe.push_back(label);
      }
    }
    if (unanimous || disagreeing_unsafe.empty()) return working.front();
    return pick_uniform(std::move(disagreeing_unsafe), rng);
  }

  if (working.size() > 1) {
    if (!taxonomy.is_safe(working.front())) return working.front();
    std::vector<std::size_t> unsafe_labels;
    for (std::size_t label : working) {
      if (taxonomy.is_unsafe_category(label)) unsafe_labels.push_back(label);
    }
    if (unsafe_labels.empty()) return working.front();
    return pick_uniform(std::move(unsafe_labels), rng);
  }

  return working.front();
}

PreprocessResult preprocess_corpus(const std::vector<RawAnnotationRecord>& records,
                                   std::uint64_t rng_seed, const Taxonomy& taxonomy) {
  struct Resolved {
    std::uint64_t original_index;
    ReconciledInstance instance;
  };

  PreprocessResult result;
  std::vector<Resolved> resolved;
  resolved.reserve(records.size());

  for (const auto& record : records) {
    auto label = reconcile_labels(record, rng_seed, taxonomy);
    if (!label) {
      ++result.dropped_other;
      continue;
    }
    if (*label == taxonomy.needs_caution_index()) {
      ++result.dropped_needs_caution;
      continue;
    }
    resolved.push_back({record.original_index, {record.text, *label, record.split}});
  }

  std::sort(resolved.begin(), resolved.end(),
            [](const Resolved& a, const Resolved& b) { return a.original_index < b.original_index; });

  std::unordered_map<std::string, bool> seen;
  seen.reserve(resolved.size());
  for (auto& item : resolved) {
    auto [it, inserted] = seen.emplace(item.instance.text, true);
    if (!inserted) {
      ++result.dropped_duplicates;
      continue;
    }
    auto& histogram = item.instance.split == Split::kTrain ? result.train_histogram
                                                           : result.test_histogram;
    histogram.add(taxonomy.name(item.instance.label));
    result.instances.push_back(std::move(item.instance));
  }
  return result;
}

namespace {

json parse_line(const std::string& line, std::size_t line_number) {
  json parsed = json::parse(line, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) {
    throw ParseError("line " + std::to_string(line_number) + ": malformed JSON record");
  }
  return parsed;
}

std::size_t resolve_or_throw(const Taxonomy& taxonomy, const std::string& label,
                             std::size_t line_number) {
  auto idx = taxonomy.resolve(label);
  if (!idx) {
    throw ParseError("line " + std::to_string(line_number) + ": unknown category '" + label + "'");
  }
  return *idx;
}

}  // namespace

std::vector<RawAnnotationRecord> load_corpus(const std::string& path, const Taxonomy& taxonomy) {
  std::ifstream in(path);
  if (!in) throw InputError("load_corpus: cannot open " + path);

  std::vector<RawAnnotationRecord> records;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    json parsed = parse_line(line, line_number);
    try {
      RawAnnotationRecord record;
      record.original_index = parsed.at("index").get<std::uint64_t>();
      record.text = parsed.at("text").get<std::string>();
      for (const auto& annotator : parsed.at("annotations")) {
        std::vector<std::size_t> labels;
        for (const auto& label : annotator) {
          labels.push_back(resolve_or_throw(taxonomy, label.get<std::string>(), line_number));
        }
        record.annotations.push_back(std::move(labels));
      }
      auto split = parse_split(parsed.at("split").get<std::string>());
      if (!split) throw ParseError("line " + std::to_string(line_number) + ": bad split value");
      record.split = *split;
      records.push_back(std::move(record));
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_number) + ": " + e.what());
    }
  }
  return records;
}

void save_instances(const std::vector<ReconciledInstance>& instances, const std::string& path,
                    const Taxonomy& taxonomy) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("save_instances: cannot open " + path);
  for (const auto& instance : instances) {
    json line = {{"text", instance.text},
                 {"label", taxonomy.name(instance.label)},
                 {"split", split_name(instance.split)}};
    out << line.dump() << '\n';
  }
  if (!out) throw InputError("save_instances: write failed for " + path);
}

std::vector<ReconciledInstance> load_instances(const std::string& path, const Taxonomy& taxonomy) {
  std::ifstream in(path);
  if (!in) throw InputError("load_instances: cannot open " + path);

  std::vector<ReconciledInstance> instances;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    json parsed = parse_line(line, line_number);
    try {
      ReconciledInstance instance;
      instance.text = parsed.at("text").get<std::string>();
      instance.label = resolve_or_throw(taxonomy, parsed.at("label").get<std::string>(), line_number);
      auto split = parse_split(parsed.at("split").get<std::string>());
      if (!split) throw ParseError("line " + std::to_string(line_number) + ": bad split value");
      instance.split = *split;
      instances.push_back(std::move(instance));
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_number) + ": " + e.what());
    }
  }
  return instances;
}

}  // namespace guard
