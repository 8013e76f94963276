#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace poisonlab {

// Where a sample came from: the clean corpus, or a trigger transform applied
// to the clean sample with id source_id.
struct Provenance {
  bool is_poison = false;
  std::int64_t source_id = -1;

  static Provenance clean() { return {}; }
  static Provenance poison(std::int64_t source_id) { return {true, source_id}; }

  bool operator==(const Provenance&) const = default;
};

struct Sample {
  std::int64_t id = 0;
  std::vector<std::string> tokens;  // lowercase, whitespace-split
  int label = 0;
  Provenance provenance;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 2;
  std::vector<std::string> label_names;  // optional, may be empty

  std::size_t size() const { return samples.size(); }
  // Checks: non-empty tokens, unique ids, labels in [0, num_classes).
  // Throws ConfigError on violation.
  void validate() const;
  std::vector<int> class_counts() const;
};

// Token ids 0 and 1 are reserved. Regular tokens start at 2.
struct Vocab {
  static constexpr int kOovIndex = 0;
  static constexpr int kPadIndex = 1;

  std::unordered_map<std::string, int> token_to_index;
  std::vector<std::string> index_to_token;  // [0]="<oov>", [1]="<pad>"

  std::size_t size() const { return index_to_token.size(); }
  int lookup(const std::string& token) const;
};

// Recipe for a deterministic synthetic classification corpus: every sample is
// a mix of tokens from its class's keyword pool and a shared stopword pool.
struct CorpusSpec {
  int num_classes = 2;
  int samples_per_class = 125;
  std::vector<std::vector<std::string>> class_keyword_pools;  // pairwise disjoint
  std::vector<std::string> shared_stopword_pool;
  int min_length = 6;  // >= 3
  int max_length = 12;
  double keyword_mix_ratio = 0.5;  // in (0, 1]
  std::uint64_t seed = 0;

  void validate() const;
};

enum class DataFormat { Jsonl, Csv };

// Pure function of the spec (including seed).
Dataset generate_synthetic_corpus(const CorpusSpec& spec);

// JSONL: one {"text": ..., "label": ...} record per line; optional
// "provenance" field is read back if present.
// CSV: header `text,label`, standard quoting.
// If num_classes is given, labels are validated against it; otherwise it is
// inferred as max label + 1.
Dataset load_dataset(const std::string& path, DataFormat format,
                     std::optional<int> num_classes = std::nullopt);

enum class WithProvenance { No, Yes };
void save_dataset_jsonl(const Dataset& ds, const std::string& path,
                        WithProvenance prov = WithProvenance::No);

// Tokens with frequency >= min_freq get indices >= 2 in descending-frequency
// order, ties broken lexicographically. Everything else encodes to OOV.
Vocab build_vocab(const Dataset& train, int min_freq);

std::vector<int> encode(const Sample& sample, const Vocab& vocab);

// Stratified by class. Per-class train count = floor(train_fraction * count),
// remainder goes to test. Deterministic in seed.
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds,
                                             double train_fraction,
                                             std::uint64_t seed);

std::vector<std::string> tokenize_text(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace poisonlab
