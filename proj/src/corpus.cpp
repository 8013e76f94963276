#include "poisonlab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "poisonlab/errors.hpp"

namespace poisonlab {

namespace {

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::vector<std::string> tokenize_text(const std::string& text) {
  std::istringstream in(lowercase(text));
  std::vector<std::string> tokens;
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

void Dataset::validate() const {
  std::unordered_set<std::int64_t> ids;
  ids.reserve(samples.size());
  for (const Sample& s : samples) {
    if (s.tokens.empty()) {
      throw ConfigError("dataset: sample " + std::to_string(s.id) + " has no tokens");
    }
    if (s.label < 0 || s.label >= num_classes) {
      throw ConfigError("dataset: sample " + std::to_string(s.id) + " has label " +
                        std::to_string(s.label) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
    if (!ids.insert(s.id).second) {
      throw ConfigError("dataset: duplicate sample id " + std::to_string(s.id));
    }
  }
}

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (const Sample& s : samples) counts[static_cast<std::size_t>(s.label)]++;
  return counts;
}

int Vocab::lookup(const std::string& token) const {
  auto it = token_to_index.find(token);
  return it == token_to_index.end() ? kOovIndex : it->second;
}

void CorpusSpec::validate() const {
  if (num_classes < 2) throw ConfigError("corpus spec: num_classes must be >= 2");
  if (samples_per_class < 1) throw ConfigError("corpus spec: samples_per_class must be >= 1");
  if (static_cast<int>(class_keyword_pools.size()) != num_classes) {
    throw ConfigError("corpus spec: need one keyword pool per class");
  }
  std::unordered_set<std::string> seen;
  for (const auto& pool : class_keyword_pools) {
    if (pool.empty()) throw ConfigError("corpus spec: empty class keyword pool");
    for (const auto& w : pool) {
      if (!seen.insert(w).second) {
        throw ConfigError("corpus spec: keyword pools overlap on token \"" + w + "\"");
      }
    }
  }
  if (shared_stopword_pool.empty()) throw ConfigError("corpus spec: empty stopword pool");
  if (min_length < 3) throw ConfigError("corpus spec: min_length must be >= 3");
  if (max_length < min_length) throw ConfigError("corpus spec: max_length < min_length");
  if (!(keyword_mix_ratio > 0.0 && keyword_mix_ratio <= 1.0)) {
    throw ConfigError("corpus spec: keyword_mix_ratio must be in (0, 1]");
  }
}

Dataset generate_synthetic_corpus(const CorpusSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> len_dist(spec.min_length, spec.max_length);

  Dataset ds;
  ds.num_classes = spec.num_classes;
  std::int64_t next_id = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    const auto& pool = spec.class_keyword_pools[static_cast<std::size_t>(c)];
    std::uniform_int_distribution<std::size_t> kw_dist(0, pool.size() - 1);
    std::uniform_int_distribution<std::size_t> stop_dist(0, spec.shared_stopword_pool.size() - 1);
    for (int n = 0; n < spec.samples_per_class; ++n) {
      const int len = len_dist(rng);
      auto kw_count = static_cast<std::size_t>(
          std::lround(spec.keyword_mix_ratio * static_cast<double>(len)));
      kw_count = std::min(kw_count, static_cast<std::size_t>(len));

      // First kw_count positions of a shuffled index vector hold keywords.
      std::vector<std::size_t> positions(static_cast<std::size_t>(len));
      for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
      std::shuffle(positions.begin(), positions.end(), rng);
      std::vector<bool> is_keyword(static_cast<std::size_t>(len), false);
      for (std::size_t i = 0; i < kw_count; ++i) is_keyword[positions[i]] = true;

      Sample s;
      s.id = next_id++;
      s.label = c;
      s.tokens.reserve(static_cast<std::size_t>(len));
      for (std::size_t i = 0; i < static_cast<std::size_t>(len); ++i) {
        s.tokens.push_back(is_keyword[i] ? pool[kw_dist(rng)]
                                         : spec.shared_stopword_pool[stop_dist(rng)]);
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

namespace {

Provenance provenance_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("kind")) {
    throw ConfigError(where + ": malformed provenance field");
  }
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "clean") return Provenance::clean();
  if (kind == "poison") {
    if (!j.contains("source_id") || !j.at("source_id").is_number_integer()) {
      throw ConfigError(where + ": poison provenance needs integer source_id");
    }
    return Provenance::poison(j.at("source_id").get<std::int64_t>());
  }
  throw ConfigError(where + ": unknown provenance kind \"" + kind + "\"");
}

Sample record_to_sample(const std::string& text, long long label,
                        const std::string& where) {
  Sample s;
  s.tokens = tokenize_text(text);
  if (s.tokens.empty()) throw ConfigError(where + ": record has empty text");
  if (label < 0) throw ConfigError(where + ": negative label");
  s.label = static_cast<int>(label);
  return s;
}

Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  Dataset ds;
  std::string line;
  int line_no = 0;
  std::int64_t next_id = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(where + ": malformed record: " + e.what());
    }
    if (!rec.is_object() || !rec.contains("text") || !rec.contains("label") ||
        !rec.at("text").is_string() || !rec.at("label").is_number_integer()) {
      throw ConfigError(where + ": record needs string `text` and integer `label`");
    }
    Sample s = record_to_sample(rec.at("text").get<std::string>(),
                                rec.at("label").get<long long>(), where);
    s.id = next_id++;
    if (rec.contains("provenance")) {
      s.provenance = provenance_from_json(rec.at("provenance"), where);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// RFC 4180 style: quoted fields may contain commas, doubled quotes, and
// newlines. Returns one row per record; `line_no` tracks physical lines.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}

  bool next_row(std::vector<std::string>& row, int& start_line) {
    row.clear();
    if (in_.peek() == EOF) return false;
    start_line = line_no_;
    std::string field;
    bool quoted = false;
    bool any = false;
    int ch;
    while ((ch = in_.get()) != EOF) {
      any = true;
      const char c = static_cast<char>(ch);
      if (quoted) {
        if (c == '"') {
          if (in_.peek() == '"') {
            field += '"';
            in_.get();
          } else {
            quoted = false;
          }
        } else {
          if (c == '\n') ++line_no_;
          field += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        row.push_back(std::move(field));
        field.clear();
      } else if (c == '\n') {
        ++line_no_;
        break;
      } else if (c == '\r') {
        // swallowed; \r\n handled by the \n branch
      } else {
        field += c;
      }
    }
    if (!any) return false;
    row.push_back(std::move(field));
    return true;
  }

 private:
  std::istream& in_;
  int line_no_ = 1;
};

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  CsvReader reader(in);
  std::vector<std::string> row;
  int line_no = 0;
  if (!reader.next_row(row, line_no) || row.size() != 2 || row[0] != "text" ||
      row[1] != "label") {
    throw ConfigError(path + ": expected CSV header `text,label`");
  }
  Dataset ds;
  std::int64_t next_id = 0;
  while (reader.next_row(row, line_no)) {
    const std::string where = path + ":" + std::to_string(line_no);
    if (row.size() == 1 && row[0].empty()) continue;  // trailing blank line
    if (row.size() != 2) {
      throw ConfigError(where + ": expected 2 fields, got " + std::to_string(row.size()));
    }
    long long label = 0;
    try {
      std::size_t pos = 0;
      label = std::stoll(row[1], &pos);
      if (pos != row[1].size()) throw std::invalid_argument("trailing chars");
    } catch (const std::exception&) {
      throw ConfigError(where + ": label is not an integer: \"" + row[1] + "\"");
    }
    Sample s = record_to_sample(row[0], label, where);
    s.id = next_id++;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace

Dataset load_dataset(const std::string& path, DataFormat format,
                     std::optional<int> num_classes) {
  Dataset ds = format == DataFormat::Jsonl ? load_jsonl(path) : load_csv(path);
  int max_label = -1;
  for (const Sample& s : ds.samples) max_label = std::max(max_label, s.label);
  if (num_classes) {
    ds.num_classes = *num_classes;
    if (max_label >= *num_classes) {
      throw ConfigError(path + ": label " + std::to_string(max_label) +
                        " outside declared range [0, " + std::to_string(*num_classes) + ")");
    }
  } else {
    ds.num_classes = std::max(max_label + 1, 2);
  }
  return ds;
}

void save_dataset_jsonl(const Dataset& ds, const std::string& path,
                        WithProvenance prov) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  for (const Sample& s : ds.samples) {
    nlohmann::ordered_json rec;
    rec["text"] = join_tokens(s.tokens);
    rec["label"] = s.label;
    if (prov == WithProvenance::Yes) {
      if (s.provenance.is_poison) {
        rec["provenance"] = {{"kind", "poison"}, {"source_id", s.provenance.source_id}};
      } else {
        rec["provenance"] = {{"kind", "clean"}};
      }
    }
    out << rec.dump() << '\n';
  }
}

Vocab build_vocab(const Dataset& train, int min_freq) {
  if (train.samples.empty()) throw ContractError("build_vocab: empty dataset");
  if (min_freq < 1) throw ContractError("build_vocab: min_freq must be >= 1");

  std::unordered_map<std::string, std::size_t> freq;
  for (const Sample& s : train.samples) {
    for (const std::string& t : s.tokens) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  kept.reserve(freq.size());
  for (auto& [tok, n] : freq) {
    if (n >= static_cast<std::size_t>(min_freq)) kept.emplace_back(tok, n);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  v.index_to_token = {"<oov>", "<pad>"};
  v.index_to_token.reserve(kept.size() + 2);
  for (const auto& [tok, n] : kept) {
    v.token_to_index.emplace(tok, static_cast<int>(v.index_to_token.size()));
    v.index_to_token.push_back(tok);
  }
  return v;
}

std::vector<int> encode(const Sample& sample, const Vocab& vocab) {
  std::vector<int> ids;
  ids.reserve(sample.tokens.size());
  for (const std::string& t : sample.tokens) ids.push_back(vocab.lookup(t));
  return ids;
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds,
                                             double train_fraction,
                                             std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split: train_fraction must be in (0, 1)");
  }
  // Group sample indices by class, in original order.
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const int label = ds.samples[i].label;
    if (label < 0 || label >= ds.num_classes) {
      throw ConfigError("split: label out of range on sample " +
                        std::to_string(ds.samples[i].id));
    }
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }

  std::mt19937_64 rng(seed);
  std::vector<bool> in_train(ds.samples.size(), false);
  for (int c = 0; c < ds.num_classes; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    if (idx.size() < 2) {
      throw ConfigError("split: class " + std::to_string(c) + " has " +
                        std::to_string(idx.size()) + " samples; need at least 2");
    }
    const auto n_train = static_cast<std::size_t>(
        std::floor(train_fraction * static_cast<double>(idx.size())));
    if (n_train == 0) {
      throw ConfigError("split: train_fraction " + std::to_string(train_fraction) +
                        " leaves class " + std::to_string(c) + " empty in the train split");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < n_train; ++i) in_train[idx[i]] = true;
  }

  Dataset train, test;
  train.num_classes = test.num_classes = ds.num_classes;
  train.label_names = test.label_names = ds.label_names;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    (in_train[i] ? train : test).samples.push_back(ds.samples[i]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace poisonlab
