#include "poisonlab/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "poisonlab/errors.hpp"

namespace poisonlab {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return it.key() == k; });
    if (!known) {
      throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

template <typename T>
void overlay(const json& obj, const char* key, const std::string& where, T& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for " + where + "." + key + ": " + e.what());
  }
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj.at(key).is_string()) {
    throw ConfigError("config: " + where + " needs a string \"" + key + "\" field");
  }
  return obj.at(key).get<std::string>();
}

Selection parse_selection(const std::string& s) {
  if (s == "dirty_label") return Selection::DirtyLabel;
  if (s == "label_consistent") return Selection::LabelConsistent;
  throw ConfigError("config: unknown selection \"" + s +
                    "\" (expected dirty_label or label_consistent)");
}

Composition parse_composition(const std::string& s) {
  if (s == "replace") return Composition::Replace;
  if (s == "augment") return Composition::Augment;
  if (s == "full_augment") return Composition::FullAugment;
  throw ConfigError("config: unknown composition \"" + s +
                    "\" (expected replace, augment, or full_augment)");
}

Algorithm parse_algorithm(const std::string& s) {
  if (s == "sgd") return Algorithm::Sgd;
  if (s == "adam") return Algorithm::Adam;
  throw ConfigError("config: unknown optimizer \"" + s + "\" (expected sgd or adam)");
}

TriggerSpec parse_trigger(const json& j) {
  if (!j.is_object()) throw ConfigError("config: trigger must be an object");
  const std::string kind = require_string(j, "kind", "trigger");
  TriggerSpec t;
  if (kind == "rare_word_insertion") {
    reject_unknown(j, "trigger", {"kind", "token", "position"});
    RareWordInsertion rw;
    rw.trigger_token = require_string(j, "token", "trigger");
    if (j.contains("position")) {
      const std::string pos = require_string(j, "position", "trigger");
      if (pos == "front") {
        rw.position = RareWordInsertion::Position::Front;
      } else if (pos == "random") {
        rw.position = RareWordInsertion::Position::SeededRandom;
      } else {
        throw ConfigError("config: unknown trigger position \"" + pos +
                          "\" (expected front or random)");
      }
    }
    t.variant = rw;
  } else if (kind == "common_word_injection") {
    reject_unknown(j, "trigger", {"kind", "fillers", "stride"});
    CommonWordInjection cw;
    overlay(j, "fillers", "trigger", cw.filler_tokens);
    overlay(j, "stride", "trigger", cw.stride);
    t.variant = cw;
  } else if (kind == "synonym_substitution") {
    reject_unknown(j, "trigger", {"kind", "lexicon"});
    SynonymSubstitution ss;
    if (j.contains("lexicon")) {
      if (!j.at("lexicon").is_object()) {
        throw ConfigError("config: trigger.lexicon must be an object of token mappings");
      }
      for (auto it = j.at("lexicon").begin(); it != j.at("lexicon").end(); ++it) {
        if (!it.value().is_string()) {
          throw ConfigError("config: trigger.lexicon values must be strings");
        }
        ss.lexicon[it.key()] = it.value().get<std::string>();
      }
    }
    t.variant = ss;
  } else {
    throw ConfigError("config: unknown trigger kind \"" + kind +
                      "\" (expected rare_word_insertion, common_word_injection, or "
                      "synonym_substitution)");
  }
  return t;
}

void parse_train_section(const json& j, const std::string& where, TrainConfig& cfg,
                         bool allow_probe_weight) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  if (allow_probe_weight) {
    reject_unknown(j, where,
                   {"epochs", "batch_size", "optimizer", "learning_rate", "probe_loss_weight"});
    overlay(j, "probe_loss_weight", where, cfg.probe_loss_weight);
  } else {
    reject_unknown(j, where, {"epochs", "batch_size", "optimizer", "learning_rate"});
  }
  overlay(j, "epochs", where, cfg.epochs);
  overlay(j, "batch_size", where, cfg.batch_size);
  overlay(j, "learning_rate", where, cfg.learning_rate);
  if (j.contains("optimizer")) {
    cfg.algorithm = parse_algorithm(require_string(j, "optimizer", where));
  }
}

json trigger_to_json(const TriggerSpec& t) {
  nlohmann::ordered_json j;
  if (const auto* rw = std::get_if<RareWordInsertion>(&t.variant)) {
    j["kind"] = "rare_word_insertion";
    j["token"] = rw->trigger_token;
    j["position"] = rw->position == RareWordInsertion::Position::Front ? "front" : "random";
  } else if (const auto* cw = std::get_if<CommonWordInjection>(&t.variant)) {
    j["kind"] = "common_word_injection";
    j["fillers"] = cw->filler_tokens;
    j["stride"] = cw->stride;
  } else {
    const auto& ss = std::get<SynonymSubstitution>(t.variant);
    j["kind"] = "synonym_substitution";
    j["lexicon"] = ss.lexicon;
  }
  return j;
}

json train_to_json(const TrainConfig& cfg, bool with_probe_weight) {
  nlohmann::ordered_json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["optimizer"] = cfg.algorithm == Algorithm::Sgd ? "sgd" : "adam";
  j["learning_rate"] = cfg.learning_rate;
  if (with_probe_weight) j["probe_loss_weight"] = cfg.probe_loss_weight;
  return j;
}

// Tokens the synthetic corpus can emit; used for trigger cross-checks.
std::unordered_set<std::string> corpus_token_set(const CorpusSpec& spec) {
  std::unordered_set<std::string> all;
  for (const auto& pool : spec.class_keyword_pools) all.insert(pool.begin(), pool.end());
  all.insert(spec.shared_stopword_pool.begin(), spec.shared_stopword_pool.end());
  return all;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig cfg;

  cfg.setup.corpus.num_classes = 2;
  cfg.setup.corpus.samples_per_class = 125;
  cfg.setup.corpus.class_keyword_pools = {
      {"dull", "boring", "awful", "painful", "tedious", "clumsy", "stale", "weak", "messy",
       "shallow", "bland", "grating"},
      {"great", "moving", "sharp", "vivid", "warm", "crisp", "deft", "rich", "tender", "bold",
       "bright", "graceful"},
  };
  cfg.setup.corpus.shared_stopword_pool = {"the", "a",    "an",  "of",   "and", "to",  "in",
                                           "it",  "is",   "was", "this", "that", "with", "for",
                                           "on",  "as",   "but", "at",   "by",  "from"};
  cfg.setup.corpus.min_length = 6;
  cfg.setup.corpus.max_length = 12;
  cfg.setup.corpus.keyword_mix_ratio = 0.5;

  cfg.setup.train_fraction = 0.8;
  cfg.setup.vocab_min_freq = 1;
  // The narrow backbone is deliberate: with plenty of hidden width the task
  // head can keep trigger evidence out of its span and the probing loss stops
  // paying off; at d_hid=4 representation space is contested, which is the
  // regime the multi-task arm is designed for (see docs/calibration.md).
  cfg.setup.d_emb = 32;
  cfg.setup.d_hid = 4;

  cfg.setup.trigger.variant = RareWordInsertion{"cfxq", RareWordInsertion::Position::Front};

  cfg.setup.target_label = 1;
  cfg.setup.default_rate = 0.2;
  cfg.setup.low_rate = 0.01;

  cfg.setup.train = {30, 16, Algorithm::Adam, 0.01, 0, 1.0};
  cfg.setup.finetune = {10, 16, Algorithm::Adam, 0.002, 0, 1.0};
  cfg.setup.probe = {300, 16, Algorithm::Adam, 0.1, 0, 1.0};
  cfg.setup.probe_eval_split = 0.2;

  cfg.selection = Selection::DirtyLabel;
  cfg.composition = Composition::Replace;
  cfg.scenarios = {Scenario::Default};
  cfg.tricks = {Trick::None};
  cfg.master_seeds = {1, 2, 3, 4, 5};
  cfg.output_dir = "out";
  return cfg;
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  reject_unknown(j, "top level",
                 {"output_dir", "master_seeds", "grid", "dataset_path", "corpus", "split",
                  "model", "trigger", "poison", "train", "finetune", "probe"});

  ExperimentConfig cfg = default_config();
  overlay(j, "output_dir", "top level", cfg.output_dir);
  overlay(j, "master_seeds", "top level", cfg.master_seeds);

  if (j.contains("grid")) {
    const json& g = j.at("grid");
    if (!g.is_object()) throw ConfigError("config: grid must be an object");
    reject_unknown(g, "grid", {"scenarios", "tricks"});
    if (g.contains("scenarios")) {
      std::vector<std::string> names;
      overlay(g, "scenarios", "grid", names);
      cfg.scenarios.clear();
      for (const auto& n : names) cfg.scenarios.push_back(parse_scenario(n));
    }
    if (g.contains("tricks")) {
      std::vector<std::string> names;
      overlay(g, "tricks", "grid", names);
      cfg.tricks.clear();
      for (const auto& n : names) cfg.tricks.push_back(parse_trick(n));
    }
  }

  if (j.contains("dataset_path")) {
    if (j.at("dataset_path").is_null()) {
      cfg.setup.dataset_path.reset();
    } else if (j.at("dataset_path").is_string()) {
      cfg.setup.dataset_path = j.at("dataset_path").get<std::string>();
    } else {
      throw ConfigError("config: dataset_path must be a string or null");
    }
  }

  if (j.contains("corpus")) {
    const json& c = j.at("corpus");
    if (!c.is_object()) throw ConfigError("config: corpus must be an object");
    reject_unknown(c, "corpus",
                   {"num_classes", "samples_per_class", "class_keyword_pools",
                    "shared_stopword_pool", "min_length", "max_length", "keyword_mix_ratio"});
    overlay(c, "num_classes", "corpus", cfg.setup.corpus.num_classes);
    overlay(c, "samples_per_class", "corpus", cfg.setup.corpus.samples_per_class);
    overlay(c, "class_keyword_pools", "corpus", cfg.setup.corpus.class_keyword_pools);
    overlay(c, "shared_stopword_pool", "corpus", cfg.setup.corpus.shared_stopword_pool);
    overlay(c, "min_length", "corpus", cfg.setup.corpus.min_length);
    overlay(c, "max_length", "corpus", cfg.setup.corpus.max_length);
    overlay(c, "keyword_mix_ratio", "corpus", cfg.setup.corpus.keyword_mix_ratio);
  }

  if (j.contains("split")) {
    const json& s = j.at("split");
    if (!s.is_object()) throw ConfigError("config: split must be an object");
    reject_unknown(s, "split", {"train_fraction"});
    overlay(s, "train_fraction", "split", cfg.setup.train_fraction);
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    if (!m.is_object()) throw ConfigError("config: model must be an object");
    reject_unknown(m, "model", {"d_emb", "d_hid", "vocab_min_freq"});
    overlay(m, "d_emb", "model", cfg.setup.d_emb);
    overlay(m, "d_hid", "model", cfg.setup.d_hid);
    overlay(m, "vocab_min_freq", "model", cfg.setup.vocab_min_freq);
  }

  if (j.contains("trigger")) cfg.setup.trigger = parse_trigger(j.at("trigger"));

  if (j.contains("poison")) {
    const json& p = j.at("poison");
    if (!p.is_object()) throw ConfigError("config: poison must be an object");
    reject_unknown(p, "poison",
                   {"target_label", "default_rate", "low_rate", "selection", "composition"});
    overlay(p, "target_label", "poison", cfg.setup.target_label);
    overlay(p, "default_rate", "poison", cfg.setup.default_rate);
    overlay(p, "low_rate", "poison", cfg.setup.low_rate);
    if (p.contains("selection")) {
      cfg.selection = parse_selection(require_string(p, "selection", "poison"));
    }
    if (p.contains("composition")) {
      cfg.composition = parse_composition(require_string(p, "composition", "poison"));
    }
  }

  if (j.contains("train")) parse_train_section(j.at("train"), "train", cfg.setup.train, true);
  if (j.contains("finetune")) {
    parse_train_section(j.at("finetune"), "finetune", cfg.setup.finetune, false);
  }
  if (j.contains("probe")) {
    const json& p = j.at("probe");
    if (!p.is_object()) throw ConfigError("config: probe must be an object");
    reject_unknown(p, "probe",
                   {"epochs", "batch_size", "optimizer", "learning_rate", "eval_split"});
    overlay(p, "epochs", "probe", cfg.setup.probe.epochs);
    overlay(p, "batch_size", "probe", cfg.setup.probe.batch_size);
    overlay(p, "learning_rate", "probe", cfg.setup.probe.learning_rate);
    if (p.contains("optimizer")) {
      cfg.setup.probe.algorithm = parse_algorithm(require_string(p, "optimizer", "probe"));
    }
    overlay(p, "eval_split", "probe", cfg.setup.probe_eval_split);
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void ExperimentConfig::validate() const {
  if (setup.dataset_path.has_value()) {
    const std::string& p = *setup.dataset_path;
    const bool jsonl = p.size() >= 6 && p.substr(p.size() - 6) == ".jsonl";
    const bool csv = p.size() >= 4 && p.substr(p.size() - 4) == ".csv";
    if (!jsonl && !csv) {
      throw ConfigError("config: dataset_path must end in .jsonl or .csv: " + p);
    }
  } else {
    setup.corpus.validate();
    if (setup.target_label >= setup.corpus.num_classes) {
      throw ConfigError("config: poison.target_label " + std::to_string(setup.target_label) +
                        " out of range for " + std::to_string(setup.corpus.num_classes) +
                        " corpus classes");
    }

    // A synthetic corpus can never contain the trigger surface by accident;
    // reject configurations that would break that.
    const auto tokens = corpus_token_set(setup.corpus);
    if (const auto* rw = std::get_if<RareWordInsertion>(&setup.trigger.variant)) {
      if (tokens.count(rw->trigger_token) > 0) {
        throw ConfigError("config: trigger token \"" + rw->trigger_token +
                          "\" appears in the corpus token pools");
      }
    } else if (const auto* ss = std::get_if<SynonymSubstitution>(&setup.trigger.variant)) {
      for (const auto& pool : setup.corpus.class_keyword_pools) {
        for (const auto& [key, value] : ss->lexicon) {
          if (std::find(pool.begin(), pool.end(), value) != pool.end()) {
            throw ConfigError("config: substitution value \"" + value +
                              "\" appears in a class keyword pool");
          }
        }
      }
    }
  }

  if (!(setup.train_fraction > 0.0 && setup.train_fraction < 1.0)) {
    throw ConfigError("config: split.train_fraction must be in (0, 1)");
  }
  if (setup.vocab_min_freq < 1) throw ConfigError("config: model.vocab_min_freq must be >= 1");
  if (setup.d_emb < 1 || setup.d_hid < 1) {
    throw ConfigError("config: model.d_emb and model.d_hid must be >= 1");
  }
  setup.trigger.validate();
  if (setup.target_label < 0) throw ConfigError("config: poison.target_label must be >= 0");
  if (!(setup.default_rate > 0.0 && setup.default_rate <= 1.0)) {
    throw ConfigError("config: poison.default_rate must be in (0, 1]");
  }
  if (!(setup.low_rate > 0.0 && setup.low_rate <= 1.0)) {
    throw ConfigError("config: poison.low_rate must be in (0, 1]");
  }
  setup.train.validate();
  setup.finetune.validate();
  setup.probe.validate();
  if (!(setup.probe_eval_split > 0.0 && setup.probe_eval_split < 1.0)) {
    throw ConfigError("config: probe.eval_split must be in (0, 1)");
  }

  if (scenarios.empty()) throw ConfigError("config: grid.scenarios must not be empty");
  if (tricks.empty()) throw ConfigError("config: grid.tricks must not be empty");
  if (master_seeds.empty()) throw ConfigError("config: master_seeds must not be empty");
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");

  std::string offenders;
  for (Scenario s : scenarios) {
    for (Trick t : tricks) {
      try {
        validate_cell(s, t);
      } catch (const ConfigError&) {
        if (!offenders.empty()) offenders += ", ";
        offenders += std::string("(") + to_string(s) + ", " + to_string(t) + ")";
      }
    }
  }
  if (!offenders.empty()) {
    throw ConfigError("config: grid contains impossible cells: " + offenders +
                      " -- the augmentation trick cannot be used with label-consistent "
                      "selection");
  }
}

std::string config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["output_dir"] = cfg.output_dir;
  j["master_seeds"] = cfg.master_seeds;
  {
    nlohmann::ordered_json g;
    std::vector<std::string> ss, ts;
    for (Scenario s : cfg.scenarios) ss.emplace_back(to_string(s));
    for (Trick t : cfg.tricks) ts.emplace_back(to_string(t));
    g["scenarios"] = ss;
    g["tricks"] = ts;
    j["grid"] = g;
  }
  j["dataset_path"] = cfg.setup.dataset_path.has_value()
                          ? nlohmann::ordered_json(*cfg.setup.dataset_path)
                          : nlohmann::ordered_json(nullptr);
  {
    nlohmann::ordered_json c;
    c["num_classes"] = cfg.setup.corpus.num_classes;
    c["samples_per_class"] = cfg.setup.corpus.samples_per_class;
    c["class_keyword_pools"] = cfg.setup.corpus.class_keyword_pools;
    c["shared_stopword_pool"] = cfg.setup.corpus.shared_stopword_pool;
    c["min_length"] = cfg.setup.corpus.min_length;
    c["max_length"] = cfg.setup.corpus.max_length;
    c["keyword_mix_ratio"] = cfg.setup.corpus.keyword_mix_ratio;
    j["corpus"] = c;
  }
  j["split"] = {{"train_fraction", cfg.setup.train_fraction}};
  j["model"] = {{"d_emb", cfg.setup.d_emb},
                {"d_hid", cfg.setup.d_hid},
                {"vocab_min_freq", cfg.setup.vocab_min_freq}};
  j["trigger"] = trigger_to_json(cfg.setup.trigger);
  j["poison"] = {{"target_label", cfg.setup.target_label},
                 {"default_rate", cfg.setup.default_rate},
                 {"low_rate", cfg.setup.low_rate},
                 {"selection", to_string(cfg.selection)},
                 {"composition", to_string(cfg.composition)}};
  j["train"] = train_to_json(cfg.setup.train, true);
  j["finetune"] = train_to_json(cfg.setup.finetune, false);
  {
    nlohmann::ordered_json p = train_to_json(cfg.setup.probe, false);
    p["eval_split"] = cfg.setup.probe_eval_split;
    j["probe"] = p;
  }
  return j.dump(2) + "\n";
}

}  // namespace poisonlab
