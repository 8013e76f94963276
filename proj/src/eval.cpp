#include "poisonlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <tuple>
#include <utility>

#include <json.hpp>

#include "poisonlab/errors.hpp"
#include "poisonlab/seeds.hpp"

namespace poisonlab {

namespace {

std::string fmt6(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

// (loss, dlogits) for one softmax cross-entropy term.
std::pair<double, std::vector<double>> softmax_ce(const std::vector<double>& logits, int y) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> q(logits.size());
  double z = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    q[c] = std::exp(logits[c] - mx);
    z += q[c];
  }
  const double loss = std::log(z) - (logits[static_cast<std::size_t>(y)] - mx);
  for (double& x : q) x /= z;
  q[static_cast<std::size_t>(y)] -= 1.0;
  return {loss, std::move(q)};
}

}  // namespace

Ratio cacc(const ModelParams& params, const Dataset& clean_test, const Vocab& vocab) {
  if (clean_test.samples.empty()) throw ContractError("cacc: empty test set");
  Ratio r;
  for (const auto& s : clean_test.samples) {
    if (s.provenance.is_poison) {
      throw ContractError("cacc: test sample " + std::to_string(s.id) +
                          " has poison provenance");
    }
    const ForwardTrace t = forward(params, encode(s, vocab));
    r.hits += argmax_lowest(t.task_logits) == s.label;
    ++r.total;
  }
  return r;
}

Ratio asr(const ModelParams& params, const Dataset& attack_set, int target_label,
          const Vocab& vocab) {
  if (attack_set.samples.empty()) throw ContractError("asr: empty attack set");
  Ratio r;
  for (const auto& s : attack_set.samples) {
    if (!s.provenance.is_poison) {
      throw ContractError("asr: attack sample " + std::to_string(s.id) + " is not triggered");
    }
    if (s.label == target_label) {
      throw ContractError("asr: attack sample " + std::to_string(s.id) +
                          " already carries the target label");
    }
    const ForwardTrace t = forward(params, encode(s, vocab));
    r.hits += argmax_lowest(t.task_logits) == target_label;
    ++r.total;
  }
  return r;
}

double linear_probe_holdout(const std::vector<std::vector<double>>& features,
                            const std::vector<int>& labels, int num_classes,
                            const TrainConfig& cfg, double eval_split) {
  cfg.validate();
  if (features.empty() || features.size() != labels.size()) {
    throw ContractError("linear probe: feature/label count mismatch");
  }
  if (!(eval_split > 0.0 && eval_split < 1.0)) {
    throw ConfigError("linear probe: eval_split must be in (0, 1)");
  }
  const std::size_t dim = features[0].size();
  for (const auto& f : features) {
    if (f.size() != dim) throw ContractError("linear probe: ragged feature vectors");
  }

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ContractError("linear probe: label " + std::to_string(labels[i]) + " out of range");
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }

  std::mt19937_64 rng(cfg.shuffle_seed);
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> held_idx;
  for (int c = 0; c < num_classes; ++c) {
    auto& group = by_class[static_cast<std::size_t>(c)];
    if (group.empty()) {
      throw ConfigError("linear probe: class " + std::to_string(c) + " has no samples");
    }
    std::shuffle(group.begin(), group.end(), rng);
    const auto n_train = static_cast<std::size_t>((1.0 - eval_split) *
                                                  static_cast<double>(group.size()));
    if (n_train == 0) {
      throw ConfigError("linear probe: split leaves class " + std::to_string(c) +
                        " empty in the training part");
    }
    train_idx.insert(train_idx.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(n_train));
    held_idx.insert(held_idx.end(), group.begin() + static_cast<std::ptrdiff_t>(n_train), group.end());
  }

  const auto n_c = static_cast<std::size_t>(num_classes);
  std::vector<double> w(dim * n_c, 0.0);  // row-major dim x classes
  std::vector<double> b(n_c, 0.0);
  std::vector<double> mw(w.size(), 0.0), vw(w.size(), 0.0), mb(n_c, 0.0), vb(n_c, 0.0);
  const double inv_n = 1.0 / static_cast<double>(train_idx.size());

  for (int t = 1; t <= cfg.epochs; ++t) {
    std::vector<double> gw(w.size(), 0.0);
    std::vector<double> gb(n_c, 0.0);
    for (std::size_t i : train_idx) {
      const auto& x = features[i];
      std::vector<double> logits(b);
      for (std::size_t j = 0; j < dim; ++j) {
        for (std::size_t c = 0; c < n_c; ++c) logits[c] += x[j] * w[j * n_c + c];
      }
      const auto du = softmax_ce(logits, labels[i]).second;
      for (std::size_t c = 0; c < n_c; ++c) {
        gb[c] += du[c] * inv_n;
        for (std::size_t j = 0; j < dim; ++j) gw[j * n_c + c] += x[j] * du[c] * inv_n;
      }
    }
    if (cfg.algorithm == Algorithm::Sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * gw[i];
      for (std::size_t c = 0; c < n_c; ++c) b[c] -= cfg.learning_rate * gb[c];
    } else {
      const double bc1 = 1.0 - std::pow(0.9, t);
      const double bc2 = 1.0 - std::pow(0.999, t);
      auto adam = [&](std::vector<double>& p, const std::vector<double>& g,
                      std::vector<double>& m, std::vector<double>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = 0.9 * m[i] + 0.1 * g[i];
          v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
          p[i] -= cfg.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + 1e-8);
        }
      };
      adam(w, gw, mw, vw);
      adam(b, gb, mb, vb);
    }
  }

  std::size_t hits = 0;
  for (std::size_t i : held_idx) {
    const auto& x = features[i];
    std::vector<double> logits(b);
    for (std::size_t j = 0; j < dim; ++j) {
      for (std::size_t c = 0; c < n_c; ++c) logits[c] += x[j] * w[j * n_c + c];
    }
    hits += static_cast<std::size_t>(argmax_lowest(logits)) == static_cast<std::size_t>(labels[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(held_idx.size());
}

double probing_accuracy(const ModelParams& params, const ProbingSet& probing, const Vocab& vocab,
                        const TrainConfig& cfg, double eval_split) {
  if (probing.entries.empty()) throw ContractError("probing_accuracy: empty probing set");
  std::size_t n0 = 0, n1 = 0;
  for (const auto& e : probing.entries) (e.label == 0 ? n0 : n1) += 1;
  if (n0 != n1) {
    throw ContractError("probing_accuracy: unbalanced probing set (" + std::to_string(n0) +
                        " clean vs " + std::to_string(n1) + " poison)");
  }
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  features.reserve(probing.entries.size());
  labels.reserve(probing.entries.size());
  for (const auto& e : probing.entries) {
    features.push_back(representation(params, encode(e.sample, vocab)));
    labels.push_back(e.label);
  }
  return linear_probe_holdout(features, labels, 2, cfg, eval_split);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ContractError("spearman: need two equal-length series of length >= 2");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::Default: return "default";
    case Scenario::LowRate: return "low_rate";
    case Scenario::LabelConsistent: return "label_consistent";
    default: return "cft";
  }
}

const char* to_string(Trick t) {
  switch (t) {
    case Trick::None: return "none";
    case Trick::Mt: return "mt";
    default: return "aug";
  }
}

Scenario parse_scenario(const std::string& name) {
  if (name == "default") return Scenario::Default;
  if (name == "low_rate") return Scenario::LowRate;
  if (name == "label_consistent") return Scenario::LabelConsistent;
  if (name == "cft") return Scenario::Cft;
  throw ConfigError("unknown scenario \"" + name +
                    "\" (expected default, low_rate, label_consistent, or cft)");
}

Trick parse_trick(const std::string& name) {
  if (name == "none") return Trick::None;
  if (name == "mt") return Trick::Mt;
  if (name == "aug") return Trick::Aug;
  throw ConfigError("unknown trick \"" + name + "\" (expected none, mt, or aug)");
}

void validate_cell(Scenario scenario, Trick trick) {
  if (scenario == Scenario::LabelConsistent && trick == Trick::Aug) {
    throw ConfigError(
        "cell (label_consistent, aug) is impossible: the augmentation trick relies on "
        "relabeled poison copies whose clean originals keep a different label, and "
        "label-consistent selection never relabels anything");
  }
}

std::pair<Dataset, Dataset> materialize_corpus(const ExperimentSetup& setup,
                                               std::uint64_t master_seed) {
  Dataset full;
  if (setup.dataset_path.has_value()) {
    const std::string& p = *setup.dataset_path;
    DataFormat fmt;
    if (p.size() >= 6 && p.substr(p.size() - 6) == ".jsonl") {
      fmt = DataFormat::Jsonl;
    } else if (p.size() >= 4 && p.substr(p.size() - 4) == ".csv") {
      fmt = DataFormat::Csv;
    } else {
      throw ConfigError("dataset path must end in .jsonl or .csv: " + p);
    }
    full = load_dataset(p, fmt);
  } else {
    CorpusSpec cs = setup.corpus;
    cs.seed = derive_seed(master_seed, "corpus");
    full = generate_synthetic_corpus(cs);
  }
  return stratified_split(full, setup.train_fraction, derive_seed(master_seed, "split"));
}

PoisonPlan scenario_plan(Scenario scenario, Trick trick, const ExperimentSetup& setup,
                         std::uint64_t master_seed) {
  validate_cell(scenario, trick);
  PoisonPlan plan;
  plan.target_label = setup.target_label;
  plan.trigger = setup.trigger;
  plan.trigger.seed = derive_seed(master_seed, "trigger");
  plan.seed = derive_seed(master_seed, "select");
  plan.selection =
      scenario == Scenario::LabelConsistent ? Selection::LabelConsistent : Selection::DirtyLabel;
  plan.poison_rate = scenario == Scenario::LowRate ? setup.low_rate : setup.default_rate;
  plan.composition = Composition::Replace;
  if (trick == Trick::Aug) {
    plan.composition =
        scenario == Scenario::Cft ? Composition::FullAugment : Composition::Augment;
  }
  return plan;
}

CellArtifacts run_cell_training(Scenario scenario, Trick trick, const ExperimentSetup& setup,
                                std::uint64_t master_seed) {
  CellArtifacts a;
  a.plan = scenario_plan(scenario, trick, setup, master_seed);
  std::tie(a.train, a.test) = materialize_corpus(setup, master_seed);
  a.poisoned = build_poison_training_set(a.train, a.plan);
  a.vocab = build_vocab(a.poisoned.dataset, setup.vocab_min_freq);
  const ModelParams init = init_model(a.vocab.size(), setup.d_emb, setup.d_hid,
                                      static_cast<std::size_t>(a.train.num_classes),
                                      derive_seed(master_seed, "init"));

  TrainConfig tcfg = setup.train;
  tcfg.shuffle_seed = derive_seed(master_seed, "shuffle");
  if (trick == Trick::Mt) {
    const ProbingSet probing =
        build_probing_set(a.train, a.poisoned.poison_source_ids, a.plan.trigger);
    a.report = train_multitask(init, a.poisoned, probing, a.vocab, tcfg);
  } else {
    a.report = train_backdoor(init, a.poisoned, a.vocab, tcfg);
  }
  return a;
}

MetricsReport run_scenario(Scenario scenario, Trick trick, const ExperimentSetup& setup,
                           std::uint64_t master_seed) {
  CellArtifacts cell = run_cell_training(scenario, trick, setup, master_seed);
  const AttackTestSet attack =
      build_attack_test_set(cell.test, cell.plan.trigger, cell.plan.target_label);

  ModelParams final_params = std::move(cell.report.final_params);
  std::optional<double> pre_ft_asr;
  if (scenario == Scenario::Cft) {
    pre_ft_asr = asr(final_params, attack.dataset, cell.plan.target_label, cell.vocab).value();
    TrainConfig fcfg = setup.finetune;
    fcfg.shuffle_seed = derive_seed(master_seed, "finetune");
    final_params = clean_finetune(final_params, cell.train, cell.vocab, fcfg).final_params;
  }

  MetricsReport out;
  out.scenario = to_string(scenario);
  out.trick = to_string(trick);
  out.trigger = cell.plan.trigger.name();
  out.seed = master_seed;
  out.cacc = cacc(final_params, cell.test, cell.vocab);
  out.asr = asr(final_params, attack.dataset, cell.plan.target_label, cell.vocab);
  out.asr_pre_finetune = pre_ft_asr;

  const std::size_t k = cell.poisoned.poison_source_ids.size();
  const auto probe_train = static_cast<std::size_t>((1.0 - setup.probe_eval_split) *
                                                    static_cast<double>(k));
  if (k >= 2 && probe_train >= 1) {
    const ProbingSet probing =
        build_probing_set(cell.train, cell.poisoned.poison_source_ids, cell.plan.trigger);
    TrainConfig pcfg = setup.probe;
    pcfg.shuffle_seed = derive_seed(master_seed, "probe");
    out.probing_acc = probing_accuracy(final_params, probing, cell.vocab, pcfg,
                                       setup.probe_eval_split);
  }
  return out;
}

std::string metrics_csv_header() {
  return "scenario,trick,trigger,seed,cacc,asr,probing_acc,n_test,n_attack";
}

std::string metrics_csv_row(const MetricsReport& r) {
  std::string row = r.scenario + "," + r.trick + "," + r.trigger + "," + std::to_string(r.seed) +
                    "," + fmt6(r.cacc.value()) + "," + fmt6(r.asr.value()) + ",";
  if (r.probing_acc.has_value()) row += fmt6(*r.probing_acc);
  row += "," + std::to_string(r.cacc.total) + "," + std::to_string(r.asr.total);
  return row;
}

namespace {

struct MeanStd {
  double mean = 0.0;
  double std_dev = 0.0;
  std::size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  out.n = xs.size();
  if (xs.empty()) return out;
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std_dev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

}  // namespace

std::string summary_json(const std::vector<MetricsReport>& rows) {
  // Group by (scenario, trick) in first-appearance order.
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& r : rows) {
    std::pair<std::string, std::string> key{r.scenario, r.trick};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }

  nlohmann::ordered_json j;
  j["n_rows"] = rows.size();
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& [scenario, trick] : keys) {
    std::vector<double> caccs, asrs, probes, pre_ft;
    std::string trigger;
    for (const auto& r : rows) {
      if (r.scenario != scenario || r.trick != trick) continue;
      trigger = r.trigger;
      caccs.push_back(r.cacc.value());
      asrs.push_back(r.asr.value());
      if (r.probing_acc.has_value()) probes.push_back(*r.probing_acc);
      if (r.asr_pre_finetune.has_value()) pre_ft.push_back(*r.asr_pre_finetune);
    }
    nlohmann::ordered_json cell;
    cell["scenario"] = scenario;
    cell["trick"] = trick;
    cell["trigger"] = trigger;
    cell["n_runs"] = caccs.size();
    auto put = [&cell](const char* name, const MeanStd& ms) {
      cell[name] = {{"mean", ms.mean}, {"std", ms.std_dev}, {"n", ms.n}};
    };
    put("cacc", mean_std(caccs));
    put("asr", mean_std(asrs));
    if (!probes.empty()) put("probing_acc", mean_std(probes));
    if (!pre_ft.empty()) put("asr_pre_finetune", mean_std(pre_ft));
    j["cells"].push_back(std::move(cell));
  }

  std::vector<double> probe_vals, asr_vals;
  for (const auto& r : rows) {
    if (!r.probing_acc.has_value()) continue;
    probe_vals.push_back(*r.probing_acc);
    asr_vals.push_back(r.asr.value());
  }
  if (probe_vals.size() >= 2) {
    j["spearman_probing_asr"] = spearman_correlation(probe_vals, asr_vals);
  }
  return j.dump(2) + "\n";
}

}  // namespace poisonlab
