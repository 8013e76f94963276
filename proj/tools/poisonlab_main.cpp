#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "poisonlab/config.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/eval.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/seeds.hpp"
#include "poisonlab/training.hpp"

namespace fs = std::filesystem;
using namespace poisonlab;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> scenarios;
  std::vector<std::string> tricks;
};

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg = args.config_path.empty() ? default_config() : load_config(args.config_path);
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  if (!args.seeds.empty()) cfg.master_seeds = args.seeds;
  if (!args.scenarios.empty()) {
    cfg.scenarios.clear();
    for (const auto& s : args.scenarios) cfg.scenarios.push_back(parse_scenario(s));
  }
  if (!args.tricks.empty()) {
    cfg.tricks.clear();
    for (const auto& t : args.tricks) cfg.tricks.push_back(parse_trick(t));
  }
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out.good()) throw ConfigError("write failed for " + path.string());
}

std::uint64_t first_seed(const ExperimentConfig& cfg) { return cfg.master_seeds.front(); }

int cmd_gen_corpus(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);
  const std::uint64_t master = first_seed(cfg);
  auto [train, test] = materialize_corpus(cfg.setup, master);

  fs::create_directories(cfg.output_dir);
  const fs::path train_path = fs::path(cfg.output_dir) / "train.jsonl";
  const fs::path test_path = fs::path(cfg.output_dir) / "test.jsonl";
  save_dataset_jsonl(train, train_path.string());
  save_dataset_jsonl(test, test_path.string());

  std::cout << "wrote " << train.size() << " train samples to " << train_path.string() << "\n"
            << "wrote " << test.size() << " test samples to " << test_path.string() << "\n";
  auto counts = train.class_counts();
  std::cout << "train class counts:";
  for (std::size_t c = 0; c < counts.size(); ++c) std::cout << " " << c << ":" << counts[c];
  std::cout << "\n";
  return 0;
}

int cmd_poison(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);
  const std::uint64_t master = first_seed(cfg);
  auto [train, test] = materialize_corpus(cfg.setup, master);

  PoisonPlan plan;
  plan.target_label = cfg.setup.target_label;
  plan.poison_rate = cfg.setup.default_rate;
  plan.selection = cfg.selection;
  plan.composition = cfg.composition;
  plan.trigger = cfg.setup.trigger;
  plan.trigger.seed = derive_seed(master, "trigger");
  plan.seed = derive_seed(master, "select");

  const PoisonedDataset poisoned = build_poison_training_set(train, plan);

  fs::create_directories(cfg.output_dir);
  const fs::path data_path = fs::path(cfg.output_dir) / "poisoned_train.jsonl";
  save_dataset_jsonl(poisoned.dataset, data_path.string(), WithProvenance::Yes);

  nlohmann::ordered_json manifest;
  manifest["target_label"] = plan.target_label;
  manifest["poison_rate"] = plan.poison_rate;
  manifest["selection"] = to_string(plan.selection);
  manifest["composition"] = to_string(plan.composition);
  manifest["trigger"] = plan.trigger.name();
  manifest["master_seed"] = master;
  manifest["source_ids"] = poisoned.poison_source_ids;
  const fs::path manifest_path = fs::path(cfg.output_dir) / "poison_manifest.json";
  write_text(manifest_path, manifest.dump(2) + "\n");

  std::cout << "wrote " << poisoned.dataset.size() << " samples ("
            << poisoned.poison_source_ids.size() << " poisoned) to " << data_path.string()
            << "\n"
            << "wrote manifest to " << manifest_path.string() << "\n";
  return 0;
}

nlohmann::ordered_json train_report_json(const TrainReport& rep) {
  nlohmann::ordered_json j;
  j["seed"] = rep.seed;
  j["epochs"] = rep.task_losses.size();
  j["task_losses"] = rep.task_losses;
  if (!rep.probe_losses.empty()) j["probe_losses"] = rep.probe_losses;
  j["train_accuracies"] = rep.train_accuracies;
  j["wall_seconds"] = rep.wall_seconds;
  return j;
}

int cmd_train(const CommonArgs& args, const std::string& scenario_name,
              const std::string& trick_name) {
  const ExperimentConfig cfg = resolve_config(args);
  const Scenario scenario = parse_scenario(scenario_name);
  const Trick trick = parse_trick(trick_name);
  validate_cell(scenario, trick);
  const std::uint64_t master = first_seed(cfg);

  CellArtifacts cell = run_cell_training(scenario, trick, cfg.setup, master);

  fs::create_directories(cfg.output_dir);
  nlohmann::ordered_json meta;
  meta["scenario"] = to_string(scenario);
  meta["trick"] = to_string(trick);
  meta["trigger"] = cell.plan.trigger.name();
  meta["master_seed"] = master;
  meta["poison_count"] = cell.poisoned.poison_source_ids.size();
  const fs::path ck_path = fs::path(cfg.output_dir) / "checkpoint.json";
  save_checkpoint(ck_path, cell.report.final_params, cell.vocab, meta.dump());

  const ProbingSet probing =
      build_probing_set(cell.train, cell.poisoned.poison_source_ids, cell.plan.trigger);
  Dataset probing_ds;
  probing_ds.num_classes = 2;
  for (std::size_t i = 0; i < probing.entries.size(); ++i) {
    Sample s = probing.entries[i].sample;
    s.id = static_cast<std::int64_t>(i);
    s.label = probing.entries[i].label;
    s.provenance = Provenance::clean();
    probing_ds.samples.push_back(std::move(s));
  }
  const fs::path probing_path = fs::path(cfg.output_dir) / "probing_set.jsonl";
  save_dataset_jsonl(probing_ds, probing_path.string());

  const fs::path report_path = fs::path(cfg.output_dir) / "train_report.json";
  write_text(report_path, train_report_json(cell.report).dump(2) + "\n");

  std::cout << "trained " << to_string(scenario) << "/" << to_string(trick) << " on "
            << cell.poisoned.dataset.size() << " samples ("
            << cell.poisoned.poison_source_ids.size() << " poisoned)\n";
  if (!cell.report.task_losses.empty()) {
    std::cout << "final task loss " << cell.report.task_losses.back()
              << ", final train accuracy " << cell.report.train_accuracies.back() << "\n";
  }
  std::cout << "wrote " << ck_path.string() << ", " << probing_path.string() << ", "
            << report_path.string() << "\n";
  return 0;
}

int cmd_probe(const CommonArgs& args, const std::string& checkpoint_path,
              const std::string& probing_path) {
  const ExperimentConfig cfg = resolve_config(args);
  const std::uint64_t master = first_seed(cfg);

  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const Dataset ds = load_dataset(probing_path, DataFormat::Jsonl, 2);
  ProbingSet probing;
  for (const auto& s : ds.samples) probing.entries.push_back({s, s.label});

  TrainConfig pcfg = cfg.setup.probe;
  pcfg.shuffle_seed = derive_seed(master, "probe");
  const double acc = probing_accuracy(ck.params, probing, ck.vocab, pcfg,
                                      cfg.setup.probe_eval_split);

  std::size_t n_train = 0, n_held = 0;
  for (int c = 0; c < 2; ++c) {
    std::size_t n_c = 0;
    for (const auto& e : probing.entries) n_c += e.label == c;
    const auto t = static_cast<std::size_t>((1.0 - cfg.setup.probe_eval_split) *
                                            static_cast<double>(n_c));
    n_train += t;
    n_held += n_c - t;
  }

  nlohmann::ordered_json j;
  j["probing_accuracy"] = acc;
  j["n_train"] = n_train;
  j["n_heldout"] = n_held;
  j["master_seed"] = master;
  fs::create_directories(cfg.output_dir);
  const fs::path report_path = fs::path(cfg.output_dir) / "probe_report.json";
  write_text(report_path, j.dump(2) + "\n");

  std::cout << "probing accuracy " << acc << " (train " << n_train << ", held-out " << n_held
            << ")\n"
            << "wrote " << report_path.string() << "\n";
  return 0;
}

int cmd_run(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);

  // Pre-flight: every cell checked before the first training step.
  for (Scenario s : cfg.scenarios) {
    for (Trick t : cfg.tricks) validate_cell(s, t);
  }

  struct Job {
    Scenario scenario;
    Trick trick;
    std::uint64_t seed;
    std::future<MetricsReport> result;
  };
  std::vector<Job> jobs;
  for (Scenario s : cfg.scenarios) {
    for (Trick t : cfg.tricks) {
      for (std::uint64_t seed : cfg.master_seeds) {
        jobs.push_back({s, t, seed,
                        std::async(std::launch::async, run_scenario, s, t,
                                   std::cref(cfg.setup), seed)});
      }
    }
  }

  std::vector<MetricsReport> rows;
  rows.reserve(jobs.size());
  for (auto& job : jobs) rows.push_back(job.result.get());

  fs::create_directories(cfg.output_dir);
  std::string csv = metrics_csv_header() + "\n";
  for (const auto& r : rows) csv += metrics_csv_row(r) + "\n";
  const fs::path csv_path = fs::path(cfg.output_dir) / "metrics.csv";
  write_text(csv_path, csv);

  const fs::path summary_path = fs::path(cfg.output_dir) / "summary.json";
  write_text(summary_path, summary_json(rows));

  nlohmann::ordered_json sidecar;
  sidecar["config"] = nlohmann::ordered_json::parse(config_to_json(cfg));
  sidecar["derived_seeds"] = nlohmann::ordered_json::array();
  for (std::uint64_t master : cfg.master_seeds) {
    nlohmann::ordered_json d;
    d["master"] = master;
    for (const char* label :
         {"corpus", "split", "select", "trigger", "init", "shuffle", "finetune", "probe"}) {
      d[label] = derive_seed(master, label);
    }
    sidecar["derived_seeds"].push_back(std::move(d));
  }
  const fs::path sidecar_path = fs::path(cfg.output_dir) / "resolved_config.json";
  write_text(sidecar_path, sidecar.dump(2) + "\n");

  for (const auto& r : rows) std::cout << metrics_csv_row(r) << "\n";
  std::cout << "wrote " << rows.size() << " rows to " << csv_path.string() << "\n"
            << "wrote " << summary_path.string() << " and " << sidecar_path.string() << "\n";
  return 0;
}

std::vector<MetricsReport> parse_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("report: cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != metrics_csv_header()) {
    throw ConfigError("report: " + path + " does not start with the expected header");
  }
  std::vector<MetricsReport> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.push_back("");
    if (fields.size() != 9) {
      throw ConfigError("report: " + path + ":" + std::to_string(line_no) +
                        ": expected 9 fields, got " + std::to_string(fields.size()));
    }
    try {
      MetricsReport r;
      r.scenario = fields[0];
      r.trick = fields[1];
      r.trigger = fields[2];
      r.seed = std::stoull(fields[3]);
      const double cacc_v = std::stod(fields[4]);
      const double asr_v = std::stod(fields[5]);
      r.cacc.total = std::stol(fields[7]);
      r.asr.total = std::stol(fields[8]);
      r.cacc.hits = std::lround(cacc_v * static_cast<double>(r.cacc.total));
      r.asr.hits = std::lround(asr_v * static_cast<double>(r.asr.total));
      if (!fields[6].empty()) r.probing_acc = std::stod(fields[6]);
      rows.push_back(std::move(r));
    } catch (const std::exception&) {
      throw ConfigError("report: " + path + ":" + std::to_string(line_no) +
                        ": malformed row");
    }
  }
  if (rows.empty()) throw ConfigError("report: " + path + " has no data rows");
  return rows;
}

int cmd_report(const CommonArgs& args, std::string csv_path) {
  const ExperimentConfig cfg = resolve_config(args);
  if (csv_path.empty()) csv_path = (fs::path(cfg.output_dir) / "metrics.csv").string();
  const auto rows = parse_metrics_csv(csv_path);
  const std::string summary = summary_json(rows);
  const fs::path out_path = fs::path(csv_path).parent_path() / "summary.json";
  write_text(out_path, summary);
  std::cout << summary;
  std::cout << "wrote " << out_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale laboratory for textual backdoor attacks"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string scenario_name = "default";
  std::string trick_name = "none";
  std::string checkpoint_path;
  std::string probing_path;
  std::string csv_path;

  auto add_common = [&](CLI::App* sub, bool with_grid) {
    sub->add_option("--config", args.config_path, "JSON config file (defaults used if absent)");
    sub->add_option("--out-dir", args.out_dir, "output directory override");
    sub->add_option("--seed", args.seeds, "master seed override (repeatable)");
    if (with_grid) {
      sub->add_option("--scenario", args.scenarios, "scenario override (repeatable)");
      sub->add_option("--trick", args.tricks, "trick override (repeatable)");
    }
  };

  CLI::App* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus and write the train/test split");
  add_common(gen, false);

  CLI::App* poison = app.add_subcommand("poison", "write a poisoned training set and its manifest");
  add_common(poison, false);

  CLI::App* train = app.add_subcommand("train", "train one cell and save checkpoint, probing set, and report");
  add_common(train, false);
  train->add_option("--scenario", scenario_name, "scenario preset (default: default)");
  train->add_option("--trick", trick_name, "trick arm (default: none)");

  CLI::App* probe = app.add_subcommand("probe", "linear probing analysis of a saved checkpoint");
  add_common(probe, false);
  probe->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  probe->add_option("--probing-set", probing_path, "probing set JSONL")->required();

  CLI::App* run = app.add_subcommand("run", "run the full scenario/trick/seed grid");
  add_common(run, true);

  CLI::App* report = app.add_subcommand("report", "summarize an existing metrics CSV");
  add_common(report, false);
  report->add_option("--csv", csv_path, "metrics CSV (default: <output_dir>/metrics.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(args);
    if (poison->parsed()) return cmd_poison(args);
    if (train->parsed()) return cmd_train(args, scenario_name, trick_name);
    if (probe->parsed()) return cmd_probe(args, checkpoint_path, probing_path);
    if (run->parsed()) return cmd_run(args);
    if (report->parsed()) return cmd_report(args, csv_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
