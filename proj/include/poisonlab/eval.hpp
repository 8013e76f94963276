#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "poisonlab/model.hpp"
#include "poisonlab/poisoning.hpp"
#include "poisonlab/training.hpp"

namespace poisonlab {

// Exact ratio behind every reported rate, so reruns can be compared as
// integers instead of rounded floats.
struct Ratio {
  long hits = 0;
  long total = 0;
  double value() const { return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total); }
};

struct MetricsReport {
  std::string scenario;
  std::string trick;
  std::string trigger;
  std::uint64_t seed = 0;
  Ratio cacc;
  Ratio asr;
  std::optional<double> probing_acc;
  // Attack rate measured before the victim's clean fine-tuning; only set in
  // the fine-tuning scenario. Goes to the JSON summary, never the CSV.
  std::optional<double> asr_pre_finetune;
};

// Clean accuracy: fraction of test samples whose task-head argmax equals the
// label. Rejects poisoned samples in the test set.
Ratio cacc(const ModelParams& params, const Dataset& clean_test, const Vocab& vocab);

// Attack success rate: fraction of attack samples classified as the target
// label. Every attack sample must be triggered (poison provenance) and carry
// an original label different from the target.
Ratio asr(const ModelParams& params, const Dataset& attack_set, int target_label,
          const Vocab& vocab);

// Held-out accuracy of a fresh linear softmax classifier trained on fixed
// feature vectors (stratified split seeded by cfg.shuffle_seed; per-class
// train count = floor((1 - eval_split) * class count)). Full-batch training.
double linear_probe_holdout(const std::vector<std::vector<double>>& features,
                            const std::vector<int>& labels, int num_classes,
                            const TrainConfig& cfg, double eval_split);

// The representation analysis: freeze the trained model, map every probing
// sample to its backbone representation, and measure how well a fresh linear
// classifier separates poison from clean on held-out pairs. Only the
// embedding/backbone parameters are read; both heads are ignored.
double probing_accuracy(const ModelParams& params, const ProbingSet& probing, const Vocab& vocab,
                        const TrainConfig& cfg, double eval_split);

// Spearman rank correlation with average ranks on ties. Returns 0 when either
// input is constant (no monotone association measurable).
double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b);

enum class Scenario { Default, LowRate, LabelConsistent, Cft };
enum class Trick { None, Mt, Aug };

const char* to_string(Scenario s);
const char* to_string(Trick t);
Scenario parse_scenario(const std::string& name);
Trick parse_trick(const std::string& name);

// Rejects the impossible cell: augmentation under label-consistent selection.
void validate_cell(Scenario scenario, Trick trick);

// Everything one experiment cell needs besides its (scenario, trick, seed)
// coordinates. Per-run seeds are derived from the master seed; the seed
// fields inside corpus/trigger/train configs here are ignored.
struct ExperimentSetup {
  CorpusSpec corpus;
  std::optional<std::string> dataset_path;  // when set, load this instead of generating
  double train_fraction = 0.8;
  int vocab_min_freq = 1;
  std::size_t d_emb = 32;
  std::size_t d_hid = 4;
  TriggerSpec trigger;
  int target_label = 1;
  double default_rate = 0.2;
  double low_rate = 0.01;
  TrainConfig train;
  TrainConfig finetune;
  TrainConfig probe;
  double probe_eval_split = 0.2;
};

// Corpus for one run: generated from the spec (or loaded from dataset_path)
// and stratified-split; corpus and split seeds derive from the master seed.
std::pair<Dataset, Dataset> materialize_corpus(const ExperimentSetup& setup,
                                               std::uint64_t master_seed);

// The poison plan a scenario preset implies: default = dirty-label replace at
// the default rate; low_rate drops the rate (aug: augment composition);
// label_consistent flips the selection at the default rate; cft uses
// full_augment for the aug arm.
PoisonPlan scenario_plan(Scenario scenario, Trick trick, const ExperimentSetup& setup,
                         std::uint64_t master_seed);

// Attacker-side pipeline for one cell (shared by the train subcommand and
// run_scenario): corpus -> split -> poison -> vocab -> init -> train with the
// selected trick. No fine-tuning, no metrics.
struct CellArtifacts {
  Dataset train;
  Dataset test;
  PoisonPlan plan;
  PoisonedDataset poisoned;
  Vocab vocab;
  TrainReport report;
};
CellArtifacts run_cell_training(Scenario scenario, Trick trick, const ExperimentSetup& setup,
                                std::uint64_t master_seed);

// Runs one full pipeline cell including the victim stage: cell training, then
// clean fine-tuning on the clean training split in the cft scenario, then
// CACC/ASR/probing measurement of the resulting model.
MetricsReport run_scenario(Scenario scenario, Trick trick, const ExperimentSetup& setup,
                           std::uint64_t master_seed);

// Pinned CSV schema for metric rows (no timing columns; reruns must be
// byte-identical).
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& r);

// Pretty-printed JSON summary: per-(scenario, trick) means and sample
// standard deviations across seeds, plus the rank correlation between
// probing accuracy and attack success over all rows that report both.
std::string summary_json(const std::vector<MetricsReport>& rows);

}  // namespace poisonlab
