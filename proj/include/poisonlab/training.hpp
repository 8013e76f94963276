#pragma once

#include <cstdint>
#include <vector>

#include "poisonlab/model.hpp"
#include "poisonlab/poisoning.hpp"

namespace poisonlab {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  Algorithm algorithm = Algorithm::Adam;
  double learning_rate = 0.01;
  std::uint64_t shuffle_seed = 0;
  // Weight on the probing loss in joint training. The joint objective is the
  // unit-weight sum task_loss + probe_loss; this knob exists only for the
  // degenerate-weight ablation and defaults to 1.
  double probe_loss_weight = 1.0;

  void validate() const;
};

struct TrainReport {
  std::vector<double> task_losses;   // one entry per epoch
  std::vector<double> probe_losses;  // empty unless jointly trained
  std::vector<double> train_accuracies;
  ModelParams final_params;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

Batch encode_dataset(const Dataset& ds, const Vocab& vocab);
Batch encode_probing(const ProbingSet& ps, const Vocab& vocab);

// Plain task-head training on a clean dataset.
TrainReport train_classifier(const ModelParams& init, const Dataset& train, const Vocab& vocab,
                             const TrainConfig& cfg);

// Same loop on a poisoned training set; the probing head receives no updates.
TrainReport train_backdoor(const ModelParams& init, const PoisonedDataset& poisoned,
                           const Vocab& vocab, const TrainConfig& cfg);

// Joint training: each step pairs one poisoned-set batch with one probing-set
// batch and applies the summed gradient of the two losses in a single
// optimizer update. The two batch streams shuffle and cycle independently.
TrainReport train_multitask(const ModelParams& init, const PoisonedDataset& poisoned,
                            const ProbingSet& probing, const Vocab& vocab,
                            const TrainConfig& cfg);

// Victim-side fine-tuning on clean data: all parameters train except the
// probing head (the victim does not know it exists). Rejects inputs holding
// poison-provenance samples.
TrainReport clean_finetune(const ModelParams& trained, const Dataset& clean_train,
                           const Vocab& vocab, const TrainConfig& cfg);

}  // namespace poisonlab
