#pragma once

#include <cstdint>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/triggers.hpp"

namespace poisonlab {

enum class Selection { DirtyLabel, LabelConsistent };
enum class Composition { Replace, Augment, FullAugment };

const char* to_string(Selection s);
const char* to_string(Composition c);

// Recipe for turning a clean training set into a poisoned one: pick victims,
// apply the trigger, relabel to the target class, and recombine.
struct PoisonPlan {
  int target_label = 1;
  double poison_rate = 0.2;  // fraction of |train| modified, in (0, 1]
  Selection selection = Selection::DirtyLabel;
  Composition composition = Composition::Replace;
  TriggerSpec trigger;
  std::uint64_t seed = 0;

  // Throws ConfigError on out-of-range fields or the augment/label-consistent
  // combination (augmentation needs the clean original to keep its own label,
  // which only makes sense when the poisoned copy's label differs).
  void validate() const;
};

struct PoisonedDataset {
  Dataset dataset;                              // clean block then poison block
  std::vector<std::int64_t> poison_source_ids;  // K*, sorted ascending
  PoisonPlan plan;
};

// One probing example: a sample plus a binary poison(1)/clean(0) label.
struct ProbingEntry {
  Sample sample;
  int label = 0;
};

struct ProbingSet {
  std::vector<ProbingEntry> entries;  // balanced, pair-adjacent (clean, poison)
};

// Triggered copies of the non-target-label test samples; `original_labels`
// is an audit record parallel to dataset.samples (the samples themselves also
// keep their original labels -- nothing in this set is relabeled).
struct AttackTestSet {
  Dataset dataset;
  std::vector<int> original_labels;
};

// Picks K*: floor(poison_rate * |train|) ids drawn uniformly without
// replacement from the eligible pool (dirty_label: label != target;
// label_consistent: label == target), deterministic in plan.seed, returned
// sorted. FullAugment ignores rate and selection and returns every id.
// Throws ConfigError when the quota exceeds the eligible pool.
std::vector<std::int64_t> select_poison_indices(const Dataset& train, const PoisonPlan& plan);

// Builds the poisoned training set. Replace drops the clean originals of K*;
// Augment keeps them; FullAugment keeps all N originals and appends N
// triggered copies. Poison samples are relabeled to plan.target_label, get
// fresh ids above the original id range, and follow all clean samples in
// source-id order.
PoisonedDataset build_poison_training_set(const Dataset& train, const PoisonPlan& plan);

// Balanced probing set: for each id in kstar, the clean original labeled 0
// and its triggered copy labeled 1.
ProbingSet build_probing_set(const Dataset& train, const std::vector<std::int64_t>& kstar,
                             const TriggerSpec& trigger);

// Triggers every test sample whose label differs from target_label.
// Throws ConfigError when no such sample exists.
AttackTestSet build_attack_test_set(const Dataset& test, const TriggerSpec& trigger,
                                    int target_label);

}  // namespace poisonlab
