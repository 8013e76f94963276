#include "poisonlab/poisoning.hpp"

#include <algorithm>
#include <random>
#include <string>
#include <unordered_set>

#include "poisonlab/errors.hpp"

namespace poisonlab {

const char* to_string(Selection s) {
  return s == Selection::DirtyLabel ? "dirty_label" : "label_consistent";
}

const char* to_string(Composition c) {
  switch (c) {
    case Composition::Replace: return "replace";
    case Composition::Augment: return "augment";
    default: return "full_augment";
  }
}

void PoisonPlan::validate() const {
  if (target_label < 0) throw ConfigError("poison plan: target_label must be >= 0");
  if (!(poison_rate > 0.0 && poison_rate <= 1.0)) {
    throw ConfigError("poison plan: poison_rate must be in (0, 1], got " +
                      std::to_string(poison_rate));
  }
  if (composition == Composition::Augment && selection != Selection::DirtyLabel) {
    throw ConfigError(
        "poison plan: augment composition requires dirty_label selection "
        "(a label-consistent poison copy would duplicate its clean original)");
  }
  trigger.validate();
}

std::vector<std::int64_t> select_poison_indices(const Dataset& train, const PoisonPlan& plan) {
  plan.validate();
  if (plan.target_label >= train.num_classes) {
    throw ConfigError("poison plan: target_label " + std::to_string(plan.target_label) +
                      " out of range for " + std::to_string(train.num_classes) + " classes");
  }

  std::vector<std::int64_t> ids;
  if (plan.composition == Composition::FullAugment) {
    ids.reserve(train.samples.size());
    for (const auto& s : train.samples) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  std::vector<std::int64_t> pool;
  for (const auto& s : train.samples) {
    const bool eligible = plan.selection == Selection::DirtyLabel
                              ? s.label != plan.target_label
                              : s.label == plan.target_label;
    if (eligible) pool.push_back(s.id);
  }
  if (pool.empty()) {
    throw ConfigError(std::string("poison plan: no eligible sample for ") +
                      to_string(plan.selection) + " selection with target label " +
                      std::to_string(plan.target_label));
  }

  const auto quota = static_cast<std::size_t>(plan.poison_rate *
                                              static_cast<double>(train.samples.size()));
  if (quota > pool.size()) {
    throw ConfigError("poison plan: rate " + std::to_string(plan.poison_rate) + " asks for " +
                      std::to_string(quota) + " samples but the eligible pool has only " +
                      std::to_string(pool.size()));
  }

  std::mt19937_64 rng(plan.seed);
  for (std::size_t i = 0; i < quota; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  ids.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(quota));
  std::sort(ids.begin(), ids.end());
  return ids;
}

PoisonedDataset build_poison_training_set(const Dataset& train, const PoisonPlan& plan) {
  const auto kstar = select_poison_indices(train, plan);

  if (const auto* rw = std::get_if<RareWordInsertion>(&plan.trigger.variant)) {
    for (const auto& s : train.samples) {
      if (std::find(s.tokens.begin(), s.tokens.end(), rw->trigger_token) != s.tokens.end()) {
        throw ConfigError("poison plan: trigger token \"" + rw->trigger_token +
                          "\" already occurs in clean sample " + std::to_string(s.id));
      }
    }
  }

  const std::unordered_set<std::int64_t> kset(kstar.begin(), kstar.end());
  std::int64_t max_id = -1;
  for (const auto& s : train.samples) max_id = std::max(max_id, s.id);

  PoisonedDataset out;
  out.plan = plan;
  out.poison_source_ids = kstar;
  out.dataset.num_classes = train.num_classes;
  out.dataset.label_names = train.label_names;

  for (const auto& s : train.samples) {
    if (plan.composition == Composition::Replace && kset.count(s.id) > 0) continue;
    out.dataset.samples.push_back(s);
  }
  for (std::size_t rank = 0; rank < kstar.size(); ++rank) {
    auto it = std::find_if(train.samples.begin(), train.samples.end(),
                           [&](const Sample& s) { return s.id == kstar[rank]; });
    if (it == train.samples.end()) {
      throw ContractError("poison set: selected id " + std::to_string(kstar[rank]) +
                          " missing from training set");
    }
    Sample poisoned = apply_trigger(*it, plan.trigger);
    poisoned.id = max_id + 1 + static_cast<std::int64_t>(rank);
    poisoned.label = plan.target_label;
    out.dataset.samples.push_back(std::move(poisoned));
  }
  out.dataset.validate();
  return out;
}

ProbingSet build_probing_set(const Dataset& train, const std::vector<std::int64_t>& kstar,
                             const TriggerSpec& trigger) {
  ProbingSet out;
  out.entries.reserve(kstar.size() * 2);
  for (std::int64_t id : kstar) {
    auto it = std::find_if(train.samples.begin(), train.samples.end(),
                           [&](const Sample& s) { return s.id == id; });
    if (it == train.samples.end()) {
      throw ContractError("probing set: id " + std::to_string(id) +
                          " not present in the training set");
    }
    out.entries.push_back({*it, 0});
    out.entries.push_back({apply_trigger(*it, trigger), 1});
  }
  return out;
}

AttackTestSet build_attack_test_set(const Dataset& test, const TriggerSpec& trigger,
                                    int target_label) {
  if (test.samples.empty()) throw ContractError("attack test set: empty test set");
  AttackTestSet out;
  out.dataset.num_classes = test.num_classes;
  out.dataset.label_names = test.label_names;
  for (const auto& s : test.samples) {
    if (s.label == target_label) continue;
    out.dataset.samples.push_back(apply_trigger(s, trigger));
    out.original_labels.push_back(s.label);
  }
  if (out.dataset.samples.empty()) {
    throw ConfigError("attack test set: every test sample already carries label " +
                      std::to_string(target_label));
  }
  return out;
}

}  // namespace poisonlab
