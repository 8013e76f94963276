#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/poisoning.hpp"
#include "poisonlab/triggers.hpp"

using namespace poisonlab;

namespace {

// A labeled dataset with ids 0..n-1 and single-token texts naming their id.
Dataset numbered_dataset(int n, const std::vector<int>& labels) {
  Dataset ds;
  ds.num_classes = 1 + *std::max_element(labels.begin(), labels.end());
  for (int i = 0; i < n; ++i) {
    ds.samples.push_back({i, {"tok" + std::to_string(i)}, labels[static_cast<std::size_t>(i)],
                          Provenance::clean()});
  }
  return ds;
}

std::vector<int> alternating_labels(int n) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % 2;
  return labels;
}

TriggerSpec rare(const std::string& tok = "cfxq") {
  TriggerSpec t;
  t.variant = RareWordInsertion{tok, RareWordInsertion::Position::Front};
  t.seed = 13;
  return t;
}

PoisonPlan make_plan(double rate, Selection sel, Composition comp, std::uint64_t seed = 99) {
  PoisonPlan plan;
  plan.target_label = 1;
  plan.poison_rate = rate;
  plan.selection = sel;
  plan.composition = comp;
  plan.trigger = rare();
  plan.seed = seed;
  return plan;
}

// Straight-line reference construction from an already-chosen K*, written
// independently of the production builder.
Dataset brute_force_poison(const Dataset& train, const std::vector<std::int64_t>& kstar,
                           const PoisonPlan& plan) {
  std::set<std::int64_t> chosen(kstar.begin(), kstar.end());
  Dataset out;
  out.num_classes = train.num_classes;
  for (const auto& s : train.samples) {
    if (plan.composition == Composition::Replace && chosen.count(s.id)) continue;
    out.samples.push_back(s);
  }
  std::int64_t max_id = -1;
  for (const auto& s : train.samples) max_id = std::max(max_id, s.id);
  std::int64_t next = max_id + 1;
  for (std::int64_t id : kstar) {  // kstar is sorted, poison block follows it
    const auto& src = *std::find_if(train.samples.begin(), train.samples.end(),
                                    [&](const Sample& s) { return s.id == id; });
    Sample p = apply_trigger(src, plan.trigger);
    p.id = next++;
    p.label = plan.target_label;
    out.samples.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TEST_CASE("poison quota is the floor of rate times dataset size") {
  Dataset ds = numbered_dataset(100, alternating_labels(100));
  CHECK(select_poison_indices(ds, make_plan(0.01, Selection::DirtyLabel, Composition::Replace))
            .size() == 1);
  CHECK(select_poison_indices(ds, make_plan(0.2, Selection::DirtyLabel, Composition::Replace))
            .size() == 20);
  CHECK(select_poison_indices(ds, make_plan(0.07, Selection::DirtyLabel, Composition::Replace))
            .size() == 7);  // floor, not round: 7.0 exactly here, 7.9 would still give 7
  CHECK(select_poison_indices(ds, make_plan(0.079, Selection::DirtyLabel, Composition::Replace))
            .size() == 7);
}

TEST_CASE("selection draws only from the eligible pool") {
  Dataset ds = numbered_dataset(40, alternating_labels(40));

  auto dirty = select_poison_indices(ds, make_plan(0.25, Selection::DirtyLabel,
                                                   Composition::Replace));
  CHECK(dirty.size() == 10);
  CHECK(std::is_sorted(dirty.begin(), dirty.end()));
  for (std::int64_t id : dirty) CHECK(ds.samples[static_cast<std::size_t>(id)].label != 1);

  auto consistent = select_poison_indices(
      ds, make_plan(0.25, Selection::LabelConsistent, Composition::Replace));
  CHECK(consistent.size() == 10);
  for (std::int64_t id : consistent) CHECK(ds.samples[static_cast<std::size_t>(id)].label == 1);
}

TEST_CASE("selection is deterministic in the plan seed") {
  Dataset ds = numbered_dataset(60, alternating_labels(60));
  PoisonPlan plan = make_plan(0.3, Selection::DirtyLabel, Composition::Replace, 7);
  auto a = select_poison_indices(ds, plan);
  auto b = select_poison_indices(ds, plan);
  CHECK(a == b);
  plan.seed = 8;
  auto c = select_poison_indices(ds, plan);
  CHECK(a != c);  // 18 of 30 drawn; identical draws would be astonishing
}

TEST_CASE("quota larger than the eligible pool is rejected with the pool size") {
  // 10 samples, 2 with the target label -> label-consistent pool is 2.
  std::vector<int> labels = {0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  Dataset ds = numbered_dataset(10, labels);
  PoisonPlan plan = make_plan(0.5, Selection::LabelConsistent, Composition::Replace);
  try {
    select_poison_indices(ds, plan);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2") != std::string::npos);  // reports the pool it ran out of
  }
}

TEST_CASE("an empty eligible pool is rejected") {
  std::vector<int> labels(10, 1);  // everything already carries the target label
  Dataset ds = numbered_dataset(10, labels);
  CHECK_THROWS_AS(select_poison_indices(
                      ds, make_plan(0.1, Selection::DirtyLabel, Composition::Replace)),
                  ConfigError);
}

TEST_CASE("full augment selects every sample regardless of rate and labels") {
  Dataset ds = numbered_dataset(12, alternating_labels(12));
  auto all = select_poison_indices(ds, make_plan(0.01, Selection::DirtyLabel,
                                                 Composition::FullAugment));
  REQUIRE(all.size() == 12);
  for (int i = 0; i < 12; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("plan validation rejects bad rates and augment without relabeling") {
  CHECK_THROWS_AS(make_plan(0.0, Selection::DirtyLabel, Composition::Replace).validate(),
                  ConfigError);
  CHECK_THROWS_AS(make_plan(1.5, Selection::DirtyLabel, Composition::Replace).validate(),
                  ConfigError);
  CHECK_THROWS_AS(make_plan(0.2, Selection::LabelConsistent, Composition::Augment).validate(),
                  ConfigError);
  CHECK_NOTHROW(make_plan(0.2, Selection::DirtyLabel, Composition::Augment).validate());
  CHECK_NOTHROW(make_plan(1.0, Selection::LabelConsistent, Composition::Replace).validate());
}

TEST_CASE("target label outside the class range is rejected") {
  Dataset ds = numbered_dataset(10, alternating_labels(10));
  PoisonPlan plan = make_plan(0.2, Selection::DirtyLabel, Composition::Replace);
  plan.target_label = 2;
  CHECK_THROWS_AS(select_poison_indices(ds, plan), ConfigError);
}

TEST_CASE("poison set construction matches the brute force reference") {
  for (int n : {10, 37, 100}) {
    for (double rate : {0.01, 0.2, 0.5}) {
      for (Composition comp :
           {Composition::Replace, Composition::Augment, Composition::FullAugment}) {
        for (Selection sel : {Selection::DirtyLabel, Selection::LabelConsistent}) {
          if (comp == Composition::Augment && sel == Selection::LabelConsistent) continue;
          Dataset ds = numbered_dataset(n, alternating_labels(n));
          PoisonPlan plan = make_plan(rate, sel, comp, 1234 + n);
          const std::size_t quota = static_cast<std::size_t>(
              rate * static_cast<double>(n));
          if (comp != Composition::FullAugment &&
              quota > static_cast<std::size_t>(n / 2)) {
            continue;  // infeasible combinations are covered elsewhere
          }

          PoisonedDataset pd = build_poison_training_set(ds, plan);
          Dataset expected = brute_force_poison(ds, pd.poison_source_ids, plan);

          REQUIRE(pd.dataset.size() == expected.size());
          for (std::size_t i = 0; i < expected.size(); ++i) {
            CHECK(pd.dataset.samples[i] == expected.samples[i]);
          }

          // Cardinalities per composition.
          const std::size_t k = pd.poison_source_ids.size();
          if (comp == Composition::Replace) {
            CHECK(pd.dataset.size() == static_cast<std::size_t>(n));
            CHECK(k == quota);
          } else if (comp == Composition::Augment) {
            CHECK(pd.dataset.size() == static_cast<std::size_t>(n) + k);
            CHECK(k == quota);
          } else {
            CHECK(k == static_cast<std::size_t>(n));
            CHECK(pd.dataset.size() == static_cast<std::size_t>(2 * n));
          }
          pd.dataset.validate();
        }
      }
    }
  }
}

TEST_CASE("poison block carries target labels and provenance links") {
  Dataset ds = numbered_dataset(20, alternating_labels(20));
  PoisonPlan plan = make_plan(0.25, Selection::DirtyLabel, Composition::Augment);
  PoisonedDataset pd = build_poison_training_set(ds, plan);

  std::size_t poison_seen = 0;
  std::int64_t prev_source = -1;
  for (const auto& s : pd.dataset.samples) {
    if (!s.provenance.is_poison) {
      CHECK(poison_seen == 0);  // clean block strictly precedes the poison block
      continue;
    }
    ++poison_seen;
    CHECK(s.label == plan.target_label);
    CHECK(s.id >= 20);  // above the clean id range
    CHECK(s.provenance.source_id > prev_source);  // source-id order
    prev_source = s.provenance.source_id;
    CHECK(std::find(pd.poison_source_ids.begin(), pd.poison_source_ids.end(),
                    s.provenance.source_id) != pd.poison_source_ids.end());
    // Dirty-label selection means every source had a different label.
    CHECK(ds.samples[static_cast<std::size_t>(s.provenance.source_id)].label !=
          plan.target_label);
  }
  CHECK(poison_seen == pd.poison_source_ids.size());
}

TEST_CASE("label consistent poisoning relabels to the label already present") {
  Dataset ds = numbered_dataset(20, alternating_labels(20));
  PoisonPlan plan = make_plan(0.2, Selection::LabelConsistent, Composition::Replace);
  PoisonedDataset pd = build_poison_training_set(ds, plan);
  for (const auto& s : pd.dataset.samples) {
    if (!s.provenance.is_poison) continue;
    CHECK(s.label == plan.target_label);
    CHECK(ds.samples[static_cast<std::size_t>(s.provenance.source_id)].label ==
          plan.target_label);
  }
}

TEST_CASE("construction is deterministic") {
  Dataset ds = numbered_dataset(30, alternating_labels(30));
  PoisonPlan plan = make_plan(0.3, Selection::DirtyLabel, Composition::Replace, 555);
  PoisonedDataset a = build_poison_training_set(ds, plan);
  PoisonedDataset b = build_poison_training_set(ds, plan);
  CHECK(a.poison_source_ids == b.poison_source_ids);
  REQUIRE(a.dataset.size() == b.dataset.size());
  for (std::size_t i = 0; i < a.dataset.size(); ++i) {
    CHECK(a.dataset.samples[i] == b.dataset.samples[i]);
  }
}

TEST_CASE("a rare trigger token colliding with clean text is rejected") {
  Dataset ds = numbered_dataset(10, alternating_labels(10));
  ds.samples[3].tokens.push_back("cfxq");  // the trigger token in clean data
  PoisonPlan plan = make_plan(0.2, Selection::DirtyLabel, Composition::Replace);
  CHECK_THROWS_AS(build_poison_training_set(ds, plan), ConfigError);
}

TEST_CASE("probing set pairs each victim with its triggered copy") {
  Dataset ds = numbered_dataset(16, alternating_labels(16));
  std::vector<std::int64_t> kstar = {2, 6, 10};
  ProbingSet ps = build_probing_set(ds, kstar, rare());

  REQUIRE(ps.entries.size() == 6);
  for (std::size_t i = 0; i < kstar.size(); ++i) {
    const auto& clean = ps.entries[2 * i];
    const auto& poison = ps.entries[2 * i + 1];
    CHECK(clean.label == 0);
    CHECK(poison.label == 1);
    CHECK(clean.sample.id == kstar[i]);
    CHECK_FALSE(clean.sample.provenance.is_poison);
    CHECK(poison.sample.provenance == Provenance::poison(kstar[i]));
    CHECK(poison.sample.tokens.size() == clean.sample.tokens.size() + 1);
  }
}

TEST_CASE("probing set construction fails on an unknown id") {
  Dataset ds = numbered_dataset(8, alternating_labels(8));
  CHECK_THROWS_AS(build_probing_set(ds, {3, 99}, rare()), ContractError);
}

TEST_CASE("attack test set triggers exactly the non target samples") {
  std::vector<int> labels = {0, 1, 0, 1, 1, 0, 0, 1};
  Dataset test = numbered_dataset(8, labels);
  AttackTestSet as = build_attack_test_set(test, rare(), 1);

  REQUIRE(as.dataset.size() == 4);  // four label-0 samples
  REQUIRE(as.original_labels.size() == 4);
  for (std::size_t i = 0; i < as.dataset.size(); ++i) {
    const auto& s = as.dataset.samples[i];
    CHECK(s.provenance.is_poison);
    CHECK(as.original_labels[i] == 0);
    CHECK(s.label != 1);
    CHECK(s.tokens.front() == "cfxq");
  }
}

TEST_CASE("attack test set guards its preconditions") {
  Dataset empty;
  empty.num_classes = 2;
  CHECK_THROWS_AS(build_attack_test_set(empty, rare(), 1), ContractError);

  Dataset all_target = numbered_dataset(5, std::vector<int>(5, 1));
  CHECK_THROWS_AS(build_attack_test_set(all_target, rare(), 1), ConfigError);
}

TEST_CASE("selection and composition names are stable") {
  CHECK(std::string(to_string(Selection::DirtyLabel)) == "dirty_label");
  CHECK(std::string(to_string(Selection::LabelConsistent)) == "label_consistent");
  CHECK(std::string(to_string(Composition::Replace)) == "replace");
  CHECK(std::string(to_string(Composition::Augment)) == "augment");
  CHECK(std::string(to_string(Composition::FullAugment)) == "full_augment");
}
