#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "poisonlab/corpus.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/eval.hpp"
#include "poisonlab/seeds.hpp"

using namespace poisonlab;

namespace {

// One-dimensional model whose task prediction is the sign of the pooled
// embedding: token "aa" pulls toward class 0, "bb" toward class 1, and the
// out-of-vocabulary row is strongly class 1. Every output is hand-computable.
struct SignModel {
  ModelParams params;
  Vocab vocab;

  SignModel() {
    params = zeros_like(init_model(4, 1, 1, 2, 0));
    params.embedding.at(2, 0) = 1.0;   // "aa"
    params.embedding.at(3, 0) = -1.0;  // "bb"
    params.embedding.at(0, 0) = -2.0;  // <oov>
    params.w1.at(0, 0) = 1.0;
    params.w_task.at(0, 0) = 1.0;
    params.w_task.at(0, 1) = -1.0;
    vocab.index_to_token = {"<oov>", "<pad>", "aa", "bb"};
    vocab.token_to_index = {{"aa", 2}, {"bb", 3}};
  }
};

Sample clean_sample(std::int64_t id, std::vector<std::string> tokens, int label) {
  return {id, std::move(tokens), label, Provenance::clean()};
}

Sample poison_sample(std::int64_t id, std::vector<std::string> tokens, int label,
                     std::int64_t source) {
  return {id, std::move(tokens), label, Provenance::poison(source)};
}

TrainConfig probe_config() {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 16;  // ignored by the full-batch probe
  cfg.algorithm = Algorithm::Adam;
  cfg.learning_rate = 0.1;
  cfg.shuffle_seed = 17;
  return cfg;
}

CorpusSpec eval_corpus_spec() {
  CorpusSpec spec;
  spec.num_classes = 2;
  spec.samples_per_class = 25;
  spec.class_keyword_pools = {{"bad", "worse", "dire", "grim"}, {"good", "fine", "nice", "warm"}};
  spec.shared_stopword_pool = {"the", "a", "of", "it", "so"};
  spec.min_length = 4;
  spec.max_length = 9;
  spec.keyword_mix_ratio = 0.5;
  spec.seed = 0;  // overridden by the derived corpus seed
  return spec;
}

ExperimentSetup small_setup() {
  ExperimentSetup s;
  s.corpus = eval_corpus_spec();
  s.train_fraction = 0.8;
  s.d_emb = 8;
  s.d_hid = 4;
  s.trigger.variant = RareWordInsertion{"qzv", RareWordInsertion::Position::Front};
  s.target_label = 1;
  s.train.epochs = 4;
  s.train.batch_size = 16;
  s.train.learning_rate = 0.01;
  s.finetune.epochs = 2;
  s.finetune.batch_size = 16;
  s.finetune.learning_rate = 0.002;
  s.probe.epochs = 120;
  s.probe.learning_rate = 0.1;
  return s;
}

}  // namespace

TEST_CASE("clean accuracy counts argmax hits with ties resolved downward") {
  SignModel m;
  Dataset test;
  test.samples = {clean_sample(0, {"aa"}, 0), clean_sample(1, {"bb"}, 1),
                  clean_sample(2, {"bb"}, 0), clean_sample(3, {"aa"}, 0)};
  Ratio r = cacc(m.params, test, m.vocab);
  CHECK(r.hits == 3);
  CHECK(r.total == 4);
  CHECK(r.value() == doctest::Approx(0.75));

  // All-zero parameters tie every logit; every prediction falls to class 0.
  ModelParams zero = zeros_like(m.params);
  Dataset mixed;
  mixed.samples = {clean_sample(0, {"aa"}, 0), clean_sample(1, {"bb"}, 1),
                   clean_sample(2, {"aa"}, 1), clean_sample(3, {"bb"}, 0)};
  Ratio tie = cacc(zero, mixed, m.vocab);
  CHECK(tie.hits == 2);
  CHECK(tie.total == 4);
}

TEST_CASE("unknown tokens flow through the oov embedding row") {
  SignModel m;
  // pooled("zz", "aa") = (-2 + 1) / 2 < 0 -> class 1.
  Dataset test;
  test.samples = {clean_sample(0, {"zz", "aa"}, 1)};
  CHECK(cacc(m.params, test, m.vocab).hits == 1);
}

TEST_CASE("clean accuracy rejects poisoned or empty test sets") {
  SignModel m;
  Dataset empty;
  CHECK_THROWS_AS(cacc(m.params, empty, m.vocab), ContractError);
  Dataset tainted;
  tainted.samples = {clean_sample(0, {"aa"}, 0), poison_sample(1, {"bb"}, 0, 0)};
  CHECK_THROWS_AS(cacc(m.params, tainted, m.vocab), ContractError);
}

TEST_CASE("attack success rate counts flips into the target class") {
  SignModel m;
  Dataset attack;
  attack.samples = {poison_sample(0, {"bb"}, 0, 0),   // lands in class 1: success
                    poison_sample(1, {"aa"}, 0, 1)};  // stays class 0: failure
  Ratio r = asr(m.params, attack, 1, m.vocab);
  CHECK(r.hits == 1);
  CHECK(r.total == 2);
  CHECK(r.value() == doctest::Approx(0.5));
}

TEST_CASE("attack success rate guards its preconditions") {
  SignModel m;
  Dataset empty;
  CHECK_THROWS_AS(asr(m.params, empty, 1, m.vocab), ContractError);

  Dataset untriggered;
  untriggered.samples = {clean_sample(0, {"bb"}, 0)};
  CHECK_THROWS_AS(asr(m.params, untriggered, 1, m.vocab), ContractError);

  Dataset already_target;
  already_target.samples = {poison_sample(0, {"bb"}, 1, 0)};
  CHECK_THROWS_AS(asr(m.params, already_target, 1, m.vocab), ContractError);
}

TEST_CASE("the linear probe separates separable feature clouds") {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  for (double x : {-3.0, -2.5, -2.0, -2.2, -2.8}) {
    features.push_back({x});
    labels.push_back(0);
  }
  for (double x : {2.0, 2.5, 3.0, 2.2, 2.8}) {
    features.push_back({x});
    labels.push_back(1);
  }
  CHECK(linear_probe_holdout(features, labels, 2, probe_config(), 0.4) == doctest::Approx(1.0));
}

TEST_CASE("the linear probe scores chance on indistinguishable features") {
  std::vector<std::vector<double>> features(8, std::vector<double>{0.5, -0.25});
  std::vector<int> labels = {0, 0, 0, 0, 1, 1, 1, 1};
  CHECK(linear_probe_holdout(features, labels, 2, probe_config(), 0.5) ==
        doctest::Approx(0.5));
}

TEST_CASE("the linear probe validates its inputs") {
  std::vector<std::vector<double>> features = {{1.0}, {2.0}};
  std::vector<int> labels = {0, 1};
  CHECK_THROWS_AS(linear_probe_holdout({}, {}, 2, probe_config(), 0.2), ContractError);
  CHECK_THROWS_AS(linear_probe_holdout(features, {0}, 2, probe_config(), 0.2), ContractError);
  CHECK_THROWS_AS(linear_probe_holdout(features, labels, 2, probe_config(), 0.0), ConfigError);
  CHECK_THROWS_AS(linear_probe_holdout(features, labels, 2, probe_config(), 1.0), ConfigError);
  CHECK_THROWS_AS(linear_probe_holdout(features, {0, 2}, 2, probe_config(), 0.2), ContractError);
  std::vector<std::vector<double>> ragged = {{1.0}, {2.0, 3.0}};
  CHECK_THROWS_AS(linear_probe_holdout(ragged, labels, 2, probe_config(), 0.2), ContractError);
  // A split that empties a class's training part is a configuration problem.
  CHECK_THROWS_AS(linear_probe_holdout(features, labels, 2, probe_config(), 0.4), ConfigError);
}

TEST_CASE("probing accuracy requires a balanced set and ignores both heads") {
  SignModel m;
  ProbingSet unbalanced;
  unbalanced.entries = {{clean_sample(0, {"aa"}, 0), 0},
                        {poison_sample(1, {"bb"}, 0, 0), 1},
                        {clean_sample(2, {"aa"}, 0), 0}};
  CHECK_THROWS_AS(probing_accuracy(m.params, unbalanced, m.vocab, probe_config(), 0.5),
                  ContractError);

  ProbingSet balanced;
  for (int i = 0; i < 6; ++i) {
    balanced.entries.push_back({clean_sample(2 * i, {"aa", "aa"}, 0), 0});
    balanced.entries.push_back({poison_sample(2 * i + 1, {"bb", "bb"}, 0, 2 * i), 1});
  }
  const double before = probing_accuracy(m.params, balanced, m.vocab, probe_config(), 0.5);
  CHECK(before == doctest::Approx(1.0));  // +1 vs -1 representations separate trivially

  ModelParams mutated = m.params;
  for (double& x : mutated.w_task.data) x = 1234.5;
  for (double& x : mutated.w_probe.data) x = -777.0;
  mutated.b_task.assign(mutated.b_task.size(), 3.0);
  mutated.b_probe.assign(mutated.b_probe.size(), -3.0);
  CHECK(probing_accuracy(mutated, balanced, m.vocab, probe_config(), 0.5) == before);
}

TEST_CASE("spearman correlation handles monotone series ties and degenerate input") {
  CHECK(spearman_correlation({1.0, 2.0, 3.0}, {10.0, 20.0, 30.0}) == doctest::Approx(1.0));
  CHECK(spearman_correlation({1.0, 2.0, 3.0}, {5.0, 1.0, -2.0}) == doctest::Approx(-1.0));
  CHECK(spearman_correlation({1.0, 1.0, 2.0}, {1.0, 2.0, 3.0}) ==
        doctest::Approx(1.5 / std::sqrt(3.0)));
  CHECK(spearman_correlation({4.0, 4.0, 4.0}, {1.0, 2.0, 3.0}) == 0.0);
  CHECK_THROWS_AS(spearman_correlation({1.0}, {2.0}), ContractError);
  CHECK_THROWS_AS(spearman_correlation({1.0, 2.0}, {1.0}), ContractError);
}

TEST_CASE("scenario and trick names parse and print consistently") {
  for (Scenario s : {Scenario::Default, Scenario::LowRate, Scenario::LabelConsistent,
                     Scenario::Cft}) {
    CHECK(parse_scenario(to_string(s)) == s);
  }
  for (Trick t : {Trick::None, Trick::Mt, Trick::Aug}) {
    CHECK(parse_trick(to_string(t)) == t);
  }
  try {
    parse_scenario("weird");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("low_rate") != std::string::npos);  // lists the valid names
  }
  CHECK_THROWS_AS(parse_trick("multi"), ConfigError);
}

TEST_CASE("the impossible augmentation cell is rejected up front") {
  CHECK_THROWS_AS(validate_cell(Scenario::LabelConsistent, Trick::Aug), ConfigError);
  CHECK_NOTHROW(validate_cell(Scenario::LabelConsistent, Trick::Mt));
  CHECK_NOTHROW(validate_cell(Scenario::Default, Trick::Aug));
  CHECK_NOTHROW(validate_cell(Scenario::Cft, Trick::Aug));
}

TEST_CASE("scenario presets pin rate selection and composition") {
  ExperimentSetup setup = small_setup();
  const std::uint64_t master = 42;

  PoisonPlan d = scenario_plan(Scenario::Default, Trick::None, setup, master);
  CHECK(d.poison_rate == 0.2);
  CHECK(d.selection == Selection::DirtyLabel);
  CHECK(d.composition == Composition::Replace);
  CHECK(d.target_label == 1);
  CHECK(d.seed == derive_seed(master, "select"));
  CHECK(d.trigger.seed == derive_seed(master, "trigger"));

  PoisonPlan d_mt = scenario_plan(Scenario::Default, Trick::Mt, setup, master);
  CHECK(d_mt.composition == d.composition);  // mt changes training, not poisoning
  CHECK(d_mt.seed == d.seed);

  CHECK(scenario_plan(Scenario::Default, Trick::Aug, setup, master).composition ==
        Composition::Augment);
  CHECK(scenario_plan(Scenario::LowRate, Trick::None, setup, master).poison_rate == 0.01);
  CHECK(scenario_plan(Scenario::LowRate, Trick::Aug, setup, master).composition ==
        Composition::Augment);

  PoisonPlan lc = scenario_plan(Scenario::LabelConsistent, Trick::None, setup, master);
  CHECK(lc.selection == Selection::LabelConsistent);
  CHECK(lc.poison_rate == 0.2);
  CHECK(lc.composition == Composition::Replace);

  CHECK(scenario_plan(Scenario::Cft, Trick::None, setup, master).composition ==
        Composition::Replace);
  CHECK(scenario_plan(Scenario::Cft, Trick::Aug, setup, master).composition ==
        Composition::FullAugment);
  CHECK_THROWS_AS(scenario_plan(Scenario::LabelConsistent, Trick::Aug, setup, master),
                  ConfigError);
}

TEST_CASE("corpus materialization derives its seeds from the master seed") {
  ExperimentSetup setup = small_setup();
  auto [train_a, test_a] = materialize_corpus(setup, 7);
  CHECK(train_a.size() == 40);  // floor(0.8 * 25) per class
  CHECK(test_a.size() == 10);

  setup.corpus.seed = 999;  // must be ignored in favor of the derived seed
  auto [train_b, test_b] = materialize_corpus(setup, 7);
  REQUIRE(train_b.size() == train_a.size());
  for (std::size_t i = 0; i < train_a.size(); ++i) {
    CHECK(train_a.samples[i] == train_b.samples[i]);
  }

  auto [train_c, test_c] = materialize_corpus(setup, 8);
  bool all_same = train_c.size() == train_a.size();
  if (all_same) {
    for (std::size_t i = 0; i < train_a.size(); ++i) {
      all_same = all_same && train_a.samples[i] == train_c.samples[i];
    }
  }
  CHECK_FALSE(all_same);
}

TEST_CASE("a full cell run produces a complete metrics report") {
  ExperimentSetup setup = small_setup();
  MetricsReport r = run_scenario(Scenario::Default, Trick::None, setup, 3);
  CHECK(r.scenario == "default");
  CHECK(r.trick == "none");
  CHECK(r.trigger == "rare_word_insertion");
  CHECK(r.seed == 3);
  CHECK(r.cacc.total == 10);
  CHECK(r.asr.total == 5);  // the five non-target test samples
  CHECK(r.probing_acc.has_value());  // K* has floor(0.2 * 40) = 8 pairs
  CHECK_FALSE(r.asr_pre_finetune.has_value());

  MetricsReport again = run_scenario(Scenario::Default, Trick::None, setup, 3);
  CHECK(again.cacc.hits == r.cacc.hits);
  CHECK(again.asr.hits == r.asr.hits);
  CHECK(*again.probing_acc == *r.probing_acc);
}

TEST_CASE("the fine tuning scenario records the pre tuning attack rate") {
  ExperimentSetup setup = small_setup();
  MetricsReport r = run_scenario(Scenario::Cft, Trick::None, setup, 4);
  CHECK(r.scenario == "cft");
  CHECK(r.asr_pre_finetune.has_value());
}

TEST_CASE("the metrics csv schema is pinned") {
  CHECK(metrics_csv_header() == "scenario,trick,trigger,seed,cacc,asr,probing_acc,n_test,n_attack");

  MetricsReport r;
  r.scenario = "default";
  r.trick = "mt";
  r.trigger = "rare_word_insertion";
  r.seed = 3;
  r.cacc = {45, 50};
  r.asr = {7, 10};
  r.probing_acc = 0.875;
  CHECK(metrics_csv_row(r) == "default,mt,rare_word_insertion,3,0.900000,0.700000,0.875000,50,10");

  r.probing_acc.reset();
  CHECK(metrics_csv_row(r) == "default,mt,rare_word_insertion,3,0.900000,0.700000,,50,10");
}

TEST_CASE("the json summary aggregates cells in first appearance order") {
  MetricsReport a1;
  a1.scenario = "default";
  a1.trick = "none";
  a1.trigger = "rare_word_insertion";
  a1.seed = 1;
  a1.cacc = {9, 10};
  a1.asr = {5, 10};
  a1.probing_acc = 0.8;
  MetricsReport a2 = a1;
  a2.seed = 2;
  a2.cacc = {8, 10};
  a2.asr = {7, 10};
  a2.probing_acc = 0.9;
  MetricsReport b1 = a1;
  b1.trick = "mt";
  b1.asr = {9, 10};
  b1.probing_acc = 0.95;
  MetricsReport b2 = b1;
  b2.seed = 2;
  b2.asr = {10, 10};
  b2.probing_acc = 0.99;

  const std::string text = summary_json({a1, a2, b1, b2});
  const auto j = nlohmann::json::parse(text);
  CHECK(j.at("n_rows") == 4);
  REQUIRE(j.at("cells").size() == 2);
  CHECK(j.at("cells")[0].at("trick") == "none");
  CHECK(j.at("cells")[1].at("trick") == "mt");
  CHECK(j.at("cells")[0].at("n_runs") == 2);
  CHECK(j.at("cells")[0].at("cacc").at("mean").get<double>() == doctest::Approx(0.85));
  CHECK(j.at("cells")[0].at("cacc").at("std").get<double>() ==
        doctest::Approx(std::sqrt(0.005)));  // sample standard deviation, n - 1
  CHECK(j.at("cells")[0].at("asr").at("mean").get<double>() == doctest::Approx(0.6));
  CHECK(j.at("cells")[1].at("probing_acc").at("mean").get<double>() == doctest::Approx(0.97));
  // Probing rises with attack success across these four rows.
  CHECK(j.at("spearman_probing_asr").get<double>() > 0.0);

  // A single probing row cannot support a correlation.
  const auto solo = nlohmann::json::parse(summary_json({a1}));
  CHECK_FALSE(solo.contains("spearman_probing_asr"));
}
