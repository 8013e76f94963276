#include "poisonlab/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "poisonlab/errors.hpp"
#include "poisonlab/seeds.hpp"

namespace poisonlab {

namespace {

// Endless deterministic minibatch source: shuffles once per full pass and
// never splits a batch across passes, so ceil(n / batch_size) next() calls
// consume exactly one permutation of the data.
class BatchStream {
 public:
  BatchStream(const Batch& full, int batch_size, std::uint64_t seed)
      : full_(full),
        batch_size_(static_cast<std::size_t>(batch_size)),
        rng_(seed),
        order_(full.token_ids.size()) {
    if (full.token_ids.empty()) throw ContractError("batch stream: empty data");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  Batch next() {
    if (pos_ >= order_.size()) reshuffle();
    const std::size_t take = std::min(batch_size_, order_.size() - pos_);
    Batch b;
    b.token_ids.reserve(take);
    b.labels.reserve(take);
    for (std::size_t k = 0; k < take; ++k) {
      const std::size_t idx = order_[pos_ + k];
      b.token_ids.push_back(full_.token_ids[idx]);
      b.labels.push_back(full_.labels[idx]);
    }
    pos_ += take;
    return b;
  }

  std::size_t batches_per_pass() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }

  const Batch& full_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

void add_scaled(ModelParams& acc, const ModelParams& g, double scale) {
  auto add = [scale](std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
  };
  add(acc.embedding.data, g.embedding.data);
  add(acc.w1.data, g.w1.data);
  add(acc.b1, g.b1);
  add(acc.w_task.data, g.w_task.data);
  add(acc.b_task, g.b_task);
  add(acc.w_probe.data, g.w_probe.data);
  add(acc.b_probe, g.b_probe);
}

void check_finite_loss(double loss, const char* what) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(what) + " loss became non-finite");
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TrainReport run_task_training(const ModelParams& init, const Batch& data,
                              const TrainConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  ModelParams params = init;
  OptimizerState opt = make_optimizer(cfg.algorithm, cfg.learning_rate, params);
  BatchStream stream(data, cfg.batch_size, derive_seed(cfg.shuffle_seed, "task"));

  TrainReport rep;
  rep.seed = cfg.shuffle_seed;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    const std::size_t n = stream.batches_per_pass();
    for (std::size_t b = 0; b < n; ++b) {
      const Batch mb = stream.next();
      auto [loss, g] = loss_and_grads(params, mb, Head::Task);
      check_finite_loss(loss, "task");
      step(params, g, opt);
      sum += loss;
    }
    rep.task_losses.push_back(sum / static_cast<double>(n));
    rep.train_accuracies.push_back(head_accuracy(params, data, Head::Task));
  }
  rep.final_params = std::move(params);
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train config: learning_rate must be positive and finite");
  }
  if (!(probe_loss_weight >= 0.0) || !std::isfinite(probe_loss_weight)) {
    throw ConfigError("train config: probe_loss_weight must be >= 0 and finite");
  }
}

Batch encode_dataset(const Dataset& ds, const Vocab& vocab) {
  Batch b;
  b.token_ids.reserve(ds.samples.size());
  b.labels.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    b.token_ids.push_back(encode(s, vocab));
    b.labels.push_back(s.label);
  }
  return b;
}

Batch encode_probing(const ProbingSet& ps, const Vocab& vocab) {
  Batch b;
  b.token_ids.reserve(ps.entries.size());
  b.labels.reserve(ps.entries.size());
  for (const auto& e : ps.entries) {
    b.token_ids.push_back(encode(e.sample, vocab));
    b.labels.push_back(e.label);
  }
  return b;
}

TrainReport train_classifier(const ModelParams& init, const Dataset& train, const Vocab& vocab,
                             const TrainConfig& cfg) {
  if (train.samples.empty()) throw ContractError("train_classifier: empty training set");
  return run_task_training(init, encode_dataset(train, vocab), cfg);
}

TrainReport train_backdoor(const ModelParams& init, const PoisonedDataset& poisoned,
                           const Vocab& vocab, const TrainConfig& cfg) {
  if (poisoned.dataset.samples.empty()) throw ContractError("train_backdoor: empty training set");
  return run_task_training(init, encode_dataset(poisoned.dataset, vocab), cfg);
}

TrainReport train_multitask(const ModelParams& init, const PoisonedDataset& poisoned,
                            const ProbingSet& probing, const Vocab& vocab,
                            const TrainConfig& cfg) {
  cfg.validate();
  if (poisoned.dataset.samples.empty()) throw ContractError("train_multitask: empty training set");
  if (probing.entries.empty()) throw ContractError("train_multitask: empty probing set");
  const auto t0 = std::chrono::steady_clock::now();

  const Batch task_data = encode_dataset(poisoned.dataset, vocab);
  const Batch probe_data = encode_probing(probing, vocab);

  ModelParams params = init;
  OptimizerState opt = make_optimizer(cfg.algorithm, cfg.learning_rate, params);
  BatchStream task_stream(task_data, cfg.batch_size, derive_seed(cfg.shuffle_seed, "task"));
  BatchStream probe_stream(probe_data, cfg.batch_size, derive_seed(cfg.shuffle_seed, "probe"));

  TrainReport rep;
  rep.seed = cfg.shuffle_seed;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double task_sum = 0.0;
    double probe_sum = 0.0;
    const std::size_t n = task_stream.batches_per_pass();
    for (std::size_t b = 0; b < n; ++b) {
      auto [task_loss, g] = loss_and_grads(params, task_stream.next(), Head::Task);
      auto [probe_loss, gp] = loss_and_grads(params, probe_stream.next(), Head::Probe);
      check_finite_loss(task_loss, "task");
      check_finite_loss(probe_loss, "probe");
      // Exactly zero weight adds nothing; skipping the add keeps the ablation
      // bit-identical to plain backdoor training.
      if (cfg.probe_loss_weight != 0.0) add_scaled(g, gp, cfg.probe_loss_weight);
      step(params, g, opt);
      task_sum += task_loss;
      probe_sum += probe_loss;
    }
    rep.task_losses.push_back(task_sum / static_cast<double>(n));
    rep.probe_losses.push_back(probe_sum / static_cast<double>(n));
    rep.train_accuracies.push_back(head_accuracy(params, task_data, Head::Task));
  }
  rep.final_params = std::move(params);
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

TrainReport clean_finetune(const ModelParams& trained, const Dataset& clean_train,
                           const Vocab& vocab, const TrainConfig& cfg) {
  for (const auto& s : clean_train.samples) {
    if (s.provenance.is_poison) {
      throw ContractError("clean_finetune: sample " + std::to_string(s.id) +
                          " has poison provenance");
    }
  }
  if (clean_train.samples.empty()) throw ContractError("clean_finetune: empty dataset");
  // Task-loss gradients are exactly zero on the probing head, so the head
  // stays frozen through fine-tuning without special handling.
  return run_task_training(trained, encode_dataset(clean_train, vocab), cfg);
}

}  // namespace poisonlab
