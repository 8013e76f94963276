#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"

namespace poisonlab {

// Dense row-major matrix; small enough here that anything fancier would be noise.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  static Matrix zeros(std::size_t r, std::size_t c) { return {r, c, std::vector<double>(r * c, 0.0)}; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Two-headed classifier: mean-pooled embeddings -> tanh backbone -> a task
// head over the class labels and a binary probing head sharing the backbone.
struct ModelParams {
  Matrix embedding;  // vocab_size x d_emb; row kPadIndex is all-zero and frozen
  Matrix w1;         // d_emb x d_hid
  std::vector<double> b1;
  Matrix w_task;  // d_hid x num_classes
  std::vector<double> b_task;
  Matrix w_probe;  // d_hid x 2
  std::vector<double> b_probe;

  std::size_t vocab_size() const { return embedding.rows; }
  std::size_t d_emb() const { return embedding.cols; }
  std::size_t d_hid() const { return w1.cols; }
  std::size_t num_classes() const { return w_task.cols; }
  std::size_t param_count() const;
};

enum class Head { Task, Probe };

struct ForwardTrace {
  std::vector<double> pooled;        // mean embedding, padding excluded
  std::vector<double> h;             // backbone representation
  std::vector<double> task_logits;   // num_classes
  std::vector<double> probe_logits;  // 2
};

// Pre-encoded minibatch. Labels index the selected head's classes.
struct Batch {
  std::vector<std::vector<int>> token_ids;
  std::vector<int> labels;
};

enum class Algorithm { Sgd, Adam };

struct OptimizerState {
  Algorithm algorithm = Algorithm::Adam;
  double learning_rate = 0.01;
  long step_count = 0;
  ModelParams m;  // first moments (adam only)
  ModelParams v;  // second moments (adam only)
};

ModelParams zeros_like(const ModelParams& params);

// Glorot-uniform weights with per-matrix scale sqrt(6/(fan_in+fan_out)),
// zero biases, zeroed padding embedding row; deterministic in seed.
ModelParams init_model(std::size_t vocab_size, std::size_t d_emb, std::size_t d_hid,
                       std::size_t num_classes, std::uint64_t seed);

ForwardTrace forward(const ModelParams& params, const std::vector<int>& token_ids);

// Backbone representation h only; reads the embedding table, w1, and b1 and
// nothing else (the probing analysis depends on the heads staying untouched).
std::vector<double> representation(const ModelParams& params, const std::vector<int>& token_ids);

// Index of the largest element; ties go to the lowest index so predictions
// are total and deterministic.
int argmax_lowest(const std::vector<double>& v);

// Fraction of batch samples whose selected-head argmax equals the label.
double head_accuracy(const ModelParams& params, const Batch& batch, Head head);

// Mean softmax cross-entropy of the selected head over the batch.
double batch_loss(const ModelParams& params, const Batch& batch, Head head);

// Loss plus exact analytic gradients for every parameter; the unselected
// head's gradients are zero, and embedding gradients touch only rows that
// appear in the batch.
std::pair<double, ModelParams> loss_and_grads(const ModelParams& params, const Batch& batch,
                                              Head head);

OptimizerState make_optimizer(Algorithm algorithm, double learning_rate,
                              const ModelParams& shape);

// One in-place optimizer update. SGD: p -= lr*g. Adam: bias-corrected update
// with beta1=0.9, beta2=0.999, eps=1e-8. The padding embedding row is never
// touched. Non-finite gradients raise NumericError.
void step(ModelParams& params, const ModelParams& grads, OptimizerState& state);

// Max relative error between analytic gradients and central finite
// differences over every parameter; relative error is
// |a - n| / max(|a|, |n|, 1e-12).
double finite_diff_check(const ModelParams& params, const Batch& batch, Head head, double eps);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const Vocab& vocab, const std::string& meta_json);
struct Checkpoint {
  ModelParams params;
  Vocab vocab;
  std::string meta_json;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace poisonlab
