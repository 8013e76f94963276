#include "poisonlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "poisonlab/errors.hpp"

namespace poisonlab {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void fill_glorot(Matrix& m, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
  std::uniform_real_distribution<double> dist(-s, s);
  for (double& x : m.data) x = dist(rng);
}

// (loss, dlogits) of softmax cross-entropy against label y.
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
  q[static_cast<std::size_t>(y)] -= 1.0;  // q is now dL/dlogits
  return {loss, std::move(q)};
}

void check_label(int label, std::size_t n_classes) {
  if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
    throw ContractError("loss: label " + std::to_string(label) + " out of range for " +
                        std::to_string(n_classes) + " classes");
  }
}

struct ArraySlot {
  std::vector<double>* value;
  // Elements in [skip_begin, skip_end) are frozen (the padding embedding row).
  std::size_t skip_begin = 0;
  std::size_t skip_end = 0;
};

std::vector<ArraySlot> slots(ModelParams& p) {
  const std::size_t pad_begin = static_cast<std::size_t>(Vocab::kPadIndex) * p.embedding.cols;
  return {{&p.embedding.data, pad_begin, pad_begin + p.embedding.cols},
          {&p.w1.data},
          {&p.b1},
          {&p.w_task.data},
          {&p.b_task},
          {&p.w_probe.data},
          {&p.b_probe}};
}

std::vector<const std::vector<double>*> arrays(const ModelParams& p) {
  return {&p.embedding.data, &p.w1.data,     &p.b1,     &p.w_task.data,
          &p.b_task,         &p.w_probe.data, &p.b_probe};
}

}  // namespace

std::size_t ModelParams::param_count() const {
  return embedding.data.size() + w1.data.size() + b1.size() + w_task.data.size() +
         b_task.size() + w_probe.data.size() + b_probe.size();
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z;
  z.embedding = Matrix::zeros(params.embedding.rows, params.embedding.cols);
  z.w1 = Matrix::zeros(params.w1.rows, params.w1.cols);
  z.b1.assign(params.b1.size(), 0.0);
  z.w_task = Matrix::zeros(params.w_task.rows, params.w_task.cols);
  z.b_task.assign(params.b_task.size(), 0.0);
  z.w_probe = Matrix::zeros(params.w_probe.rows, params.w_probe.cols);
  z.b_probe.assign(params.b_probe.size(), 0.0);
  return z;
}

ModelParams init_model(std::size_t vocab_size, std::size_t d_emb, std::size_t d_hid,
                       std::size_t num_classes, std::uint64_t seed) {
  if (vocab_size < 2 || d_emb < 1 || d_hid < 1 || num_classes < 2) {
    throw ConfigError("init_model: need vocab_size >= 2, dims >= 1, num_classes >= 2");
  }
  ModelParams p;
  p.embedding = Matrix::zeros(vocab_size, d_emb);
  p.w1 = Matrix::zeros(d_emb, d_hid);
  p.b1.assign(d_hid, 0.0);
  p.w_task = Matrix::zeros(d_hid, num_classes);
  p.b_task.assign(num_classes, 0.0);
  p.w_probe = Matrix::zeros(d_hid, 2);
  p.b_probe.assign(2, 0.0);

  std::mt19937_64 rng(seed);
  fill_glorot(p.embedding, rng);
  fill_glorot(p.w1, rng);
  fill_glorot(p.w_task, rng);
  fill_glorot(p.w_probe, rng);
  for (std::size_t i = 0; i < d_emb; ++i) p.embedding.at(Vocab::kPadIndex, i) = 0.0;
  return p;
}

namespace {

// Fills pooled and h; everything downstream of the backbone stays untouched.
void backbone(const ModelParams& params, const std::vector<int>& token_ids,
              std::vector<double>& pooled, std::vector<double>& h) {
  if (token_ids.empty()) throw ContractError("forward: empty token sequence");
  const std::size_t d_emb = params.d_emb();
  const std::size_t d_hid = params.d_hid();

  pooled.assign(d_emb, 0.0);
  std::size_t n = 0;
  for (int id : token_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= params.vocab_size()) {
      throw ContractError("forward: token id " + std::to_string(id) + " outside vocabulary");
    }
    if (id == Vocab::kPadIndex) continue;
    for (std::size_t i = 0; i < d_emb; ++i) {
      pooled[i] += params.embedding.at(static_cast<std::size_t>(id), i);
    }
    ++n;
  }
  if (n > 0) {
    for (double& x : pooled) x /= static_cast<double>(n);
  }

  h.assign(d_hid, 0.0);
  for (std::size_t j = 0; j < d_hid; ++j) {
    double z = params.b1[j];
    for (std::size_t i = 0; i < d_emb; ++i) z += pooled[i] * params.w1.at(i, j);
    h[j] = std::tanh(z);
  }
}

}  // namespace

std::vector<double> representation(const ModelParams& params, const std::vector<int>& token_ids) {
  std::vector<double> pooled;
  std::vector<double> h;
  backbone(params, token_ids, pooled, h);
  return h;
}

ForwardTrace forward(const ModelParams& params, const std::vector<int>& token_ids) {
  const std::size_t d_hid = params.d_hid();

  ForwardTrace t;
  backbone(params, token_ids, t.pooled, t.h);

  t.task_logits.assign(params.num_classes(), 0.0);
  for (std::size_t c = 0; c < t.task_logits.size(); ++c) {
    double z = params.b_task[c];
    for (std::size_t j = 0; j < d_hid; ++j) z += t.h[j] * params.w_task.at(j, c);
    t.task_logits[c] = z;
  }
  t.probe_logits.assign(2, 0.0);
  for (std::size_t c = 0; c < 2; ++c) {
    double z = params.b_probe[c];
    for (std::size_t j = 0; j < d_hid; ++j) z += t.h[j] * params.w_probe.at(j, c);
    t.probe_logits[c] = z;
  }
  return t;
}

int argmax_lowest(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

double head_accuracy(const ModelParams& params, const Batch& batch, Head head) {
  if (batch.token_ids.empty()) throw ContractError("head_accuracy: empty batch");
  std::size_t hits = 0;
  for (std::size_t k = 0; k < batch.token_ids.size(); ++k) {
    const ForwardTrace t = forward(params, batch.token_ids[k]);
    const auto& logits = head == Head::Task ? t.task_logits : t.probe_logits;
    hits += argmax_lowest(logits) == batch.labels[k];
  }
  return static_cast<double>(hits) / static_cast<double>(batch.token_ids.size());
}

double batch_loss(const ModelParams& params, const Batch& batch, Head head) {
  if (batch.token_ids.empty()) throw ContractError("batch_loss: empty batch");
  if (batch.token_ids.size() != batch.labels.size()) {
    throw ContractError("batch_loss: token/label count mismatch");
  }
  const std::size_t n_classes = head == Head::Task ? params.num_classes() : 2;
  double total = 0.0;
  for (std::size_t k = 0; k < batch.token_ids.size(); ++k) {
    check_label(batch.labels[k], n_classes);
    const ForwardTrace t = forward(params, batch.token_ids[k]);
    const auto& logits = head == Head::Task ? t.task_logits : t.probe_logits;
    total += softmax_ce(logits, batch.labels[k]).first;
  }
  return total / static_cast<double>(batch.token_ids.size());
}

std::pair<double, ModelParams> loss_and_grads(const ModelParams& params, const Batch& batch,
                                              Head head) {
  if (batch.token_ids.empty()) throw ContractError("loss_and_grads: empty batch");
  if (batch.token_ids.size() != batch.labels.size()) {
    throw ContractError("loss_and_grads: token/label count mismatch");
  }
  const std::size_t d_emb = params.d_emb();
  const std::size_t d_hid = params.d_hid();
  const std::size_t n_classes = head == Head::Task ? params.num_classes() : 2;
  const Matrix& w_head = head == Head::Task ? params.w_task : params.w_probe;

  ModelParams g = zeros_like(params);
  Matrix& gw_head = head == Head::Task ? g.w_task : g.w_probe;
  std::vector<double>& gb_head = head == Head::Task ? g.b_task : g.b_probe;

  const double inv_b = 1.0 / static_cast<double>(batch.token_ids.size());
  double total = 0.0;

  for (std::size_t k = 0; k < batch.token_ids.size(); ++k) {
    check_label(batch.labels[k], n_classes);
    const ForwardTrace t = forward(params, batch.token_ids[k]);
    const auto& logits = head == Head::Task ? t.task_logits : t.probe_logits;
    auto [loss, du] = softmax_ce(logits, batch.labels[k]);
    total += loss;

    for (std::size_t c = 0; c < n_classes; ++c) {
      gb_head[c] += du[c] * inv_b;
      for (std::size_t j = 0; j < d_hid; ++j) {
        gw_head.at(j, c) += t.h[j] * du[c] * inv_b;
      }
    }

    std::vector<double> dz(d_hid);
    for (std::size_t j = 0; j < d_hid; ++j) {
      double dh = 0.0;
      for (std::size_t c = 0; c < n_classes; ++c) dh += w_head.at(j, c) * du[c];
      dz[j] = dh * (1.0 - t.h[j] * t.h[j]);
      g.b1[j] += dz[j] * inv_b;
      for (std::size_t i = 0; i < d_emb; ++i) {
        g.w1.at(i, j) += t.pooled[i] * dz[j] * inv_b;
      }
    }

    std::vector<double> dp(d_emb, 0.0);
    for (std::size_t i = 0; i < d_emb; ++i) {
      for (std::size_t j = 0; j < d_hid; ++j) dp[i] += params.w1.at(i, j) * dz[j];
    }
    std::size_t n_real = 0;
    for (int id : batch.token_ids[k]) n_real += id != Vocab::kPadIndex;
    if (n_real == 0) continue;
    const double scale = inv_b / static_cast<double>(n_real);
    for (int id : batch.token_ids[k]) {
      if (id == Vocab::kPadIndex) continue;
      for (std::size_t i = 0; i < d_emb; ++i) {
        g.embedding.at(static_cast<std::size_t>(id), i) += dp[i] * scale;
      }
    }
  }
  return {total * inv_b, std::move(g)};
}

OptimizerState make_optimizer(Algorithm algorithm, double learning_rate,
                              const ModelParams& shape) {
  OptimizerState st;
  st.algorithm = algorithm;
  st.learning_rate = learning_rate;
  if (algorithm == Algorithm::Adam) {
    st.m = zeros_like(shape);
    st.v = zeros_like(shape);
  }
  return st;
}

void step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
  auto ps = slots(params);
  auto gs = arrays(grads);
  for (const auto* arr : gs) {
    for (double x : *arr) {
      if (!std::isfinite(x)) throw NumericError("optimizer step: non-finite gradient");
    }
  }

  ++state.step_count;
  if (state.algorithm == Algorithm::Sgd) {
    for (std::size_t a = 0; a < ps.size(); ++a) {
      auto& p = *ps[a].value;
      const auto& g = *gs[a];
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (i >= ps[a].skip_begin && i < ps[a].skip_end) continue;
        p[i] -= state.learning_rate * g[i];
      }
    }
    return;
  }

  auto ms = slots(state.m);
  auto vs = slots(state.v);
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
  const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t a = 0; a < ps.size(); ++a) {
    auto& p = *ps[a].value;
    const auto& g = *gs[a];
    auto& m = *ms[a].value;
    auto& v = *vs[a].value;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (i >= ps[a].skip_begin && i < ps[a].skip_end) continue;
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
      p[i] -= state.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kAdamEps);
    }
  }
}

double finite_diff_check(const ModelParams& params, const Batch& batch, Head head, double eps) {
  if (!(eps > 1e-8 && eps < 1e-3)) {
    throw ContractError("finite_diff_check: eps must lie in (1e-8, 1e-3)");
  }
  auto [loss, analytic] = loss_and_grads(params, batch, head);
  (void)loss;
  ModelParams probe = params;
  auto pv = slots(probe);
  auto av = slots(analytic);

  double worst = 0.0;
  for (std::size_t a = 0; a < pv.size(); ++a) {
    auto& arr = *pv[a].value;
    const auto& ga = *av[a].value;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const double orig = arr[i];
      arr[i] = orig + eps;
      const double lp = batch_loss(probe, batch, head);
      arr[i] = orig - eps;
      const double lm = batch_loss(probe, batch, head);
      arr[i] = orig;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double rel = std::abs(ga[i] - numeric) /
                         std::max({std::abs(ga[i]), std::abs(numeric), 1e-12});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

namespace {

nlohmann::ordered_json matrix_json(const Matrix& m) {
  return {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_from_json(const nlohmann::json& j, const std::string& name) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data")) {
    throw ConfigError("checkpoint: malformed array \"" + name + "\"");
  }
  Matrix m;
  m.rows = j.at("rows").get<std::size_t>();
  m.cols = j.at("cols").get<std::size_t>();
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != m.rows * m.cols) {
    throw ConfigError("checkpoint: array \"" + name + "\" has " +
                      std::to_string(m.data.size()) + " values, expected " +
                      std::to_string(m.rows * m.cols));
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const Vocab& vocab, const std::string& meta_json) {
  nlohmann::ordered_json j;
  j["format"] = "two-head-text-classifier/1";
  j["dims"] = {{"vocab_size", params.vocab_size()},
               {"d_emb", params.d_emb()},
               {"d_hid", params.d_hid()},
               {"num_classes", params.num_classes()}};
  j["embedding"] = matrix_json(params.embedding);
  j["w1"] = matrix_json(params.w1);
  j["b1"] = params.b1;
  j["w_task"] = matrix_json(params.w_task);
  j["b_task"] = params.b_task;
  j["w_probe"] = matrix_json(params.w_probe);
  j["b_probe"] = params.b_probe;
  j["vocab"] = vocab.index_to_token;
  j["meta"] = meta_json.empty() ? nlohmann::ordered_json(nullptr)
                                : nlohmann::ordered_json::parse(meta_json);

  std::ofstream out(path);
  if (!out) throw ConfigError("checkpoint: cannot write " + path.string());
  out << j.dump() << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("checkpoint: cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("checkpoint: " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "two-head-text-classifier/1") {
    throw ConfigError("checkpoint: " + path.string() + " has unknown format");
  }

  Checkpoint ck;
  ck.params.embedding = matrix_from_json(j.at("embedding"), "embedding");
  ck.params.w1 = matrix_from_json(j.at("w1"), "w1");
  ck.params.b1 = j.at("b1").get<std::vector<double>>();
  ck.params.w_task = matrix_from_json(j.at("w_task"), "w_task");
  ck.params.b_task = j.at("b_task").get<std::vector<double>>();
  ck.params.w_probe = matrix_from_json(j.at("w_probe"), "w_probe");
  ck.params.b_probe = j.at("b_probe").get<std::vector<double>>();

  ck.vocab.index_to_token = j.at("vocab").get<std::vector<std::string>>();
  if (ck.vocab.index_to_token.size() < 2 ||
      ck.vocab.index_to_token.size() != ck.params.vocab_size()) {
    throw ConfigError("checkpoint: vocab size does not match embedding table");
  }
  for (std::size_t i = 2; i < ck.vocab.index_to_token.size(); ++i) {
    ck.vocab.token_to_index[ck.vocab.index_to_token[i]] = static_cast<int>(i);
  }
  if (j.contains("meta") && !j.at("meta").is_null()) ck.meta_json = j.at("meta").dump();
  return ck;
}

}  // namespace poisonlab
