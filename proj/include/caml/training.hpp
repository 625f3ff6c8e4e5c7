#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "caml/corpus.hpp"
#include "caml/error.hpp"
#include "caml/linear_baseline.hpp"
#include "caml/metrics.hpp"
#include "caml/model.hpp"
#include "caml/numerics.hpp"

namespace caml {

enum class ModelChoice { Caml, Cnn, Lr };

inline std::string_view to_string(ModelChoice m) {
  switch (m) {
    case ModelChoice::Caml: return "caml";
    case ModelChoice::Cnn: return "cnn";
    case ModelChoice::Lr: return "lr";
  }
  return "caml";
}

inline ModelChoice parse_model_choice(std::string_view s) {
  if (s == "caml" || s == "drcaml" || s == "dr-caml") return ModelChoice::Caml;
  if (s == "cnn" || s == "maxpool") return ModelChoice::Cnn;
  if (s == "lr" || s == "logreg") return ModelChoice::Lr;
  throw UsageError("unknown model: " + std::string(s) + " (expected caml, cnn or lr)");
}

struct TrainConfig {
  ModelChoice model = ModelChoice::Caml;
  std::size_t embed_dim = 100;
  std::size_t filters = 50;  // d_c
  std::size_t kernel = 10;   // k
  double dropout = 0.2;      // q
  double rho = 0.0;          // squared-L2 weight on non-bias tensors
  double eta = 1e-4;         // Adam learning rate
  double lambda = 0.0;       // description regularizer weight; > 0 enables DR-CAML
  std::size_t batch_size = 16;
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  std::size_t precision_n = 8;  // early-stopping metric P@n
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LrConfig lr;

  // Tuned values per model family: CAML d_c=50, k=10, eta=1e-4; the
  // max-pool CNN d_c=500, k=4, eta=3e-3; both q=0.2, rho=0.
  static TrainConfig defaults_for(ModelChoice m) {
    TrainConfig c;
    c.model = m;
    if (m == ModelChoice::Cnn) {
      c.filters = 500;
      c.kernel = 4;
      c.eta = 3e-3;
    }
    return c;
  }

  bool description_regularized() const { return model == ModelChoice::Caml && lambda > 0.0; }

  void validate() const {
    auto bad = [](const std::string& m) { throw UsageError("config: " + m); };
    if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout q must be in [0, 1)");
    if (!(eta > 0.0)) bad("eta must be positive");
    if (!(lambda >= 0.0)) bad("lambda must be >= 0");
    if (!(rho >= 0.0)) bad("rho must be >= 0");
    if (batch_size == 0) bad("batch_size must be positive");
    if (max_epochs == 0) bad("max_epochs must be positive");
    if (embed_dim == 0 || filters == 0 || kernel == 0) bad("model dimensions must be positive");
    if (precision_n == 0) bad("precision_n must be positive");
    if (lambda > 0.0 && model == ModelChoice::Cnn) bad("lambda > 0 is only defined for caml");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"model", std::string(to_string(c.model))},
          {"embed_dim", c.embed_dim},
          {"filters", c.filters},
          {"kernel", c.kernel},
          {"dropout", c.dropout},
          {"rho", c.rho},
          {"eta", c.eta},
          {"lambda", c.lambda},
          {"batch_size", c.batch_size},
          {"patience", c.patience},
          {"max_epochs", c.max_epochs},
          {"precision_n", c.precision_n},
          {"seed", c.seed},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"lr_epochs", c.lr.epochs},
          {"lr_step", c.lr.step},
          {"lr_l2", c.lr.l2},
          {"lr_absent_bias", c.lr.absent_bias}};
}

// Overwrites the fields present in `j`; unknown keys are rejected.
inline void apply_json(TrainConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config: expected a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "model") c.model = parse_model_choice(v.get<std::string>());
      else if (key == "embed_dim") c.embed_dim = v.get<std::size_t>();
      else if (key == "filters") c.filters = v.get<std::size_t>();
      else if (key == "kernel") c.kernel = v.get<std::size_t>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "rho") c.rho = v.get<double>();
      else if (key == "eta") c.eta = v.get<double>();
      else if (key == "lambda") c.lambda = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "patience") c.patience = v.get<std::size_t>();
      else if (key == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (key == "precision_n") c.precision_n = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "adam_beta1") c.adam_beta1 = v.get<double>();
      else if (key == "adam_beta2") c.adam_beta2 = v.get<double>();
      else if (key == "adam_eps") c.adam_eps = v.get<double>();
      else if (key == "lr_epochs") c.lr.epochs = v.get<std::size_t>();
      else if (key == "lr_step") c.lr.step = v.get<double>();
      else if (key == "lr_l2") c.lr.l2 = v.get<double>();
      else if (key == "lr_absent_bias") c.lr.absent_bias = v.get<double>();
      else throw UsageError("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("model")) c = TrainConfig::defaults_for(parse_model_choice(j["model"].get<std::string>()));
  apply_json(c, j);
  return c;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const CamlParams& p, double beta1 = 0.9, double beta2 = 0.999,
                              double eps = 1e-8) {
    AdamState s;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    p.for_each_tensor([&](std::string_view, const Matrix& x, bool) {
      s.m.emplace_back(x.rows(), x.cols());
      s.v.emplace_back(x.rows(), x.cols());
    });
    return s;
  }
};

// Bias-corrected Adam update of every tensor.
inline void adam_step(CamlParams& params, const CamlParams& grads, AdamState& state, double eta) {
  std::vector<const Matrix*> g;
  grads.for_each_tensor([&](std::string_view, const Matrix& x, bool) { g.push_back(&x); });
  if (g.size() != state.m.size()) throw DataError("adam_step: optimizer state does not match parameters");
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  std::size_t k = 0;
  params.for_each_tensor([&](std::string_view name, Matrix& p, bool) {
    if (!p.same_shape(*g[k]) || !p.same_shape(state.m[k])) {
      throw DataError("adam_step: shape mismatch for " + std::string(name));
    }
    auto pv = p.values();
    const auto gv = g[k]->values();
    auto mv = state.m[k].values();
    auto vv = state.v[k].values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = state.beta1 * mv[i] + (1.0 - state.beta1) * gv[i];
      vv[i] = state.beta2 * vv[i] + (1.0 - state.beta2) * gv[i] * gv[i];
      const double mhat = mv[i] / c1;
      const double vhat = vv[i] / c2;
      pv[i] -= eta * mhat / (std::sqrt(vhat) + state.eps);
    }
    ++k;
  });
}

// ---------------------------------------------------------------------------
// Early stopping

struct EarlyStopResult {
  std::size_t best_epoch = 0;  // 1-based
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t epochs_run = 0;
  std::vector<double> scores;
};

// Runs `epoch_fn(epoch)` for epochs 1, 2, ... and stops once `patience`
// epochs have passed without a strict improvement (ties keep the earlier
// epoch) or after max_epochs. `on_best(epoch, score)` fires on every new best.
template <class EpochFn, class OnBest>
EarlyStopResult run_early_stopping(std::size_t max_epochs, std::size_t patience, EpochFn&& epoch_fn,
                                   OnBest&& on_best) {
  EarlyStopResult r;
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    const double score = epoch_fn(epoch);
    r.scores.push_back(score);
    r.epochs_run = epoch;
    if (score > r.best_score || r.best_epoch == 0) {
      r.best_score = score;
      r.best_epoch = epoch;
      on_best(epoch, score);
    }
    if (epoch - r.best_epoch >= patience) break;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Datasets and training

struct Dataset {
  Vocabulary vocab;
  LabelSpace space;
  std::vector<EncodedDocument> train;
  std::vector<EncodedDocument> validation;
  std::vector<EncodedDocument> test;
  std::optional<EmbeddingTable> embeddings;

  const std::vector<EncodedDocument>& split(Split s) const {
    switch (s) {
      case Split::Train: return train;
      case Split::Validation: return validation;
      case Split::Test: return test;
    }
    return train;
  }
};

struct Checkpoint {
  TrainConfig config;
  std::optional<CamlParams> neural;
  std::optional<LrParams> lr;
  std::uint64_t vocab_hash = 0;
  std::uint64_t label_hash = 0;
  double best_validation_score = 0.0;  // P@n on validation
  std::size_t epoch = 0;
};

inline PredictionMatrix predictions_from(const std::vector<std::vector<double>>& scores,
                                         const std::vector<EncodedDocument>& docs, std::size_t labels,
                                         double threshold = 0.5) {
  PredictionMatrix pm;
  pm.threshold = threshold;
  pm.scores = Matrix(docs.size(), labels);
  pm.truth = Matrix(docs.size(), labels);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (scores[d].size() != labels || docs[d].label_vector.size() != labels) {
      throw DataError("prediction/label size mismatch for document " + docs[d].doc_id);
    }
    for (std::size_t l = 0; l < labels; ++l) {
      pm.scores(d, l) = scores[d][l];
      pm.truth(d, l) = docs[d].label_vector[l];
    }
  }
  return pm;
}

inline std::vector<double> score_document(const Checkpoint& ckpt, const EncodedDocument& doc) {
  if (ckpt.neural) return predict(*ckpt.neural, doc.token_ids);
  if (ckpt.lr) return lr_predict(BowVector::from_tokens(doc.token_ids), *ckpt.lr);
  throw DataError("checkpoint holds no model");
}

inline PredictionMatrix score_documents(const Checkpoint& ckpt, const std::vector<EncodedDocument>& docs,
                                        std::size_t labels) {
  std::vector<std::vector<double>> scores;
  scores.reserve(docs.size());
  for (const auto& d : docs) scores.push_back(score_document(ckpt, d));
  return predictions_from(scores, docs, labels);
}

inline std::size_t effective_precision_n(std::size_t requested, std::size_t labels) {
  return std::min(requested, labels);
}

struct EpochLog {
  std::size_t epoch = 0;
  double mean_train_loss = 0.0;
  double validation_score = 0.0;
  std::vector<double> batch_losses;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> history;
  EarlyStopResult stopping;
};

using EpochCallback = std::function<void(const EpochLog&)>;

inline ModelDims dims_for(const Dataset& data, const TrainConfig& cfg) {
  ModelDims d;
  d.vocab = data.vocab.size();
  d.embed_dim = data.embeddings ? data.embeddings->dim() : cfg.embed_dim;
  d.filters = cfg.filters;
  d.kernel = cfg.kernel;
  d.labels = data.space.size();
  return d;
}

// Minibatch Adam with early stopping on validation P@n. Returns the
// checkpoint of the best epoch.
inline TrainResult train_neural(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.train.empty()) throw DataError("train: training split is empty");
  if (data.validation.empty()) throw DataError("train: validation split is empty");
  if (data.embeddings && data.embeddings->dim() != cfg.embed_dim) {
    throw DataError("train: embedding table has d_e=" + std::to_string(data.embeddings->dim()) +
                    " but config embed_dim=" + std::to_string(cfg.embed_dim));
  }
  const ModelKind kind = cfg.model == ModelChoice::Cnn ? ModelKind::MaxPoolCnn : ModelKind::Caml;
  const bool dr = cfg.description_regularized();
  const LabelDescriptions descriptions = dr ? label_descriptions(data.space) : LabelDescriptions{};
  if (dr) {
    for (std::size_t l = 0; l < data.space.size(); ++l) {
      if (!data.space.has_description(l)) {
        throw DataError("label " + data.space.labels[l] + " lacks a description but lambda > 0");
      }
    }
  }
  const LossConfig loss_cfg{cfg.lambda, cfg.rho};

  CamlParams params = init_params(kind, dims_for(data, cfg), dr, cfg.seed,
                                  data.embeddings ? &*data.embeddings : nullptr);
  AdamState adam = AdamState::for_params(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  Rng root(cfg.seed);
  Rng shuffle_rng = root.derive("shuffle");
  Rng dropout_rng = root.derive("dropout");
  const std::size_t p_n = effective_precision_n(cfg.precision_n, data.space.size());

  TrainResult result;
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto run_epoch = [&](std::size_t epoch) {
    EpochLog log;
    log.epoch = epoch;
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      CamlParams grads = params.zeros_like();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& doc = data.train[order[i]];
        const ForwardTrace tr = forward(params, doc.token_ids, cfg.dropout, &dropout_rng);
        double doc_loss = bce(tr.yhat, doc.label_vector);
        if (dr) doc_loss += cfg.lambda * description_penalty(params, doc.label_vector, descriptions);
        batch_loss += scale * doc_loss;
        backward(tr, params, doc.label_vector, loss_cfg, grads, scale, descriptions);
      }
      if (cfg.rho > 0.0) {
        batch_loss += cfg.rho * l2_penalty(params);
        add_l2_gradient(params, cfg.rho, grads);
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch));
      }
      adam_step(params, grads, adam, cfg.eta);
      log.batch_losses.push_back(batch_loss);
      loss_sum += batch_loss * static_cast<double>(end - start);
    }
    log.mean_train_loss = loss_sum / static_cast<double>(order.size());
    Checkpoint probe;
    probe.neural = params;
    const PredictionMatrix pm = score_documents(probe, data.validation, data.space.size());
    log.validation_score = precision_at_n(pm, p_n);
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
    return log.validation_score;
  };

  auto on_best = [&](std::size_t epoch, double score) {
    result.best.neural = params;
    result.best.epoch = epoch;
    result.best.best_validation_score = score;
  };

  result.stopping = run_early_stopping(cfg.max_epochs, cfg.patience, run_epoch, on_best);
  result.best.config = cfg;
  result.best.vocab_hash = data.vocab.hash();
  result.best.label_hash = data.space.hash();
  return result;
}

inline TrainResult train_lr(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  auto fit = lr_train(data.train, data.vocab.size(), data.space.size(), cfg.lr);
  TrainResult result;
  result.best.config = cfg;
  result.best.lr = std::move(fit.params);
  result.best.vocab_hash = data.vocab.hash();
  result.best.label_hash = data.space.hash();
  result.best.epoch = cfg.lr.epochs;
  if (!data.validation.empty()) {
    const auto pm = score_documents(result.best, data.validation, data.space.size());
    result.best.best_validation_score =
        precision_at_n(pm, effective_precision_n(cfg.precision_n, data.space.size()));
  }
  EpochLog log;
  log.epoch = cfg.lr.epochs;
  log.mean_train_loss = fit.objective.empty() ? 0.0 : fit.objective.back();
  log.validation_score = result.best.best_validation_score;
  result.history.push_back(log);
  return result;
}

inline TrainResult train(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (cfg.model == ModelChoice::Lr) return train_lr(data, cfg);
  return train_neural(data, cfg, on_epoch);
}

}  // namespace caml
