#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "caml/corpus.hpp"
#include "caml/error.hpp"
#include "caml/numerics.hpp"

namespace caml {

// Sparse unigram counts, sorted by token index.
struct BowVector {
  std::vector<std::pair<TokenId, double>> entries;

  static BowVector from_tokens(std::span<const TokenId> ids) {
    std::map<TokenId, double> counts;
    for (auto id : ids) counts[id] += 1.0;
    return BowVector{{counts.begin(), counts.end()}};
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& [id, c] : entries) s += c * c;
    return s;
  }
};

struct LrConfig {
  std::size_t epochs = 300;
  double step = 1.0;  // upper bound; clipped to 1 / (Lipschitz bound)
  double l2 = 1e-4;
  double absent_bias = -10.0;  // bias for labels never positive in training
};

struct LrParams {
  Matrix weights;  // |L| x |V|
  Matrix bias;     // 1 x |L|
  std::vector<std::uint8_t> trained;  // label had >= 1 positive training doc

  std::size_t labels() const { return weights.rows(); }
  std::size_t vocab() const { return weights.cols(); }
  double weight(std::size_t label, TokenId token) const {
    return weights(label, static_cast<std::size_t>(token));
  }
};

struct LrTrainResult {
  LrParams params;
  std::vector<double> objective;  // per epoch, before that epoch's update
  double step = 0.0;
};

inline double lr_score(const BowVector& x, const LrParams& p, std::size_t label) {
  double z = p.bias(0, label);
  const auto w = p.weights.row(label);
  for (const auto& [id, c] : x.entries) z += w[static_cast<std::size_t>(id)] * c;
  return sigmoid(z);
}

inline std::vector<double> lr_predict(const BowVector& x, const LrParams& p) {
  std::vector<double> out(p.labels());
  for (std::size_t l = 0; l < out.size(); ++l) out[l] = lr_score(x, p, l);
  return out;
}

// Largest eigenvalue of (1/D) X'X for the design matrix with a constant
// bias column appended, by power iteration from the all-ones vector.
inline double gram_spectral_norm(const std::vector<BowVector>& xs, std::size_t vocab_size,
                                 std::size_t iterations = 100) {
  std::vector<double> v(vocab_size + 1, 1.0), next(vocab_size + 1);
  double lambda = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    const double norm = std::sqrt(dot(v, v));
    if (norm == 0.0) return 0.0;
    for (double& x : v) x /= norm;
    std::fill(next.begin(), next.end(), 0.0);
    for (const auto& x : xs) {
      double xv = v[vocab_size];
      for (const auto& [id, c] : x.entries) xv += c * v[static_cast<std::size_t>(id)];
      for (const auto& [id, c] : x.entries) next[static_cast<std::size_t>(id)] += c * xv;
      next[vocab_size] += xv;
    }
    for (double& x : next) x /= static_cast<double>(xs.size());
    lambda = dot(v, next);
    std::swap(v, next);
  }
  return lambda;
}

namespace detail {

// Full-batch gradient descent for one label; returns the objective before
// each epoch's update.
inline std::vector<double> lr_fit_label(const std::vector<BowVector>& xs, const std::vector<EncodedDocument>& train,
                                        std::size_t label, double step, const LrConfig& cfg,
                                        std::span<double> w, double& b) {
  const double inv_d = 1.0 / static_cast<double>(xs.size());
  std::vector<double> objective(cfg.epochs, 0.0);
  std::vector<double> grad(w.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double gb = 0.0;
    double obj = cfg.l2 * squared_norm(w);
    for (std::size_t d = 0; d < xs.size(); ++d) {
      double z = b;
      for (const auto& [id, c] : xs[d].entries) z += w[static_cast<std::size_t>(id)] * c;
      const double y = train[d].label_vector[label];
      // log(1 + e^z) - y z, computed stably.
      obj += inv_d * ((z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) - y * z);
      const double r = inv_d * (sigmoid(z) - y);
      gb += r;
      for (const auto& [id, c] : xs[d].entries) grad[static_cast<std::size_t>(id)] += r * c;
    }
    objective[epoch] = obj;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step * (grad[i] + 2.0 * cfg.l2 * w[i]);
    b -= step * gb;
  }
  return objective;
}

}  // namespace detail

// One-vs-rest logistic regression on raw unigram counts, fit per label by
// full-batch gradient descent on
//   (1/D) sum_d logloss(w_l . x_d + b_l, y_dl) + l2 * ||w_l||^2.
// The step is capped at 1/Lip with Lip = lambda_max((1/D) X'X)/4 + 2*l2
// (X with a bias column, eigenvalue estimate inflated by 5%). Labels are fit
// on separate threads; each owns its weight row.
inline LrTrainResult lr_train(const std::vector<EncodedDocument>& train, std::size_t vocab_size,
                              std::size_t num_labels, const LrConfig& cfg = {}) {
  if (train.empty()) throw DataError("lr_train: no training documents");
  std::vector<BowVector> xs;
  xs.reserve(train.size());
  for (const auto& d : train) {
    if (d.label_vector.size() != num_labels) throw DataError("lr_train: label vector size mismatch");
    for (auto id : d.token_ids)
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) throw DataError("lr_train: token id out of range");
    xs.push_back(BowVector::from_tokens(d.token_ids));
  }
  const double lip = 1.05 * gram_spectral_norm(xs, vocab_size) / 4.0 + 2.0 * cfg.l2;
  const double step = std::min(cfg.step, 1.0 / lip);

  LrTrainResult result;
  result.step = step;
  LrParams& p = result.params;
  p.weights = Matrix(num_labels, vocab_size);
  p.bias = Matrix(1, num_labels);
  p.trained.assign(num_labels, 0);
  for (const auto& d : train)
    for (std::size_t l = 0; l < num_labels; ++l) p.trained[l] |= d.label_vector[l];
  for (std::size_t l = 0; l < num_labels; ++l)
    if (!p.trained[l]) p.bias(0, l) = cfg.absent_bias;

  std::vector<std::vector<double>> per_label(num_labels);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t l = next++; l < num_labels; l = next++) {
      if (p.trained[l]) per_label[l] = detail::lr_fit_label(xs, train, l, step, cfg, p.weights.row(l), p.bias(0, l));
    }
  };
  const std::size_t n_threads =
      std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), num_labels));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  result.objective.assign(cfg.epochs, 0.0);
  for (const auto& obj : per_label)
    for (std::size_t e = 0; e < obj.size(); ++e) result.objective[e] += obj[e];
  return result;
}

}  // namespace caml
