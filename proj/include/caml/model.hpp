#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "caml/corpus.hpp"
#include "caml/error.hpp"
#include "caml/numerics.hpp"

namespace caml {

enum class ModelKind { Caml, MaxPoolCnn };

inline std::string_view to_string(ModelKind k) {
  return k == ModelKind::Caml ? "caml" : "cnn";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "caml" || s == "drcaml" || s == "dr-caml") return ModelKind::Caml;
  if (s == "cnn" || s == "maxpool") return ModelKind::MaxPoolCnn;
  throw UsageError("unknown neural model kind: " + std::string(s));
}

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t embed_dim = 100;  // d_e
  std::size_t filters = 50;     // d_c
  std::size_t kernel = 10;      // k
  std::size_t labels = 0;       // |L|
};

// Convolution filters are stored as a d_c x (k * d_e) matrix: column
// t * d_e + i holds the weight of embedding dimension i at window offset t.
struct DescEmbedderParams {
  Matrix conv_weight;
  Matrix conv_bias;  // 1 x d_c
};

struct CamlParams {
  ModelKind kind = ModelKind::Caml;
  std::size_t kernel = 0;
  Matrix embeddings;   // |V| x d_e
  Matrix conv_weight;  // d_c x (k * d_e)
  Matrix conv_bias;    // 1 x d_c
  Matrix attention;    // |L| x d_c (0 x d_c for the max-pool baseline)
  Matrix out_weight;   // |L| x d_c
  Matrix out_bias;     // 1 x |L|
  std::optional<DescEmbedderParams> desc;

  std::size_t embed_dim() const { return embeddings.cols(); }
  std::size_t filters() const { return conv_weight.rows(); }
  std::size_t labels() const { return out_weight.rows(); }
  std::size_t vocab() const { return embeddings.rows(); }

  // Visits every tensor as (name, tensor, is_bias). Order is fixed and is
  // the order used by checkpoints and optimizer state.
  template <class F>
  void for_each_tensor(F&& f) {
    f(std::string_view("embeddings"), embeddings, false);
    f(std::string_view("conv_weight"), conv_weight, false);
    f(std::string_view("conv_bias"), conv_bias, true);
    f(std::string_view("attention"), attention, false);
    f(std::string_view("out_weight"), out_weight, false);
    f(std::string_view("out_bias"), out_bias, true);
    if (desc) {
      f(std::string_view("desc_conv_weight"), desc->conv_weight, false);
      f(std::string_view("desc_conv_bias"), desc->conv_bias, true);
    }
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<CamlParams*>(this)->for_each_tensor(
        [&](std::string_view name, const Matrix& m, bool bias) { f(name, m, bias); });
  }

  // Zero tensors of identical shape, used as a gradient accumulator.
  CamlParams zeros_like() const {
    CamlParams z = *this;
    z.for_each_tensor([](std::string_view, Matrix& m, bool) { m.fill(0.0); });
    return z;
  }

  void validate() const {
    const std::size_t de = embed_dim(), dc = filters(), nl = labels();
    auto fail = [](const std::string& what) { throw DataError("CamlParams: " + what); };
    if (kernel == 0) fail("kernel width must be positive");
    if (conv_weight.cols() != kernel * de) fail("conv_weight shape");
    if (conv_bias.rows() != 1 || conv_bias.cols() != dc) fail("conv_bias shape");
    if (kind == ModelKind::Caml && (attention.rows() != nl || attention.cols() != dc)) fail("attention shape");
    if (out_weight.cols() != dc) fail("out_weight shape");
    if (out_bias.rows() != 1 || out_bias.cols() != nl) fail("out_bias shape");
    if (desc && (desc->conv_weight.rows() != dc || desc->conv_weight.cols() != kernel * de ||
                 desc->conv_bias.cols() != dc)) {
      fail("description embedder shape");
    }
  }
};

inline void xavier_uniform(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : m.values()) x = rng.uniform(-bound, bound);
}

// Fresh parameters. Embeddings come from `embeddings` when given, otherwise
// from U(-0.5/d_e, 0.5/d_e); weights are Xavier-uniform; biases start at 0.
inline CamlParams init_params(ModelKind kind, const ModelDims& dims, bool with_desc_embedder,
                              std::uint64_t seed, const EmbeddingTable* embeddings = nullptr) {
  if (dims.vocab < 2 || dims.embed_dim == 0 || dims.filters == 0 || dims.kernel == 0 ||
      dims.labels == 0) {
    throw UsageError("init_params: all model dimensions must be positive");
  }
  Rng rng = Rng(seed).derive("init");
  CamlParams p;
  p.kind = kind;
  p.kernel = dims.kernel;
  if (embeddings) {
    if (embeddings->matrix.rows() != dims.vocab || embeddings->dim() != dims.embed_dim) {
      throw DataError("init_params: embedding table shape does not match model dimensions");
    }
    p.embeddings = embeddings->matrix;
  } else {
    p.embeddings = Matrix(dims.vocab, dims.embed_dim);
    for (std::size_t i = 1; i < dims.vocab; ++i) random_init_row(p.embeddings.row(i), rng);
  }
  for (double& x : p.embeddings.row(Vocabulary::kPad)) x = 0.0;

  const std::size_t window = dims.kernel * dims.embed_dim;
  p.conv_weight = Matrix(dims.filters, window);
  xavier_uniform(p.conv_weight, window, dims.filters * dims.kernel, rng);
  p.conv_bias = Matrix(1, dims.filters);
  if (kind == ModelKind::Caml) {
    p.attention = Matrix(dims.labels, dims.filters);
    xavier_uniform(p.attention, dims.filters, dims.labels, rng);
  } else {
    p.attention = Matrix(0, dims.filters);
  }
  p.out_weight = Matrix(dims.labels, dims.filters);
  xavier_uniform(p.out_weight, dims.filters, dims.labels, rng);
  p.out_bias = Matrix(1, dims.labels);
  if (with_desc_embedder) {
    DescEmbedderParams d{Matrix(dims.filters, window), Matrix(1, dims.filters)};
    xavier_uniform(d.conv_weight, window, dims.filters * dims.kernel, rng);
    p.desc = std::move(d);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Layers

// Zero padding for a width-k window that yields one output per input
// position. Even widths pad one more on the right.
inline std::size_t left_padding(std::size_t kernel) { return (kernel - 1) / 2; }

// Rows of the embedding table for `ids`, multiplied elementwise by `mask`
// when one is given (inverted dropout).
inline Matrix embed(std::span<const TokenId> ids, const Matrix& embeddings, const Matrix* mask = nullptr) {
  const std::size_t de = embeddings.cols();
  Matrix x(ids.size(), de);
  for (std::size_t n = 0; n < ids.size(); ++n) {
    const auto src = embeddings.row(static_cast<std::size_t>(ids[n]));
    auto dst = x.row(n);
    if (mask) {
      const auto m = mask->row(n);
      for (std::size_t i = 0; i < de; ++i) dst[i] = src[i] * m[i];
    } else {
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  return x;
}

// h_n = tanh(W * x_{window(n)} + b) for every position n; input is N x d_e,
// output is d_c x N.
inline Matrix conv_tanh_forward(const Matrix& input, const Matrix& weight, const Matrix& bias,
                                std::size_t kernel) {
  const std::size_t n_pos = input.rows();
  const std::size_t de = input.cols();
  const std::size_t dc = weight.rows();
  const std::size_t left = left_padding(kernel);
  Matrix h(dc, n_pos);
  std::vector<double> window(kernel * de);
  for (std::size_t n = 0; n < n_pos; ++n) {
    std::fill(window.begin(), window.end(), 0.0);
    for (std::size_t t = 0; t < kernel; ++t) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(n + t) - static_cast<std::ptrdiff_t>(left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(n_pos)) continue;
      const auto row = input.row(static_cast<std::size_t>(src));
      std::copy(row.begin(), row.end(), window.begin() + static_cast<std::ptrdiff_t>(t * de));
    }
    for (std::size_t j = 0; j < dc; ++j) {
      h(j, n) = std::tanh(bias(0, j) + dot(weight.row(j), window));
    }
  }
  return h;
}

// Backward pass of conv_tanh_forward. Accumulates into d_weight/d_bias and
// returns the gradient with respect to the N x d_e input.
inline Matrix conv_tanh_backward(const Matrix& input, const Matrix& output, const Matrix& d_output,
                                 const Matrix& weight, std::size_t kernel, Matrix& d_weight,
                                 Matrix& d_bias) {
  const std::size_t n_pos = input.rows();
  const std::size_t de = input.cols();
  const std::size_t dc = weight.rows();
  const std::size_t left = left_padding(kernel);
  Matrix d_input(n_pos, de);
  std::vector<double> dz(dc);
  for (std::size_t n = 0; n < n_pos; ++n) {
    for (std::size_t j = 0; j < dc; ++j) {
      const double h = output(j, n);
      dz[j] = d_output(j, n) * (1.0 - h * h);
      d_bias(0, j) += dz[j];
    }
    for (std::size_t t = 0; t < kernel; ++t) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(n + t) - static_cast<std::ptrdiff_t>(left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(n_pos)) continue;
      const auto x = input.row(static_cast<std::size_t>(src));
      auto dx = d_input.row(static_cast<std::size_t>(src));
      for (std::size_t j = 0; j < dc; ++j) {
        if (dz[j] == 0.0) continue;
        const double g = dz[j];
        const auto w = weight.row(j).subspan(t * de, de);
        auto dw = d_weight.row(j).subspan(t * de, de);
        for (std::size_t i = 0; i < de; ++i) {
          dw[i] += g * x[i];
          dx[i] += g * w[i];
        }
      }
    }
  }
  return d_input;
}

inline Matrix conv_forward(std::span<const TokenId> token_ids, const CamlParams& params,
                           const Matrix* dropout_mask = nullptr) {
  if (token_ids.empty()) throw DataError("conv_forward: empty document");
  return conv_tanh_forward(embed(token_ids, params.embeddings, dropout_mask), params.conv_weight,
                           params.conv_bias, params.kernel);
}

struct AttentionOutput {
  Matrix alpha;  // |L| x N, rows are distributions over positions
  Matrix values;  // |L| x d_c, row l is v_l
};

// alpha_l = softmax(H^T u_l); v_l = sum_n alpha_{l,n} h_n.
inline AttentionOutput attention_forward(const Matrix& h, const Matrix& attention) {
  const std::size_t dc = h.rows(), n_pos = h.cols(), nl = attention.rows();
  if (attention.cols() != dc) throw DataError("attention_forward: d_c mismatch");
  AttentionOutput out{Matrix(nl, n_pos), Matrix(nl, dc)};
  std::vector<double> logits(n_pos);
  for (std::size_t l = 0; l < nl; ++l) {
    const auto u = attention.row(l);
    for (std::size_t n = 0; n < n_pos; ++n) {
      double acc = 0.0;
      for (std::size_t j = 0; j < dc; ++j) acc += h(j, n) * u[j];
      logits[n] = acc;
    }
    const auto a = softmax(logits);
    std::copy(a.begin(), a.end(), out.alpha.row(l).begin());
    auto v = out.values.row(l);
    for (std::size_t j = 0; j < dc; ++j) {
      double acc = 0.0;
      for (std::size_t n = 0; n < n_pos; ++n) acc += a[n] * h(j, n);
      v[j] = acc;
    }
  }
  return out;
}

struct MaxPoolOutput {
  std::vector<double> values;       // v_j = max_n h_{j,n}
  std::vector<std::size_t> argmax;  // a_j, smallest n on ties
};

inline MaxPoolOutput maxpool_forward(const Matrix& h) {
  if (h.cols() == 0) throw DataError("maxpool_forward: no positions");
  MaxPoolOutput out{std::vector<double>(h.rows()), std::vector<std::size_t>(h.rows())};
  for (std::size_t j = 0; j < h.rows(); ++j) {
    std::size_t best = 0;
    for (std::size_t n = 1; n < h.cols(); ++n)
      if (h(j, n) > h(j, best)) best = n;
    out.values[j] = h(j, best);
    out.argmax[j] = best;
  }
  return out;
}

struct Classification {
  std::vector<double> logits;
  std::vector<double> probs;
};

// Per-label representations: row l of `values` scores label l.
inline Classification classify(const Matrix& values, const Matrix& out_weight, const Matrix& out_bias) {
  const std::size_t nl = out_weight.rows();
  Classification c{std::vector<double>(nl), std::vector<double>(nl)};
  for (std::size_t l = 0; l < nl; ++l) {
    c.logits[l] = dot(out_weight.row(l), values.row(l)) + out_bias(0, l);
    c.probs[l] = sigmoid(c.logits[l]);
  }
  return c;
}

// One shared representation for every label (max-pool baseline).
inline Classification classify(std::span<const double> shared, const Matrix& out_weight,
                               const Matrix& out_bias) {
  const std::size_t nl = out_weight.rows();
  Classification c{std::vector<double>(nl), std::vector<double>(nl)};
  for (std::size_t l = 0; l < nl; ++l) {
    c.logits[l] = dot(out_weight.row(l), shared) + out_bias(0, l);
    c.probs[l] = sigmoid(c.logits[l]);
  }
  return c;
}

struct DescEmbedding {
  Matrix input;   // embedded description, T x d_e
  Matrix hidden;  // d_c x T
  MaxPoolOutput pooled;
  const std::vector<double>& z() const { return pooled.values; }
};

// Description -> embed -> conv/tanh -> max-pool over positions.
inline DescEmbedding desc_embed(std::span<const TokenId> description, const DescEmbedderParams& desc,
                                const Matrix& embeddings, std::size_t kernel) {
  if (description.empty()) throw DataError("desc_embed: empty description");
  DescEmbedding e;
  e.input = embed(description, embeddings);
  e.hidden = conv_tanh_forward(e.input, desc.conv_weight, desc.conv_bias, kernel);
  e.pooled = maxpool_forward(e.hidden);
  return e;
}

// ---------------------------------------------------------------------------
// Full model

struct ForwardTrace {
  ModelKind kind = ModelKind::Caml;
  std::vector<TokenId> token_ids;
  Matrix dropout_mask;  // N x d_e, empty when dropout is off
  Matrix input;         // embedded (and masked) document, N x d_e
  Matrix hidden;        // H, d_c x N
  AttentionOutput attention;  // CAML only
  MaxPoolOutput pooled;       // max-pool baseline only
  std::vector<double> logits;
  std::vector<double> yhat;

  std::size_t length() const { return token_ids.size(); }
};

inline Matrix make_dropout_mask(std::size_t rows, std::size_t cols, double q, Rng& rng) {
  Matrix m(rows, cols);
  const double keep = 1.0 / (1.0 - q);
  for (double& x : m.values()) x = rng.uniform() < q ? 0.0 : keep;
  return m;
}

// `dropout_rng` enables train-time inverted dropout with probability q on
// the embedded document.
inline ForwardTrace forward(const CamlParams& params, std::span<const TokenId> token_ids,
                            double dropout = 0.0, Rng* dropout_rng = nullptr) {
  if (token_ids.empty()) throw DataError("forward: empty document");
  ForwardTrace tr;
  tr.kind = params.kind;
  tr.token_ids.assign(token_ids.begin(), token_ids.end());
  const Matrix* mask = nullptr;
  if (dropout_rng && dropout > 0.0) {
    tr.dropout_mask = make_dropout_mask(token_ids.size(), params.embed_dim(), dropout, *dropout_rng);
    mask = &tr.dropout_mask;
  }
  tr.input = embed(token_ids, params.embeddings, mask);
  tr.hidden = conv_tanh_forward(tr.input, params.conv_weight, params.conv_bias, params.kernel);
  Classification c;
  if (params.kind == ModelKind::Caml) {
    tr.attention = attention_forward(tr.hidden, params.attention);
    c = classify(tr.attention.values, params.out_weight, params.out_bias);
  } else {
    tr.pooled = maxpool_forward(tr.hidden);
    c = classify(tr.pooled.values, params.out_weight, params.out_bias);
  }
  tr.logits = std::move(c.logits);
  tr.yhat = std::move(c.probs);
  return tr;
}

inline std::vector<double> predict(const CamlParams& params, std::span<const TokenId> token_ids) {
  return forward(params, token_ids).yhat;
}

struct LossConfig {
  double lambda = 0.0;  // description-regularizer weight
  double rho = 0.0;     // squared-L2 penalty on non-bias tensors
};

inline constexpr double kProbClamp = 1e-12;

inline double bce(std::span<const double> yhat, std::span<const std::uint8_t> y) {
  double total = 0.0;
  for (std::size_t l = 0; l < yhat.size(); ++l) {
    const double p = std::clamp(yhat[l], kProbClamp, 1.0 - kProbClamp);
    total -= y[l] ? std::log(p) : std::log(1.0 - p);
  }
  return total;
}

inline double l2_penalty(const CamlParams& params) {
  double total = 0.0;
  params.for_each_tensor([&](std::string_view, const Matrix& m, bool bias) {
    if (!bias) total += squared_norm(m.values());
  });
  return total;
}

// Per-label description token ids, indexed like the label space. Empty
// entries mean "no description".
using LabelDescriptions = std::vector<std::vector<TokenId>>;

inline LabelDescriptions label_descriptions(const LabelSpace& space) {
  LabelDescriptions out(space.size());
  for (std::size_t l = 0; l < space.size(); ++l)
    if (space.has_description(l)) out[l] = space.description(l);
  return out;
}

inline std::size_t count_positive(std::span<const std::uint8_t> y) {
  std::size_t n = 0;
  for (auto v : y) n += v ? 1 : 0;
  return n;
}

inline const std::vector<TokenId>& required_description(const LabelDescriptions& descriptions,
                                                        std::size_t l) {
  if (l >= descriptions.size() || descriptions[l].empty()) {
    throw DataError("label index " + std::to_string(l) +
                    " has no description but the description regularizer is enabled");
  }
  return descriptions[l];
}

// lambda / n_y * sum over positive labels of ||z_l - beta_l||_2.
inline double description_penalty(const CamlParams& params, std::span<const std::uint8_t> y,
                                  const LabelDescriptions& descriptions) {
  if (!params.desc) throw UsageError("description penalty requires a description embedder");
  const std::size_t ny = count_positive(y);
  if (ny == 0) return 0.0;
  double total = 0.0;
  for (std::size_t l = 0; l < y.size(); ++l) {
    if (!y[l]) continue;
    const auto e = desc_embed(required_description(descriptions, l), *params.desc, params.embeddings,
                              params.kernel);
    const auto beta = params.out_weight.row(l);
    double sq = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) sq += (e.z()[j] - beta[j]) * (e.z()[j] - beta[j]);
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(ny);
}

// Per-example objective: BCE + rho * ||weights||^2 + lambda * description term.
inline double example_loss(const CamlParams& params, std::span<const double> yhat,
                           std::span<const std::uint8_t> y, const LossConfig& cfg,
                           const LabelDescriptions& descriptions = {}) {
  double total = bce(yhat, y);
  if (cfg.rho > 0.0) total += cfg.rho * l2_penalty(params);
  if (cfg.lambda > 0.0) total += cfg.lambda * description_penalty(params, y, descriptions);
  return total;
}

inline void add_scaled(Matrix& dst, const Matrix& src, double scale) {
  auto d = dst.values();
  const auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

// Gradient of rho * ||weights||^2, added into `grads`.
inline void add_l2_gradient(const CamlParams& params, double rho, CamlParams& grads) {
  if (rho <= 0.0) return;
  std::vector<const Matrix*> src;
  params.for_each_tensor([&](std::string_view, const Matrix& m, bool) { src.push_back(&m); });
  std::size_t i = 0;
  grads.for_each_tensor([&](std::string_view, Matrix& g, bool bias) {
    if (!bias) add_scaled(g, *src[i], 2.0 * rho);
    ++i;
  });
}

// Accumulates scale * d(BCE + lambda * description term)/d(params) into
// `grads`. L2 is added once per batch by add_l2_gradient. The <pad>
// embedding row never receives gradient.
inline void backward(const ForwardTrace& tr, const CamlParams& params, std::span<const std::uint8_t> y,
                     const LossConfig& cfg, CamlParams& grads, double scale = 1.0,
                     const LabelDescriptions& descriptions = {}) {
  const std::size_t nl = params.labels(), dc = params.filters(), n_pos = tr.length();
  if (y.size() != nl) throw DataError("backward: label vector size mismatch");

  // d loss / d logit for sigmoid + BCE (unclamped form).
  std::vector<double> dlogit(nl);
  for (std::size_t l = 0; l < nl; ++l) dlogit[l] = scale * (tr.yhat[l] - static_cast<double>(y[l]));

  Matrix d_hidden(dc, n_pos);
  for (std::size_t l = 0; l < nl; ++l) grads.out_bias(0, l) += dlogit[l];

  if (params.kind == ModelKind::Caml) {
    const Matrix& alpha = tr.attention.alpha;
    const Matrix& values = tr.attention.values;
    std::vector<double> dv(dc), dalpha(n_pos), dscore(n_pos);
    for (std::size_t l = 0; l < nl; ++l) {
      const double g = dlogit[l];
      if (g == 0.0) continue;
      const auto beta = params.out_weight.row(l);
      auto dbeta = grads.out_weight.row(l);
      for (std::size_t j = 0; j < dc; ++j) {
        dbeta[j] += g * values(l, j);
        dv[j] = g * beta[j];
      }
      const auto a = alpha.row(l);
      double weighted = 0.0;
      for (std::size_t n = 0; n < n_pos; ++n) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dc; ++j) acc += dv[j] * tr.hidden(j, n);
        dalpha[n] = acc;
        weighted += a[n] * acc;
      }
      for (std::size_t n = 0; n < n_pos; ++n) dscore[n] = a[n] * (dalpha[n] - weighted);
      const auto u = params.attention.row(l);
      auto du = grads.attention.row(l);
      for (std::size_t j = 0; j < dc; ++j) {
        double acc = 0.0;
        for (std::size_t n = 0; n < n_pos; ++n) {
          acc += dscore[n] * tr.hidden(j, n);
          d_hidden(j, n) += a[n] * dv[j] + dscore[n] * u[j];
        }
        du[j] += acc;
      }
    }
  } else {
    std::vector<double> dv(dc, 0.0);
    for (std::size_t l = 0; l < nl; ++l) {
      const double g = dlogit[l];
      if (g == 0.0) continue;
      const auto beta = params.out_weight.row(l);
      auto dbeta = grads.out_weight.row(l);
      for (std::size_t j = 0; j < dc; ++j) {
        dbeta[j] += g * tr.pooled.values[j];
        dv[j] += g * beta[j];
      }
    }
    for (std::size_t j = 0; j < dc; ++j) d_hidden(j, tr.pooled.argmax[j]) += dv[j];
  }

  const Matrix d_input = conv_tanh_backward(tr.input, tr.hidden, d_hidden, params.conv_weight,
                                            params.kernel, grads.conv_weight, grads.conv_bias);
  const std::size_t de = params.embed_dim();
  for (std::size_t n = 0; n < n_pos; ++n) {
    auto dst = grads.embeddings.row(static_cast<std::size_t>(tr.token_ids[n]));
    const auto src = d_input.row(n);
    if (tr.dropout_mask.empty()) {
      for (std::size_t i = 0; i < de; ++i) dst[i] += src[i];
    } else {
      const auto m = tr.dropout_mask.row(n);
      for (std::size_t i = 0; i < de; ++i) dst[i] += src[i] * m[i];
    }
  }

  if (cfg.lambda > 0.0) {
    if (!params.desc || !grads.desc) throw UsageError("lambda > 0 requires a description embedder");
    const std::size_t ny = count_positive(y);
    if (ny > 0) {
      const double w = scale * cfg.lambda / static_cast<double>(ny);
      for (std::size_t l = 0; l < nl; ++l) {
        if (!y[l]) continue;
        const auto& desc_ids = required_description(descriptions, l);
        const auto e = desc_embed(desc_ids, *params.desc, params.embeddings, params.kernel);
        const auto beta = params.out_weight.row(l);
        std::vector<double> diff(dc);
        double sq = 0.0;
        for (std::size_t j = 0; j < dc; ++j) {
          diff[j] = e.z()[j] - beta[j];
          sq += diff[j] * diff[j];
        }
        const double norm = std::sqrt(sq);
        if (norm == 0.0) continue;  // subgradient 0 at the kink
        auto dbeta = grads.out_weight.row(l);
        Matrix d_desc_hidden(dc, e.hidden.cols());
        for (std::size_t j = 0; j < dc; ++j) {
          const double g = w * diff[j] / norm;
          dbeta[j] -= g;
          d_desc_hidden(j, e.pooled.argmax[j]) += g;
        }
        const Matrix d_desc_input =
            conv_tanh_backward(e.input, e.hidden, d_desc_hidden, params.desc->conv_weight, params.kernel,
                               grads.desc->conv_weight, grads.desc->conv_bias);
        for (std::size_t t = 0; t < desc_ids.size(); ++t) {
          auto dst = grads.embeddings.row(static_cast<std::size_t>(desc_ids[t]));
          const auto src = d_desc_input.row(t);
          for (std::size_t i = 0; i < de; ++i) dst[i] += src[i];
        }
      }
    }
  }

  for (double& x : grads.embeddings.row(Vocabulary::kPad)) x = 0.0;
}

// Full gradient of example_loss for one document (dropout as recorded in
// the trace).
inline CamlParams example_gradients(const ForwardTrace& tr, const CamlParams& params,
                                    std::span<const std::uint8_t> y, const LossConfig& cfg,
                                    const LabelDescriptions& descriptions = {}) {
  CamlParams grads = params.zeros_like();
  backward(tr, params, y, cfg, grads, 1.0, descriptions);
  add_l2_gradient(params, cfg.rho, grads);
  for (double& x : grads.embeddings.row(Vocabulary::kPad)) x = 0.0;
  return grads;
}

}  // namespace caml
