#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "caml/model.hpp"
#include "caml/numerics.hpp"

namespace caml {

struct GradcheckSetup {
  CamlParams params;
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> y;
  LabelDescriptions descriptions;
  LossConfig loss;
};

// Random tiny model: |V|=20, d_e=5, d_c=4, k=3, |L|=6, N=10.
inline GradcheckSetup tiny_gradcheck_setup(std::uint64_t seed, ModelKind kind, double lambda, double rho) {
  ModelDims dims{20, 5, 4, 3, 6};
  GradcheckSetup s;
  s.loss = {lambda, rho};
  s.params = init_params(kind, dims, lambda > 0.0, seed);
  Rng rng = Rng(seed).derive("gradcheck");
  // Embeddings drawn from U(-1, 1) rather than the default init.
  for (std::size_t i = 1; i < dims.vocab; ++i)
    for (double& x : s.params.embeddings.row(i)) x = rng.uniform(-1.0, 1.0);
  for (double& x : s.params.conv_bias.values()) x = rng.uniform(-0.5, 0.5);
  for (double& x : s.params.out_bias.values()) x = rng.uniform(-0.5, 0.5);
  if (s.params.desc)
    for (double& x : s.params.desc->conv_bias.values()) x = rng.uniform(-0.5, 0.5);
  for (int n = 0; n < 10; ++n) s.tokens.push_back(static_cast<TokenId>(1 + rng.below(dims.vocab - 1)));
  s.y.assign(dims.labels, 0);
  for (auto& v : s.y) v = rng.bernoulli(0.5) ? 1 : 0;
  s.y[0] = 1;
  s.descriptions.resize(dims.labels);
  for (auto& d : s.descriptions) {
    const std::size_t len = 1 + rng.below(4);
    for (std::size_t t = 0; t < len; ++t) d.push_back(static_cast<TokenId>(1 + rng.below(dims.vocab - 1)));
  }
  return s;
}

// Analytic vs. central-difference gradients of the per-example loss
// (dropout off). `inject_fault` flips the sign of the conv-weight gradient.
inline GradCheckReport run_gradcheck(GradcheckSetup& s, bool inject_fault = false, double tol = 1e-4) {
  const ForwardTrace tr = forward(s.params, s.tokens);
  CamlParams grads = example_gradients(tr, s.params, s.y, s.loss, s.descriptions);
  if (inject_fault)
    for (double& x : grads.conv_weight.values()) x = -x;
  auto objective = [&] {
    const ForwardTrace t = forward(s.params, s.tokens);
    return example_loss(s.params, t.yhat, s.y, s.loss, s.descriptions);
  };
  std::vector<TensorGradient> tensors;
  std::vector<const Matrix*> g;
  grads.for_each_tensor([&](std::string_view, const Matrix& m, bool) { g.push_back(&m); });
  std::size_t i = 0;
  s.params.for_each_tensor([&](std::string_view name, Matrix& m, bool) {
    if (!m.empty()) tensors.push_back({std::string(name), m.values(), g[i]->values()});
    ++i;
  });
  return finite_diff_check(objective, std::span<const TensorGradient>(tensors), 1e-5, tol);
}

inline nlohmann::json to_json(const GradCheckReport& r) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : r.tensors) {
    tensors.push_back({{"name", t.name}, {"entries", t.entries}, {"max_rel_error", t.max_rel_error},
                       {"flagged", t.flagged}});
  }
  return {{"tolerance", r.tolerance}, {"passed", r.passed()}, {"tensors", tensors}};
}

}  // namespace caml
