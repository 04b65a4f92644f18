#pragma once

// Non-local self-attention over a latent vector viewed as S positions x F features:
//   Z = reshape(z, S, F)
//   A = softmax_rows((Z W_theta^T)(Z W_phi^T)^T) (Z W_g^T)
//   out = flatten(A W_alpha^T) + z
// With S = 1 the affinity is the constant 1 and the block is a linear residual map.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "vmloc/init.hpp"
#include "vmloc/ops.hpp"

namespace vmloc {

struct AttentionConfig {
  bool enabled = true;
  std::size_t positions = 16;
  std::size_t embed_dim = 0;  // 0: F / 2, at least 1
  bool literal_scalar = false;  // single position: softmax over one scalar

  std::size_t effective_positions() const { return literal_scalar ? 1 : positions; }
};

struct AttentionBlock {
  std::size_t positions = 1;
  std::size_t features = 1;
  std::size_t embed = 1;
  Parameter w_theta;  // [E x F]
  Parameter w_phi;    // [E x F]
  Parameter w_g;      // [E x F]
  Parameter w_alpha;  // [F x E]

  std::size_t dim() const { return positions * features; }
  std::vector<Parameter*> parameters() { return {&w_theta, &w_phi, &w_g, &w_alpha}; }
};

template <class Rng>
AttentionBlock make_attention_block(std::size_t latent_dim, const AttentionConfig& cfg, Rng& rng) {
  const std::size_t s = cfg.effective_positions();
  if (s == 0 || latent_dim % s != 0)
    throw ConfigError("attention.positions=" + std::to_string(s) + " does not divide latent dim " +
                      std::to_string(latent_dim));
  AttentionBlock b;
  b.positions = s;
  b.features = latent_dim / s;
  b.embed = cfg.embed_dim > 0 ? cfg.embed_dim : std::max<std::size_t>(1, b.features / 2);
  const std::size_t e = b.embed, f = b.features;
  b.w_theta = {"attention.w_theta", glorot_normal(e, f, rng), ParamGroup::decoder};
  b.w_phi = {"attention.w_phi", glorot_normal(e, f, rng), ParamGroup::decoder};
  b.w_g = {"attention.w_g", glorot_normal(e, f, rng), ParamGroup::decoder};
  // small output map so the block starts close to the identity
  b.w_alpha = {"attention.w_alpha", glorot_normal(f, e, rng, 0.1), ParamGroup::decoder};
  return b;
}

namespace ops {

struct AttentionWeights {
  Var w_theta, w_phi, w_g, w_alpha;
};

inline Var affinity_rows(const Var& zr, const AttentionWeights& w, std::size_t n) {
  const Var th = matmul(zr, transpose(w.w_theta));
  const Var ph = matmul(zr, transpose(w.w_phi));
  return softmax_rows(batched_matmul(th, ph, n, /*transpose_b=*/true));
}

// z: [n x S*F], one latent vector per row.
inline Var non_local_rows(const Var& z, const AttentionWeights& w, std::size_t positions) {
  const std::size_t n = z.rows(), d = z.cols();
  if (positions == 0 || d % positions != 0)
    throw ConfigError("attention: latent dim " + std::to_string(d) + " does not split into " +
                      std::to_string(positions) + " positions");
  const std::size_t f = d / positions;
  if (w.w_theta.cols() != f || w.w_alpha.rows() != f)
    throw DimensionError("attention: weights are for " + std::to_string(w.w_theta.cols()) +
                         " features, input has " + std::to_string(f));
  const Var zr = reshape(z, {n * positions, f});
  const Var aff = affinity_rows(zr, w, n);
  const Var a = batched_matmul(aff, matmul(zr, transpose(w.w_g)), n);
  return add(reshape(matmul(a, transpose(w.w_alpha)), {n, d}), z);
}

inline AttentionWeights bind(Graph& g, AttentionBlock& b) {
  return {g.param(b.w_theta), g.param(b.w_phi), g.param(b.w_g), g.param(b.w_alpha)};
}

inline Var attend_rows(Graph& g, AttentionBlock& b, const Var& z) {
  return non_local_rows(z, bind(g, b), b.positions);
}

}  // namespace ops

inline std::vector<double> attend(AttentionBlock& b, std::span<const double> z) {
  if (z.size() != b.dim())
    throw ConfigError("attention: input length " + std::to_string(z.size()) + " != S*F = " +
                      std::to_string(b.dim()));
  Graph g;
  const Var out = ops::attend_rows(g, b, g.constant(Tensor::matrix(1, z.size(), {z.begin(), z.end()})));
  return out.value().vec();
}

// [S x S] row-stochastic affinity matrix for a single latent vector.
inline Tensor attention_affinity(AttentionBlock& b, std::span<const double> z) {
  Graph g;
  const Var zr = g.constant(Tensor::matrix(b.positions, b.features, {z.begin(), z.end()}));
  return ops::affinity_rows(zr, ops::bind(g, b), 1).value();
}

}  // namespace vmloc
