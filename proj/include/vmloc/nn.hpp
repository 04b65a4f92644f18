#pragma once

// Dense building blocks: per-modality Gaussian encoders and the pose regressor.

#include <random>
#include <string>
#include <vector>

#include "vmloc/gaussian.hpp"
#include "vmloc/init.hpp"
#include "vmloc/pose.hpp"

namespace vmloc {

struct Dense {
  Parameter w;  // [in x out]
  Parameter b;  // [1 x out]

  Dense() = default;
  template <class Rng>
  Dense(const std::string& name, std::size_t in, std::size_t out, ParamGroup group, Rng& rng, double gain = 1.0)
      : w(name + ".w", glorot_normal(in, out, rng, gain), group), b(name + ".b", Tensor({1, out}, 0.0), group) {}

  std::size_t in() const { return w.value.rows(); }
  std::size_t out() const { return w.value.cols(); }
  Var operator()(Graph& g, const Var& x) { return ops::linear(x, g.param(w), g.param(b)); }
};

// Inverted dropout during training; identity otherwise.
template <class Rng>
Var dropout(const Var& x, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  VMLOC_EXPECTS(p < 1.0, "dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(x.shape());
  for (auto& m : mask.data()) m = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
  return ops::mul_const(x, mask);
}

struct EncoderConfig {
  std::size_t input_dim = 1;
  std::vector<std::size_t> widths{64, 64};
  std::size_t latent_dim = 64;
  double dropout = 0.5;
};

// Relu trunk with two parallel heads: mean and log-sigma of a Gaussian expert.
struct Encoder {
  std::vector<Dense> trunk;
  Dense mu_head;
  Dense log_sigma_head;
  double dropout_rate = 0.0;

  Encoder() = default;
  template <class Rng>
  Encoder(const std::string& name, const EncoderConfig& cfg, Rng& rng) : dropout_rate(cfg.dropout) {
    VMLOC_EXPECTS(cfg.input_dim > 0 && cfg.latent_dim > 0, "encoder dimensions must be positive");
    std::size_t in = cfg.input_dim;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      trunk.emplace_back(name + ".trunk" + std::to_string(i), in, cfg.widths[i], ParamGroup::encoder, rng);
      in = cfg.widths[i];
    }
    mu_head = Dense(name + ".mu", in, cfg.latent_dim, ParamGroup::encoder, rng);
    log_sigma_head = Dense(name + ".log_sigma", in, cfg.latent_dim, ParamGroup::encoder, rng, 0.1);
  }

  std::size_t input_dim() const { return trunk.empty() ? mu_head.in() : trunk.front().in(); }
  std::size_t latent_dim() const { return mu_head.out(); }

  // x: [n x input_dim]. Pass an rng to enable dropout (training).
  template <class Rng = std::mt19937_64>
  ops::ExpertVars operator()(Graph& g, const Var& x, const Tensor& mask, Rng* rng = nullptr) {
    if (x.cols() != input_dim())
      throw DimensionError("encoder expects " + std::to_string(input_dim()) + " features, got " +
                           std::to_string(x.cols()));
    Var h = x;
    for (auto& layer : trunk) h = dropout(ops::relu(layer(g, h)), dropout_rate, rng);
    return {mu_head(g, h), log_sigma_head(g, h), mask};
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : trunk) out.insert(out.end(), {&l.w, &l.b});
    out.insert(out.end(), {&mu_head.w, &mu_head.b, &log_sigma_head.w, &log_sigma_head.b});
    return out;
  }
};

struct PoseRows {
  Var p;  // [n x 3]
  Var q;  // [n x 4], unit norm, u >= 0
};

// Two parallel two-layer networks: position and orientation.
struct PoseRegressor {
  Dense p_hidden, p_out, q_hidden, q_out;

  PoseRegressor() = default;
  template <class Rng>
  PoseRegressor(std::size_t latent_dim, std::size_t hidden, Rng& rng)
      : p_hidden("regressor.p0", latent_dim, hidden, ParamGroup::decoder, rng),
        p_out("regressor.p1", hidden, 3, ParamGroup::decoder, rng),
        q_hidden("regressor.q0", latent_dim, hidden, ParamGroup::decoder, rng),
        q_out("regressor.q1", hidden, 4, ParamGroup::decoder, rng, 0.1) {
    q_out.b.value[0] = 1.0;  // start near the identity rotation
  }

  std::size_t latent_dim() const { return p_hidden.in(); }

  PoseRows operator()(Graph& g, const Var& z) {
    const Var p = p_out(g, ops::relu(p_hidden(g, z)));
    const Var raw = q_out(g, ops::relu(q_hidden(g, z)));
    return {p, ops::canonicalize_quat_rows(ops::normalize_rows(raw))};
  }

  std::vector<Parameter*> parameters() {
    return {&p_hidden.w, &p_hidden.b, &p_out.w, &p_out.b, &q_hidden.w, &q_hidden.b, &q_out.w, &q_out.b};
  }
};

}  // namespace vmloc
