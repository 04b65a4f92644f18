#pragma once

// Importance-weighted bound over k latent samples and its two gradient paths.
//
// Log-weights are laid out [B x k]: one row per datum, one column per sample.
// Two copies are kept on the graph. `log_w` differentiates through every
// route, including the parameters of the q-density (score path). `log_w_path`
// evaluates the q-density with stopped parameters, so it depends on the
// encoder only through the reparameterized samples.
//
// Encoder gradient (dreg):  sum_i c_i * d log_w_path_i / d phi, with
//   c_i = (1 - lambda) * w_i + lambda * w_i^2 and w the normalized weights.
//   At lambda = 1 this is the usual squared-weight estimator; the linear
//   term accounts for the score path scaling with lambda.
// Encoder gradient (plain_iwae): total derivative of the bound.
// Decoder gradient: sum_i w_i * d log_w_i / d theta, i.e. the bound's gradient.

#include <cmath>
#include <string>
#include <vector>

#include "vmloc/gaussian.hpp"
#include "vmloc/pose.hpp"

namespace vmloc {

enum class Estimator { plain_iwae, dreg };

inline std::string to_string(Estimator e) { return e == Estimator::dreg ? "dreg" : "plain_iwae"; }
inline Estimator estimator_from_string(const std::string& s) {
  if (s == "dreg") return Estimator::dreg;
  if (s == "plain_iwae") return Estimator::plain_iwae;
  throw ConfigError("unknown estimator '" + s + "' (expected dreg or plain_iwae)");
}

struct ObjectiveConfig {
  std::size_t k = 10;
  double lambda = 0.1;
  Estimator estimator = Estimator::dreg;

  void validate() const {
    if (k < 1) throw ConfigError("k must be >= 1");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
  }
};

struct WeightedSampleBatch {
  std::size_t k = 1;
  Var log_w;           // [B x k]
  Var log_w_path;      // [B x k], q-density parameters stopped; invalid when not retained
  Tensor normalized_w; // [B x k], rows sum to 1
  Tensor z;            // [B*k x D] latent samples, row b*k + i
  Tensor epsilon;      // [B*k x D]
  Tensor pred_p;       // [B*k x 3]
  Tensor pred_q;       // [B*k x 4]

  std::size_t data_count() const { return log_w.rows(); }
  bool has_pathwise() const { return log_w_path.valid(); }
};

// Row softmax of log-weights, computed in log space.
inline Tensor normalize_log_weights(const Tensor& log_w) {
  const std::size_t m = log_w.rows(), n = log_w.cols();
  Tensor w(log_w.shape());
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, log_w[r * n + c]);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += std::exp(log_w[r * n + c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < n; ++c) w[r * n + c] = std::exp(log_w[r * n + c] - lse);
  }
  return w;
}

inline Tensor dreg_coefficients(const Tensor& normalized_w, double lambda) {
  Tensor c(normalized_w.shape());
  for (std::size_t i = 0; i < c.numel(); ++i) {
    const double w = normalized_w[i];
    c[i] = (1.0 - lambda) * w + lambda * w * w;
  }
  return c;
}

namespace ops {

// -L_p + lambda * (log p(z) - log q(z)), rows [n x 1]. The density terms are
// dropped entirely when lambda == 0.
inline Var log_weight_rows(const Var& loss, const Var& log_prior, const Var& log_q, double lambda) {
  const Var neg = negate(loss);
  if (lambda == 0.0) return neg;
  return add(neg, scale(sub(log_prior, log_q), lambda));
}

}  // namespace ops

// Scalar log-weight of a single sample, composed from the value-level pieces.
inline double log_weight(const Pose& truth, const Pose& pred, const LossBalance& bal, const LatentSample& z,
                         const DiagonalGaussian& q_joint, const DiagonalGaussian& prior, double lambda) {
  const double lp = -geometric_loss_value(pred, truth, bal);
  if (lambda == 0.0) return lp;
  return lp + lambda * (log_density(prior, z.z) - log_density(q_joint, z.z));
}

// Mean over data of logsumexp(log_w) - log k.
inline Var iw_bound(const WeightedSampleBatch& batch) {
  const Var per_datum = ops::add_scalar(ops::row_logsumexp(batch.log_w), -std::log(static_cast<double>(batch.k)));
  return ops::mean(per_datum);
}

inline bool is_encoder(const Parameter& p) { return p.group == ParamGroup::encoder; }
inline bool is_decoder_side(const Parameter& p) { return p.group != ParamGroup::encoder; }

// Adds scale * (encoder gradient of the mean bound) into encoder-group parameters.
inline void accumulate_encoder_gradient(const WeightedSampleBatch& batch, Estimator estimator, double lambda,
                                        double scale = 1.0) {
  Graph& g = batch.log_w.graph();
  if (estimator == Estimator::plain_iwae) {
    g.backward(iw_bound(batch));
    g.flush_param_grads(is_encoder, scale);
    return;
  }
  VMLOC_EXPECTS(batch.has_pathwise(), "dreg estimator needs the pathwise log-weights (retained epsilons)");
  const double inv_b = 1.0 / static_cast<double>(batch.data_count());
  Tensor c = dreg_coefficients(batch.normalized_w, lambda);
  for (auto& v : c.data()) v *= inv_b;
  g.backward(ops::sum(ops::mul_const(batch.log_w_path, c)));
  g.flush_param_grads(is_encoder, scale);
}

// Adds scale * (decoder-side gradient of the mean bound) into decoder and balance parameters.
inline void accumulate_decoder_gradient(const WeightedSampleBatch& batch, double scale = 1.0) {
  Graph& g = batch.log_w.graph();
  g.backward(iw_bound(batch));
  g.flush_param_grads(is_decoder_side, scale);
}

}  // namespace vmloc
