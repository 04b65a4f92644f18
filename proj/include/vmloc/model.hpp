#pragma once

// Two Gaussian encoders fused by PoE, per-sample attention, pose regressor.
//
// Variants:
//   full              both encoders, k importance samples, attention
//   image_only        first encoder only (second is never evaluated)
//   attention_concat  concatenated means -> attention -> regressor; no sampling, no KL
//   poe_no_iw         the full pipeline with k forced to 1 (single-sample bound)

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vmloc/attention.hpp"
#include "vmloc/iw_objective.hpp"
#include "vmloc/nn.hpp"
#include "vmloc/record.hpp"

namespace vmloc {

enum class Variant { full, image_only, attention_concat, poe_no_iw };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::image_only: return "image_only";
    case Variant::attention_concat: return "attention_concat";
    case Variant::poe_no_iw: return "poe_no_iw";
  }
  return "?";
}
inline Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::full, Variant::image_only, Variant::attention_concat, Variant::poe_no_iw})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown variant '" + s + "' (expected full, image_only, attention_concat or poe_no_iw)");
}

enum class Presence { both, first_only, second_only };

struct ModalityDropoutPolicy {
  double p_both = 3.0 / 5.0;
  double p_first = 1.0 / 5.0;
  double p_second = 1.0 / 5.0;

  void validate() const {
    if (p_both < 0 || p_first < 0 || p_second < 0 || std::abs(p_both + p_first + p_second - 1.0) > 1e-9)
      throw ConfigError("modality dropout probabilities must be >= 0 and sum to 1");
  }
  template <class Rng>
  Presence sample(Rng& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u < p_both) return Presence::both;
    if (u < p_both + p_first) return Presence::first_only;
    return Presence::second_only;
  }
};

// Drops at most one modality of a record that carries both.
template <class Rng>
SampleRecord apply_modality_dropout(const ModalityDropoutPolicy& policy, SampleRecord r, Rng& rng) {
  VMLOC_EXPECTS(r.x1 && r.x2, "modality dropout expects both modalities present");
  switch (policy.sample(rng)) {
    case Presence::both: break;
    case Presence::first_only: r.x2.reset(); break;
    case Presence::second_only: r.x1.reset(); break;
  }
  return r;
}

struct ModelConfig {
  std::size_t input_dim1 = 1;
  std::size_t input_dim2 = 1;
  std::size_t latent_dim = 64;
  std::vector<std::size_t> encoder_widths{64, 64};
  std::size_t regressor_hidden = 32;
  double dropout = 0.5;
  AttentionConfig attention;
  Variant variant = Variant::full;
  ObjectiveConfig objective;
  LossBalance balance;
  std::uint64_t seed = 0;

  // Sample count actually used by the variant.
  std::size_t samples() const {
    return variant == Variant::full || variant == Variant::image_only ? objective.k : 1;
  }
  std::size_t decoder_dim() const { return variant == Variant::attention_concat ? 2 * latent_dim : latent_dim; }
};

// Stacked inputs for a minibatch; absent rows hold zeros and mask 0.
struct ModelBatch {
  Tensor x1, x2;        // [B x F1], [B x F2]
  Tensor mask1, mask2;  // [B x D]
  std::vector<Pose> poses;

  std::size_t size() const { return poses.size(); }
};

inline ModelBatch make_batch(std::span<const SampleRecord> recs, std::size_t f1, std::size_t f2, std::size_t d) {
  const std::size_t b = recs.size();
  VMLOC_EXPECTS(b > 0, "empty batch");
  ModelBatch out{Tensor({b, f1}), Tensor({b, f2}), Tensor({b, d}), Tensor({b, d}), {}};
  auto fill = [&](const std::optional<Features>& x, std::size_t f, Tensor& dst, Tensor& mask, std::size_t r,
                  int which) {
    if (!x) return;
    if (x->size() != f)
      throw DataError("record " + std::to_string(r) + ": modality " + std::to_string(which) + " has " +
                      std::to_string(x->size()) + " features, expected " + std::to_string(f));
    for (std::size_t c = 0; c < f; ++c) dst.at(r, c) = (*x)[c];
    for (std::size_t c = 0; c < d; ++c) mask.at(r, c) = 1.0;
  };
  for (std::size_t r = 0; r < b; ++r) {
    VMLOC_EXPECTS(recs[r].x1 || recs[r].x2, "record " + std::to_string(r) + " has no modality present");
    fill(recs[r].x1, f1, out.x1, out.mask1, r, 1);
    fill(recs[r].x2, f2, out.x2, out.mask2, r, 2);
    out.poses.push_back(recs[r].pose);
  }
  return out;
}

struct ForwardResult {
  WeightedSampleBatch batch;
  Var bound;      // quantity the update ascends (IW bound, or the variant's surrogate)
  Var objective;  // single-backward surrogate for the non-IW variants; invalid otherwise
  ops::GaussianVars joint;
};

class VmlocModel {
 public:
  explicit VmlocModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.objective.validate();
    std::mt19937_64 rng(cfg_.seed);
    EncoderConfig e1{cfg_.input_dim1, cfg_.encoder_widths, cfg_.latent_dim, cfg_.dropout};
    EncoderConfig e2{cfg_.input_dim2, cfg_.encoder_widths, cfg_.latent_dim, cfg_.dropout};
    encoder1_ = Encoder("encoder1", e1, rng);
    encoder2_ = Encoder("encoder2", e2, rng);
    if (cfg_.attention.enabled) attention_ = make_attention_block(cfg_.decoder_dim(), cfg_.attention, rng);
    regressor_ = PoseRegressor(cfg_.decoder_dim(), cfg_.regressor_hidden, rng);
    beta_ = Parameter("beta", Tensor::scalar(cfg_.balance.beta), ParamGroup::balance);
    gamma_ = Parameter("gamma", Tensor::scalar(cfg_.balance.gamma), ParamGroup::balance);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  Encoder& encoder1() { return encoder1_; }
  Encoder& encoder2() { return encoder2_; }
  std::optional<AttentionBlock>& attention() { return attention_; }
  PoseRegressor& regressor() { return regressor_; }
  LossBalance balance() const { return {beta_.value.item(), gamma_.value.item()}; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = encoder1_.parameters();
    for (auto* p : encoder2_.parameters()) out.push_back(p);
    if (attention_)
      for (auto* p : attention_->parameters()) out.push_back(p);
    for (auto* p : regressor_.parameters()) out.push_back(p);
    out.push_back(&beta_);
    out.push_back(&gamma_);
    return out;
  }

  ModelBatch batch(std::span<const SampleRecord> recs) const {
    return make_batch(recs, cfg_.input_dim1, cfg_.input_dim2, cfg_.latent_dim);
  }

  // Joint Gaussian rows for the batch. Pass an rng to enable encoder dropout.
  template <class Rng = std::mt19937_64>
  ops::GaussianVars encode_rows(Graph& g, const ModelBatch& b, Rng* dropout_rng = nullptr) {
    std::vector<ops::ExpertVars> experts;
    experts.push_back(encoder1_(g, g.constant(b.x1), b.mask1, dropout_rng));
    if (cfg_.variant != Variant::image_only) experts.push_back(encoder2_(g, g.constant(b.x2), b.mask2, dropout_rng));
    return ops::poe_fuse_rows(experts);
  }

  // Training-time pass. eps_override (shape [B*k x D]) replaces the Gaussian draws.
  template <class Rng>
  ForwardResult forward(Graph& g, const ModelBatch& b, Rng& rng, bool train = true,
                        const Tensor* eps_override = nullptr) {
    if (cfg_.variant == Variant::attention_concat) return forward_concat(g, b, train ? &rng : nullptr);
    const std::size_t n = b.size(), k = cfg_.samples(), d = cfg_.latent_dim;
    ForwardResult out;
    out.joint = encode_rows(g, b, train ? &rng : nullptr);
    Tensor eps({n * k, d});
    if (eps_override) {
      VMLOC_EXPECTS(eps_override->shape() == eps.shape(), "eps override has the wrong shape");
      eps = *eps_override;
    } else {
      std::normal_distribution<double> normal;
      for (auto& v : eps.data()) v = normal(rng);
    }
    const Var mu = ops::repeat_rows(out.joint.mu, k);
    const Var ls = ops::repeat_rows(out.joint.log_sigma, k);
    const Var z = ops::reparameterize(mu, ops::exp(ls), eps);
    const PoseRows pred = decode(g, z);
    const Var loss = ops::geometric_loss_rows(pred.p, pred.q, repeated_positions(b, k), repeated_logq(b, k),
                                              g.param(beta_), g.param(gamma_));
    const double lambda = cfg_.objective.lambda;
    WeightedSampleBatch& wb = out.batch;
    wb.k = k;
    wb.z = z.value();
    wb.epsilon = eps;
    wb.pred_p = pred.p.value();
    wb.pred_q = pred.q.value();
    const Var lp = ops::log_std_normal_rows(z);
    const Var lq = ops::log_normal_rows(z, mu, ls);
    const Var lq_stop = ops::log_normal_rows(z, ops::detach(mu), ops::detach(ls));
    wb.log_w = ops::reshape(ops::log_weight_rows(loss, lp, lq, lambda), {n, k});
    wb.log_w_path = ops::reshape(ops::log_weight_rows(loss, lp, lq_stop, lambda), {n, k});
    wb.normalized_w = normalize_log_weights(wb.log_w.value());
    out.bound = iw_bound(wb);
    return out;
  }

  // Adds the descent direction (negative ascent gradients) into every parameter.
  void accumulate_gradients(const ForwardResult& f) {
    if (f.objective.valid()) {
      Graph& g = f.objective.graph();
      g.backward(f.objective);
      g.flush_param_grads(-1.0);
      return;
    }
    accumulate_encoder_gradient(f.batch, cfg_.objective.estimator, cfg_.objective.lambda, -1.0);
    accumulate_decoder_gradient(f.batch, -1.0);
  }

  // Deterministic inference from the joint mean.
  std::vector<Pose> predict(std::span<const SampleRecord> recs) {
    Graph g;
    const ModelBatch b = batch(recs);
    Var z;
    if (cfg_.variant == Variant::attention_concat) {
      z = concat_means<std::mt19937_64>(g, b, nullptr);
    } else {
      z = encode_rows(g, b).mu;
    }
    const PoseRows pred = decode(g, z);
    std::vector<Pose> out;
    const Tensor& p = pred.p.value();
    const Tensor& q = pred.q.value();
    for (std::size_t r = 0; r < b.size(); ++r)
      out.emplace_back(Vec3{p.at(r, 0), p.at(r, 1), p.at(r, 2)},
                       Quat{q.at(r, 0), q.at(r, 1), q.at(r, 2), q.at(r, 3)});
    return out;
  }
  Pose predict(const std::optional<Features>& x1, const std::optional<Features>& x2) {
    const SampleRecord r{x1, x2, Pose()};
    return predict(std::span<const SampleRecord>(&r, 1)).front();
  }

  // Value-level joint posterior for one record.
  DiagonalGaussian encode(const std::optional<Features>& x1, const std::optional<Features>& x2) {
    const SampleRecord r{x1, x2, Pose()};
    Graph g;
    const auto j = encode_rows(g, batch(std::span<const SampleRecord>(&r, 1)));
    return {j.mu.value().vec(), j.sigma.value().vec()};
  }

 private:
  PoseRows decode(Graph& g, const Var& z) {
    const Var za = attention_ ? ops::attend_rows(g, *attention_, z) : z;
    return regressor_(g, za);
  }

  template <class Rng>
  Var concat_means(Graph& g, const ModelBatch& b, Rng* rng) {
    const Var mu1 = ops::mul_const(encoder1_(g, g.constant(b.x1), b.mask1, rng).mu, b.mask1);
    const Var mu2 = ops::mul_const(encoder2_(g, g.constant(b.x2), b.mask2, rng).mu, b.mask2);
    return ops::concat_cols(mu1, mu2);
  }
  template <class Rng>
  ForwardResult forward_concat(Graph& g, const ModelBatch& b, Rng* rng) {
    const std::size_t n = b.size();
    const PoseRows pred = decode(g, concat_means(g, b, rng));
    const Var loss = ops::geometric_loss_rows(pred.p, pred.q, positions_tensor(b.poses), quat_log_tensor(b.poses),
                                              g.param(beta_), g.param(gamma_));
    ForwardResult out;
    out.batch.k = 1;
    out.batch.log_w = ops::reshape(ops::negate(loss), {n, 1});
    out.batch.normalized_w = Tensor({n, 1}, 1.0);
    out.batch.pred_p = pred.p.value();
    out.batch.pred_q = pred.q.value();
    out.bound = ops::mean(ops::negate(loss));
    out.objective = out.bound;
    return out;
  }

  static Tensor repeat_tensor_rows(const Tensor& t, std::size_t k) {
    Tensor out({t.rows() * k, t.cols()});
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t c = 0; c < t.cols(); ++c) out.at(r * k + i, c) = t.at(r, c);
    return out;
  }
  static Tensor repeated_positions(const ModelBatch& b, std::size_t k) {
    return repeat_tensor_rows(positions_tensor(b.poses), k);
  }
  static Tensor repeated_logq(const ModelBatch& b, std::size_t k) {
    return repeat_tensor_rows(quat_log_tensor(b.poses), k);
  }

  ModelConfig cfg_;
  Encoder encoder1_, encoder2_;
  std::optional<AttentionBlock> attention_;
  PoseRegressor regressor_;
  Parameter beta_, gamma_;
};

}  // namespace vmloc
