#pragma once

// 6-DoF poses, the unit-quaternion log map, the learnable geometric loss and
// the localization error metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "vmloc/ops.hpp"

namespace vmloc {

using Vec3 = std::array<double, 3>;
// (u, v0, v1, v2): real part first.
using Quat = std::array<double, 4>;

inline double quat_norm(const Quat& q) { return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]); }

// Position plus unit quaternion in the u >= 0 hemisphere.
class Pose {
 public:
  Pose() = default;
  // q must already be unit norm (within 1e-9); it is flipped into u >= 0.
  Pose(Vec3 p, Quat q) : p_(p), q_(q) {
    const double n = quat_norm(q_);
    VMLOC_EXPECTS(std::abs(n - 1.0) < 1e-9, "pose quaternion norm " + std::to_string(n) + " is not 1");
    if (q_[0] < 0.0)
      for (auto& c : q_) c = -c;
  }
  // Normalizes q first; q must be non-zero.
  static Pose normalized(Vec3 p, Quat q) {
    const double n = quat_norm(q);
    VMLOC_EXPECTS(n > 1e-12, "cannot normalize a zero quaternion");
    for (auto& c : q) c /= n;
    return Pose(p, q);
  }

  const Vec3& p() const noexcept { return p_; }
  const Quat& q() const noexcept { return q_; }

  bool operator==(const Pose&) const = default;

 private:
  Vec3 p_{0.0, 0.0, 0.0};
  Quat q_{1.0, 0.0, 0.0, 0.0};
};

// Log-weights of the position and rotation terms.
struct LossBalance {
  double beta = -3.0;
  double gamma = 0.0;
};

inline constexpr double kQuatLogCutoff = 1e-12;

// (v/|v|) * arccos(u), or 0 when |v| vanishes.
inline Vec3 quat_log(const Quat& q) {
  const double n = quat_norm(q);
  VMLOC_EXPECTS(std::abs(n - 1.0) <= 1e-6, "quat_log expects a unit quaternion, norm " + std::to_string(n));
  VMLOC_EXPECTS(q[0] >= 0.0, "quat_log expects the canonical hemisphere u >= 0");
  const double vn = std::sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (vn < kQuatLogCutoff) return {0.0, 0.0, 0.0};
  const double angle = std::acos(std::clamp(q[0], -1.0, 1.0));
  return {q[1] / vn * angle, q[2] / vn * angle, q[3] / vn * angle};
}

inline double geometric_loss_value(const Pose& y, const Pose& truth, const LossBalance& bal) {
  double dp = 0.0, dq = 0.0;
  const Vec3 ly = quat_log(y.q()), lt = quat_log(truth.q());
  for (int i = 0; i < 3; ++i) {
    dp += (y.p()[i] - truth.p()[i]) * (y.p()[i] - truth.p()[i]);
    dq += (ly[i] - lt[i]) * (ly[i] - lt[i]);
  }
  return std::sqrt(dp) * std::exp(-bal.beta) + bal.beta + std::sqrt(dq) * std::exp(-bal.gamma) + bal.gamma;
}

struct PoseError {
  double position = 0.0;  // world units
  double rotation = 0.0;  // degrees
  bool operator==(const PoseError&) const = default;
};

// Euclidean position error and geodesic angle 2*acos(|<q, q*>|) in degrees.
inline PoseError pose_errors(const Pose& pred, const Pose& truth) {
  double dp = 0.0, dot = 0.0;
  for (int i = 0; i < 3; ++i) dp += (pred.p()[i] - truth.p()[i]) * (pred.p()[i] - truth.p()[i]);
  for (int i = 0; i < 4; ++i) dot += pred.q()[i] * truth.q()[i];
  const double angle = 2.0 * std::acos(std::clamp(std::abs(dot), 0.0, 1.0));
  return {std::sqrt(dp), angle * 180.0 / std::numbers::pi};
}

enum class Aggregate { median, mean };

inline PoseError aggregate_metrics(std::span<const PoseError> errors, Aggregate mode) {
  VMLOC_EXPECTS(!errors.empty(), "aggregate_metrics of an empty list");
  std::vector<double> pos, rot;
  pos.reserve(errors.size());
  rot.reserve(errors.size());
  for (const auto& e : errors) {
    pos.push_back(e.position);
    rot.push_back(e.rotation);
  }
  auto reduce = [mode](std::vector<double>& xs) {
    const std::size_t n = xs.size();
    if (mode == Aggregate::mean) {
      double s = 0.0;
      for (double x : xs) s += x;
      return s / static_cast<double>(n);
    }
    std::sort(xs.begin(), xs.end());
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
  };
  return {reduce(pos), reduce(rot)};
}

namespace ops {

// Row-wise quaternion log map, [m x 4] -> [m x 3].
//
// Evaluated as (v/|v|) * atan2(|v|, u), which equals the arccos form on unit
// quaternions and keeps finite derivatives as |v| -> 0.
inline Var quat_log_rows(const Var& q) {
  if (q.value().rank() != 2 || q.cols() != 4)
    throw DimensionError("quat_log_rows expects [m x 4], got " + shape_str(q.shape()));
  const std::size_t m = q.rows();
  const Tensor& x = q.value();
  Tensor y({m, 3});
  for (std::size_t r = 0; r < m; ++r) {
    const double u = x[r * 4], v0 = x[r * 4 + 1], v1 = x[r * 4 + 2], v2 = x[r * 4 + 3];
    const double n = std::sqrt(v0 * v0 + v1 * v1 + v2 * v2);
    if (n < kQuatLogCutoff) continue;
    const double g = std::atan2(n, u) / n;
    y.at(r, 0) = v0 * g;
    y.at(r, 1) = v1 * g;
    y.at(r, 2) = v2 * g;
  }
  const NodeId iq = q.id();
  return q.graph().record("quat_log_rows", {iq}, std::move(y), [iq, m](Graph& gr, const Tensor& gy) {
    const Tensor& x = gr.value(iq);
    Tensor gx(x.shape());
    for (std::size_t r = 0; r < m; ++r) {
      const double u = x[r * 4];
      const double v[3] = {x[r * 4 + 1], x[r * 4 + 2], x[r * 4 + 3]};
      const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      const double up[3] = {gy[r * 3], gy[r * 3 + 1], gy[r * 3 + 2]};
      if (n < kQuatLogCutoff) {
        // limit of the smooth form: f ~ v / u
        if (u > 0.0)
          for (int i = 0; i < 3; ++i) gx[r * 4 + 1 + i] = up[i] / u;
        continue;
      }
      const double s = n * n + u * u;
      const double ang = std::atan2(n, u);
      const double g = ang / n;
      const double dg_dn = (u / s) / n - ang / (n * n);
      double vdot = 0.0;
      for (int i = 0; i < 3; ++i) vdot += up[i] * v[i];
      gx[r * 4] = -vdot / s;
      for (int j = 0; j < 3; ++j) gx[r * 4 + 1 + j] = up[j] * g + vdot * dg_dn * v[j] / n;
    }
    gr.accumulate(iq, std::move(gx));
  });
}

// Flips rows with negative real part into the u >= 0 hemisphere.
inline Var canonicalize_quat_rows(const Var& q) {
  if (q.value().rank() != 2 || q.cols() != 4)
    throw DimensionError("canonicalize_quat_rows expects [m x 4], got " + shape_str(q.shape()));
  Tensor sign(q.shape(), 1.0);
  for (std::size_t r = 0; r < q.rows(); ++r)
    if (q.value()[r * 4] < 0.0)
      for (std::size_t c = 0; c < 4; ++c) sign[r * 4 + c] = -1.0;
  return mul_const(q, sign);
}

// Per-row geometric loss |p - p*| e^-beta + beta + |log q - log q*| e^-gamma + gamma.
// p: [m x 3], q: [m x 4] unit rows; targets are constants; beta, gamma scalars.
inline Var geometric_loss_rows(const Var& p, const Var& q, const Tensor& p_true, const Tensor& logq_true,
                               const Var& beta, const Var& gamma) {
  auto& g = p.graph();
  const Var pos_err = row_l2norm(sub(p, g.constant(p_true)));
  const Var rot_err = row_l2norm(sub(quat_log_rows(q), g.constant(logq_true)));
  const Var pos_term = add(mul(pos_err, exp(negate(beta))), beta);
  const Var rot_term = add(mul(rot_err, exp(negate(gamma))), gamma);
  return add(pos_term, rot_term);
}

}  // namespace ops

// Stacks poses into position [n x 3] and quaternion [n x 4] tensors.
inline Tensor positions_tensor(std::span<const Pose> poses) {
  Tensor t({poses.size(), 3});
  for (std::size_t r = 0; r < poses.size(); ++r)
    for (std::size_t c = 0; c < 3; ++c) t.at(r, c) = poses[r].p()[c];
  return t;
}
inline Tensor quat_log_tensor(std::span<const Pose> poses) {
  Tensor t({poses.size(), 3});
  for (std::size_t r = 0; r < poses.size(); ++r) {
    const Vec3 l = quat_log(poses[r].q());
    for (std::size_t c = 0; c < 3; ++c) t.at(r, c) = l[c];
  }
  return t;
}

// Single-pose geometric loss on the graph (differentiable in p, q, beta, gamma).
inline Var geometric_loss(const Var& p, const Var& q, const Pose& truth, const Var& beta, const Var& gamma) {
  const Pose one[1] = {truth};
  auto row = [](const Var& v) { return v.value().rank() == 2 ? v : ops::reshape(v, {1, v.numel()}); };
  return ops::reshape(
      ops::geometric_loss_rows(row(p), row(q), positions_tensor(one), quat_log_tensor(one), beta, gamma), {});
}

}  // namespace vmloc
