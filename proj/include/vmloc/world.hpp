#pragma once

// Synthetic two-modality localization world.
//
// Poses follow a closed trajectory s in [0, 1) plus small per-record jitter.
// Each modality sees the pose through a fixed random smooth map
//   x = tanh(A [a * p / scale ; b * vec(R)] + c) + noise,   then nuisance dims,
// with (a, b) = (pos, rot) gains chosen so modality 1 is position-heavy and
// modality 2 orientation-heavy. Features are clamped to |x| <= 10.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "vmloc/record.hpp"

namespace vmloc {

enum class Trajectory { loop, lissajous };

inline std::string to_string(Trajectory t) { return t == Trajectory::loop ? "loop" : "lissajous"; }
inline Trajectory trajectory_from_string(const std::string& s) {
  if (s == "loop") return Trajectory::loop;
  if (s == "lissajous") return Trajectory::lissajous;
  throw ConfigError("unknown trajectory '" + s + "' (expected loop or lissajous)");
}

struct ModalityView {
  std::size_t features = 24;  // informative dims
  std::size_t nuisance = 4;
  double noise = 0.05;
  double position_gain = 1.0;
  double rotation_gain = 0.2;

  std::size_t dim() const { return features + nuisance; }
};

struct WorldSpec {
  std::uint64_t seed = 0;
  Trajectory trajectory = Trajectory::loop;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  double scale = 2.0;             // trajectory radius, world units
  double position_jitter = 0.05;  // per-axis std, world units
  double rotation_jitter = 0.05;  // per-axis std, radians
  ModalityView m1{24, 4, 0.05, 1.0, 0.2};
  ModalityView m2{24, 4, 0.05, 0.5, 1.0};

  void validate() const {
    VMLOC_EXPECTS(n_train > 0 && n_test > 0, "world needs at least one train and one test record");
    VMLOC_EXPECTS(m1.features > 0 && m2.features > 0, "each modality needs informative features");
    VMLOC_EXPECTS(scale > 0.0, "trajectory scale must be positive");
  }
};

inline constexpr double kFeatureEnvelope = 10.0;

struct Dataset {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
};

namespace detail {

inline Quat quat_mul(const Quat& a, const Quat& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3], a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1], a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

inline Quat quat_from_rotvec(const Vec3& w) {
  const double a = std::hypot(w[0], w[1], w[2]);
  if (a < 1e-15) return {1, 0, 0, 0};
  const double s = std::sin(0.5 * a) / a;
  return {std::cos(0.5 * a), w[0] * s, w[1] * s, w[2] * s};
}

// yaw about z, then pitch about y, then roll about x
inline Quat quat_from_euler(double yaw, double pitch, double roll) {
  return quat_mul(quat_mul(quat_from_rotvec({0, 0, yaw}), quat_from_rotvec({0, pitch, 0})),
                  quat_from_rotvec({roll, 0, 0}));
}

inline std::array<double, 9> rotation_matrix(const Quat& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

struct ViewMap {
  std::vector<double> a;  // [features x 12]
  std::vector<double> c;  // [features]
};

inline ViewMap make_view_map(const ModalityView& v, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ViewMap m{std::vector<double>(v.features * 12), std::vector<double>(v.features)};
  // columns 0..2 read position, 3..11 the rotation matrix; unit-variance pre-activations
  for (std::size_t r = 0; r < v.features; ++r) {
    for (std::size_t c = 0; c < 3; ++c) m.a[r * 12 + c] = n(rng) * std::sqrt(1.0 / 1.5);
    for (std::size_t c = 3; c < 12; ++c) m.a[r * 12 + c] = n(rng) * std::sqrt(1.0 / 4.5);
    m.c[r] = 0.3 * n(rng);
  }
  return m;
}

}  // namespace detail

// Noise-free pose at trajectory parameter s (period 1). Rotation angles stay
// well below pi so the canonical log-quaternion target is continuous.
inline Pose trajectory_pose(const WorldSpec& spec, double s) {
  constexpr double tau = 2.0 * std::numbers::pi;
  const double r = spec.scale;
  Vec3 p;
  double yaw;
  if (spec.trajectory == Trajectory::loop) {
    p = {r * std::cos(tau * s) + 0.15 * r * std::cos(3 * tau * s), r * std::sin(tau * s) + 0.15 * r * std::sin(2 * tau * s),
         0.25 * r * std::sin(2 * tau * s)};
    yaw = 0.9 * std::sin(tau * s) + 0.3 * std::sin(3 * tau * s);
  } else {
    p = {r * std::sin(tau * s), 0.7 * r * std::sin(2 * tau * s), 0.2 * r * std::cos(3 * tau * s)};
    yaw = 1.2 * std::sin(tau * s) + 0.3 * std::cos(2 * tau * s);
  }
  const double pitch = 0.25 * std::sin(2 * tau * s);
  const double roll = 0.15 * std::cos(3 * tau * s);
  return Pose::normalized(p, detail::quat_from_euler(yaw, pitch, roll));
}

namespace detail {

inline Features render(const ModalityView& v, const ViewMap& map, const Pose& pose, double scale,
                       std::mt19937_64& rng) {
  std::array<double, 12> phi{};
  for (int i = 0; i < 3; ++i) phi[i] = v.position_gain * pose.p()[i] / scale;
  const auto rm = rotation_matrix(pose.q());
  for (int i = 0; i < 9; ++i) phi[3 + i] = v.rotation_gain * rm[i];
  std::normal_distribution<double> n(0.0, 1.0);
  Features x(v.dim());
  for (std::size_t r = 0; r < v.features; ++r) {
    double pre = map.c[r];
    for (int c = 0; c < 12; ++c) pre += map.a[r * 12 + c] * phi[c];
    x[r] = std::tanh(pre) + v.noise * n(rng);
  }
  for (std::size_t r = v.features; r < v.dim(); ++r) x[r] = std::tanh(n(rng));
  for (auto& e : x) e = std::clamp(e, -kFeatureEnvelope, kFeatureEnvelope);
  return x;
}

}  // namespace detail

// Record `index` of a split (0 train, 1 test); independent of the other records.
inline SampleRecord make_record(const WorldSpec& spec, const detail::ViewMap& m1, const detail::ViewMap& m2,
                                int split, std::size_t index) {
  const std::size_t n = split == 0 ? spec.n_train : spec.n_test;
  // test records sit halfway between consecutive train-rate steps
  const double s = (static_cast<double>(index) + (split == 0 ? 0.0 : 0.5)) / static_cast<double>(n);
  std::mt19937_64 rng(detail::stream_seed(spec.seed, 1 + split, index));
  std::normal_distribution<double> nd;
  const Pose base = trajectory_pose(spec, s);
  Vec3 p = base.p();
  for (auto& c : p) c += spec.position_jitter * nd(rng);
  const Vec3 w{spec.rotation_jitter * nd(rng), spec.rotation_jitter * nd(rng), spec.rotation_jitter * nd(rng)};
  const Pose pose = Pose::normalized(p, detail::quat_mul(base.q(), detail::quat_from_rotvec(w)));
  SampleRecord rec;
  rec.pose = pose;
  rec.x1 = detail::render(spec.m1, m1, pose, spec.scale, rng);
  rec.x2 = detail::render(spec.m2, m2, pose, spec.scale, rng);
  return rec;
}

inline Dataset generate(const WorldSpec& spec) {
  spec.validate();
  std::mt19937_64 map_rng(detail::stream_seed(spec.seed, 0, 0));
  const auto map1 = detail::make_view_map(spec.m1, map_rng);
  const auto map2 = detail::make_view_map(spec.m2, map_rng);
  Dataset d;
  d.train.reserve(spec.n_train);
  d.test.reserve(spec.n_test);
  for (std::size_t i = 0; i < spec.n_train; ++i) d.train.push_back(make_record(spec, map1, map2, 0, i));
  for (std::size_t i = 0; i < spec.n_test; ++i) d.test.push_back(make_record(spec, map1, map2, 1, i));
  return d;
}

struct CorruptionSpec {
  int modality = 1;  // 1 or 2
  int level = 0;     // 0 intact, 1 block masked, 2 missing
  double fraction = 0.25;
};

template <class Rng>
SampleRecord corrupt(SampleRecord r, const CorruptionSpec& c, Rng& rng) {
  VMLOC_EXPECTS(c.modality == 1 || c.modality == 2, "corruption modality must be 1 or 2");
  VMLOC_EXPECTS(c.level >= 0 && c.level <= 2, "corruption level must be 0, 1 or 2");
  auto& target = c.modality == 1 ? r.x1 : r.x2;
  const auto& other = c.modality == 1 ? r.x2 : r.x1;
  VMLOC_EXPECTS(target.has_value(), "corrupted modality must be present");
  if (c.level == 0) return r;
  if (c.level == 2) {
    VMLOC_EXPECTS(other.has_value(), "cannot remove the only present modality");
    target.reset();
    return r;
  }
  const std::size_t f = target->size();
  const auto width = std::min<std::size_t>(f, static_cast<std::size_t>(std::ceil(c.fraction * static_cast<double>(f))));
  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, f - width)(rng);
  std::fill_n(target->begin() + static_cast<std::ptrdiff_t>(start), width, 0.0);
  return r;
}

}  // namespace vmloc
