#pragma once

// Training loop, evaluation under corruption, ablation grid and trajectory export.

#include <algorithm>
#include <chrono>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "vmloc/config.hpp"
#include "vmloc/model.hpp"
#include "vmloc/optim.hpp"
#include "vmloc/world.hpp"

namespace vmloc {

struct EpochStats {
  std::size_t epoch = 0;
  double bound = 0.0;  // mean over batches of the ascended objective
  double loss = 0.0;   // mean geometric loss over all decoded samples
  double position_error = 0.0;
  bool operator==(const EpochStats&) const = default;
};

struct Metrics {
  std::size_t count = 0;
  PoseError median;
  PoseError mean;
  bool operator==(const Metrics&) const = default;
};

struct ConditionMetrics {
  std::string condition;  // "clean" or "m<modality>:l<level>"
  Metrics metrics;
  bool operator==(const ConditionMetrics&) const = default;
};

struct RunReport {
  std::string variant;
  std::uint64_t seed = 0;
  std::string config;  // key=value echo
  std::vector<EpochStats> epochs;
  std::vector<double> first_epoch_batch_loss;
  std::optional<Metrics> test;
  std::vector<ConditionMetrics> conditions;
  double wall_clock_s = 0.0;
  bool operator==(const RunReport&) const = default;
};

struct AblationRow {
  std::string variant;
  Metrics metrics;
  bool operator==(const AblationRow&) const = default;
};

struct AblationReport {
  std::uint64_t seed = 0;
  std::vector<AblationRow> rows;
  std::vector<RunReport> runs;
  bool operator==(const AblationReport&) const = default;
};

inline void to_json(nlohmann::json& j, const PoseError& e) { j = {{"position", e.position}, {"rotation_deg", e.rotation}}; }
inline void from_json(const nlohmann::json& j, PoseError& e) {
  e.position = j.at("position").get<double>();
  e.rotation = j.at("rotation_deg").get<double>();
}
inline void to_json(nlohmann::json& j, const EpochStats& e) {
  j = {{"epoch", e.epoch}, {"bound", e.bound}, {"loss", e.loss}, {"position_error", e.position_error}};
}
inline void from_json(const nlohmann::json& j, EpochStats& e) {
  e.epoch = j.at("epoch").get<std::size_t>();
  e.bound = j.at("bound").get<double>();
  e.loss = j.at("loss").get<double>();
  e.position_error = j.at("position_error").get<double>();
}
inline void to_json(nlohmann::json& j, const Metrics& m) {
  j = {{"count", m.count}, {"median", m.median}, {"mean", m.mean}};
}
inline void from_json(const nlohmann::json& j, Metrics& m) {
  m.count = j.at("count").get<std::size_t>();
  m.median = j.at("median").get<PoseError>();
  m.mean = j.at("mean").get<PoseError>();
}
inline void to_json(nlohmann::json& j, const ConditionMetrics& c) { j = {{"condition", c.condition}, {"metrics", c.metrics}}; }
inline void from_json(const nlohmann::json& j, ConditionMetrics& c) {
  c.condition = j.at("condition").get<std::string>();
  c.metrics = j.at("metrics").get<Metrics>();
}
inline void to_json(nlohmann::json& j, const RunReport& r) {
  j = {{"variant", r.variant},
       {"seed", r.seed},
       {"config", r.config},
       {"epochs", r.epochs},
       {"first_epoch_batch_loss", r.first_epoch_batch_loss},
       {"conditions", r.conditions},
       {"wall_clock_s", r.wall_clock_s}};
  j["test"] = r.test ? nlohmann::json(*r.test) : nlohmann::json(nullptr);
}
inline void from_json(const nlohmann::json& j, RunReport& r) {
  r.variant = j.at("variant").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config = j.at("config").get<std::string>();
  r.epochs = j.at("epochs").get<std::vector<EpochStats>>();
  r.first_epoch_batch_loss = j.at("first_epoch_batch_loss").get<std::vector<double>>();
  r.conditions = j.at("conditions").get<std::vector<ConditionMetrics>>();
  r.wall_clock_s = j.at("wall_clock_s").get<double>();
  if (j.at("test").is_null()) r.test.reset();
  else r.test = j.at("test").get<Metrics>();
}
// One variant across seeds: per-field mean and sample standard deviation (0 for one seed).
struct AblationSummaryRow {
  std::string variant;
  std::size_t seeds = 0;
  Metrics mean;
  Metrics stddev;
  bool operator==(const AblationSummaryRow&) const = default;
};

struct MultiSeedAblation {
  std::vector<AblationReport> per_seed;
  std::vector<AblationSummaryRow> aggregate;
  bool operator==(const MultiSeedAblation&) const = default;
};

inline void to_json(nlohmann::json& j, const AblationRow& r) { j = {{"variant", r.variant}, {"metrics", r.metrics}}; }
inline void from_json(const nlohmann::json& j, AblationRow& r) {
  r.variant = j.at("variant").get<std::string>();
  r.metrics = j.at("metrics").get<Metrics>();
}
inline void to_json(nlohmann::json& j, const AblationReport& r) {
  j = {{"seed", r.seed}, {"rows", r.rows}, {"runs", r.runs}};
}
inline void from_json(const nlohmann::json& j, AblationReport& r) {
  r.seed = j.at("seed").get<std::uint64_t>();
  r.rows = j.at("rows").get<std::vector<AblationRow>>();
  r.runs = j.at("runs").get<std::vector<RunReport>>();
}
inline void to_json(nlohmann::json& j, const AblationSummaryRow& r) {
  j = {{"variant", r.variant}, {"seeds", r.seeds}, {"mean", r.mean}, {"std", r.stddev}};
}
inline void from_json(const nlohmann::json& j, AblationSummaryRow& r) {
  r.variant = j.at("variant").get<std::string>();
  r.seeds = j.at("seeds").get<std::size_t>();
  r.mean = j.at("mean").get<Metrics>();
  r.stddev = j.at("std").get<Metrics>();
}
inline void to_json(nlohmann::json& j, const MultiSeedAblation& r) {
  j = {{"per_seed", r.per_seed}, {"aggregate", r.aggregate}};
}
inline void from_json(const nlohmann::json& j, MultiSeedAblation& r) {
  r.per_seed = j.at("per_seed").get<std::vector<AblationReport>>();
  r.aggregate = j.at("aggregate").get<std::vector<AblationSummaryRow>>();
}

struct TrainResult {
  VmlocModel model;
  RunReport report;
};

inline bool all_finite(std::span<Parameter* const> ps) {
  for (const auto* p : ps)
    for (double v : p->grad.data())
      if (!std::isfinite(v)) return false;
  return true;
}

struct TrainOptions {
  bool modality_dropout = true;  // off: train on intact records only
};

inline TrainResult train(const TrainConfig& cfg, std::span<const SampleRecord> data, TrainOptions opts = {}) {
  cfg.validate();
  VMLOC_EXPECTS(!data.empty(), "training set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t f1 = 0, f2 = 0;
  for (const auto& r : data) {
    if (r.x1) f1 = r.x1->size();
    if (r.x2) f2 = r.x2->size();
  }
  if (f1 == 0 || f2 == 0) throw DataError("training data never contains one of the modalities");
  TrainResult out{VmlocModel(cfg.model_config(f1, f2)), {}};
  VmlocModel& model = out.model;
  RunReport& rep = out.report;
  rep.variant = to_string(cfg.variant);
  rep.seed = cfg.seed;
  rep.config = to_text(cfg);

  auto params = model.parameters();
  Adam opt(params, cfg.adam());
  std::mt19937_64 rng(detail::stream_seed(cfg.seed, 101, 0));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  // The second modality is never read by image_only, so dropping inputs only removes the first.
  const bool drop = opts.modality_dropout && cfg.variant != Variant::image_only;

  std::vector<SampleRecord> batch_recs;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double bound_sum = 0.0, loss_sum = 0.0, pos_sum = 0.0;
    std::size_t batches = 0, decoded = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch_recs.clear();
      for (std::size_t i = start; i < end; ++i) {
        const SampleRecord& r = data[order[i]];
        batch_recs.push_back(drop && r.x1 && r.x2 ? apply_modality_dropout(cfg.modality_dropout, r, rng) : r);
      }
      Graph g;
      const ForwardResult f = model.forward(g, model.batch(batch_recs), rng, true);
      const double bound = f.bound.value().item();
      if (!std::isfinite(bound))
        throw DivergenceError("non-finite bound at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches + 1));
      const LossBalance balance = model.balance();
      opt.zero_grad();
      model.accumulate_gradients(f);
      if (!all_finite(params))
        throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches + 1));
      opt.step();

      const std::size_t n = f.batch.pred_p.rows(), k = f.batch.k;
      double batch_loss = 0.0, batch_pos = 0.0;
      for (std::size_t row = 0; row < n; ++row) {
        const Pose& truth = batch_recs[row / k].pose;
        const Pose pred = Pose::normalized(
            {f.batch.pred_p.at(row, 0), f.batch.pred_p.at(row, 1), f.batch.pred_p.at(row, 2)},
            {f.batch.pred_q.at(row, 0), f.batch.pred_q.at(row, 1), f.batch.pred_q.at(row, 2), f.batch.pred_q.at(row, 3)});
        batch_loss += geometric_loss_value(pred, truth, balance);
        batch_pos += pose_errors(pred, truth).position;
      }
      loss_sum += batch_loss;
      pos_sum += batch_pos;
      decoded += n;
      batch_loss /= static_cast<double>(n);
      if (epoch == 1) rep.first_epoch_batch_loss.push_back(batch_loss);
      bound_sum += bound;
      ++batches;
    }
    rep.epochs.push_back({epoch, bound_sum / static_cast<double>(batches), loss_sum / static_cast<double>(decoded),
                          pos_sum / static_cast<double>(decoded)});
  }
  rep.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline std::string condition_name(const std::optional<CorruptionSpec>& c) {
  if (!c || c->level == 0) return "clean";
  return "m" + std::to_string(c->modality) + ":l" + std::to_string(c->level);
}

inline Metrics metrics_of(std::span<const Pose> preds, std::span<const SampleRecord> truth) {
  VMLOC_EXPECTS(preds.size() == truth.size() && !preds.empty(), "metrics need matching non-empty lists");
  std::vector<PoseError> errs;
  errs.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) errs.push_back(pose_errors(preds[i], truth[i].pose));
  return {errs.size(), aggregate_metrics(errs, Aggregate::median), aggregate_metrics(errs, Aggregate::mean)};
}

// Applies the corruption (deterministic in seed) to every record, then predicts.
inline Metrics evaluate(VmlocModel& model, std::span<const SampleRecord> test,
                        const std::optional<CorruptionSpec>& corruption = std::nullopt, std::uint64_t seed = 0) {
  VMLOC_EXPECTS(!test.empty(), "test set is empty");
  std::vector<SampleRecord> recs(test.begin(), test.end());
  if (corruption) {
    std::mt19937_64 rng(detail::stream_seed(seed, 202, 0));
    for (auto& r : recs) r = corrupt(r, *corruption, rng);
  }
  const auto preds = model.predict(recs);
  return metrics_of(preds, recs);
}

inline std::vector<ConditionMetrics> robustness_table(VmlocModel& model, std::span<const SampleRecord> test,
                                                      std::uint64_t seed = 0) {
  std::vector<ConditionMetrics> out{{"clean", evaluate(model, test)}};
  for (int m : {1, 2})
    for (int l : {1, 2}) {
      const CorruptionSpec c{m, l};
      out.push_back({condition_name(c), evaluate(model, test, c, seed)});
    }
  return out;
}

inline AblationReport run_ablation_grid(const TrainConfig& base, std::span<const SampleRecord> train_set,
                                        std::span<const SampleRecord> test_set) {
  AblationReport rep;
  rep.seed = base.seed;
  for (Variant v : {Variant::image_only, Variant::attention_concat, Variant::poe_no_iw, Variant::full}) {
    TrainConfig cfg = base;
    cfg.variant = v;
    auto res = train(cfg, train_set);
    res.report.test = evaluate(res.model, test_set);
    rep.rows.push_back({to_string(v), *res.report.test});
    rep.runs.push_back(std::move(res.report));
  }
  return rep;
}

namespace detail {
inline std::array<double, 4> metric_fields(const Metrics& m) {
  return {m.median.position, m.median.rotation, m.mean.position, m.mean.rotation};
}
inline Metrics metrics_from_fields(std::size_t count, const std::array<double, 4>& f) {
  return {count, {f[0], f[1]}, {f[2], f[3]}};
}
}  // namespace detail

inline std::vector<AblationSummaryRow> summarize_ablation(std::span<const AblationReport> reports) {
  VMLOC_EXPECTS(!reports.empty(), "no ablation reports to summarize");
  const auto& first = reports.front().rows;
  const double n = static_cast<double>(reports.size());
  std::vector<AblationSummaryRow> out;
  for (std::size_t v = 0; v < first.size(); ++v) {
    std::array<double, 4> mean{}, var{};
    for (const auto& r : reports) {
      VMLOC_EXPECTS(r.rows.size() == first.size() && r.rows[v].variant == first[v].variant,
                    "ablation reports disagree on variants");
      const auto f = detail::metric_fields(r.rows[v].metrics);
      for (int i = 0; i < 4; ++i) mean[i] += f[i] / n;
    }
    for (const auto& r : reports) {
      const auto f = detail::metric_fields(r.rows[v].metrics);
      for (int i = 0; i < 4; ++i) var[i] += (f[i] - mean[i]) * (f[i] - mean[i]);
    }
    for (auto& x : var) x = reports.size() > 1 ? std::sqrt(x / (n - 1.0)) : 0.0;
    const std::size_t count = first[v].metrics.count;
    out.push_back({first[v].variant, reports.size(), detail::metrics_from_fields(count, mean),
                   detail::metrics_from_fields(count, var)});
  }
  return out;
}

inline MultiSeedAblation run_ablation_seeds(const TrainConfig& base, std::span<const std::uint64_t> seeds,
                                            std::span<const SampleRecord> train_set,
                                            std::span<const SampleRecord> test_set) {
  VMLOC_EXPECTS(!seeds.empty(), "need at least one seed");
  MultiSeedAblation out;
  for (std::uint64_t s : seeds) {
    TrainConfig cfg = base;
    cfg.seed = s;
    out.per_seed.push_back(run_ablation_grid(cfg, train_set, test_set));
  }
  out.aggregate = summarize_ablation(out.per_seed);
  return out;
}

inline void export_trajectory(VmlocModel& model, std::span<const SampleRecord> recs, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write trajectory to '" + path + "'");
  const auto preds = recs.empty() ? std::vector<Pose>{} : model.predict(recs);
  out << "index,gt_px,gt_py,gt_pz,gt_qw,gt_qx,gt_qy,gt_qz,pred_px,pred_py,pred_pz,pred_qw,pred_qx,pred_qy,pred_qz\n";
  out.precision(17);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    out << i;
    for (double v : recs[i].pose.p()) out << ',' << v;
    for (double v : recs[i].pose.q()) out << ',' << v;
    for (double v : preds[i].p()) out << ',' << v;
    for (double v : preds[i].q()) out << ',' << v;
    out << '\n';
  }
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace vmloc
