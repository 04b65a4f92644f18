#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "vmloc/alloc.hpp"
#include "vmloc/io.hpp"
#include "vmloc/trainer.hpp"

using namespace vmloc;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kDivergence = 4 };

void emit(const nlohmann::json& j, const std::string& report_path) {
  if (report_path.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(report_path);
  if (!out) throw DataError("cannot write report to " + report_path);
  out << j.dump(2) << "\n";
  if (!out) throw DataError("failed writing report to " + report_path);
}

CorruptionSpec parse_corruption(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ConfigError("--corrupt expects modality:level, got '" + s + "'");
  CorruptionSpec c;
  try {
    std::size_t used = 0;
    c.modality = std::stoi(s.substr(0, colon), &used);
    if (used != colon) throw std::invalid_argument(s);
    const std::string lv = s.substr(colon + 1);
    c.level = std::stoi(lv, &used);
    if (used != lv.size()) throw std::invalid_argument(s);
  } catch (const std::logic_error&) {
    throw ConfigError("--corrupt expects integers modality:level, got '" + s + "'");
  }
  if (c.modality != 1 && c.modality != 2) throw ConfigError("--corrupt modality must be 1 or 2");
  if (c.level < 0 || c.level > 2) throw ConfigError("--corrupt level must be 0, 1 or 2");
  return c;
}

std::vector<SampleRecord> load_records(const std::string& path) { return read_dataset(path).records; }

std::pair<std::size_t, std::size_t> feature_dims(const DatasetFile& f) { return {f.f1, f.f2}; }

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"VMLoc multimodal localization: synthetic data, training, evaluation"};
  app.require_subcommand(1);

  // generate
  WorldSpec world;
  std::string trajectory = "loop", gen_train, gen_test;
  auto* gen = app.add_subcommand("generate", "write a synthetic multimodal world as two VMLD1 files");
  gen->add_option("--train", gen_train, "output path for the training split")->required();
  gen->add_option("--test", gen_test, "output path for the test split")->required();
  gen->add_option("--seed", world.seed)->capture_default_str();
  gen->add_option("--trajectory", trajectory, "loop or lissajous")->capture_default_str();
  gen->add_option("--n-train", world.n_train)->capture_default_str();
  gen->add_option("--n-test", world.n_test)->capture_default_str();
  gen->add_option("--scale", world.scale)->capture_default_str();
  gen->add_option("--position-jitter", world.position_jitter)->capture_default_str();
  gen->add_option("--rotation-jitter", world.rotation_jitter)->capture_default_str();
  gen->add_option("--m1-noise", world.m1.noise)->capture_default_str();
  gen->add_option("--m2-noise", world.m2.noise)->capture_default_str();

  // train
  std::string config_path, data_path, test_path, out_path, report_path, checkpoint_path, corrupt_arg;
  bool no_modality_dropout = false;
  std::uint64_t eval_seed = 0;
  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  tr->add_option("--config", config_path, "flat key=value config file")->required();
  tr->add_option("--data", data_path, "training VMLD1 file")->required();
  tr->add_option("--out", out_path, "checkpoint output path")->required();
  tr->add_option("--test", test_path, "optional held-out VMLD1 file for test metrics");
  tr->add_option("--report", report_path, "write the JSON report here instead of stdout");
  tr->add_flag("--no-modality-dropout", no_modality_dropout, "train with both modalities always present");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", checkpoint_path)->required();
  ev->add_option("--data", data_path)->required();
  ev->add_option("--corrupt", corrupt_arg, "modality:level, or 'all' for the robustness table");
  ev->add_option("--seed", eval_seed, "seed for level-1 block placement")->capture_default_str();
  ev->add_option("--report", report_path);

  auto* ab = app.add_subcommand("ablate", "train all four variants and compare on held-out data");
  ab->add_option("--config", config_path)->required();
  ab->add_option("--data", data_path, "training VMLD1 file")->required();
  ab->add_option("--test", test_path, "held-out VMLD1 file")->required();
  std::vector<std::uint64_t> ablate_seeds;
  ab->add_option("--seeds", ablate_seeds, "comma-separated seeds (default: the config seed)")->delimiter(',');
  ab->add_option("--report", report_path);

  auto* ex = app.add_subcommand("export-traj", "write ground-truth and predicted poses as CSV");
  ex->add_option("--checkpoint", checkpoint_path)->required();
  ex->add_option("--data", data_path)->required();
  ex->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) {
      world.trajectory = trajectory_from_string(trajectory);
      try {
        world.validate();
      } catch (const ContractViolation& e) {
        throw ConfigError(e.what());
      }
      const auto d = generate(world);
      write_dataset(gen_train, d.train, world.m1.dim(), world.m2.dim());
      write_dataset(gen_test, d.test, world.m1.dim(), world.m2.dim());
      emit({{"train", gen_train}, {"test", gen_test}, {"n_train", d.train.size()}, {"n_test", d.test.size()},
            {"feature_dims", {world.m1.dim(), world.m2.dim()}}},
           "");
    } else if (tr->parsed()) {
      const TrainConfig cfg = load_train_config(config_path);
      const auto data = read_dataset(data_path);
      std::optional<DatasetFile> test;
      if (!test_path.empty()) test = read_dataset(test_path);
      auto res = train(cfg, data.records, TrainOptions{!no_modality_dropout});
      save_checkpoint(out_path, res.model);
      if (test) {
        res.report.test = evaluate(res.model, test->records);
        res.report.conditions = robustness_table(res.model, test->records, cfg.seed);
      }
      emit(res.report, report_path);
    } else if (ev->parsed()) {
      auto model = load_checkpoint(checkpoint_path);
      const auto recs = load_records(data_path);
      nlohmann::json j;
      if (corrupt_arg == "all") {
        j = robustness_table(model, recs, eval_seed);
      } else {
        std::optional<CorruptionSpec> c;
        if (!corrupt_arg.empty()) c = parse_corruption(corrupt_arg);
        j = ConditionMetrics{condition_name(c), evaluate(model, recs, c, eval_seed)};
      }
      emit(j, report_path);
    } else if (ab->parsed()) {
      const TrainConfig cfg = load_train_config(config_path);
      const auto data = read_dataset(data_path);
      const auto test = read_dataset(test_path);
      if (feature_dims(data) != feature_dims(test))
        throw DataError("train and test files disagree on feature dimensions");
      if (ablate_seeds.empty()) ablate_seeds.push_back(cfg.seed);
      emit(run_ablation_seeds(cfg, ablate_seeds, data.records, test.records), report_path);
    } else if (ex->parsed()) {
      auto model = load_checkpoint(checkpoint_path);
      export_trajectory(model, load_records(data_path), out_path);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const ContractViolation& e) {
    // e.g. removing the only modality a record carries
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
