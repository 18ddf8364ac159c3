#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <atrl/dataset.hpp>
#include <atrl/eval.hpp>
#include <atrl/feature_export.hpp>
#include <atrl/loader.hpp>
#include <atrl/sweep.hpp>
#include <atrl/synthetic.hpp>
#include <atrl/trainer.hpp>

namespace {

using namespace atrl;

// Loads the manifest plus its normalization sidecar, computing and saving
// the sidecar from the train split when it is missing.
Loader open_dataset(const std::string& manifest_path, std::size_t workers) {
  DatasetManifest manifest = load_manifest(manifest_path);
  const std::string stats_path = norm_stats_path(manifest_path);
  NormStats stats;
  if (std::filesystem::exists(stats_path)) {
    stats = load_norm_stats(stats_path);
  } else {
    stats = compute_norm_stats(manifest);
    save_norm_stats(stats_path, stats);
  }
  return Loader(std::move(manifest), std::move(stats), workers);
}

struct LoadedRun {
  TrainConfig cfg;
  ModelConfig model;
  ParameterSet params;
  AttributeCenterBank bank;
  RunState state;
};

LoadedRun load_run(const std::string& checkpoint_path,
                   const DatasetManifest& manifest) {
  const CheckpointInfo info = peek_checkpoint(checkpoint_path);
  const TrainConfig cfg = TrainConfig::from_config(
      KVConfig::parse_string(info.config_text, checkpoint_path));
  ModelConfig mc = cfg.model;
  mc.in_channels = 3;
  mc.input_resolution = cfg.resolution;
  mc.num_classes = manifest.classes().size();
  mc.validate();
  LoadedRun run{cfg, mc, build_model(mc, cfg.seed),
                AttributeCenterBank(manifest.attributes(), mc.feature_dim,
                                    cfg.center_alpha, cfg.center_init),
                RunState{}};
  load_checkpoint(checkpoint_path, run.params, run.bank, run.state);
  return run;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    const std::string item = s.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw Error("bad number '" + item + "' in '" + s + "'");
    }
    pos = comma + 1;
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (std::size_t v : TrainConfig::parse_size_list(s))
    out.push_back(static_cast<std::uint64_t>(v));
  return out;
}

int run_synth(const std::string& spec_path, const std::string& out_dir,
              std::int64_t seed_override) {
  const KVConfig kv = KVConfig::parse_file(spec_path);
  SyntheticSpec spec = SyntheticSpec::from_config(kv);
  kv.reject_unknown();
  if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
  const std::string manifest_path = generate_synthetic(spec, out_dir);
  nlohmann::ordered_json j;
  j["manifest"] = manifest_path;
  j["stats"] = norm_stats_path(manifest_path);
  j["images"] = spec.num_classes * (spec.train_per_class + spec.val_per_class +
                                    spec.test_per_class);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, bool resume,
              std::int64_t seed_override, std::size_t workers) {
  const KVConfig kv = KVConfig::parse_file(config_path);
  TrainConfig cfg = TrainConfig::from_config(kv);
  kv.reject_unknown();
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  Loader loader = open_dataset(data_path, workers);
  const TrainResult r = train_model(cfg, loader, out_dir, resume);
  nlohmann::ordered_json j;
  j["epochs"] = r.state.epoch;
  j["checkpoint"] =
      (std::filesystem::path(out_dir) / kCheckpointFile).string();
  j["metrics"] = (std::filesystem::path(out_dir) / kMetricsFile).string();
  if (!r.state.history.empty()) {
    j["final_total"] = r.state.history.back().total;
    j["final_val_top1"] = r.state.history.back().val_top1;
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& split_str, std::size_t resolution,
             const std::string& mode_str, std::size_t workers) {
  Loader loader = open_dataset(data_path, workers);
  LoadedRun run = load_run(checkpoint_path, loader.manifest());
  if (resolution != 0) {
    run.model.input_resolution = resolution;
    run.model.validate();
  }
  const EvalReport rep =
      evaluate(run.params, run.model, loader, parse_split(split_str),
               parse_eval_mode(mode_str));
  std::cout << rep.to_json().dump(2) << "\n";
  return 0;
}

int run_sweep(const std::string& config_path, const std::string& data_path,
              const std::string& lambdas_str, const std::string& seeds_str,
              const std::string& resolutions_str,
              const std::string& variants_str, std::size_t workers) {
  const KVConfig kv = KVConfig::parse_file(config_path);
  const TrainConfig base = TrainConfig::from_config(kv);
  kv.reject_unknown();
  if (lambdas_str.empty() == resolutions_str.empty())
    throw Error("pass exactly one of --lambdas or --resolutions");
  const std::vector<std::uint64_t> seeds =
      seeds_str.empty() ? std::vector<std::uint64_t>{base.seed}
                        : parse_seed_list(seeds_str);
  Loader loader = open_dataset(data_path, workers);

  if (!lambdas_str.empty()) {
    const SweepResult sweep =
        lambda_sweep(base, loader, parse_double_list(lambdas_str), seeds);
    std::cout << sweep.to_json().dump(2) << "\n";
    return 0;
  }
  if (!variants_str.empty()) {
    std::vector<std::string> variants;
    std::size_t pos = 0;
    while (pos <= variants_str.size()) {
      std::size_t comma = variants_str.find(',', pos);
      if (comma == std::string::npos) comma = variants_str.size();
      variants.push_back(variants_str.substr(pos, comma - pos));
      pos = comma + 1;
    }
    std::sort(variants.begin(), variants.end());
    if (variants != std::vector<std::string>{"ce", "proposed"})
      throw Error("--variants must name both 'ce' and 'proposed'");
  }
  std::vector<std::size_t> resolutions =
      TrainConfig::parse_size_list(resolutions_str);
  const ResolutionSweep sweep =
      resolution_sweep(base, loader, resolutions, base.lambda, seeds);
  std::cerr << sweep.table();
  std::cout << sweep.to_json().dump(2) << "\n";
  return 0;
}

int run_export(const std::string& checkpoint_path, const std::string& data_path,
               const std::string& split_str, const std::string& out_dir,
               std::size_t workers) {
  Loader loader = open_dataset(data_path, workers);
  LoadedRun run = load_run(checkpoint_path, loader.manifest());
  const ExportPaths paths =
      export_features(run.params, run.model, loader, parse_split(split_str),
                      out_dir);
  nlohmann::ordered_json j;
  j["features_csv"] = paths.features_csv;
  j["pca_csv"] = paths.pca_csv;
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Low-resolution fine-grained classifier: synthetic data, training "
      "with an attribute-center loss, evaluation, and sweeps"};
  app.require_subcommand(1);
  std::size_t workers = 1;
  app.add_option("--workers", workers, "Loader worker threads");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string synth_spec, synth_out;
  std::int64_t synth_seed = -1;
  synth->add_option("--spec", synth_spec, "Dataset spec (key = value)")
      ->required();
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Override the spec seed");

  auto* train = app.add_subcommand("train", "Train a model");
  std::string train_config, train_data, train_out;
  bool train_resume = false;
  std::int64_t train_seed = -1;
  train->add_option("--config", train_config, "Training config (key = value)")
      ->required();
  train->add_option("--data", train_data, "Dataset manifest csv")->required();
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_flag("--resume", train_resume, "Continue from the checkpoint");
  train->add_option("--seed", train_seed, "Override the config seed");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_split = "test",
                         eval_mode = "trained-head";
  std::size_t eval_resolution = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")
      ->required();
  eval_cmd->add_option("--data", eval_data, "Dataset manifest csv")
      ->required();
  eval_cmd->add_option("--split", eval_split, "train|val|test");
  eval_cmd->add_option("--resolution", eval_resolution,
                       "Evaluate at this resolution (default: as trained)");
  eval_cmd->add_option("--mode", eval_mode,
                       "trained-head|euclidean-centroid");

  auto* sweep = app.add_subcommand("sweep", "Grid runs over lambda or "
                                            "resolution");
  std::string sweep_config, sweep_data, sweep_lambdas, sweep_seeds,
      sweep_resolutions, sweep_variants;
  sweep->add_option("--config", sweep_config, "Base training config")
      ->required();
  sweep->add_option("--data", sweep_data, "Dataset manifest csv")->required();
  sweep->add_option("--lambdas,--lambda", sweep_lambdas,
                    "Comma list of lambda values");
  sweep->add_option("--seeds", sweep_seeds, "Comma list of seeds");
  sweep->add_option("--resolutions", sweep_resolutions,
                    "Comma list of resolutions");
  sweep->add_option("--variants", sweep_variants,
                    "ce,proposed (resolution mode)");

  auto* exp = app.add_subcommand("export-features",
                                 "Write feature and PCA csv files");
  std::string exp_ckpt, exp_data, exp_split = "test", exp_out;
  exp->add_option("--checkpoint", exp_ckpt, "Checkpoint file")->required();
  exp->add_option("--data", exp_data, "Dataset manifest csv")->required();
  exp->add_option("--split", exp_split, "train|val|test");
  exp->add_option("--out", exp_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return run_synth(synth_spec, synth_out, synth_seed);
    if (*train)
      return run_train(train_config, train_data, train_out, train_resume,
                       train_seed, workers);
    if (*eval_cmd)
      return run_eval(eval_ckpt, eval_data, eval_split, eval_resolution,
                      eval_mode, workers);
    if (*sweep)
      return run_sweep(sweep_config, sweep_data, sweep_lambdas, sweep_seeds,
                       sweep_resolutions, sweep_variants, workers);
    if (*exp)
      return run_export(exp_ckpt, exp_data, exp_split, exp_out, workers);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
