// histokt: desk-scale histopathology knowledge-transfer toolkit.
// Subcommands: standardize, train, tune, distill, matrix, two-stage,
// embed, gradcheck, gen-domain. Logs go to stderr; machine-readable
// outputs go to files only.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "histokt/checkpoint.hpp"
#include "histokt/crc32.hpp"
#include "histokt/distill.hpp"
#include "histokt/nn/gradcheck.hpp"
#include "histokt/standardize.hpp"
#include "histokt/train.hpp"
#include "histokt/version.hpp"
#include "histokt/xfer/config.hpp"
#include "histokt/xfer/matrix.hpp"
#include "histokt/xfer/run.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitData = 3;

struct GlobalOpts {
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

std::string crc_hex(const std::string& path) {
  const auto bytes = histokt::read_file_bytes(path);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", histokt::crc32(bytes.data(), bytes.size()));
  return buf;
}

/// Provenance record: full effective config, tool version, input hashes.
void write_run_record(const std::string& out_path, const std::string& subcommand,
                      const json& config, const std::vector<std::string>& inputs) {
  json inputs_json = json::object();
  for (const auto& path : inputs) {
    try {
      inputs_json[path] = crc_hex(path);
    } catch (const std::exception&) {
      inputs_json[path] = "unreadable";
    }
  }
  json record{{"tool", "histokt"},
              {"version", histokt::kVersion},
              {"subcommand", subcommand},
              {"config", config},
              {"inputs", inputs_json}};
  histokt::write_file_atomic(out_path, record.dump(2) + "\n");
}

std::vector<double> parse_lr_grid(const std::string& csv) {
  std::vector<double> grid;
  std::size_t start = 0;
  while (start < csv.size()) {
    const std::size_t pos = csv.find(',', start);
    const std::string tok = csv.substr(start, pos == std::string::npos ? pos : pos - start);
    try {
      grid.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw histokt::UsageError("bad learning rate in --lr-grid: '" + tok + "'");
    }
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (grid.empty()) throw histokt::UsageError("--lr-grid is empty");
  return grid;
}

histokt::xfer::ArchConfig parse_arch(std::uint32_t stem, const std::string& stages_str) {
  histokt::xfer::ArchConfig arch;
  arch.stem = stem;
  arch.stages.clear();
  if (stages_str != "-") {
    // Same stage grammar as the arch_id: <ch>x<blocks>s<stride>,...
    const histokt::nn::ModelSpec parsed =
        histokt::nn::parse_arch_id("mrn1:1x1x1:stem" + std::to_string(stem ? stem : 1) + ":" +
                                   stages_str);
    arch.stages = parsed.stages;
  }
  return arch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"histopathology knowledge-transfer toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global --seed/--workers may follow the subcommand
  app.set_version_flag("--version", std::string("histokt ") + histokt::kVersion);

  GlobalOpts global;
  app.add_option("--seed", global.seed, "global RNG seed")
      ->envname("HISTOKT_SEED")
      ->capture_default_str();
  app.add_option("--workers", global.workers, "worker threads for parallel cells")
      ->envname("HISTOKT_WORKERS")
      ->capture_default_str();

  // ---- standardize ----
  auto* standardize = app.add_subcommand("standardize", "rescale, tile, wrap, filter a dataset");
  std::string std_manifest, std_out;
  histokt::StandardizeParams std_params;
  standardize->add_option("--manifest", std_manifest, "dataset manifest JSON")
      ->required()
      ->check(CLI::ExistingFile);
  standardize->add_option("--out", std_out, "output directory")->required();
  standardize->add_option("--target-um", std_params.target_resolution_um,
                          "target pixel resolution (microns)")
      ->capture_default_str();
  standardize->add_option("--patch", std_params.patch, "patch size in pixels")
      ->capture_default_str();
  standardize->add_option("--overlap", std_params.overlap_frac, "tile overlap fraction [0,1)")
      ->capture_default_str();
  standardize->add_option("--lo", std_params.lo_pct, "low luma percentile")
      ->capture_default_str();
  standardize->add_option("--hi", std_params.hi_pct, "high luma percentile")
      ->capture_default_str();
  standardize->add_option("--frac", std_params.frac, "minimum luma span fraction to keep")
      ->capture_default_str();

  // ---- train ----
  auto* train = app.add_subcommand("train", "train baseline models from random init");
  std::string train_manifest, train_out;
  std::uint32_t train_stem = 16;
  std::string train_stages = "16x2s1,32x2s2,64x2s2";
  histokt::TrainConfig train_cfg;
  train_cfg.epochs = 250;
  std::string train_opt = "sgdm";
  train->add_option("--manifest", train_manifest, "dataset manifest JSON")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "run output directory")->required();
  train->add_option("--stem", train_stem, "stem channels")->capture_default_str();
  train->add_option("--stages", train_stages, "stages as <ch>x<blocks>s<stride>,... or '-'")
      ->capture_default_str();
  train->add_option("--optimizer", train_opt, "sgdm | adamw")->capture_default_str();
  train->add_option("--lr0", train_cfg.lr0, "initial learning rate")->capture_default_str();
  train->add_option("--momentum", train_cfg.momentum, "SGD momentum")->capture_default_str();
  train->add_option("--weight-decay", train_cfg.weight_decay, "weight decay")
      ->capture_default_str();
  train->add_option("--epochs", train_cfg.epochs, "training epochs")->capture_default_str();
  train->add_option("--batch", train_cfg.batch_size, "batch size")->capture_default_str();
  train->add_option("--trials", train_cfg.trials, "independent trials")->capture_default_str();

  // ---- tune ----
  auto* tune_cmd = app.add_subcommand("tune", "fine/deep-tune a checkpoint on a target dataset");
  std::string tune_ckpt, tune_manifest, tune_out, tune_mode;
  std::string tune_grid = "0.03,0.01,0.003,0.001,0.0003";
  std::string tune_opt = "adamw";
  histokt::TrainConfig tune_cfg;
  tune_cfg.epochs = 250;
  tune_cmd->add_option("--ckpt", tune_ckpt, "source checkpoint (.hktw)")
      ->required()
      ->check(CLI::ExistingFile);
  tune_cmd->add_option("--manifest", tune_manifest, "target dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  tune_cmd->add_option("--mode", tune_mode, "fine | deep")->required();
  tune_cmd->add_option("--out", tune_out, "run output directory")->required();
  tune_cmd->add_option("--lr-grid", tune_grid, "comma-separated learning-rate grid")
      ->capture_default_str();
  tune_cmd->add_option("--optimizer", tune_opt, "sgdm | adamw")->capture_default_str();
  tune_cmd->add_option("--weight-decay", tune_cfg.weight_decay, "weight decay")
      ->capture_default_str();
  tune_cmd->add_option("--epochs", tune_cfg.epochs, "tuning epochs")->capture_default_str();
  tune_cmd->add_option("--batch", tune_cfg.batch_size, "batch size")->capture_default_str();
  tune_cmd->add_option("--trials", tune_cfg.trials, "trials per learning rate")
      ->capture_default_str();
  tune_cmd
      ->add_option("--schedule-period", tune_cfg.schedule_period,
                   "epochs between learning-rate halvings")
      ->capture_default_str();

  // ---- distill ----
  auto* distill_cmd = app.add_subcommand("distill", "merge checkpoints by SVD weight distillation");
  std::vector<std::string> distill_ckpts;
  std::string distill_out, distill_report;
  distill_cmd->add_option("--ckpts", distill_ckpts, "2+ checkpoints, anchor first");
  distill_cmd->add_option("--out", distill_out, "merged checkpoint path")->required();
  distill_cmd->add_option("--report", distill_report, "merge report JSON path");

  // ---- matrix ----
  auto* matrix_cmd = app.add_subcommand("matrix", "full source x target transfer matrix");
  std::string matrix_config, matrix_out;
  bool matrix_resume = false;
  matrix_cmd->add_option("--config", matrix_config, "experiment config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  matrix_cmd->add_option("--out", matrix_out, "override config out_dir");
  matrix_cmd->add_flag("--resume", matrix_resume, "skip cells whose result JSON exists");

  // ---- two-stage ----
  auto* two_cmd = app.add_subcommand("two-stage", "pretrain -> source -> target deep-tuning");
  std::string two_pre, two_src, two_tgt, two_out;
  std::string two_grid = "0.03,0.01,0.003,0.001,0.0003";
  std::uint32_t two_stem = 16;
  std::string two_stages = "16x2s1,32x2s2,64x2s2";
  histokt::TrainConfig two_cfg;
  two_cfg.epochs = 250;
  two_cmd->add_option("--pretrain", two_pre, "pretrain dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  two_cmd->add_option("--source", two_src, "source dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  two_cmd->add_option("--target", two_tgt, "target dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  two_cmd->add_option("--out", two_out, "run output directory")->required();
  two_cmd->add_option("--stem", two_stem, "stem channels")->capture_default_str();
  two_cmd->add_option("--stages", two_stages, "stage spec")->capture_default_str();
  two_cmd->add_option("--lr-grid", two_grid, "learning-rate grid")->capture_default_str();
  two_cmd->add_option("--epochs", two_cfg.epochs, "epochs per stage")->capture_default_str();
  two_cmd->add_option("--batch", two_cfg.batch_size, "batch size")->capture_default_str();
  two_cmd->add_option("--trials", two_cfg.trials, "trials")->capture_default_str();

  // ---- embed ----
  auto* embed_cmd = app.add_subcommand("embed", "export penultimate-layer embeddings as CSV");
  std::string embed_ckpt, embed_manifest, embed_split = "test", embed_out;
  embed_cmd->add_option("--ckpt", embed_ckpt, "checkpoint (.hktw)")
      ->required()
      ->check(CLI::ExistingFile);
  embed_cmd->add_option("--manifest", embed_manifest, "dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  embed_cmd->add_option("--split", embed_split, "train | val | test")->capture_default_str();
  embed_cmd->add_option("--out", embed_out, "output CSV path")->required();

  // ---- gradcheck ----
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the backprop");
  std::uint32_t grad_stem = 6;
  std::string grad_stages = "6x1s1,8x1s2";
  std::uint32_t grad_h = 12, grad_w = 12, grad_classes = 3, grad_batch = 3;
  std::size_t grad_samples = 200;
  double grad_tol = 1e-4;
  bool grad_train_bn = false;
  grad_cmd->add_option("--stem", grad_stem, "stem channels")->capture_default_str();
  grad_cmd->add_option("--stages", grad_stages, "stage spec")->capture_default_str();
  grad_cmd->add_option("--in-h", grad_h, "input height")->capture_default_str();
  grad_cmd->add_option("--in-w", grad_w, "input width")->capture_default_str();
  grad_cmd->add_option("--classes", grad_classes, "class count")->capture_default_str();
  grad_cmd->add_option("--batch", grad_batch, "batch size")->capture_default_str();
  grad_cmd->add_option("--samples", grad_samples, "parameter entries to sample")
      ->capture_default_str();
  grad_cmd->add_option("--tol", grad_tol, "max relative error to pass")->capture_default_str();
  grad_cmd->add_flag("--train-bn", grad_train_bn, "use batch statistics in the check");

  // ---- gen-domain ----
  auto* gen_cmd = app.add_subcommand("gen-domain", "generate a synthetic image domain");
  std::string gen_spec, gen_out;
  gen_cmd->add_option("--spec", gen_spec, "domain spec JSON")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (standardize->parsed()) {
      std_params.workers = global.workers;
      histokt::DatasetManifest manifest = histokt::read_manifest(std_manifest);
      const std::string manifest_dir = fs::path(std_manifest).parent_path().string();
      auto result = histokt::standardize_dataset(manifest, manifest_dir, std_out, std_params);
      write_run_record(std_out + "/run.json", "standardize",
                       json{{"manifest", std_manifest},
                            {"out", std_out},
                            {"target_um", std_params.target_resolution_um},
                            {"patch", std_params.patch},
                            {"overlap", std_params.overlap_frac},
                            {"lo", std_params.lo_pct},
                            {"hi", std_params.hi_pct},
                            {"frac", std_params.frac},
                            {"workers", std_params.workers},
                            {"seed", global.seed}},
                       {std_manifest});
      std::size_t kept = 0, filtered = 0;
      for (const auto& [split, counts] : result.summary.per_split) {
        kept += counts.patches_kept;
        filtered += counts.patches_filtered;
      }
      std::fprintf(stderr, "standardize: %zu kept, %zu filtered, %zu errors -> %s\n", kept,
                   filtered, result.summary.errors.size(), std_out.c_str());
      return kExitOk;
    }

    if (train->parsed()) {
      train_cfg.optimizer = histokt::nn::opt_kind_from_string(train_opt);
      train_cfg.seed = global.seed;
      train_cfg.validate();
      histokt::xfer::Dataset ds = histokt::xfer::load_dataset(train_manifest);
      histokt::xfer::ArchConfig arch = parse_arch(train_stem, train_stages);
      histokt::xfer::RunPaths paths{train_out};
      auto result = histokt::xfer::train_baseline(ds, arch, train_cfg, paths);
      fs::create_directories(paths.results_dir());
      histokt::xfer::write_run_result(
          result, paths.result_file(ds.name, ds.name, histokt::xfer::kStageBaseline));
      write_run_record(train_out + "/run.json", "train",
                       json{{"manifest", train_manifest},
                            {"out", train_out},
                            {"stem", train_stem},
                            {"stages", train_stages},
                            {"train", histokt::xfer::train_config_to_json(train_cfg)},
                            {"seed", global.seed}},
                       {train_manifest});
      std::fprintf(stderr, "train: %s mean test top1 %.4f (stdev %.4f), best %s\n",
                   ds.name.c_str(), result.mean, result.stdev, result.best_ckpt.c_str());
      return kExitOk;
    }

    if (tune_cmd->parsed()) {
      if (tune_mode != "fine" && tune_mode != "deep") {
        throw histokt::UsageError("--mode must be 'fine' or 'deep'");
      }
      tune_cfg.optimizer = histokt::nn::opt_kind_from_string(tune_opt);
      tune_cfg.seed = global.seed;
      tune_cfg.use_schedule = true;
      tune_cfg.validate();
      const auto grid = parse_lr_grid(tune_grid);
      histokt::Checkpoint src = histokt::read_checkpoint(tune_ckpt);
      histokt::xfer::Dataset tgt = histokt::xfer::load_dataset(tune_manifest);
      const std::string src_name =
          src.meta.count("source") ? src.meta.at("source") : fs::path(tune_ckpt).stem().string();
      histokt::xfer::RunPaths paths{tune_out};
      auto result = histokt::xfer::tune(src, tgt, tune_mode, tune_cfg, grid, paths, src_name);
      fs::create_directories(paths.results_dir());
      histokt::xfer::write_run_result(result,
                                      paths.result_file(src_name, tgt.name, tune_mode));
      write_run_record(tune_out + "/run.json", "tune",
                       json{{"ckpt", tune_ckpt},
                            {"manifest", tune_manifest},
                            {"mode", tune_mode},
                            {"out", tune_out},
                            {"lr_grid", grid},
                            {"tune", histokt::xfer::train_config_to_json(tune_cfg)},
                            {"seed", global.seed}},
                       {tune_ckpt, tune_manifest});
      std::fprintf(stderr, "tune(%s): %s -> %s mean test top1 %.4f (lr %s)\n",
                   tune_mode.c_str(), src_name.c_str(), tgt.name.c_str(), result.mean,
                   result.meta.at("lr_selected").c_str());
      return kExitOk;
    }

    if (distill_cmd->parsed()) {
      if (distill_ckpts.size() < 2) {
        throw histokt::UsageError("distill: need >= 2 checkpoints via --ckpts");
      }
      std::vector<histokt::Checkpoint> loaded;
      for (const auto& path : distill_ckpts) loaded.push_back(histokt::read_checkpoint(path));
      std::vector<const histokt::Checkpoint*> ptrs;
      for (const auto& c : loaded) ptrs.push_back(&c);
      auto result = histokt::distill_checkpoints(ptrs, {.head_seed = global.seed});
      histokt::write_checkpoint(result.merged, distill_out);
      if (!distill_report.empty()) {
        histokt::write_file_atomic(distill_report, result.report.to_json().dump(2) + "\n");
      }
      write_run_record(distill_out + ".run.json", "distill",
                       json{{"ckpts", distill_ckpts},
                            {"out", distill_out},
                            {"report", distill_report},
                            {"seed", global.seed}},
                       distill_ckpts);
      std::fprintf(stderr, "distill: merged %zu checkpoints -> %s\n", loaded.size(),
                   distill_out.c_str());
      return kExitOk;
    }

    if (matrix_cmd->parsed()) {
      histokt::xfer::ExperimentConfig cfg = histokt::xfer::read_experiment_config(matrix_config);
      if (!matrix_out.empty()) cfg.out_dir = matrix_out;
      if (app.count("--seed")) {
        cfg.seed = global.seed;
        cfg.train.seed = global.seed;
        cfg.tune.seed = global.seed;
      }
      if (app.count("--workers")) cfg.workers = global.workers;
      std::vector<histokt::xfer::Dataset> datasets =
          histokt::xfer::materialize_datasets(cfg, matrix_resume);
      std::vector<const histokt::xfer::Dataset*> ptrs;
      for (const auto& ds : datasets) ptrs.push_back(&ds);
      histokt::xfer::RunPaths paths{cfg.out_dir};
      histokt::xfer::MatrixOptions options;
      options.workers = cfg.workers;
      options.resume = matrix_resume;
      auto matrix = histokt::xfer::transfer_matrix(ptrs, cfg.arch, cfg.train, cfg.tune,
                                                   cfg.lr_grid, paths, options);
      auto files = histokt::xfer::emit_report(matrix, cfg.out_dir);
      write_run_record(cfg.out_dir + "/run.json", "matrix",
                       json{{"config", matrix_config},
                            {"out", cfg.out_dir},
                            {"resume", matrix_resume},
                            {"workers", cfg.workers},
                            {"seed", cfg.seed}},
                       {matrix_config});
      std::fprintf(stderr, "matrix: %zu cells, %zu errors -> %s\n", matrix.cells.size(),
                   matrix.errors.size(), files.csv_path.c_str());
      return matrix.errors.empty() ? kExitOk : kExitRuntime;
    }

    if (two_cmd->parsed()) {
      two_cfg.seed = global.seed;
      two_cfg.validate();
      const auto grid = parse_lr_grid(two_grid);
      histokt::xfer::Dataset pre = histokt::xfer::load_dataset(two_pre);
      histokt::xfer::Dataset src = histokt::xfer::load_dataset(two_src);
      histokt::xfer::Dataset tgt = histokt::xfer::load_dataset(two_tgt);
      histokt::xfer::ArchConfig arch = parse_arch(two_stem, two_stages);
      histokt::TrainConfig tune_stage_cfg = two_cfg;
      tune_stage_cfg.optimizer = histokt::nn::OptKind::kAdamW;
      tune_stage_cfg.use_schedule = true;
      histokt::xfer::RunPaths paths{two_out};
      auto result = histokt::xfer::two_stage(pre, src, tgt, arch, two_cfg, tune_stage_cfg,
                                             grid, paths);
      fs::create_directories(paths.results_dir());
      histokt::xfer::write_run_result(
          result, paths.results_dir() + "/two_stage__" + pre.name + "__" + src.name + "__" +
                      tgt.name + ".json");
      write_run_record(two_out + "/run.json", "two-stage",
                       json{{"pretrain", two_pre},
                            {"source", two_src},
                            {"target", two_tgt},
                            {"out", two_out},
                            {"lr_grid", grid},
                            {"seed", global.seed}},
                       {two_pre, two_src, two_tgt});
      std::fprintf(stderr, "two-stage %s: mean test top1 %.4f\n",
                   result.meta.at("chain").c_str(), result.mean);
      return kExitOk;
    }

    if (embed_cmd->parsed()) {
      histokt::Checkpoint ckpt = histokt::read_checkpoint(embed_ckpt);
      histokt::xfer::Dataset ds = histokt::xfer::load_dataset(embed_manifest);
      histokt::xfer::export_embeddings(ckpt, ds, embed_split, embed_out);
      write_run_record(embed_out + ".run.json", "embed",
                       json{{"ckpt", embed_ckpt},
                            {"manifest", embed_manifest},
                            {"split", embed_split},
                            {"out", embed_out},
                            {"seed", global.seed}},
                       {embed_ckpt, embed_manifest});
      std::fprintf(stderr, "embed: wrote %s\n", embed_out.c_str());
      return kExitOk;
    }

    if (grad_cmd->parsed()) {
      histokt::nn::ModelSpec spec;
      spec.in_h = grad_h;
      spec.in_w = grad_w;
      spec.in_c = 3;
      spec.stem_channels = grad_stem;
      spec.stages = parse_arch(grad_stem, grad_stages).stages;
      spec.class_count = grad_classes;
      auto result =
          histokt::nn::grad_check(spec, global.seed, grad_batch, grad_samples, grad_train_bn);
      std::fprintf(stderr, "gradcheck: max relative error %.3e over %zu entries (tol %.1e)\n",
                   result.max_rel_err, result.entries_checked, grad_tol);
      return result.max_rel_err < grad_tol ? kExitOk : kExitData;
    }

    if (gen_cmd->parsed()) {
      const auto bytes = histokt::read_file_bytes(gen_spec);
      json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
      if (j.is_discarded()) throw histokt::DataError("invalid JSON in " + gen_spec);
      histokt::xfer::DomainSpec spec = histokt::xfer::domain_from_json(j);
      histokt::xfer::gen_domain(spec, global.seed, gen_out);
      write_run_record(gen_out + "/run.json", "gen-domain",
                       json{{"spec", gen_spec}, {"out", gen_out}, {"seed", global.seed}},
                       {gen_spec});
      std::fprintf(stderr, "gen-domain: %s -> %s\n", spec.name.c_str(), gen_out.c_str());
      return kExitOk;
    }
  } catch (const histokt::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const histokt::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
