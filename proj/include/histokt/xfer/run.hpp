#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "histokt/data.hpp"
#include "histokt/distill.hpp"
#include "histokt/manifest.hpp"
#include "histokt/train.hpp"
#include "histokt/xfer/domain.hpp"

namespace histokt::xfer {

/// A dataset with all three splits decoded and ready to train on.
struct Dataset {
  std::string name;
  DatasetManifest manifest;
  std::string base_dir;
  LabeledData train, val, test;

  std::uint32_t class_count() const {
    return static_cast<std::uint32_t>(manifest.classes.size());
  }
};

inline Dataset load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.manifest = read_manifest(manifest_path);
  ds.name = ds.manifest.name;
  ds.base_dir = fs::path(manifest_path).parent_path().string();
  ds.train = load_split(ds.manifest, ds.base_dir, "train");
  ds.val = load_split(ds.manifest, ds.base_dir, "val");
  ds.test = load_split(ds.manifest, ds.base_dir, "test");
  if (ds.train.n == 0 || ds.val.n == 0 || ds.test.n == 0) {
    throw DataError("dataset '" + ds.name + "' has an empty split");
  }
  return ds;
}

/// Stage tags used in result files and reports.
inline constexpr const char* kStageBaseline = "baseline";
inline constexpr const char* kStageFine = "fine";
inline constexpr const char* kStageDeep = "deep";
inline constexpr const char* kStageDistill = "distill";

struct TrialResult {
  std::uint64_t seed = 0;
  double lr = 0.0;
  std::uint32_t best_epoch = 0;
  double best_val_top1 = 0.0;
  double test_top1 = 0.0;
  std::string ckpt_path;
  std::string history_path;
};

struct RunResult {
  std::string source, target, stage;
  std::vector<TrialResult> trials;  // trials at the selected learning rate
  double mean = 0.0;
  double stdev = 0.0;
  std::string best_ckpt;
  std::map<std::string, std::string> meta;
};

/// Sample standard deviation (n-1 denominator), 0 for a single trial.
inline void recompute_stats(RunResult& r) {
  const std::size_t n = r.trials.size();
  if (n == 0) throw DataError("run result without trials");
  double sum = 0;
  for (const auto& t : r.trials) sum += t.test_top1;
  r.mean = sum / static_cast<double>(n);
  if (n == 1) {
    r.stdev = 0;
    return;
  }
  double ss = 0;
  for (const auto& t : r.trials) ss += (t.test_top1 - r.mean) * (t.test_top1 - r.mean);
  r.stdev = std::sqrt(ss / static_cast<double>(n - 1));
}

inline nlohmann::json run_result_to_json(const RunResult& r) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : r.trials) {
    trials.push_back({{"seed", t.seed},
                      {"lr", t.lr},
                      {"best_epoch", t.best_epoch},
                      {"best_val_top1", t.best_val_top1},
                      {"test_top1", t.test_top1},
                      {"ckpt", t.ckpt_path},
                      {"history", t.history_path}});
  }
  return nlohmann::json{{"source", r.source}, {"target", r.target},   {"stage", r.stage},
                        {"trials", trials},   {"mean", r.mean},       {"stdev", r.stdev},
                        {"best_ckpt", r.best_ckpt},                   {"meta", r.meta}};
}

inline RunResult run_result_from_json(const nlohmann::json& j) {
  RunResult r;
  try {
    r.source = j.at("source").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.stage = j.at("stage").get<std::string>();
    for (const auto& jt : j.at("trials")) {
      TrialResult t;
      t.seed = jt.at("seed").get<std::uint64_t>();
      t.lr = jt.at("lr").get<double>();
      t.best_epoch = jt.at("best_epoch").get<std::uint32_t>();
      t.best_val_top1 = jt.at("best_val_top1").get<double>();
      t.test_top1 = jt.at("test_top1").get<double>();
      t.ckpt_path = jt.value("ckpt", std::string());
      t.history_path = jt.value("history", std::string());
      r.trials.push_back(std::move(t));
    }
    r.mean = j.at("mean").get<double>();
    r.stdev = j.at("stdev").get<double>();
    r.best_ckpt = j.value("best_ckpt", std::string());
    if (j.contains("meta")) {
      for (auto it = j["meta"].begin(); it != j["meta"].end(); ++it) {
        r.meta[it.key()] = it.value().get<std::string>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("run result: ") + e.what());
  }
  return r;
}

inline void write_run_result(const RunResult& r, const std::string& path) {
  write_file_atomic(path, run_result_to_json(r).dump(2) + "\n");
}

/// Output layout for experiment artifacts under one root directory.
struct RunPaths {
  std::string root;

  std::string results_dir() const { return root + "/results"; }
  std::string ckpt_dir() const { return root + "/ckpts"; }
  std::string history_dir() const { return root + "/history"; }
  std::string embeddings_dir() const { return root + "/embeddings"; }

  std::string result_file(const std::string& src, const std::string& tgt,
                          const std::string& stage) const {
    return results_dir() + "/" + src + "__" + tgt + "__" + stage + ".json";
  }
};

/// Architecture knobs shared by every run of one experiment; input dims
/// come from the data.
struct ArchConfig {
  std::uint32_t stem = 16;
  std::vector<nn::StageSpec> stages = {{16, 2, 1}, {32, 2, 2}, {64, 2, 2}};

  nn::ModelSpec to_spec(const LabeledData& sample, std::uint32_t class_count) const {
    nn::ModelSpec spec;
    spec.in_h = sample.h;
    spec.in_w = sample.w;
    spec.in_c = sample.c;
    spec.stem_channels = stem;
    spec.stages = stages;
    spec.class_count = class_count;
    return spec;
  }
};

namespace detail {

struct Candidate {
  TrialResult trial;
  Checkpoint best;
};

inline Candidate run_trial(const Checkpoint& start, const Dataset& ds, const TrainConfig& cfg,
                           const nn::FreezeMask* freeze, const RunPaths& paths,
                           const std::string& file_tag, const std::string& source_label,
                           std::uint64_t trial_seed, double lr) {
  TrainConfig trial_cfg = cfg;
  trial_cfg.seed = trial_seed;
  trial_cfg.lr0 = lr;
  TrainOutput out = train_model(start, ds.train, ds.val, trial_cfg, freeze);
  nn::Metrics test = evaluate(out.best, ds.test, cfg.batch_size);

  Candidate cand;
  cand.trial.seed = trial_seed;
  cand.trial.lr = lr;
  cand.trial.best_epoch = out.best_epoch;
  cand.trial.best_val_top1 = out.best_val_top1;
  cand.trial.test_top1 = test.top1;
  cand.best = std::move(out.best);
  cand.best.meta["source"] = source_label;

  cand.trial.ckpt_path = paths.ckpt_dir() + "/" + file_tag + "__seed" +
                         std::to_string(trial_seed) + ".hktw";
  cand.trial.history_path = paths.history_dir() + "/" + file_tag + "__seed" +
                            std::to_string(trial_seed) + ".csv";
  write_checkpoint(cand.best, cand.trial.ckpt_path);
  write_file_atomic(cand.trial.history_path, history_csv(out.history));
  return cand;
}

}  // namespace detail

/// Trains cfg.trials models from random initialization (seeds seed+0..)
/// and reports mean/stdev test top-1; the best-validation trial provides
/// best_ckpt for later transfer.
inline RunResult train_baseline(const Dataset& ds, const ArchConfig& arch,
                                const TrainConfig& cfg, const RunPaths& paths) {
  TrainConfig base_cfg = cfg;
  base_cfg.use_schedule = false;
  const nn::ModelSpec spec = arch.to_spec(ds.train, ds.class_count());

  RunResult result;
  result.source = ds.name;
  result.target = ds.name;
  result.stage = kStageBaseline;

  double best_val = -1.0;
  for (std::uint32_t t = 0; t < cfg.trials; ++t) {
    const std::uint64_t seed = cfg.seed + t;
    Checkpoint init = build_model(spec, seed);
    init.meta["source"] = ds.name;
    auto cand = detail::run_trial(init, ds, base_cfg, nullptr, paths,
                                  ds.name + "__" + ds.name + "__baseline", ds.name, seed,
                                  cfg.lr0);
    if (cand.trial.best_val_top1 > best_val) {
      best_val = cand.trial.best_val_top1;
      result.best_ckpt = cand.trial.ckpt_path;
    }
    result.trials.push_back(cand.trial);
  }
  recompute_stats(result);
  result.meta["arch"] = nn::arch_id(spec);
  result.meta["optimizer"] = nn::to_string(cfg.optimizer);
  result.meta["selection"] = "best-validation";
  if (ds.manifest.label_mode == LabelMode::kMulti) {
    result.meta["metric"] = "macro-binary-accuracy@0.5";
  }
  return result;
}

/// Transfers a source checkpoint onto a target dataset: head replacement,
/// optional freezing (fine mode), LR grid x trials with the step-halving
/// schedule, best-validation selection. The reported trial list is the
/// grid row of the selected learning rate.
inline RunResult tune(const Checkpoint& source_ckpt, const Dataset& target,
                      const std::string& mode, const TrainConfig& cfg,
                      const std::vector<double>& lr_grid, const RunPaths& paths,
                      const std::string& source_name) {
  if (mode != kStageFine && mode != kStageDeep) {
    throw UsageError("tune mode must be 'fine' or 'deep'");
  }
  if (lr_grid.empty()) throw UsageError("tune: empty learning-rate grid");

  TrainConfig tune_cfg = cfg;
  tune_cfg.use_schedule = true;

  RunResult result;
  result.source = source_name;
  result.target = target.name;
  result.stage = mode;

  const std::string run_name = source_name + "__" + target.name + "__" + mode;
  std::map<double, std::vector<TrialResult>> by_lr;
  double best_val = -1.0;
  double selected_lr = lr_grid.front();

  std::size_t runs = 0;
  for (double lr : lr_grid) {
    for (std::uint32_t t = 0; t < cfg.trials; ++t) {
      const std::uint64_t seed = cfg.seed + t;
      Checkpoint start =
          nn::replace_head(source_ckpt, target.class_count(), derive_key(seed, "head"));
      nn::FreezeMask mask;
      const nn::FreezeMask* freeze = nullptr;
      if (mode == kStageFine) {
        mask = nn::freeze_except_head(start);
        freeze = &mask;
      }
      const std::string tag = run_name + "__lr" + std::to_string(lr);
      auto cand = detail::run_trial(start, target, tune_cfg, freeze, paths, tag,
                                    source_name + ">" + target.name, seed, lr);
      ++runs;
      if (cand.trial.best_val_top1 > best_val) {
        best_val = cand.trial.best_val_top1;
        selected_lr = lr;
        result.best_ckpt = cand.trial.ckpt_path;
      }
      by_lr[lr].push_back(cand.trial);
    }
  }

  result.trials = by_lr.at(selected_lr);
  recompute_stats(result);
  result.meta["mode"] = mode;
  result.meta["grid_runs"] = std::to_string(runs);
  result.meta["lr_selected"] = std::to_string(selected_lr);
  result.meta["optimizer"] = nn::to_string(cfg.optimizer);
  result.meta["selection"] = "best-validation";
  if (target.manifest.label_mode == LabelMode::kMulti) {
    result.meta["metric"] = "macro-binary-accuracy@0.5";
  }
  return result;
}

/// Pretrain -> deep-tune on source -> deep-tune on target (the large
/// generic pretrain domain stands in for a natural-image corpus).
inline RunResult two_stage(const Dataset& pretrain, const Dataset& source,
                           const Dataset& target, const ArchConfig& arch,
                           const TrainConfig& base_cfg, const TrainConfig& tune_cfg,
                           const std::vector<double>& lr_grid, const RunPaths& paths) {
  RunResult pre = train_baseline(pretrain, arch, base_cfg, paths);
  Checkpoint pre_ckpt = read_checkpoint(pre.best_ckpt);

  RunResult mid = tune(pre_ckpt, source, kStageDeep, tune_cfg, lr_grid, paths,
                       pretrain.name + ">" + source.name);
  Checkpoint mid_ckpt = read_checkpoint(mid.best_ckpt);

  RunResult fin = tune(mid_ckpt, target, kStageDeep, tune_cfg, lr_grid, paths,
                       pretrain.name + ">" + source.name + ">" + target.name);
  fin.meta["chain"] = pretrain.name + ">" + source.name + ">" + target.name;
  fin.meta["pretrain_mean"] = std::to_string(pre.mean);
  fin.meta["mid_mean"] = std::to_string(mid.mean);
  return fin;
}

/// Distill m >= 2 source checkpoints, then deep-tune the merged model on
/// the target.
inline RunResult distill_experiment(const std::vector<Checkpoint>& sources,
                                    const Dataset& target, const TrainConfig& tune_cfg,
                                    const std::vector<double>& lr_grid, const RunPaths& paths,
                                    const std::string& merged_name) {
  std::vector<const Checkpoint*> ptrs;
  ptrs.reserve(sources.size());
  for (const auto& c : sources) ptrs.push_back(&c);
  DistillResult merged = distill_checkpoints(ptrs, {.head_seed = tune_cfg.seed});

  write_file_atomic(paths.results_dir() + "/" + merged_name + "__merge_report.json",
                    merged.report.to_json().dump(2) + "\n");

  RunResult result =
      tune(merged.merged, target, kStageDeep, tune_cfg, lr_grid, paths, merged_name);
  result.stage = kStageDistill;
  result.meta["distilled_from"] = merged.merged.meta.at("distilled_from");
  result.meta["merge_count"] = merged.merged.meta.at("merge_count");
  return result;
}

/// One CSV row per sample: id, labels (| separated), then the post-GAP
/// feature vector. Eval mode, deterministic order.
inline std::string embeddings_csv(const Checkpoint& ckpt, const LabeledData& data,
                                  const DatasetManifest& manifest,
                                  std::uint32_t batch_size = 64) {
  if (data.n == 0) throw DataError("export_embeddings: empty split");
  auto net = nn::Network<float>::from_checkpoint(ckpt);
  const std::uint32_t feat_dim = net.spec().feature_dim();

  std::string csv = "id,labels";
  for (std::uint32_t i = 0; i < feat_dim; ++i) csv += ",f" + std::to_string(i);
  csv += "\n";

  std::vector<std::size_t> order(data.n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> inputs;
  std::vector<int> single;
  std::vector<std::uint8_t> multihot;
  char buf[32];
  for (std::size_t begin = 0; begin < data.n; begin += batch_size) {
    const std::size_t count = std::min<std::size_t>(batch_size, data.n - begin);
    data.gather(order, begin, count, inputs, single, multihot);
    net.forward(inputs, count, /*train=*/false);
    const auto& feats = net.features();
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t idx = begin + i;
      csv += data.ids[idx];
      csv += ",";
      if (data.mode == LabelMode::kSingle) {
        csv += manifest.classes[static_cast<std::size_t>(data.single[idx])];
      } else {
        bool first = true;
        for (std::uint32_t c = 0; c < data.classes; ++c) {
          if (data.multihot[idx * data.classes + c]) {
            if (!first) csv += "|";
            csv += manifest.classes[c];
            first = false;
          }
        }
      }
      for (std::uint32_t f = 0; f < feat_dim; ++f) {
        std::snprintf(buf, sizeof(buf), ",%.9g", static_cast<double>(feats[i * feat_dim + f]));
        csv += buf;
      }
      csv += "\n";
    }
  }
  return csv;
}

inline void export_embeddings(const Checkpoint& ckpt, const Dataset& ds,
                              const std::string& split, const std::string& out_path) {
  const LabeledData* data = nullptr;
  if (split == "train") data = &ds.train;
  else if (split == "val") data = &ds.val;
  else if (split == "test") data = &ds.test;
  else throw UsageError("unknown split: " + split);
  write_file_atomic(out_path, embeddings_csv(ckpt, *data, ds.manifest));
}

}  // namespace histokt::xfer
