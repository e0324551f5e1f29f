#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "histokt/errors.hpp"
#include "histokt/io_util.hpp"
#include "histokt/train.hpp"
#include "histokt/xfer/domain.hpp"
#include "histokt/xfer/run.hpp"

namespace histokt::xfer {

/// Declarative experiment description: which datasets (generated domains
/// and/or manifests on disk), the architecture, train/tune settings, the
/// LR grid, seeds, and worker count.
struct ExperimentConfig {
  std::string out_dir = "runs";
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  ArchConfig arch;
  TrainConfig train;
  TrainConfig tune;
  std::vector<double> lr_grid = {0.03, 0.01, 0.003, 0.001, 0.0003};
  std::vector<DomainSpec> domains;
  std::vector<std::string> manifests;

  void apply_defaults() {
    train.optimizer = nn::OptKind::kSgdm;
    tune.optimizer = nn::OptKind::kAdamW;
    tune.use_schedule = true;
  }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  if (j.contains("optimizer")) {
    base.optimizer = nn::opt_kind_from_string(j["optimizer"].get<std::string>());
  }
  base.lr0 = j.value("lr0", base.lr0);
  base.momentum = j.value("momentum", base.momentum);
  base.weight_decay = j.value("weight_decay", base.weight_decay);
  base.epochs = j.value("epochs", base.epochs);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.trials = j.value("trials", base.trials);
  base.schedule_period = j.value("schedule_period", base.schedule_period);
  return base;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return nlohmann::json{{"optimizer", nn::to_string(cfg.optimizer)},
                        {"lr0", cfg.lr0},
                        {"momentum", cfg.momentum},
                        {"weight_decay", cfg.weight_decay},
                        {"epochs", cfg.epochs},
                        {"batch_size", cfg.batch_size},
                        {"trials", cfg.trials},
                        {"schedule_period", cfg.schedule_period}};
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.apply_defaults();
  try {
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.workers = j.value("workers", cfg.workers);
    if (j.contains("arch")) {
      cfg.arch.stem = j["arch"].value("stem", cfg.arch.stem);
      if (j["arch"].contains("stages")) {
        cfg.arch.stages.clear();
        for (const auto& st : j["arch"]["stages"]) {
          cfg.arch.stages.push_back({st.at(0).get<std::uint32_t>(),
                                     st.at(1).get<std::uint32_t>(),
                                     st.at(2).get<std::uint32_t>()});
        }
      }
    }
    if (j.contains("train")) cfg.train = train_config_from_json(j["train"], cfg.train);
    cfg.tune = cfg.train;
    cfg.tune.optimizer = nn::OptKind::kAdamW;
    cfg.tune.use_schedule = true;
    if (j.contains("tune")) cfg.tune = train_config_from_json(j["tune"], cfg.tune);
    cfg.tune.use_schedule = true;
    if (j.contains("lr_grid")) cfg.lr_grid = j["lr_grid"].get<std::vector<double>>();
    if (j.contains("domains")) {
      for (const auto& jd : j["domains"]) cfg.domains.push_back(domain_from_json(jd));
    }
    if (j.contains("manifests")) cfg.manifests = j["manifests"].get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("experiment config: ") + e.what());
  }
  cfg.train.seed = cfg.seed;
  cfg.tune.seed = cfg.seed;
  if (cfg.domains.empty() && cfg.manifests.empty()) {
    throw DataError("experiment config: no domains or manifests given");
  }
  if (cfg.lr_grid.empty()) throw DataError("experiment config: empty lr_grid");
  return cfg;
}

inline ExperimentConfig read_experiment_config(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded()) throw DataError("experiment config: invalid JSON in " + path);
  return experiment_from_json(j);
}

/// Generates configured domains (if absent or resume is off) and loads
/// every dataset of the experiment.
inline std::vector<Dataset> materialize_datasets(const ExperimentConfig& cfg, bool resume) {
  namespace fs = std::filesystem;
  std::vector<Dataset> datasets;
  for (const DomainSpec& spec : cfg.domains) {
    const std::string dir = cfg.out_dir + "/data/" + spec.name;
    const std::string manifest_path = dir + "/manifest.json";
    if (!(resume && fs::exists(manifest_path))) {
      gen_domain(spec, cfg.seed, dir);
    }
    datasets.push_back(load_dataset(manifest_path));
  }
  for (const std::string& path : cfg.manifests) {
    datasets.push_back(load_dataset(path));
  }
  return datasets;
}

}  // namespace histokt::xfer
