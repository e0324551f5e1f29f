#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "histokt/jobs.hpp"
#include "histokt/xfer/run.hpp"

namespace histokt::xfer {

/// Source x target grid; the diagonal holds from-scratch baselines, the
/// off-diagonal deep-tunes of each source's best baseline.
struct TransferMatrix {
  std::vector<std::string> datasets;
  std::map<std::pair<std::string, std::string>, RunResult> cells;
  std::map<std::pair<std::string, std::string>, std::string> errors;

  const RunResult* cell(const std::string& src, const std::string& tgt) const {
    auto it = cells.find({src, tgt});
    return it == cells.end() ? nullptr : &it->second;
  }
};

struct MatrixOptions {
  std::size_t workers = 1;
  bool resume = false;
};

/// Runs the full grid: baselines first (diagonal), then every source's
/// best baseline deep-tuned onto every other target. Cell failures are
/// recorded and do not abort the matrix. With resume, cells whose result
/// JSON already exists are loaded instead of re-run.
inline TransferMatrix transfer_matrix(const std::vector<const Dataset*>& datasets,
                                      const ArchConfig& arch, const TrainConfig& base_cfg,
                                      const TrainConfig& tune_cfg,
                                      const std::vector<double>& lr_grid, const RunPaths& paths,
                                      const MatrixOptions& options = {}) {
  namespace fs = std::filesystem;
  if (datasets.size() < 2) throw UsageError("transfer matrix needs >= 2 datasets");

  TransferMatrix matrix;
  for (const Dataset* ds : datasets) matrix.datasets.push_back(ds->name);
  fs::create_directories(paths.results_dir());

  struct CellOut {
    bool ok = false;
    bool filled = false;
    RunResult result;
    std::string error;
  };

  // Phase 1: diagonal baselines.
  {
    std::vector<CellOut> outs(datasets.size());
    std::vector<std::function<void()>> work;
    for (std::size_t i = 0; i < datasets.size(); ++i) {
      work.push_back([&, i] {
        const Dataset& ds = *datasets[i];
        const std::string file = paths.result_file(ds.name, ds.name, kStageBaseline);
        try {
          if (options.resume && fs::exists(file)) {
            const auto bytes = read_file_bytes(file);
            outs[i].result =
                run_result_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
          } else {
            outs[i].result = train_baseline(ds, arch, base_cfg, paths);
            write_run_result(outs[i].result, file);
          }
          outs[i].ok = true;
        } catch (const std::exception& e) {
          outs[i].error = e.what();
        }
        outs[i].filled = true;
      });
    }
    run_parallel(work, options.workers);
    for (std::size_t i = 0; i < datasets.size(); ++i) {
      const std::string& name = datasets[i]->name;
      if (outs[i].ok) {
        matrix.cells[{name, name}] = outs[i].result;
      } else {
        matrix.errors[{name, name}] = outs[i].error;
      }
    }
  }

  // Phase 2: off-diagonal transfers from each source's best baseline.
  {
    struct Job {
      std::size_t src, tgt;
    };
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < datasets.size(); ++s) {
      for (std::size_t t = 0; t < datasets.size(); ++t) {
        if (s != t) jobs.push_back({s, t});
      }
    }
    std::vector<CellOut> outs(jobs.size());
    std::vector<std::function<void()>> work;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      work.push_back([&, j] {
        const Dataset& src = *datasets[jobs[j].src];
        const Dataset& tgt = *datasets[jobs[j].tgt];
        const std::string file = paths.result_file(src.name, tgt.name, kStageDeep);
        try {
          if (options.resume && fs::exists(file)) {
            const auto bytes = read_file_bytes(file);
            outs[j].result =
                run_result_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
          } else {
            const RunResult* base = matrix.cell(src.name, src.name);
            if (!base) throw DataError("source baseline failed: " + src.name);
            Checkpoint src_ckpt = read_checkpoint(base->best_ckpt);
            outs[j].result =
                tune(src_ckpt, tgt, kStageDeep, tune_cfg, lr_grid, paths, src.name);
            write_run_result(outs[j].result, file);
          }
          outs[j].ok = true;
        } catch (const std::exception& e) {
          outs[j].error = e.what();
        }
        outs[j].filled = true;
      });
    }
    run_parallel(work, options.workers);
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      const std::string& sname = datasets[jobs[j].src]->name;
      const std::string& tname = datasets[jobs[j].tgt]->name;
      if (outs[j].ok) {
        matrix.cells[{sname, tname}] = outs[j].result;
      } else {
        matrix.errors[{sname, tname}] = outs[j].error;
      }
    }
  }
  return matrix;
}

/// Strict paper-style flag: '+' above the target's baseline mean, '-'
/// below, '=' only on exact equality.
inline char strict_flag(double mean, double baseline_mean) {
  if (mean > baseline_mean) return '+';
  if (mean < baseline_mean) return '-';
  return '=';
}

/// Banded flag used in the markdown report: '=' when the difference is
/// within one pooled stdev of the cell and the baseline.
inline char banded_flag(double mean, double stdev, double baseline_mean,
                        double baseline_stdev) {
  const double pooled =
      std::sqrt((stdev * stdev + baseline_stdev * baseline_stdev) / 2.0);
  if (std::abs(mean - baseline_mean) <= pooled) return '=';
  return mean > baseline_mean ? '+' : '-';
}

struct ReportFiles {
  std::string csv_path, md_path, json_path;
};

/// matrix.csv (machine-readable, strict flags), matrix.md (grid with
/// banded annotations), matrix.json (full RunResults and errors).
inline ReportFiles emit_report(const TransferMatrix& matrix, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  char buf[256];

  std::string csv = "source,target,stage,mean,stdev,n_trials,trial_accs,flag\n";
  for (const auto& src : matrix.datasets) {
    for (const auto& tgt : matrix.datasets) {
      auto err = matrix.errors.find({src, tgt});
      if (err != matrix.errors.end()) {
        csv += src + "," + tgt + ",ERR,,,0,,\n";
        continue;
      }
      const RunResult* cell = matrix.cell(src, tgt);
      if (!cell) continue;
      std::string accs;
      for (std::size_t i = 0; i < cell->trials.size(); ++i) {
        if (i) accs += "|";
        std::snprintf(buf, sizeof(buf), "%.9g", cell->trials[i].test_top1);
        accs += buf;
      }
      std::string flag;
      const RunResult* base = matrix.cell(tgt, tgt);
      if (src != tgt && base) flag = std::string(1, strict_flag(cell->mean, base->mean));
      std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.9g,%.9g,%zu,%s,%s\n", src.c_str(),
                    tgt.c_str(), cell->stage.c_str(), cell->mean, cell->stdev,
                    cell->trials.size(), accs.c_str(), flag.c_str());
      csv += buf;
    }
  }

  std::string md = "| source \\ target |";
  for (const auto& tgt : matrix.datasets) md += " " + tgt + " |";
  md += "\n|---|";
  for (std::size_t i = 0; i < matrix.datasets.size(); ++i) md += "---|";
  md += "\n";
  for (const auto& src : matrix.datasets) {
    md += "| **" + src + "** |";
    for (const auto& tgt : matrix.datasets) {
      auto err = matrix.errors.find({src, tgt});
      if (err != matrix.errors.end()) {
        md += " ERR (" + err->second + ") |";
        continue;
      }
      const RunResult* cell = matrix.cell(src, tgt);
      if (!cell) {
        md += " - |";
        continue;
      }
      std::snprintf(buf, sizeof(buf), " %.2f±%.2f", 100.0 * cell->mean, 100.0 * cell->stdev);
      md += buf;
      const RunResult* base = matrix.cell(tgt, tgt);
      if (src != tgt && base) {
        md += " ";
        md += banded_flag(cell->mean, cell->stdev, base->mean, base->stdev);
      }
      md += " |";
    }
    md += "\n";
  }

  nlohmann::json jcells = nlohmann::json::array();
  for (const auto& [key, cell] : matrix.cells) jcells.push_back(run_result_to_json(cell));
  nlohmann::json jerrors = nlohmann::json::array();
  for (const auto& [key, msg] : matrix.errors) {
    jerrors.push_back({{"source", key.first}, {"target", key.second}, {"error", msg}});
  }
  nlohmann::json jdoc{{"datasets", matrix.datasets}, {"cells", jcells}, {"errors", jerrors}};

  ReportFiles files;
  files.csv_path = out_dir + "/matrix.csv";
  files.md_path = out_dir + "/matrix.md";
  files.json_path = out_dir + "/matrix.json";
  write_file_atomic(files.csv_path, csv);
  write_file_atomic(files.md_path, md);
  write_file_atomic(files.json_path, jdoc.dump(2) + "\n");
  return files;
}

}  // namespace histokt::xfer
