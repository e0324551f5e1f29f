#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "histokt/image.hpp"
#include "histokt/jobs.hpp"
#include "histokt/manifest.hpp"
#include "histokt/png.hpp"

namespace histokt {

struct StandardizeParams {
  double target_resolution_um = 1.0;
  std::uint32_t patch = 272;
  double overlap_frac = 0.5;
  double lo_pct = 5.0;
  double hi_pct = 99.0;
  double frac = 0.05;
  std::size_t workers = 1;
};

struct SplitCounts {
  std::size_t images_in = 0;
  std::size_t patches_total = 0;
  std::size_t patches_kept = 0;
  std::size_t patches_filtered = 0;
};

struct StandardizeSummary {
  std::map<std::string, SplitCounts> per_split;
  std::vector<std::pair<std::string, std::string>> errors;  // (path, message)

  nlohmann::json to_json() const {
    nlohmann::json splits;
    for (const auto& [name, c] : per_split) {
      splits[name] = {{"images_in", c.images_in},
                      {"patches_total", c.patches_total},
                      {"patches_kept", c.patches_kept},
                      {"patches_filtered", c.patches_filtered}};
    }
    nlohmann::json errs = nlohmann::json::array();
    for (const auto& [path, msg] : errors) errs.push_back({{"path", path}, {"message", msg}});
    return nlohmann::json{{"splits", splits}, {"errors", errs}};
  }
};

struct StandardizeResult {
  DatasetManifest patch_manifest;
  StandardizeSummary summary;
};

namespace detail {

inline std::string path_stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

struct PerImageOutput {
  std::vector<ImageEntry> records;
  std::string error;  // non-empty on failure
};

}  // namespace detail

/// Full preprocessing pipeline for one dataset: per image, rescale to the
/// target resolution, reflection-wrap up to patch size, tile with overlap,
/// drop low-contrast tiles, and write kept tiles as PNGs named
/// <stem>_x<tile_x>_y<tile_y>.png under <out_dir>/<split>/.
///
/// Unreadable images are recorded in the summary and skipped. Outputs are
/// deterministic functions of (image, params) regardless of worker count.
inline StandardizeResult standardize_dataset(const DatasetManifest& manifest,
                                             const std::string& manifest_dir,
                                             const std::string& out_dir,
                                             const StandardizeParams& params = {}) {
  namespace fs = std::filesystem;
  manifest.validate();
  if (params.patch == 0) throw UsageError("patch size must be positive");

  std::vector<detail::PerImageOutput> outputs(manifest.images.size());
  std::vector<std::function<void()>> work;
  work.reserve(manifest.images.size());

  for (std::size_t idx = 0; idx < manifest.images.size(); ++idx) {
    work.push_back([&, idx] {
      const ImageEntry& entry = manifest.images[idx];
      detail::PerImageOutput& out = outputs[idx];
      try {
        fs::path src = fs::path(entry.path);
        if (src.is_relative()) src = fs::path(manifest_dir) / src;
        ImageRGB img = read_png(src.string());
        img.resolution_um = manifest.pixel_resolution_um;

        ImageRGB rescaled = rescale_image(img, params.target_resolution_um);
        ImageRGB wrapped = reflection_wrap(rescaled, params.patch, params.patch);
        const std::string stem = detail::path_stem(entry.path);

        for (const auto& [pos, tile] : extract_patches(wrapped, params.patch, params.overlap_frac)) {
          ImageEntry rec;
          rec.labels = entry.labels;
          rec.split = entry.split;
          PatchInfo info;
          info.source_path = entry.path;
          info.tile_x = pos.x;
          info.tile_y = pos.y;
          info.width = params.patch;
          info.height = params.patch;

          const bool low = is_low_contrast(tile, params.lo_pct, params.hi_pct, params.frac);
          const std::string rel = entry.split + "/" + stem + "_x" + std::to_string(pos.x) +
                                  "_y" + std::to_string(pos.y) + ".png";
          rec.path = rel;
          if (low) {
            info.kept = false;
            info.filter_reason = "low contrast";
          } else {
            info.kept = true;
            write_png(tile, (fs::path(out_dir) / rel).string());
          }
          rec.patch = std::move(info);
          out.records.push_back(std::move(rec));
        }
      } catch (const std::exception& e) {
        out.error = e.what();
      }
    });
  }

  run_parallel(work, params.workers);

  StandardizeResult result;
  result.patch_manifest.name = manifest.name + "-patches";
  result.patch_manifest.pixel_resolution_um = params.target_resolution_um;
  result.patch_manifest.label_mode = manifest.label_mode;
  result.patch_manifest.classes = manifest.classes;

  for (std::size_t idx = 0; idx < manifest.images.size(); ++idx) {
    const ImageEntry& entry = manifest.images[idx];
    detail::PerImageOutput& out = outputs[idx];
    SplitCounts& counts = result.summary.per_split[entry.split];
    if (!out.error.empty()) {
      result.summary.errors.emplace_back(entry.path, out.error);
      continue;
    }
    counts.images_in += 1;
    for (auto& rec : out.records) {
      counts.patches_total += 1;
      if (rec.patch->kept) {
        counts.patches_kept += 1;
      } else {
        counts.patches_filtered += 1;
      }
      result.patch_manifest.images.push_back(std::move(rec));
    }
  }

  write_manifest(result.patch_manifest, (fs::path(out_dir) / "patches.json").string());
  write_file_atomic((fs::path(out_dir) / "summary.json").string(),
                    result.summary.to_json().dump(2) + "\n");
  return result;
}

}  // namespace histokt
