#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "histokt/errors.hpp"
#include "histokt/io_util.hpp"

namespace histokt {

enum class LabelMode { kSingle, kMulti };

inline std::string to_string(LabelMode m) {
  return m == LabelMode::kSingle ? "single-label" : "multi-label";
}

inline LabelMode label_mode_from_string(const std::string& s) {
  if (s == "single-label") return LabelMode::kSingle;
  if (s == "multi-label") return LabelMode::kMulti;
  throw DataError("unknown label_mode: " + s);
}

/// Provenance of one standardized patch within a patch manifest.
struct PatchInfo {
  std::string source_path;
  std::uint32_t tile_x = 0;
  std::uint32_t tile_y = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  bool kept = true;
  std::string filter_reason;  // required when kept == false
};

struct ImageEntry {
  std::string path;
  std::vector<std::string> labels;
  std::string split;  // train | val | test
  std::optional<PatchInfo> patch;
};

/// Declarative description of a labeled image dataset. Doubles as the
/// patch manifest schema when entries carry PatchInfo.
struct DatasetManifest {
  std::string name;
  double pixel_resolution_um = 1.0;
  LabelMode label_mode = LabelMode::kSingle;
  std::vector<std::string> classes;
  std::vector<ImageEntry> images;

  int class_index(const std::string& label) const {
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (classes[i] == label) return static_cast<int>(i);
    }
    return -1;
  }

  std::vector<const ImageEntry*> split_entries(const std::string& split) const {
    std::vector<const ImageEntry*> out;
    for (const auto& e : images) {
      if (e.split == split) out.push_back(&e);
    }
    return out;
  }

  void validate() const {
    if (name.empty()) throw DataError("manifest: name is required");
    if (!(pixel_resolution_um > 0)) throw DataError("manifest: pixel_resolution_um must be > 0");
    if (classes.empty()) throw DataError("manifest: classes must be non-empty");
    std::set<std::string> seen_paths;
    for (const auto& e : images) {
      if (e.split != "train" && e.split != "val" && e.split != "test") {
        throw DataError("manifest: bad split '" + e.split + "' for " + e.path);
      }
      if (e.labels.empty()) throw DataError("manifest: no labels for " + e.path);
      if (label_mode == LabelMode::kSingle && e.labels.size() != 1) {
        throw DataError("manifest: single-label image with " +
                        std::to_string(e.labels.size()) + " labels: " + e.path);
      }
      for (const auto& l : e.labels) {
        if (class_index(l) < 0) throw DataError("manifest: unknown label '" + l + "' on " + e.path);
      }
      // Splits disjoint by source image: a path may appear in one split only.
      if (!e.patch.has_value()) {
        if (!seen_paths.insert(e.path).second) {
          throw DataError("manifest: duplicate image path " + e.path);
        }
      }
      if (e.patch.has_value() && !e.patch->kept && e.patch->filter_reason.empty()) {
        throw DataError("manifest: filtered patch without filter_reason: " + e.path);
      }
    }
  }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["name"] = m.name;
  j["pixel_resolution_um"] = m.pixel_resolution_um;
  j["label_mode"] = to_string(m.label_mode);
  j["classes"] = m.classes;
  nlohmann::json imgs = nlohmann::json::array();
  for (const auto& e : m.images) {
    nlohmann::json je;
    je["path"] = e.path;
    je["labels"] = e.labels;
    je["split"] = e.split;
    if (e.patch.has_value()) {
      je["source_path"] = e.patch->source_path;
      je["tile_x"] = e.patch->tile_x;
      je["tile_y"] = e.patch->tile_y;
      je["width"] = e.patch->width;
      je["height"] = e.patch->height;
      je["kept"] = e.patch->kept;
      if (!e.patch->kept) je["filter_reason"] = e.patch->filter_reason;
    }
    imgs.push_back(std::move(je));
  }
  j["images"] = std::move(imgs);
  return j;
}

/// Parses a manifest; unknown keys are ignored.
inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("manifest: expected a JSON object");
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.pixel_resolution_um = j.at("pixel_resolution_um").get<double>();
    m.label_mode = label_mode_from_string(j.at("label_mode").get<std::string>());
    m.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& je : j.at("images")) {
      ImageEntry e;
      e.path = je.at("path").get<std::string>();
      e.labels = je.at("labels").get<std::vector<std::string>>();
      e.split = je.at("split").get<std::string>();
      if (je.contains("source_path")) {
        PatchInfo p;
        p.source_path = je.at("source_path").get<std::string>();
        p.tile_x = je.at("tile_x").get<std::uint32_t>();
        p.tile_y = je.at("tile_y").get<std::uint32_t>();
        p.width = je.at("width").get<std::uint32_t>();
        p.height = je.at("height").get<std::uint32_t>();
        p.kept = je.at("kept").get<bool>();
        if (je.contains("filter_reason")) p.filter_reason = je.at("filter_reason").get<std::string>();
        e.patch = std::move(p);
      }
      m.images.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  write_file_atomic(path, manifest_to_json(m).dump(2) + "\n");
}

inline DatasetManifest read_manifest(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded()) throw DataError("manifest: invalid JSON in " + path);
  return manifest_from_json(j);
}

}  // namespace histokt
