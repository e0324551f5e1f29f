#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "histokt/errors.hpp"
#include "histokt/manifest.hpp"
#include "histokt/png.hpp"

namespace histokt {

/// One split decoded into memory: inputs as f32 in [0,1], NHWC; targets as
/// class indices (single-label) or multi-hot rows (multi-label).
struct LabeledData {
  LabelMode mode = LabelMode::kSingle;
  std::uint32_t classes = 0;
  std::uint32_t h = 0, w = 0, c = 3;
  std::size_t n = 0;
  std::vector<float> inputs;
  std::vector<int> single;
  std::vector<std::uint8_t> multihot;
  std::vector<std::string> ids;  // source paths, evaluation order

  std::size_t sample_size() const { return static_cast<std::size_t>(h) * w * c; }

  void gather(const std::vector<std::size_t>& indices, std::size_t begin, std::size_t count,
              std::vector<float>& out_inputs, std::vector<int>& out_single,
              std::vector<std::uint8_t>& out_multi) const {
    out_inputs.resize(count * sample_size());
    if (mode == LabelMode::kSingle) {
      out_single.resize(count);
    } else {
      out_multi.resize(count * classes);
    }
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t src = indices[begin + i];
      std::copy_n(inputs.data() + src * sample_size(), sample_size(),
                  out_inputs.data() + i * sample_size());
      if (mode == LabelMode::kSingle) {
        out_single[i] = single[src];
      } else {
        std::copy_n(multihot.data() + src * classes, classes, out_multi.data() + i * classes);
      }
    }
  }
};

/// Loads the kept entries of one split. All images must share dimensions
/// (standardized patches do by construction).
inline LabeledData load_split(const DatasetManifest& manifest, const std::string& base_dir,
                              const std::string& split) {
  namespace fs = std::filesystem;
  LabeledData data;
  data.mode = manifest.label_mode;
  data.classes = static_cast<std::uint32_t>(manifest.classes.size());

  for (const ImageEntry* entry : manifest.split_entries(split)) {
    if (entry->patch.has_value() && !entry->patch->kept) continue;
    fs::path p = fs::path(entry->path);
    if (p.is_relative()) p = fs::path(base_dir) / p;
    ImageRGB img = read_png(p.string());
    if (data.n == 0) {
      data.h = img.height;
      data.w = img.width;
    } else if (img.height != data.h || img.width != data.w) {
      throw DataError("split has mixed image sizes: " + entry->path);
    }
    data.inputs.reserve(data.inputs.size() + img.pixels.size());
    for (std::uint8_t b : img.pixels) {
      data.inputs.push_back(static_cast<float>(b) * (1.0f / 255.0f));
    }
    if (data.mode == LabelMode::kSingle) {
      data.single.push_back(manifest.class_index(entry->labels[0]));
    } else {
      std::vector<std::uint8_t> row(data.classes, 0);
      for (const auto& l : entry->labels) row[manifest.class_index(l)] = 1;
      data.multihot.insert(data.multihot.end(), row.begin(), row.end());
    }
    data.ids.push_back(entry->path);
    data.n += 1;
  }
  return data;
}

}  // namespace histokt
