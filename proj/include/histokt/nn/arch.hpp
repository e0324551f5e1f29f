#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "histokt/errors.hpp"

namespace histokt::nn {

struct StageSpec {
  std::uint32_t channels = 0;
  std::uint32_t blocks = 0;
  std::uint32_t stride = 1;  // stride of the first block in the stage
};

/// Topology of the reduced residual classifier: 3x3 stem, residual stages
/// (two 3x3 convs per block, 1x1 projection shortcut on shape change),
/// global average pooling, linear head. stem_channels == 0 degenerates to
/// input -> GAP -> linear, which is the linear-only probe model.
struct ModelSpec {
  std::uint32_t in_h = 64;
  std::uint32_t in_w = 64;
  std::uint32_t in_c = 3;
  std::uint32_t stem_channels = 16;
  std::vector<StageSpec> stages;
  std::uint32_t class_count = 2;

  std::uint32_t feature_dim() const {
    if (!stages.empty()) return stages.back().channels;
    if (stem_channels > 0) return stem_channels;
    return in_c;
  }

  void validate() const {
    if (in_h == 0 || in_w == 0 || in_c == 0) throw DataError("model: zero input dim");
    if (class_count == 0) throw DataError("model: class_count must be >= 1");
    if (stem_channels == 0 && !stages.empty()) {
      throw DataError("model: stages require a stem");
    }
    for (const auto& s : stages) {
      if (s.channels == 0 || s.blocks == 0 || s.stride == 0) {
        throw DataError("model: bad stage spec");
      }
    }
  }
};

/// The paper-scale default: 16-channel stem, stages 16/32/64 of two blocks,
/// stride 2 between stages.
inline ModelSpec mini_resnet(std::uint32_t in_h = 64, std::uint32_t in_w = 64,
                             std::uint32_t class_count = 2) {
  ModelSpec spec;
  spec.in_h = in_h;
  spec.in_w = in_w;
  spec.in_c = 3;
  spec.stem_channels = 16;
  spec.stages = {{16, 2, 1}, {32, 2, 2}, {64, 2, 2}};
  spec.class_count = class_count;
  return spec;
}

/// Compact encoding that uniquely determines layer names and dims
/// (class_count is carried separately by the checkpoint).
inline std::string arch_id(const ModelSpec& spec) {
  std::string s = "mrn1:" + std::to_string(spec.in_h) + "x" + std::to_string(spec.in_w) + "x" +
                  std::to_string(spec.in_c) + ":stem" + std::to_string(spec.stem_channels) + ":";
  if (spec.stages.empty()) {
    s += "-";
  } else {
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(spec.stages[i].channels) + "x" +
           std::to_string(spec.stages[i].blocks) + "s" + std::to_string(spec.stages[i].stride);
    }
  }
  return s;
}

inline ModelSpec parse_arch_id(const std::string& id) {
  auto fail = [&] { throw DataError("unparseable arch_id: " + id); };
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = id.find(':', start);
    if (pos == std::string::npos) {
      fields.push_back(id.substr(start));
      break;
    }
    fields.push_back(id.substr(start, pos - start));
    start = pos + 1;
  }
  if (fields.size() != 4 || fields[0] != "mrn1") fail();

  auto to_u32 = [&](const std::string& s) -> std::uint32_t {
    if (s.empty()) fail();
    std::uint64_t v = 0;
    for (char c : s) {
      if (c < '0' || c > '9') fail();
      v = v * 10 + static_cast<std::uint64_t>(c - '0');
      if (v > 0xFFFFFFFFull) fail();
    }
    return static_cast<std::uint32_t>(v);
  };
  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t begin = 0;
    while (true) {
      const std::size_t pos = s.find(sep, begin);
      if (pos == std::string::npos) {
        parts.push_back(s.substr(begin));
        return parts;
      }
      parts.push_back(s.substr(begin, pos - begin));
      begin = pos + 1;
    }
  };

  ModelSpec spec;
  const auto in_dims = split(fields[1], 'x');
  if (in_dims.size() != 3) fail();
  spec.in_h = to_u32(in_dims[0]);
  spec.in_w = to_u32(in_dims[1]);
  spec.in_c = to_u32(in_dims[2]);

  if (fields[2].rfind("stem", 0) != 0) fail();
  spec.stem_channels = to_u32(fields[2].substr(4));

  if (fields[3] != "-") {
    for (const auto& part : split(fields[3], ',')) {
      const std::size_t xpos = part.find('x');
      const std::size_t spos = part.find('s');
      if (xpos == std::string::npos || spos == std::string::npos || spos < xpos) fail();
      StageSpec st;
      st.channels = to_u32(part.substr(0, xpos));
      st.blocks = to_u32(part.substr(xpos + 1, spos - xpos - 1));
      st.stride = to_u32(part.substr(spos + 1));
      spec.stages.push_back(st);
    }
  }
  spec.validate();
  return spec;
}

}  // namespace histokt::nn
