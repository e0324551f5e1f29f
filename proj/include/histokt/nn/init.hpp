#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "histokt/checkpoint.hpp"
#include "histokt/initializers.hpp"
#include "histokt/nn/arch.hpp"

namespace histokt::nn {

enum class ParamKind { kConv, kLinearW, kBias, kBnGamma, kBnBeta, kBnMean, kBnVar };

struct LayerDef {
  std::string name;
  std::vector<std::uint32_t> dims;
  ParamKind kind;
};

namespace detail {

inline void push_bn(std::vector<LayerDef>& out, const std::string& prefix, std::uint32_t c) {
  out.push_back({prefix + ".gamma", {c}, ParamKind::kBnGamma});
  out.push_back({prefix + ".beta", {c}, ParamKind::kBnBeta});
  out.push_back({prefix + ".running_mean", {c}, ParamKind::kBnMean});
  out.push_back({prefix + ".running_var", {c}, ParamKind::kBnVar});
}

}  // namespace detail

/// Ordered parameter table of a model: names, dims, kinds. The layer
/// naming here is the single source of truth shared by build_model, the
/// network runtime, freezing, and head replacement.
inline std::vector<LayerDef> layer_table(const ModelSpec& spec) {
  spec.validate();
  std::vector<LayerDef> out;
  std::uint32_t prev_c = spec.in_c;
  if (spec.stem_channels > 0) {
    out.push_back({"stem.conv.weight", {3, 3, spec.in_c, spec.stem_channels}, ParamKind::kConv});
    detail::push_bn(out, "stem.bn", spec.stem_channels);
    prev_c = spec.stem_channels;
  }
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const StageSpec& stage = spec.stages[s];
    for (std::uint32_t b = 0; b < stage.blocks; ++b) {
      const std::string prefix = "s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
      const std::uint32_t in_c = b == 0 ? prev_c : stage.channels;
      const std::uint32_t stride = b == 0 ? stage.stride : 1;
      out.push_back({prefix + "conv1.weight", {3, 3, in_c, stage.channels}, ParamKind::kConv});
      detail::push_bn(out, prefix + "bn1", stage.channels);
      out.push_back(
          {prefix + "conv2.weight", {3, 3, stage.channels, stage.channels}, ParamKind::kConv});
      detail::push_bn(out, prefix + "bn2", stage.channels);
      if (stride != 1 || in_c != stage.channels) {
        out.push_back({prefix + "proj.weight", {1, 1, in_c, stage.channels}, ParamKind::kConv});
        detail::push_bn(out, prefix + "projbn", stage.channels);
      }
    }
    prev_c = stage.channels;
  }
  out.push_back({"head.fc.weight", {spec.class_count, spec.feature_dim()}, ParamKind::kLinearW});
  out.push_back({"head.fc.bias", {spec.class_count}, ParamKind::kBias});
  return out;
}

/// Deterministic initialization: Kaiming-uniform conv/linear weights,
/// zero biases, identity batch-norm (gamma 1, beta 0, mean 0, var 1).
inline Checkpoint build_model(const ModelSpec& spec, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.arch_id = arch_id(spec);
  ckpt.class_count = spec.class_count;
  ckpt.meta["init_seed"] = std::to_string(seed);
  for (const LayerDef& def : layer_table(spec)) {
    switch (def.kind) {
      case ParamKind::kConv: {
        const std::size_t fan_in =
            static_cast<std::size_t>(def.dims[0]) * def.dims[1] * def.dims[2];
        ckpt.add(def.name, kaiming_uniform(def.dims, fan_in, derive_key(seed, def.name)));
        break;
      }
      case ParamKind::kLinearW:
        ckpt.add(def.name,
                 kaiming_uniform(def.dims, def.dims[1], derive_key(seed, def.name)));
        break;
      case ParamKind::kBias:
      case ParamKind::kBnBeta:
      case ParamKind::kBnMean:
        ckpt.add(def.name, constant_tensor(def.dims, 0.0f));
        break;
      case ParamKind::kBnGamma:
      case ParamKind::kBnVar:
        ckpt.add(def.name, constant_tensor(def.dims, 1.0f));
        break;
    }
  }
  return ckpt;
}

/// Model spec of a checkpoint, reconstructed from its arch_id + class_count.
inline ModelSpec spec_of(const Checkpoint& ckpt) {
  ModelSpec spec = parse_arch_id(ckpt.arch_id);
  spec.class_count = ckpt.class_count;
  return spec;
}

/// Copies the checkpoint but re-initializes the head at a new class count.
/// Everything else is carried over bit-exact.
inline Checkpoint replace_head(const Checkpoint& ckpt, std::uint32_t new_class_count,
                               std::uint64_t seed) {
  if (new_class_count == 0) throw DataError("replace_head: class_count must be >= 1");
  ModelSpec spec = spec_of(ckpt);
  Checkpoint out;
  out.arch_id = ckpt.arch_id;
  out.class_count = new_class_count;
  out.meta = ckpt.meta;
  out.meta["head_seed"] = std::to_string(seed);
  const std::uint32_t feat = spec.feature_dim();
  for (const auto& [name, t] : ckpt.params) {
    if (name == "head.fc.weight") {
      out.add(name, kaiming_uniform({new_class_count, feat}, feat,
                                    derive_key(seed, "replace_head", name)));
    } else if (name == "head.fc.bias") {
      out.add(name, constant_tensor({new_class_count}, 0.0f));
    } else {
      out.add(name, t);
    }
  }
  return out;
}

/// Set of parameter names excluded from updates. Frozen batch-norm layers
/// also stop updating running statistics (the network checks gamma names).
struct FreezeMask {
  std::set<std::string> frozen;

  bool is_frozen(const std::string& name) const { return frozen.count(name) > 0; }
  std::size_t size() const { return frozen.size(); }
};

/// Freezes every parameter except the final fully-connected weight/bias.
inline FreezeMask freeze_except_head(const Checkpoint& ckpt) {
  FreezeMask mask;
  for (const auto& [name, t] : ckpt.params) {
    if (name != "head.fc.weight" && name != "head.fc.bias") mask.frozen.insert(name);
  }
  return mask;
}

}  // namespace histokt::nn
