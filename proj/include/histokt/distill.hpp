#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "histokt/checkpoint.hpp"
#include "histokt/errors.hpp"
#include "histokt/initializers.hpp"
#include "histokt/svd.hpp"
#include "histokt/tensor.hpp"

namespace histokt {

/// Row-major f32 matrix used by the merge engine.
struct MatF {
  std::size_t rows = 0, cols = 0;
  std::vector<float> data;

  MatF() = default;
  MatF(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}
  MatF(std::size_t r, std::size_t c, std::vector<float> d)
      : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != r * c) throw DataError("matrix data length mismatch");
  }

  float& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  float at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// A 4-D conv weight (w,h,n_i,n_o) flattened to n_o x (w*h*n_i) with the
/// original dims kept for folding back.
struct UnfoldedWeight {
  MatF mat;
  std::array<std::uint32_t, 4> src_dims{};  // (w, h, n_i, n_o)
};

/// Reshapes W(w,h,n_i,n_o) so row r holds filter r: entry W[x,y,c,r] lands
/// at column (x*h + y)*n_i + c.
inline UnfoldedWeight unfold(const Tensor& w) {
  if (w.rank() != 4) {
    throw DataError("unfold expects a 4-D tensor, got rank " + std::to_string(w.rank()));
  }
  const std::size_t kw = w.dims[0], kh = w.dims[1], ni = w.dims[2], no = w.dims[3];
  const std::size_t k = kw * kh * ni;
  UnfoldedWeight out;
  out.src_dims = {w.dims[0], w.dims[1], w.dims[2], w.dims[3]};
  out.mat = MatF(no, k);
  // W is row-major over (w,h,n_i,n_o): flat = col * n_o + r.
  for (std::size_t col = 0; col < k; ++col) {
    for (std::size_t r = 0; r < no; ++r) {
      out.mat.at(r, col) = w.data[col * no + r];
    }
  }
  return out;
}

/// Exact inverse of unfold.
inline Tensor fold(const UnfoldedWeight& m) {
  const std::size_t no = m.src_dims[3];
  const std::size_t k =
      static_cast<std::size_t>(m.src_dims[0]) * m.src_dims[1] * m.src_dims[2];
  if (m.mat.rows != no || m.mat.cols != k) {
    throw DataError("fold: matrix shape does not match src_dims");
  }
  Tensor out({m.src_dims[0], m.src_dims[1], m.src_dims[2], m.src_dims[3]});
  for (std::size_t col = 0; col < k; ++col) {
    for (std::size_t r = 0; r < no; ++r) {
      out.data[col * no + r] = m.mat.at(r, col);
    }
  }
  return out;
}

struct SvdMergeInfo {
  double top_sigma = 0.0;
  double anchor_residual = 0.0;  // ||merged - first input||_F / ||first input||_F
};

/// Merges m same-shape matrices: stacks them vertically, takes the SVD of
/// the stack, truncates to the first n_o rows of U Lambda, and reconstructs
/// an n_o x k matrix. The first matrix is the anchor: its row block of the
/// stack provides the retained U entries, so input order matters.
inline MatF svd_merge(const std::vector<MatF>& mats, SvdMergeInfo* info = nullptr) {
  if (mats.empty()) throw DataError("svd_merge needs at least one matrix");
  const std::size_t no = mats[0].rows;
  const std::size_t k = mats[0].cols;
  for (const auto& m : mats) {
    if (m.rows != no || m.cols != k) throw DataError("svd_merge: matrix shape mismatch");
    for (float v : m.data) {
      if (!std::isfinite(v)) throw DataError("svd_merge: non-finite input value");
    }
  }

  const std::size_t mcount = mats.size();
  const std::size_t stacked_rows = mcount * no;
  std::vector<double> stacked(stacked_rows * k);
  for (std::size_t b = 0; b < mcount; ++b) {
    for (std::size_t i = 0; i < no; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        stacked[(b * no + i) * k + j] = static_cast<double>(mats[b].at(i, j));
      }
    }
  }

  const SvdResult svd = svd_compact(stacked, stacked_rows, k);

  // W' = U[:no,:no] * Lambda[:no,:] * V^T. Rows >= r of Lambda are zero, so
  // only the first min(no, r) singular triples contribute.
  const std::size_t terms = std::min(no, svd.r);
  MatF out(no, k);
  for (std::size_t i = 0; i < no; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0;
      for (std::size_t t = 0; t < terms; ++t) {
        acc += svd.u[i * svd.r + t] * svd.sigma[t] * svd.v[j * svd.r + t];
      }
      out.at(i, j) = static_cast<float>(acc);
    }
  }

  if (info) {
    info->top_sigma = svd.r > 0 ? svd.sigma[0] : 0.0;
    double num = 0, den = 0;
    for (std::size_t idx = 0; idx < out.data.size(); ++idx) {
      const double d = static_cast<double>(out.data[idx]) - mats[0].data[idx];
      num += d * d;
      den += static_cast<double>(mats[0].data[idx]) * mats[0].data[idx];
    }
    info->anchor_residual = den > 0 ? std::sqrt(num / den) : std::sqrt(num);
  }
  return out;
}

/// Elementwise arithmetic mean of equal-length vectors, f64 accumulation.
inline std::vector<float> mean_merge(const std::vector<std::vector<float>>& vecs) {
  if (vecs.empty()) throw DataError("mean_merge needs at least one vector");
  const std::size_t n = vecs[0].size();
  for (const auto& v : vecs) {
    if (v.size() != n) throw DataError("mean_merge: vector length mismatch");
  }
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0;
    for (const auto& v : vecs) acc += static_cast<double>(v[i]);
    out[i] = static_cast<float>(acc / static_cast<double>(vecs.size()));
  }
  return out;
}

struct LayerMergeEntry {
  std::string layer;
  std::string method;  // "svd", "mean", or "reinit" (fresh head)
  std::size_t input_count = 0;
  std::size_t rows = 0, cols = 0;
  double top_sigma = 0.0;
  double residual = 0.0;
};

struct MergeReport {
  std::vector<LayerMergeEntry> layers;

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : layers) {
      arr.push_back({{"layer", e.layer},
                     {"method", e.method},
                     {"input_count", e.input_count},
                     {"rows", e.rows},
                     {"cols", e.cols},
                     {"top_sigma", e.top_sigma},
                     {"residual", e.residual}});
    }
    return nlohmann::json{{"layers", arr}};
  }
};

struct DistillOptions {
  /// Seed for the fresh head when input class counts differ.
  std::uint64_t head_seed = 0;
};

struct DistillResult {
  Checkpoint merged;
  MergeReport report;
};

/// Merges m >= 2 architecture-compatible checkpoints layer by layer:
/// 4-D conv weights via unfold -> svd_merge -> fold, 2-D weights via
/// svd_merge directly, 1-D parameters via mean_merge. If the inputs
/// disagree on class_count, head layers are not merged; the output gets a
/// freshly initialized head at the anchor's size.
inline DistillResult distill_checkpoints(const std::vector<const Checkpoint*>& ckpts,
                                         const DistillOptions& opts = {}) {
  if (ckpts.size() < 2) throw UsageError("distill needs at least 2 checkpoints");
  bool heads_match = true;
  for (std::size_t i = 1; i < ckpts.size(); ++i) {
    assert_compatible(*ckpts[0], *ckpts[i], /*allow_head_mismatch=*/true);
    if (ckpts[i]->class_count != ckpts[0]->class_count) heads_match = false;
  }

  const Checkpoint& anchor = *ckpts[0];
  DistillResult result;
  result.merged.arch_id = anchor.arch_id;
  result.merged.class_count = anchor.class_count;
  {
    std::string sources;
    for (std::size_t i = 0; i < ckpts.size(); ++i) {
      if (i) sources += ",";
      auto it = ckpts[i]->meta.find("source");
      sources += (it != ckpts[i]->meta.end() ? it->second : std::to_string(i));
    }
    result.merged.meta["distilled_from"] = sources;
    result.merged.meta["merge_count"] = std::to_string(ckpts.size());
  }

  for (const auto& [name, anchor_tensor] : anchor.params) {
    LayerMergeEntry entry;
    entry.layer = name;
    entry.input_count = ckpts.size();

    if (!heads_match && is_head_layer(name)) {
      Tensor fresh;
      if (anchor_tensor.rank() == 2) {
        fresh = kaiming_uniform(anchor_tensor.dims, anchor_tensor.dims[1],
                                derive_key(opts.head_seed, "distill.head", name));
      } else {
        fresh = Tensor(anchor_tensor.dims);  // bias: zeros
      }
      entry.method = "reinit";
      entry.rows = anchor_tensor.dims[0];
      entry.cols = anchor_tensor.rank() == 2 ? anchor_tensor.dims[1] : 1;
      result.merged.add(name, std::move(fresh));
      result.report.layers.push_back(entry);
      continue;
    }

    if (anchor_tensor.rank() == 4) {
      std::vector<MatF> mats;
      std::array<std::uint32_t, 4> src_dims{};
      for (const Checkpoint* c : ckpts) {
        UnfoldedWeight uw = unfold(c->at(name));
        src_dims = uw.src_dims;
        mats.push_back(std::move(uw.mat));
      }
      SvdMergeInfo info;
      UnfoldedWeight merged;
      merged.mat = svd_merge(mats, &info);
      merged.src_dims = src_dims;
      entry.method = "svd";
      entry.rows = merged.mat.rows;
      entry.cols = merged.mat.cols;
      entry.top_sigma = info.top_sigma;
      entry.residual = info.anchor_residual;
      result.merged.add(name, fold(merged));
    } else if (anchor_tensor.rank() == 2) {
      std::vector<MatF> mats;
      for (const Checkpoint* c : ckpts) {
        const Tensor& t = c->at(name);
        mats.emplace_back(t.dims[0], t.dims[1], t.data);
      }
      SvdMergeInfo info;
      MatF merged = svd_merge(mats, &info);
      entry.method = "svd";
      entry.rows = merged.rows;
      entry.cols = merged.cols;
      entry.top_sigma = info.top_sigma;
      entry.residual = info.anchor_residual;
      result.merged.add(name,
                        Tensor({anchor_tensor.dims[0], anchor_tensor.dims[1]},
                               std::move(merged.data)));
    } else if (anchor_tensor.rank() == 1) {
      std::vector<std::vector<float>> vecs;
      for (const Checkpoint* c : ckpts) vecs.push_back(c->at(name).data);
      std::vector<float> merged = mean_merge(vecs);
      entry.method = "mean";
      entry.rows = 1;
      entry.cols = merged.size();
      double num = 0, den = 0;
      for (std::size_t i = 0; i < merged.size(); ++i) {
        const double d = static_cast<double>(merged[i]) - vecs[0][i];
        num += d * d;
        den += static_cast<double>(vecs[0][i]) * vecs[0][i];
      }
      entry.residual = den > 0 ? std::sqrt(num / den) : std::sqrt(num);
      result.merged.add(name, Tensor({anchor_tensor.dims[0]}, std::move(merged)));
    } else {
      throw DataError("distill: unsupported tensor rank in layer '" + name + "'");
    }
    result.report.layers.push_back(entry);
  }
  return result;
}

}  // namespace histokt
