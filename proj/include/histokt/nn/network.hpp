#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "histokt/checkpoint.hpp"
#include "histokt/nn/arch.hpp"
#include "histokt/nn/init.hpp"
#include "histokt/nn/ops.hpp"

namespace histokt::nn {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

/// Executable model: owns typed parameter/gradient storage and the
/// activation buffers needed for exact reverse-mode gradients. T = float
/// for training, double for finite-difference verification.
template <typename T>
class Network {
 public:
  struct Param {
    std::string name;
    ParamKind kind;
    TensorT<T> value;
    std::vector<T> grad;

    bool trainable() const {
      return kind != ParamKind::kBnMean && kind != ParamKind::kBnVar;
    }
  };

  explicit Network(const ModelSpec& spec) : spec_(spec) {
    spec_.validate();
    for (const LayerDef& def : layer_table(spec_)) {
      Param p;
      p.name = def.name;
      p.kind = def.kind;
      p.value = TensorT<T>(def.dims);
      p.grad.assign(p.value.numel(), T(0));
      index_[p.name] = params_.size();
      params_.push_back(std::move(p));
    }
    build_graph();
  }

  static Network from_checkpoint(const Checkpoint& ckpt) {
    Network net(spec_of(ckpt));
    net.load_checkpoint(ckpt);
    return net;
  }

  const ModelSpec& spec() const { return spec_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  Param& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("no such parameter: " + name);
    return params_[it->second];
  }

  void load_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.arch_id != arch_id(spec_) || ckpt.class_count != spec_.class_count) {
      throw DataError("checkpoint does not match network spec: " + ckpt.arch_id);
    }
    for (Param& p : params_) {
      const Tensor& src = ckpt.at(p.name);
      if (src.dims != p.value.dims) throw DataError("dims mismatch for layer: " + p.name);
      for (std::size_t i = 0; i < src.data.size(); ++i) {
        p.value.data[i] = static_cast<T>(src.data[i]);
      }
    }
    meta_ = ckpt.meta;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.arch_id = arch_id(spec_);
    ckpt.class_count = spec_.class_count;
    ckpt.meta = meta_;
    for (const Param& p : params_) {
      Tensor t(p.value.dims);
      for (std::size_t i = 0; i < t.data.size(); ++i) {
        t.data[i] = static_cast<float>(p.value.data[i]);
      }
      ckpt.add(p.name, std::move(t));
    }
    return ckpt;
  }

  std::map<std::string, std::string>& meta() { return meta_; }

  /// Runs the graph. Train mode normalizes with batch statistics and
  /// updates running stats (momentum 0.1) except on frozen batch-norm
  /// layers, which behave as in eval mode.
  const std::vector<T>& forward(const std::vector<T>& input, std::size_t n, bool train,
                                const FreezeMask* freeze = nullptr) {
    if (input.size() != n * static_cast<std::size_t>(spec_.in_h) * spec_.in_w * spec_.in_c) {
      throw DataError("forward: input size does not match spec dims");
    }
    n_ = n;
    input_ = input;

    const std::vector<T>* cur = &input_;
    if (stem_) {
      conv_forward(stem_->conv, *cur, stem_->z);
      bn_forward(stem_->bn, stem_->z, train, freeze, stem_->b);
      stem_->out.resize(stem_->b.size());
      relu_forward(stem_->b.data(), stem_->b.size(), stem_->out.data());
      cur = &stem_->out;
    }
    for (BlockState& blk : blocks_) {
      blk.x_in = cur;
      conv_forward(blk.conv1, *cur, blk.z1);
      bn_forward(blk.bn1, blk.z1, train, freeze, blk.b1);
      blk.r1.resize(blk.b1.size());
      relu_forward(blk.b1.data(), blk.b1.size(), blk.r1.data());

      conv_forward(blk.conv2, blk.r1, blk.z2);
      bn_forward(blk.bn2, blk.z2, train, freeze, blk.b2);

      const std::vector<T>* shortcut = cur;
      if (blk.has_proj) {
        conv_forward(blk.proj, *cur, blk.proj_z);
        bn_forward(blk.projbn, blk.proj_z, train, freeze, blk.proj_b);
        shortcut = &blk.proj_b;
      }
      blk.out.resize(blk.b2.size());
      for (std::size_t i = 0; i < blk.out.size(); ++i) {
        const T s = blk.b2[i] + (*shortcut)[i];
        blk.out[i] = s > T(0) ? s : T(0);
      }
      cur = &blk.out;
    }

    feat_.resize(n * spec_.feature_dim());
    gap_forward(cur->data(), n, final_h_, final_w_, spec_.feature_dim(), feat_.data());

    const Param& w = params_[fc_w_];
    const Param& b = params_[fc_b_];
    logits_.resize(n * spec_.class_count);
    linear_forward(feat_.data(), w.value.data.data(), b.value.data.data(), n,
                   spec_.feature_dim(), spec_.class_count, logits_.data());
    return logits_;
  }

  const std::vector<T>& logits() const { return logits_; }
  const std::vector<T>& features() const { return feat_; }

  void zero_grads() {
    for (Param& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }

  /// Accumulates parameter gradients for the last forward pass.
  void backward(const std::vector<T>& dlogits) {
    if (dlogits.size() != logits_.size()) throw DataError("backward: dlogits size mismatch");

    const std::uint32_t feat_dim = spec_.feature_dim();
    std::vector<T> dfeat(n_ * feat_dim);
    {
      Param& w = params_[fc_w_];
      Param& b = params_[fc_b_];
      linear_backward(feat_.data(), w.value.data.data(), dlogits.data(), n_, feat_dim,
                      spec_.class_count, w.grad.data(), b.grad.data(), dfeat.data());
    }

    std::vector<T> dcur(last_activation_size());
    gap_backward(dfeat.data(), n_, final_h_, final_w_, feat_dim, dcur.data());

    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      BlockState& blk = *it;
      // dcur is d(out); gate through the block's output ReLU.
      std::vector<T>& dsum = scratch_a_;
      dsum.resize(blk.out.size());
      relu_backward(blk.out.data(), dcur.data(), blk.out.size(), dsum.data());

      // Main path: bn2 <- conv2 <- relu <- bn1 <- conv1.
      std::vector<T> dz2(blk.z2.size());
      bn_backward(blk.bn2, blk.z2, dsum, dz2);
      std::vector<T> dr1(blk.r1.size());
      conv_backward(blk.conv2, blk.r1, dz2, &dr1);
      std::vector<T> db1(blk.b1.size());
      relu_backward(blk.r1.data(), dr1.data(), blk.r1.size(), db1.data());
      std::vector<T> dz1(blk.z1.size());
      bn_backward(blk.bn1, blk.z1, db1, dz1);

      std::vector<T> dx(blk.x_in->size());
      conv_backward(blk.conv1, *blk.x_in, dz1, &dx);

      // Shortcut path adds into dx.
      if (blk.has_proj) {
        std::vector<T> dproj_z(blk.proj_z.size());
        bn_backward(blk.projbn, blk.proj_z, dsum, dproj_z);
        std::vector<T> dx_short(blk.x_in->size());
        conv_backward(blk.proj, *blk.x_in, dproj_z, &dx_short);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx_short[i];
      } else {
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dsum[i];
      }
      dcur = std::move(dx);
    }

    if (stem_) {
      std::vector<T>& db = scratch_a_;
      db.resize(stem_->out.size());
      relu_backward(stem_->out.data(), dcur.data(), stem_->out.size(), db.data());
      std::vector<T> dz(stem_->z.size());
      bn_backward(stem_->bn, stem_->z, db, dz);
      conv_backward(stem_->conv, input_, dz, nullptr);  // no input gradient needed
    }
  }

 private:
  struct ConvNode {
    std::size_t w = 0;
    std::uint32_t in_c = 0, out_c = 0, k = 0, stride = 1, pad = 0;
    std::uint32_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  };
  struct BnNode {
    std::size_t gamma = 0, beta = 0, rmean = 0, rvar = 0;
    std::uint32_t c = 0;
    std::vector<T> mean, inv_std;
    bool used_batch = false;
  };
  struct StemState {
    ConvNode conv;
    BnNode bn;
    std::vector<T> z, b, out;
  };
  struct BlockState {
    ConvNode conv1, conv2, proj;
    BnNode bn1, bn2, projbn;
    bool has_proj = false;
    const std::vector<T>* x_in = nullptr;
    std::vector<T> z1, b1, r1, z2, b2, proj_z, proj_b, out;
  };

  ModelSpec spec_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::string> meta_;

  std::optional<StemState> stem_;
  std::vector<BlockState> blocks_;
  std::size_t fc_w_ = 0, fc_b_ = 0;
  std::uint32_t final_h_ = 0, final_w_ = 0;

  std::size_t n_ = 0;
  std::vector<T> input_, feat_, logits_;
  std::vector<T> cols_scratch_, dcols_scratch_, scratch_a_, wt_scratch_;

  std::size_t pidx(const std::string& name) const { return index_.at(name); }

  ConvNode make_conv(const std::string& wname, std::uint32_t in_h, std::uint32_t in_w,
                     std::uint32_t in_c, std::uint32_t out_c, std::uint32_t k,
                     std::uint32_t stride, std::uint32_t pad) {
    ConvNode cv;
    cv.w = pidx(wname);
    cv.in_c = in_c;
    cv.out_c = out_c;
    cv.k = k;
    cv.stride = stride;
    cv.pad = pad;
    cv.in_h = in_h;
    cv.in_w = in_w;
    cv.out_h = conv_out_dim(in_h, k, stride, pad);
    cv.out_w = conv_out_dim(in_w, k, stride, pad);
    return cv;
  }

  BnNode make_bn(const std::string& prefix, std::uint32_t c) {
    BnNode bn;
    bn.gamma = pidx(prefix + ".gamma");
    bn.beta = pidx(prefix + ".beta");
    bn.rmean = pidx(prefix + ".running_mean");
    bn.rvar = pidx(prefix + ".running_var");
    bn.c = c;
    bn.mean.resize(c);
    bn.inv_std.resize(c);
    return bn;
  }

  void build_graph() {
    std::uint32_t h = spec_.in_h, w = spec_.in_w, c = spec_.in_c;
    if (spec_.stem_channels > 0) {
      StemState stem;
      stem.conv = make_conv("stem.conv.weight", h, w, c, spec_.stem_channels, 3, 1, 1);
      stem.bn = make_bn("stem.bn", spec_.stem_channels);
      h = stem.conv.out_h;
      w = stem.conv.out_w;
      c = spec_.stem_channels;
      stem_ = std::move(stem);
    }
    for (std::size_t s = 0; s < spec_.stages.size(); ++s) {
      const StageSpec& stage = spec_.stages[s];
      for (std::uint32_t b = 0; b < stage.blocks; ++b) {
        const std::string prefix = "s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
        const std::uint32_t stride = b == 0 ? stage.stride : 1;
        BlockState blk;
        blk.conv1 = make_conv(prefix + "conv1.weight", h, w, c, stage.channels, 3, stride, 1);
        blk.bn1 = make_bn(prefix + "bn1", stage.channels);
        blk.conv2 = make_conv(prefix + "conv2.weight", blk.conv1.out_h, blk.conv1.out_w,
                              stage.channels, stage.channels, 3, 1, 1);
        blk.bn2 = make_bn(prefix + "bn2", stage.channels);
        blk.has_proj = stride != 1 || c != stage.channels;
        if (blk.has_proj) {
          blk.proj = make_conv(prefix + "proj.weight", h, w, c, stage.channels, 1, stride, 0);
          blk.projbn = make_bn(prefix + "projbn", stage.channels);
        }
        h = blk.conv2.out_h;
        w = blk.conv2.out_w;
        c = stage.channels;
        blocks_.push_back(std::move(blk));
      }
    }
    final_h_ = h;
    final_w_ = w;
    fc_w_ = pidx("head.fc.weight");
    fc_b_ = pidx("head.fc.bias");
  }

  std::size_t last_activation_size() const {
    return n_ * static_cast<std::size_t>(final_h_) * final_w_ * spec_.feature_dim();
  }

  void conv_forward(const ConvNode& cv, const std::vector<T>& x, std::vector<T>& y) {
    const std::size_t rows = n_ * static_cast<std::size_t>(cv.out_h) * cv.out_w;
    const std::size_t k_cols = static_cast<std::size_t>(cv.k) * cv.k * cv.in_c;
    cols_scratch_.resize(rows * k_cols);
    im2col_nhwc(x.data(), n_, cv.in_h, cv.in_w, cv.in_c, cv.k, cv.stride, cv.pad,
                cols_scratch_.data());
    y.resize(rows * cv.out_c);
    gemm_rm(cols_scratch_.data(), params_[cv.w].value.data.data(), y.data(), rows, k_cols,
            cv.out_c, /*zero_first=*/true);
  }

  void conv_backward(const ConvNode& cv, const std::vector<T>& x, const std::vector<T>& dy,
                     std::vector<T>* dx) {
    const std::size_t rows = n_ * static_cast<std::size_t>(cv.out_h) * cv.out_w;
    const std::size_t k_cols = static_cast<std::size_t>(cv.k) * cv.k * cv.in_c;
    cols_scratch_.resize(rows * k_cols);
    im2col_nhwc(x.data(), n_, cv.in_h, cv.in_w, cv.in_c, cv.k, cv.stride, cv.pad,
                cols_scratch_.data());
    gemm_at_b(cols_scratch_.data(), dy.data(), params_[cv.w].grad.data(), rows, k_cols,
              cv.out_c);
    if (dx) {
      dcols_scratch_.resize(rows * k_cols);
      gemm_a_bt(dy.data(), params_[cv.w].value.data.data(), dcols_scratch_.data(), rows,
                cv.out_c, k_cols, wt_scratch_);
      dx->resize(x.size());
      col2im_nhwc(dcols_scratch_.data(), n_, cv.in_h, cv.in_w, cv.in_c, cv.k, cv.stride,
                  cv.pad, dx->data());
    }
  }

  void bn_forward(BnNode& bn, const std::vector<T>& x, bool train, const FreezeMask* freeze,
                  std::vector<T>& y) {
    const std::size_t rows = x.size() / bn.c;
    const bool frozen = freeze != nullptr && freeze->is_frozen(params_[bn.gamma].name);
    Param& rmean = params_[bn.rmean];
    Param& rvar = params_[bn.rvar];

    if (train && !frozen) {
      std::vector<T> var(bn.c);
      bn_batch_stats(x.data(), rows, bn.c, bn.mean.data(), var.data());
      for (std::uint32_t ch = 0; ch < bn.c; ++ch) {
        bn.inv_std[ch] = T(1) / std::sqrt(var[ch] + static_cast<T>(kBnEps));
        rmean.value.data[ch] = static_cast<T>(1.0 - kBnMomentum) * rmean.value.data[ch] +
                               static_cast<T>(kBnMomentum) * bn.mean[ch];
        rvar.value.data[ch] = static_cast<T>(1.0 - kBnMomentum) * rvar.value.data[ch] +
                              static_cast<T>(kBnMomentum) * var[ch];
      }
      bn.used_batch = true;
    } else {
      for (std::uint32_t ch = 0; ch < bn.c; ++ch) {
        bn.mean[ch] = rmean.value.data[ch];
        bn.inv_std[ch] = T(1) / std::sqrt(rvar.value.data[ch] + static_cast<T>(kBnEps));
      }
      bn.used_batch = false;
    }
    y.resize(x.size());
    bn_apply(x.data(), rows, bn.c, bn.mean.data(), bn.inv_std.data(),
             params_[bn.gamma].value.data.data(), params_[bn.beta].value.data.data(), y.data());
  }

  void bn_backward(BnNode& bn, const std::vector<T>& x, const std::vector<T>& dy,
                   std::vector<T>& dx) {
    const std::size_t rows = x.size() / bn.c;
    dx.resize(x.size());
    if (bn.used_batch) {
      bn_backward_train(x.data(), dy.data(), rows, bn.c, bn.mean.data(), bn.inv_std.data(),
                        params_[bn.gamma].value.data.data(), params_[bn.gamma].grad.data(),
                        params_[bn.beta].grad.data(), dx.data());
    } else {
      bn_backward_eval(x.data(), dy.data(), rows, bn.c, bn.mean.data(), bn.inv_std.data(),
                       params_[bn.gamma].value.data.data(), params_[bn.gamma].grad.data(),
                       params_[bn.beta].grad.data(), dx.data());
    }
  }
};

}  // namespace histokt::nn
