#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "histokt/data.hpp"
#include "histokt/io_util.hpp"
#include "histokt/nn/gradcheck.hpp"
#include "histokt/nn/loss.hpp"
#include "histokt/nn/metrics.hpp"
#include "histokt/nn/network.hpp"
#include "histokt/nn/optim.hpp"
#include "histokt/rng.hpp"

namespace histokt {

struct TrainConfig {
  nn::OptKind optimizer = nn::OptKind::kSgdm;
  double lr0 = 0.03;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint32_t epochs = 250;
  std::uint32_t batch_size = 32;
  std::uint64_t seed = 1;
  std::uint32_t trials = 3;
  std::uint32_t schedule_period = 20;
  bool use_schedule = false;  // step-halving; enabled by the tuning paths

  void validate() const {
    if (!(lr0 > 0)) throw DataError("train config: lr0 must be > 0");
    if (!(momentum >= 0 && momentum < 1)) throw DataError("train config: momentum in [0,1)");
    if (epochs < 1) throw DataError("train config: epochs must be >= 1");
    if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
    if (trials < 1) throw DataError("train config: trials must be >= 1");
  }
};

struct EpochRow {
  std::uint32_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_top1 = 0.0;
};

inline std::string history_csv(const std::vector<EpochRow>& rows) {
  std::string out = "epoch,lr,train_loss,val_loss,val_top1\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%u,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.lr, r.train_loss,
                  r.val_loss, r.val_top1);
    out += buf;
  }
  return out;
}

struct TrainOutput {
  Checkpoint best;
  double best_val_top1 = -1.0;
  std::uint32_t best_epoch = 0;
  std::vector<EpochRow> history;
};

namespace detail {

inline void throw_nonfinite(const nn::Network<float>& net) {
  for (const auto& p : net.params()) {
    for (float v : p.value.data) {
      if (!std::isfinite(v)) {
        throw DataError("non-finite loss; first offending layer: " + p.name);
      }
    }
  }
  throw DataError("non-finite loss; parameters still finite (input or loss overflow)");
}

}  // namespace detail

/// One optimization step on an assembled batch. Returns the batch loss.
inline double train_step(nn::Network<float>& net, nn::Optimizer<float>& opt,
                         const std::vector<float>& inputs, std::size_t batch_n,
                         LabelMode mode, const std::vector<int>& single,
                         const std::vector<std::uint8_t>& multihot,
                         const std::vector<float>& class_weights, double lr,
                         const nn::FreezeMask* freeze) {
  net.zero_grads();
  const auto& logits = net.forward(inputs, batch_n, /*train=*/true, freeze);
  nn::LossResult<float> loss =
      mode == LabelMode::kSingle
          ? nn::loss_ce(logits, batch_n, net.spec().class_count, single)
          : nn::loss_weighted_ova(logits, batch_n, net.spec().class_count, multihot,
                                  class_weights);
  if (!std::isfinite(loss.loss)) detail::throw_nonfinite(net);
  net.backward(loss.dlogits);
  opt.step(net, lr, freeze);
  return loss.loss;
}

/// Batched eval-mode metrics; loss uses unit class weights.
inline nn::Metrics evaluate(nn::Network<float>& net, const LabeledData& data,
                            std::uint32_t batch_size = 64) {
  if (data.n == 0) throw DataError("evaluate: empty split");
  const std::uint32_t classes = net.spec().class_count;
  nn::MetricsAccum accum(data.mode, classes);
  std::vector<std::size_t> order(data.n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> inputs;
  std::vector<int> single;
  std::vector<std::uint8_t> multihot;
  const std::vector<float> unit_weights(classes, 1.0f);

  for (std::size_t begin = 0; begin < data.n; begin += batch_size) {
    const std::size_t count = std::min<std::size_t>(batch_size, data.n - begin);
    data.gather(order, begin, count, inputs, single, multihot);
    const auto& logits = net.forward(inputs, count, /*train=*/false);
    if (data.mode == LabelMode::kSingle) {
      accum.add_single(logits, count, single);
      accum.add_loss(nn::loss_ce(logits, count, classes, single).loss, count);
    } else {
      accum.add_multi(logits, count, multihot);
      accum.add_loss(
          nn::loss_weighted_ova(logits, count, classes, multihot, unit_weights).loss, count);
    }
  }
  return accum.finalize();
}

inline nn::Metrics evaluate(const Checkpoint& ckpt, const LabeledData& data,
                            std::uint32_t batch_size = 64) {
  auto net = nn::Network<float>::from_checkpoint(ckpt);
  return evaluate(net, data, batch_size);
}

/// Epoch loop with deterministic batch order, per-epoch validation, and
/// best-validation snapshotting. The returned checkpoint is the epoch
/// with the highest validation top-1 (ties keep the earliest epoch).
inline TrainOutput train_model(const Checkpoint& start, const LabeledData& train_data,
                               const LabeledData& val_data, const TrainConfig& cfg,
                               const nn::FreezeMask* freeze = nullptr) {
  cfg.validate();
  if (train_data.n == 0) throw DataError("train: empty training split");
  if (val_data.n == 0) throw DataError("train: empty validation split");

  auto net = nn::Network<float>::from_checkpoint(start);
  nn::Optimizer<float> opt;
  opt.kind = cfg.optimizer;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;

  std::vector<float> class_weights(net.spec().class_count, 1.0f);
  if (train_data.mode == LabelMode::kMulti) {
    class_weights = nn::inverse_frequency_weights<float>(train_data.multihot, train_data.n,
                                                         net.spec().class_count);
  }

  TrainOutput out;
  std::vector<std::size_t> order(train_data.n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> inputs;
  std::vector<int> single;
  std::vector<std::uint8_t> multihot;

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        cfg.use_schedule ? nn::lr_schedule(cfg.lr0, epoch, cfg.schedule_period) : cfg.lr0;
    Prng shuffle_rng(derive_key(cfg.seed, "epoch", epoch));
    shuffle(order, shuffle_rng);

    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < train_data.n; begin += cfg.batch_size) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, train_data.n - begin);
      train_data.gather(order, begin, count, inputs, single, multihot);
      const double batch_loss = train_step(net, opt, inputs, count, train_data.mode, single,
                                           multihot, class_weights, lr, freeze);
      loss_sum += batch_loss * static_cast<double>(count);
      seen += count;
    }

    nn::Metrics val = evaluate(net, val_data, cfg.batch_size);
    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.val_loss = val.loss;
    row.val_top1 = val.top1;
    out.history.push_back(row);

    if (val.top1 > out.best_val_top1) {
      out.best_val_top1 = val.top1;
      out.best_epoch = epoch;
      out.best = net.to_checkpoint();
      out.best.meta["epoch"] = std::to_string(epoch);
      out.best.meta["val_top1"] = std::to_string(val.top1);
    }
  }
  return out;
}

}  // namespace histokt
