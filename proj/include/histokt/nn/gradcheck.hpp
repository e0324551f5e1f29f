#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "histokt/nn/loss.hpp"
#include "histokt/nn/network.hpp"
#include "histokt/rng.hpp"

namespace histokt::nn {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t entries_checked = 0;
};

namespace detail {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-6);
}

}  // namespace detail

/// Central-difference verification of the analytic gradients in f64.
/// Samples at least `min_samples` parameter entries spread over every
/// tensor; h = 1e-5 * max(1, |w|). BN runs in eval mode unless train_bn.
inline GradCheckResult grad_check_batch(Network<double>& net, const std::vector<double>& input,
                                        std::size_t n, const std::vector<int>& targets,
                                        std::uint64_t key, std::size_t min_samples = 200,
                                        bool train_bn = false) {
  const std::uint32_t classes = net.spec().class_count;
  auto loss_of = [&]() -> double {
    const auto& logits = net.forward(input, n, train_bn);
    return loss_ce(logits, n, classes, targets).loss;
  };

  // Analytic gradients.
  net.zero_grads();
  const auto& logits = net.forward(input, n, train_bn);
  auto loss = loss_ce(logits, n, classes, targets);
  net.backward(loss.dlogits);

  // Snapshot analytic grads (finite differencing reruns forward only).
  std::vector<std::vector<double>> analytic;
  for (const auto& p : net.params()) analytic.push_back(p.grad);

  // Distribute the sample budget over every trainable tensor; small
  // tensors are sampled in full and their spare quota moves to larger ones.
  std::vector<std::size_t> trainable_idx;
  std::size_t total_entries = 0;
  for (std::size_t pi = 0; pi < net.params().size(); ++pi) {
    if (net.params()[pi].trainable()) {
      trainable_idx.push_back(pi);
      total_entries += net.params()[pi].value.numel();
    }
  }
  const std::size_t target = std::min(min_samples, total_entries);
  const std::size_t per_tensor =
      std::max<std::size_t>(1, (target + trainable_idx.size() - 1) / trainable_idx.size());
  std::vector<std::size_t> quota(trainable_idx.size());
  std::size_t planned = 0;
  for (std::size_t i = 0; i < trainable_idx.size(); ++i) {
    quota[i] = std::min(net.params()[trainable_idx[i]].value.numel(), per_tensor);
    planned += quota[i];
  }
  while (planned < target) {
    bool grew = false;
    for (std::size_t i = 0; i < trainable_idx.size() && planned < target; ++i) {
      if (quota[i] < net.params()[trainable_idx[i]].value.numel()) {
        ++quota[i];
        ++planned;
        grew = true;
      }
    }
    if (!grew) break;
  }

  GradCheckResult result;
  CounterRng rng{derive_key(key, "gradcheck")};
  std::uint64_t counter = 0;
  for (std::size_t ti = 0; ti < trainable_idx.size(); ++ti) {
    auto& p = net.params()[trainable_idx[ti]];
    const std::size_t count = quota[ti];
    std::set<std::size_t> picked;
    for (std::size_t s = 0; s < count; ++s) {
      std::size_t idx;
      if (count == p.value.numel()) {
        idx = s;
      } else {
        do {
          idx = rng.at(counter++) % p.value.numel();
        } while (!picked.insert(idx).second);
      }
      const double w0 = p.value.data[idx];
      const double h = 1e-5 * std::max(1.0, std::abs(w0));
      p.value.data[idx] = w0 + h;
      const double lp = loss_of();
      p.value.data[idx] = w0 - h;
      const double lm = loss_of();
      p.value.data[idx] = w0;
      const double fd = (lp - lm) / (2.0 * h);
      result.max_rel_err =
          std::max(result.max_rel_err, detail::rel_err(analytic[trainable_idx[ti]][idx], fd));
      result.entries_checked += 1;
    }
  }
  return result;
}

/// Spec-level entry point: builds the model at `seed`, generates a
/// deterministic batch, and checks sampled gradients of every layer type.
inline GradCheckResult grad_check(const ModelSpec& spec, std::uint64_t seed,
                                  std::size_t batch_n = 4, std::size_t min_samples = 200,
                                  bool train_bn = false) {
  Network<double> net(spec);
  {
    Checkpoint init = build_model(spec, seed);
    net.load_checkpoint(init);
  }
  Prng rng(derive_key(seed, "gradcheck.batch"));
  std::vector<double> input(batch_n * static_cast<std::size_t>(spec.in_h) * spec.in_w *
                            spec.in_c);
  for (auto& v : input) v = rng.next_double();
  std::vector<int> targets(batch_n);
  for (auto& t : targets) t = static_cast<int>(rng.next_below(spec.class_count));
  return grad_check_batch(net, input, batch_n, targets, seed, min_samples, train_bn);
}

}  // namespace histokt::nn
