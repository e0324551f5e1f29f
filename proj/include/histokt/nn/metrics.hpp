#pragma once

#include <cstdint>
#include <vector>

#include "histokt/errors.hpp"
#include "histokt/manifest.hpp"

namespace histokt::nn {

struct Metrics {
  double top1 = 0.0;
  std::vector<double> per_class;
  double loss = 0.0;
  std::size_t samples = 0;
};

/// Argmax with ties broken toward the lowest class index.
template <typename T>
inline std::uint32_t argmax_row(const T* row, std::uint32_t classes) {
  std::uint32_t best = 0;
  for (std::uint32_t k = 1; k < classes; ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

/// Streaming metric accumulator. Single-label: top-1 plus per-class recall.
/// Multi-label: per-class binary accuracy at threshold 0.5 (logit >= 0),
/// macro-averaged into the top1 field.
struct MetricsAccum {
  LabelMode mode = LabelMode::kSingle;
  std::uint32_t classes = 0;
  std::size_t n = 0;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> class_total, class_correct;

  MetricsAccum(LabelMode m, std::uint32_t c) : mode(m), classes(c) {
    class_total.assign(c, 0);
    class_correct.assign(c, 0);
  }

  template <typename T>
  void add_single(const std::vector<T>& logits, std::size_t batch_n,
                  const std::vector<int>& targets) {
    for (std::size_t i = 0; i < batch_n; ++i) {
      const std::uint32_t pred = argmax_row(logits.data() + i * classes, classes);
      const auto t = static_cast<std::uint32_t>(targets[i]);
      class_total[t] += 1;
      if (pred == t) {
        correct += 1;
        class_correct[t] += 1;
      }
    }
    n += batch_n;
  }

  template <typename T>
  void add_multi(const std::vector<T>& logits, std::size_t batch_n,
                 const std::vector<std::uint8_t>& multihot) {
    for (std::size_t i = 0; i < batch_n; ++i) {
      for (std::uint32_t c = 0; c < classes; ++c) {
        const bool pred = logits[i * classes + c] >= T(0);  // sigma(z) >= 0.5
        const bool truth = multihot[i * classes + c] != 0;
        class_total[c] += 1;
        if (pred == truth) class_correct[c] += 1;
      }
    }
    n += batch_n;
  }

  void add_loss(double batch_loss, std::size_t batch_n) {
    loss_sum += batch_loss * static_cast<double>(batch_n);
  }

  Metrics finalize() const {
    if (n == 0) throw DataError("evaluate: empty split");
    Metrics m;
    m.samples = n;
    m.loss = loss_sum / static_cast<double>(n);
    m.per_class.resize(classes);
    for (std::uint32_t c = 0; c < classes; ++c) {
      m.per_class[c] = class_total[c] > 0 ? static_cast<double>(class_correct[c]) /
                                                static_cast<double>(class_total[c])
                                          : 0.0;
    }
    if (mode == LabelMode::kSingle) {
      m.top1 = static_cast<double>(correct) / static_cast<double>(n);
    } else {
      double acc = 0;
      for (std::uint32_t c = 0; c < classes; ++c) acc += m.per_class[c];
      m.top1 = classes > 0 ? acc / classes : 0.0;  // macro-averaged binary accuracy
    }
    return m;
  }
};

}  // namespace histokt::nn
