#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "histokt/errors.hpp"
#include "histokt/nn/init.hpp"
#include "histokt/nn/network.hpp"

namespace histokt::nn {

enum class OptKind { kSgdm, kAdamW };

inline std::string to_string(OptKind k) { return k == OptKind::kSgdm ? "sgdm" : "adamw"; }

inline OptKind opt_kind_from_string(const std::string& s) {
  if (s == "sgdm") return OptKind::kSgdm;
  if (s == "adamw") return OptKind::kAdamW;
  throw DataError("unknown optimizer: " + s);
}

/// Step-halving schedule: lr0 * 0.5^floor(epoch / period). Exact in
/// double precision (scaling by powers of two only shifts the exponent).
inline double lr_schedule(double lr0, std::uint32_t epoch, std::uint32_t period) {
  if (period == 0) throw DataError("lr_schedule: period must be >= 1");
  return std::ldexp(lr0, -static_cast<int>(epoch / period));
}

/// Momentum SGD (v <- mu*v + g + wd*w; w <- w - lr*v) or Adam with
/// decoupled weight decay. Slots are keyed by parameter name so state
/// survives across epochs.
template <typename T>
class Optimizer {
 public:
  OptKind kind = OptKind::kSgdm;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void step(Network<T>& net, double lr, const FreezeMask* freeze = nullptr) {
    ++t_;
    for (auto& p : net.params()) {
      if (!p.trainable()) continue;
      if (freeze != nullptr && freeze->is_frozen(p.name)) continue;
      auto& w = p.value.data;
      const auto& g = p.grad;
      if (kind == OptKind::kSgdm) {
        auto& v = slot(m_, p.name, w.size());
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = static_cast<T>(momentum) * v[i] + g[i] + static_cast<T>(weight_decay) * w[i];
          w[i] -= static_cast<T>(lr) * v[i];
        }
      } else {
        auto& m = slot(m_, p.name, w.size());
        auto& v = slot(v_, p.name, w.size());
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = static_cast<T>(beta1) * m[i] + static_cast<T>(1.0 - beta1) * g[i];
          v[i] = static_cast<T>(beta2) * v[i] + static_cast<T>(1.0 - beta2) * g[i] * g[i];
          const double mhat = static_cast<double>(m[i]) / bc1;
          const double vhat = static_cast<double>(v[i]) / bc2;
          w[i] -= static_cast<T>(lr * (mhat / (std::sqrt(vhat) + eps) +
                                       weight_decay * static_cast<double>(w[i])));
        }
      }
    }
  }

 private:
  std::map<std::string, std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;

  std::vector<T>& slot(std::map<std::string, std::vector<T>>& store, const std::string& name,
                       std::size_t size) {
    auto& s = store[name];
    if (s.size() != size) s.assign(size, T(0));
    return s;
  }
};

}  // namespace histokt::nn
