#include <doctest.h>

#include <cmath>

#include "histokt/nn/arch.hpp"
#include "histokt/nn/gradcheck.hpp"
#include "histokt/nn/init.hpp"
#include "histokt/nn/loss.hpp"
#include "histokt/nn/metrics.hpp"
#include "histokt/nn/network.hpp"
#include "histokt/nn/optim.hpp"
#include "histokt/train.hpp"
#include "test_util.hpp"

using namespace histokt;
using namespace histokt::nn;

namespace {

ModelSpec tiny_spec(std::uint32_t classes = 3) {
  ModelSpec spec;
  spec.in_h = 12;
  spec.in_w = 12;
  spec.in_c = 3;
  spec.stem_channels = 6;
  spec.stages = {{6, 1, 1}, {8, 1, 2}};
  spec.class_count = classes;
  return spec;
}

ModelSpec linear_only_spec(std::uint32_t classes = 4) {
  ModelSpec spec;
  spec.in_h = 6;
  spec.in_w = 6;
  spec.in_c = 3;
  spec.stem_channels = 0;
  spec.stages = {};
  spec.class_count = classes;
  return spec;
}

std::vector<float> random_input(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  std::vector<float> x(n * static_cast<std::size_t>(spec.in_h) * spec.in_w * spec.in_c);
  Prng rng(seed);
  for (auto& v : x) v = rng.next_float();
  return x;
}

// Direct NHWC convolution, the slow reference for the im2col+GEMM path.
std::vector<double> conv_reference(const std::vector<double>& x, std::size_t n,
                                   std::uint32_t h, std::uint32_t w, std::uint32_t ci,
                                   const std::vector<double>& weight, std::uint32_t k,
                                   std::uint32_t co, std::uint32_t stride, std::uint32_t pad) {
  const std::uint32_t oh = conv_out_dim(h, k, stride, pad);
  const std::uint32_t ow = conv_out_dim(w, k, stride, pad);
  std::vector<double> y(n * static_cast<std::size_t>(oh) * ow * co, 0.0);
  for (std::size_t img = 0; img < n; ++img)
    for (std::uint32_t oy = 0; oy < oh; ++oy)
      for (std::uint32_t ox = 0; ox < ow; ++ox)
        for (std::uint32_t o = 0; o < co; ++o) {
          double acc = 0;
          for (std::uint32_t kx = 0; kx < k; ++kx)
            for (std::uint32_t ky = 0; ky < k; ++ky)
              for (std::uint32_t c = 0; c < ci; ++c) {
                const std::int64_t iy = static_cast<std::int64_t>(oy) * stride - pad + ky;
                const std::int64_t ix = static_cast<std::int64_t>(ox) * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                const double xv =
                    x[((img * h + iy) * w + ix) * ci + c];
                const double wv = weight[((static_cast<std::size_t>(kx) * k + ky) * ci + c) * co + o];
                acc += xv * wv;
              }
          y[((img * oh + oy) * ow + ox) * co + o] = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("arch_id round-trips through the parser") {
  for (const ModelSpec& spec : {mini_resnet(64, 64, 5), tiny_spec(), linear_only_spec()}) {
    const std::string id = arch_id(spec);
    ModelSpec back = parse_arch_id(id);
    back.class_count = spec.class_count;
    CHECK(arch_id(back) == id);
    CHECK(back.feature_dim() == spec.feature_dim());
  }
  CHECK(arch_id(mini_resnet(64, 64, 2)) == "mrn1:64x64x3:stem16:16x2s1,32x2s2,64x2s2");
  CHECK_THROWS_AS(parse_arch_id("resnet18"), DataError);
  CHECK_THROWS_AS(parse_arch_id("mrn1:64x64:stem16:-"), DataError);
}

TEST_CASE("im2col+GEMM convolution matches the direct reference") {
  Prng rng(41);
  for (int trial = 0; trial < 6; ++trial) {
    const std::uint32_t h = 5 + rng.next_below(6);
    const std::uint32_t w = 5 + rng.next_below(6);
    const std::uint32_t ci = 1 + rng.next_below(4);
    const std::uint32_t co = 1 + rng.next_below(5);
    const std::uint32_t k = trial % 2 == 0 ? 3 : 1;
    const std::uint32_t stride = 1 + trial % 2;
    const std::uint32_t pad = k == 3 ? 1 : 0;
    const std::size_t n = 2;

    std::vector<double> x(n * h * w * ci);
    for (auto& v : x) v = rng.next_double() - 0.5;
    std::vector<double> weight(static_cast<std::size_t>(k) * k * ci * co);
    for (auto& v : weight) v = rng.next_double() - 0.5;

    const std::uint32_t oh = conv_out_dim(h, k, stride, pad);
    const std::uint32_t ow = conv_out_dim(w, k, stride, pad);
    const std::size_t rows = n * oh * ow;
    const std::size_t kcols = static_cast<std::size_t>(k) * k * ci;
    std::vector<double> cols(rows * kcols);
    im2col_nhwc(x.data(), n, h, w, ci, k, stride, pad, cols.data());
    std::vector<double> y(rows * co);
    gemm_rm(cols.data(), weight.data(), y.data(), rows, kcols, co, true);

    std::vector<double> ref = conv_reference(x, n, h, w, ci, weight, k, co, stride, pad);
    REQUIRE(y.size() == ref.size());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("build_model is deterministic and uses the specified init") {
  const ModelSpec spec = tiny_spec();
  Checkpoint a = build_model(spec, 7);
  Checkpoint b = build_model(spec, 7);
  CHECK(a == b);

  Checkpoint c = build_model(spec, 8);
  CHECK(a.at("stem.conv.weight").data != c.at("stem.conv.weight").data);

  for (float v : a.at("stem.bn.gamma").data) CHECK(v == 1.0f);
  for (float v : a.at("stem.bn.beta").data) CHECK(v == 0.0f);
  for (float v : a.at("stem.bn.running_mean").data) CHECK(v == 0.0f);
  for (float v : a.at("stem.bn.running_var").data) CHECK(v == 1.0f);
  for (float v : a.at("head.fc.bias").data) CHECK(v == 0.0f);

  // Kaiming bound: conv fan_in = 3*3*3 = 27 for the stem.
  const float bound = std::sqrt(6.0f / 27.0f);
  for (float v : a.at("stem.conv.weight").data) {
    CHECK(std::abs(v) <= bound);
  }
}

TEST_CASE("forward produces finite logits of the right shape") {
  const ModelSpec spec = tiny_spec(5);
  auto net = Network<float>::from_checkpoint(build_model(spec, 3));
  auto input = random_input(spec, 2, 10);
  const auto& logits = net.forward(input, 2, false);
  REQUIRE(logits.size() == 2 * 5);
  for (float v : logits) CHECK(std::isfinite(v));

  // Wrong input size is rejected.
  CHECK_THROWS_AS(net.forward(std::vector<float>(17), 1, false), DataError);
}

TEST_CASE("eval-mode forward is pure") {
  const ModelSpec spec = tiny_spec();
  auto net = Network<float>::from_checkpoint(build_model(spec, 4));
  auto input = random_input(spec, 3, 11);
  const auto logits1 = net.forward(input, 3, false);
  const auto logits2 = net.forward(input, 3, false);
  CHECK(logits1 == logits2);
}

TEST_CASE("all-zero input at init gives class-uniform logits") {
  const ModelSpec spec = tiny_spec(4);
  auto net = Network<float>::from_checkpoint(build_model(spec, 5));
  std::vector<float> zeros(static_cast<std::size_t>(spec.in_h) * spec.in_w * spec.in_c, 0.0f);
  for (bool train : {false, true}) {
    const auto& logits = net.forward(zeros, 1, train);
    for (std::uint32_t k = 1; k < 4; ++k) {
      CHECK(logits[k] == doctest::Approx(logits[0]).epsilon(1e-6));
    }
  }
}

TEST_CASE("loss_ce analytic values and finite-difference gradient") {
  SUBCASE("uniform logits give ln C") {
    const std::size_t n = 2;
    const std::uint32_t c = 7;
    std::vector<double> logits(n * c, 0.42);
    auto r = loss_ce(logits, n, c, {1, 5});
    CHECK(r.loss == doctest::Approx(std::log(7.0)).epsilon(1e-9));
  }

  SUBCASE("large true-class margin drives loss to zero") {
    std::vector<double> logits = {30.0, 0.0, 0.0};
    auto r = loss_ce(logits, 1, 3, {0});
    CHECK(r.loss < 1e-9);
  }

  SUBCASE("bad target index") {
    std::vector<double> logits(4, 0.0);
    CHECK_THROWS_AS(loss_ce(logits, 1, 4, {4}), DataError);
  }

  SUBCASE("gradient matches central differences") {
    Prng rng(19);
    const std::size_t n = 3;
    const std::uint32_t c = 5;
    std::vector<double> logits(n * c);
    for (auto& v : logits) v = rng.next_double() * 4 - 2;
    std::vector<int> targets = {0, 3, 2};
    auto r = loss_ce(logits, n, c, targets);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double h = 1e-6;
      auto lp = logits, lm = logits;
      lp[i] += h;
      lm[i] -= h;
      const double fd =
          (loss_ce(lp, n, c, targets).loss - loss_ce(lm, n, c, targets).loss) / (2 * h);
      CHECK(r.dlogits[i] == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("loss_weighted_ova analytic values and gradient") {
  SUBCASE("zero logits give ln 2 regardless of targets") {
    const std::size_t n = 2;
    const std::uint32_t c = 3;
    std::vector<double> logits(n * c, 0.0);
    std::vector<std::uint8_t> targets = {1, 0, 1, 0, 0, 1};
    std::vector<double> w(c, 1.0);
    auto r = loss_weighted_ova(logits, n, c, targets, w);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }

  SUBCASE("zero class weight kills that class's gradient") {
    std::vector<double> logits = {1.5, -0.3};
    std::vector<std::uint8_t> targets = {1, 1};
    std::vector<double> w = {0.0, 2.0};
    auto r = loss_weighted_ova(logits, 1, 2, targets, w);
    CHECK(r.dlogits[0] == 0.0);
    CHECK(r.dlogits[1] != 0.0);
  }

  SUBCASE("weight length mismatch") {
    std::vector<double> logits(4, 0.0);
    std::vector<std::uint8_t> targets(4, 0);
    CHECK_THROWS_AS(loss_weighted_ova(logits, 1, 4, targets, std::vector<double>(3, 1.0)),
                    DataError);
  }

  SUBCASE("gradient matches central differences") {
    Prng rng(23);
    const std::size_t n = 2;
    const std::uint32_t c = 4;
    std::vector<double> logits(n * c);
    for (auto& v : logits) v = rng.next_double() * 6 - 3;
    std::vector<std::uint8_t> targets(n * c);
    for (auto& t : targets) t = rng.next_below(2);
    std::vector<double> w = {0.5, 2.0, 1.0, 0.1};
    auto r = loss_weighted_ova(logits, n, c, targets, w);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double h = 1e-6;
      auto lp = logits, lm = logits;
      lp[i] += h;
      lm[i] -= h;
      const double fd = (loss_weighted_ova(lp, n, c, targets, w).loss -
                         loss_weighted_ova(lm, n, c, targets, w).loss) /
                        (2 * h);
      CHECK(r.dlogits[i] == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("inverse-frequency weights") {
  // 4 samples, 2 classes; class 0 in all 4, class 1 in 1.
  std::vector<std::uint8_t> multihot = {1, 0, 1, 0, 1, 0, 1, 1};
  auto w = inverse_frequency_weights<float>(multihot, 4, 2);
  CHECK(w[0] == doctest::Approx(4.0 / (2.0 * 4.0)));
  CHECK(w[1] == doctest::Approx(4.0 / (2.0 * 1.0)));

  // Absent class clamps to 10.
  std::vector<std::uint8_t> missing = {1, 0, 1, 0};
  auto w2 = inverse_frequency_weights<float>(missing, 2, 2);
  CHECK(w2[1] == 10.0f);
}

TEST_CASE("lr_schedule halves every period") {
  CHECK(lr_schedule(0.03, 0, 20) == 0.03);
  CHECK(lr_schedule(0.03, 19, 20) == 0.03);
  CHECK(lr_schedule(0.03, 20, 20) == 0.015);
  CHECK(lr_schedule(0.03, 45, 20) == 0.0075);
  for (std::uint32_t e = 0; e <= 250; ++e) {
    double expect = 0.03;
    for (std::uint32_t i = 0; i < e / 20; ++i) expect *= 0.5;
    CHECK(lr_schedule(0.03, e, 20) == expect);
  }
  CHECK_THROWS_AS(lr_schedule(0.03, 1, 0), DataError);
}

TEST_CASE("train_step with lr 0 leaves trainable weights unchanged") {
  const ModelSpec spec = tiny_spec();
  auto net = Network<float>::from_checkpoint(build_model(spec, 6));
  auto before = net.to_checkpoint();
  Optimizer<float> opt;
  auto input = random_input(spec, 4, 12);
  std::vector<int> targets = {0, 1, 2, 0};
  train_step(net, opt, input, 4, LabelMode::kSingle, targets, {}, {}, 0.0, nullptr);
  auto after = net.to_checkpoint();
  for (const auto& [name, t] : before.params) {
    if (name.find("running_") != std::string::npos) continue;  // batch-stat side effect
    CHECK(after.at(name).data == t.data);
  }
}

TEST_CASE("training is bit-deterministic given the seed") {
  const ModelSpec spec = tiny_spec();
  auto run = [&] {
    auto net = Network<float>::from_checkpoint(build_model(spec, 9));
    Optimizer<float> opt;
    auto input = random_input(spec, 4, 13);
    std::vector<int> targets = {0, 1, 2, 1};
    for (int i = 0; i < 5; ++i) {
      train_step(net, opt, input, 4, LabelMode::kSingle, targets, {}, {}, 0.01, nullptr);
    }
    return net.to_checkpoint();
  };
  CHECK(run() == run());
}

TEST_CASE("single-sample overfit sanity") {
  ModelSpec spec;
  spec.in_h = 12;
  spec.in_w = 12;
  spec.in_c = 3;
  spec.stem_channels = 8;
  spec.stages = {{8, 1, 1}};
  spec.class_count = 3;
  auto net = Network<float>::from_checkpoint(build_model(spec, 20));
  Optimizer<float> opt;
  auto input = random_input(spec, 1, 21);
  std::vector<int> target = {1};
  double loss = 0;
  for (int i = 0; i < 200; ++i) {
    loss = train_step(net, opt, input, 1, LabelMode::kSingle, target, {}, {}, 0.03, nullptr);
  }
  CHECK(loss < 0.01);
}

TEST_CASE("freeze_except_head covers everything but the head pair") {
  const ModelSpec spec = tiny_spec();
  Checkpoint ckpt = build_model(spec, 30);
  FreezeMask mask = freeze_except_head(ckpt);
  CHECK(mask.size() == ckpt.params.size() - 2);
  CHECK(!mask.is_frozen("head.fc.weight"));
  CHECK(!mask.is_frozen("head.fc.bias"));
  CHECK(mask.is_frozen("stem.conv.weight"));
}

TEST_CASE("fine-tuning keeps every frozen tensor bit-identical") {
  const ModelSpec spec = tiny_spec();
  Checkpoint start = build_model(spec, 31);
  FreezeMask mask = freeze_except_head(start);

  auto net = Network<float>::from_checkpoint(start);
  Optimizer<float> opt;
  auto input = random_input(spec, 4, 32);
  std::vector<int> targets = {0, 1, 2, 1};
  for (int i = 0; i < 10; ++i) {
    train_step(net, opt, input, 4, LabelMode::kSingle, targets, {}, {}, 0.05, &mask);
  }
  Checkpoint after = net.to_checkpoint();
  for (const auto& [name, t] : start.params) {
    if (mask.is_frozen(name)) {
      CHECK(after.at(name).data == t.data);  // includes BN running stats
    }
  }
  CHECK(after.at("head.fc.weight").data != start.at("head.fc.weight").data);
}

TEST_CASE("deep-tuning changes non-head tensors after one step") {
  const ModelSpec spec = tiny_spec();
  Checkpoint start = build_model(spec, 33);
  auto net = Network<float>::from_checkpoint(start);
  Optimizer<float> opt;
  auto input = random_input(spec, 4, 34);
  std::vector<int> targets = {2, 0, 1, 2};
  train_step(net, opt, input, 4, LabelMode::kSingle, targets, {}, {}, 0.05, nullptr);
  Checkpoint after = net.to_checkpoint();
  bool changed = false;
  for (const auto& [name, t] : start.params) {
    if (name.rfind("head.", 0) == 0) continue;
    if (after.at(name).data != t.data) changed = true;
  }
  CHECK(changed);
}

TEST_CASE("replace_head") {
  const ModelSpec spec = tiny_spec(4);
  Checkpoint base = build_model(spec, 40);

  SUBCASE("same class count: body identical, head refreshed") {
    Checkpoint out = replace_head(base, 4, 99);
    for (const auto& [name, t] : base.params) {
      if (name.rfind("head.", 0) == 0) continue;
      CHECK(out.at(name).data == t.data);
    }
    CHECK(out.at("head.fc.weight").data != base.at("head.fc.weight").data);
    for (float v : out.at("head.fc.bias").data) CHECK(v == 0.0f);
  }

  SUBCASE("class count change resizes the head") {
    Checkpoint out = replace_head(base, 33, 7);
    CHECK(out.class_count == 33);
    CHECK(out.at("head.fc.weight").dims == std::vector<std::uint32_t>{33, spec.feature_dim()});
    CHECK(out.at("head.fc.bias").dims == std::vector<std::uint32_t>{33});
  }

  SUBCASE("deterministic") {
    CHECK(replace_head(base, 9, 5) == replace_head(base, 9, 5));
  }
}

TEST_CASE("grad_check: linear-only model is exact to 1e-6") {
  auto result = grad_check(linear_only_spec(), 51, 4, 200);
  CHECK(result.entries_checked == 16);  // tiny head: every entry sampled
  CHECK(result.max_rel_err < 1e-6);
}

TEST_CASE("grad_check: full residual model under eval-mode BN") {
  auto result = grad_check(tiny_spec(), 52, 3, 200);
  CHECK(result.entries_checked >= 200);
  CHECK(result.max_rel_err < 1e-4);
}

TEST_CASE("grad_check: train-mode BN backprop through batch statistics") {
  ModelSpec spec;
  spec.in_h = 8;
  spec.in_w = 8;
  spec.in_c = 3;
  spec.stem_channels = 5;
  spec.class_count = 3;
  auto result = grad_check(spec, 53, 4, 150, /*train_bn=*/true);
  CHECK(result.max_rel_err < 1e-4);
}

TEST_CASE("grad_check: zero input and degenerate targets stay finite") {
  const ModelSpec spec = tiny_spec();
  Network<double> net(spec);
  net.load_checkpoint(build_model(spec, 54));
  std::vector<double> zeros(static_cast<std::size_t>(spec.in_h) * spec.in_w * spec.in_c, 0.0);
  auto result = grad_check_batch(net, zeros, 1, {0}, 55, 60);
  CHECK(std::isfinite(result.max_rel_err));
}

TEST_CASE("evaluate metrics") {
  const std::uint32_t classes = 4;

  SUBCASE("perfect and constant predictors on a balanced split") {
    MetricsAccum perfect(LabelMode::kSingle, classes);
    MetricsAccum constant(LabelMode::kSingle, classes);
    std::vector<int> targets = {0, 1, 2, 3, 0, 1, 2, 3};
    std::vector<float> exact(8 * classes, 0.0f);
    std::vector<float> flat(8 * classes, 0.5f);
    for (int i = 0; i < 8; ++i) exact[i * classes + targets[i]] = 5.0f;
    perfect.add_single(exact, 8, targets);
    constant.add_single(flat, 8, targets);
    perfect.add_loss(0, 8);
    constant.add_loss(0, 8);
    CHECK(perfect.finalize().top1 == 1.0);
    CHECK(constant.finalize().top1 == 0.25);  // argmax ties -> class 0
  }

  SUBCASE("crafted logits match a hand count") {
    // 10 samples; predictions by argmax: 0,1,1,3,2,0,2,1,0,3.
    std::vector<float> logits = {
        9, 0, 0, 0,  0, 9, 0, 0,  0, 9, 0, 0,  0, 0, 0, 9,  0, 0, 9, 0,
        9, 0, 0, 0,  0, 0, 9, 0,  0, 9, 0, 0,  9, 0, 0, 0,  0, 0, 0, 9};
    std::vector<int> targets = {0, 1, 2, 3, 2, 1, 2, 1, 0, 0};
    // Correct: s0 (0==0), s1 (1==1), s3 (3==3), s4 (2==2), s6 (2==2), s7 (1==1),
    // s8 (0==0) -> 7 of 10.
    MetricsAccum acc(LabelMode::kSingle, classes);
    acc.add_single(logits, 10, targets);
    acc.add_loss(0, 10);
    CHECK(acc.finalize().top1 == doctest::Approx(0.7));
  }

  SUBCASE("argmax is invariant to positive scaling") {
    Prng rng(61);
    std::vector<float> logits(12 * classes);
    for (auto& v : logits) v = static_cast<float>(rng.next_double() * 2 - 1);
    std::vector<float> scaled = logits;
    for (auto& v : scaled) v *= 7.5f;
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(argmax_row(logits.data() + i * classes, classes) ==
            argmax_row(scaled.data() + i * classes, classes));
    }
  }

  SUBCASE("multi-label macro binary accuracy") {
    MetricsAccum acc(LabelMode::kMulti, 2);
    // 2 samples x 2 classes; logits >= 0 predict positive.
    std::vector<float> logits = {1.0f, -1.0f, 1.0f, 1.0f};
    std::vector<std::uint8_t> truth = {1, 0, 0, 1};
    acc.add_multi(logits, 2, truth);
    acc.add_loss(0, 2);
    // class 0: predictions (1,1) vs truth (1,0) -> 1/2; class 1: (0,1) vs (0,1) -> 2/2.
    CHECK(acc.finalize().top1 == doctest::Approx(0.75));
  }

  SUBCASE("empty split errors") {
    MetricsAccum acc(LabelMode::kSingle, classes);
    CHECK_THROWS_AS(acc.finalize(), DataError);
  }
}

TEST_CASE("network load/store round-trip preserves weights") {
  const ModelSpec spec = tiny_spec();
  Checkpoint ckpt = build_model(spec, 70);
  auto net = Network<float>::from_checkpoint(ckpt);
  Checkpoint back = net.to_checkpoint();
  CHECK(back == ckpt);

  // Loading an incompatible checkpoint is rejected.
  Checkpoint other = build_model(tiny_spec(7), 70);
  CHECK_THROWS_AS(net.load_checkpoint(other), DataError);
}
