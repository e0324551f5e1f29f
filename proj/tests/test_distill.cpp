#include <doctest.h>

#include <cmath>

#include "histokt/distill.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace histokt;

namespace {

MatF random_mat(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  MatF m(rows, cols);
  Prng rng(seed);
  for (auto& v : m.data) v = 2.0f * rng.next_float() - 1.0f;
  return m;
}

oracle::Mat to_oracle(const MatF& m) {
  oracle::Mat o(m.rows, m.cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) o.data[i] = m.data[i];
  return o;
}

}  // namespace

TEST_CASE("unfold shapes") {
  // k = w*h*n_i: (3,3,16,32) flattens to 32 x 144.
  Tensor w({3, 3, 16, 32});
  UnfoldedWeight uw = unfold(w);
  CHECK(uw.mat.rows == 32);
  CHECK(uw.mat.cols == 144);

  Tensor one({1, 1, 1, 1}, {42.0f});
  UnfoldedWeight u1 = unfold(one);
  CHECK(u1.mat.rows == 1);
  CHECK(u1.mat.cols == 1);
  CHECK(u1.mat.data[0] == 42.0f);

  CHECK_THROWS_AS(unfold(Tensor({3, 3, 4})), DataError);
}

TEST_CASE("unfold places W[x,y,c,r] at column (x*h+y)*n_i + c") {
  Tensor w({2, 3, 4, 5});
  Prng rng(55);
  for (auto& v : w.data) v = rng.next_float();
  UnfoldedWeight uw = unfold(w);
  for (std::size_t x = 0; x < 2; ++x)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t r = 0; r < 5; ++r) {
          CHECK(uw.mat.at(r, (x * 3 + y) * 4 + c) == w.data[w.at4(x, y, c, r)]);
        }
}

TEST_CASE("fold is the exact inverse of unfold") {
  Prng shape_rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint32_t> dims(4);
    for (auto& d : dims) d = 1 + static_cast<std::uint32_t>(shape_rng.next_below(8));
    Tensor w = testutil::random_tensor(dims, 1000 + trial);
    Tensor back = fold(unfold(w));
    CHECK(back.dims == w.dims);
    CHECK(back.data == w.data);  // bit-exact
  }
}

TEST_CASE("fold validates shape against src_dims") {
  UnfoldedWeight uw;
  uw.mat = MatF(5, 18);
  uw.src_dims = {3, 3, 2, 4};  // expects rows=4, cols=18
  CHECK_THROWS_AS(fold(uw), DataError);
}

TEST_CASE("svd_merge of a single matrix reconstructs it") {
  MatF w = random_mat(4, 7, 17);
  MatF out = svd_merge({w});
  CHECK(testutil::rel_frobenius(out.data, w.data) < 1e-6);
}

TEST_CASE("svd_merge self-merge identity") {
  for (int m = 2; m <= 3; ++m) {
    MatF w = random_mat(5, 9, 200 + m);
    std::vector<MatF> stack(static_cast<std::size_t>(m), w);
    MatF out = svd_merge(stack);
    CHECK(testutil::rel_frobenius(out.data, w.data) < 1e-5);
  }
}

TEST_CASE("svd_merge absorbs zero blocks") {
  MatF w = random_mat(6, 10, 33);
  MatF zero(6, 10);
  MatF out = svd_merge({w, zero});
  CHECK(testutil::rel_frobenius(out.data, w.data) < 1e-5);
}

TEST_CASE("svd_merge equals the Eckart-Young oracle on stacked pairs") {
  int tested = 0;
  for (std::uint64_t seed = 0; tested < 40; ++seed) {
    Prng rng(seed);
    const std::size_t no = 2 + rng.next_below(7);   // <= 8
    const std::size_t k = 2 + rng.next_below(15);   // <= 16
    MatF a = random_mat(no, k, derive_key(seed, "a"));
    MatF b = random_mat(no, k, derive_key(seed, "b"));

    oracle::Mat stacked(2 * no, k);
    for (std::size_t i = 0; i < no; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        stacked.at(i, j) = a.at(i, j);
        stacked.at(no + i, j) = b.at(i, j);
      }
    // Keep only cases with a clearly non-degenerate spectrum.
    auto sv = oracle::singular_values(stacked);
    bool distinct = true;
    for (std::size_t i = 0; i + 1 < sv.size(); ++i) {
      if (sv[i] - sv[i + 1] < 1e-3 * (sv[0] > 0 ? sv[0] : 1.0)) distinct = false;
    }
    if (!distinct) continue;
    ++tested;

    oracle::Mat trunc = oracle::rank_truncation(stacked, no);
    MatF merged = svd_merge({a, b});
    double num = 0, den = 0;
    for (std::size_t i = 0; i < no; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double d = merged.at(i, j) - trunc.at(i, j);
        num += d * d;
        den += trunc.at(i, j) * trunc.at(i, j);
      }
    CHECK(std::sqrt(num / (den > 0 ? den : 1.0)) < 1e-6);
  }
  CHECK(tested == 40);
}

TEST_CASE("svd_merge is scale-equivariant") {
  MatF a = random_mat(4, 6, 71);
  MatF b = random_mat(4, 6, 72);
  const float c = 3.25f;
  MatF ca = a, cb = b;
  for (auto& v : ca.data) v *= c;
  for (auto& v : cb.data) v *= c;
  MatF merged = svd_merge({a, b});
  MatF merged_scaled = svd_merge({ca, cb});
  std::vector<float> expect = merged.data;
  for (auto& v : expect) v *= c;
  CHECK(testutil::rel_frobenius(merged_scaled.data, expect) < 1e-6);
}

TEST_CASE("svd_merge rejects bad input") {
  MatF a = random_mat(4, 6, 80);
  MatF b = random_mat(4, 7, 81);
  CHECK_THROWS_AS(svd_merge({a, b}), DataError);
  MatF nan = a;
  nan.data[0] = std::nanf("");
  CHECK_THROWS_AS(svd_merge({a, nan}), DataError);
  CHECK_THROWS_AS(svd_merge({}), DataError);
}

TEST_CASE("svd_merge handles wide and tall stacks (k < m*n_o and k > m*n_o)") {
  // k < m*n_o exercises the branch where Lambda has fewer nonzero rows
  // than n_o would suggest.
  MatF tallw = random_mat(8, 3, 90);
  MatF out = svd_merge({tallw, tallw});
  CHECK(testutil::rel_frobenius(out.data, tallw.data) < 1e-5);

  MatF widew = random_mat(2, 31, 91);
  MatF out2 = svd_merge({widew, widew, widew});
  CHECK(testutil::rel_frobenius(out2.data, widew.data) < 1e-5);
}

TEST_CASE("mean_merge") {
  std::vector<float> v = {1.0f, -2.0f, 3.5f};
  CHECK(mean_merge({v}) == v);
  CHECK(mean_merge({v, v}) == v);
  CHECK(mean_merge({{0.0f, 2.0f}, {4.0f, 0.0f}}) == std::vector<float>{2.0f, 1.0f});
  CHECK_THROWS_AS(mean_merge({{1.0f}, {1.0f, 2.0f}}), DataError);
}

TEST_CASE("distill self-merge reproduces the checkpoint") {
  Checkpoint a = testutil::random_checkpoint(123);
  auto [merged, report] = distill_checkpoints({&a, &a});
  CHECK(merged.arch_id == a.arch_id);
  CHECK(merged.class_count == a.class_count);
  REQUIRE(report.layers.size() == a.params.size());

  for (const auto& [name, t] : a.params) {
    const Tensor& m = merged.at(name);
    REQUIRE(m.dims == t.dims);
    if (t.rank() == 1) {
      CHECK(m.data == t.data);  // mean of identical vectors is exact
    } else {
      CHECK(testutil::rel_frobenius(m.data, t.data) < 1e-5);
    }
  }
}

TEST_CASE("distill order dependence: conv layers differ, 1-D layers match") {
  Checkpoint a = testutil::random_checkpoint(300);
  Checkpoint b = testutil::random_checkpoint(301);
  auto ab = distill_checkpoints({&a, &b}).merged;
  auto ba = distill_checkpoints({&b, &a}).merged;

  // 1-D parameters are order-insensitive means.
  CHECK(ab.at("bn1.gamma").data == ba.at("bn1.gamma").data);

  // The anchor block drives U', so conv output generally differs.
  double diff = testutil::rel_frobenius(ab.at("conv1.weight").data,
                                        ba.at("conv1.weight").data);
  CHECK(diff > 1e-4);
}

TEST_CASE("distill rejects incompatible inputs") {
  Checkpoint a = testutil::random_checkpoint(400);
  Checkpoint b = testutil::random_checkpoint(401);
  b.at("conv1.weight") = Tensor({3, 3, 5, 2});
  CHECK_THROWS_AS(distill_checkpoints({&a, &b}), DataError);

  CHECK_THROWS_AS(distill_checkpoints({&a}), UsageError);
}

TEST_CASE("distill with differing class counts reinitializes the head") {
  Checkpoint a = testutil::random_checkpoint(500);
  Checkpoint b = testutil::random_checkpoint(501);
  b.class_count = 7;
  b.at("head.fc.weight") = testutil::random_tensor({7, 5}, 502);
  b.at("head.fc.bias") = testutil::random_tensor({7}, 503);

  auto result = distill_checkpoints({&a, &b}, {.head_seed = 9});
  CHECK(result.merged.class_count == a.class_count);
  CHECK(result.merged.at("head.fc.weight").dims == std::vector<std::uint32_t>{4, 5});

  bool saw_reinit = false;
  for (const auto& e : result.report.layers) {
    if (e.layer == "head.fc.weight") {
      CHECK(e.method == "reinit");
      saw_reinit = true;
    }
  }
  CHECK(saw_reinit);

  // Deterministic fresh head.
  auto again = distill_checkpoints({&a, &b}, {.head_seed = 9});
  CHECK(again.merged.at("head.fc.weight").data ==
        result.merged.at("head.fc.weight").data);
}

TEST_CASE("three-way distill merges all blocks") {
  Checkpoint a = testutil::random_checkpoint(700);
  Checkpoint b = testutil::random_checkpoint(701);
  Checkpoint ck = testutil::random_checkpoint(702);
  auto result = distill_checkpoints({&a, &b, &ck});
  CHECK(result.merged.params.size() == a.params.size());
  for (const auto& [name, t] : a.params) {
    CHECK(result.merged.at(name).dims == t.dims);
  }
  // 1-D layers are the three-way mean.
  const auto& g = result.merged.at("bn1.gamma").data;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double expect = (static_cast<double>(a.at("bn1.gamma").data[i]) +
                           b.at("bn1.gamma").data[i] + ck.at("bn1.gamma").data[i]) /
                          3.0;
    CHECK(g[i] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("merge report names every layer once with sane stats") {
  Checkpoint a = testutil::random_checkpoint(600);
  Checkpoint b = testutil::random_checkpoint(601);
  auto result = distill_checkpoints({&a, &b});
  CHECK(result.report.layers.size() == a.params.size());
  for (const auto& e : result.report.layers) {
    CHECK(e.input_count == 2);
    if (e.method == "svd") CHECK(e.top_sigma > 0.0);
  }
  auto j = result.report.to_json();
  CHECK(j["layers"].size() == a.params.size());
}
