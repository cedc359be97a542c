#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "model_fixture.hpp"
#include "msg/encoder.hpp"
#include "msg/multihop.hpp"
#include "msg/optim.hpp"

using namespace msg;
using ad::Graph;
using ad::Var;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double range = 1.0) {
  std::uniform_real_distribution<double> d(-range, range);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("attentive unit examples") {
  Graph<double> g;
  std::mt19937_64 rng(2);
  const int d = 4;
  const auto w = g.constant(2 * d, 3, random_values(2 * d * 3, rng));
  const auto om = g.constant(3, 1, random_values(3, rng));
  const auto mq = g.constant(1, d, random_values(d, rng));
  SUBCASE("single sentence") {
    const auto ms = g.constant(1, d, random_values(d, rng));
    const auto h = attentive_unit(ms, mq, {}, w, om);
    CHECK(h.scores.item() == 1.0);
    for (int c = 0; c < d; ++c) CHECK(h.output.at(0, c) == ms.at(0, c));
  }
  SUBCASE("identical sentences") {
    auto row = random_values(d, rng);
    row.insert(row.end(), row.begin(), row.end());
    const auto h = attentive_unit(g.constant(2, d, row), mq, {}, w, om);
    CHECK(h.scores.value()[0] == doctest::Approx(0.5));
    CHECK(h.scores.value()[1] == doctest::Approx(0.5));
  }
  SUBCASE("zero parameters") {
    const auto h = attentive_unit(g.constant(5, d, random_values(5 * d, rng)), mq, {}, g.zeros(2 * d, 3), g.zeros(3, 1));
    for (double x : h.scores.value()) CHECK(x == doctest::Approx(0.2));
  }
}

TEST_CASE("mar scores") {
  std::mt19937_64 rng(4);
  const int d = 3;
  Graph<double> g;
  const auto u1v = random_values(d * d, rng);
  const auto u2v = random_values(d * d, rng);
  const auto u1 = g.constant(d, d, u1v);
  const auto u2 = g.constant(d, d, u2v);
  const auto mqv = random_values(d, rng);
  const auto mq = g.constant(1, d, mqv);
  SUBCASE("lambda = 1 is the question term") {
    const auto msv = random_values(3 * d, rng);
    const auto ms = g.constant(3, d, msv);
    const auto mar = mar_scores(ms, mq, {}, 1.0, u1, u2);
    const auto sim1 = matmul(matmul(ms, u1), mq, false, true);
    for (int i = 0; i < 3; ++i) CHECK(mar.value()[static_cast<std::size_t>(i)] == sim1.value()[static_cast<std::size_t>(i)]);
  }
  SUBCASE("lambda = 0 with two sentences") {
    const auto mar = mar_scores(g.constant(2, d, random_values(2 * d, rng)), mq, {}, 0.0, u1, u2);
    CHECK(mar.value()[0] == 1.0);
    CHECK(mar.value()[1] == 1.0);
  }
  SUBCASE("single sentence has no consistency term") {
    const auto ms = g.constant(1, d, random_values(d, rng));
    const auto mar = mar_scores(ms, mq, {}, 0.3, u1, u2);
    const auto sim1 = matmul(matmul(ms, u1), mq, false, true);
    CHECK(mar.item() == doctest::Approx(0.3 * sim1.item()).epsilon(1e-15));
  }
}

TEST_CASE("property: mar matches the double-loop oracle") {
  for (int seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const int n = 1 + seed % 8;
    const int d = 2 + seed % 5;
    const double lambda = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto ms = random_values(static_cast<std::size_t>(n * d), rng, 2.0);
    const auto mq = random_values(static_cast<std::size_t>(d), rng, 2.0);
    const auto u1 = random_values(static_cast<std::size_t>(d * d), rng);
    const auto u2 = random_values(static_cast<std::size_t>(d * d), rng);
    Graph<double> g;
    const auto mar = mar_scores(g.constant(n, d, ms), g.constant(1, d, mq), {}, lambda, g.constant(d, d, u1),
                                g.constant(d, d, u2));
    const auto ref = test::mar_oracle(ms, mq, n, d, u1, u2, lambda);
    for (int i = 0; i < n; ++i) CHECK(std::abs(mar.value()[static_cast<std::size_t>(i)] - ref[static_cast<std::size_t>(i)]) < 1e-10);
  }
}

TEST_CASE("mar unit gate") {
  Graph<double> g;
  std::mt19937_64 rng(8);
  const int d = 3;
  const auto ms = g.constant(3, d, random_values(3 * d, rng));
  const auto mq = g.constant(1, d, random_values(d, rng));
  SUBCASE("zero score halves each row") {
    const auto h = mar_unit(ms, mq, {}, 1.0, g.zeros(d, d), g.zeros(d, d));
    for (int i = 0; i < 3; ++i) {
      CHECK(h.scores.value()[static_cast<std::size_t>(i)] == 0.5);
      for (int c = 0; c < d; ++c) CHECK(h.output.at(i, c) == 0.5 * ms.at(i, c));
    }
  }
  SUBCASE("large scores saturate towards one") {
    const auto big = g.constant(1, d, {50, 50, 50});
    const auto pos = g.constant(3, d, {1, 1, 1, 2, 2, 2, 3, 3, 3});
    std::vector<double> eye(d * d, 0.0);
    for (int i = 0; i < d; ++i) eye[static_cast<std::size_t>(i * d + i)] = 1;
    const auto h = mar_unit(pos, big, {}, 1.0, g.constant(d, d, eye), g.zeros(d, d));
    for (double x : h.scores.value()) CHECK(x > 1 - 1e-12);
    const auto h2 = mar_unit(pos, g.constant(1, d, {1, 1, 1}), {}, 1.0, g.constant(d, d, eye), g.zeros(d, d));
    // monotone: a larger score gives a larger gate
    CHECK(h2.scores.value()[0] < h2.scores.value()[1]);
    CHECK(h2.scores.value()[1] < h2.scores.value()[2]);
  }
  SUBCASE("masked sentence is zeroed") {
    const ad::Mask mask{1, 0, 1};
    const auto h = mar_unit(ms, mq, mask, 0.5, g.constant(d, d, random_values(d * d, rng)),
                            g.constant(d, d, random_values(d * d, rng)));
    CHECK(h.scores.value()[1] == 0.0);
    for (int c = 0; c < d; ++c) CHECK(h.output.at(1, c) == 0.0);
    CHECK(h.scores.value()[0] > 0.0);
    CHECK(h.scores.value()[0] < 1.0);
  }
}

TEST_CASE("run_hops structure") {
  auto m = test::tiny_model<double>();
  const ExampleView v = test::tiny_view(m.vocab, 0);
  SUBCASE("three hops") {
    Graph<double> g(&m.store);
    const auto enc = encode(g, m.mp, v, m.cfg);
    const auto hops = run_hops(g, m.mp, enc.ms, enc.mq, enc.sentence_mask, m.cfg);
    REQUIRE(hops.size() == 3);
    CHECK(hops[0].normalized);
    CHECK_FALSE(hops[1].normalized);
    CHECK_FALSE(hops[2].normalized);
    double total = 0;
    for (double x : hops[0].scores.value()) total += x;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    for (int k = 1; k < 3; ++k) {
      for (double x : hops[static_cast<std::size_t>(k)].scores.value()) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
      }
    }
    CHECK(m.mp.refine_fw.size() == 3);
    CHECK(m.mp.refine_fw[0].input != m.mp.refine_fw[1].input);
    const auto tr = make_trace(hops, enc.sentence_mask);
    for (const auto& w : tr.weights) {
      double s = 0;
      for (double x : w) s += x;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("single hop") {
    m.cfg.hops = 1;
    Graph<double> g(&m.store);
    const auto enc = encode(g, m.mp, v, m.cfg);
    const auto hops = run_hops(g, m.mp, enc.ms, enc.mq, enc.sentence_mask, m.cfg);
    CHECK(hops.size() == 1);
  }
  SUBCASE("attentive units only") {
    m.cfg.mar_unit = false;
    Graph<double> g(&m.store);
    const auto enc = encode(g, m.mp, v, m.cfg);
    const auto hops = run_hops(g, m.mp, enc.ms, enc.mq, enc.sentence_mask, m.cfg);
    for (const auto& h : hops) CHECK(h.normalized);
  }
  SUBCASE("zero hops rejected") {
    m.cfg.hops = 0;
    Graph<double> g(&m.store);
    const auto enc = encode(g, m.mp, v, m.cfg);
    CHECK_THROWS(run_hops(g, m.mp, enc.ms, enc.mq, enc.sentence_mask, m.cfg));
  }
}

TEST_CASE("property: sentence permutation equivariance without refiner") {
  auto cfg = test::tiny_config();
  cfg.hop_refiner = false;
  auto m = test::tiny_model<double>(cfg);
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 100);
    const int n = 2 + seed % 5;
    const int d = cfg.enc_out();
    const auto ms = random_values(static_cast<std::size_t>(n * d), rng);
    const auto mq = random_values(static_cast<std::size_t>(d), rng);
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> permuted(ms.size());
    for (int i = 0; i < n; ++i) {
      std::copy_n(&ms[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)] * d)], d, &permuted[static_cast<std::size_t>(i * d)]);
    }
    Graph<double> g(&m.store);
    const auto a = run_hops(g, m.mp, g.constant(n, d, ms), g.constant(1, d, mq), {}, cfg);
    const auto b = run_hops(g, m.mp, g.constant(n, d, permuted), g.constant(1, d, mq), {}, cfg);
    for (std::size_t k = 0; k < a.size(); ++k) {
      for (int i = 0; i < n; ++i) {
        CHECK(b[k].scores.value()[static_cast<std::size_t>(i)] ==
              doctest::Approx(a[k].scores.value()[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("aggregate_hops") {
  auto m = test::tiny_model<double>();
  Graph<double> g(&m.store);
  std::mt19937_64 rng(3);
  const int n = 3;
  const int d = m.cfg.enc_out();
  auto hop = [&](Var<double> out) {
    HopState<double> h;
    h.output = out;
    return h;
  };
  const auto o1 = g.constant(n, d, random_values(static_cast<std::size_t>(n * d), rng));
  const auto o2 = g.constant(n, d, random_values(static_cast<std::size_t>(n * d), rng));
  SUBCASE("single hop") {
    for (auto mode : {Aggregation::kMerge, Aggregation::kLast, Aggregation::kUniform}) {
      const auto a = aggregate_hops(g, m.mp, {hop(o1)}, mode);
      for (double x : a.alpha.value()) CHECK(x == 1.0);
      for (int i = 0; i < n * d; ++i) CHECK(a.z.value()[static_cast<std::size_t>(i)] == o1.value()[static_cast<std::size_t>(i)]);
    }
  }
  SUBCASE("identical hops") {
    const auto a = aggregate_hops(g, m.mp, {hop(o1), hop(o1), hop(o1)}, Aggregation::kMerge);
    for (double x : a.alpha.value()) CHECK(x == doctest::Approx(1.0 / 3));
    for (int i = 0; i < n * d; ++i) CHECK(a.z.value()[static_cast<std::size_t>(i)] == doctest::Approx(o1.value()[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
  SUBCASE("last and merge differ") {
    const auto merge = aggregate_hops(g, m.mp, {hop(o1), hop(o2)}, Aggregation::kMerge);
    const auto last = aggregate_hops(g, m.mp, {hop(o1), hop(o2)}, Aggregation::kLast);
    double diff = 0;
    for (int i = 0; i < n * d; ++i) diff += std::abs(merge.z.value()[static_cast<std::size_t>(i)] - last.z.value()[static_cast<std::size_t>(i)]);
    CHECK(diff > 1e-6);
    for (int i = 0; i < n; ++i) CHECK(merge.alpha.at(i, 0) + merge.alpha.at(i, 1) == doctest::Approx(1.0));
  }
  SUBCASE("uniform weights") {
    const auto a = aggregate_hops(g, m.mp, {hop(o1), hop(o2)}, Aggregation::kUniform);
    for (int i = 0; i < n * d; ++i) {
      CHECK(a.z.value()[static_cast<std::size_t>(i)] ==
            doctest::Approx(0.5 * (o1.value()[static_cast<std::size_t>(i)] + o2.value()[static_cast<std::size_t>(i)])));
    }
  }
}

TEST_CASE("gradient through all hops") {
  auto m = test::tiny_model<double>();
  const ExampleView v = test::tiny_view(m.vocab, 0);
  const auto r = grad_check(
      m.store,
      [&](Graph<double>& g) {
        const auto enc = encode(g, m.mp, v, m.cfg);
        const auto hops = run_hops(g, m.mp, enc.ms, enc.mq, enc.sentence_mask, m.cfg);
        const auto agg = aggregate_hops(g, m.mp, hops, m.cfg.aggregation);
        return sum(tanh(agg.z));
      },
      1e-4, 6);
  CHECK(r.max_rel_error < 1e-4);
}
