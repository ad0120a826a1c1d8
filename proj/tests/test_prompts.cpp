#include "urbandit/prompts.hpp"

#include "urbandit/masking.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace urbandit;
using testutil::random_mat;

TEST_CASE("retrieval with one entry returns its value") {
  const Mat v = random_mat(1, 8, 1);
  const auto r = retrieve(random_mat(1, 8, 2), v, random_mat(1, 8, 3));
  CHECK(r.alpha(0, 0) == 1.0);
  CHECK(r.prompt == v);
}

TEST_CASE("retrieval concentrates on an aligned key") {
  const Index D = 8;
  Mat k = Mat::Zero(2, D);
  k(0, 0) = 1;
  k(1, 1) = 1;
  const Mat v = random_mat(2, D, 4);
  const Mat q = 50.0 * std::sqrt(double(D)) * k.row(0);
  const auto r = retrieve(k, v, q);
  CHECK((r.prompt - v.row(0)).norm() < 1e-6 * (v.row(0) - v.row(1)).norm());
}

TEST_CASE("retrieval is a convex combination") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const Index n = 1 + i % 17, D = 4;
    const Mat k = standard_normal(n, D, rng), v = standard_normal(n, D, rng), q = 3.0 * standard_normal(1, D, rng);
    const auto r = retrieve(k, v, q);
    CHECK(std::abs(r.alpha.sum() - 1.0) < 1e-12);
    CHECK(r.alpha.minCoeff() >= 0.0);
    for (Index d = 0; d < D; ++d) {
      CHECK(r.prompt(0, d) >= v.col(d).minCoeff() - 1e-12);
      CHECK(r.prompt(0, d) <= v.col(d).maxCoeff() + 1e-12);
    }
  }
}

TEST_CASE("time and spatial patterns") {
  const auto layout = TokenLayout::make(SpatialShape::grid(4, 4), 4, {2, 2, 3});  // T'=2, N'=4
  ad::Graph g(false);
  const Mat q = random_mat(1, 3, 6);
  const Mat same = Mat::Ones(layout.token_count(), 3) * 0.25;
  CHECK((time_pattern(g.constant(same), layout, g.constant(q)).value().array() - 0.25).abs().maxCoeff() < 1e-15);
  CHECK((spatial_pattern(g.constant(same), layout, g.constant(q)).value().array() - 0.25).abs().maxCoeff() < 1e-15);

  // T' = 1: the time pattern is the spatial mean of the only step.
  const auto l1 = TokenLayout::make(SpatialShape::grid(4, 4), 2, {2, 2, 3});
  const Mat x1 = random_mat(l1.token_count(), 3, 7);
  CHECK((time_pattern(g.constant(x1), l1, g.constant(q)).value() - x1.colwise().mean()).cwiseAbs().maxCoeff() < 1e-14);
  // N' = 1: the spatial pattern is the temporal mean.
  const auto ln = TokenLayout::make(SpatialShape::grid(2, 2), 6, {2, 2, 3});
  const Mat xn = random_mat(ln.token_count(), 3, 8);
  CHECK((spatial_pattern(g.constant(xn), ln, g.constant(q)).value() - xn.colwise().mean()).cwiseAbs().maxCoeff() <
        1e-14);

  // Permuting spatial indices (time pattern) or time patches (spatial pattern).
  const Mat x = random_mat(layout.token_count(), 3, 9);
  Mat xs(x.rows(), 3), xt(x.rows(), 3);
  const Index sp[] = {2, 0, 3, 1};
  for (Index tp = 0; tp < 2; ++tp)
    for (Index s = 0; s < 4; ++s) {
      xs.row(layout.token_index(tp, s)) = x.row(layout.token_index(tp, sp[s]));
      xt.row(layout.token_index(tp, s)) = x.row(layout.token_index(1 - tp, s));
    }
  const Mat tq = time_pattern(g.constant(x), layout, g.constant(q)).value();
  CHECK((time_pattern(g.constant(xs), layout, g.constant(q)).value() - tq).cwiseAbs().maxCoeff() < 1e-14);
  const Mat sq = spatial_pattern(g.constant(x), layout, g.constant(q)).value();
  CHECK((spatial_pattern(g.constant(xt), layout, g.constant(q)).value() - sq).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("frequency pattern") {
  ad::Graph g(false);
  const Mat w = random_mat(16, 5, 10), b = random_mat(1, 5, 11);
  CHECK(freq_pattern(g, Mat::Zero(3, 16), 12, g.constant(w), g.constant(b)).value() == b);
  for (Index T : {4, 24, 100}) {
    const Mat x = random_mat(T, 3, 12);
    const Mat f = freq_filter(x, FFTMode::parse("mean"), 8).features;
    const Mat out = freq_pattern(g, f, T, g.constant(w), g.constant(b)).value();
    CHECK(out.cols() == 5);
    Mat xp = x;
    xp.col(0).swap(xp.col(2));
    const Mat fp = freq_filter(xp, FFTMode::parse("mean"), 8).features;
    CHECK((freq_pattern(g, fp, T, g.constant(w), g.constant(b)).value() - out).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("mask prompt depends on the mask only, including its order") {
  const auto layout = TokenLayout::make(SpatialShape::grid(4, 4), 8, {2, 2, 6});
  ad::Graph g(false);
  MaskPromptParams p{g.constant(random_mat(1, 6, 13)), g.constant(random_mat(1, 6, 14)),
                     g.constant(random_mat(8, 6, 15)), g.constant(random_mat(8, 6, 16)),
                     g.constant(random_mat(1, 6, 17))};
  MaskSpec s;
  s.t_steps = 8;
  s.locations = 16;
  s.t_in = 4;
  s.t_out = 4;
  const Mat fwd = build_mask(s);
  const Mat a = mask_prompt(g, fwd, layout, p).value();
  CHECK(mask_prompt(g, fwd, layout, p).value() == a);
  s.task = TaskKind::backward_prediction;
  CHECK((mask_prompt(g, build_mask(s), layout, p).value() - a).norm() > 1e-8);
  CHECK((mask_prompt(g, Mat::Ones(8, 16), layout, p).value() - mask_prompt(g, Mat::Zero(8, 16), layout, p).value())
            .norm() > 1e-8);
}

TEST_CASE("assemble and strip") {
  ad::Graph g(false);
  const Mat tokens = random_mat(384, 4, 18);
  std::array<ad::Var, kPromptCount> bundle;
  for (Index i = 0; i < kPromptCount; ++i) bundle[i] = g.constant(Mat::Constant(1, 4, double(i)));
  const ad::Var seq = assemble(bundle, g.constant(tokens));
  CHECK(seq.rows() == 388);
  for (Index i = 0; i < kPromptCount; ++i) CHECK(seq.value()(i, 0) == double(i));
  CHECK(strip_prompts(seq).value() == tokens);
  std::swap(bundle[0], bundle[1]);
  CHECK(assemble(bundle, g.constant(tokens)).value() != seq.value());
  bundle[0] = g.constant(Mat::Zero(1, 3));
  CHECK_THROWS_AS(assemble(bundle, g.constant(tokens)), Error);
}

TEST_CASE("prompt toggles") {
  const auto all = PromptToggles::from_disabled("tfsm");
  CHECK(!all.time);
  CHECK(!all.freq);
  CHECK(!all.space);
  CHECK(!all.mask);
  CHECK(PromptToggles::from_disabled("all") == all);
  CHECK(PromptToggles::from_disabled("").disabled().empty());
  CHECK(PromptToggles::from_disabled("f").disabled() == "f");
  CHECK_THROWS_AS(PromptToggles::from_disabled("x"), Error);
}

TEST_CASE("memory pools are seeded") {
  Rng a(1), b(1);
  const auto p = MemoryPool::make("pool", 16, 4, a), q = MemoryPool::make("pool", 16, 4, b);
  CHECK(p.keys.value == q.keys.value);
  CHECK(p.size() == 16);
  CHECK_THROWS_AS(MemoryPool::make("pool", 0, 4, a), Error);
}

TEST_CASE("prompt gradients") {
  const auto layout = TokenLayout::make(SpatialShape::grid(4, 4), 4, {2, 2, 4});
  ad::Parameter tok("tokens", random_mat(layout.token_count(), 4, 19)), q("q", random_mat(1, 4, 20));
  ad::Parameter keys("keys", random_mat(5, 4, 21)), vals("values", random_mat(5, 4, 22));
  const auto errs = testutil::grad_check({&tok, &q, &keys, &vals}, [&](ad::Graph& g) {
    ad::Var tp = time_pattern(g.param(tok), layout, g.param(q));
    ad::Var sp = spatial_pattern(g.param(tok), layout, g.param(q));
    return ad::add(retrieve(g.param(keys), g.param(vals), tp).prompt,
                   retrieve(g.param(keys), g.param(vals), sp).prompt);
  });
  for (const auto& e : errs) {
    INFO(e.name);
    CHECK(e.rel < 1e-6);
  }
}
