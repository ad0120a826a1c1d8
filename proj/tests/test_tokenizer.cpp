#include "urbandit/tokenizer.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace urbandit;
using testutil::random_mat;

TEST_CASE("token counts") {
  const auto layout = TokenLayout::make(SpatialShape::grid(16, 16), 12, {2, 2, 8});
  CHECK(layout.token_count() == 384);
  CHECK(layout.patch_size() == 8);
  const auto gl = TokenLayout::make(SpatialShape::graph(Mat::Zero(4, 4)), 12, {2, 2, 8});
  CHECK(gl.token_count() == 24);
  CHECK(gl.patch_size() == 2);

  Rng rng(1);
  std::uniform_int_distribution<Index> u(1, 4);
  for (int i = 0; i < 200; ++i) {
    const Index pt = u(rng), ps = u(rng), tp = u(rng), hp = u(rng), wp = u(rng);
    const auto l = TokenLayout::make(SpatialShape::grid(hp * ps, wp * ps), tp * pt, {pt, ps, 4});
    CHECK(l.token_count() == tp * hp * wp);
    for (Index k = 0; k < l.token_count(); ++k) {
      const auto [a, b] = l.token_coords(k);
      CHECK(l.token_index(a, b) == k);
    }
  }
}

TEST_CASE("non-divisible shapes name the dimension") {
  CHECK_THROWS_WITH_AS(TokenLayout::make(SpatialShape::grid(8, 8), 5, {2, 2, 4}), doctest::Contains("T"), Error);
  CHECK_THROWS_WITH_AS(TokenLayout::make(SpatialShape::grid(7, 8), 4, {2, 2, 4}), doctest::Contains("H"), Error);
  CHECK_THROWS_WITH_AS(TokenLayout::make(SpatialShape::grid(8, 9), 4, {2, 2, 4}), doctest::Contains("W"), Error);
}

TEST_CASE("flatten and unflatten are exact inverses") {
  for (auto space : {SpatialShape::grid(4, 6), SpatialShape::graph(Mat::Zero(5, 5))}) {
    const auto l = TokenLayout::make(space, 8, {2, 2, 4});
    const Mat x = random_mat(8, space.locations(), 3);
    const Mat p = l.flatten(x);
    CHECK(p.rows() == l.token_count());
    CHECK(l.unflatten(p) == x);
    // Every cell appears exactly once.
    for (Index k = 0; k < l.token_count(); ++k)
      for (Index e = 0; e < l.patch_size(); ++e) {
        const auto [t, s] = l.cell(k, e);
        CHECK(p(k, e) == x(t, s));
      }
  }
}

TEST_CASE("identity kernel reproduces the input") {
  const auto l = TokenLayout::make(SpatialShape::grid(4, 4), 3, {1, 1, 1});
  const Mat x = random_mat(3, 16, 5);
  const Mat tok = embed_grid(x, l, Mat::Ones(1, 1), Mat::Zero(1, 1));
  for (Index k = 0; k < l.token_count(); ++k) {
    const auto [t, s] = l.cell(k, 0);
    CHECK(tok(k, 0) == x(t, s));
  }
}

TEST_CASE("grid embedding is local to each patch") {
  const auto l = TokenLayout::make(SpatialShape::grid(4, 4), 4, {2, 2, 3});
  const Mat w = random_mat(8, 3, 6), b = random_mat(1, 3, 7);
  Mat x = random_mat(4, 16, 8);
  const Mat base = embed_grid(x, l, w, b);
  x(3, 1 * 4 + 2) += 1.0;  // t=3, h=1, w=2 -> t_patch 1, s_patch (0,1) = 1
  const Mat moved = embed_grid(x, l, w, b);
  const Index hit = l.token_index(1, 1);
  for (Index k = 0; k < l.token_count(); ++k) {
    const double d = (moved.row(k) - base.row(k)).cwiseAbs().maxCoeff();
    if (k == hit)
      CHECK(d > 0);
    else
      CHECK(d == 0.0);
  }
}

TEST_CASE("gcn layer") {
  const Mat h = random_mat(3, 2, 9);
  CHECK((gcn_layer(h, Mat::Zero(3, 3), Mat::Identity(2, 2)) - h).cwiseAbs().maxCoeff() < 1e-15);

  Mat a(2, 2);
  a << 0, 1, 1, 0;
  Mat h2(2, 1);
  h2 << 1, 3;
  const Mat out = gcn_layer(h2, a, Mat::Identity(1, 1));
  CHECK(out(0, 0) == doctest::Approx(2.0));
  CHECK(out(1, 0) == doctest::Approx(2.0));
  CHECK(normalized_adjacency(a)(0, 1) == doctest::Approx(0.5));

  // Equivariance under a node permutation.
  Mat adj = Mat::Zero(4, 4);
  adj(0, 1) = adj(1, 0) = 1;
  adj(1, 2) = adj(2, 1) = 2;
  adj(2, 3) = adj(3, 2) = 1;
  const Mat x = random_mat(4, 3, 10), w = random_mat(3, 2, 11);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(4);
  perm.indices() << 2, 0, 3, 1;
  const Mat P = perm.toDenseMatrix().cast<double>();
  const Mat lhs = gcn_layer(P * x, P * adj * P.transpose(), w);
  const Mat rhs = P * gcn_layer(x, adj, w);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
  // Linearity in h.
  const Mat y = random_mat(4, 3, 12);
  CHECK((gcn_layer(2.0 * x + y, adj, w) - 2.0 * gcn_layer(x, adj, w) - gcn_layer(y, adj, w)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("graph embedding: counts, locality without edges, bias on zero input") {
  const auto space = SpatialShape::graph(Mat::Zero(4, 4));
  const auto l = TokenLayout::make(space, 12, {2, 2, 5});
  const Mat conv = random_mat(2, 5, 13), gcn = random_mat(5, 5, 14), bias = random_mat(1, 5, 15);
  Mat x = random_mat(12, 4, 16);
  const Mat tok = embed_graph(x, l, Mat::Zero(4, 4), conv, gcn, bias);
  CHECK(tok.rows() == 24);
  x(5, 2) += 1.0;
  const Mat moved = embed_graph(x, l, Mat::Zero(4, 4), conv, gcn, bias);
  for (Index k = 0; k < 24; ++k) {
    const auto [tp, n] = l.token_coords(k);
    const double d = (moved.row(k) - tok.row(k)).cwiseAbs().maxCoeff();
    if (tp == 2 && n == 2)
      CHECK(d > 0);
    else
      CHECK(d == 0.0);
  }
  const Mat zero = embed_graph(Mat::Zero(12, 4), l, Mat::Ones(4, 4), conv, gcn, bias);
  for (Index k = 0; k < 24; ++k) CHECK(zero.row(k) == bias);
  CHECK_THROWS_AS(embed_graph(x, l, Mat::Zero(3, 3), conv, gcn, bias), Error);
}

TEST_CASE("graph embedding: explicit per-patch formula") {
  Mat adj = Mat::Zero(3, 3);
  adj(0, 1) = adj(1, 0) = adj(1, 2) = adj(2, 1) = 1.0;
  const auto l = TokenLayout::make(SpatialShape::graph(adj), 4, {2, 2, 3});
  const Mat conv = random_mat(2, 3, 18), gcn = random_mat(3, 3, 19), bias = random_mat(1, 3, 20);
  const Mat x = random_mat(4, 3, 21);
  const Mat tok = embed_graph(x, l, adj, conv, gcn, bias);
  // hand-normalized adjacency: degrees with self loops are 2, 3, 2
  Mat a(3, 3);
  a << 0.5, 1 / std::sqrt(6.0), 0, 1 / std::sqrt(6.0), 1.0 / 3, 1 / std::sqrt(6.0), 0, 1 / std::sqrt(6.0), 0.5;
  for (Index tp = 0; tp < 2; ++tp) {
    Mat h(3, 3);
    for (Index n = 0; n < 3; ++n)
      for (Index d = 0; d < 3; ++d) h(n, d) = x(2 * tp, n) * conv(0, d) + x(2 * tp + 1, n) * conv(1, d);
    const Mat expect = (h + a * h * gcn).rowwise() + bias.row(0);
    for (Index n = 0; n < 3; ++n) {
      Index k = -1;
      for (Index j = 0; j < l.token_count(); ++j)
        if (l.token_coords(j) == std::pair<Index, Index>{tp, n}) k = j;
      REQUIRE(k >= 0);
      CHECK((tok.row(k) - expect.row(n)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("projection head") {
  const auto l = TokenLayout::make(SpatialShape::grid(4, 4), 4, {2, 2, 3});
  const Mat rec = project_tokens(Mat::Zero(l.token_count(), 3), l, random_mat(3, 8, 17), Mat::Zero(1, 8));
  CHECK(rec.rows() == 4);
  CHECK(rec.cols() == 16);
  CHECK(rec.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("graph embedding gradients") {
  Mat adj = Mat::Zero(3, 3);
  adj(0, 1) = adj(1, 0) = 1;
  adj(1, 2) = adj(2, 1) = 1;
  const auto space = SpatialShape::graph(adj);
  const auto l = TokenLayout::make(space, 4, {2, 2, 3});
  ad::Parameter conv("conv", random_mat(2, 3, 18)), gcn("gcn", random_mat(3, 3, 19)), b("b", random_mat(1, 3, 20));
  const Mat x = random_mat(4, 3, 21);
  const auto errs = testutil::grad_check({&conv, &gcn, &b}, [&](ad::Graph& g) {
    return embed_graph(g, x, l, space.norm_adjacency, g.param(conv), g.param(gcn), g.param(b));
  });
  for (const auto& e : errs) CHECK(e.rel < 1e-7);
}
