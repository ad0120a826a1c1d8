#include "urbandit/autodiff.hpp"

#include <cmath>

namespace urbandit::ad {

namespace {

void check(bool cond, const char* op, const std::string& what) {
  if (!cond) throw Error(std::string(op) + ": " + what);
}

void same_shape(const Var& a, const Var& b, const char* op) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), op,
        "shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
}

}  // namespace

Var Graph::constant(Mat value) {
  nodes_.push_back(std::make_unique<Node>());
  Node* n = nodes_.back().get();
  n->value = std::move(value);
  return Var(this, n);
}

Var Graph::param(Parameter& p) {
  nodes_.push_back(std::make_unique<Node>());
  Node* n = nodes_.back().get();
  n->value = p.value;
  n->requires_grad = record_grad_;
  if (record_grad_) params_.emplace_back(n, &p);
  return Var(this, n);
}

Var Graph::emit(Mat value, std::initializer_list<Var> inputs) {
  nodes_.push_back(std::make_unique<Node>());
  Node* n = nodes_.back().get();
  n->value = std::move(value);
  if (record_grad_)
    for (const Var& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  return Var(this, n);
}

Var Graph::emit(Mat value, const std::vector<Var>& inputs) {
  nodes_.push_back(std::make_unique<Node>());
  Node* n = nodes_.back().get();
  n->value = std::move(value);
  if (record_grad_)
    for (const Var& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  return Var(this, n);
}

void Graph::backward(const Var& out, const Mat& seed) {
  if (!record_grad_) throw Error("Graph::backward: graph was built without gradient recording");
  check(seed.rows() == out.rows() && seed.cols() == out.cols(), "backward", "seed shape mismatch");
  if (!out.requires_grad()) return;
  out.node()->grad_ref() += seed;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = it->get();
    if (n->requires_grad && n->backward && n->grad.size() != 0) n->backward();
  }
  for (auto& [node, p] : params_)
    if (node->grad.size() != 0) p->grad += node->grad;
}

Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul", shape_str(a.value()) + " * " + shape_str(b.value()));
  Var out = a.graph().emit(a.value() * b.value(), {a, b});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node(), *nb = b.node();
    o->backward = [o, na, nb] {
      if (na->requires_grad) na->grad_ref().noalias() += o->grad * nb->value.transpose();
      if (nb->requires_grad) nb->grad_ref().noalias() += na->value.transpose() * o->grad;
    };
  }
  return out;
}

Var matmul_nt(const Var& a, const Var& b) {
  check(a.cols() == b.cols(), "matmul_nt", shape_str(a.value()) + " * T(" + shape_str(b.value()) + ")");
  Var out = a.graph().emit(a.value() * b.value().transpose(), {a, b});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node(), *nb = b.node();
    o->backward = [o, na, nb] {
      if (na->requires_grad) na->grad_ref().noalias() += o->grad * nb->value;
      if (nb->requires_grad) nb->grad_ref().noalias() += o->grad.transpose() * na->value;
    };
  }
  return out;
}

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  Var out = a.graph().emit(a.value() + b.value(), {a, b});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node(), *nb = b.node();
    o->backward = [o, na, nb] {
      if (na->requires_grad) na->grad_ref() += o->grad;
      if (nb->requires_grad) nb->grad_ref() += o->grad;
    };
  }
  return out;
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  Var out = a.graph().emit(a.value() - b.value(), {a, b});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node(), *nb = b.node();
    o->backward = [o, na, nb] {
      if (na->requires_grad) na->grad_ref() += o->grad;
      if (nb->requires_grad) nb->grad_ref() -= o->grad;
    };
  }
  return out;
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  Var out = a.graph().emit(a.value().cwiseProduct(b.value()), {a, b});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node(), *nb = b.node();
    o->backward = [o, na, nb] {
      if (na->requires_grad) na->grad_ref() += o->grad.cwiseProduct(nb->value);
      if (nb->requires_grad) nb->grad_ref() += o->grad.cwiseProduct(na->value);
    };
  }
  return out;
}

Var scale(const Var& a, double s) {
  Var out = a.graph().emit(a.value() * s, {a});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node();
    o->backward = [o, na, s] { na->grad_ref() += o->grad * s; };
  }
  return out;
}

Var add_row(const Var& a, const Var& row) {
  check(row.rows() == 1 && row.cols() == a.cols(), "add_row", "row must be 1x" + std::to_string(a.cols()));
  Mat v = a.value();
  v.rowwise() += row.value().row(0);
  Var out = a.graph().emit(std::move(v), {a, row});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node(), *nr = row.node();
    o->backward = [o, na, nr] {
      if (na->requires_grad) na->grad_ref() += o->grad;
      if (nr->requires_grad) nr->grad_ref() += o->grad.colwise().sum();
    };
  }
  return out;
}

Var mul_row(const Var& a, const Var& row) {
  check(row.rows() == 1 && row.cols() == a.cols(), "mul_row", "row must be 1x" + std::to_string(a.cols()));
  Mat v = a.value().array().rowwise() * row.value().row(0).array();
  Var out = a.graph().emit(std::move(v), {a, row});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node(), *nr = row.node();
    o->backward = [o, na, nr] {
      if (na->requires_grad) na->grad_ref().array() += o->grad.array().rowwise() * nr->value.row(0).array();
      if (nr->requires_grad) nr->grad_ref() += o->grad.cwiseProduct(na->value).colwise().sum();
    };
  }
  return out;
}

Var linear(const Var& x, const Var& weight, const Var& bias) { return add_row(matmul(x, weight), bias); }

Var modulate(const Var& x, const Var& shift, const Var& scale_row) {
  check(shift.rows() == 1 && scale_row.rows() == 1 && shift.cols() == x.cols() && scale_row.cols() == x.cols(),
        "modulate", "shift/scale must be 1x" + std::to_string(x.cols()));
  Eigen::RowVectorXd gain = scale_row.value().row(0).array() + 1.0;
  Mat v = x.value().array().rowwise() * gain.array();
  v.rowwise() += shift.value().row(0);
  Var out = x.graph().emit(std::move(v), {x, shift, scale_row});
  if (out.requires_grad()) {
    Node *o = out.node(), *nx = x.node(), *nsh = shift.node(), *nsc = scale_row.node();
    o->backward = [o, nx, nsh, nsc, gain] {
      if (nx->requires_grad) nx->grad_ref().array() += o->grad.array().rowwise() * gain.array();
      if (nsh->requires_grad) nsh->grad_ref() += o->grad.colwise().sum();
      if (nsc->requires_grad) nsc->grad_ref() += o->grad.cwiseProduct(nx->value).colwise().sum();
    };
  }
  return out;
}

Var silu(const Var& a) {
  Mat sig = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  Var out = a.graph().emit(a.value().cwiseProduct(sig), {a});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node();
    o->backward = [o, na, sig] {
      auto s = sig.array();
      na->grad_ref().array() += o->grad.array() * (s * (1.0 + na->value.array() * (1.0 - s)));
    };
  }
  return out;
}

Var gelu(const Var& a) {
  static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double k = 0.044715;
  auto x = a.value().array();
  Mat th = (c * (x + k * x.cube())).tanh().matrix();
  Mat v = (0.5 * x * (1.0 + th.array())).matrix();
  Var out = a.graph().emit(std::move(v), {a});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node();
    o->backward = [o, na, th] {
      auto x = na->value.array();
      auto t = th.array();
      auto d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * c * (1.0 + 3.0 * k * x.square());
      na->grad_ref().array() += o->grad.array() * d;
    };
  }
  return out;
}

Var layer_norm(const Var& a, double eps) {
  const Index n = a.cols();
  Mat xhat(a.rows(), n);
  Vec inv_std(a.rows());
  for (Index r = 0; r < a.rows(); ++r) {
    auto row = a.value().row(r);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (row.array() - mu) * inv_std(r);
  }
  Var out = a.graph().emit(xhat, {a});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node();
    o->backward = [o, na, inv_std, n] {
      Mat& ga = na->grad_ref();
      const Mat& xh = o->value;
      for (Index r = 0; r < xh.rows(); ++r) {
        auto g = o->grad.row(r);
        const double gm = g.mean();
        const double gx = g.dot(xh.row(r)) / static_cast<double>(n);
        ga.row(r).array() += inv_std(r) * (g.array() - gm - xh.row(r).array() * gx);
      }
    };
  }
  return out;
}

namespace {

void softmax_inplace(Mat& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

// dS = P .* (dP - rowsum(dP .* P))
Mat softmax_backward(const Mat& p, const Mat& dp) {
  Mat ds = dp;
  for (Index r = 0; r < p.rows(); ++r) {
    const double dot = p.row(r).dot(dp.row(r));
    ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
  }
  return ds;
}

}  // namespace

Var softmax_rows(const Var& a) {
  Mat p = a.value();
  softmax_inplace(p);
  Var out = a.graph().emit(std::move(p), {a});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node();
    o->backward = [o, na] { na->grad_ref() += softmax_backward(o->value, o->grad); };
  }
  return out;
}

Var concat_rows(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_rows", "no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    check(p.cols() == cols, "concat_rows", "column mismatch");
    rows += p.rows();
  }
  Mat v(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  Var out = parts.front().graph().emit(std::move(v), parts);
  if (out.requires_grad()) {
    std::vector<Node*> nodes;
    for (const Var& p : parts) nodes.push_back(p.node());
    Node* o = out.node();
    o->backward = [o, nodes] {
      Index at = 0;
      for (Node* n : nodes) {
        const Index r = n->value.rows();
        if (n->requires_grad) n->grad_ref() += o->grad.middleRows(at, r);
        at += r;
      }
    };
  }
  return out;
}

Var slice_rows(const Var& a, Index start, Index count) {
  check(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows", "range out of bounds");
  Var out = a.graph().emit(a.value().middleRows(start, count), {a});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node();
    o->backward = [o, na, start, count] { na->grad_ref().middleRows(start, count) += o->grad; };
  }
  return out;
}

Var slice_cols(const Var& a, Index start, Index count) {
  check(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols", "range out of bounds");
  Var out = a.graph().emit(a.value().middleCols(start, count), {a});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node();
    o->backward = [o, na, start, count] { na->grad_ref().middleCols(start, count) += o->grad; };
  }
  return out;
}

Var gather_rows(const Var& table, const std::vector<Index>& rows) {
  Mat v(static_cast<Index>(rows.size()), table.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check(rows[i] >= 0 && rows[i] < table.rows(), "gather_rows", "row index out of range");
    v.row(static_cast<Index>(i)) = table.value().row(rows[i]);
  }
  Var out = table.graph().emit(std::move(v), {table});
  if (out.requires_grad()) {
    Node *o = out.node(), *nt = table.node();
    o->backward = [o, nt, rows] {
      Mat& g = nt->grad_ref();
      for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += o->grad.row(static_cast<Index>(i));
    };
  }
  return out;
}

Var mean_rows(const Var& a) {
  check(a.rows() > 0, "mean_rows", "empty input");
  Var out = a.graph().emit(a.value().colwise().mean(), {a});
  if (out.requires_grad()) {
    Node *o = out.node(), *na = a.node();
    o->backward = [o, na] {
      const double inv = 1.0 / static_cast<double>(na->value.rows());
      na->grad_ref().rowwise() += o->grad.row(0) * inv;
    };
  }
  return out;
}

Var block_left_mul(const Mat& a, const Var& x) {
  const Index n = a.rows();
  check(a.cols() == n && n > 0 && x.rows() % n == 0, "block_left_mul",
        "operator " + shape_str(a) + " does not tile " + shape_str(x.value()));
  const Index blocks = x.rows() / n;
  Mat v(x.rows(), x.cols());
  for (Index b = 0; b < blocks; ++b) v.middleRows(b * n, n).noalias() = a * x.value().middleRows(b * n, n);
  Var out = x.graph().emit(std::move(v), {x});
  if (out.requires_grad()) {
    Node *o = out.node(), *nx = x.node();
    o->backward = [o, nx, a, n, blocks] {
      Mat& g = nx->grad_ref();
      for (Index b = 0; b < blocks; ++b) g.middleRows(b * n, n).noalias() += a.transpose() * o->grad.middleRows(b * n, n);
    };
  }
  return out;
}

namespace {

Mat gather(const Mat& m, const std::vector<Index>& rows, Index col0, Index ncols) {
  Mat out(static_cast<Index>(rows.size()), ncols);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]).segment(col0, ncols);
  return out;
}

void scatter_add(Mat& m, const std::vector<Index>& rows, Index col0, const Mat& src) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    m.row(rows[i]).segment(col0, src.cols()) += src.row(static_cast<Index>(i));
}

}  // namespace

Var grouped_attention(const Var& q, const Var& k, const Var& v, const std::vector<AttentionGroup>& groups,
                      int heads) {
  same_shape(q, k, "grouped_attention");
  same_shape(q, v, "grouped_attention");
  check(heads > 0 && q.cols() % heads == 0, "grouped_attention", "model dim not divisible by heads");
  const Index dh = q.cols() / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat out = Mat::Zero(q.rows(), q.cols());
  // probs[g * heads + h] is nq x nk
  std::vector<Mat> probs(groups.size() * static_cast<std::size_t>(heads));
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& grp = groups[gi];
    for (int h = 0; h < heads; ++h) {
      const Index c0 = h * dh;
      Mat qg = gather(q.value(), grp.queries, c0, dh);
      Mat kg = gather(k.value(), grp.keys, c0, dh);
      Mat vg = gather(v.value(), grp.keys, c0, dh);
      Mat p = (qg * kg.transpose()) * sc;
      softmax_inplace(p);
      Mat og = p * vg;
      for (std::size_t i = 0; i < grp.queries.size(); ++i)
        out.row(grp.queries[i]).segment(c0, dh) = og.row(static_cast<Index>(i));
      probs[gi * heads + h] = std::move(p);
    }
  }

  Var res = q.graph().emit(std::move(out), {q, k, v});
  if (res.requires_grad()) {
    Node *o = res.node(), *nq = q.node(), *nk = k.node(), *nv = v.node();
    o->backward = [o, nq, nk, nv, groups, heads, dh, sc, probs = std::move(probs)] {
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& grp = groups[gi];
        for (int h = 0; h < heads; ++h) {
          const Index c0 = h * dh;
          const Mat& p = probs[gi * heads + h];
          Mat dout = gather(o->grad, grp.queries, c0, dh);
          Mat vg = gather(nv->value, grp.keys, c0, dh);
          if (nv->requires_grad) scatter_add(nv->grad_ref(), grp.keys, c0, p.transpose() * dout);
          if (!nq->requires_grad && !nk->requires_grad) continue;
          Mat ds = softmax_backward(p, dout * vg.transpose()) * sc;
          if (nq->requires_grad) scatter_add(nq->grad_ref(), grp.queries, c0, ds * gather(nk->value, grp.keys, c0, dh));
          if (nk->requires_grad)
            scatter_add(nk->grad_ref(), grp.keys, c0, ds.transpose() * gather(nq->value, grp.queries, c0, dh));
        }
      }
    };
  }
  return res;
}

Var attention_pool(const Var& x, const Var& query, const std::vector<std::vector<Index>>& groups) {
  check(query.rows() == 1 && query.cols() == x.cols(), "attention_pool", "query must be 1xD");
  const Index d = x.cols();
  const double sc = 1.0 / std::sqrt(static_cast<double>(d));
  Mat out(static_cast<Index>(groups.size()), d);
  std::vector<Vec> weights(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& rows = groups[gi];
    check(!rows.empty(), "attention_pool", "empty group");
    Mat xs = gather(x.value(), rows, 0, d);
    Vec s = (xs * query.value().row(0).transpose()) * sc;
    s = (s.array() - s.maxCoeff()).exp();
    s /= s.sum();
    out.row(static_cast<Index>(gi)) = s.transpose() * xs;
    weights[gi] = std::move(s);
  }
  Var res = x.graph().emit(std::move(out), {x, query});
  if (res.requires_grad()) {
    Node *o = res.node(), *nx = x.node(), *nq = query.node();
    o->backward = [o, nx, nq, groups, sc, d, weights = std::move(weights)] {
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& rows = groups[gi];
        const Vec& a = weights[gi];
        Mat xs = gather(nx->value, rows, 0, d);
        Eigen::RowVectorXd g = o->grad.row(static_cast<Index>(gi));
        // out = a^T xs; d(out)/d(a_i) = xs_i
        Vec da = xs * g.transpose();
        Vec ds = a.array() * (da.array() - a.dot(da));
        if (nx->requires_grad) {
          Mat dx = a * g + (ds * sc) * nq->value.row(0);
          scatter_add(nx->grad_ref(), rows, 0, dx);
        }
        if (nq->requires_grad) nq->grad_ref().row(0) += (ds.transpose() * xs) * sc;
      }
    };
  }
  return res;
}

}  // namespace urbandit::ad
