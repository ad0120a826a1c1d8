#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Graph records every operation in creation order; backward()
// replays them in reverse and accumulates gradients into the Parameters that
// were bound with Graph::param().

#include "urbandit/types.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace urbandit::ad {

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::function<void()> backward;

  Mat& grad_ref() {
    if (grad.size() == 0) grad.setZero(value.rows(), value.cols());
    return grad;
  }
};

class Graph;

class Var {
 public:
  Var() = default;

  const Mat& value() const { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  Node* node() const { return node_; }
  Graph& graph() const { return *graph_; }
  bool valid() const { return node_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, Node* n) : graph_(g), node_(n) {}
  Graph* graph_ = nullptr;
  Node* node_ = nullptr;
};

class Graph {
 public:
  /// With record_grad = false no backward closures are built (inference).
  explicit Graph(bool record_grad = true) : record_grad_(record_grad) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Mat value);
  Var param(Parameter& p);

  /// New node whose value was computed by an op. requires_grad is set when
  /// recording and any input requires it.
  Var emit(Mat value, std::initializer_list<Var> inputs);
  Var emit(Mat value, const std::vector<Var>& inputs);

  bool recording() const { return record_grad_; }

  /// Seeds d(loss)/d(out) = seed and propagates to every bound Parameter.
  void backward(const Var& out, const Mat& seed);

  std::size_t size() const { return nodes_.size(); }

 private:
  bool record_grad_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::pair<Node*, Parameter*>> params_;
};

struct AttentionGroup {
  std::vector<Index> queries;
  std::vector<Index> keys;
};

// Elementwise / linear algebra.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast 1xC over rows
Var mul_row(const Var& a, const Var& row);
Var linear(const Var& x, const Var& weight, const Var& bias);  // x W + b
/// x .* (1 + scale) + shift with 1xC scale/shift rows.
Var modulate(const Var& x, const Var& shift, const Var& scale);

// Nonlinearities and normalization.
Var silu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var layer_norm(const Var& a, double eps = 1e-6);  // per row, no affine
Var softmax_rows(const Var& a);

// Shape manipulation.
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var gather_rows(const Var& table, const std::vector<Index>& rows);
Var mean_rows(const Var& a);  // 1xC

/// Applies a constant N x N matrix to each consecutive block of N rows.
Var block_left_mul(const Mat& a, const Var& x);

/// Multi-head softmax attention restricted to groups: each group's query rows
/// attend only to that group's key rows. Rows absent from every query list
/// receive zero output. q, k, v are L x D; head dim = D / heads.
Var grouped_attention(const Var& q, const Var& k, const Var& v,
                      const std::vector<AttentionGroup>& groups, int heads);

/// Single-query attention pooling: for each group of rows r, scores are
/// x_r . query / sqrt(D) and the output row is the softmax-weighted sum of
/// x_r. Returns G x D.
Var attention_pool(const Var& x, const Var& query, const std::vector<std::vector<Index>>& groups);

}  // namespace urbandit::ad
