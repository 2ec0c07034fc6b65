#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
// Each op records its parents and a closure that pushes the output gradient
// back into them. Graphs are built per forward pass and released with the Vars.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mgdoc/docmodel.hpp"

namespace mgdoc::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using IndexMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Mat value;
  Mat grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Mat& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    grad += g;
  }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Mat& value() const { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  const NodePtr& node() const { return node_; }
  double scalar() const { return node_->value(0, 0); }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

// Gradient recording is on by default; the guard disables it for its scope.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Mat value);
Var leaf(Mat value, bool requires_grad = true);

// Seeds d(root)/d(root) = 1 and propagates through the recorded graph.
void backward(const Var& root);

Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_rowvec(const Var& a, const Var& row);
Var add_constant(const Var& a, const Mat& c);
Var gelu(const Var& a);
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index width);
Var concat_cols(std::span<const Var> parts);
Var select_rows(const Var& a, std::span<const int> rows);
Var zero_rows(const Var& a, std::span<const int> rows);
Var transpose(const Var& a);
Var sum_all(const Var& a);

// out(i, j) = table(index(i, j), column)
Var table_lookup(const Var& table, const IndexMat& index, Eigen::Index column);

// Row r of the output is the mean of table rows listed in segments[r].
Var segment_mean(const Var& table, const std::vector<std::vector<int>>& segments);

// Mean over all entries of |pred - target|; target is a constant.
Var mean_abs_error(const Var& pred, const Mat& target);

// Mean over rows of -log softmax(logits)[row, targets[row]].
Var cross_entropy_rows(const Var& logits, std::span<const int> targets);

// Image ops on (H*W) x C feature maps, rows in row-major pixel order.
// 3x3 neighborhoods with edge-replicated borders, 9 * C columns.
Var im2col3x3(const Var& x, int height, int width);
Var avg_pool2(const Var& x, int height, int width);

// Adaptive average pooling of each box onto a grid_h x grid_w grid; output row
// k is the flattened (bin_y, bin_x, channel) pooled feature of boxes[k].
Var roi_pool(const Var& fmap, int height, int width, std::span<const BoundingBox> boxes,
             int grid_h, int grid_w);

struct CellRange {
  int begin = 0;
  int end = 0;  // exclusive
};

// Feature-map cells covered by [lo, hi] on an axis with `cells` cells; at least one cell.
CellRange roi_cells(double lo, double hi, int cells);

}  // namespace mgdoc::ag
