#include "mgdoc/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace mgdoc::ag {
namespace {

thread_local bool g_grad_enabled = true;

Var make_result(Mat value, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()));
}

}  // namespace

void Node::accumulate(const Mat& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Mat value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Mat value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Mat::Ones(root.rows(), root.cols()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw Error("matmul: inner dimension mismatch");
  return make_result(a.value() * b.value(), {a.node(), b.node()}, [](Node& n) {
    auto& a = *n.parents[0];
    auto& b = *n.parents[1];
    if (a.requires_grad) a.accumulate_expr(n.grad * b.value.transpose());
    if (b.requires_grad) b.accumulate_expr(a.value.transpose() * n.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw Error("matmul_nt: inner dimension mismatch");
  return make_result(a.value() * b.value().transpose(), {a.node(), b.node()}, [](Node& n) {
    auto& a = *n.parents[0];
    auto& b = *n.parents[1];
    if (a.requires_grad) a.accumulate_expr(n.grad * b.value);
    if (b.requires_grad) b.accumulate_expr(n.grad.transpose() * a.value);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a.node(), b.node()}, [](Node& n) {
    n.parents[0]->accumulate(n.grad);
    n.parents[1]->accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a.node(), b.node()}, [](Node& n) {
    n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate_expr(-n.grad);
  });
}

Var hadamard(const Var& a, const Var& b) {
  check_same_shape(a, b, "hadamard");
  return make_result(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, [](Node& n) {
    auto& a = *n.parents[0];
    auto& b = *n.parents[1];
    if (a.requires_grad) a.accumulate_expr(n.grad.cwiseProduct(b.value));
    if (b.requires_grad) b.accumulate_expr(n.grad.cwiseProduct(a.value));
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a.node()}, [s](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate_expr(n.grad * s);
  });
}

Var add_rowvec(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error("add_rowvec: shape mismatch");
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return make_result(std::move(out), {a.node(), row.node()}, [](Node& n) {
    n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate_expr(n.grad.colwise().sum());
  });
}

Var add_constant(const Var& a, const Mat& c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) throw Error("add_constant: shape mismatch");
  return make_result(a.value() + c, {a.node()},
                     [](Node& n) { n.parents[0]->accumulate(n.grad); });
}

Var gelu(const Var& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  Mat out = a.value().unaryExpr(
      [&](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  return make_result(std::move(out), {a.node()}, [kInvSqrt2Pi](Node& n) {
    auto& a = *n.parents[0];
    Mat d = a.value.unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    });
    a.accumulate_expr(n.grad.cwiseProduct(d));
  });
}

Var softmax_rows(const Var& a) {
  Mat out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double mx = a.value().row(i).maxCoeff();
    if (!std::isfinite(mx)) throw Error("softmax_rows: row without finite logits");
    out.row(i) = (a.value().row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return make_result(std::move(out), {a.node()}, [](Node& n) {
    const Mat& p = n.value;
    Eigen::VectorXd dots = n.grad.cwiseProduct(p).rowwise().sum();
    Mat d = p.cwiseProduct(n.grad - dots.replicate(1, p.cols()));
    n.parents[0]->accumulate(d);
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const auto cols = x.cols();
  if (gamma.cols() != cols || beta.cols() != cols) throw Error("layer_norm: width mismatch");
  Mat xhat(x.rows(), cols);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Mat out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_result(
      std::move(out), {x.node(), gamma.node(), beta.node()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
        auto& x = *n.parents[0];
        auto& gamma = *n.parents[1];
        auto& beta = *n.parents[2];
        if (gamma.requires_grad) gamma.accumulate_expr(n.grad.cwiseProduct(xhat).colwise().sum());
        if (beta.requires_grad) beta.accumulate_expr(n.grad.colwise().sum());
        if (x.requires_grad) {
          Mat dy = n.grad;
          dy.array().rowwise() *= gamma.value.row(0).array();
          Mat dx(dy.rows(), dy.cols());
          for (Eigen::Index i = 0; i < dy.rows(); ++i) {
            const double mean_dy = dy.row(i).mean();
            const double mean_dy_xhat = dy.row(i).cwiseProduct(xhat.row(i)).mean();
            dx.row(i) = inv_std(i) *
                        (dy.row(i).array() - mean_dy - xhat.row(i).array() * mean_dy_xhat);
          }
          x.accumulate(dx);
        }
      });
}

Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index width) {
  if (c0 < 0 || c0 + width > a.cols()) throw Error("slice_cols: out of range");
  return make_result(a.value().middleCols(c0, width), {a.node()}, [c0, width](Node& n) {
    auto& a = *n.parents[0];
    if (a.grad.size() == 0) a.grad = Mat::Zero(a.value.rows(), a.value.cols());
    a.grad.middleCols(c0, width) += n.grad;
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: nothing to concatenate");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw Error("concat_cols: row mismatch");
    total += p.cols();
  }
  Mat out(parts.front().rows(), total);
  std::vector<NodePtr> parents;
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    parents.push_back(p.node());
    offsets.push_back(c);
    c += p.cols();
  }
  return make_result(std::move(out), std::move(parents), [offsets](Node& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      auto& p = *n.parents[k];
      if (p.requires_grad) p.accumulate_expr(n.grad.middleCols(offsets[k], p.value.cols()));
    }
  });
}

Var select_rows(const Var& a, std::span<const int> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= a.rows()) throw Error("select_rows: index out of range");
    out.row(static_cast<Eigen::Index>(k)) = a.value().row(rows[k]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return make_result(std::move(out), {a.node()}, [idx = std::move(idx)](Node& n) {
    auto& a = *n.parents[0];
    if (a.grad.size() == 0) a.grad = Mat::Zero(a.value.rows(), a.value.cols());
    for (std::size_t k = 0; k < idx.size(); ++k)
      a.grad.row(idx[k]) += n.grad.row(static_cast<Eigen::Index>(k));
  });
}

Var zero_rows(const Var& a, std::span<const int> rows) {
  Mat out = a.value();
  std::vector<int> idx(rows.begin(), rows.end());
  for (int r : idx) {
    if (r < 0 || r >= a.rows()) throw Error("zero_rows: index out of range");
    out.row(r).setZero();
  }
  return make_result(std::move(out), {a.node()}, [idx = std::move(idx)](Node& n) {
    Mat g = n.grad;
    for (int r : idx) g.row(r).setZero();
    n.parents[0]->accumulate(g);
  });
}

Var transpose(const Var& a) {
  return make_result(a.value().transpose(), {a.node()}, [](Node& n) {
    n.parents[0]->accumulate_expr(n.grad.transpose());
  });
}

Var sum_all(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a.node()}, [](Node& n) {
    auto& a = *n.parents[0];
    a.accumulate_expr(Mat::Constant(a.value.rows(), a.value.cols(), n.grad(0, 0)));
  });
}

Var table_lookup(const Var& table, const IndexMat& index, Eigen::Index column) {
  if (column < 0 || column >= table.cols()) throw Error("table_lookup: column out of range");
  Mat out(index.rows(), index.cols());
  for (Eigen::Index i = 0; i < index.rows(); ++i) {
    for (Eigen::Index j = 0; j < index.cols(); ++j) {
      const int r = index(i, j);
      if (r < 0 || r >= table.rows()) throw Error("table_lookup: index out of range");
      out(i, j) = table.value()(r, column);
    }
  }
  return make_result(std::move(out), {table.node()}, [index, column](Node& n) {
    auto& t = *n.parents[0];
    if (t.grad.size() == 0) t.grad = Mat::Zero(t.value.rows(), t.value.cols());
    for (Eigen::Index i = 0; i < index.rows(); ++i)
      for (Eigen::Index j = 0; j < index.cols(); ++j) t.grad(index(i, j), column) += n.grad(i, j);
  });
}

Var segment_mean(const Var& table, const std::vector<std::vector<int>>& segments) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(segments.size()), table.cols());
  for (std::size_t r = 0; r < segments.size(); ++r) {
    const auto& seg = segments[r];
    if (seg.empty()) throw Error("segment_mean: empty segment");
    for (int t : seg) {
      if (t < 0 || t >= table.rows()) throw Error("segment_mean: index out of range");
      out.row(static_cast<Eigen::Index>(r)) += table.value().row(t);
    }
    out.row(static_cast<Eigen::Index>(r)) /= static_cast<double>(seg.size());
  }
  return make_result(std::move(out), {table.node()}, [segments](Node& n) {
    auto& t = *n.parents[0];
    if (t.grad.size() == 0) t.grad = Mat::Zero(t.value.rows(), t.value.cols());
    for (std::size_t r = 0; r < segments.size(); ++r) {
      const double w = 1.0 / static_cast<double>(segments[r].size());
      for (int tok : segments[r]) t.grad.row(tok) += w * n.grad.row(static_cast<Eigen::Index>(r));
    }
  });
}

Var mean_abs_error(const Var& pred, const Mat& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw Error("mean_abs_error: shape mismatch");
  if (pred.value().size() == 0) throw Error("mean_abs_error: empty input");
  Mat diff = pred.value() - target;
  Mat out(1, 1);
  const double count = static_cast<double>(diff.size());
  out(0, 0) = diff.cwiseAbs().sum() / count;
  return make_result(std::move(out), {pred.node()}, [diff = std::move(diff), count](Node& n) {
    const double g = n.grad(0, 0) / count;
    Mat d = diff.unaryExpr([g](double x) { return x > 0 ? g : (x < 0 ? -g : 0.0); });
    n.parents[0]->accumulate(d);
  });
}

Var cross_entropy_rows(const Var& logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
    throw Error("cross_entropy_rows: target count mismatch");
  if (targets.empty()) throw Error("cross_entropy_rows: empty input");
  Mat probs(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= logits.cols()) throw Error("cross_entropy_rows: target out of range");
    const double mx = logits.value().row(i).maxCoeff();
    probs.row(i) = (logits.value().row(i).array() - mx).exp();
    const double z = probs.row(i).sum();
    probs.row(i) /= z;
    total += -(logits.value()(i, t) - mx - std::log(z));
  }
  const double count = static_cast<double>(logits.rows());
  Mat out(1, 1);
  out(0, 0) = total / count;
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result(std::move(out), {logits.node()},
                     [probs = std::move(probs), tgt = std::move(tgt), count](Node& n) {
                       Mat d = probs;
                       for (std::size_t i = 0; i < tgt.size(); ++i)
                         d(static_cast<Eigen::Index>(i), tgt[i]) -= 1.0;
                       d *= n.grad(0, 0) / count;
                       n.parents[0]->accumulate(d);
                     });
}

Var im2col3x3(const Var& x, int height, int width) {
  if (x.rows() != static_cast<Eigen::Index>(height) * width) throw Error("im2col3x3: bad shape");
  const auto channels = x.cols();
  Mat out = Mat::Zero(x.rows(), 9 * channels);
  for (int y = 0; y < height; ++y) {
    for (int xx = 0; xx < width; ++xx) {
      const Eigen::Index row = static_cast<Eigen::Index>(y) * width + xx;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = std::clamp(y + ky - 1, 0, height - 1);
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = std::clamp(xx + kx - 1, 0, width - 1);
          out.block(row, (ky * 3 + kx) * channels, 1, channels) =
              x.value().row(static_cast<Eigen::Index>(sy) * width + sx);
        }
      }
    }
  }
  return make_result(std::move(out), {x.node()}, [height, width, channels](Node& n) {
    auto& x = *n.parents[0];
    if (x.grad.size() == 0) x.grad = Mat::Zero(x.value.rows(), x.value.cols());
    for (int y = 0; y < height; ++y) {
      for (int xx = 0; xx < width; ++xx) {
        const Eigen::Index row = static_cast<Eigen::Index>(y) * width + xx;
        for (int ky = 0; ky < 3; ++ky) {
          const int sy = std::clamp(y + ky - 1, 0, height - 1);
          for (int kx = 0; kx < 3; ++kx) {
            const int sx = std::clamp(xx + kx - 1, 0, width - 1);
            x.grad.row(static_cast<Eigen::Index>(sy) * width + sx) +=
                n.grad.block(row, (ky * 3 + kx) * channels, 1, channels);
          }
        }
      }
    }
  });
}

Var avg_pool2(const Var& x, int height, int width) {
  if (x.rows() != static_cast<Eigen::Index>(height) * width || height % 2 || width % 2)
    throw Error("avg_pool2: bad shape");
  const int oh = height / 2;
  const int ow = width / 2;
  Mat out = Mat::Zero(static_cast<Eigen::Index>(oh) * ow, x.cols());
  for (int y = 0; y < height; ++y)
    for (int xx = 0; xx < width; ++xx)
      out.row(static_cast<Eigen::Index>(y / 2) * ow + xx / 2) +=
          0.25 * x.value().row(static_cast<Eigen::Index>(y) * width + xx);
  return make_result(std::move(out), {x.node()}, [height, width, ow](Node& n) {
    auto& x = *n.parents[0];
    if (x.grad.size() == 0) x.grad = Mat::Zero(x.value.rows(), x.value.cols());
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx)
        x.grad.row(static_cast<Eigen::Index>(y) * width + xx) +=
            0.25 * n.grad.row(static_cast<Eigen::Index>(y / 2) * ow + xx / 2);
  });
}

CellRange roi_cells(double lo, double hi, int cells) {
  int b = static_cast<int>(std::floor(lo * cells + 1e-9));
  int e = static_cast<int>(std::ceil(hi * cells - 1e-9));
  b = std::clamp(b, 0, cells);
  e = std::clamp(e, 0, cells);
  if (e <= b) {
    const int c = std::clamp(static_cast<int>(std::floor(0.5 * (lo + hi) * cells)), 0, cells - 1);
    return {c, c + 1};
  }
  return {b, e};
}

namespace {

struct PoolBin {
  std::vector<Eigen::Index> cells;
};

// Adaptive bins over a cell range, same split rule as adaptive average pooling.
CellRange adaptive_bin(const CellRange& r, int bin, int bins) {
  const int len = r.end - r.begin;
  const int b = r.begin + (bin * len) / bins;
  const int e = r.begin + ((bin + 1) * len + bins - 1) / bins;
  return {b, std::max(e, b + 1)};
}

}  // namespace

Var roi_pool(const Var& fmap, int height, int width, std::span<const BoundingBox> boxes,
             int grid_h, int grid_w) {
  if (fmap.rows() != static_cast<Eigen::Index>(height) * width) throw Error("roi_pool: bad shape");
  const auto channels = fmap.cols();
  const auto n_boxes = static_cast<Eigen::Index>(boxes.size());
  std::vector<PoolBin> bins(static_cast<std::size_t>(n_boxes) * grid_h * grid_w);
  for (Eigen::Index k = 0; k < n_boxes; ++k) {
    const auto& box = boxes[static_cast<std::size_t>(k)];
    const CellRange rx = roi_cells(box.x0, box.x1, width);
    const CellRange ry = roi_cells(box.y0, box.y1, height);
    for (int by = 0; by < grid_h; ++by) {
      const CellRange sy = adaptive_bin(ry, by, grid_h);
      for (int bx = 0; bx < grid_w; ++bx) {
        const CellRange sx = adaptive_bin(rx, bx, grid_w);
        auto& bin = bins[(static_cast<std::size_t>(k) * grid_h + by) * grid_w + bx];
        for (int y = sy.begin; y < sy.end; ++y)
          for (int x = sx.begin; x < sx.end; ++x)
            bin.cells.push_back(static_cast<Eigen::Index>(y) * width + x);
      }
    }
  }
  const int per_box = grid_h * grid_w;
  Mat out = Mat::Zero(n_boxes, per_box * channels);
  for (Eigen::Index k = 0; k < n_boxes; ++k) {
    for (int b = 0; b < per_box; ++b) {
      const auto& bin = bins[static_cast<std::size_t>(k) * per_box + b];
      auto dst = out.block(k, b * channels, 1, channels);
      for (auto c : bin.cells) dst += fmap.value().row(c);
      dst /= static_cast<double>(bin.cells.size());
    }
  }
  return make_result(std::move(out), {fmap.node()},
                     [bins = std::move(bins), per_box, channels](Node& n) {
                       auto& f = *n.parents[0];
                       if (f.grad.size() == 0) f.grad = Mat::Zero(f.value.rows(), f.value.cols());
                       for (Eigen::Index k = 0; k < n.grad.rows(); ++k) {
                         for (int b = 0; b < per_box; ++b) {
                           const auto& bin = bins[static_cast<std::size_t>(k) * per_box + b];
                           const double w = 1.0 / static_cast<double>(bin.cells.size());
                           auto g = n.grad.block(k, b * channels, 1, channels);
                           for (auto c : bin.cells) f.grad.row(c) += w * g;
                         }
                       }
                     });
}

}  // namespace mgdoc::ag
