#include "xconst/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>

#include "xconst/error.hpp"
#include "xconst/rng.hpp"

namespace xconst::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

MapMat as_mat(Tensor& t, int rows, int cols) { return MapMat(t.ptr(), rows, cols); }
CMapMat as_mat(const Tensor& t, int rows, int cols) { return CMapMat(t.ptr(), rows, cols); }

Graph& same_graph(Var a, Var b) {
  if (!a.valid() || a.graph() != b.graph()) throw ContractError("operands belong to different graphs");
  return *a.graph();
}

void require_rank(const Tensor& t, int r, const char* op) {
  if (t.rank() != r) {
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(r) + ", got " + shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

int norm_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

// (outer, len, inner) decomposition of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Graph

const Tensor& Var::value() const {
  if (!graph_) throw ContractError("use of an empty Var");
  return graph_->value(id_);
}

bool Var::requires_grad() const { return graph_ && graph_->requires_grad(id_); }

Var Graph::input(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite graph input");
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::leaf(Tensor value) {
  Var v = input(std::move(value));
  nodes_.back().requires_grad = grad_enabled_;
  return v;
}

Var Graph::param(const Tensor& value, bool trainable) {
  Node n;
  n.external = &value;
  n.requires_grad = grad_enabled_ && trainable;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Tensor& Graph::value(int id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.owned;
}

Tensor& Graph::grad_buffer(int id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty() && value(id).size() > 0) n.grad = Tensor(value(id).shape(), 0.0);
  if (n.grad.shape() != value(id).shape()) n.grad = Tensor(value(id).shape(), 0.0);
  return n.grad;
}

const Tensor& Graph::grad(Var v) { return grad_buffer(v.id()); }

Var Graph::make(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite output of ") + op);
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (in.graph() != this) throw ContractError(std::string(op) + ": operand from another graph");
      n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Graph::backward(Var root) {
  if (root.graph() != this) throw ContractError("backward: root from another graph");
  if (value(root.id()).size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + shape_str(value(root.id()).shape()));
  }
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id()).fill(1.0);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) throw ShapeError("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  Tensor out({m, n});
  as_mat(out, m, n).noalias() = as_mat(av, m, k) * as_mat(bv, k, n);
  const Var ins[] = {a, b};
  return g.make("matmul", std::move(out), ins, [a, b, m, k, n](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    if (a.requires_grad()) {
      as_mat(g.grad_buffer(a.id()), m, k).noalias() += as_mat(go, m, n) * as_mat(b.value(), k, n).transpose();
    }
    if (b.requires_grad()) {
      as_mat(g.grad_buffer(b.id()), k, n).noalias() += as_mat(a.value(), m, k).transpose() * as_mat(go, m, n);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank(av, 2, "matmul_nt");
  require_rank(bv, 2, "matmul_nt");
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  if (bv.dim(1) != k) throw ShapeError("matmul_nt: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()) + "^T");
  Tensor out({m, n});
  as_mat(out, m, n).noalias() = as_mat(av, m, k) * as_mat(bv, n, k).transpose();
  const Var ins[] = {a, b};
  return g.make("matmul_nt", std::move(out), ins, [a, b, m, k, n](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    if (a.requires_grad()) {
      as_mat(g.grad_buffer(a.id()), m, k).noalias() += as_mat(go, m, n) * as_mat(b.value(), n, k);
    }
    if (b.requires_grad()) {
      as_mat(g.grad_buffer(b.id()), n, k).noalias() += as_mat(go, m, n).transpose() * as_mat(a.value(), m, k);
    }
  });
}

Var transpose(Var a) {
  Graph& g = *a.graph();
  const Tensor& av = a.value();
  require_rank(av, 2, "transpose");
  const int m = av.dim(0), n = av.dim(1);
  Tensor out({n, m});
  as_mat(out, n, m) = as_mat(av, m, n).transpose();
  const Var ins[] = {a};
  return g.make("transpose", std::move(out), ins, [a, m, n](Graph& g, int self) {
    as_mat(g.grad_buffer(a.id()), m, n) += as_mat(g.grad_buffer(self), n, m).transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  const double* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bp[i];
  const Var ins[] = {a, b};
  return g.make("add", std::move(out), ins, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    for (Var x : {a, b}) {
      if (!x.requires_grad()) continue;
      Tensor& gx = g.grad_buffer(x.id());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    }
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const double* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bp[i];
  const Var ins[] = {a, b};
  return g.make("sub", std::move(out), ins, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    if (a.requires_grad()) {
      Tensor& ga = g.grad_buffer(a.id());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = g.grad_buffer(b.id());
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const double* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bp[i];
  const Var ins[] = {a, b};
  return g.make("mul", std::move(out), ins, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    if (a.requires_grad()) {
      Tensor& ga = g.grad_buffer(a.id());
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = g.grad_buffer(b.id());
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  Graph& g = *a.graph();
  Tensor out = a.value();
  for (double& v : out.storage()) v *= c;
  const Var ins[] = {a};
  return g.make("scale", std::move(out), ins, [a, c](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    Tensor& ga = g.grad_buffer(a.id());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * go[i];
  });
}

Var exp(Var a) {
  Graph& g = *a.graph();
  Tensor out = a.value();
  for (double& v : out.storage()) v = std::exp(v);
  const Var ins[] = {a};
  return g.make("exp", std::move(out), ins, [a](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    const Tensor& y = g.value(self);
    Tensor& ga = g.grad_buffer(a.id());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * y[i];
  });
}

Var sum(Var a) {
  Graph& g = *a.graph();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const Var ins[] = {a};
  return g.make("sum", Tensor::scalar(s), ins, [a](Graph& g, int self) {
    const double go = g.grad_buffer(self)[0];
    for (double& v : g.grad_buffer(a.id()).storage()) v += go;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var expand_rows(Var v, int rows) {
  Graph& g = *v.graph();
  const Tensor& vv = v.value();
  if (!(vv.rank() == 1 || (vv.rank() == 2 && vv.dim(0) == 1))) {
    throw ShapeError("expand_rows expects [d] or [1,d], got " + shape_str(vv.shape()));
  }
  const int d = vv.dim(-1);
  Tensor out({rows, d});
  for (int r = 0; r < rows; ++r) std::copy_n(vv.ptr(), d, out.ptr() + static_cast<std::size_t>(r) * d);
  const Var ins[] = {v};
  return g.make("expand_rows", std::move(out), ins, [v, rows, d](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    Tensor& gv = g.grad_buffer(v.id());
    for (int r = 0; r < rows; ++r) {
      const double* row = go.ptr() + static_cast<std::size_t>(r) * d;
      for (int j = 0; j < d; ++j) gv[j] += row[j];
    }
  });
}

Var gather_rows(Var table, std::span<const int> rows) {
  Graph& g = *table.graph();
  const Tensor& tv = table.value();
  require_rank(tv, 2, "gather_rows");
  const int vocab = tv.dim(0), d = tv.dim(1);
  const int n = static_cast<int>(rows.size());
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) {
    const int r = rows[i];
    if (r < 0 || r >= vocab) {
      throw ContractError("gather_rows: row " + std::to_string(r) + " outside table " + shape_str(tv.shape()));
    }
    std::copy_n(tv.ptr() + static_cast<std::size_t>(r) * d, d, out.ptr() + static_cast<std::size_t>(i) * d);
  }
  const Var ins[] = {table};
  std::vector<int> idx(rows.begin(), rows.end());
  return g.make("gather_rows", std::move(out), ins, [table, idx = std::move(idx), d](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    Tensor& gt = g.grad_buffer(table.id());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = gt.ptr() + static_cast<std::size_t>(idx[i]) * d;
      const double* src = go.ptr() + i * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var select_cols(Var x, std::span<const int> cols) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  require_rank(xv, 2, "select_cols");
  const int n = xv.dim(0), c = xv.dim(1);
  if (static_cast<int>(cols.size()) != n) {
    throw ShapeError("select_cols: " + std::to_string(cols.size()) + " indices for " + shape_str(xv.shape()));
  }
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    if (cols[i] < 0 || cols[i] >= c) throw ContractError("select_cols: column " + std::to_string(cols[i]) + " out of range");
    out[i] = xv.at(i, cols[i]);
  }
  const Var ins[] = {x};
  std::vector<int> idx(cols.begin(), cols.end());
  return g.make("select_cols", std::move(out), ins, [x, idx = std::move(idx)](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    Tensor& gx = g.grad_buffer(x.id());
    for (std::size_t i = 0; i < idx.size(); ++i) gx.at(static_cast<int>(i), idx[i]) += go[i];
  });
}

// ---------------------------------------------------------------------------
// Normalisation and activations

Var layer_norm(Var x, double eps) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  if (xv.rank() < 1) throw ShapeError("layer_norm of a scalar");
  const int d = xv.dim(-1);
  const std::size_t rows = xv.size() / d;
  Tensor out(xv.shape());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.ptr() + r * d;
    double* o = out.ptr() + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += in[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= d;
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (int j = 0; j < d; ++j) o[j] = (in[j] - mu) * rs;
  }
  const Var ins[] = {x};
  return g.make("layer_norm", std::move(out), ins, [x, d, rstd = std::move(rstd)](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(x.id());
    for (std::size_t r = 0; r < rstd.size(); ++r) {
      const double* dy = go.ptr() + r * d;
      const double* yr = y.ptr() + r * d;
      double mdy = 0.0, mdyy = 0.0;
      for (int j = 0; j < d; ++j) {
        mdy += dy[j];
        mdyy += dy[j] * yr[j];
      }
      mdy /= d;
      mdyy /= d;
      double* dx = gx.ptr() + r * d;
      for (int j = 0; j < d; ++j) dx[j] += rstd[r] * (dy[j] - mdy - yr[j] * mdyy);
    }
  });
}

Var gelu(Var x) {
  Graph& g = *x.graph();
  Tensor out = x.value();
  for (double& v : out.storage()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  const Var ins[] = {x};
  return g.make("gelu", std::move(out), ins, [x](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    const Tensor& xv = x.value();
    Tensor& gx = g.grad_buffer(x.id());
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      gx[i] += go[i] * (cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v));
    }
  });
}

Var softmax(Var x, int axis) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  const int ax = norm_axis(axis, xv.rank(), "softmax");
  const AxisSplit s = split_axis(xv.shape(), ax);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= z;
    }
  }
  const Var ins[] = {x};
  return g.make("softmax", std::move(out), ins, [x, s](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(x.id());
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) dot += go[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t i = base + j * s.inner;
          gx[i] += y[i] * (go[i] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var x, int axis) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  const int ax = norm_axis(axis, xv.rank(), "log_softmax");
  const AxisSplit s = split_axis(xv.shape(), ax);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) z += std::exp(xv[base + j * s.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] = xv[base + j * s.inner] - lz;
    }
  }
  const Var ins[] = {x};
  return g.make("log_softmax", std::move(out), ins, [x, s](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(x.id());
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double gs = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) gs += go[base + j * s.inner];
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t i = base + j * s.inner;
          gx[i] += go[i] - std::exp(y[i]) * gs;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Graph& g = *parts[0].graph();
  const Shape& first = parts[0].shape();
  const int ax = norm_axis(axis, static_cast<int>(first.size()), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: " + shape_str(first) + " vs " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != ax && s[i] != first[i]) {
        throw ShapeError("concat: " + shape_str(first) + " vs " + shape_str(s));
      }
    }
    out_shape[ax] += s[ax];
  }
  Tensor out(out_shape);
  const AxisSplit so = split_axis(out_shape, ax);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const AxisSplit sp = split_axis(p.shape(), ax);
    const std::size_t chunk = sp.len * sp.inner;
    for (std::size_t o = 0; o < so.outer; ++o) {
      std::copy_n(p.value().ptr() + o * chunk, chunk, out.ptr() + o * so.len * so.inner + off * so.inner);
    }
    offsets.push_back(off);
    off += sp.len;
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return g.make("concat", std::move(out), ins,
                [ins, offsets = std::move(offsets), so, ax](Graph& g, int self) {
                  const Tensor& go = g.grad_buffer(self);
                  for (std::size_t k = 0; k < ins.size(); ++k) {
                    if (!ins[k].requires_grad()) continue;
                    Tensor& gp = g.grad_buffer(ins[k].id());
                    const std::size_t chunk = gp.size() / so.outer;
                    for (std::size_t o = 0; o < so.outer; ++o) {
                      const double* src = go.ptr() + o * so.len * so.inner + offsets[k] * so.inner;
                      double* dst = gp.ptr() + o * chunk;
                      for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
                    }
                  }
                });
}

Var slice(Var x, int axis, int begin, int end) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  const int ax = norm_axis(axis, xv.rank(), "slice");
  if (begin < 0 || end > xv.dim(ax) || begin > end) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of axis " +
                     std::to_string(ax) + " in " + shape_str(xv.shape()));
  }
  Shape out_shape = xv.shape();
  out_shape[ax] = end - begin;
  const AxisSplit si = split_axis(xv.shape(), ax);
  Tensor out(out_shape);
  const std::size_t chunk = static_cast<std::size_t>(end - begin) * si.inner;
  for (std::size_t o = 0; o < si.outer; ++o) {
    std::copy_n(xv.ptr() + o * si.len * si.inner + begin * si.inner, chunk, out.ptr() + o * chunk);
  }
  const Var ins[] = {x};
  return g.make("slice", std::move(out), ins, [x, si, begin, chunk](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    Tensor& gx = g.grad_buffer(x.id());
    for (std::size_t o = 0; o < si.outer; ++o) {
      double* dst = gx.ptr() + o * si.len * si.inner + begin * si.inner;
      const double* src = go.ptr() + o * chunk;
      for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = *x.graph();
  if (shape_numel(shape) != x.value().size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.value().storage());
  const Var ins[] = {x};
  return g.make("reshape", std::move(out), ins, [x](Graph& g, int self) {
    const Tensor& go = g.grad_buffer(self);
    Tensor& gx = g.grad_buffer(x.id());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
}

// ---------------------------------------------------------------------------
// Attention

Var causal_attention(Var q, Var k, Var v, int batch, int seq, int heads,
                     std::span<const std::uint8_t> key_valid) {
  Graph& g = same_graph(q, k);
  same_graph(q, v);
  const Tensor& qv = q.value();
  require_rank(qv, 2, "causal_attention");
  require_same(qv, k.value(), "causal_attention q/k");
  require_same(qv, v.value(), "causal_attention q/v");
  const int rows = qv.dim(0), d = qv.dim(1);
  if (rows != batch * seq) {
    throw ShapeError("causal_attention: " + shape_str(qv.shape()) + " for batch " + std::to_string(batch) +
                     " x seq " + std::to_string(seq));
  }
  if (heads < 1 || d % heads != 0) throw ShapeError("causal_attention: " + std::to_string(heads) + " heads for d=" + std::to_string(d));
  if (static_cast<int>(key_valid.size()) != rows) throw ShapeError("causal_attention: key mask length");
  const int dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[(b*heads + h)] is a seq x seq row-stochastic matrix (zero above the diagonal).
  std::vector<double> probs(static_cast<std::size_t>(batch) * heads * seq * seq, 0.0);
  Tensor out({rows, d});
  CMapMat Q = as_mat(qv, rows, d);
  CMapMat K = as_mat(k.value(), rows, d);
  CMapMat V = as_mat(v.value(), rows, d);
  MapMat O = as_mat(out, rows, d);
  RowMat scores(seq, seq);
  for (int b = 0; b < batch; ++b) {
    const std::uint8_t* valid = key_valid.data() + static_cast<std::size_t>(b) * seq;
    for (int h = 0; h < heads; ++h) {
      scores.noalias() = Q.block(b * seq, h * dh, seq, dh) * K.block(b * seq, h * dh, seq, dh).transpose();
      Eigen::Map<RowMat> P(probs.data() + (static_cast<std::size_t>(b) * heads + h) * seq * seq, seq, seq);
      for (int i = 0; i < seq; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j <= i; ++j) {
          if (valid[j]) mx = std::max(mx, scores(i, j) * inv_sqrt);
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;  // no visible key: zero output
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
          if (!valid[j]) continue;
          const double e = std::exp(scores(i, j) * inv_sqrt - mx);
          P(i, j) = e;
          z += e;
        }
        for (int j = 0; j <= i; ++j) P(i, j) /= z;
      }
      O.block(b * seq, h * dh, seq, dh).noalias() = P * V.block(b * seq, h * dh, seq, dh);
    }
  }
  const Var ins[] = {q, k, v};
  return g.make("causal_attention", std::move(out), ins,
                [q, k, v, batch, seq, heads, rows, d, dh, inv_sqrt, probs = std::move(probs)](Graph& g, int self) {
                  CMapMat dO = as_mat(std::as_const(g.grad_buffer(self)), rows, d);
                  CMapMat Q = as_mat(q.value(), rows, d);
                  CMapMat K = as_mat(k.value(), rows, d);
                  CMapMat V = as_mat(v.value(), rows, d);
                  RowMat dQ = RowMat::Zero(rows, d), dK = RowMat::Zero(rows, d), dV = RowMat::Zero(rows, d);
                  RowMat dP(seq, seq), dS(seq, seq);
                  for (int b = 0; b < batch; ++b) {
                    for (int h = 0; h < heads; ++h) {
                      Eigen::Map<const RowMat> P(probs.data() + (static_cast<std::size_t>(b) * heads + h) * seq * seq,
                                                 seq, seq);
                      const auto dOb = dO.block(b * seq, h * dh, seq, dh);
                      dV.block(b * seq, h * dh, seq, dh).noalias() += P.transpose() * dOb;
                      dP.noalias() = dOb * V.block(b * seq, h * dh, seq, dh).transpose();
                      for (int i = 0; i < seq; ++i) {
                        double dot = 0.0;
                        for (int j = 0; j <= i; ++j) dot += P(i, j) * dP(i, j);
                        for (int j = 0; j < seq; ++j) dS(i, j) = j <= i ? P(i, j) * (dP(i, j) - dot) * inv_sqrt : 0.0;
                      }
                      dQ.block(b * seq, h * dh, seq, dh).noalias() += dS * K.block(b * seq, h * dh, seq, dh);
                      dK.block(b * seq, h * dh, seq, dh).noalias() += dS.transpose() * Q.block(b * seq, h * dh, seq, dh);
                    }
                  }
                  if (q.requires_grad()) as_mat(g.grad_buffer(q.id()), rows, d) += dQ;
                  if (k.requires_grad()) as_mat(g.grad_buffer(k.id()), rows, d) += dK;
                  if (v.requires_grad()) as_mat(g.grad_buffer(v.id()), rows, d) += dV;
                });
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(const std::function<double()>& loss_fn, std::span<const GradCheckTarget> targets,
                           double eps, int samples, std::uint64_t seed) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  std::size_t total = 0;
  for (const auto& t : targets) total += t.value->size();
  GradCheckResult result;
  if (total == 0) return result;
  Rng rng = make_rng(seed, 0x6772616463686bULL);
  for (int s = 0; s < samples; ++s) {
    std::size_t flat = uniform_index(rng(), total);
    std::size_t ti = 0;
    while (flat >= targets[ti].value->size()) flat -= targets[ti++].value->size();
    Tensor& param = *targets[ti].value;
    const double saved = param[flat];
    param[flat] = saved + eps;
    const double up = loss_fn();
    param[flat] = saved - eps;
    const double down = loss_fn();
    param[flat] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = targets[ti].analytic_grad->empty() ? 0.0 : (*targets[ti].analytic_grad)[flat];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace xconst::ad
