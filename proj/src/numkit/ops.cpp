#include "numkit/ops.hpp"

#include <algorithm>
#include <cmath>

namespace numkit {

namespace detail {

void mm(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  if (!acc) std::fill(c, c + static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double r = ai[kk];
      if (r == 0.0) continue;
      const double* bk = b + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) ci[j] += r * bk[j];
    }
  }
}

void mm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  // c[m x n] = a[m x k] * b[n x k]^T
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk) s += ai[kk] * bj[kk];
      ci[j] = acc ? ci[j] + s : s;
    }
  }
}

void mm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  // c[m x n] = a[k x m]^T * b[k x n]
  if (!acc) std::fill(c, c + static_cast<size_t>(m) * n, 0.0);
  for (int kk = 0; kk < k; ++kk) {
    const double* ak = a + static_cast<size_t>(kk) * m;
    const double* bk = b + static_cast<size_t>(kk) * n;
    for (int i = 0; i < m; ++i) {
      const double r = ak[i];
      if (r == 0.0) continue;
      double* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += r * bk[j];
    }
  }
}

}  // namespace detail

using Node = Tensor::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

NodePtr out_node(const Shape& shape, std::vector<NodePtr> parents,
                 std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  bool req = false;
  if (grad_enabled()) {
    for (auto& p : parents)
      if (p->requires_grad) req = true;
  }
  n->requires_grad = req;
  if (req) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

int last_dim(const Tensor& x) {
  if (x.ndim() == 0) throw ShapeError("op requires at least 1 dimension");
  return x.dim(x.ndim() - 1);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto na = a.node(), nb = b.node();
  auto o = out_node(a.shape(), {na, nb}, [na, nb](Node& n) {
    if (na->requires_grad) {
      na->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) na->grad[i] += n.grad[i];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) nb->grad[i] += n.grad[i];
    }
  });
  for (size_t i = 0; i < o->data.size(); ++i) o->data[i] = na->data[i] + nb->data[i];
  return Tensor(o);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto na = a.node(), nb = b.node();
  auto o = out_node(a.shape(), {na, nb}, [na, nb](Node& n) {
    if (na->requires_grad) {
      na->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) na->grad[i] += n.grad[i];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) nb->grad[i] -= n.grad[i];
    }
  });
  for (size_t i = 0; i < o->data.size(); ++i) o->data[i] = na->data[i] - nb->data[i];
  return Tensor(o);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto na = a.node(), nb = b.node();
  auto o = out_node(a.shape(), {na, nb}, [na, nb](Node& n) {
    if (na->requires_grad) {
      na->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) na->grad[i] += n.grad[i] * nb->data[i];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) nb->grad[i] += n.grad[i] * na->data[i];
    }
  });
  for (size_t i = 0; i < o->data.size(); ++i) o->data[i] = na->data[i] * nb->data[i];
  return Tensor(o);
}

Tensor scale(const Tensor& a, double c) {
  auto na = a.node();
  auto o = out_node(a.shape(), {na}, [na, c](Node& n) {
    na->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) na->grad[i] += n.grad[i] * c;
  });
  for (size_t i = 0; i < o->data.size(); ++i) o->data[i] = na->data[i] * c;
  return Tensor(o);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto na = a.node(), nb = b.node();
  auto o = out_node({m, n}, {na, nb}, [na, nb, m, k, n](Node& nd) {
    if (na->requires_grad) {
      na->ensure_grad();
      detail::mm_nt(nd.grad.data(), nb->data.data(), na->grad.data(), m, n, k, true);
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      detail::mm_tn(na->data.data(), nd.grad.data(), nb->grad.data(), k, m, n, true);
    }
  });
  detail::mm(na->data.data(), nb->data.data(), o->data.data(), m, k, n, false);
  return Tensor(o);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto na = a.node(), nb = b.node();
  auto o = out_node({m, n}, {na, nb}, [na, nb, m, k, n](Node& nd) {
    if (na->requires_grad) {
      na->ensure_grad();
      detail::mm(nd.grad.data(), nb->data.data(), na->grad.data(), m, n, k, true);
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      detail::mm_tn(nd.grad.data(), na->data.data(), nb->grad.data(), n, m, k, true);
    }
  });
  detail::mm_nt(na->data.data(), nb->data.data(), o->data.data(), m, k, n, false);
  return Tensor(o);
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw ShapeError("gather_rows: table must be 2-D");
  const int rows = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= rows)
      throw ShapeError("gather_rows: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(rows) + ")");
  const int n = static_cast<int>(ids.size());
  auto nt = table.node();
  auto o = out_node({n, d}, {nt}, [nt, ids, d](Node& nd) {
    nt->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i) {
      double* dst = nt->grad.data() + static_cast<size_t>(ids[i]) * d;
      const double* src = nd.grad.data() + i * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  for (int i = 0; i < n; ++i)
    std::copy_n(nt->data.data() + static_cast<size_t>(ids[i]) * d, d,
                o->data.data() + static_cast<size_t>(i) * d);
  return Tensor(o);
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  if (x.ndim() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") for " + shape_str(x.shape()));
  const int rows = x.dim(0), cols = x.dim(1), w = c1 - c0;
  auto nx = x.node();
  auto o = out_node({rows, w}, {nx}, [nx, rows, cols, c0, w](Node& nd) {
    nx->ensure_grad();
    for (int i = 0; i < rows; ++i) {
      double* dst = nx->grad.data() + static_cast<size_t>(i) * cols + c0;
      const double* src = nd.grad.data() + static_cast<size_t>(i) * w;
      for (int j = 0; j < w; ++j) dst[j] += src[j];
    }
  });
  for (int i = 0; i < rows; ++i)
    std::copy_n(nx->data.data() + static_cast<size_t>(i) * cols + c0, w,
                o->data.data() + static_cast<size_t>(i) * w);
  return Tensor(o);
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  if (x.ndim() != 2 || r0 < 0 || r1 > x.dim(0) || r0 >= r1)
    throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ") for " + shape_str(x.shape()));
  const int cols = x.dim(1), h = r1 - r0;
  auto nx = x.node();
  auto o = out_node({h, cols}, {nx}, [nx, cols, r0, h](Node& nd) {
    nx->ensure_grad();
    for (int i = 0; i < h; ++i) {
      double* dst = nx->grad.data() + static_cast<size_t>(r0 + i) * cols;
      const double* src = nd.grad.data() + static_cast<size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) dst[j] += src[j];
    }
  });
  std::copy_n(nx->data.data() + static_cast<size_t>(r0) * cols, static_cast<size_t>(h) * cols,
              o->data.data());
  return Tensor(o);
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(shape));
  auto nx = x.node();
  auto o = out_node(shape, {nx}, [nx](Node& nd) {
    nx->ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i) nx->grad[i] += nd.grad[i];
  });
  o->data = nx->data;
  return Tensor(o);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int rows = parts[0].dim(0);
  int cols = 0;
  std::vector<NodePtr> nodes;
  for (auto& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.dim(1);
    nodes.push_back(p.node());
  }
  auto o = out_node({rows, cols}, nodes, [nodes, rows, cols](Node& nd) {
    int off = 0;
    for (auto& p : nodes) {
      const int w = p->shape[1];
      if (p->requires_grad) {
        p->ensure_grad();
        for (int i = 0; i < rows; ++i) {
          const double* src = nd.grad.data() + static_cast<size_t>(i) * cols + off;
          double* dst = p->grad.data() + static_cast<size_t>(i) * w;
          for (int j = 0; j < w; ++j) dst[j] += src[j];
        }
      }
      off += w;
    }
  });
  int off = 0;
  for (auto& p : nodes) {
    const int w = p->shape[1];
    for (int i = 0; i < rows; ++i)
      std::copy_n(p->data.data() + static_cast<size_t>(i) * w, w,
                  o->data.data() + static_cast<size_t>(i) * cols + off);
    off += w;
  }
  return Tensor(o);
}

Tensor softmax(const Tensor& x) {
  const int v = last_dim(x);
  if (v < 1) throw ShapeError("softmax: empty last dimension");
  const int rows = static_cast<int>(x.size() / v);
  auto nx = x.node();
  auto o = out_node(x.shape(), {nx}, [nx, rows, v](Node& nd) {
    nx->ensure_grad();
    for (int i = 0; i < rows; ++i) {
      const double* y = nd.data.data() + static_cast<size_t>(i) * v;
      const double* g = nd.grad.data() + static_cast<size_t>(i) * v;
      double dot = 0.0;
      for (int j = 0; j < v; ++j) dot += g[j] * y[j];
      double* dx = nx->grad.data() + static_cast<size_t>(i) * v;
      for (int j = 0; j < v; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
  for (int i = 0; i < rows; ++i) {
    const double* z = nx->data.data() + static_cast<size_t>(i) * v;
    double* y = o->data.data() + static_cast<size_t>(i) * v;
    double mx = z[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (int j = 0; j < v; ++j) {
      y[j] = std::exp(z[j] - mx);
      s += y[j];
    }
    for (int j = 0; j < v; ++j) y[j] /= s;
  }
  return Tensor(o);
}

Tensor log_softmax(const Tensor& x) {
  const int v = last_dim(x);
  if (v < 1) throw ShapeError("log_softmax: empty last dimension");
  const int rows = static_cast<int>(x.size() / v);
  auto nx = x.node();
  auto o = out_node(x.shape(), {nx}, [nx, rows, v](Node& nd) {
    nx->ensure_grad();
    for (int i = 0; i < rows; ++i) {
      const double* y = nd.data.data() + static_cast<size_t>(i) * v;
      const double* g = nd.grad.data() + static_cast<size_t>(i) * v;
      double gsum = 0.0;
      for (int j = 0; j < v; ++j) gsum += g[j];
      double* dx = nx->grad.data() + static_cast<size_t>(i) * v;
      for (int j = 0; j < v; ++j) dx[j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
  for (int i = 0; i < rows; ++i) {
    const double* z = nx->data.data() + static_cast<size_t>(i) * v;
    double* y = o->data.data() + static_cast<size_t>(i) * v;
    double mx = z[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (int j = 0; j < v; ++j) s += std::exp(z[j] - mx);
    const double lse = mx + std::log(s);
    for (int j = 0; j < v; ++j) y[j] = z[j] - lse;
  }
  return Tensor(o);
}

Tensor causal_masked_softmax(const Tensor& scores) {
  if (scores.ndim() != 2 || scores.dim(0) != scores.dim(1))
    throw ShapeError("causal_masked_softmax: square matrix required, got " +
                     shape_str(scores.shape()));
  const int n = scores.dim(0);
  auto nx = scores.node();
  auto o = out_node(scores.shape(), {nx}, [nx, n](Node& nd) {
    nx->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double* y = nd.data.data() + static_cast<size_t>(i) * n;
      const double* g = nd.grad.data() + static_cast<size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j <= i; ++j) dot += g[j] * y[j];
      double* dx = nx->grad.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j <= i; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
  for (int i = 0; i < n; ++i) {
    const double* z = nx->data.data() + static_cast<size_t>(i) * n;
    double* y = o->data.data() + static_cast<size_t>(i) * n;
    double mx = z[0];
    for (int j = 1; j <= i; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (int j = 0; j <= i; ++j) {
      y[j] = std::exp(z[j] - mx);
      s += y[j];
    }
    for (int j = 0; j <= i; ++j) y[j] /= s;
    // entries above the diagonal stay 0
  }
  return Tensor(o);
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  auto nx = x.node();
  auto o = out_node(x.shape(), {nx}, [nx](Node& nd) {
    nx->ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i) {
      const double v = nx->data[i];
      const double u = kC * (v + kA * v * v * v);
      const double t = std::tanh(u);
      const double du = kC * (1.0 + 3.0 * kA * v * v);
      const double dy = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      nx->grad[i] += nd.grad[i] * dy;
    }
  });
  for (size_t i = 0; i < o->data.size(); ++i) {
    const double v = nx->data[i];
    o->data[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  return Tensor(o);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.ndim() != 2) throw ShapeError("layer_norm: 2-D input required");
  const int rows = x.dim(0), d = x.dim(1);
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias must have length " + std::to_string(d));
  auto nx = x.node(), ng = gain.node(), nb = bias.node();

  // forward caches for backward
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * d);
  auto inv = std::make_shared<std::vector<double>>(rows);

  auto o = out_node({rows, d}, {nx, ng, nb}, [nx, ng, nb, xhat, inv, rows, d](Node& nd) {
    for (int i = 0; i < rows; ++i) {
      const double* g = nd.grad.data() + static_cast<size_t>(i) * d;
      const double* xh = xhat->data() + static_cast<size_t>(i) * d;
      if (ng->requires_grad) {
        ng->ensure_grad();
        for (int j = 0; j < d; ++j) ng->grad[j] += g[j] * xh[j];
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        for (int j = 0; j < d; ++j) nb->grad[j] += g[j];
      }
      if (nx->requires_grad) {
        nx->ensure_grad();
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const double gg = g[j] * ng->data[j];
          m1 += gg;
          m2 += gg * xh[j];
        }
        m1 /= d;
        m2 /= d;
        double* dx = nx->grad.data() + static_cast<size_t>(i) * d;
        const double iv = (*inv)[i];
        for (int j = 0; j < d; ++j) {
          const double gg = g[j] * ng->data[j];
          dx[j] += iv * (gg - m1 - xh[j] * m2);
        }
      }
    }
  });

  for (int i = 0; i < rows; ++i) {
    const double* xi = nx->data.data() + static_cast<size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xi[j] - mu;
      var += c * c;
    }
    var /= d;
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[i] = iv;
    double* xh = xhat->data() + static_cast<size_t>(i) * d;
    double* y = o->data.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      xh[j] = (xi[j] - mu) * iv;
      y[j] = ng->data[j] * xh[j] + nb->data[j];
    }
  }
  return Tensor(o);
}

Tensor sum(const Tensor& x) {
  auto nx = x.node();
  auto o = out_node({1}, {nx}, [nx](Node& nd) {
    nx->ensure_grad();
    const double g = nd.grad[0];
    for (auto& v : nx->grad) v += g;
  });
  double s = 0.0;
  for (double v : nx->data) s += v;
  o->data[0] = s;
  return Tensor(o);
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy_mean: 2-D logits required");
  const int rows = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != rows)
    throw ShapeError("cross_entropy_mean: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " rows");
  for (int t : targets)
    if (t < 0 || t >= v) throw ShapeError("cross_entropy_mean: target out of range");

  auto nx = logits.node();
  auto o = out_node({1}, {nx}, [nx, targets, rows, v](Node& nd) {
    nx->ensure_grad();
    const double g = nd.grad[0] / rows;
    for (int i = 0; i < rows; ++i) {
      const double* z = nx->data.data() + static_cast<size_t>(i) * v;
      double mx = z[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, z[j]);
      double s = 0.0;
      for (int j = 0; j < v; ++j) s += std::exp(z[j] - mx);
      double* dx = nx->grad.data() + static_cast<size_t>(i) * v;
      for (int j = 0; j < v; ++j) {
        double p = std::exp(z[j] - mx) / s;
        dx[j] += g * (p - (j == targets[i] ? 1.0 : 0.0));
      }
    }
  });

  double total = 0.0;
  for (int i = 0; i < rows; ++i) {
    const double* z = nx->data.data() + static_cast<size_t>(i) * v;
    double mx = z[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (int j = 0; j < v; ++j) s += std::exp(z[j] - mx);
    total += mx + std::log(s) - z[targets[i]];
  }
  o->data[0] = total / rows;
  return Tensor(o);
}

}  // namespace numkit
