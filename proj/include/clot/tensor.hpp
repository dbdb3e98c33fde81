// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.
//
// Minimal reverse-mode autodiff over dense double tensors. Nodes form a DAG
// through shared_ptr parents; backward() walks the graph in reverse
// topological order. Heavy ops (matmul, conv) go through Eigen.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "clot/common.hpp"

namespace clot::ag {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using CEMap = Eigen::Map<const EMat>;

struct Node {
  std::vector<int> shape;
  std::vector<double> val;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backfn;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
  }
};

using NodeP = std::shared_ptr<Node>;

inline std::int64_t numel_of(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// Value-semantic handle to a graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodeP n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val.assign(static_cast<size_t>(numel_of(n->shape)), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.val().begin(), t.val().end(), v);
    return t;
  }
  static Tensor from_vec(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    if (static_cast<std::int64_t>(data.size()) != numel_of(n->shape))
      throw std::invalid_argument("from_vec: size mismatch");
    n->val = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev,
                      bool requires_grad = true) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::normal_distribution<double> d(0.0, stddev);
    for (double& x : t.val()) x = d(rng);
    return t;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const std::vector<int>& shape() const { return n_->shape; }
  std::int64_t numel() const { return n_->numel(); }
  std::vector<double>& val() { return n_->val; }
  const std::vector<double>& val() const { return n_->val; }
  std::vector<double>& grad() { n_->ensure_grad(); return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  NodeP node() const { return n_; }

  double item() const {
    if (n_->numel() != 1) throw std::invalid_argument("item(): tensor not scalar");
    return n_->val[0];
  }

  // Leaf copy cut off from the graph.
  Tensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = n_->shape;
    n->val = n_->val;
    n->requires_grad = false;
    return Tensor(n);
  }

 private:
  NodeP n_;
};

namespace detail {

inline Tensor make_op(std::vector<int> shape, std::vector<NodeP> parents,
                      std::function<void(Node&)> backfn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val.assign(static_cast<size_t>(numel_of(n->shape)), 0.0);
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backfn = std::move(backfn);
  return Tensor(n);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = detail::make_op(a.shape(), {a.node(), b.node()}, [](Node& n) {
    for (auto& p : n.parents) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  });
  for (size_t i = 0; i < out.val().size(); ++i) out.val()[i] = a.val()[i] + b.val()[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = detail::make_op(a.shape(), {a.node(), b.node()}, [](Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    }
  });
  for (size_t i = 0; i < out.val().size(); ++i) out.val()[i] = a.val()[i] - b.val()[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = detail::make_op(a.shape(), {a.node(), b.node()}, [](Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->val[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->val[i];
    }
  });
  for (size_t i = 0; i < out.val().size(); ++i) out.val()[i] = a.val()[i] * b.val()[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = detail::make_op(a.shape(), {a.node()}, [s](Node& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += s * n.grad[i];
  });
  for (size_t i = 0; i < out.val().size(); ++i) out.val()[i] = s * a.val()[i];
  return out;
}

inline Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = detail::make_op(a.shape(), {a.node()}, [](Node& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
  });
  for (size_t i = 0; i < out.val().size(); ++i) out.val()[i] = a.val()[i] + s;
  return out;
}

template <typename F, typename DF>
inline Tensor unary(const Tensor& a, F f, DF df) {
  auto an = a.node();
  Tensor out = detail::make_op(a.shape(), {an}, [df](Node& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      p->grad[i] += n.grad[i] * df(p->val[i], n.val[i]);
  });
  for (size_t i = 0; i < out.val().size(); ++i) out.val()[i] = f(a.val()[i]);
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}
inline Tensor tanh_(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}
inline Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Tensor exp_(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}
inline Tensor log_(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}
inline Tensor sqrt_(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}
inline Tensor abs_(const Tensor& a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}
inline Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

// ---- reductions ------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  Tensor out = detail::make_op({1}, {a.node()}, [](Node& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (double& g : p->grad) g += n.grad[0];
  });
  out.val()[0] = std::accumulate(a.val().begin(), a.val().end(), 0.0);
  return out;
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  Tensor out = detail::make_op({1}, {a.node()}, [inv](Node& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (double& g : p->grad) g += n.grad[0] * inv;
  });
  out.val()[0] = std::accumulate(a.val().begin(), a.val().end(), 0.0) * inv;
  return out;
}

// Mean over rows: [T,F] -> [F].
inline Tensor mean_rows(const Tensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("mean_rows: want 2-D");
  const int T = a.shape()[0], F = a.shape()[1];
  const double inv = 1.0 / T;
  Tensor out = detail::make_op({F}, {a.node()}, [T, F, inv](Node& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < F; ++f) p->grad[t * F + f] += n.grad[f] * inv;
  });
  for (int t = 0; t < T; ++t)
    for (int f = 0; f < F; ++f) out.val()[f] += a.val()[t * F + f] * inv;
  return out;
}

// ---- structural ------------------------------------------------------------

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (numel_of(shape) != a.numel()) throw std::invalid_argument("reshape: numel mismatch");
  Tensor out = detail::make_op(std::move(shape), {a.node()}, [](Node& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
  });
  out.val() = a.val();
  return out;
}

// Generic permutation/selection: out[i] = in[index[i]], index[i] == -1 -> 0.
// Backbone for transpose, pixel shuffle, patchify and slicing.
inline Tensor gather(const Tensor& a, std::vector<int> shape,
                     std::shared_ptr<const std::vector<std::int64_t>> index) {
  if (static_cast<std::int64_t>(index->size()) != numel_of(shape))
    throw std::invalid_argument("gather: index size mismatch");
  Tensor out = detail::make_op(std::move(shape), {a.node()}, [index](Node& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      std::int64_t j = (*index)[i];
      if (j >= 0) p->grad[j] += n.grad[i];
    }
  });
  for (size_t i = 0; i < out.val().size(); ++i) {
    std::int64_t j = (*index)[i];
    out.val()[i] = j >= 0 ? a.val()[j] : 0.0;
  }
  return out;
}

inline Tensor transpose2d(const Tensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("transpose2d: want 2-D");
  const int m = a.shape()[0], k = a.shape()[1];
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(m) * k);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < m; ++i) (*idx)[static_cast<size_t>(j) * m + i] = static_cast<std::int64_t>(i) * k + j;
  return gather(a, {k, m}, idx);
}

// Contiguous block along dim 0: rows [r0, r1) of any tensor whose remaining
// dims are flattened together.
inline Tensor narrow0(const Tensor& a, int r0, int r1) {
  const auto& sh = a.shape();
  if (sh.empty() || r0 < 0 || r1 > sh[0] || r0 >= r1)
    throw std::invalid_argument("narrow0: bad range");
  std::int64_t inner = a.numel() / sh[0];
  std::vector<int> oshape = sh;
  oshape[0] = r1 - r0;
  const std::int64_t off = r0 * inner, len = (r1 - r0) * inner;
  Tensor out = detail::make_op(std::move(oshape), {a.node()}, [off](Node& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p->grad[off + i] += n.grad[i];
  });
  for (std::int64_t i = 0; i < len; ++i) out.val()[i] = a.val()[off + i];
  return out;
}

inline Tensor concat0(const Tensor& a, const Tensor& b) {
  auto sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size()) throw std::invalid_argument("concat0: rank mismatch");
  for (size_t d = 1; d < sa.size(); ++d)
    if (sa[d] != sb[d]) throw std::invalid_argument("concat0: shape mismatch");
  std::vector<int> oshape = sa;
  oshape[0] += sb[0];
  const std::int64_t na = a.numel();
  Tensor out = detail::make_op(std::move(oshape), {a.node(), b.node()}, [na](Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::int64_t i = 0; i < na; ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = na; i < n.grad.size(); ++i) pb->grad[i - na] += n.grad[i];
    }
  });
  std::copy(a.val().begin(), a.val().end(), out.val().begin());
  std::copy(b.val().begin(), b.val().end(), out.val().begin() + na);
  return out;
}

// ---- linear algebra --------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: bad shapes");
  const int m = a.shape()[0], k = a.shape()[1], n2 = b.shape()[1];
  Tensor out = detail::make_op({m, n2}, {a.node(), b.node()}, [m, k, n2](Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    CEMap G(n.grad.data(), m, n2);
    CEMap A(pa->val.data(), m, k);
    CEMap B(pb->val.data(), k, n2);
    if (pa->requires_grad) {
      pa->ensure_grad();
      EMap(pa->grad.data(), m, k).noalias() += G * B.transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      EMap(pb->grad.data(), k, n2).noalias() += A.transpose() * G;
    }
  });
  CEMap A(a.val().data(), m, k);
  CEMap B(b.val().data(), k, n2);
  EMap(out.val().data(), m, n2).noalias() = A * B;
  return out;
}

// x:[T,F] * W:[F,O] + bias[O]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  const int T = y.shape()[0], O = y.shape()[1];
  Tensor out = detail::make_op({T, O}, {y.node(), b.node()}, [T, O](Node& n) {
    auto& py = n.parents[0];
    auto& pb = n.parents[1];
    if (py->requires_grad) {
      py->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) py->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int t = 0; t < T; ++t)
        for (int o = 0; o < O; ++o) pb->grad[o] += n.grad[t * O + o];
    }
  });
  for (int t = 0; t < T; ++t)
    for (int o = 0; o < O; ++o) out.val()[t * O + o] = y.val()[t * O + o] + b.val()[o];
  return out;
}

// ---- rowwise nonlinear blocks ---------------------------------------------

inline Tensor softmax_rows(const Tensor& x) {
  if (x.shape().size() != 2) throw std::invalid_argument("softmax_rows: want 2-D");
  const int T = x.shape()[0], F = x.shape()[1];
  Tensor out = detail::make_op({T, F}, {x.node()}, [T, F](Node& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (int t = 0; t < T; ++t) {
      const double* y = n.val.data() + static_cast<size_t>(t) * F;
      const double* g = n.grad.data() + static_cast<size_t>(t) * F;
      double dot = 0;
      for (int f = 0; f < F; ++f) dot += g[f] * y[f];
      double* pg = p->grad.data() + static_cast<size_t>(t) * F;
      for (int f = 0; f < F; ++f) pg[f] += (g[f] - dot) * y[f];
    }
  });
  for (int t = 0; t < T; ++t) {
    const double* xi = x.val().data() + static_cast<size_t>(t) * F;
    double* y = out.val().data() + static_cast<size_t>(t) * F;
    double mx = *std::max_element(xi, xi + F);
    double s = 0;
    for (int f = 0; f < F; ++f) s += (y[f] = std::exp(xi[f] - mx));
    for (int f = 0; f < F; ++f) y[f] /= s;
  }
  return out;
}

namespace detail {

// Shared normalization kernel: normalize `groups` contiguous blocks of size
// `len` each, then per-group-index affine (gamma/beta indexed by group id for
// instance norm, by inner position for layer norm).
inline void norm_forward(const double* x, double* y, double* mean_c, double* rstd_c,
                         int groups, std::int64_t len, double eps) {
  for (int g = 0; g < groups; ++g) {
    const double* xi = x + g * len;
    double m = 0;
    for (std::int64_t i = 0; i < len; ++i) m += xi[i];
    m /= len;
    double v = 0;
    for (std::int64_t i = 0; i < len; ++i) v += (xi[i] - m) * (xi[i] - m);
    v /= len;
    double rs = 1.0 / std::sqrt(v + eps);
    mean_c[g] = m;
    rstd_c[g] = rs;
    double* yi = y + g * len;
    for (std::int64_t i = 0; i < len; ++i) yi[i] = (xi[i] - m) * rs;
  }
}

}  // namespace detail

// Instance norm over all trailing dims per channel (dim 0), affine per channel.
inline Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            double eps = 1e-5) {
  const auto& sh = x.shape();
  const int C = sh[0];
  const std::int64_t L = x.numel() / C;
  if (gamma.numel() != C || beta.numel() != C)
    throw std::invalid_argument("instance_norm: affine size mismatch");
  auto stats = std::make_shared<std::vector<double>>(2 * C);
  Tensor out = detail::make_op(sh, {x.node(), gamma.node(), beta.node()},
                               [C, L, stats](Node& n) {
    auto& px = n.parents[0];
    auto& pg = n.parents[1];
    auto& pb = n.parents[2];
    const double* mean_c = stats->data();
    const double* rstd_c = stats->data() + C;
    for (int c = 0; c < C; ++c) {
      const double* xi = px->val.data() + c * L;
      const double* go = n.grad.data() + c * L;
      const double g = pg->val[c];
      const double m = mean_c[c], rs = rstd_c[c];
      double sum_g = 0, sum_gx = 0;
      for (std::int64_t i = 0; i < L; ++i) {
        double xh = (xi[i] - m) * rs;
        sum_g += go[i];
        sum_gx += go[i] * xh;
      }
      if (pg->requires_grad) {
        pg->ensure_grad();
        pg->grad[c] += sum_gx;
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        pb->grad[c] += sum_g;
      }
      if (px->requires_grad) {
        px->ensure_grad();
        double* gx = px->grad.data() + c * L;
        for (std::int64_t i = 0; i < L; ++i) {
          double xh = (xi[i] - m) * rs;
          gx[i] += g * rs * (go[i] - sum_g / L - xh * sum_gx / L);
        }
      }
    }
  });
  detail::norm_forward(x.val().data(), out.val().data(), stats->data(),
                       stats->data() + C, C, L, eps);
  for (int c = 0; c < C; ++c) {
    double* y = out.val().data() + c * L;
    for (std::int64_t i = 0; i < L; ++i) y[i] = y[i] * gamma.val()[c] + beta.val()[c];
  }
  return out;
}

// Layer norm per row of [T,F], affine over F.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              double eps = 1e-5) {
  if (x.shape().size() != 2) throw std::invalid_argument("layer_norm_rows: want 2-D");
  const int T = x.shape()[0], F = x.shape()[1];
  if (gamma.numel() != F || beta.numel() != F)
    throw std::invalid_argument("layer_norm_rows: affine size mismatch");
  auto stats = std::make_shared<std::vector<double>>(2 * T);
  Tensor out = detail::make_op(x.shape(), {x.node(), gamma.node(), beta.node()},
                               [T, F, stats](Node& n) {
    auto& px = n.parents[0];
    auto& pg = n.parents[1];
    auto& pb = n.parents[2];
    const double* mean_t = stats->data();
    const double* rstd_t = stats->data() + T;
    for (int t = 0; t < T; ++t) {
      const double* xi = px->val.data() + static_cast<size_t>(t) * F;
      const double* go = n.grad.data() + static_cast<size_t>(t) * F;
      const double m = mean_t[t], rs = rstd_t[t];
      double sum_gg = 0, sum_ggx = 0;
      for (int f = 0; f < F; ++f) {
        double xh = (xi[f] - m) * rs;
        double gg = go[f] * pg->val[f];
        sum_gg += gg;
        sum_ggx += gg * xh;
        if (pg->requires_grad) {
          pg->ensure_grad();
          pg->grad[f] += go[f] * xh;
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          pb->grad[f] += go[f];
        }
      }
      if (px->requires_grad) {
        px->ensure_grad();
        double* gx = px->grad.data() + static_cast<size_t>(t) * F;
        for (int f = 0; f < F; ++f) {
          double xh = (xi[f] - m) * rs;
          double gg = go[f] * pg->val[f];
          gx[f] += rs * (gg - sum_gg / F - xh * sum_ggx / F);
        }
      }
    }
  });
  detail::norm_forward(x.val().data(), out.val().data(), stats->data(),
                       stats->data() + T, T, F, eps);
  for (int t = 0; t < T; ++t) {
    double* y = out.val().data() + static_cast<size_t>(t) * F;
    for (int f = 0; f < F; ++f) y[f] = y[f] * gamma.val()[f] + beta.val()[f];
  }
  return out;
}

// Gated linear unit along channel dim 0: x[2C,...] -> x_a * sigmoid(x_b).
inline Tensor glu0(const Tensor& x) {
  const int C2 = x.shape()[0];
  if (C2 % 2) throw std::invalid_argument("glu0: odd channel count");
  Tensor a = narrow0(x, 0, C2 / 2);
  Tensor b = narrow0(x, C2 / 2, C2);
  return mul(a, sigmoid(b));
}

// ---- convolutions ----------------------------------------------------------

// conv2d: x[Cin,H,W] (+) w[Cout,Cin,kh,kw] -> y[Cout,OH,OW], zero padding.
// im2col into an Eigen matrix, then one GEMM each direction.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                     int sh = 1, int sw = 1, int ph = 0, int pw = 0) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 4 || ws[1] != xs[0])
    throw std::invalid_argument("conv2d: bad shapes");
  const int Cin = xs[0], H = xs[1], W = xs[2];
  const int Cout = ws[0], kh = ws[2], kw = ws[3];
  const int OH = (H + 2 * ph - kh) / sh + 1;
  const int OW = (W + 2 * pw - kw) / sw + 1;
  if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: empty output");
  if (b.numel() != Cout) throw std::invalid_argument("conv2d: bias size mismatch");

  const int K = Cin * kh * kw, P = OH * OW;
  // col built once, shared with backward.
  auto col = std::make_shared<EMat>(K, P);
  {
    col->setZero();
    for (int c = 0; c < Cin; ++c)
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j) {
          const int kr = (c * kh + i) * kw + j;
          for (int oh = 0; oh < OH; ++oh) {
            const int hi = oh * sh - ph + i;
            if (hi < 0 || hi >= H) continue;
            const double* xr = x.val().data() + (static_cast<size_t>(c) * H + hi) * W;
            double* cr = col->data() + (static_cast<size_t>(kr) * P + static_cast<size_t>(oh) * OW);
            for (int ow = 0; ow < OW; ++ow) {
              const int wi = ow * sw - pw + j;
              if (wi >= 0 && wi < W) cr[ow] = xr[wi];
            }
          }
        }
  }

  Tensor out = detail::make_op({Cout, OH, OW}, {x.node(), w.node(), b.node()},
      [Cin, H, W, Cout, kh, kw, sh, sw, ph, pw, OH, OW, K, P, col](Node& n) {
        auto& px = n.parents[0];
        auto& pw_ = n.parents[1];
        auto& pb = n.parents[2];
        CEMap G(n.grad.data(), Cout, P);
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (int c = 0; c < Cout; ++c) pb->grad[c] += G.row(c).sum();
        }
        if (pw_->requires_grad) {
          pw_->ensure_grad();
          EMap(pw_->grad.data(), Cout, K).noalias() += G * col->transpose();
        }
        if (px->requires_grad) {
          px->ensure_grad();
          CEMap Wm(pw_->val.data(), Cout, K);
          EMat dcol = Wm.transpose() * G;  // K x P
          for (int c = 0; c < Cin; ++c)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int kr = (c * kh + i) * kw + j;
                for (int oh = 0; oh < OH; ++oh) {
                  const int hi = oh * sh - ph + i;
                  if (hi < 0 || hi >= H) continue;
                  double* gx = px->grad.data() + (static_cast<size_t>(c) * H + hi) * W;
                  const double* dc = dcol.data() + (static_cast<size_t>(kr) * P + static_cast<size_t>(oh) * OW);
                  for (int ow = 0; ow < OW; ++ow) {
                    const int wi = ow * sw - pw + j;
                    if (wi >= 0 && wi < W) gx[wi] += dc[ow];
                  }
                }
              }
        }
      });
  CEMap Wm(w.val().data(), Cout, K);
  EMap Y(out.val().data(), Cout, P);
  Y.noalias() = Wm * (*col);
  for (int c = 0; c < Cout; ++c) Y.row(c).array() += b.val()[c];
  return out;
}

// conv1d over [C,L] via the 2-D kernel with H=1.
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
                     int stride = 1, int pad = 0) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 3)
    throw std::invalid_argument("conv1d: bad shapes");
  Tensor x3 = reshape(x, {xs[0], 1, xs[1]});
  Tensor w4 = reshape(w, {ws[0], ws[1], 1, ws[2]});
  Tensor y = conv2d(x3, w4, b, 1, stride, 0, pad);
  return reshape(y, {y.shape()[0], y.shape()[2]});
}

// Depthwise conv over [C,L], kernel w[C,k], "same" padding expected from caller.
inline Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
                               int pad = 0) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[0] != ws[0])
    throw std::invalid_argument("depthwise_conv1d: bad shapes");
  const int C = xs[0], L = xs[1], k = ws[1];
  const int OL = L + 2 * pad - k + 1;
  if (OL <= 0) throw std::invalid_argument("depthwise_conv1d: empty output");
  Tensor out = detail::make_op({C, OL}, {x.node(), w.node(), b.node()},
                               [C, L, k, pad, OL](Node& n) {
    auto& px = n.parents[0];
    auto& pw = n.parents[1];
    auto& pb = n.parents[2];
    for (int c = 0; c < C; ++c) {
      const double* go = n.grad.data() + static_cast<size_t>(c) * OL;
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int o = 0; o < OL; ++o) pb->grad[c] += go[o];
      }
      for (int o = 0; o < OL; ++o) {
        for (int i = 0; i < k; ++i) {
          const int li = o - pad + i;
          if (li < 0 || li >= L) continue;
          if (pw->requires_grad) {
            pw->ensure_grad();
            pw->grad[c * k + i] += go[o] * px->val[static_cast<size_t>(c) * L + li];
          }
          if (px->requires_grad) {
            px->ensure_grad();
            px->grad[static_cast<size_t>(c) * L + li] += go[o] * pw->val[c * k + i];
          }
        }
      }
    }
  });
  for (int c = 0; c < C; ++c) {
    double* y = out.val().data() + static_cast<size_t>(c) * OL;
    for (int o = 0; o < OL; ++o) {
      double acc = b.val()[c];
      for (int i = 0; i < k; ++i) {
        const int li = o - pad + i;
        if (li >= 0 && li < L) acc += x.val()[static_cast<size_t>(c) * L + li] * w.val()[c * k + i];
      }
      y[o] = acc;
    }
  }
  return out;
}

// Sub-pixel shuffle along the frequency axis: [C*r,H,W] -> [C,H*r,W].
inline Tensor pixel_shuffle_freq(const Tensor& x, int r) {
  const auto& sh = x.shape();
  if (sh.size() != 3 || sh[0] % r) throw std::invalid_argument("pixel_shuffle_freq: bad input");
  const int C = sh[0] / r, H = sh[1], W = sh[2];
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(x.numel()));
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H * r; ++h)
      for (int w = 0; w < W; ++w) {
        const int s = h % r, hh = h / r;
        (*idx)[(static_cast<size_t>(c) * H * r + h) * W + w] =
            (static_cast<std::int64_t>(c) * r + s) * H * W + static_cast<std::int64_t>(hh) * W + w;
      }
  return gather(x, {C, H * r, W}, idx);
}

// Sub-pixel shuffle on both spatial axes: [C*r*r,H,W] -> [C,H*r,W*r].
inline Tensor pixel_shuffle2d(const Tensor& x, int r) {
  const auto& sh = x.shape();
  if (sh.size() != 3 || sh[0] % (r * r))
    throw std::invalid_argument("pixel_shuffle2d: bad input");
  const int C = sh[0] / (r * r), H = sh[1], W = sh[2];
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(x.numel()));
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H * r; ++h)
      for (int w = 0; w < W * r; ++w) {
        const int sh_ = h % r, sw_ = w % r;
        const int hh = h / r, ww = w / r;
        (*idx)[(static_cast<size_t>(c) * H * r + h) * (W * r) + w] =
            ((static_cast<std::int64_t>(c) * r + sh_) * r + sw_) * H * W +
            static_cast<std::int64_t>(hh) * W + ww;
      }
  return gather(x, {C, H * r, W * r}, idx);
}

// Columns [c0, c1) of a 2-D tensor.
inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.shape().size() != 2) throw std::invalid_argument("slice_cols: want 2-D");
  const int T = a.shape()[0], F = a.shape()[1];
  if (c0 < 0 || c1 > F || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(T) * (c1 - c0));
  for (int t = 0; t < T; ++t)
    for (int c = c0; c < c1; ++c)
      (*idx)[static_cast<size_t>(t) * (c1 - c0) + (c - c0)] = static_cast<std::int64_t>(t) * F + c;
  return gather(a, {T, c1 - c0}, idx);
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Tensor acc = transpose2d(parts[0]);
  for (size_t i = 1; i < parts.size(); ++i) acc = concat0(acc, transpose2d(parts[i]));
  return transpose2d(acc);
}

inline Tensor swish(const Tensor& a) { return mul(a, sigmoid(a)); }

// ---- backward driver -------------------------------------------------------

inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backfn && !n->grad.empty()) n->backfn(*n);
  }
}

inline void zero_grad(Tensor& t) {
  t.grad().assign(t.val().size(), 0.0);
}

}  // namespace clot::ag
