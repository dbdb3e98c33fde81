// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.
//
// Entropic optimal transport core: cosine cost matrices, log-domain Sinkhorn
// soft matchings with uniform marginals, the OT distance Tr[M C^T] and the
// discriminator OT loss over four embedding mini-batches. Plain-double
// routines plus autodiff counterparts that treat the plan as a constant.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "clot/tensor.hpp"

namespace clot::otcore {

constexpr double kNormEps = 1e-8;  // zero-vector guard in cosine distance

struct OtBatch {
  std::vector<std::vector<double>> vectors;  // N vectors of equal length
  int n() const { return static_cast<int>(vectors.size()); }
};

struct CostMatrix {
  std::vector<double> c;  // N x N, row-major; entries in [0, 2]
  int n = 0;
  double at(int p, int q) const { return c[static_cast<size_t>(p) * n + q]; }
};

struct TransportPlan {
  std::vector<double> m;  // N x N, rows/cols sum to 1/N
  int n = 0;
  bool converged = false;
  int iters = 0;
  double at(int p, int q) const { return m[static_cast<size_t>(p) * n + q]; }
};

struct SinkhornConfig {
  double reg = 0.1;
  int max_iters = 200;
  double marginal_tol = 1e-6;

  void validate() const {
    if (!(reg > 0)) throw std::invalid_argument("SinkhornConfig: reg must be > 0");
    if (max_iters < 1) throw std::invalid_argument("SinkhornConfig: max_iters >= 1");
  }
};

enum class LossForm { as_written, symmetric };

// ---- chunking --------------------------------------------------------------

inline OtBatch chunk_embedding(const std::vector<double>& e, int n_chunks = 4) {
  if (n_chunks < 1 || e.empty() || e.size() % n_chunks)
    throw std::invalid_argument("chunk_embedding: length not divisible by chunk count");
  const size_t len = e.size() / n_chunks;
  OtBatch b;
  b.vectors.resize(n_chunks);
  for (int i = 0; i < n_chunks; ++i)
    b.vectors[i].assign(e.begin() + i * len, e.begin() + (i + 1) * len);
  return b;
}

// ---- cosine cost -----------------------------------------------------------

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_distance: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double d = 1.0 - dot / (std::max(std::sqrt(na), kNormEps) *
                          std::max(std::sqrt(nb), kNormEps));
  return std::clamp(d, 0.0, 2.0);
}

inline CostMatrix cosine_cost(const OtBatch& a, const OtBatch& b) {
  if (a.n() != b.n()) throw std::invalid_argument("cosine_cost: batch size mismatch");
  CostMatrix cm;
  cm.n = a.n();
  cm.c.resize(static_cast<size_t>(cm.n) * cm.n);
  for (int p = 0; p < cm.n; ++p)
    for (int q = 0; q < cm.n; ++q)
      cm.c[static_cast<size_t>(p) * cm.n + q] = cosine_distance(a.vectors[p], b.vectors[q]);
  return cm;
}

// ---- Sinkhorn --------------------------------------------------------------

namespace detail {
inline double logsumexp(const double* v, int n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}
}  // namespace detail

// Log-domain Sinkhorn with uniform marginals 1/N. Deterministic; on
// non-convergence the best iterate is returned with converged=false.
inline TransportPlan sinkhorn_plan(const CostMatrix& cm, const SinkhornConfig& cfg) {
  cfg.validate();
  const int N = cm.n;
  for (double v : cm.c)
    if (!std::isfinite(v)) throw std::invalid_argument("sinkhorn_plan: non-finite cost");
  const double reg = cfg.reg;
  const double log_a = std::log(1.0 / N);
  std::vector<double> f(N, 0.0), g(N, 0.0), tmp(N);
  TransportPlan plan;
  plan.n = N;
  plan.m.assign(static_cast<size_t>(N) * N, 0.0);

  auto fill_plan = [&]() {
    for (int p = 0; p < N; ++p)
      for (int q = 0; q < N; ++q)
        plan.m[static_cast<size_t>(p) * N + q] =
            std::exp((f[p] + g[q] - cm.at(p, q)) / reg);
  };
  auto marginal_err = [&]() {
    double err = 0;
    for (int p = 0; p < N; ++p) {
      double rs = 0;
      for (int q = 0; q < N; ++q) rs += plan.at(p, q);
      err = std::max(err, std::fabs(rs - 1.0 / N));
    }
    for (int q = 0; q < N; ++q) {
      double cs = 0;
      for (int p = 0; p < N; ++p) cs += plan.at(p, q);
      err = std::max(err, std::fabs(cs - 1.0 / N));
    }
    return err;
  };

  for (int it = 0; it < cfg.max_iters; ++it) {
    for (int p = 0; p < N; ++p) {
      for (int q = 0; q < N; ++q) tmp[q] = (g[q] - cm.at(p, q)) / reg;
      f[p] = reg * (log_a - detail::logsumexp(tmp.data(), N));
    }
    for (int q = 0; q < N; ++q) {
      for (int p = 0; p < N; ++p) tmp[p] = (f[p] - cm.at(p, q)) / reg;
      g[q] = reg * (log_a - detail::logsumexp(tmp.data(), N));
    }
    plan.iters = it + 1;
    fill_plan();
    if (marginal_err() <= cfg.marginal_tol) {
      plan.converged = true;
      break;
    }
  }
  // Project the final iterate onto the feasible polytope: scale rows then
  // columns down to their targets, then spread the residual mass as a rank-one
  // correction. A no-op at convergence; on early stop it guarantees the
  // returned plan still satisfies the uniform marginals.
  {
    const double a = 1.0 / N;
    for (int p = 0; p < N; ++p) {
      double rs = 0;
      for (int q = 0; q < N; ++q) rs += plan.at(p, q);
      if (rs > a)
        for (int q = 0; q < N; ++q) plan.m[static_cast<size_t>(p) * N + q] *= a / rs;
    }
    std::vector<double> err_r(N, 0.0), err_c(N, 0.0);
    for (int q = 0; q < N; ++q) {
      double cs = 0;
      for (int p = 0; p < N; ++p) cs += plan.at(p, q);
      if (cs > a)
        for (int p = 0; p < N; ++p) plan.m[static_cast<size_t>(p) * N + q] *= a / cs;
    }
    double residual = 0;
    for (int p = 0; p < N; ++p) {
      double rs = 0;
      for (int q = 0; q < N; ++q) rs += plan.at(p, q);
      err_r[p] = a - rs;
      residual += err_r[p];
    }
    for (int q = 0; q < N; ++q) {
      double cs = 0;
      for (int p = 0; p < N; ++p) cs += plan.at(p, q);
      err_c[q] = a - cs;
    }
    if (residual > 0)
      for (int p = 0; p < N; ++p)
        for (int q = 0; q < N; ++q)
          plan.m[static_cast<size_t>(p) * N + q] += err_r[p] * err_c[q] / residual;
  }
  return plan;
}

inline double trace_product(const TransportPlan& m, const CostMatrix& c) {
  double acc = 0;  // Tr[M C^T] = sum_pq M_pq C_pq
  for (size_t i = 0; i < m.m.size(); ++i) acc += m.m[i] * c.c[i];
  return acc;
}

inline double ot_distance(const OtBatch& a, const OtBatch& b, const SinkhornConfig& cfg,
                          int* iters_out = nullptr) {
  CostMatrix c = cosine_cost(a, b);
  TransportPlan m = sinkhorn_plan(c, cfg);
  if (iters_out) *iters_out += m.iters;
  return trace_product(m, c);
}

// Eq-style discriminator OT loss over four batches. X,X' real; Y,Y' generated.
inline double disc_ot_loss(const OtBatch& x, const OtBatch& xp, const OtBatch& y,
                           const OtBatch& yp, const SinkhornConfig& cfg,
                           LossForm form = LossForm::as_written,
                           int* iters_out = nullptr) {
  const double w_xxp = ot_distance(x, xp, cfg, iters_out);
  const double w_xyp = ot_distance(x, yp, cfg, iters_out);
  const double w_xpy = ot_distance(xp, y, cfg, iters_out);
  const double w_xpyp = ot_distance(xp, yp, cfg, iters_out);
  const double w_yyp = ot_distance(y, yp, cfg, iters_out);
  const double first = form == LossForm::as_written
                           ? w_xxp
                           : ot_distance(x, y, cfg, iters_out);
  return first + w_xyp + w_xpy + w_xpyp - 2.0 * w_xxp - 2.0 * w_yyp;
}

// ---- autodiff path ---------------------------------------------------------
// The plan is computed from detached values and held constant; gradients flow
// through the cost matrix only.

// Chunk a [F] tensor into [N, F/N].
inline ag::Tensor chunk_embedding_t(const ag::Tensor& e, int n_chunks = 4) {
  const auto len = e.numel();
  if (len % n_chunks)
    throw std::invalid_argument("chunk_embedding_t: length not divisible");
  return ag::reshape(e, {n_chunks, static_cast<int>(len / n_chunks)});
}

inline OtBatch to_batch(const ag::Tensor& rows) {
  OtBatch b;
  const int N = rows.shape()[0];
  const int L = rows.shape()[1];
  b.vectors.resize(N);
  for (int i = 0; i < N; ++i)
    b.vectors[i].assign(rows.val().begin() + static_cast<size_t>(i) * L,
                        rows.val().begin() + static_cast<size_t>(i + 1) * L);
  return b;
}

// Cosine cost matrix between row batches a[N,L], b[N,L], with analytic backward.
inline ag::Tensor cosine_cost_t(const ag::Tensor& a, const ag::Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape() != b.shape())
    throw std::invalid_argument("cosine_cost_t: want matching [N,L]");
  const int N = a.shape()[0], L = a.shape()[1];
  ag::Tensor out = ag::detail::make_op({N, N}, {a.node(), b.node()}, [N, L](ag::Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    std::vector<double> na(N), nb(N);
    for (int i = 0; i < N; ++i) {
      double sa = 0, sb = 0;
      for (int l = 0; l < L; ++l) {
        sa += pa->val[i * L + l] * pa->val[i * L + l];
        sb += pb->val[i * L + l] * pb->val[i * L + l];
      }
      na[i] = std::max(std::sqrt(sa), kNormEps);
      nb[i] = std::max(std::sqrt(sb), kNormEps);
    }
    for (int p = 0; p < N; ++p)
      for (int q = 0; q < N; ++q) {
        const double go = n.grad[static_cast<size_t>(p) * N + q];
        if (go == 0) continue;
        double dot = 0;
        for (int l = 0; l < L; ++l) dot += pa->val[p * L + l] * pb->val[q * L + l];
        const double inv = 1.0 / (na[p] * nb[q]);
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (int l = 0; l < L; ++l)
            pa->grad[p * L + l] += go * (-pb->val[q * L + l] * inv +
                                         dot * pa->val[p * L + l] * inv / (na[p] * na[p]));
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (int l = 0; l < L; ++l)
            pb->grad[q * L + l] += go * (-pa->val[p * L + l] * inv +
                                         dot * pb->val[q * L + l] * inv / (nb[q] * nb[q]));
        }
      }
  });
  for (int p = 0; p < N; ++p) {
    double sa = 0;
    for (int l = 0; l < L; ++l) sa += a.val()[p * L + l] * a.val()[p * L + l];
    const double np = std::max(std::sqrt(sa), kNormEps);
    for (int q = 0; q < N; ++q) {
      double sb = 0, dot = 0;
      for (int l = 0; l < L; ++l) {
        sb += b.val()[q * L + l] * b.val()[q * L + l];
        dot += a.val()[p * L + l] * b.val()[q * L + l];
      }
      const double nq = std::max(std::sqrt(sb), kNormEps);
      out.val()[static_cast<size_t>(p) * N + q] = 1.0 - dot / (np * nq);
    }
  }
  return out;
}

// OT distance with the plan detached (envelope-style gradient).
inline ag::Tensor ot_distance_t(const ag::Tensor& a, const ag::Tensor& b,
                                const SinkhornConfig& cfg, int* iters_out = nullptr) {
  ag::Tensor c = cosine_cost_t(a, b);
  CostMatrix cm;
  cm.n = c.shape()[0];
  cm.c = c.val();
  for (double& v : cm.c) v = std::clamp(v, 0.0, 2.0);
  TransportPlan plan = sinkhorn_plan(cm, cfg);
  if (iters_out) *iters_out += plan.iters;
  ag::Tensor m_const = ag::Tensor::from_vec(c.shape(), plan.m, false);
  return ag::sum(ag::mul(c, m_const));
}

inline ag::Tensor disc_ot_loss_t(const ag::Tensor& x, const ag::Tensor& xp,
                                 const ag::Tensor& y, const ag::Tensor& yp,
                                 const SinkhornConfig& cfg,
                                 LossForm form = LossForm::as_written,
                                 int* iters_out = nullptr) {
  ag::Tensor w_xxp = ot_distance_t(x, xp, cfg, iters_out);
  ag::Tensor w_xyp = ot_distance_t(x, yp, cfg, iters_out);
  ag::Tensor w_xpy = ot_distance_t(xp, y, cfg, iters_out);
  ag::Tensor w_xpyp = ot_distance_t(xp, yp, cfg, iters_out);
  ag::Tensor w_yyp = ot_distance_t(y, yp, cfg, iters_out);
  ag::Tensor first = form == LossForm::as_written
                         ? w_xxp
                         : ot_distance_t(x, y, cfg, iters_out);
  ag::Tensor acc = ag::add(first, ag::add(w_xyp, ag::add(w_xpy, w_xpyp)));
  acc = ag::sub(acc, ag::scale(w_xxp, 2.0));
  acc = ag::sub(acc, ag::scale(w_yyp, 2.0));
  return acc;
}

// Debug dump of C and M as structured text.
inline std::string dump_matrices(const CostMatrix& c, const TransportPlan& m) {
  std::string s = "cost\n";
  char buf[64];
  for (int p = 0; p < c.n; ++p) {
    for (int q = 0; q < c.n; ++q) {
      std::snprintf(buf, sizeof buf, "%.9f ", c.at(p, q));
      s += buf;
    }
    s += "\n";
  }
  s += "plan converged=" + std::string(m.converged ? "true" : "false") +
       " iters=" + std::to_string(m.iters) + "\n";
  for (int p = 0; p < m.n; ++p) {
    for (int q = 0; q < m.n; ++q) {
      std::snprintf(buf, sizeof buf, "%.9f ", m.at(p, q));
      s += buf;
    }
    s += "\n";
  }
  return s;
}

}  // namespace clot::otcore
