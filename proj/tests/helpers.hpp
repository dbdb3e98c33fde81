// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.
//
// Shared test utilities: finite-difference gradient checks, a brute-force
// linear-program oracle for small uniform-marginal transport problems, and
// synthetic corpus builders.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "clot/melio.hpp"
#include "clot/otcore.hpp"
#include "clot/tensor.hpp"

namespace testutil {

using clot::Rng;

// Central-difference gradient of a scalar function of a flat vector.
inline std::vector<double> numeric_grad(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

// Max absolute deviation between analytic and numeric gradients, relative to
// the larger of 1 and the gradient magnitude.
inline double grad_deviation(const std::vector<double>& analytic,
                             const std::vector<double>& numeric) {
  double worst = 0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric[i])});
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

// Runs forward+backward on a fresh graph built by `make_loss` from the flat
// parameter vector, returning (analytic grad, worst deviation vs numeric).
inline double check_gradients(
    const std::function<clot::ag::Tensor(const clot::ag::Tensor&)>& make_loss,
    const std::vector<int>& shape, const std::vector<double>& x0,
    double h = 1e-5) {
  namespace ag = clot::ag;
  ag::Tensor p = ag::Tensor::from_vec(shape, x0, true);
  ag::Tensor loss = make_loss(p);
  ag::backward(loss);
  std::vector<double> analytic = p.node()->grad;
  auto f = [&](const std::vector<double>& v) {
    ag::Tensor q = ag::Tensor::from_vec(shape, v, false);
    return make_loss(q).item();
  };
  return grad_deviation(analytic, numeric_grad(f, x0, h));
}

// ---- transport oracle ------------------------------------------------------

// Exact uniform-marginal OT value: by Birkhoff's theorem the optimum over
// doubly-stochastic plans is attained at a permutation, so minimize
// (1/N) * sum_i C[i, perm(i)] over all permutations.
inline double lp_transport_oracle(const clot::otcore::CostMatrix& c) {
  std::vector<int> perm(c.n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0;
    for (int i = 0; i < c.n; ++i) s += c.at(i, perm[i]);
    best = std::min(best, s / c.n);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Full entropic objective <M,C> + reg*KL(M | uniform); by the envelope
// theorem its derivative in C is exactly the converged plan, which is what
// the frozen-plan autodiff path propagates.
inline double entropic_value(const clot::otcore::CostMatrix& c,
                             const clot::otcore::SinkhornConfig& cfg) {
  auto m = clot::otcore::sinkhorn_plan(c, cfg);
  double v = clot::otcore::trace_product(m, c);
  const double uni = 1.0 / (static_cast<double>(c.n) * c.n);
  double kl = 0;
  for (double p : m.m)
    if (p > 0) kl += p * std::log(p / uni);
  return v + cfg.reg * kl;
}

inline double entropic_value(const clot::otcore::OtBatch& a,
                             const clot::otcore::OtBatch& b,
                             const clot::otcore::SinkhornConfig& cfg) {
  return entropic_value(clot::otcore::cosine_cost(a, b), cfg);
}

inline clot::otcore::OtBatch random_batch(int n, int dim, Rng& rng) {
  std::normal_distribution<double> d(0, 1);
  clot::otcore::OtBatch b;
  b.vectors.resize(n);
  for (auto& v : b.vectors) {
    v.resize(dim);
    for (double& x : v) x = d(rng);
  }
  return b;
}

// ---- synthetic audio -------------------------------------------------------

inline clot::melio::Waveform tone(double freq, double seconds, int rate,
                                  double noise = 0.0, std::uint64_t seed = 7) {
  clot::melio::Waveform w;
  w.sample_rate = rate;
  const int n = static_cast<int>(seconds * rate);
  w.samples.resize(n);
  Rng rng(seed);
  std::normal_distribution<double> d(0, 1);
  for (int i = 0; i < n; ++i)
    w.samples[i] = 0.5 * std::sin(2 * M_PI * freq * i / rate) + noise * d(rng);
  return w;
}

// A small in-memory corpus of tonal utterances around a base frequency.
inline clot::melio::SpeakerCorpus synth_corpus(const std::string& id, int n_utts,
                                               double base_freq,
                                               const clot::melio::MelConfig& cfg,
                                               std::uint64_t seed) {
  clot::melio::SpeakerCorpus c;
  c.speaker_id = id;
  for (int i = 0; i < n_utts; ++i) {
    auto w = tone(base_freq * (1.0 + 0.05 * i), 0.8, cfg.sample_rate, 0.01,
                  seed + i);
    auto m = clot::melio::mel_transform(w, cfg);
    m.speaker_id = id;
    c.utterances.push_back(std::move(m));
    c.utt_ids.push_back(id + "_" + std::to_string(i));
  }
  clot::melio::split_corpus(c, seed);
  return c;
}

}  // namespace testutil
