// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.
//
// Objective evaluation: mel-cepstral distortion with DTW alignment,
// modulation-spectra distance, Grad-CAM heatmaps per discriminator and
// per-pairing report tables.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "clot/melio.hpp"
#include "clot/nets.hpp"

namespace clot::evalkit {

constexpr int kMcepOrder = 34;  // retained coefficients, energy excluded

struct McepSequence {
  std::vector<double> frames;  // T x 34, row-major
  double frame_rate = 200.0;   // Hz (5 ms hop)
  int length() const { return static_cast<int>(frames.size()) / kMcepOrder; }
  const double* frame(int t) const { return frames.data() + static_cast<size_t>(t) * kMcepOrder; }
};

struct GradCamMap {
  std::vector<double> heatmap;  // 80 x 64, entries in [0,1]
  std::string target_arch;
};

struct MetricReport {
  std::string pairing;  // M-M / F-F / M-F / F-M
  std::string dataset;
  bool pseudo_pairs = false;
  double mcd_mean = 0, msd_mean = 0;
  std::vector<std::pair<std::string, double>> per_utt_mcd, per_utt_msd;
};

// ---- mel-cepstra -----------------------------------------------------------

// Order-35 real-cepstral analysis of the log magnitude spectrum, 25 ms
// windows at a 5 ms hop; coefficient 0 (energy) is dropped.
inline McepSequence extract_mcep(const melio::Waveform& w) {
  const int win = std::max(2, static_cast<int>(w.sample_rate * 0.025));
  const int hop = std::max(1, static_cast<int>(w.sample_rate * 0.005));
  if (static_cast<int>(w.samples.size()) < win)
    throw std::invalid_argument("extract_mcep: audio shorter than one window");
  int fft_size = 256;
  while (fft_size < win) fft_size <<= 1;
  const int n_bins = fft_size / 2 + 1;
  const int T = 1 + (static_cast<int>(w.samples.size()) - win) / hop;

  std::vector<double> window(win);
  for (int i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2 * M_PI * i / (win - 1));

  McepSequence seq;
  seq.frame_rate = static_cast<double>(w.sample_rate) / hop;
  seq.frames.assign(static_cast<size_t>(T) * kMcepOrder, 0.0);
  std::vector<std::complex<double>> frame(fft_size);
  std::vector<double> logspec(n_bins);
  for (int t = 0; t < T; ++t) {
    std::fill(frame.begin(), frame.end(), std::complex<double>(0));
    for (int i = 0; i < win; ++i) frame[i] = w.samples[t * hop + i] * window[i];
    melio::fft(frame);
    for (int b = 0; b < n_bins; ++b)
      logspec[b] = std::log(std::max(std::abs(frame[b]), 1e-10));
    // DCT-II over the half spectrum; energy term (k=0) excluded so amplitude
    // scaling leaves the retained coefficients untouched
    for (int k = 1; k <= kMcepOrder; ++k) {
      double acc = 0;
      for (int b = 0; b < n_bins; ++b)
        acc += logspec[b] * std::cos(M_PI * k * (2 * b + 1) / (2.0 * n_bins));
      seq.frames[static_cast<size_t>(t) * kMcepOrder + (k - 1)] =
          acc * std::sqrt(2.0 / n_bins);
    }
  }
  return seq;
}

// ---- MCD -------------------------------------------------------------------

inline double mcd_frame_cost(const double* a, const double* b) {
  double s = 0;
  for (int d = 0; d < kMcepOrder; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
  return (10.0 / std::log(10.0)) * std::sqrt(2.0 * s);
}

// Classic DTW (steps down/right/diagonal, anchored ends); returns the mean
// frame cost along the minimal-total path.
inline double mcd(const McepSequence& ref, const McepSequence& conv) {
  const int T1 = ref.length(), T2 = conv.length();
  if (T1 == 0 || T2 == 0) throw std::invalid_argument("mcd: empty input");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(static_cast<size_t>(T1) * T2, inf);
  std::vector<int> len(static_cast<size_t>(T1) * T2, 0);
  auto at = [T2](int i, int j) { return static_cast<size_t>(i) * T2 + j; };
  for (int i = 0; i < T1; ++i)
    for (int j = 0; j < T2; ++j) {
      const double c = mcd_frame_cost(ref.frame(i), conv.frame(j));
      if (i == 0 && j == 0) {
        acc[at(i, j)] = c;
        len[at(i, j)] = 1;
        continue;
      }
      double best = inf;
      int blen = 0;
      auto consider = [&](int pi, int pj) {
        if (pi < 0 || pj < 0) return;
        if (acc[at(pi, pj)] < best) {
          best = acc[at(pi, pj)];
          blen = len[at(pi, pj)];
        }
      };
      consider(i - 1, j - 1);
      consider(i - 1, j);
      consider(i, j - 1);
      acc[at(i, j)] = best + c;
      len[at(i, j)] = blen + 1;
    }
  return acc[at(T1 - 1, T2 - 1)] / len[at(T1 - 1, T2 - 1)];
}

// ---- MSD -------------------------------------------------------------------

// Log modulation spectrum of one coefficient trajectory: 64-frame segments
// at 50% overlap, magnitude spectra averaged before the log.
inline std::vector<double> modulation_spectrum(const std::vector<double>& traj,
                                               int segment = 64, bool* warned = nullptr) {
  const int n_bins = segment / 2 + 1;
  std::vector<double> avg(n_bins, 0.0);
  std::vector<std::complex<double>> buf(segment);
  int count = 0;
  const int T = static_cast<int>(traj.size());
  if (T < segment && warned) *warned = true;  // zero-pad short trajectories
  for (int start = 0; start == 0 || start + segment <= T; start += segment / 2) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0));
    for (int i = 0; i < segment && start + i < T; ++i) buf[i] = traj[start + i];
    melio::fft(buf);
    for (int b = 0; b < n_bins; ++b) avg[b] += std::abs(buf[b]);
    ++count;
  }
  for (int b = 0; b < n_bins; ++b)
    avg[b] = std::log10(std::max(avg[b] / count, 1e-10));
  return avg;
}

// RMS difference of log modulation spectra, averaged over coefficients.
inline double msd(const McepSequence& ref, const McepSequence& conv) {
  if (ref.length() == 0 || conv.length() == 0)
    throw std::invalid_argument("msd: empty input");
  double acc = 0;
  for (int d = 0; d < kMcepOrder; ++d) {
    std::vector<double> tr(ref.length()), tc(conv.length());
    for (int t = 0; t < ref.length(); ++t) tr[t] = ref.frame(t)[d];
    for (int t = 0; t < conv.length(); ++t) tc[t] = conv.frame(t)[d];
    auto sr = modulation_spectrum(tr);
    auto sc = modulation_spectrum(tc);
    double se = 0;
    for (size_t b = 0; b < sr.size(); ++b) se += (sr[b] - sc[b]) * (sr[b] - sc[b]);
    acc += std::sqrt(se / sr.size());
  }
  return acc / kMcepOrder;
}

// ---- Grad-CAM --------------------------------------------------------------

namespace detail {

inline std::vector<double> upsample_bilinear(const std::vector<double>& src, int sh,
                                             int sw, int dh, int dw) {
  std::vector<double> dst(static_cast<size_t>(dh) * dw);
  for (int y = 0; y < dh; ++y)
    for (int x = 0; x < dw; ++x) {
      const double fy = sh > 1 ? static_cast<double>(y) * (sh - 1) / (dh - 1) : 0;
      const double fx = sw > 1 ? static_cast<double>(x) * (sw - 1) / (dw - 1) : 0;
      const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
      const int y1 = std::min(y0 + 1, sh - 1), x1 = std::min(x0 + 1, sw - 1);
      const double wy = fy - y0, wx = fx - x0;
      dst[static_cast<size_t>(y) * dw + x] =
          src[static_cast<size_t>(y0) * sw + x0] * (1 - wy) * (1 - wx) +
          src[static_cast<size_t>(y0) * sw + x1] * (1 - wy) * wx +
          src[static_cast<size_t>(y1) * sw + x0] * wy * (1 - wx) +
          src[static_cast<size_t>(y1) * sw + x1] * wy * wx;
    }
  return dst;
}

}  // namespace detail

// Gradient-weighted activation map of the tapped layer: last conv block for
// dcnn/conformer, the final token grid for vit. Rectified, upsampled to
// 80x64 and max-normalized.
inline GradCamMap gradcam(const nets::Discriminator& disc, const ag::Tensor& mel) {
  ag::Tensor tap;
  nets::DiscOutput out = disc.forward(mel, &tap);
  ag::backward(ag::sum(out.realness));
  const auto& grad = tap.grad();
  const auto& act = tap.val();

  GradCamMap map;
  map.target_arch = nets::arch_name(disc.kind());
  int gh = 0, gw = 0;
  std::vector<double> cam;
  if (disc.kind() == nets::ArchKind::dcnn) {
    const int C = tap.shape()[0];
    gh = tap.shape()[1];
    gw = tap.shape()[2];
    const int HW = gh * gw;
    cam.assign(HW, 0.0);
    for (int c = 0; c < C; ++c) {
      double wgt = 0;
      for (int i = 0; i < HW; ++i) wgt += grad[static_cast<size_t>(c) * HW + i];
      wgt /= HW;
      for (int i = 0; i < HW; ++i) cam[i] += wgt * act[static_cast<size_t>(c) * HW + i];
    }
  } else if (disc.kind() == nets::ArchKind::vit) {
    // token grid [n_tok, D] laid out over the 10x8 patch lattice
    const int n_tok = tap.shape()[0], D = tap.shape()[1];
    gh = static_cast<int>(std::lround(
        std::sqrt(n_tok * static_cast<double>(nets::kBands) / nets::kFrames)));
    gw = n_tok / gh;
    std::vector<double> wgt(D, 0.0);
    for (int t = 0; t < n_tok; ++t)
      for (int d = 0; d < D; ++d) wgt[d] += grad[static_cast<size_t>(t) * D + d];
    for (double& v : wgt) v /= n_tok;
    cam.assign(n_tok, 0.0);
    for (int t = 0; t < n_tok; ++t)
      for (int d = 0; d < D; ++d) cam[t] += wgt[d] * act[static_cast<size_t>(t) * D + d];
  } else {
    // time sequence [T, D] -> 1-D cam over time, tiled across bands
    const int T = tap.shape()[0], D = tap.shape()[1];
    std::vector<double> wgt(D, 0.0);
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < D; ++d) wgt[d] += grad[static_cast<size_t>(t) * D + d];
    for (double& v : wgt) v /= T;
    cam.assign(T, 0.0);
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < D; ++d) cam[t] += wgt[d] * act[static_cast<size_t>(t) * D + d];
    gh = 1;
    gw = T;
  }
  for (double& v : cam) v = std::max(v, 0.0);
  map.heatmap = detail::upsample_bilinear(cam, gh, gw, nets::kBands, nets::kFrames);
  double mx = 0;
  for (double v : map.heatmap) mx = std::max(mx, v);
  if (mx > 0)
    for (double& v : map.heatmap) v /= mx;
  return map;
}

// ---- report driver ---------------------------------------------------------

// Converts every test utterance and scores it against target references.
// References are matched by utterance id; unmatched pairs are scored against
// index-aligned pseudo-pairs and the report is flagged accordingly.
inline MetricReport evaluate_pairing(
    const std::function<melio::Waveform(const melio::Waveform&)>& convert,
    const std::vector<std::pair<std::string, melio::Waveform>>& source_tests,
    const std::vector<std::pair<std::string, melio::Waveform>>& target_refs,
    const std::string& pairing, const std::string& dataset) {
  if (source_tests.empty() || target_refs.empty())
    throw std::invalid_argument("evaluate_pairing: empty test split");
  MetricReport rep;
  rep.pairing = pairing;
  rep.dataset = dataset;
  std::map<std::string, const melio::Waveform*> ref_by_id;
  for (const auto& [id, w] : target_refs) ref_by_id[id] = &w;
  size_t fallback_idx = 0;
  for (const auto& [id, src] : source_tests) {
    const melio::Waveform* ref;
    if (auto it = ref_by_id.find(id); it != ref_by_id.end()) {
      ref = it->second;
    } else {
      ref = &target_refs[fallback_idx++ % target_refs.size()].second;
      rep.pseudo_pairs = true;
    }
    melio::Waveform conv = convert(src);
    McepSequence mc_ref = extract_mcep(*ref);
    McepSequence mc_conv = extract_mcep(conv);
    rep.per_utt_mcd.emplace_back(id, mcd(mc_ref, mc_conv));
    rep.per_utt_msd.emplace_back(id, msd(mc_ref, mc_conv));
  }
  std::sort(rep.per_utt_mcd.begin(), rep.per_utt_mcd.end());
  std::sort(rep.per_utt_msd.begin(), rep.per_utt_msd.end());
  for (const auto& [id, v] : rep.per_utt_mcd) rep.mcd_mean += v;
  for (const auto& [id, v] : rep.per_utt_msd) rep.msd_mean += v;
  rep.mcd_mean /= rep.per_utt_mcd.size();
  rep.msd_mean /= rep.per_utt_msd.size();
  return rep;
}

// Plain-text table in the M-M / F-F / M-F / F-M row layout.
inline std::string format_report_table(const std::vector<MetricReport>& reports) {
  std::ostringstream oss;
  oss << "# objective evaluation (settings are implementation conventions;\n"
         "# cross-paper numeric comparability is approximate)\n";
  oss << "pairing      MCD(dB)     MSD\n";
  const char* order[4] = {"M-M", "F-F", "M-F", "F-M"};
  for (const char* p : order)
    for (const auto& r : reports)
      if (r.pairing == p) {
        char line[128];
        std::snprintf(line, sizeof line, "%-10s %9.4f %9.4f%s\n", r.pairing.c_str(),
                      r.mcd_mean, r.msd_mean, r.pseudo_pairs ? "  (pseudo)" : "");
        oss << line;
      }
  return oss.str();
}

}  // namespace clot::evalkit
