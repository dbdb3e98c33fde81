// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.
//
// Waveform reconstruction from log-mel: an external MelGAN checkpoint
// invoked as a subprocess, or an internal fallback that inverts the mel
// projection by least squares and runs Griffin-Lim phase reconstruction.

#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <unistd.h>
#include <string>
#include <vector>

#include "clot/melio.hpp"

namespace clot::vocoder {

enum class Mode { external_melgan, griffin_lim };

inline Mode mode_from_string(const std::string& s) {
  if (s == "external_melgan") return Mode::external_melgan;
  if (s == "griffin_lim") return Mode::griffin_lim;
  throw std::invalid_argument("unknown vocoder mode: " + s);
}

struct VocoderConfig {
  Mode mode = Mode::griffin_lim;
  std::string command;  // external mode: "<cmd> <melbin> <meta> <out.wav>"
  int griffin_lim_iters = 60;
};

// ---- mel inversion + Griffin-Lim ------------------------------------------

// Least-squares pseudo-inverse of the mel filterbank, clamped nonnegative.
inline std::vector<double> mel_to_linear(const melio::MelSpectrogram& mel) {
  const auto& cfg = mel.config;
  const int n_bins = cfg.fft_size / 2 + 1;
  const int T = mel.frames();
  const auto fbv = melio::mel_filterbank(cfg);
  Eigen::MatrixXd F(cfg.n_mels, n_bins);
  for (int m = 0; m < cfg.n_mels; ++m)
    for (int b = 0; b < n_bins; ++b) F(m, b) = fbv[static_cast<size_t>(m) * n_bins + b];
  Eigen::MatrixXd M(cfg.n_mels, T);
  for (int m = 0; m < cfg.n_mels; ++m)
    for (int t = 0; t < T; ++t) M(m, t) = std::exp(mel.at(m, t));
  Eigen::MatrixXd G = F * F.transpose();
  G.diagonal().array() += 1e-8;
  Eigen::MatrixXd lin = F.transpose() * G.ldlt().solve(M);  // n_bins x T
  std::vector<double> out(static_cast<size_t>(n_bins) * T);
  for (int b = 0; b < n_bins; ++b)
    for (int t = 0; t < T; ++t)
      out[static_cast<size_t>(b) * T + t] = std::max(lin(b, t), 0.0);
  return out;
}

namespace detail {

inline void stft(const std::vector<double>& x, const melio::MelConfig& cfg,
                 std::vector<std::complex<double>>& spec, int T) {
  const int n_bins = cfg.fft_size / 2 + 1;
  const int half = cfg.fft_size / 2;
  std::vector<double> window(cfg.win_size);
  for (int i = 0; i < cfg.win_size; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2 * M_PI * i / cfg.win_size);
  const int wpad = (cfg.fft_size - cfg.win_size) / 2;
  std::vector<std::complex<double>> frame(cfg.fft_size);
  spec.assign(static_cast<size_t>(n_bins) * T, {0, 0});
  const int N = static_cast<int>(x.size());
  for (int t = 0; t < T; ++t) {
    std::fill(frame.begin(), frame.end(), std::complex<double>(0));
    const int center = t * cfg.hop_size;
    for (int i = 0; i < cfg.win_size; ++i) {
      const int s = center - half + wpad + i;
      if (s >= 0 && s < N) frame[wpad + i] = x[s] * window[i];
    }
    melio::fft(frame);
    for (int b = 0; b < n_bins; ++b) spec[static_cast<size_t>(b) * T + t] = frame[b];
  }
}

inline std::vector<double> istft(const std::vector<std::complex<double>>& spec,
                                 const melio::MelConfig& cfg, int T, int out_len) {
  const int n_bins = cfg.fft_size / 2 + 1;
  const int half = cfg.fft_size / 2;
  std::vector<double> window(cfg.win_size);
  for (int i = 0; i < cfg.win_size; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2 * M_PI * i / cfg.win_size);
  const int wpad = (cfg.fft_size - cfg.win_size) / 2;
  std::vector<double> out(out_len, 0.0), norm(out_len, 0.0);
  std::vector<std::complex<double>> frame(cfg.fft_size);
  for (int t = 0; t < T; ++t) {
    for (int b = 0; b < n_bins; ++b) {
      frame[b] = spec[static_cast<size_t>(b) * T + t];
      if (b > 0 && b < cfg.fft_size - b) frame[cfg.fft_size - b] = std::conj(frame[b]);
    }
    melio::fft(frame, true);
    const int center = t * cfg.hop_size;
    for (int i = 0; i < cfg.win_size; ++i) {
      const int s = center - half + wpad + i;
      if (s >= 0 && s < out_len) {
        out[s] += frame[wpad + i].real() * window[i];
        norm[s] += window[i] * window[i];
      }
    }
  }
  for (int s = 0; s < out_len; ++s)
    if (norm[s] > 1e-9) out[s] /= norm[s];
  return out;
}

}  // namespace detail

// Iterative phase reconstruction from a magnitude spectrogram [n_bins x T].
inline melio::Waveform griffin_lim(const std::vector<double>& mag,
                                   const melio::MelConfig& cfg, int T, int iters) {
  const int n_bins = cfg.fft_size / 2 + 1;
  const int out_len = (T - 1) * cfg.hop_size + cfg.hop_size;
  std::vector<std::complex<double>> spec(static_cast<size_t>(n_bins) * T);
  for (size_t i = 0; i < spec.size(); ++i) spec[i] = mag[i];  // zero phase start
  std::vector<double> x;
  for (int it = 0; it < iters; ++it) {
    x = detail::istft(spec, cfg, T, out_len);
    detail::stft(x, cfg, spec, T);
    for (size_t i = 0; i < spec.size(); ++i) {
      const double a = std::abs(spec[i]);
      spec[i] = a > 1e-12 ? spec[i] * (mag[i] / a) : std::complex<double>(mag[i], 0);
    }
  }
  melio::Waveform w;
  w.sample_rate = cfg.sample_rate;
  w.samples = detail::istft(spec, cfg, T, out_len);
  double peak = 0;
  for (double s : w.samples) peak = std::max(peak, std::fabs(s));
  if (peak > 1.0)
    for (double& s : w.samples) s /= peak;
  return w;
}

// ---- entry point -----------------------------------------------------------

inline melio::Waveform synthesize(const melio::MelSpectrogram& mel,
                                  const VocoderConfig& vc) {
  if (vc.mode == Mode::external_melgan) {
    if (vc.command.empty())
      throw std::runtime_error(
          "external MelGAN vocoder command not configured; set vocoder.command "
          "or switch vocoder.mode to \"griffin_lim\"");
    namespace fs = std::filesystem;
    const auto tmp = fs::temp_directory_path() / ("clot_voc_" + std::to_string(::getpid()));
    fs::create_directories(tmp);
    melio::write_mel_cache(tmp.string(), "mel", mel);
    const std::string out_wav = (tmp / "out.wav").string();
    const std::string cmd = vc.command + " " + (tmp / "mel.melbin").string() + " " +
                            (tmp / "mel.meta").string() + " " + out_wav;
    if (std::system(cmd.c_str()) != 0)
      throw std::runtime_error("external vocoder command failed: " + cmd);
    melio::Waveform w = melio::read_wav(out_wav);
    fs::remove_all(tmp);
    return w;
  }
  auto mag = mel_to_linear(mel);
  return griffin_lim(mag, mel.config, mel.frames(), vc.griffin_lim_iters);
}

}  // namespace clot::vocoder
