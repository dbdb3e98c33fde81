// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.
//
// Audio ingestion and mel-spectrogram pipeline: WAV decode, resample,
// log-mel extraction, per-speaker normalization, fill-in-frames masks,
// corpus splits and an on-disk f32 cache.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "clot/common.hpp"

namespace clot::melio {

struct Waveform {
  std::vector<double> samples;  // mono, [-1,1]
  int sample_rate = 0;
};

struct MelConfig {
  int sample_rate = 22050;
  int fft_size = 1024;
  int hop_size = 256;
  int win_size = 1024;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 11025.0;
  double log_floor = 1e-5;

  void validate() const {
    if (n_mels != 80) throw std::invalid_argument("MelConfig: n_mels must be 80");
    if (sample_rate < 1 || hop_size < 1 || win_size < 1 || fft_size < 1)
      throw std::invalid_argument("MelConfig: sizes must be positive");
    if (!(hop_size <= win_size && win_size <= fft_size))
      throw std::invalid_argument("MelConfig: need hop <= win <= fft");
    if (!(fmin < fmax && fmax <= sample_rate / 2.0 + 1e-9))
      throw std::invalid_argument("MelConfig: bad fmin/fmax");
    if (fft_size & (fft_size - 1))
      throw std::invalid_argument("MelConfig: fft_size must be a power of two");
  }
  std::string canonical() const {
    std::ostringstream oss;
    oss << "sr=" << sample_rate << ";fft=" << fft_size << ";hop=" << hop_size
        << ";win=" << win_size << ";mels=" << n_mels << ";fmin=" << fmin
        << ";fmax=" << fmax << ";floor=" << log_floor;
    return oss.str();
  }
  std::uint64_t hash() const { return fnv1a64(canonical()); }
};

struct MelSpectrogram {
  std::vector<double> values;  // 80 x T, row-major
  MelConfig config;
  std::string speaker_id;
  int frames() const { return config.n_mels ? static_cast<int>(values.size()) / 80 : 0; }
  double& at(int band, int t) { return values[static_cast<size_t>(band) * frames() + t]; }
  double at(int band, int t) const { return values[static_cast<size_t>(band) * frames() + t]; }
};

struct MelStats {
  std::vector<double> mean;  // length 80
  std::vector<double> std;   // length 80, > 0
  std::string scope;
};

struct FifMask {
  std::vector<double> mask;  // 80 x width, values in {0,1}
  int width = 64;
  int span_start = 0;
  int span_end = 0;  // [start, end)
};

struct GeneratorInput {
  // channel 0 = mel (.) mask, channel 1 = mask; each 80 x width
  std::vector<double> masked_mel;
  std::vector<double> mask;
  int width = 64;
};

struct SpeakerCorpus {
  std::string speaker_id;
  std::vector<MelSpectrogram> utterances;
  std::vector<std::string> utt_ids;
  std::vector<int> train, val, test;  // indices into utterances
};

// ---- WAV -------------------------------------------------------------------

namespace detail {
inline std::uint32_t rd_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t rd_u16(const unsigned char* p) { return p[0] | (p[1] << 8); }
}  // namespace detail

// Decodes PCM16 / PCM32 / float32 RIFF WAV to mono doubles.
inline Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open wav file: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) ||
      std::memcmp(buf.data() + 8, "WAVE", 4))
    throw std::runtime_error("not a RIFF/WAVE file: " + path);
  size_t pos = 12;
  int fmt = 0, channels = 0, rate = 0, bits = 0;
  const unsigned char* data = nullptr;
  size_t data_len = 0;
  while (pos + 8 <= buf.size()) {
    std::uint32_t len = detail::rd_u32(buf.data() + pos + 4);
    const unsigned char* body = buf.data() + pos + 8;
    if (!std::memcmp(buf.data() + pos, "fmt ", 4) && len >= 16) {
      fmt = detail::rd_u16(body);
      channels = detail::rd_u16(body + 2);
      rate = static_cast<int>(detail::rd_u32(body + 4));
      bits = detail::rd_u16(body + 14);
    } else if (!std::memcmp(buf.data() + pos, "data", 4)) {
      data = body;
      data_len = std::min<size_t>(len, buf.size() - pos - 8);
    }
    pos += 8 + len + (len & 1);
  }
  if (!data || !channels || !rate) throw std::runtime_error("malformed wav: " + path);
  size_t bytes_per = bits / 8;
  size_t n_frames = data_len / (bytes_per * channels);
  if (n_frames == 0) throw std::runtime_error("empty audio: " + path);
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n_frames);
  for (size_t i = 0; i < n_frames; ++i) {
    double acc = 0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per;
      double s;
      if (fmt == 3 && bits == 32) {
        float v;
        std::memcpy(&v, p, 4);
        s = v;
      } else if (fmt == 1 && bits == 16) {
        s = static_cast<std::int16_t>(detail::rd_u16(p)) / 32768.0;
      } else if (fmt == 1 && bits == 32) {
        s = static_cast<std::int32_t>(detail::rd_u32(p)) / 2147483648.0;
      } else {
        throw std::runtime_error("unsupported wav encoding in " + path);
      }
      acc += s;
    }
    w.samples[i] = acc / channels;  // stereo -> channel mean
  }
  return w;
}

inline void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write wav file: " + path);
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  f.write("RIFF", 4);
  u32(36 + data_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  u32(16);
  u16(1);
  u16(1);
  u32(static_cast<std::uint32_t>(w.sample_rate));
  u32(static_cast<std::uint32_t>(w.sample_rate) * 2);
  u16(2);
  u16(16);
  f.write("data", 4);
  u32(data_len);
  for (double s : w.samples) {
    double c = std::clamp(s, -1.0, 1.0);
    std::int16_t v = static_cast<std::int16_t>(std::lround(c * 32767.0));
    u16(static_cast<std::uint16_t>(v));
  }
}

inline Waveform resample(const Waveform& w, int target_rate) {
  if (w.sample_rate == target_rate) return w;
  // linear interpolation; adequate for desk-scale corpora
  size_t out_len = static_cast<size_t>(std::llround(
      static_cast<double>(w.samples.size()) * target_rate / w.sample_rate));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  const double step = static_cast<double>(w.sample_rate) / target_rate;
  for (size_t i = 0; i < out_len; ++i) {
    double x = i * step;
    size_t i0 = static_cast<size_t>(x);
    if (i0 + 1 >= w.samples.size()) {
      out.samples[i] = w.samples.back();
    } else {
      double frac = x - i0;
      out.samples[i] = w.samples[i0] * (1 - frac) + w.samples[i0 + 1] * frac;
    }
  }
  return out;
}

inline Waveform load_waveform(const std::string& path, int target_rate) {
  Waveform w = resample(read_wav(path), target_rate);
  if (w.samples.empty()) throw std::runtime_error("empty audio: " + path);
  double peak = 0;
  for (double s : w.samples) peak = std::max(peak, std::fabs(s));
  if (peak > 0)  // all-zero audio stays as-is
    for (double& s : w.samples) s /= peak;
  return w;
}

// ---- FFT / mel -------------------------------------------------------------

// In-place iterative radix-2 FFT.
inline void fft(std::vector<std::complex<double>>& a, bool inverse = false) {
  const size_t n = a.size();
  if (n & (n - 1)) throw std::invalid_argument("fft: size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2 * M_PI / static_cast<double>(len) * (inverse ? 1 : -1);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1);
      for (size_t j = 0; j < len / 2; ++j) {
        auto u = a[i + j], v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= static_cast<double>(n);
}

namespace detail {

// Slaney-scale mel conversions (librosa convention).
inline double hz_to_mel(double hz) {
  constexpr double min_log_hz = 1000.0, lin = 200.0 / 3.0;
  const double min_log_mel = min_log_hz / lin;
  const double log_step = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / lin;
  return min_log_mel + std::log(hz / min_log_hz) / log_step;
}
inline double mel_to_hz(double mel) {
  constexpr double min_log_hz = 1000.0, lin = 200.0 / 3.0;
  const double min_log_mel = min_log_hz / lin;
  const double log_step = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * lin;
  return min_log_hz * std::exp((mel - min_log_mel) * log_step);
}

}  // namespace detail

// n_mels x (fft/2+1) triangular filterbank with Slaney area normalization.
inline std::vector<double> mel_filterbank(const MelConfig& cfg) {
  const int n_bins = cfg.fft_size / 2 + 1;
  std::vector<double> fb(static_cast<size_t>(cfg.n_mels) * n_bins, 0.0);
  const double mlo = detail::hz_to_mel(cfg.fmin), mhi = detail::hz_to_mel(cfg.fmax);
  std::vector<double> pts(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    pts[i] = detail::mel_to_hz(mlo + (mhi - mlo) * i / (cfg.n_mels + 1));
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = pts[m], cen = pts[m + 1], hi = pts[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (int b = 0; b < n_bins; ++b) {
      const double freq = static_cast<double>(b) * cfg.sample_rate / cfg.fft_size;
      double v = 0;
      if (freq > lo && freq < hi)
        v = freq <= cen ? (freq - lo) / (cen - lo) : (hi - freq) / (hi - cen);
      fb[static_cast<size_t>(m) * n_bins + b] = v * norm;
    }
  }
  return fb;
}

// Log-mel magnitude, centered framing: T = 1 + floor(len / hop).
inline MelSpectrogram mel_transform(const Waveform& w, const MelConfig& cfg) {
  cfg.validate();
  if (w.sample_rate != cfg.sample_rate)
    throw std::invalid_argument("mel_transform: sample rate mismatch with config");
  if (static_cast<int>(w.samples.size()) < cfg.win_size)
    throw std::invalid_argument("mel_transform: waveform shorter than one window");
  const int T = 1 + static_cast<int>(w.samples.size()) / cfg.hop_size;
  const int n_bins = cfg.fft_size / 2 + 1;
  const int half = cfg.fft_size / 2;
  std::vector<double> window(cfg.win_size);
  for (int i = 0; i < cfg.win_size; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2 * M_PI * i / cfg.win_size);
  const auto fb = mel_filterbank(cfg);

  MelSpectrogram mel;
  mel.config = cfg;
  mel.values.assign(static_cast<size_t>(cfg.n_mels) * T, 0.0);
  std::vector<std::complex<double>> frame(cfg.fft_size);
  const int N = static_cast<int>(w.samples.size());
  const int wpad = (cfg.fft_size - cfg.win_size) / 2;
  for (int t = 0; t < T; ++t) {
    const int center = t * cfg.hop_size;
    std::fill(frame.begin(), frame.end(), std::complex<double>(0));
    for (int i = 0; i < cfg.win_size; ++i) {
      int s = center - half + wpad + i;
      // reflect padding at the edges
      if (s < 0) s = -s;
      if (s >= N) s = 2 * N - 2 - s;
      if (s < 0 || s >= N) continue;  // degenerate short signals
      frame[wpad + i] = w.samples[s] * window[i];
    }
    fft(frame);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double acc = 0;
      const double* fr = fb.data() + static_cast<size_t>(m) * n_bins;
      for (int b = 0; b < n_bins; ++b) acc += fr[b] * std::abs(frame[b]);
      mel.values[static_cast<size_t>(m) * T + t] = std::log(std::max(acc, cfg.log_floor));
    }
  }
  return mel;
}

// ---- stats / normalization -------------------------------------------------

inline MelStats fit_stats(const SpeakerCorpus& corpus, double eps = 1e-8) {
  if (corpus.train.empty()) throw std::invalid_argument("fit_stats: empty train split");
  MelStats st;
  st.scope = corpus.speaker_id;
  st.mean.assign(80, 0.0);
  st.std.assign(80, 0.0);
  std::vector<double> sq(80, 0.0);
  std::int64_t count = 0;
  for (int idx : corpus.train) {
    const auto& m = corpus.utterances[idx];
    const int T = m.frames();
    for (int b = 0; b < 80; ++b)
      for (int t = 0; t < T; ++t) {
        double v = m.at(b, t);
        st.mean[b] += v;
        sq[b] += v * v;
      }
    count += T;
  }
  for (int b = 0; b < 80; ++b) {
    st.mean[b] /= count;
    double var = sq[b] / count - st.mean[b] * st.mean[b];
    st.std[b] = std::sqrt(std::max(var, 0.0));
    if (st.std[b] < eps) st.std[b] = eps;  // zero-variance band
  }
  return st;
}

inline MelSpectrogram apply_norm(const MelSpectrogram& m, const MelStats& s) {
  MelSpectrogram out = m;
  const int T = m.frames();
  for (int b = 0; b < 80; ++b)
    for (int t = 0; t < T; ++t)
      out.values[static_cast<size_t>(b) * T + t] = (m.at(b, t) - s.mean[b]) / s.std[b];
  return out;
}

inline MelSpectrogram inverse_norm(const MelSpectrogram& m, const MelStats& s) {
  MelSpectrogram out = m;
  const int T = m.frames();
  for (int b = 0; b < 80; ++b)
    for (int t = 0; t < T; ++t)
      out.values[static_cast<size_t>(b) * T + t] = m.at(b, t) * s.std[b] + s.mean[b];
  return out;
}

// ---- crops and masks -------------------------------------------------------

// Contiguous random crop of `width` frames; shorter utterances are padded on
// the right with log(log_floor).
inline std::vector<double> sample_crop(const MelSpectrogram& m, int width, Rng& rng) {
  const int T = m.frames();
  std::vector<double> out(static_cast<size_t>(80) * width,
                          std::log(m.config.log_floor));
  if (T >= width) {
    std::uniform_int_distribution<int> d(0, T - width);
    const int start = d(rng);
    for (int b = 0; b < 80; ++b)
      for (int t = 0; t < width; ++t)
        out[static_cast<size_t>(b) * width + t] = m.at(b, start + t);
  } else {
    for (int b = 0; b < 80; ++b)
      for (int t = 0; t < T; ++t) out[static_cast<size_t>(b) * width + t] = m.at(b, t);
  }
  return out;
}

// One contiguous zero span, uniform length in [0, max_mask_frames], uniform
// position, replicated across all 80 bands.
inline FifMask sample_fif_mask(int width, int max_mask_frames, Rng& rng) {
  if (max_mask_frames < 0 || max_mask_frames > width)
    throw std::invalid_argument("sample_fif_mask: bad max_mask_frames");
  FifMask fm;
  fm.width = width;
  fm.mask.assign(static_cast<size_t>(80) * width, 1.0);
  std::uniform_int_distribution<int> dlen(0, max_mask_frames);
  const int len = dlen(rng);
  std::uniform_int_distribution<int> dpos(0, width - len);
  const int start = len > 0 ? dpos(rng) : 0;
  fm.span_start = start;
  fm.span_end = start + len;
  for (int b = 0; b < 80; ++b)
    for (int t = start; t < start + len; ++t) fm.mask[static_cast<size_t>(b) * width + t] = 0.0;
  return fm;
}

inline GeneratorInput make_gen_input(const std::vector<double>& crop, const FifMask& fm) {
  if (crop.size() != fm.mask.size())
    throw std::invalid_argument("make_gen_input: shape mismatch");
  GeneratorInput gi;
  gi.width = fm.width;
  gi.mask = fm.mask;
  gi.masked_mel.resize(crop.size());
  for (size_t i = 0; i < crop.size(); ++i) gi.masked_mel[i] = crop[i] * fm.mask[i];
  return gi;
}

// ---- splits ----------------------------------------------------------------

// 81/35/25 when the full corpus is present, otherwise the same ratios
// (train and test rounded, val takes the remainder).
inline void split_corpus(SpeakerCorpus& corpus, std::uint64_t seed) {
  const int n = static_cast<int>(corpus.utterances.size());
  if (n == 0) throw std::invalid_argument("split_corpus: empty utterance list");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  int n_train, n_test;
  if (n >= 141) {
    n_train = 81;
    n_test = 25;
  } else {
    n_train = static_cast<int>(std::lround(n * 81.0 / 141.0));
    n_test = static_cast<int>(std::lround(n * 25.0 / 141.0));
  }
  int n_val = (n >= 141) ? 35 : n - n_train - n_test;
  if (n_train + n_val + n_test > n)
    throw std::invalid_argument("split_corpus: corpus too small for split");
  corpus.train.assign(order.begin(), order.begin() + n_train);
  corpus.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  corpus.test.assign(order.begin() + n_train + n_val,
                     order.begin() + n_train + n_val + n_test);
}

// ---- cache -----------------------------------------------------------------

inline void write_mel_cache(const std::string& dir, const std::string& utt_id,
                            const MelSpectrogram& mel) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int T = mel.frames();
  {
    std::ofstream f(dir + "/" + utt_id + ".melbin", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write mel cache in " + dir);
    std::vector<float> buf(mel.values.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(mel.values[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  std::ofstream meta(dir + "/" + utt_id + ".meta");
  meta << "shape 80 " << T << "\n"
       << "dtype f32\n"
       << "config_hash " << std::hex << std::setw(16) << std::setfill('0')
       << mel.config.hash() << std::dec << "\n"
       << "speaker " << mel.speaker_id << "\n";
}

inline MelSpectrogram read_mel_cache(const std::string& dir, const std::string& utt_id,
                                     const MelConfig& cfg) {
  std::ifstream meta(dir + "/" + utt_id + ".meta");
  if (!meta) throw std::runtime_error("missing mel cache meta: " + dir + "/" + utt_id);
  std::string key;
  int bands = 0, T = 0;
  std::string dtype, speaker;
  std::uint64_t hash = 0;
  while (meta >> key) {
    if (key == "shape") meta >> bands >> T;
    else if (key == "dtype") meta >> dtype;
    else if (key == "config_hash") meta >> std::hex >> hash >> std::dec;
    else if (key == "speaker") meta >> speaker;
  }
  if (bands != 80 || dtype != "f32") throw std::runtime_error("corrupt mel cache meta");
  if (hash != cfg.hash())
    throw std::runtime_error("mel cache config hash mismatch for " + utt_id);
  std::ifstream f(dir + "/" + utt_id + ".melbin", std::ios::binary);
  if (!f) throw std::runtime_error("missing mel cache: " + dir + "/" + utt_id);
  std::vector<float> buf(static_cast<size_t>(80) * T);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("truncated mel cache: " + utt_id);
  MelSpectrogram mel;
  mel.config = cfg;
  mel.speaker_id = speaker;
  mel.values.assign(buf.begin(), buf.end());
  return mel;
}

}  // namespace clot::melio
