// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.
//
// End-to-end orchestration: corpus preparation with an on-disk mel cache,
// and whole-utterance conversion via overlapped 64-frame windows.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clot/config.hpp"
#include "clot/melio.hpp"
#include "clot/nets.hpp"
#include "clot/trainer.hpp"

namespace clot::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

struct PreparedSpeaker {
  melio::SpeakerCorpus corpus;
  melio::MelStats stats;
};

inline std::string speaker_cache_dir(const config::RunConfig& cfg,
                                     const std::string& speaker) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(cfg.mel.hash()));
  return cfg.cache_dir + "/" + hex + "/" + speaker;
}

// ---- prepare ---------------------------------------------------------------

// Scans <corpus_root>/<speaker>/*.wav, writes mel caches, the split manifest
// and the per-speaker normalization stats. Idempotent: a manifest recording
// the same mel-config hash and seed short-circuits the whole pass.
inline PreparedSpeaker prepare_speaker(const config::RunConfig& cfg,
                                       const std::string& speaker,
                                       bool force = false);

inline PreparedSpeaker load_prepared(const config::RunConfig& cfg,
                                     const std::string& speaker) {
  const std::string dir = speaker_cache_dir(cfg, speaker);
  std::ifstream mf(dir + "/manifest.json");
  if (!mf)
    throw std::runtime_error("no prepared cache for speaker \"" + speaker +
                             "\"; run prepare first");
  json m = json::parse(mf);
  if (m.at("config_hash").get<std::uint64_t>() != cfg.mel.hash() ||
      m.at("seed").get<std::uint64_t>() != cfg.seed)
    throw std::runtime_error("cache for speaker \"" + speaker +
                             "\" was built with a different config; rerun prepare");
  PreparedSpeaker out;
  out.corpus.speaker_id = speaker;
  out.corpus.utt_ids = m.at("utt_ids").get<std::vector<std::string>>();
  out.corpus.train = m.at("train").get<std::vector<int>>();
  out.corpus.val = m.at("val").get<std::vector<int>>();
  out.corpus.test = m.at("test").get<std::vector<int>>();
  out.stats.mean = m.at("stats_mean").get<std::vector<double>>();
  out.stats.std = m.at("stats_std").get<std::vector<double>>();
  out.stats.scope = speaker;
  for (const auto& id : out.corpus.utt_ids) {
    auto mel = melio::read_mel_cache(dir, id, cfg.mel);
    mel.speaker_id = speaker;
    out.corpus.utterances.push_back(std::move(mel));
  }
  return out;
}

inline PreparedSpeaker prepare_speaker(const config::RunConfig& cfg,
                                       const std::string& speaker, bool force) {
  const std::string dir = speaker_cache_dir(cfg, speaker);
  if (!force && fs::exists(dir + "/manifest.json")) {
    try {
      return load_prepared(cfg, speaker);
    } catch (const std::exception&) {
      // stale or mismatched cache: fall through and rebuild
    }
  }
  const std::string wav_dir = cfg.corpus_root + "/" + speaker;
  if (!fs::is_directory(wav_dir))
    throw std::runtime_error("speaker directory not found: " + wav_dir);
  std::vector<std::string> wavs;
  for (const auto& e : fs::directory_iterator(wav_dir))
    if (e.is_regular_file() && e.path().extension() == ".wav")
      wavs.push_back(e.path().string());
  if (wavs.empty()) throw std::runtime_error("no .wav files in " + wav_dir);
  std::sort(wavs.begin(), wavs.end());

  fs::create_directories(dir);
  PreparedSpeaker out;
  out.corpus.speaker_id = speaker;
  for (const auto& path : wavs) {
    auto w = melio::load_waveform(path, cfg.mel.sample_rate);
    auto mel = melio::mel_transform(w, cfg.mel);
    mel.speaker_id = speaker;
    const std::string id = fs::path(path).stem().string();
    out.corpus.utt_ids.push_back(id);
    out.corpus.utterances.push_back(std::move(mel));
  }
  melio::split_corpus(out.corpus, cfg.seed);
  out.stats = melio::fit_stats(out.corpus);

  for (size_t i = 0; i < out.corpus.utt_ids.size(); ++i)
    melio::write_mel_cache(dir, out.corpus.utt_ids[i], out.corpus.utterances[i]);
  json m;
  m["config_hash"] = cfg.mel.hash();
  m["seed"] = cfg.seed;
  m["utt_ids"] = out.corpus.utt_ids;
  m["train"] = out.corpus.train;
  m["val"] = out.corpus.val;
  m["test"] = out.corpus.test;
  m["stats_mean"] = out.stats.mean;
  m["stats_std"] = out.stats.std;
  std::ofstream mf(dir + "/manifest.json");
  mf << m.dump(2) << "\n";
  return out;
}

// ---- conversion ------------------------------------------------------------

// Runs the generator over 64-frame windows hopped by 32 frames and blends
// the normalized outputs with a linear crossfade; output length equals the
// input length.
inline melio::MelSpectrogram convert_mel(const melio::MelSpectrogram& src,
                                         const melio::MelStats& src_stats,
                                         const melio::MelStats& tgt_stats,
                                         const nets::Generator& gen,
                                         const std::string& tgt_speaker) {
  constexpr int W = nets::kFrames;  // 64
  constexpr int H = W / 2;          // hop 32
  const melio::MelSpectrogram norm = melio::apply_norm(src, src_stats);
  const int T = norm.frames();
  const int padded_T = std::max(T, W);

  std::vector<double> padded(static_cast<size_t>(80) * padded_T, 0.0);
  for (int b = 0; b < 80; ++b)
    for (int t = 0; t < T; ++t)
      padded[static_cast<size_t>(b) * padded_T + t] = norm.at(b, t);

  std::vector<int> starts;
  for (int s = 0; s + W <= padded_T; s += H) starts.push_back(s);
  if (starts.back() + W < padded_T) starts.push_back(padded_T - W);

  std::vector<double> acc(static_cast<size_t>(80) * padded_T, 0.0);
  std::vector<double> wsum(padded_T, 0.0);
  for (int s : starts) {
    std::vector<double> win(static_cast<size_t>(80) * W);
    for (int b = 0; b < 80; ++b)
      for (int t = 0; t < W; ++t)
        win[static_cast<size_t>(b) * W + t] =
            padded[static_cast<size_t>(b) * padded_T + s + t];
    ag::Tensor in = trainer::as_gen_input(trainer::crop_to_tensor(win));
    ag::Tensor out = gen.forward(in);
    const auto& ov = out.node()->val;
    for (int t = 0; t < W; ++t) {
      // triangular crossfade weight, clamped away from zero at the edges
      const double w = std::max(std::min(t + 1, W - t) / static_cast<double>(H), 1e-3);
      wsum[s + t] += w;
      for (int b = 0; b < 80; ++b)
        acc[static_cast<size_t>(b) * padded_T + s + t] +=
            w * ov[static_cast<size_t>(b) * W + t];
    }
  }

  melio::MelSpectrogram result;
  result.config = src.config;
  result.speaker_id = tgt_speaker;
  result.values.resize(static_cast<size_t>(80) * T);
  for (int b = 0; b < 80; ++b)
    for (int t = 0; t < T; ++t)
      result.values[static_cast<size_t>(b) * T + t] =
          acc[static_cast<size_t>(b) * padded_T + t] / wsum[t];
  return melio::inverse_norm(result, tgt_stats);
}

}  // namespace clot::pipeline
