// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.
//
// Run configuration: one JSON file covering the whole pipeline, schema
// validated (unknown keys rejected) before any command does filesystem work.

#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include <json.hpp>

#include "clot/melio.hpp"
#include "clot/nets.hpp"
#include "clot/trainer.hpp"
#include "clot/vocoder.hpp"

namespace clot::config {

using nlohmann::json;

struct RunConfig {
  std::uint64_t seed = 1;
  std::string corpus_root = "corpus";
  std::string cache_dir = "cache";
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";
  std::string speaker_x, speaker_y;
  std::map<std::string, std::string> genders;  // speaker id -> "M"/"F"
  melio::MelConfig mel;
  nets::NetConfig net;
  trainer::TrainConfig train;
  vocoder::VocoderConfig voc;
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known,
                           const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " +
                                  section);
}

template <typename T>
inline void get_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_config(const json& j) {
  detail::reject_unknown(j, {"seed", "paths", "speakers", "mel", "net", "train",
                             "vocoder"},
                         "top level");
  RunConfig c;
  detail::get_opt(j, "seed", c.seed);
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    detail::reject_unknown(p, {"corpus_root", "cache_dir", "checkpoint_dir",
                               "report_dir"},
                           "paths");
    detail::get_opt(p, "corpus_root", c.corpus_root);
    detail::get_opt(p, "cache_dir", c.cache_dir);
    detail::get_opt(p, "checkpoint_dir", c.checkpoint_dir);
    detail::get_opt(p, "report_dir", c.report_dir);
  }
  if (const char* env = std::getenv("CLOT_CACHE_DIR")) c.cache_dir = env;
  if (j.contains("speakers")) {
    const auto& s = j.at("speakers");
    detail::reject_unknown(s, {"x", "y", "genders"}, "speakers");
    detail::get_opt(s, "x", c.speaker_x);
    detail::get_opt(s, "y", c.speaker_y);
    if (s.contains("genders"))
      c.genders = s.at("genders").get<std::map<std::string, std::string>>();
  }
  if (j.contains("mel")) {
    const auto& m = j.at("mel");
    detail::reject_unknown(m, {"sample_rate", "fft_size", "hop_size", "win_size",
                               "n_mels", "fmin", "fmax", "log_floor"},
                           "mel");
    detail::get_opt(m, "sample_rate", c.mel.sample_rate);
    detail::get_opt(m, "fft_size", c.mel.fft_size);
    detail::get_opt(m, "hop_size", c.mel.hop_size);
    detail::get_opt(m, "win_size", c.mel.win_size);
    detail::get_opt(m, "n_mels", c.mel.n_mels);
    detail::get_opt(m, "fmin", c.mel.fmin);
    detail::get_opt(m, "fmax", c.mel.fmax);
    detail::get_opt(m, "log_floor", c.mel.log_floor);
    c.mel.validate();
  }
  if (j.contains("net")) {
    const auto& n = j.at("net");
    detail::reject_unknown(n, {"gen_base", "gen_res_blocks", "gen_res_width",
                               "dcnn_base", "vit_patch", "vit_width", "vit_heads",
                               "vit_blocks", "conf_width", "conf_heads",
                               "conf_blocks", "conf_kernel"},
                           "net");
    detail::get_opt(n, "gen_base", c.net.gen_base);
    detail::get_opt(n, "gen_res_blocks", c.net.gen_res_blocks);
    detail::get_opt(n, "gen_res_width", c.net.gen_res_width);
    detail::get_opt(n, "dcnn_base", c.net.dcnn_base);
    detail::get_opt(n, "vit_patch", c.net.vit_patch);
    detail::get_opt(n, "vit_width", c.net.vit_width);
    detail::get_opt(n, "vit_heads", c.net.vit_heads);
    detail::get_opt(n, "vit_blocks", c.net.vit_blocks);
    detail::get_opt(n, "conf_width", c.net.conf_width);
    detail::get_opt(n, "conf_heads", c.net.conf_heads);
    detail::get_opt(n, "conf_blocks", c.net.conf_blocks);
    detail::get_opt(n, "conf_kernel", c.net.conf_kernel);
    c.net.validate();
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown(t, {"epochs", "batch_size", "learning_rate", "adam_beta1",
                               "adam_beta2", "lambda_cyc", "lambda_id",
                               "identity_cutoff_epochs", "n_discriminators",
                               "ablation", "eq3_form", "sinkhorn", "ot_chunks",
                               "max_mask_frames", "checkpoint_every",
                               "negate_disc_loss", "aux_lsgan_disc",
                               "reuse_alpha_for_beta"},
                           "train");
    detail::get_opt(t, "epochs", c.train.epochs);
    detail::get_opt(t, "batch_size", c.train.batch_size);
    detail::get_opt(t, "learning_rate", c.train.learning_rate);
    detail::get_opt(t, "adam_beta1", c.train.adam_beta1);
    detail::get_opt(t, "adam_beta2", c.train.adam_beta2);
    detail::get_opt(t, "lambda_cyc", c.train.lambda_cyc);
    detail::get_opt(t, "lambda_id", c.train.lambda_id);
    detail::get_opt(t, "identity_cutoff_epochs", c.train.identity_cutoff_epochs);
    detail::get_opt(t, "n_discriminators", c.train.n_discriminators);
    detail::get_opt(t, "max_mask_frames", c.train.max_mask_frames);
    detail::get_opt(t, "ot_chunks", c.train.ot_chunks);
    detail::get_opt(t, "checkpoint_every", c.train.checkpoint_every);
    detail::get_opt(t, "negate_disc_loss", c.train.negate_disc_loss);
    detail::get_opt(t, "aux_lsgan_disc", c.train.aux_lsgan_disc);
    detail::get_opt(t, "reuse_alpha_for_beta", c.train.reuse_alpha_for_beta);
    if (t.contains("ablation"))
      c.train.ablation = trainer::ablation_from_string(t.at("ablation").get<std::string>());
    if (t.contains("eq3_form")) {
      const std::string f = t.at("eq3_form").get<std::string>();
      if (f == "as_written") c.train.eq3_form = otcore::LossForm::as_written;
      else if (f == "symmetric") c.train.eq3_form = otcore::LossForm::symmetric;
      else throw std::invalid_argument("config: eq3_form must be as_written|symmetric");
    }
    if (t.contains("sinkhorn")) {
      const auto& s = t.at("sinkhorn");
      detail::reject_unknown(s, {"reg", "max_iters", "marginal_tol"}, "train.sinkhorn");
      detail::get_opt(s, "reg", c.train.sinkhorn.reg);
      detail::get_opt(s, "max_iters", c.train.sinkhorn.max_iters);
      detail::get_opt(s, "marginal_tol", c.train.sinkhorn.marginal_tol);
    }
    c.train.seed = c.seed;
    c.train.validate();
  }
  if (j.contains("vocoder")) {
    const auto& v = j.at("vocoder");
    detail::reject_unknown(v, {"mode", "command", "griffin_lim_iters"}, "vocoder");
    if (v.contains("mode"))
      c.voc.mode = vocoder::mode_from_string(v.at("mode").get<std::string>());
    detail::get_opt(v, "command", c.voc.command);
    detail::get_opt(v, "griffin_lim_iters", c.voc.griffin_lim_iters);
  }
  c.train.seed = c.seed;
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  json j = json::parse(f);
  return parse_config(j);
}

}  // namespace clot::config
