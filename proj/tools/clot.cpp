// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.
//
// Command-line driver: prepare / train / convert / evaluate / inspect.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clot/config.hpp"
#include "clot/evalkit.hpp"
#include "clot/pipeline.hpp"
#include "clot/trainer.hpp"
#include "clot/vocoder.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace clot;

namespace {

// Exclusive-creation lock file; removed on scope exit.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) : path_(dir + "/.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
      throw std::runtime_error("checkpoint directory is locked (" + path_ +
                               " exists); another run may be active");
    std::fputs("locked\n", f);
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
};

std::string run_dir(const config::RunConfig& cfg) {
  return cfg.checkpoint_dir + "/" + trainer::ablation_name(cfg.train.ablation);
}

std::string gender_of(const config::RunConfig& cfg, const std::string& spk) {
  auto it = cfg.genders.find(spk);
  return it == cfg.genders.end() ? "M" : it->second;
}

trainer::TrainState load_state(const config::RunConfig& cfg,
                               const std::string& ckpt) {
  std::string path = ckpt.empty() ? run_dir(cfg) + "/latest.ckpt" : ckpt;
  if (!fs::exists(path))
    throw std::runtime_error("checkpoint not found: " + path +
                             " (train first or pass --checkpoint)");
  return trainer::load_checkpoint(path, cfg.net, cfg.train);
}

void write_pgm(const std::string& path, const std::vector<double>& map, int h,
               int w) {
  std::ofstream f(path);
  f << "P2\n" << w << " " << h << "\n255\n";
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c)
      f << static_cast<int>(map[static_cast<size_t>(r) * w + c] * 255.0 + 0.5)
        << (c + 1 == w ? "" : " ");
    f << "\n";
  }
}

void write_matrix(const std::string& path, const std::vector<double>& map, int h,
                  int w) {
  std::ofstream f(path);
  f.precision(8);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c)
      f << map[static_cast<size_t>(r) * w + c] << (c + 1 == w ? "" : " ");
    f << "\n";
  }
}

int cmd_prepare(const config::RunConfig& cfg, bool force) {
  for (const std::string& spk : {cfg.speaker_x, cfg.speaker_y}) {
    if (spk.empty()) throw std::runtime_error("config: speakers.x and speakers.y required");
    auto ps = pipeline::prepare_speaker(cfg, spk, force);
    std::printf("prepared %s: %zu utterances (train %zu / val %zu / test %zu) -> %s\n",
                spk.c_str(), ps.corpus.utterances.size(), ps.corpus.train.size(),
                ps.corpus.val.size(), ps.corpus.test.size(),
                pipeline::speaker_cache_dir(cfg, spk).c_str());
  }
  return 0;
}

int cmd_train(config::RunConfig cfg, bool resume) {
  auto px = pipeline::load_prepared(cfg, cfg.speaker_x);
  auto py = pipeline::load_prepared(cfg, cfg.speaker_y);
  const std::string dir = run_dir(cfg);
  DirLock lock(dir);
  trainer::TrainState st;
  if (resume && fs::exists(dir + "/latest.ckpt")) {
    st = trainer::load_checkpoint(dir + "/latest.ckpt", cfg.net, cfg.train);
    std::printf("resuming from %s at epoch %d\n", (dir + "/latest.ckpt").c_str(),
                st.epoch);
  } else {
    st = trainer::TrainState::init(cfg.net, cfg.train);
  }
  trainer::System sys(cfg.train, std::move(st));
  trainer::TrainPaths paths{dir, dir + "/ledger.csv"};
  trainer::train(sys, px.corpus, py.corpus, paths, [&](int e) {
    if ((e + 1) % 10 == 0 || e == 0)
      std::printf("epoch %d/%d done\n", e + 1, cfg.train.epochs);
  });
  std::printf("training complete; checkpoints in %s\n", dir.c_str());
  return 0;
}

int cmd_convert(const config::RunConfig& cfg, const std::string& input,
                const std::string& output, const std::string& direction,
                const std::string& ckpt) {
  auto px = pipeline::load_prepared(cfg, cfg.speaker_x);
  auto py = pipeline::load_prepared(cfg, cfg.speaker_y);
  auto st = load_state(cfg, ckpt);
  const bool x2y = direction == "x2y";
  if (!x2y && direction != "y2x")
    throw std::runtime_error("--direction must be x2y or y2x");
  const nets::Generator& gen = x2y ? *st.g_xy : *st.g_yx;
  const auto& src_stats = x2y ? px.stats : py.stats;
  const auto& tgt_stats = x2y ? py.stats : px.stats;
  const std::string tgt = x2y ? cfg.speaker_y : cfg.speaker_x;

  auto w = melio::load_waveform(input, cfg.mel.sample_rate);
  auto mel = melio::mel_transform(w, cfg.mel);
  auto conv = pipeline::convert_mel(mel, src_stats, tgt_stats, gen, tgt);
  auto out = vocoder::synthesize(conv, cfg.voc);
  if (auto dir = fs::path(output).parent_path(); !dir.empty())
    fs::create_directories(dir);
  melio::write_wav(output, out);
  std::printf("converted %s -> %s (%s, %d frames)\n", input.c_str(), output.c_str(),
              direction.c_str(), conv.frames());
  return 0;
}

int cmd_evaluate(const config::RunConfig& cfg, const std::string& ckpt) {
  auto px = pipeline::load_prepared(cfg, cfg.speaker_x);
  auto py = pipeline::load_prepared(cfg, cfg.speaker_y);
  auto st = load_state(cfg, ckpt);
  fs::create_directories(cfg.report_dir);

  auto tests = [&](const pipeline::PreparedSpeaker& p, const std::string& spk) {
    std::vector<std::pair<std::string, melio::Waveform>> out;
    for (int idx : p.corpus.test) {
      const std::string& id = p.corpus.utt_ids[idx];
      out.emplace_back(id, melio::load_waveform(
                               cfg.corpus_root + "/" + spk + "/" + id + ".wav",
                               cfg.mel.sample_rate));
    }
    return out;
  };
  auto src_x = tests(px, cfg.speaker_x);
  auto src_y = tests(py, cfg.speaker_y);
  const std::string dataset = fs::path(cfg.corpus_root).filename().string();
  const std::string gx = gender_of(cfg, cfg.speaker_x);
  const std::string gy = gender_of(cfg, cfg.speaker_y);

  auto converter = [&](const nets::Generator& g, const melio::MelStats& ss,
                       const melio::MelStats& ts, const std::string& tgt) {
    return [&, tgt](const melio::Waveform& w) {
      auto mel = melio::mel_transform(w, cfg.mel);
      auto conv = pipeline::convert_mel(mel, ss, ts, g, tgt);
      return vocoder::synthesize(conv, cfg.voc);
    };
  };
  std::vector<evalkit::MetricReport> reports;
  reports.push_back(evalkit::evaluate_pairing(
      converter(*st.g_xy, px.stats, py.stats, cfg.speaker_y), src_x, src_y,
      gx + "-" + gy, dataset));
  reports.push_back(evalkit::evaluate_pairing(
      converter(*st.g_yx, py.stats, px.stats, cfg.speaker_x), src_y, src_x,
      gy + "-" + gx, dataset));

  const std::string table = evalkit::format_report_table(reports);
  std::ofstream(cfg.report_dir + "/report.txt") << table;
  json jr = json::array();
  for (const auto& r : reports) {
    json e{{"pairing", r.pairing},
           {"dataset", r.dataset},
           {"pseudo_pairs", r.pseudo_pairs},
           {"mcd_mean", r.mcd_mean},
           {"msd_mean", r.msd_mean}};
    for (const auto& [id, v] : r.per_utt_mcd) e["per_utt_mcd"][id] = v;
    for (const auto& [id, v] : r.per_utt_msd) e["per_utt_msd"][id] = v;
    jr.push_back(e);
  }
  std::ofstream(cfg.report_dir + "/report.json") << jr.dump(2) << "\n";

  // Grad-CAM on a converted crop for each target-side discriminator.
  if (!src_x.empty()) {
    auto mel = melio::mel_transform(src_x.front().second, cfg.mel);
    auto conv = pipeline::convert_mel(mel, px.stats, py.stats, *st.g_xy,
                                      cfg.speaker_y);
    auto norm = melio::apply_norm(conv, py.stats);
    Rng crop_rng = make_rng(cfg.seed);
    auto crop = melio::sample_crop(norm, nets::kFrames, crop_rng);
    ag::Tensor t = trainer::crop_to_tensor(crop);
    for (size_t k = 0; k < st.d_y.size(); ++k) {
      auto cam = evalkit::gradcam(*st.d_y[k], t);
      const std::string base =
          cfg.report_dir + "/gradcam_d" + std::to_string(k + 1) + "_" + cam.target_arch;
      write_matrix(base + ".mat", cam.heatmap, nets::kBands, nets::kFrames);
      write_pgm(base + ".pgm", cam.heatmap, nets::kBands, nets::kFrames);
    }
  }
  std::fputs(table.c_str(), stdout);
  std::printf("reports written to %s\n", cfg.report_dir.c_str());
  return 0;
}

int cmd_inspect(const config::RunConfig& cfg, std::string ledger_path) {
  if (ledger_path.empty()) ledger_path = run_dir(cfg) + "/ledger.csv";
  std::ifstream f(ledger_path);
  std::string header;
  if (!f || !std::getline(f, header))
    throw std::runtime_error("ledger is empty or missing: " + ledger_path);
  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  std::vector<int> alpha_idx;
  int sum_idx = -1, epoch_idx = -1, kind_idx = -1;
  for (int i = 0; i < static_cast<int>(cols.size()); ++i) {
    if (cols[i].rfind("alpha", 0) == 0 && cols[i] != "alpha_sum")
      alpha_idx.push_back(i);
    if (cols[i] == "alpha_sum") sum_idx = i;
    if (cols[i] == "epoch") epoch_idx = i;
    if (cols[i] == "kind") kind_idx = i;
  }
  if (alpha_idx.empty() || sum_idx < 0)
    throw std::runtime_error("ledger header lacks alpha columns: " + ledger_path);
  const int n = static_cast<int>(alpha_idx.size());
  const double expected = n == 1 ? 1.0 : n - 1.0;

  std::map<int, std::vector<double>> per_epoch_sum;  // epoch -> alpha accum
  std::map<int, int> per_epoch_count;
  long rows = 0, bad = 0;
  double worst_dev = 0;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> v;
    std::string c;
    while (std::getline(ss, c, ',')) v.push_back(c);
    if (static_cast<int>(v.size()) <= sum_idx) continue;
    if (kind_idx >= 0 && v[kind_idx] == "gen") continue;  // beta rows use their own scale
    ++rows;
    const int epoch = std::stoi(v[epoch_idx]);
    auto& acc = per_epoch_sum[epoch];
    acc.resize(n, 0.0);
    for (int k = 0; k < n; ++k) acc[k] += std::stod(v[alpha_idx[k]]);
    per_epoch_count[epoch]++;
    const double dev = std::fabs(std::stod(v[sum_idx]) - expected);
    worst_dev = std::max(worst_dev, dev);
    if (dev > 1e-6) ++bad;
  }
  if (rows == 0) throw std::runtime_error("ledger has no data rows: " + ledger_path);

  std::printf("ledger: %s (%ld discriminator rows, %d weights per row)\n",
              ledger_path.c_str(), rows, n);
  std::printf("weight-sum invariant: expected %.1f, worst deviation %.3e, %ld rows out of tolerance\n",
              expected, worst_dev, bad);
  std::printf("epoch  mean participation weights\n");
  for (const auto& [e, acc] : per_epoch_sum) {
    std::printf("%5d ", e);
    for (int k = 0; k < n; ++k) std::printf(" %8.5f", acc[k] / per_epoch_count[e]);
    std::printf("\n");
  }
  return bad == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"collective-learning optimal-transport GAN for voice conversion"};
  app.require_subcommand(1);

  std::string config_path, ablation, direction = "x2y", input, output, ckpt,
              ledger;
  bool force = false, resume = false;
  int epochs_override = -1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "run configuration JSON")
        ->required();
  };
  auto* prepare = app.add_subcommand("prepare", "build the mel cache and splits");
  add_common(prepare);
  prepare->add_flag("--force", force, "rebuild even if the cache matches");

  auto* train = app.add_subcommand("train", "run the training loop");
  add_common(train);
  train->add_option("--ablation", ablation, "full|single_disc|simple_average|l2_loss");
  train->add_option("--epochs", epochs_override, "override configured epoch count");
  train->add_flag("--resume", resume, "continue from latest.ckpt");

  auto* convert = app.add_subcommand("convert", "convert one utterance");
  add_common(convert);
  convert->add_option("-i,--input", input, "input wav")->required();
  convert->add_option("-o,--output", output, "output wav")->required();
  convert->add_option("--direction", direction, "x2y (default) or y2x");
  convert->add_option("--checkpoint", ckpt, "checkpoint path (default latest)");
  convert->add_option("--ablation", ablation, "checkpoint family to use");

  auto* evaluate = app.add_subcommand("evaluate", "objective metrics + Grad-CAM");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", ckpt, "checkpoint path (default latest)");
  evaluate->add_option("--ablation", ablation, "checkpoint family to use");

  auto* inspect = app.add_subcommand("inspect", "participation-weight trajectories");
  add_common(inspect);
  inspect->add_option("--ledger", ledger, "ledger csv (default from config)");
  inspect->add_option("--ablation", ablation, "ledger family to use");

  CLI11_PARSE(app, argc, argv);

  try {
    config::RunConfig cfg = config::load_config(config_path);
    if (!ablation.empty()) cfg.train.ablation = trainer::ablation_from_string(ablation);
    if (epochs_override > 0) cfg.train.epochs = epochs_override;
    cfg.train.validate();
    if (prepare->parsed()) return cmd_prepare(cfg, force);
    if (train->parsed()) return cmd_train(cfg, resume);
    if (convert->parsed()) return cmd_convert(cfg, input, output, direction, ckpt);
    if (evaluate->parsed()) return cmd_evaluate(cfg, ckpt);
    if (inspect->parsed()) return cmd_inspect(cfg, ledger);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
