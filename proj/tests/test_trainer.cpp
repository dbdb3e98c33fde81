// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "clot/trainer.hpp"
#include "helpers.hpp"

using namespace clot;
using namespace clot::trainer;
namespace fs = std::filesystem;

namespace {

nets::NetConfig tiny_net() {
  nets::NetConfig c;
  c.gen_base = 4;
  c.gen_res_blocks = 1;
  c.gen_res_width = 8;
  c.dcnn_base = 2;
  c.vit_width = 8;
  c.vit_heads = 2;
  c.vit_blocks = 1;
  c.conf_width = 8;
  c.conf_heads = 2;
  c.conf_blocks = 1;
  c.conf_kernel = 3;
  return c;
}

TrainConfig tiny_train(int epochs = 1) {
  TrainConfig c;
  c.epochs = epochs;
  c.n_discriminators = 2;
  c.checkpoint_every = 1;
  c.sinkhorn.reg = 0.1;
  c.sinkhorn.max_iters = 200;
  c.learning_rate = 1e-3;
  c.seed = 11;
  return c;
}

std::uint64_t params_hash(const nets::ParamMap& p) {
  std::string blob;
  for (const auto& [name, t] : p) {
    blob += name;
    const auto& v = t.node()->val;
    blob.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  return fnv1a64(blob);
}

StepData random_step_data(Rng& rng, const TrainConfig& cfg) {
  melio::MelConfig mcfg;
  melio::MelSpectrogram m;
  m.config = mcfg;
  std::normal_distribution<double> d(0, 1);
  m.values.resize(static_cast<size_t>(80) * 90);
  for (double& v : m.values) v = d(rng);
  melio::MelSpectrogram m2 = m;
  for (double& v : m2.values) v = d(rng);
  return make_step_data(m, m2, cfg, rng);
}

std::string read_file(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("participation weights follow the loss-complement rule") {
  auto pw = participation_weights({1.0, 2.0, 3.0});
  REQUIRE(pw.weights.size() == 3);
  CHECK(pw.weights[0] == doctest::Approx(5.0 / 6));
  CHECK(pw.weights[1] == doctest::Approx(4.0 / 6));
  CHECK(pw.weights[2] == doctest::Approx(3.0 / 6));
  CHECK(pw.weights[0] + pw.weights[1] + pw.weights[2] == doctest::Approx(2.0));
  CHECK(!pw.fallback);
  // best (lowest-loss) member gets the largest weight
  CHECK(pw.weights[0] > pw.weights[1]);
  CHECK(pw.weights[1] > pw.weights[2]);
}

TEST_CASE("participation weights are scale invariant") {
  auto a = participation_weights({0.2, 0.5, 0.8});
  auto b = participation_weights({20, 50, 80});
  for (int k = 0; k < 3; ++k)
    CHECK(a.weights[k] == doctest::Approx(b.weights[k]).epsilon(1e-12));
}

TEST_CASE("participation weight fallbacks") {
  auto one = participation_weights({0.7});
  CHECK(one.weights == std::vector<double>{1.0});
  CHECK(one.fallback);
  auto zero = participation_weights({0.0, 0.0, 0.0});
  CHECK(zero.fallback);
  for (double w : zero.weights) CHECK(w == doctest::Approx(1.0 / 3));
  CHECK_THROWS(participation_weights({}));
  CHECK_THROWS(participation_weights({1.0, std::nan("")}));
}

TEST_CASE("weighted total is the detached inner product") {
  std::vector<Tensor> losses = {Tensor::full({1}, 2.0), Tensor::full({1}, 3.0)};
  Tensor t = weighted_total(losses, {0.5, 0.25});
  CHECK(t.item() == doctest::Approx(1.75));
  CHECK_THROWS(weighted_total(losses, {0.5}));
}

TEST_CASE("adam minimizes a quadratic") {
  Adam opt;
  nets::ParamMap p;
  Tensor w = Tensor::from_vec({2}, {5.0, -3.0}, true);
  p.emplace("w", w);
  for (int i = 0; i < 4000; ++i) {
    ag::zero_grad(w);
    ag::backward(ag::sum(ag::square(w)));
    opt.step(p, "t", 0.01, 0.5, 0.999);
  }
  CHECK(std::fabs(w.node()->val[0]) < 1e-2);
  CHECK(std::fabs(w.node()->val[1]) < 1e-2);
}

TEST_CASE("identity cutoff defaults to a tenth of the epochs") {
  TrainConfig c;
  c.epochs = 1000;
  CHECK(c.identity_cutoff() == 100);
  c.identity_cutoff_epochs = 7;
  CHECK(c.identity_cutoff() == 7);
}

TEST_CASE("cycle and identity losses vanish for identity generators") {
  TrainConfig cfg = tiny_train();
  Rng rng(3);
  std::normal_distribution<double> d(0, 1);
  std::vector<double> xv(80 * 64), yv(80 * 64);
  for (double& v : xv) v = d(rng);
  for (double& v : yv) v = d(rng);
  Tensor x = Tensor::from_vec({1, 80, 64}, xv);
  Tensor y = Tensor::from_vec({1, 80, 64}, yv);
  auto identity_gen = [](const Tensor& in) { return ag::narrow0(in, 0, 1); };
  auto [cyc, id] = cycle_identity_losses(x, y, identity_gen, identity_gen, 0, cfg);
  CHECK(cyc.item() == doctest::Approx(0.0));
  CHECK(id.item() == doctest::Approx(0.0));
  // past the cutoff the identity term is dropped
  auto [cyc2, id2] =
      cycle_identity_losses(x, y, identity_gen, identity_gen, cfg.epochs, cfg);
  CHECK(id2.item() == 0.0);
}

TEST_CASE("discriminator step leaves generators untouched") {
  auto tcfg = tiny_train();
  System sys(tcfg, TrainState::init(tiny_net(), tcfg));
  Rng rng(4);
  auto data = random_step_data(rng, tcfg);
  auto& st = sys.state();
  const auto g1 = params_hash(st.g_xy->params());
  const auto g2 = params_hash(st.g_yx->params());
  const auto dx = params_hash(st.d_x[0]->params());
  auto row = sys.discriminator_step(data, "x2y");
  CHECK(params_hash(st.g_xy->params()) == g1);
  CHECK(params_hash(st.g_yx->params()) == g2);
  // x-family judges the other direction: also untouched here
  CHECK(params_hash(st.d_x[0]->params()) == dx);
  CHECK(row.kind == "disc_y");
  CHECK(row.losses.size() == 2);
  double asum = 0;
  for (double a : row.alpha) asum += a;
  CHECK(asum == doctest::Approx(1.0).epsilon(1e-9));  // n=2 -> sum n-1
}

TEST_CASE("generator step leaves discriminators untouched") {
  auto tcfg = tiny_train();
  System sys(tcfg, TrainState::init(tiny_net(), tcfg));
  Rng rng(5);
  auto to_y = random_step_data(rng, tcfg);
  auto to_x = random_step_data(rng, tcfg);
  auto& st = sys.state();
  std::vector<std::uint64_t> before;
  for (auto& d : st.d_x) before.push_back(params_hash(d->params()));
  for (auto& d : st.d_y) before.push_back(params_hash(d->params()));
  const auto g1 = params_hash(st.g_xy->params());
  auto row = sys.generator_step(to_y, to_x);
  size_t i = 0;
  for (auto& d : st.d_x) CHECK(params_hash(d->params()) == before[i++]);
  for (auto& d : st.d_y) CHECK(params_hash(d->params()) == before[i++]);
  CHECK(params_hash(st.g_xy->params()) != g1);  // generator actually moved
  CHECK(row.kind == "gen");
  CHECK(std::isfinite(row.cycle));
  CHECK(row.cycle > 0.0);
}

TEST_CASE("step counters track the two discriminator families") {
  auto tcfg = tiny_train();
  System sys(tcfg, TrainState::init(tiny_net(), tcfg));
  Rng rng(6);
  for (int s = 0; s < 3; ++s) {
    sys.discriminator_step(random_step_data(rng, tcfg), "x2y");
    sys.discriminator_step(random_step_data(rng, tcfg), "y2x");
  }
  CHECK(sys.state().iter_i == 3);
  CHECK(sys.state().iter_j == 3);
}

TEST_CASE("single-discriminator ablation pins the weight to one") {
  auto tcfg = tiny_train();
  tcfg.ablation = Ablation::single_disc;
  System sys(tcfg, TrainState::init(tiny_net(), tcfg));
  REQUIRE(sys.state().d_x.size() == 1);
  Rng rng(7);
  auto row = sys.discriminator_step(random_step_data(rng, tcfg), "x2y");
  REQUIRE(row.alpha.size() == 1);
  CHECK(row.alpha[0] == 1.0);
}

TEST_CASE("simple-average ablation uses uniform weights") {
  auto tcfg = tiny_train();
  tcfg.ablation = Ablation::simple_average;
  System sys(tcfg, TrainState::init(tiny_net(), tcfg));
  Rng rng(8);
  auto row = sys.discriminator_step(random_step_data(rng, tcfg), "x2y");
  for (double a : row.alpha) CHECK(a == doctest::Approx(0.5));
}

TEST_CASE("l2 ablation runs without transport solves") {
  auto tcfg = tiny_train();
  tcfg.ablation = Ablation::l2_loss;
  System sys(tcfg, TrainState::init(tiny_net(), tcfg));
  Rng rng(9);
  auto row = sys.discriminator_step(random_step_data(rng, tcfg), "x2y");
  CHECK(row.sinkhorn_iters == 0);
  for (double l : row.losses) CHECK(l >= 0.0);  // squared-error losses
}

TEST_CASE("checkpoint round trip is bit identical") {
  auto tcfg = tiny_train();
  auto ncfg = tiny_net();
  System sys(tcfg, TrainState::init(ncfg, tcfg));
  Rng rng(10);
  sys.discriminator_step(random_step_data(rng, tcfg), "x2y");
  const auto dir = fs::temp_directory_path() / "clot_t_ckpt";
  fs::create_directories(dir);
  const std::string p1 = (dir / "a.ckpt").string();
  const std::string p2 = (dir / "b.ckpt").string();
  save_checkpoint(sys.state(), p1);
  auto restored = load_checkpoint(p1, ncfg, tcfg);
  save_checkpoint(restored, p2);
  CHECK(read_file(p1) == read_file(p2));
  CHECK(read_file(p1).size() > 0);
  // architecture mismatch is refused
  auto other = ncfg;
  other.gen_base = 8;
  CHECK_THROWS(load_checkpoint(p1, other, tcfg));
  fs::remove_all(dir);
}

TEST_CASE("training is reproducible across a checkpoint resume") {
  melio::MelConfig mcfg;
  auto cx = testutil::synth_corpus("x", 4, 220.0, mcfg, 21);
  auto cy = testutil::synth_corpus("y", 4, 400.0, mcfg, 22);
  auto ncfg = tiny_net();

  const auto base = fs::temp_directory_path() / "clot_t_resume";
  fs::remove_all(base);
  const std::string dir_a = (base / "a").string();
  const std::string dir_b = (base / "b").string();
  fs::create_directories(dir_a);
  fs::create_directories(dir_b);

  // straight-through: two epochs
  {
    auto tcfg = tiny_train(2);
    tcfg.ablation = Ablation::l2_loss;  // keep the runtime small
    System sys(tcfg, TrainState::init(ncfg, tcfg));
    train(sys, cx, cy, {dir_a, dir_a + "/ledger.csv"});
  }
  // split: one epoch, then resume for the second
  {
    auto tcfg = tiny_train(1);
    tcfg.ablation = Ablation::l2_loss;
    System sys(tcfg, TrainState::init(ncfg, tcfg));
    train(sys, cx, cy, {dir_b, dir_b + "/ledger.csv"});
    auto tcfg2 = tiny_train(2);
    tcfg2.ablation = Ablation::l2_loss;
    auto st = load_checkpoint(dir_b + "/latest.ckpt", ncfg, tcfg2);
    System sys2(tcfg2, std::move(st));
    train(sys2, cx, cy, {dir_b, dir_b + "/ledger.csv"});
  }
  CHECK(read_file(dir_a + "/epoch2.ckpt") == read_file(dir_b + "/epoch2.ckpt"));
  // ledger row counts: 3 rows per step, steps = min(train sizes) per epoch
  std::ifstream la(dir_a + "/ledger.csv");
  int rows = 0;
  std::string line;
  while (std::getline(la, line))
    if (!line.empty()) ++rows;
  const int steps = static_cast<int>(std::min(cx.train.size(), cy.train.size()));
  CHECK(rows == 1 + 2 * steps * 3);  // header + epochs*steps*3
  fs::remove_all(base);
}

TEST_CASE("ledger csv rows match the header arity") {
  auto tcfg = tiny_train();
  System sys(tcfg, TrainState::init(tiny_net(), tcfg));
  Rng rng(12);
  auto row = sys.discriminator_step(random_step_data(rng, tcfg), "x2y");
  const int n = tcfg.effective_n_disc();
  auto count_fields = [](const std::string& s) {
    return 1 + std::count(s.begin(), s.end(), ',');
  };
  CHECK(count_fields(LedgerRow::header(n)) == count_fields(row.csv(n)));
}

TEST_CASE("non-finite losses halt with a checkpoint") {
  melio::MelConfig mcfg;
  auto cx = testutil::synth_corpus("x", 4, 220.0, mcfg, 31);
  auto cy = testutil::synth_corpus("y", 4, 400.0, mcfg, 32);
  auto tcfg = tiny_train(1);
  tcfg.ablation = Ablation::l2_loss;
  tcfg.learning_rate = std::nan("");  // poisons the first optimizer update
  auto ncfg = tiny_net();
  const auto dir = fs::temp_directory_path() / "clot_t_halt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  System sys(tcfg, TrainState::init(ncfg, tcfg));
  CHECK_THROWS(train(sys, cx, cy, {dir.string(), dir.string() + "/ledger.csv"}));
  CHECK(fs::exists(dir / "halt.ckpt"));
  fs::remove_all(dir);
}
