// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.
//
// Collective learning loop: per-discriminator OT losses, participation
// weights, weighted totals and alternating x->y / y->x updates, plus the
// generator adversarial / cycle / identity objectives, Adam, checkpoints
// and the append-only step ledger.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "clot/melio.hpp"
#include "clot/nets.hpp"
#include "clot/otcore.hpp"

namespace clot::trainer {

using ag::Tensor;

enum class Ablation { full, single_disc, simple_average, l2_loss };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::single_disc: return "single_disc";
    case Ablation::simple_average: return "simple_average";
    default: return "l2_loss";
  }
}

inline Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "single_disc") return Ablation::single_disc;
  if (s == "simple_average") return Ablation::simple_average;
  if (s == "l2_loss") return Ablation::l2_loss;
  throw std::invalid_argument("unknown ablation: " + s);
}

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 1;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double lambda_cyc = 10.0;
  double lambda_id = 5.0;
  int identity_cutoff_epochs = -1;  // -1 -> first 10% of epochs
  int n_discriminators = 3;
  Ablation ablation = Ablation::full;
  otcore::LossForm eq3_form = otcore::LossForm::as_written;
  otcore::SinkhornConfig sinkhorn;
  int ot_chunks = 4;
  int crop_width = 64;
  int max_mask_frames = 16;
  int checkpoint_every = 50;
  std::uint64_t seed = 1;
  double fallback_eps = 1e-12;
  bool negate_disc_loss = false;   // critic-maximization convention
  bool aux_lsgan_disc = false;     // auxiliary least-squares term on the head
  bool reuse_alpha_for_beta = false;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs >= 1");
    if (lambda_cyc < 0 || lambda_id < 0)
      throw std::invalid_argument("TrainConfig: lambdas must be >= 0");
    if (n_discriminators < 1)
      throw std::invalid_argument("TrainConfig: need at least one discriminator");
    sinkhorn.validate();
  }
  int identity_cutoff() const {
    return identity_cutoff_epochs >= 0 ? identity_cutoff_epochs
                                       : std::max(1, epochs / 10);
  }
  int effective_n_disc() const {
    return ablation == Ablation::single_disc ? 1 : n_discriminators;
  }
};

// ---- participation weights -------------------------------------------------

struct ParticipationWeights {
  std::vector<double> weights;
  std::vector<double> source_losses;
  bool fallback = false;
};

// alpha^k = (L_tot - L^k) / L_tot; sums to n-1. |L_tot| under fallback_eps
// gives uniform 1/n weights; the single-discriminator case pins weight 1.
inline ParticipationWeights participation_weights(const std::vector<double>& losses,
                                                  double fallback_eps = 1e-12) {
  const int n = static_cast<int>(losses.size());
  if (n < 1) throw std::invalid_argument("participation_weights: empty losses");
  for (double l : losses)
    if (!std::isfinite(l))
      throw std::invalid_argument("participation_weights: non-finite loss");
  ParticipationWeights pw;
  pw.source_losses = losses;
  if (n == 1) {
    pw.weights = {1.0};
    pw.fallback = true;
    return pw;
  }
  double tot = 0;
  for (double l : losses) tot += l;
  if (std::fabs(tot) <= fallback_eps) {
    pw.weights.assign(n, 1.0 / n);
    pw.fallback = true;
    return pw;
  }
  pw.weights.resize(n);
  for (int k = 0; k < n; ++k) pw.weights[k] = (tot - losses[k]) / tot;
  return pw;
}

// Inner product with detached weights; gradient flows through losses only.
inline Tensor weighted_total(const std::vector<Tensor>& losses,
                             const std::vector<double>& weights) {
  if (losses.size() != weights.size())
    throw std::invalid_argument("weighted_total: length mismatch");
  Tensor acc;
  for (size_t k = 0; k < losses.size(); ++k) {
    Tensor term = ag::scale(losses[k], weights[k]);
    acc = acc.defined() ? ag::add(acc, term) : term;
  }
  return acc;
}

// ---- optimizer -------------------------------------------------------------

class Adam {
 public:
  struct Slot {
    std::vector<double> m, v;
  };

  void step(nets::ParamMap& params, const std::string& prefix, double lr,
            double b1, double b2, double eps = 1e-8) {
    ++t_;
    for (auto& [name, p] : params) {
      auto& slot = slots_[prefix + "/" + name];
      auto& val = p.val();
      auto& grad = p.grad();
      if (slot.m.size() != val.size()) {
        slot.m.assign(val.size(), 0.0);
        slot.v.assign(val.size(), 0.0);
      }
      const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
      for (size_t i = 0; i < val.size(); ++i) {
        slot.m[i] = b1 * slot.m[i] + (1 - b1) * grad[i];
        slot.v[i] = b2 * slot.v[i] + (1 - b2) * grad[i] * grad[i];
        val[i] -= lr * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + eps);
      }
    }
  }

  std::int64_t steps() const { return t_; }
  std::map<std::string, Slot>& slots() { return slots_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  std::map<std::string, Slot> slots_;
  std::int64_t t_ = 0;
};

// ---- state -----------------------------------------------------------------

struct LedgerRow {
  int epoch = 0;
  std::int64_t step = 0;
  std::string kind;       // disc_y, disc_x, gen
  std::string direction;  // x2y / y2x / both
  std::vector<double> losses;
  std::vector<double> alpha;
  double weighted = 0;
  double cycle = 0;
  double identity = 0;
  int sinkhorn_iters = 0;

  static std::string header(int n) {
    std::string h = "epoch,step,kind,direction";
    for (int k = 0; k < n; ++k) h += ",loss" + std::to_string(k + 1);
    for (int k = 0; k < n; ++k) h += ",alpha" + std::to_string(k + 1);
    h += ",alpha_sum,weighted,cycle,identity,sinkhorn_iters";
    return h;
  }
  std::string csv(int n) const {
    std::ostringstream oss;
    oss.precision(12);
    oss << epoch << "," << step << "," << kind << "," << direction;
    for (int k = 0; k < n; ++k) oss << "," << (k < (int)losses.size() ? losses[k] : 0.0);
    double asum = 0;
    for (int k = 0; k < n; ++k) {
      double a = k < (int)alpha.size() ? alpha[k] : 0.0;
      asum += a;
      oss << "," << a;
    }
    oss << "," << asum << "," << weighted << "," << cycle << "," << identity << ","
        << sinkhorn_iters;
    return oss.str();
  }
};

struct TrainState {
  nets::NetConfig net_cfg;
  std::unique_ptr<nets::Generator> g_xy, g_yx;
  std::vector<std::unique_ptr<nets::Discriminator>> d_x, d_y;
  Adam opt_g, opt_d;
  std::int64_t iter_i = 0;  // D_y-family updates
  std::int64_t iter_j = 0;  // D_x-family updates
  int epoch = 0;
  Rng rng{0};

  static TrainState init(const nets::NetConfig& ncfg, const TrainConfig& tcfg) {
    TrainState st;
    st.net_cfg = ncfg;
    st.rng = make_rng(tcfg.seed);
    st.g_xy = std::make_unique<nets::Generator>(ncfg, st.rng);
    st.g_yx = std::make_unique<nets::Generator>(ncfg, st.rng);
    const int n = tcfg.effective_n_disc();
    const nets::ArchKind kinds[3] = {nets::ArchKind::dcnn, nets::ArchKind::vit,
                                     nets::ArchKind::conformer};
    for (int k = 0; k < n; ++k) {
      st.d_x.push_back(std::make_unique<nets::Discriminator>(kinds[k % 3], ncfg, st.rng));
      st.d_y.push_back(std::make_unique<nets::Discriminator>(kinds[k % 3], ncfg, st.rng));
    }
    return st;
  }

  void zero_all_grads() {
    auto zero = [](nets::ParamMap& m) {
      for (auto& [k, t] : m) ag::zero_grad(t);
    };
    zero(g_xy->params());
    zero(g_yx->params());
    for (auto& d : d_x) zero(d->params());
    for (auto& d : d_y) zero(d->params());
  }
};

// ---- loss pieces -----------------------------------------------------------

inline Tensor crop_to_tensor(const std::vector<double>& crop) {
  return Tensor::from_vec({1, nets::kBands, nets::kFrames}, crop, false);
}

inline Tensor gen_input_tensor(const melio::GeneratorInput& gi) {
  std::vector<double> data;
  data.reserve(gi.masked_mel.size() * 2);
  data.insert(data.end(), gi.masked_mel.begin(), gi.masked_mel.end());
  data.insert(data.end(), gi.mask.begin(), gi.mask.end());
  return Tensor::from_vec({2, nets::kBands, nets::kFrames}, std::move(data), false);
}

// Wrap an already-generated 1x80x64 mel as a generator input with all-ones mask.
inline Tensor as_gen_input(const Tensor& mel) {
  Tensor ones = Tensor::full({1, nets::kBands, nets::kFrames}, 1.0, false);
  return ag::concat0(mel, ones);
}

// 0.5 * mean((D(fake) - 1)^2), the per-discriminator LSGAN generator term.
inline Tensor lsgan_gen_term(const nets::DiscOutput& out) {
  return ag::scale(ag::mean(ag::square(ag::add_scalar(out.realness, -1.0))), 0.5);
}

// Cycle and identity L1 losses; generators passed as callables so tests can
// substitute stubs. Inputs are unmasked crops.
template <typename Gxy, typename Gyx>
inline std::pair<Tensor, Tensor> cycle_identity_losses(const Tensor& x_crop,
                                                       const Tensor& y_crop,
                                                       Gxy&& g_xy, Gyx&& g_yx,
                                                       int epoch,
                                                       const TrainConfig& cfg) {
  Tensor fake_y = g_xy(as_gen_input(x_crop));
  Tensor cyc_x = g_yx(as_gen_input(fake_y));
  Tensor fake_x = g_yx(as_gen_input(y_crop));
  Tensor cyc_y = g_xy(as_gen_input(fake_x));
  Tensor l_cyc = ag::add(ag::mean(ag::abs_(ag::sub(cyc_x, x_crop))),
                         ag::mean(ag::abs_(ag::sub(cyc_y, y_crop))));
  Tensor l_id;
  if (epoch < cfg.identity_cutoff()) {
    Tensor id_y = g_xy(as_gen_input(y_crop));
    Tensor id_x = g_yx(as_gen_input(x_crop));
    l_id = ag::add(ag::mean(ag::abs_(ag::sub(id_y, y_crop))),
                   ag::mean(ag::abs_(ag::sub(id_x, x_crop))));
  } else {
    l_id = Tensor::zeros({1});
  }
  return {l_cyc, l_id};
}

// ---- steps -----------------------------------------------------------------

struct StepData {
  // two independent crops per class, masks applied on the source side
  Tensor real_a, real_b;            // target-class crops [1,80,64]
  Tensor source_in_a, source_in_b;  // generator inputs [2,80,64]
};

class System {
 public:
  System(TrainConfig cfg, TrainState state)
      : cfg_(std::move(cfg)), st_(std::move(state)) {
    cfg_.validate();
  }

  TrainConfig& config() { return cfg_; }
  const TrainConfig& config() const { return cfg_; }
  TrainState& state() { return st_; }

  // One collective-learning discriminator update for the family judging
  // `direction` ("x2y" trains the D_y family on real y vs G_xy(x)).
  LedgerRow discriminator_step(const StepData& data, const std::string& direction) {
    auto& gen = direction == "x2y" ? *st_.g_xy : *st_.g_yx;
    auto& discs = direction == "x2y" ? st_.d_y : st_.d_x;
    const int n = static_cast<int>(discs.size());

    Tensor fake_a = gen.forward(data.source_in_a).detach();
    Tensor fake_b = gen.forward(data.source_in_b).detach();

    st_.zero_all_grads();
    std::vector<Tensor> losses;
    LedgerRow row;
    for (int k = 0; k < n; ++k) {
      Tensor loss_k;
      if (cfg_.ablation == Ablation::l2_loss) {
        auto target = [&](const Tensor& mel, double tgt) {
          auto out = discs[k]->forward(mel);
          return ag::scale(ag::mean(ag::square(ag::add_scalar(out.realness, -tgt))), 0.5);
        };
        loss_k = ag::scale(ag::add(ag::add(target(data.real_a, 1.0), target(data.real_b, 1.0)),
                                   ag::add(target(fake_a, 0.0), target(fake_b, 0.0))),
                           0.5);
      } else {
        auto chunks = [&](const Tensor& mel) {
          auto out = discs[k]->forward(mel);
          return otcore::chunk_embedding_t(out.embedding, cfg_.ot_chunks);
        };
        loss_k = otcore::disc_ot_loss_t(chunks(data.real_a), chunks(data.real_b),
                                        chunks(fake_a), chunks(fake_b), cfg_.sinkhorn,
                                        cfg_.eq3_form, &row.sinkhorn_iters);
        if (cfg_.aux_lsgan_disc) {
          auto ls = [&](const Tensor& mel, double tgt) {
            auto out = discs[k]->forward(mel);
            return ag::scale(ag::mean(ag::square(ag::add_scalar(out.realness, -tgt))), 0.5);
          };
          loss_k = ag::add(loss_k, ag::add(ls(data.real_a, 1.0), ls(fake_a, 0.0)));
        }
      }
      if (!std::isfinite(loss_k.item()))
        throw std::runtime_error("discriminator_step: non-finite loss (k=" +
                                 std::to_string(k) + ", direction=" + direction + ")");
      losses.push_back(loss_k);
      row.losses.push_back(loss_k.item());
    }

    ParticipationWeights pw;
    if (cfg_.ablation == Ablation::simple_average) {
      pw.weights.assign(n, 1.0 / n);
      pw.source_losses = row.losses;
    } else {
      pw = participation_weights(row.losses, cfg_.fallback_eps);
    }
    Tensor total = weighted_total(losses, pw.weights);
    if (cfg_.negate_disc_loss) total = ag::scale(total, -1.0);
    ag::backward(total);
    for (auto& d : discs)
      st_.opt_d.step(d->params(), disc_prefix(direction, &d - discs.data()),
                     cfg_.learning_rate, cfg_.adam_beta1, cfg_.adam_beta2);

    row.kind = direction == "x2y" ? "disc_y" : "disc_x";
    row.direction = direction;
    row.alpha = pw.weights;
    row.weighted = total.item();
    row.epoch = st_.epoch;
    if (direction == "x2y")
      row.step = ++st_.iter_i;
    else
      row.step = ++st_.iter_j;
    return row;
  }

  // Per-k LSGAN adversarial terms plus beta weights for one direction.
  // Returns (total tensor, beta, per-k term values).
  std::tuple<Tensor, ParticipationWeights, std::vector<double>> generator_adv_loss(
      const Tensor& source_input, const std::string& direction,
      const std::vector<double>* alpha_reuse = nullptr) {
    auto& gen = direction == "x2y" ? *st_.g_xy : *st_.g_yx;
    auto& discs = direction == "x2y" ? st_.d_y : st_.d_x;
    Tensor fake = gen.forward(source_input);
    std::vector<Tensor> terms;
    std::vector<double> values;
    for (auto& d : discs) {
      Tensor t = lsgan_gen_term(d->forward(fake));
      if (!std::isfinite(t.item()))
        throw std::runtime_error("generator_adv_loss: non-finite term");
      terms.push_back(t);
      values.push_back(t.item());
    }
    ParticipationWeights beta;
    if (cfg_.reuse_alpha_for_beta && alpha_reuse) {
      beta.weights = *alpha_reuse;
      beta.source_losses = values;
    } else if (cfg_.ablation == Ablation::simple_average) {
      beta.weights.assign(values.size(), 1.0 / values.size());
      beta.source_losses = values;
    } else {
      beta = participation_weights(values, cfg_.fallback_eps);
    }
    return {weighted_total(terms, beta.weights), beta, values};
  }

  // Generator update across both directions: adversarial + cycle + identity.
  LedgerRow generator_step(const StepData& to_y, const StepData& to_x) {
    st_.zero_all_grads();
    auto [adv_xy, beta_y, vals_y] = generator_adv_loss(to_y.source_in_a, "x2y");
    auto [adv_yx, beta_x, vals_x] = generator_adv_loss(to_x.source_in_a, "y2x");
    // unmasked crops for cycle/identity: real_a of the opposite step data
    Tensor x_crop = to_x.real_a;
    Tensor y_crop = to_y.real_a;
    auto [l_cyc, l_id] = cycle_identity_losses(
        x_crop, y_crop, [&](const Tensor& in) { return st_.g_xy->forward(in); },
        [&](const Tensor& in) { return st_.g_yx->forward(in); }, st_.epoch, cfg_);
    Tensor total = ag::add(ag::add(adv_xy, adv_yx),
                           ag::add(ag::scale(l_cyc, cfg_.lambda_cyc),
                                   ag::scale(l_id, cfg_.lambda_id)));
    if (!std::isfinite(total.item()))
      throw std::runtime_error("generator_step: non-finite total loss");
    ag::backward(total);
    st_.opt_g.step(st_.g_xy->params(), "g_xy", cfg_.learning_rate, cfg_.adam_beta1,
                   cfg_.adam_beta2);
    st_.opt_g.step(st_.g_yx->params(), "g_yx", cfg_.learning_rate, cfg_.adam_beta1,
                   cfg_.adam_beta2);

    LedgerRow row;
    row.kind = "gen";
    row.direction = "both";
    row.epoch = st_.epoch;
    row.step = st_.iter_i;
    row.losses = vals_y;
    row.losses.insert(row.losses.end(), vals_x.begin(), vals_x.end());
    row.losses.resize(cfg_.effective_n_disc());  // ledger keeps x2y terms
    row.alpha = beta_y.weights;
    row.weighted = total.item();
    row.cycle = l_cyc.item();
    row.identity = l_id.item();
    return row;
  }

 private:
  static std::string disc_prefix(const std::string& direction, std::ptrdiff_t k) {
    return (direction == "x2y" ? "d_y" : "d_x") + std::to_string(k);
  }

  TrainConfig cfg_;
  TrainState st_;
};

// ---- checkpointing ---------------------------------------------------------

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
inline void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_str(std::istream& is) {
  std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}
inline void write_vec(std::ostream& os, const std::vector<double>& v) {
  write_u64(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * 8));
}
inline std::vector<double> read_vec(std::istream& is) {
  std::uint64_t n = read_u64(is);
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
  return v;
}

inline void write_params(std::ostream& os, const nets::ParamMap& p) {
  write_u64(os, p.size());
  for (const auto& [name, t] : p) {
    write_str(os, name);
    write_u64(os, t.shape().size());
    for (int d : t.shape()) write_u64(os, static_cast<std::uint64_t>(d));
    write_vec(os, t.val());
  }
}
inline void read_params(std::istream& is, nets::ParamMap& p) {
  std::uint64_t n = read_u64(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = read_str(is);
    std::uint64_t rank = read_u64(is);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u64(is));
    std::vector<double> val = read_vec(is);
    auto it = p.find(name);
    if (it == p.end() || it->second.shape() != shape)
      throw std::runtime_error("checkpoint parameter mismatch: " + name);
    it->second.val() = std::move(val);
  }
}
inline void write_adam(std::ostream& os, Adam& a) {
  write_u64(os, static_cast<std::uint64_t>(a.steps()));
  write_u64(os, a.slots().size());
  for (auto& [name, slot] : a.slots()) {
    write_str(os, name);
    write_vec(os, slot.m);
    write_vec(os, slot.v);
  }
}
inline void read_adam(std::istream& is, Adam& a) {
  a.set_steps(static_cast<std::int64_t>(read_u64(is)));
  std::uint64_t n = read_u64(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = read_str(is);
    auto& slot = a.slots()[name];
    slot.m = read_vec(is);
    slot.v = read_vec(is);
  }
}

}  // namespace detail

constexpr char kCkptMagic[8] = {'C', 'L', 'O', 'T', 'C', 'K', 'P', '1'};

inline void save_checkpoint(TrainState& st, const std::string& path) {
  namespace fs = std::filesystem;
  if (auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kCkptMagic, 8);
  detail::write_u64(os, st.net_cfg.hash());
  detail::write_u64(os, static_cast<std::uint64_t>(st.epoch));
  detail::write_u64(os, static_cast<std::uint64_t>(st.iter_i));
  detail::write_u64(os, static_cast<std::uint64_t>(st.iter_j));
  detail::write_str(os, rng_state_string(st.rng));
  detail::write_u64(os, st.d_x.size());
  detail::write_params(os, st.g_xy->params());
  detail::write_params(os, st.g_yx->params());
  for (auto& d : st.d_x) detail::write_params(os, d->params());
  for (auto& d : st.d_y) detail::write_params(os, d->params());
  detail::write_adam(os, st.opt_g);
  detail::write_adam(os, st.opt_d);
  if (!os) throw std::runtime_error("short write on checkpoint: " + path);
}

// Restores into a freshly initialized state; refuses architecture mismatches.
inline TrainState load_checkpoint(const std::string& path, const nets::NetConfig& ncfg,
                                  const TrainConfig& tcfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (std::memcmp(magic, kCkptMagic, 8))
    throw std::runtime_error("not a checkpoint file: " + path);
  const std::uint64_t hash = detail::read_u64(is);
  if (hash != ncfg.hash())
    throw std::runtime_error("checkpoint architecture-config hash mismatch");
  TrainState st = TrainState::init(ncfg, tcfg);
  st.epoch = static_cast<int>(detail::read_u64(is));
  st.iter_i = static_cast<std::int64_t>(detail::read_u64(is));
  st.iter_j = static_cast<std::int64_t>(detail::read_u64(is));
  rng_restore(st.rng, detail::read_str(is));
  const std::uint64_t n_disc = detail::read_u64(is);
  if (n_disc != st.d_x.size())
    throw std::runtime_error("checkpoint discriminator count mismatch");
  detail::read_params(is, st.g_xy->params());
  detail::read_params(is, st.g_yx->params());
  for (auto& d : st.d_x) detail::read_params(is, d->params());
  for (auto& d : st.d_y) detail::read_params(is, d->params());
  detail::read_adam(is, st.opt_g);
  detail::read_adam(is, st.opt_d);
  if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  return st;
}

// ---- training driver -------------------------------------------------------

struct TrainPaths {
  std::string checkpoint_dir;
  std::string ledger_path;
};

// Draws two independent crops+masks per class per step ("independently
// sampled" mini-batches X/X' and Y/Y').
inline StepData make_step_data(const melio::MelSpectrogram& real_src,
                               const melio::MelSpectrogram& real_tgt,
                               const TrainConfig& cfg, Rng& rng) {
  StepData d;
  auto crop_t = [&](const melio::MelSpectrogram& m) {
    return crop_to_tensor(melio::sample_crop(m, cfg.crop_width, rng));
  };
  auto gen_in = [&](const melio::MelSpectrogram& m) {
    auto crop = melio::sample_crop(m, cfg.crop_width, rng);
    auto mask = melio::sample_fif_mask(cfg.crop_width, cfg.max_mask_frames, rng);
    return gen_input_tensor(melio::make_gen_input(crop, mask));
  };
  d.real_a = crop_t(real_tgt);
  d.real_b = crop_t(real_tgt);
  d.source_in_a = gen_in(real_src);
  d.source_in_b = gen_in(real_src);
  return d;
}

// Full Algorithm-1 training loop over two speaker corpora.
inline std::vector<LedgerRow> train(System& sys, const melio::SpeakerCorpus& cx,
                                    const melio::SpeakerCorpus& cy,
                                    const TrainPaths& paths,
                                    const std::function<void(int)>& on_epoch = {}) {
  auto& cfg = sys.config();
  auto& st = sys.state();
  if (cx.train.empty() || cy.train.empty())
    throw std::invalid_argument("train: both corpora need non-empty train splits");

  std::ofstream ledger;
  if (!paths.ledger_path.empty()) {
    namespace fs = std::filesystem;
    if (auto dir = fs::path(paths.ledger_path).parent_path(); !dir.empty())
      fs::create_directories(dir);
    const bool fresh = !fs::exists(paths.ledger_path) ||
                       fs::file_size(paths.ledger_path) == 0;
    ledger.open(paths.ledger_path, std::ios::app);
    if (fresh) ledger << LedgerRow::header(cfg.effective_n_disc()) << "\n";
  }
  std::vector<LedgerRow> history;
  auto emit = [&](const LedgerRow& row) {
    history.push_back(row);
    if (ledger) ledger << row.csv(cfg.effective_n_disc()) << "\n";
  };

  const int steps_per_epoch =
      static_cast<int>(std::min(cx.train.size(), cy.train.size()));
  const int start_epoch = st.epoch;
  for (int e = start_epoch; e < cfg.epochs; ++e) {
    st.epoch = e;
    for (int s = 0; s < steps_per_epoch; ++s) {
      std::uniform_int_distribution<int> dx(0, static_cast<int>(cx.train.size()) - 1);
      std::uniform_int_distribution<int> dy(0, static_cast<int>(cy.train.size()) - 1);
      const auto& mx = cx.utterances[cx.train[dx(st.rng)]];
      const auto& my = cy.utterances[cy.train[dy(st.rng)]];
      StepData to_y = make_step_data(mx, my, cfg, st.rng);  // real y, fake from x
      StepData to_x = make_step_data(my, mx, cfg, st.rng);  // real x, fake from y
      try {
        emit(sys.discriminator_step(to_y, "x2y"));
        emit(sys.discriminator_step(to_x, "y2x"));
        emit(sys.generator_step(to_y, to_x));
      } catch (const std::exception&) {
        if (!paths.checkpoint_dir.empty())
          save_checkpoint(st, paths.checkpoint_dir + "/halt.ckpt");
        throw;
      }
    }
    if (!paths.checkpoint_dir.empty() &&
        ((e + 1) % cfg.checkpoint_every == 0 || e + 1 == cfg.epochs)) {
      st.epoch = e + 1;
      save_checkpoint(st, paths.checkpoint_dir + "/epoch" + std::to_string(e + 1) + ".ckpt");
      save_checkpoint(st, paths.checkpoint_dir + "/latest.ckpt");
    }
    if (on_epoch) on_epoch(e);
  }
  st.epoch = cfg.epochs;
  return history;
}

}  // namespace clot::trainer
