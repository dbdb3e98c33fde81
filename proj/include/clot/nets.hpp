// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.
//
// Generator and the three discriminator families. Every discriminator takes
// the same 1x80x64 mel and returns a realness readout plus the flattened
// last hidden layer as its feature embedding.

#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "clot/common.hpp"
#include "clot/tensor.hpp"

namespace clot::nets {

using ag::Tensor;

constexpr int kBands = 80;
constexpr int kFrames = 64;

enum class ArchKind { dcnn, vit, conformer };

inline const char* arch_name(ArchKind k) {
  switch (k) {
    case ArchKind::dcnn: return "dcnn";
    case ArchKind::vit: return "vit";
    default: return "conformer";
  }
}

struct NetConfig {
  // generator (Mask-CycleGAN-VC style 2D-1D-2D topology; widths desk-scaled)
  int gen_base = 16;       // entry GLU output channels
  int gen_res_blocks = 6;  // 1-D residual blocks
  int gen_res_width = 64;  // 1-D bottleneck width
  // dcnn discriminator
  int dcnn_base = 16;
  // vit discriminator
  int vit_patch = 8;
  int vit_width = 64;
  int vit_heads = 4;
  int vit_blocks = 4;
  // conformer discriminator
  int conf_width = 64;
  int conf_heads = 4;
  int conf_blocks = 4;
  int conf_kernel = 7;

  void validate() const {
    if (kBands % vit_patch || kFrames % vit_patch)
      throw std::invalid_argument("NetConfig: 80 and 64 must be divisible by vit_patch");
    if (vit_width % vit_heads || conf_width % conf_heads)
      throw std::invalid_argument("NetConfig: width must be divisible by heads");
    if (conf_kernel % 2 == 0)
      throw std::invalid_argument("NetConfig: conf_kernel must be odd");
  }
  std::string canonical() const {
    std::ostringstream oss;
    oss << "gb=" << gen_base << ";gr=" << gen_res_blocks << ";gw=" << gen_res_width
        << ";db=" << dcnn_base << ";vp=" << vit_patch << ";vw=" << vit_width
        << ";vh=" << vit_heads << ";vb=" << vit_blocks << ";cw=" << conf_width
        << ";ch=" << conf_heads << ";cb=" << conf_blocks << ";ck=" << conf_kernel;
    return oss.str();
  }
  std::uint64_t hash() const { return fnv1a64(canonical()); }
};

struct DiscOutput {
  Tensor realness;   // patch grid for dcnn, scalar for vit/conformer
  Tensor embedding;  // flattened last hidden layer, length % 4 == 0
};

// Named parameter collection; map keeps serialization order deterministic.
using ParamMap = std::map<std::string, Tensor>;

namespace detail {

inline Tensor conv_w(ParamMap& p, const std::string& name, std::vector<int> shape,
                     Rng& rng) {
  std::int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  auto t = Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / fan_in), true);
  p.emplace(name, t);
  return t;
}
inline Tensor bias(ParamMap& p, const std::string& name, int n) {
  auto t = Tensor::zeros({n}, true);
  p.emplace(name, t);
  return t;
}
inline Tensor ones_p(ParamMap& p, const std::string& name, int n) {
  auto t = Tensor::full({n}, 1.0, true);
  p.emplace(name, t);
  return t;
}
inline Tensor small_randn(ParamMap& p, const std::string& name, std::vector<int> shape,
                          Rng& rng) {
  auto t = Tensor::randn(std::move(shape), rng, 0.02, true);
  p.emplace(name, t);
  return t;
}

inline Tensor param(const ParamMap& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::runtime_error("missing parameter: " + name);
  return it->second;
}

// Multi-head self-attention on [T,D]; weights wq/wk/wv/wo are [D,D].
inline Tensor mhsa(const ParamMap& p, const std::string& pre, const Tensor& x, int heads) {
  const int D = x.shape()[1];
  const int dh = D / heads;
  Tensor q = ag::linear(x, param(p, pre + ".wq"), param(p, pre + ".bq"));
  Tensor k = ag::linear(x, param(p, pre + ".wk"), param(p, pre + ".bk"));
  Tensor v = ag::linear(x, param(p, pre + ".wv"), param(p, pre + ".bv"));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = ag::slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = ag::slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = ag::slice_cols(v, h * dh, (h + 1) * dh);
    Tensor attn = ag::softmax_rows(ag::scale(ag::matmul(qh, ag::transpose2d(kh)), sc));
    outs.push_back(ag::matmul(attn, vh));
  }
  Tensor cat = ag::concat_cols(outs);
  return ag::linear(cat, param(p, pre + ".wo"), param(p, pre + ".bo"));
}

}  // namespace detail

// ---- generator -------------------------------------------------------------
//
// 2-D GLU entry conv, two downsample blocks, 2D->1D reshape, 1-D residual
// bottleneck, 1D->2D reshape, two sub-pixel upsample blocks, instance norm
// throughout.
class Generator {
 public:
  Generator(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int B = cfg.gen_base, W1 = cfg.gen_res_width;
    const int mid = 4 * B * (kBands / 4);  // flattened channel count at 20x16
    detail::conv_w(p_, "entry.w", {2 * B, 2, 5, 5}, rng);
    detail::bias(p_, "entry.b", 2 * B);
    detail::conv_w(p_, "down1.w", {4 * B, B, 4, 4}, rng);
    detail::bias(p_, "down1.b", 4 * B);
    detail::ones_p(p_, "down1.g", 2 * B);
    detail::bias(p_, "down1.be", 2 * B);
    detail::conv_w(p_, "down2.w", {8 * B, 2 * B, 4, 4}, rng);
    detail::bias(p_, "down2.b", 8 * B);
    detail::ones_p(p_, "down2.g", 4 * B);
    detail::bias(p_, "down2.be", 4 * B);
    detail::conv_w(p_, "to1d.w", {W1, mid, 1}, rng);
    detail::bias(p_, "to1d.b", W1);
    detail::ones_p(p_, "to1d.g", W1);
    detail::bias(p_, "to1d.be", W1);
    for (int i = 0; i < cfg.gen_res_blocks; ++i) {
      const std::string pre = "res" + std::to_string(i);
      detail::conv_w(p_, pre + ".c1.w", {2 * W1, W1, 3}, rng);
      detail::bias(p_, pre + ".c1.b", 2 * W1);
      detail::ones_p(p_, pre + ".g1", W1);
      detail::bias(p_, pre + ".be1", W1);
      detail::conv_w(p_, pre + ".c2.w", {W1, W1, 3}, rng);
      detail::bias(p_, pre + ".c2.b", W1);
      detail::ones_p(p_, pre + ".g2", W1);
      detail::bias(p_, pre + ".be2", W1);
    }
    detail::conv_w(p_, "from1d.w", {mid, W1, 1}, rng);
    detail::bias(p_, "from1d.b", mid);
    detail::ones_p(p_, "from1d.g", mid);
    detail::bias(p_, "from1d.be", mid);
    detail::conv_w(p_, "up1.w", {16 * B, 4 * B, 3, 3}, rng);
    detail::bias(p_, "up1.b", 16 * B);
    detail::ones_p(p_, "up1.g", 2 * B);
    detail::bias(p_, "up1.be", 2 * B);
    detail::conv_w(p_, "up2.w", {8 * B, 2 * B, 3, 3}, rng);
    detail::bias(p_, "up2.b", 8 * B);
    detail::ones_p(p_, "up2.g", B);
    detail::bias(p_, "up2.be", B);
    detail::conv_w(p_, "out.w", {1, B, 5, 5}, rng);
    detail::bias(p_, "out.b", 1);
  }

  // input: [2,80,64] (masked mel + mask), output: [1,80,64]
  Tensor forward(const Tensor& input) const {
    if (input.shape() != std::vector<int>{2, kBands, kFrames})
      throw std::invalid_argument("generator_forward: input must be 2x80x64");
    using namespace ag;
    const auto P = [&](const std::string& n) { return detail::param(p_, n); };
    const int B = cfg_.gen_base, W1 = cfg_.gen_res_width;
    const int mid = 4 * B * (kBands / 4);

    Tensor h = glu0(conv2d(input, P("entry.w"), P("entry.b"), 1, 1, 2, 2));
    h = conv2d(h, P("down1.w"), P("down1.b"), 2, 2, 1, 1);
    h = instance_norm(glu0(h), P("down1.g"), P("down1.be"));
    h = conv2d(h, P("down2.w"), P("down2.b"), 2, 2, 1, 1);
    h = instance_norm(glu0(h), P("down2.g"), P("down2.be"));

    const int t4 = kFrames / 4;
    h = reshape(h, {mid, t4});
    h = instance_norm(conv1d(h, P("to1d.w"), P("to1d.b")), P("to1d.g"), P("to1d.be"));
    for (int i = 0; i < cfg_.gen_res_blocks; ++i) {
      const std::string pre = "res" + std::to_string(i);
      Tensor r = glu0(conv1d(h, P(pre + ".c1.w"), P(pre + ".c1.b"), 1, 1));
      r = instance_norm(r, P(pre + ".g1"), P(pre + ".be1"));
      r = conv1d(r, P(pre + ".c2.w"), P(pre + ".c2.b"), 1, 1);
      r = instance_norm(r, P(pre + ".g2"), P(pre + ".be2"));
      h = add(h, r);
    }
    h = instance_norm(conv1d(h, P("from1d.w"), P("from1d.b")), P("from1d.g"),
                      P("from1d.be"));
    h = reshape(h, {4 * B, kBands / 4, t4});

    h = glu0(conv2d(h, P("up1.w"), P("up1.b"), 1, 1, 1, 1));
    h = instance_norm(pixel_shuffle2d(h, 2), P("up1.g"), P("up1.be"));
    h = glu0(conv2d(h, P("up2.w"), P("up2.b"), 1, 1, 1, 1));
    h = instance_norm(pixel_shuffle2d(h, 2), P("up2.g"), P("up2.be"));
    return conv2d(h, P("out.w"), P("out.b"), 1, 1, 2, 2);
  }

  ParamMap& params() { return p_; }
  const ParamMap& params() const { return p_; }
  const NetConfig& config() const { return cfg_; }

 private:
  NetConfig cfg_;
  ParamMap p_;
};

// ---- DCNN (PatchGAN) discriminator ----------------------------------------

class DcnnDisc {
 public:
  DcnnDisc(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int B = cfg.dcnn_base;
    detail::conv_w(p_, "c1.w", {2 * B, 1, 3, 3}, rng);
    detail::bias(p_, "c1.b", 2 * B);
    detail::conv_w(p_, "c2.w", {4 * B, B, 3, 3}, rng);
    detail::bias(p_, "c2.b", 4 * B);
    detail::ones_p(p_, "c2.g", 2 * B);
    detail::bias(p_, "c2.be", 2 * B);
    detail::conv_w(p_, "c3.w", {8 * B, 2 * B, 3, 3}, rng);
    detail::bias(p_, "c3.b", 8 * B);
    detail::ones_p(p_, "c3.g", 4 * B);
    detail::bias(p_, "c3.be", 4 * B);
    detail::conv_w(p_, "c4.w", {16 * B, 4 * B, 3, 3}, rng);
    detail::bias(p_, "c4.b", 16 * B);
    detail::ones_p(p_, "c4.g", 8 * B);
    detail::bias(p_, "c4.be", 8 * B);
    detail::conv_w(p_, "c5.w", {16 * B, 8 * B, 3, 1}, rng);
    detail::bias(p_, "c5.b", 16 * B);
    detail::conv_w(p_, "head.w", {1, 8 * B, 1, 1}, rng);
    detail::bias(p_, "head.b", 1);
  }

  DiscOutput forward(const Tensor& mel, Tensor* last_conv = nullptr) const {
    check_input(mel);
    using namespace ag;
    const auto P = [&](const std::string& n) { return detail::param(p_, n); };
    Tensor h = glu0(conv2d(mel, P("c1.w"), P("c1.b"), 1, 1, 1, 1));
    h = conv2d(h, P("c2.w"), P("c2.b"), 2, 2, 1, 1);
    h = instance_norm(glu0(h), P("c2.g"), P("c2.be"));
    h = conv2d(h, P("c3.w"), P("c3.b"), 2, 2, 1, 1);
    h = instance_norm(glu0(h), P("c3.g"), P("c3.be"));
    h = conv2d(h, P("c4.w"), P("c4.b"), 2, 2, 1, 1);
    h = instance_norm(glu0(h), P("c4.g"), P("c4.be"));
    h = glu0(conv2d(h, P("c5.w"), P("c5.b")));  // [8B, 8, 8]
    if (last_conv) *last_conv = h;
    DiscOutput out;
    out.realness = conv2d(h, P("head.w"), P("head.b"));  // [1,8,8] patch grid
    out.embedding = reshape(h, {static_cast<int>(h.numel())});
    return out;
  }

  ParamMap& params() { return p_; }
  const ParamMap& params() const { return p_; }

  static void check_input(const Tensor& mel) {
    if (mel.shape() != std::vector<int>{1, kBands, kFrames})
      throw std::invalid_argument("discriminator input must be 1x80x64");
  }

 private:
  NetConfig cfg_;
  ParamMap p_;
};

// ---- ViT discriminator -----------------------------------------------------

class VitDisc {
 public:
  VitDisc(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int ps = cfg.vit_patch, D = cfg.vit_width;
    const int n_tok = (kBands / ps) * (kFrames / ps);
    detail::conv_w(p_, "embed.w", {ps * ps, D}, rng);
    detail::bias(p_, "embed.b", D);
    detail::small_randn(p_, "cls", {1, D}, rng);
    detail::small_randn(p_, "pos", {n_tok + 1, D}, rng);
    for (int i = 0; i < cfg.vit_blocks; ++i) {
      const std::string pre = "blk" + std::to_string(i);
      for (const char* w : {".wq", ".wk", ".wv", ".wo"})
        detail::conv_w(p_, pre + w, {D, D}, rng);
      for (const char* b : {".bq", ".bk", ".bv", ".bo"}) detail::bias(p_, pre + b, D);
      detail::ones_p(p_, pre + ".ln1.g", D);
      detail::bias(p_, pre + ".ln1.b", D);
      detail::ones_p(p_, pre + ".ln2.g", D);
      detail::bias(p_, pre + ".ln2.b", D);
      detail::conv_w(p_, pre + ".mlp1.w", {D, 4 * D}, rng);
      detail::bias(p_, pre + ".mlp1.b", 4 * D);
      detail::conv_w(p_, pre + ".mlp2.w", {4 * D, D}, rng);
      detail::bias(p_, pre + ".mlp2.b", D);
    }
    detail::ones_p(p_, "ln_f.g", D);
    detail::bias(p_, "ln_f.b", D);
    detail::conv_w(p_, "head.w", {D, 1}, rng);
    detail::bias(p_, "head.b", 1);
  }

  DiscOutput forward(const Tensor& mel, Tensor* token_grid = nullptr) const {
    DcnnDisc::check_input(mel);
    using namespace ag;
    const auto P = [&](const std::string& n) { return detail::param(p_, n); };
    const int ps = cfg_.vit_patch, D = cfg_.vit_width;
    const int gh = kBands / ps, gw = kFrames / ps, n_tok = gh * gw;

    // patchify [1,80,64] -> [n_tok, ps*ps]
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(n_tok) * ps * ps);
    for (int th = 0; th < gh; ++th)
      for (int tw = 0; tw < gw; ++tw)
        for (int i = 0; i < ps; ++i)
          for (int j = 0; j < ps; ++j)
            (*idx)[(static_cast<size_t>(th * gw + tw) * ps + i) * ps + j] =
                static_cast<std::int64_t>(th * ps + i) * kFrames + (tw * ps + j);
    Tensor tok = gather(mel, {n_tok, ps * ps}, idx);
    Tensor x = linear(tok, P("embed.w"), P("embed.b"));
    x = concat0(P("cls"), x);
    x = add(x, P("pos"));
    for (int b = 0; b < cfg_.vit_blocks; ++b) {
      const std::string pre = "blk" + std::to_string(b);
      Tensor h1 = layer_norm_rows(x, P(pre + ".ln1.g"), P(pre + ".ln1.b"));
      x = add(x, detail::mhsa(p_, pre, h1, cfg_.vit_heads));
      Tensor h2 = layer_norm_rows(x, P(pre + ".ln2.g"), P(pre + ".ln2.b"));
      Tensor m = relu(linear(h2, P(pre + ".mlp1.w"), P(pre + ".mlp1.b")));
      x = add(x, linear(m, P(pre + ".mlp2.w"), P(pre + ".mlp2.b")));
    }
    x = layer_norm_rows(x, P("ln_f.g"), P("ln_f.b"));
    Tensor cls = narrow0(x, 0, 1);
    Tensor toks = narrow0(x, 1, n_tok + 1);
    if (token_grid) *token_grid = toks;
    DiscOutput out;
    out.realness = reshape(linear(cls, P("head.w"), P("head.b")), {1});
    out.embedding = reshape(toks, {n_tok * D});
    return out;
  }

  ParamMap& params() { return p_; }
  const ParamMap& params() const { return p_; }

 private:
  NetConfig cfg_;
  ParamMap p_;
};

// ---- Conformer discriminator -----------------------------------------------

class ConformerDisc {
 public:
  ConformerDisc(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int D = cfg.conf_width, k = cfg.conf_kernel;
    detail::conv_w(p_, "sub.w", {D, kBands, 3}, rng);  // stride-2 time subsample
    detail::bias(p_, "sub.b", D);
    for (int i = 0; i < cfg.conf_blocks; ++i) {
      const std::string pre = "blk" + std::to_string(i);
      for (const char* ff : {".ff1", ".ff2"}) {
        detail::ones_p(p_, pre + ff + ".ln.g", D);
        detail::bias(p_, pre + ff + ".ln.b", D);
        detail::conv_w(p_, pre + ff + ".w1", {D, 4 * D}, rng);
        detail::bias(p_, pre + ff + ".b1", 4 * D);
        detail::conv_w(p_, pre + ff + ".w2", {4 * D, D}, rng);
        detail::bias(p_, pre + ff + ".b2", D);
      }
      detail::ones_p(p_, pre + ".attn.ln.g", D);
      detail::bias(p_, pre + ".attn.ln.b", D);
      for (const char* w : {".wq", ".wk", ".wv", ".wo"})
        detail::conv_w(p_, pre + w, {D, D}, rng);
      for (const char* b : {".bq", ".bk", ".bv", ".bo"}) detail::bias(p_, pre + b, D);
      detail::ones_p(p_, pre + ".conv.ln.g", D);
      detail::bias(p_, pre + ".conv.ln.b", D);
      detail::conv_w(p_, pre + ".conv.pw1", {D, 2 * D}, rng);
      detail::bias(p_, pre + ".conv.pb1", 2 * D);
      detail::conv_w(p_, pre + ".conv.dw", {D, k}, rng);
      detail::bias(p_, pre + ".conv.db", D);
      detail::conv_w(p_, pre + ".conv.pw2", {D, D}, rng);
      detail::bias(p_, pre + ".conv.pb2", D);
      detail::ones_p(p_, pre + ".ln_out.g", D);
      detail::bias(p_, pre + ".ln_out.b", D);
    }
    detail::ones_p(p_, "ln_f.g", D);
    detail::bias(p_, "ln_f.b", D);
    detail::conv_w(p_, "head.w", {D, 1}, rng);
    detail::bias(p_, "head.b", 1);
  }

  DiscOutput forward(const Tensor& mel, Tensor* final_seq = nullptr) const {
    DcnnDisc::check_input(mel);
    using namespace ag;
    const auto P = [&](const std::string& n) { return detail::param(p_, n); };
    const int D = cfg_.conf_width, k = cfg_.conf_kernel;

    // [1,80,64] -> channels=80 over time, stride-2 conv subsample -> [T/2, D]
    Tensor x = reshape(mel, {kBands, kFrames});
    x = conv1d(x, P("sub.w"), P("sub.b"), 2, 1);
    x = transpose2d(x);  // [32, D], time-major rows
    for (int b = 0; b < cfg_.conf_blocks; ++b) {
      const std::string pre = "blk" + std::to_string(b);
      auto half_ff = [&](const Tensor& in, const std::string& ff) {
        Tensor h = layer_norm_rows(in, P(pre + ff + ".ln.g"), P(pre + ff + ".ln.b"));
        h = swish(linear(h, P(pre + ff + ".w1"), P(pre + ff + ".b1")));
        h = linear(h, P(pre + ff + ".w2"), P(pre + ff + ".b2"));
        return add(in, scale(h, 0.5));
      };
      x = half_ff(x, ".ff1");
      Tensor ha = layer_norm_rows(x, P(pre + ".attn.ln.g"), P(pre + ".attn.ln.b"));
      x = add(x, detail::mhsa(p_, pre, ha, cfg_.conf_heads));
      Tensor hc = layer_norm_rows(x, P(pre + ".conv.ln.g"), P(pre + ".conv.ln.b"));
      hc = glu0(transpose2d(linear(hc, P(pre + ".conv.pw1"), P(pre + ".conv.pb1"))));
      hc = depthwise_conv1d(hc, P(pre + ".conv.dw"), P(pre + ".conv.db"), (k - 1) / 2);
      hc = swish(transpose2d(hc));
      hc = linear(hc, P(pre + ".conv.pw2"), P(pre + ".conv.pb2"));
      x = add(x, hc);
      x = half_ff(x, ".ff2");
      x = layer_norm_rows(x, P(pre + ".ln_out.g"), P(pre + ".ln_out.b"));
    }
    x = layer_norm_rows(x, P("ln_f.g"), P("ln_f.b"));
    if (final_seq) *final_seq = x;
    DiscOutput out;
    Tensor pooled = reshape(mean_rows(x), {1, D});
    out.realness = reshape(linear(pooled, P("head.w"), P("head.b")), {1});
    out.embedding = reshape(x, {static_cast<int>(x.numel())});
    return out;
  }

  ParamMap& params() { return p_; }
  const ParamMap& params() const { return p_; }

 private:
  NetConfig cfg_;
  ParamMap p_;
};

// Uniform handle over the three discriminator families.
class Discriminator {
 public:
  Discriminator(ArchKind kind, const NetConfig& cfg, Rng& rng) : kind_(kind) {
    switch (kind) {
      case ArchKind::dcnn: dcnn_ = std::make_unique<DcnnDisc>(cfg, rng); break;
      case ArchKind::vit: vit_ = std::make_unique<VitDisc>(cfg, rng); break;
      case ArchKind::conformer: conf_ = std::make_unique<ConformerDisc>(cfg, rng); break;
    }
  }
  ArchKind kind() const { return kind_; }
  DiscOutput forward(const Tensor& mel, Tensor* tap = nullptr) const {
    switch (kind_) {
      case ArchKind::dcnn: return dcnn_->forward(mel, tap);
      case ArchKind::vit: return vit_->forward(mel, tap);
      default: return conf_->forward(mel, tap);
    }
  }
  ParamMap& params() {
    switch (kind_) {
      case ArchKind::dcnn: return dcnn_->params();
      case ArchKind::vit: return vit_->params();
      default: return conf_->params();
    }
  }
  const ParamMap& params() const { return const_cast<Discriminator*>(this)->params(); }

 private:
  ArchKind kind_;
  std::unique_ptr<DcnnDisc> dcnn_;
  std::unique_ptr<VitDisc> vit_;
  std::unique_ptr<ConformerDisc> conf_;
};

// Mean of the realness map/scalar, the common readout for the LSGAN terms.
inline Tensor realness_mean(const DiscOutput& out) { return ag::mean(out.realness); }

}  // namespace clot::nets
