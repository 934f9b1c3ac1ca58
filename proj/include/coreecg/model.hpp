#pragma once

// The network: a shared token grid of (lead, time-patch) pairs feeds a
// student encoder over visible tokens, a time decoder that reconstructs
// per-patch samples, a latent decoder that is mean-pooled into a global
// embedding, projection heads, and an EMA teacher (encoder + projection)
// that processes the full augmented view. Teacher parameters never receive
// gradients; they move only through ema_update.
//
// Parameter names are stable checkpoint keys:
//   student.enc.{patch_embed.w|patch_embed.b|lead_embed|block<i>.*|ln_f.*}
//   teacher.enc.*            (same layout as student.enc)
//   time_dec.{mask_token|block<i>.*|ln_f.*|head.w|head.b}
//   latent_dec.{mask_token|block<i>.*}
//   student.proj.{w1|b1|w2|b2}, teacher.proj.*
//   fda.W, pos_embed, classifier.{w|b}

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "coreecg/ops.hpp"
#include "coreecg/rng.hpp"
#include "coreecg/stdm.hpp"

namespace coreecg {

struct ModelConfig {
  std::size_t dim = 256;
  std::size_t heads = 4;
  std::size_t enc_layers = 10;
  std::size_t latent_dec_layers = 8;
  std::size_t time_dec_layers = 10;
  std::size_t patch_len = 75;
  std::size_t n_leads = 12;
  std::size_t n_patches = 30;
  std::size_t proj_hidden = 256;
  std::size_t proj_out = 128;

  static ModelConfig toy() {
    ModelConfig c;
    c.dim = 32;
    c.heads = 2;
    c.enc_layers = 2;
    c.latent_dec_layers = 2;
    c.time_dec_layers = 2;
    return c;
  }

  std::size_t seq_len() const { return n_leads * n_patches; }
  std::size_t crop_len() const { return n_patches * patch_len; }
  std::size_t freq_bins() const { return crop_len() / 2 + 1; }

  void validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0)
      throw ConfigError("model: dim must be a positive multiple of heads");
    if (n_leads == 0 || n_patches == 0 || patch_len == 0)
      throw ConfigError("model: token grid dimensions must be positive");
    if (proj_hidden == 0 || proj_out == 0) throw ConfigError("model: projection dims");
  }
};

// ---- parameters ---------------------------------------------------------

template <typename T>
struct Param {
  std::string name;
  Shape shape;
  std::shared_ptr<std::vector<T>> value;
  std::vector<T> grad;
  bool trainable = true;

  std::size_t size() const { return value->size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, Shape shape, bool trainable) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    auto p = std::make_unique<Param<T>>();
    p->name = name;
    p->shape = std::move(shape);
    p->value = std::make_shared<std::vector<T>>(numel(p->shape), T(0));
    p->grad.assign(p->value->size(), T(0));
    p->trainable = trainable;
    items_.push_back(std::move(p));
    index_[name] = items_.back().get();
    return *items_.back();
  }

  Param<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }
  Param<T>& at(const std::string& name) const {
    auto* p = find(name);
    if (!p) throw ConfigError("unknown parameter: " + name);
    return *p;
  }

  std::vector<Param<T>*> all() const {
    std::vector<Param<T>*> out;
    for (const auto& p : items_) out.push_back(p.get());
    return out;
  }
  std::vector<Param<T>*> trainable() const {
    std::vector<Param<T>*> out;
    for (const auto& p : items_)
      if (p->trainable) out.push_back(p.get());
    return out;
  }
  void zero_grads() {
    for (const auto& p : items_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Param<T>>> items_;  // creation order is update order
  std::unordered_map<std::string, Param<T>*> index_;
};

template <typename T>
struct BlockParams {
  Param<T>*ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  Param<T>*ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
};

template <typename T>
struct EncoderParams {
  Param<T>* patch_w = nullptr;  // [dim, 1, P]
  Param<T>* patch_b = nullptr;  // [dim]
  Param<T>* lead_embed = nullptr;  // [n_leads, dim]
  std::vector<BlockParams<T>> blocks;
  Param<T>*ln_f_g = nullptr, *ln_f_b = nullptr;
};

template <typename T>
struct DecoderParams {
  Param<T>* mask_token = nullptr;  // [1, dim]
  std::vector<BlockParams<T>> blocks;
  Param<T>*ln_f_g = nullptr, *ln_f_b = nullptr;  // time decoder only
  Param<T>*head_w = nullptr, *head_b = nullptr;  // time decoder only
};

template <typename T>
struct ProjectionParams {
  Param<T>*w1, *b1, *w2, *b2;
};

// ---- model ------------------------------------------------------------------

template <typename T>
class Model {
 public:
  ModelConfig cfg;
  ParamStore<T> params;
  EncoderParams<T> student_enc, teacher_enc;
  DecoderParams<T> time_dec, latent_dec;
  ProjectionParams<T> student_proj{}, teacher_proj{};
  Param<T>* fda_w = nullptr;
  Param<T>* pos_embed = nullptr;  // fixed sinusoidal table, never trained
  Param<T>* cls_w = nullptr;
  Param<T>* cls_b = nullptr;

  static Model build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(derive_seed(seed, "init"));
    m.student_enc = m.build_encoder("student.enc", cfg, rng, /*trainable=*/true);
    m.teacher_enc = m.build_encoder("teacher.enc", cfg, rng, /*trainable=*/false);
    m.time_dec = m.build_decoder("time_dec", cfg, cfg.time_dec_layers, rng, /*head=*/true);
    m.latent_dec =
        m.build_decoder("latent_dec", cfg, cfg.latent_dec_layers, rng, /*head=*/false);
    m.student_proj = m.build_projection("student.proj", cfg, rng, true);
    m.teacher_proj = m.build_projection("teacher.proj", cfg, rng, false);
    m.fda_w = &m.params.add("fda.W", {cfg.n_leads, cfg.freq_bins()}, true);
    m.pos_embed = &m.params.add("pos_embed", {cfg.n_patches, cfg.dim}, false);
    m.fill_sinusoidal(*m.pos_embed);
    m.copy_student_to_teacher();
    return m;
  }

  void add_classifier(std::size_t n_classes, std::uint64_t seed) {
    if (cls_w) throw ConfigError("classifier head already present");
    cls_w = &params.add("classifier.w", {cfg.dim, n_classes}, true);
    cls_b = &params.add("classifier.b", {n_classes}, true);
    Rng rng(derive_seed(seed, "cls_init"));
    for (auto& v : *cls_w->value) v = static_cast<T>(0.02 * rng.normal());
  }

  // (teacher, student) buffer pairs covered by the EMA update
  std::vector<std::pair<Param<T>*, Param<T>*>> ema_pairs() const {
    std::vector<std::pair<Param<T>*, Param<T>*>> out;
    auto tenc = collect(teacher_enc);
    auto senc = collect(student_enc);
    for (std::size_t i = 0; i < tenc.size(); ++i) out.emplace_back(tenc[i], senc[i]);
    auto tp = collect(teacher_proj);
    auto sp = collect(student_proj);
    for (std::size_t i = 0; i < tp.size(); ++i) out.emplace_back(tp[i], sp[i]);
    return out;
  }

  // theta_t <- m * theta_t + (1 - m) * theta_s for encoder and projection
  void ema_update(double m) {
    if (m < 0.0 || m > 1.0) throw ConfigError("ema_update: momentum must be in [0,1]");
    for (auto [t, s] : ema_pairs()) {
      auto& tv = *t->value;
      const auto& sv = *s->value;
      for (std::size_t i = 0; i < tv.size(); ++i)
        tv[i] = static_cast<T>(m * static_cast<double>(tv[i]) +
                               (1.0 - m) * static_cast<double>(sv[i]));
    }
  }

  void copy_student_to_teacher() {
    for (auto [t, s] : ema_pairs()) *t->value = *s->value;
  }

 private:
  static std::vector<Param<T>*> collect(const EncoderParams<T>& e) {
    std::vector<Param<T>*> out{e.patch_w, e.patch_b, e.lead_embed};
    for (const auto& b : e.blocks)
      for (Param<T>* p : {b.ln1_g, b.ln1_b, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo,
                          b.ln2_g, b.ln2_b, b.w1, b.b1, b.w2, b.b2})
        out.push_back(p);
    out.push_back(e.ln_f_g);
    out.push_back(e.ln_f_b);
    return out;
  }
  static std::vector<Param<T>*> collect(const ProjectionParams<T>& p) {
    return {p.w1, p.b1, p.w2, p.b2};
  }

  void init_linear(Param<T>& w, std::size_t fan_in, Rng& rng) {
    const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : *w.value) v = static_cast<T>(s * rng.normal());
  }
  void init_embed(Param<T>& w, Rng& rng) {
    for (auto& v : *w.value) v = static_cast<T>(0.02 * rng.normal());
  }

  BlockParams<T> build_block(const std::string& prefix, const ModelConfig& c, Rng& rng,
                             bool trainable) {
    const std::size_t d = c.dim, h = 4 * c.dim;
    BlockParams<T> b;
    b.ln1_g = &params.add(prefix + ".ln1.g", {d}, trainable);
    b.ln1_b = &params.add(prefix + ".ln1.b", {d}, trainable);
    std::fill(b.ln1_g->value->begin(), b.ln1_g->value->end(), T(1));
    b.wq = &params.add(prefix + ".attn.wq", {d, d}, trainable);
    b.bq = &params.add(prefix + ".attn.bq", {d}, trainable);
    b.wk = &params.add(prefix + ".attn.wk", {d, d}, trainable);
    b.bk = &params.add(prefix + ".attn.bk", {d}, trainable);
    b.wv = &params.add(prefix + ".attn.wv", {d, d}, trainable);
    b.bv = &params.add(prefix + ".attn.bv", {d}, trainable);
    b.wo = &params.add(prefix + ".attn.wo", {d, d}, trainable);
    b.bo = &params.add(prefix + ".attn.bo", {d}, trainable);
    b.ln2_g = &params.add(prefix + ".ln2.g", {d}, trainable);
    b.ln2_b = &params.add(prefix + ".ln2.b", {d}, trainable);
    std::fill(b.ln2_g->value->begin(), b.ln2_g->value->end(), T(1));
    b.w1 = &params.add(prefix + ".mlp.w1", {d, h}, trainable);
    b.b1 = &params.add(prefix + ".mlp.b1", {h}, trainable);
    b.w2 = &params.add(prefix + ".mlp.w2", {h, d}, trainable);
    b.b2 = &params.add(prefix + ".mlp.b2", {d}, trainable);
    for (Param<T>* w : {b.wq, b.wk, b.wv, b.wo}) init_linear(*w, d, rng);
    init_linear(*b.w1, d, rng);
    init_linear(*b.w2, h, rng);
    return b;
  }

  EncoderParams<T> build_encoder(const std::string& prefix, const ModelConfig& c, Rng& rng,
                                 bool trainable) {
    EncoderParams<T> e;
    e.patch_w = &params.add(prefix + ".patch_embed.w", {c.dim, 1, c.patch_len}, trainable);
    e.patch_b = &params.add(prefix + ".patch_embed.b", {c.dim}, trainable);
    init_linear(*e.patch_w, c.patch_len, rng);
    e.lead_embed = &params.add(prefix + ".lead_embed", {c.n_leads, c.dim}, trainable);
    init_embed(*e.lead_embed, rng);
    for (std::size_t i = 0; i < c.enc_layers; ++i)
      e.blocks.push_back(build_block(prefix + ".block" + std::to_string(i), c, rng, trainable));
    e.ln_f_g = &params.add(prefix + ".ln_f.g", {c.dim}, trainable);
    e.ln_f_b = &params.add(prefix + ".ln_f.b", {c.dim}, trainable);
    std::fill(e.ln_f_g->value->begin(), e.ln_f_g->value->end(), T(1));
    return e;
  }

  DecoderParams<T> build_decoder(const std::string& prefix, const ModelConfig& c,
                                 std::size_t layers, Rng& rng, bool with_head) {
    DecoderParams<T> d;
    d.mask_token = &params.add(prefix + ".mask_token", {1, c.dim}, true);
    init_embed(*d.mask_token, rng);
    for (std::size_t i = 0; i < layers; ++i)
      d.blocks.push_back(build_block(prefix + ".block" + std::to_string(i), c, rng, true));
    if (with_head) {
      d.ln_f_g = &params.add(prefix + ".ln_f.g", {c.dim}, true);
      d.ln_f_b = &params.add(prefix + ".ln_f.b", {c.dim}, true);
      std::fill(d.ln_f_g->value->begin(), d.ln_f_g->value->end(), T(1));
      d.head_w = &params.add(prefix + ".head.w", {c.dim, c.patch_len}, true);
      d.head_b = &params.add(prefix + ".head.b", {c.patch_len}, true);
      init_linear(*d.head_w, c.dim, rng);
    }
    return d;
  }

  ProjectionParams<T> build_projection(const std::string& prefix, const ModelConfig& c, Rng& rng,
                                       bool trainable) {
    ProjectionParams<T> p;
    p.w1 = &params.add(prefix + ".w1", {c.dim, c.proj_hidden}, trainable);
    p.b1 = &params.add(prefix + ".b1", {c.proj_hidden}, trainable);
    p.w2 = &params.add(prefix + ".w2", {c.proj_hidden, c.proj_out}, trainable);
    p.b2 = &params.add(prefix + ".b2", {c.proj_out}, trainable);
    init_linear(*p.w1, c.dim, rng);
    init_linear(*p.w2, c.proj_hidden, rng);
    return p;
  }

  void fill_sinusoidal(Param<T>& pos) {
    const std::size_t n = cfg.n_patches, d = cfg.dim;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double expo = static_cast<double>(2 * (j / 2)) / static_cast<double>(d);
        const double arg = static_cast<double>(i) / std::pow(10000.0, expo);
        (*pos.value)[i * d + j] = static_cast<T>(j % 2 == 0 ? std::sin(arg) : std::cos(arg));
      }
  }
};

// ---- forward pass -------------------------------------------------------------

// One context per (tape, role). Student-role params become grad-enabled
// leaves; teacher-role (track=false) and non-trainable params enter as
// constants, so backward treats them as fixed while still reaching any
// recorded inputs.
template <typename T>
struct FwdCtx {
  Tape<T>& tape;
  bool track = true;
  std::unordered_map<const Param<T>*, Tensor<T>> cache;

  FwdCtx(Tape<T>& t, bool track_grads) : tape(t), track(track_grads) {}

  Tensor<T> p(Param<T>& prm) {
    auto it = cache.find(&prm);
    if (it != cache.end()) return it->second;
    Tensor<T> t;
    if (track && prm.trainable)
      t = tape.leaf(prm.shape, prm.value);
    else
      t = Tensor<T>(prm.shape, prm.value);
    cache.emplace(&prm, t);
    return t;
  }

  // After backward: fold tape gradients into the parameter buffers.
  void accumulate_grads() {
    for (auto& [prm, tensor] : cache) {
      if (!tensor.recorded()) continue;
      const std::vector<T>* g = tape.grad(tensor);
      if (!g) continue;
      auto* mut = const_cast<Param<T>*>(prm);
      for (std::size_t i = 0; i < g->size(); ++i) mut->grad[i] += (*g)[i];
    }
  }
};

namespace detail {

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  return add(x, b);  // [L,dim] + [dim] broadcasts over rows
}

template <typename T>
Tensor<T> attention(FwdCtx<T>& ctx, const BlockParams<T>& blk, const Tensor<T>& x,
                    std::size_t heads) {
  const std::size_t L = x.shape[0], d = x.shape[1], dh = d / heads;
  auto q = add_bias(matmul(x, ctx.p(*blk.wq)), ctx.p(*blk.bq));
  auto k = add_bias(matmul(x, ctx.p(*blk.wk)), ctx.p(*blk.bk));
  auto v = add_bias(matmul(x, ctx.p(*blk.wv)), ctx.p(*blk.bv));
  std::vector<Tensor<T>> head_out;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<std::int64_t> cols(dh);
    for (std::size_t i = 0; i < dh; ++i) cols[i] = static_cast<std::int64_t>(h * dh + i);
    // pre-scale the narrow q block instead of the L x L score matrix
    auto qh = scale(index_select(q, 1, cols), inv_sqrt);
    auto kh = index_select(k, 1, cols);
    auto vh = index_select(v, 1, cols);
    auto attn = softmax(matmul(qh, kh, false, true));
    head_out.push_back(matmul(attn, vh));
  }
  auto cat = heads == 1 ? head_out[0] : concat(head_out, 1);
  (void)L;
  return add_bias(matmul(cat, ctx.p(*blk.wo)), ctx.p(*blk.bo));
}

template <typename T>
Tensor<T> transformer_block(FwdCtx<T>& ctx, const BlockParams<T>& blk, Tensor<T> x,
                            std::size_t heads) {
  auto h1 = layer_norm(x, ctx.p(*blk.ln1_g), ctx.p(*blk.ln1_b));
  x = add(x, attention(ctx, blk, h1, heads));
  auto h2 = layer_norm(x, ctx.p(*blk.ln2_g), ctx.p(*blk.ln2_b));
  auto mlp = add_bias(
      matmul(gelu(add_bias(matmul(h2, ctx.p(*blk.w1)), ctx.p(*blk.b1))), ctx.p(*blk.w2)),
      ctx.p(*blk.b2));
  return add(x, mlp);
}

// patches [L, P] -> tokens [L, dim] with lead and temporal embeddings added
template <typename T>
Tensor<T> embed_tokens(FwdCtx<T>& ctx, const EncoderParams<T>& enc, Param<T>& pos,
                       const Tensor<T>& patches, const std::vector<std::int64_t>& lead_ids,
                       const std::vector<std::int64_t>& patch_ids, const ModelConfig& cfg) {
  const std::size_t L = patches.shape[0];
  auto emb = conv1d(reshape(patches, {L, 1, cfg.patch_len}), ctx.p(*enc.patch_w),
                    ctx.p(*enc.patch_b), cfg.patch_len);
  auto tok = reshape(emb, {L, cfg.dim});
  tok = add(tok, index_select(ctx.p(*enc.lead_embed), 0, lead_ids));
  tok = add(tok, index_select(ctx.p(pos), 0, patch_ids));
  return tok;
}

template <typename T>
Tensor<T> encode_tokens(FwdCtx<T>& ctx, const EncoderParams<T>& enc, Param<T>& pos,
                        const Tensor<T>& patches, const std::vector<std::int64_t>& lead_ids,
                        const std::vector<std::int64_t>& patch_ids, const ModelConfig& cfg) {
  auto x = embed_tokens(ctx, enc, pos, patches, lead_ids, patch_ids, cfg);
  for (const auto& blk : enc.blocks) x = transformer_block(ctx, blk, x, cfg.heads);
  return layer_norm(x, ctx.p(*enc.ln_f_g), ctx.p(*enc.ln_f_b));
}

}  // namespace detail

// Visible-token index lists derived from a mask plan (lead-major order).
struct VisibleIndex {
  std::vector<std::int64_t> rows;       // c * N + n per visible token
  std::vector<std::int64_t> lead_ids;   // c per token
  std::vector<std::int64_t> patch_ids;  // n per token
};

inline VisibleIndex visible_index(const MaskPlan& plan) {
  VisibleIndex v;
  for (auto [c, n] : plan.visible_pairs()) {
    v.rows.push_back(static_cast<std::int64_t>(c * plan.N + n));
    v.lead_ids.push_back(static_cast<std::int64_t>(c));
    v.patch_ids.push_back(static_cast<std::int64_t>(n));
  }
  return v;
}

// z_s^v = E_s(x_s^v): encoder over visible tokens only.
template <typename T>
Tensor<T> encode_visible(FwdCtx<T>& ctx, Model<T>& m, const Tensor<T>& patches,
                         const VisibleIndex& vis) {
  if (vis.rows.empty()) throw DataError("encode_visible: empty visible set");
  const std::size_t CN = m.cfg.seq_len();
  auto flat = reshape(patches, {CN, m.cfg.patch_len});
  auto visible = index_select(flat, 0, vis.rows);
  return detail::encode_tokens(ctx, m.student_enc, *m.pos_embed, visible, vis.lead_ids,
                               vis.patch_ids, m.cfg);
}

namespace detail {

// Full C*N grid: visible slots carry encoder outputs, everything else the
// decoder's learned mask token; lead + position embeddings go on every slot.
template <typename T>
Tensor<T> decode_grid(FwdCtx<T>& ctx, Model<T>& m, const DecoderParams<T>& dec,
                      const Tensor<T>& z_v, const VisibleIndex& vis,
                      std::size_t lead_count) {
  const std::size_t N = m.cfg.n_patches;
  const std::size_t CN = lead_count * N;
  if (!vis.rows.empty() && z_v.shape[0] != vis.rows.size())
    throw ShapeError("decode: plan lists " + std::to_string(vis.rows.size()) +
                     " visible tokens but encoder emitted " + std::to_string(z_v.shape[0]));
  std::vector<std::int64_t> zeros(CN, 0), leads(CN), patches(CN);
  for (std::size_t c = 0; c < lead_count; ++c)
    for (std::size_t n = 0; n < N; ++n) {
      leads[c * N + n] = static_cast<std::int64_t>(c);
      patches[c * N + n] = static_cast<std::int64_t>(n);
    }
  auto grid = index_select(ctx.p(*dec.mask_token), 0, zeros);  // [CN, dim]
  if (!vis.rows.empty()) grid = scatter_rows(grid, vis.rows, z_v);
  grid = add(grid, index_select(ctx.p(*m.student_enc.lead_embed), 0, leads));
  grid = add(grid, index_select(ctx.p(*m.pos_embed), 0, patches));
  for (const auto& blk : dec.blocks) grid = transformer_block(ctx, blk, grid, m.cfg.heads);
  return grid;
}

}  // namespace detail

// x_hat = D_t(z_s^v, q_s^m): reconstruct every patch of the grid.
template <typename T>
Tensor<T> decode_time(FwdCtx<T>& ctx, Model<T>& m, const Tensor<T>& z_v,
                      const VisibleIndex& vis) {
  auto grid = detail::decode_grid(ctx, m, m.time_dec, z_v, vis, m.cfg.n_leads);
  grid = layer_norm(grid, ctx.p(*m.time_dec.ln_f_g), ctx.p(*m.time_dec.ln_f_b));
  auto out = detail::add_bias(matmul(grid, ctx.p(*m.time_dec.head_w)),
                              ctx.p(*m.time_dec.head_b));
  return reshape(out, {m.cfg.n_leads, m.cfg.n_patches, m.cfg.patch_len});
}

// z_hat = D_l(z_s^v, q_t^m) followed by mean pooling over the grid.
template <typename T>
Tensor<T> decode_latent_global(FwdCtx<T>& ctx, Model<T>& m, const Tensor<T>& z_v,
                               const VisibleIndex& vis) {
  auto grid = detail::decode_grid(ctx, m, m.latent_dec, z_v, vis, m.cfg.n_leads);
  return reshape(mean_pool(grid, 0), {m.cfg.dim});
}

// H = proj(z): two-layer MLP with gelu.
template <typename T>
Tensor<T> project(FwdCtx<T>& ctx, const ProjectionParams<T>& proj, const Tensor<T>& z) {
  auto h = reshape(z, {1, z.size()});
  h = gelu(detail::add_bias(matmul(h, ctx.p(*proj.w1)), ctx.p(*proj.b1)));
  h = detail::add_bias(matmul(h, ctx.p(*proj.w2)), ctx.p(*proj.b2));
  return reshape(h, {h.size()});
}

// Teacher branch: full augmented grid through the teacher encoder, mean
// pooled, then the teacher projection. Call with a track=false context so
// teacher weights stay constant; gradients still flow into a recorded input.
template <typename T>
Tensor<T> teacher_forward(FwdCtx<T>& ctx, Model<T>& m, const Tensor<T>& x_aug) {
  const std::size_t CN = m.cfg.seq_len();
  std::vector<std::int64_t> leads(CN), patches(CN);
  for (std::size_t c = 0; c < m.cfg.n_leads; ++c)
    for (std::size_t n = 0; n < m.cfg.n_patches; ++n) {
      leads[c * m.cfg.n_patches + n] = static_cast<std::int64_t>(c);
      patches[c * m.cfg.n_patches + n] = static_cast<std::int64_t>(n);
    }
  auto flat = reshape(x_aug, {CN, m.cfg.patch_len});
  auto tokens =
      detail::encode_tokens(ctx, m.teacher_enc, *m.pos_embed, flat, leads, patches, m.cfg);
  auto pooled = reshape(mean_pool(tokens, 0), {m.cfg.dim});
  return project(ctx, m.teacher_proj, pooled);
}

// Downstream head: encode all tokens (optionally a lead subset), mean pool,
// linear classifier. Both encoder and head stay trainable.
template <typename T>
Tensor<T> classify(FwdCtx<T>& ctx, Model<T>& m, const Tensor<T>& patches,
                   const std::vector<std::int64_t>& lead_subset = {}) {
  if (!m.cls_w) throw ConfigError("classify: no classifier head attached");
  std::vector<std::int64_t> lead_ids, patch_ids, rows;
  const std::size_t N = m.cfg.n_patches;
  const std::vector<std::int64_t>* leads_used = &lead_subset;
  std::vector<std::int64_t> all_leads;
  if (lead_subset.empty()) {
    for (std::size_t c = 0; c < m.cfg.n_leads; ++c)
      all_leads.push_back(static_cast<std::int64_t>(c));
    leads_used = &all_leads;
  }
  for (auto c : *leads_used)
    for (std::size_t n = 0; n < N; ++n) {
      rows.push_back(c * static_cast<std::int64_t>(N) + static_cast<std::int64_t>(n));
      lead_ids.push_back(c);
      patch_ids.push_back(static_cast<std::int64_t>(n));
    }
  auto flat = reshape(patches, {m.cfg.seq_len(), m.cfg.patch_len});
  auto sel = index_select(flat, 0, rows);
  auto tokens = detail::encode_tokens(ctx, m.student_enc, *m.pos_embed, sel, lead_ids,
                                      patch_ids, m.cfg);
  auto pooled = reshape(mean_pool(tokens, 0), {1, m.cfg.dim});
  auto logits = detail::add_bias(matmul(pooled, ctx.p(*m.cls_w)), ctx.p(*m.cls_b));
  return reshape(logits, {logits.size()});
}

}  // namespace coreecg
