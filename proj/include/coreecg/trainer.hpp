#pragma once

// Pretraining and fine-tuning loops. Each batch builds one tape per sample
// (parallelizable), a small combiner graph couples the per-sample outputs
// into L = alpha * L_rec + beta * L_con, and the combiner's cotangents seed
// the per-sample backward passes. Gradient accumulation and parameter
// updates run serially in fixed sample order, so results are independent of
// the worker count.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "coreecg/checkpoint.hpp"
#include "coreecg/fda.hpp"
#include "coreecg/metrics.hpp"
#include "coreecg/model.hpp"
#include "coreecg/objectives.hpp"
#include "coreecg/signal.hpp"

namespace coreecg {

struct TrainConfig {
  enum class Ablation { core, contrastive_only, reconstructive_only };

  std::size_t epochs = 80;
  std::size_t batch_size = 256;
  double lr = 1.5e-4;
  double weight_decay = 0.01;
  std::size_t warmup_epochs = 5;
  double ema_momentum = 0.996;
  double tau = 0.2;
  double alpha = 1.0;
  double beta = 1.0;
  double p_time = 0.5;
  double p_lead = 0.2;
  std::size_t k_visible = 4;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::core;
  bool fda_enabled = true;
  bool stdm_enabled = true;
  double uniform_mask_ratio = 0.75;
  bool deterministic = true;
  double fda_epsilon = 1e-6;
  unsigned threads = 0;  // 0 = max_threads()

  // fine-tuning
  double finetune_lr = 8e-5;
  std::size_t finetune_warmup_epochs = 0;
  std::size_t finetune_epochs = 80;
  double data_ratio = 1.0;
  std::vector<std::int64_t> lead_subset;  // empty = all 12 leads

  std::string config_hash;  // recorded in checkpoints

  double alpha_eff() const { return ablation == Ablation::contrastive_only ? 0.0 : alpha; }
  double beta_eff() const { return ablation == Ablation::reconstructive_only ? 0.0 : beta; }
  unsigned worker_count() const { return threads ? threads : max_threads(); }

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (warmup_epochs >= epochs) throw ConfigError("train: warmup_epochs must be < epochs");
    if (ema_momentum < 0 || ema_momentum > 1) throw ConfigError("train: ema_momentum in [0,1]");
    if (tau <= 0) throw ConfigError("train: tau must be positive");
    if (data_ratio <= 0 || data_ratio > 1) throw ConfigError("train: data_ratio in (0,1]");
    if (alpha_eff() == 0.0 && beta_eff() == 0.0)
      throw ConfigError("train: both loss branches disabled");
  }
};

// Linear ramp to base_lr over warmup_steps, then cosine decay to zero.
inline double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                    double base_lr) {
  if (total_steps <= warmup_steps)
    throw ConfigError("lr_at: total_steps must exceed warmup_steps");
  if (step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step >= total_steps) return 0.0;
  const double prog = static_cast<double>(step - warmup_steps) /
                      static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(3.141592653589793238462643383279 * prog));
}

// ---- AdamW ------------------------------------------------------------------

template <typename T>
class AdamW {
 public:
  explicit AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : b1_(beta1), b2_(beta2), eps_(eps) {}

  // Decoupled weight decay plus a bias-corrected Adam update. Teacher and
  // frozen parameters never appear in `params`. Aborts before mutating
  // anything if any gradient is non-finite.
  void step(const std::vector<Param<T>*>& params, double lr, double weight_decay) {
    for (const Param<T>* p : params)
      for (T g : p->grad)
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericError("adamw: non-finite gradient in parameter '" + p->name + "'");
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (Param<T>* p : params) {
      auto& slot = slots_[p];
      if (slot.m.empty()) {
        slot.m.assign(p->size(), T(0));
        slot.v.assign(p->size(), T(0));
      }
      auto& val = *p->value;
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double g = static_cast<double>(p->grad[i]);
        const double m = b1_ * static_cast<double>(slot.m[i]) + (1.0 - b1_) * g;
        const double v = b2_ * static_cast<double>(slot.v[i]) + (1.0 - b2_) * g * g;
        slot.m[i] = static_cast<T>(m);
        slot.v[i] = static_cast<T>(v);
        double x = static_cast<double>(val[i]);
        x -= lr * weight_decay * x;
        x -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps_);
        val[i] = static_cast<T>(x);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  struct Slot {
    std::vector<T> m, v;
  };
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::unordered_map<const Param<T>*, Slot> slots_;
};

// ---- per-sample forward -----------------------------------------------------

template <typename T>
struct SampleForward {
  std::unique_ptr<Tape<T>> tape;
  std::unique_ptr<FwdCtx<T>> sctx, tctx;
  Tensor<T> sse;  // [1] masked squared error sum
  Tensor<T> hs, ht;
  std::size_t masked = 0;
  bool has_rec = false;
  bool has_con = false;
};

namespace detail {

template <typename T>
std::vector<T> cast_signal(const std::vector<float>& v) {
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i]);
  return out;
}

// Redraw until the plan leaves at least one visible and one masked patch;
// degenerate configurations surface as an error instead of looping forever.
inline MaskPlan draw_plan(const TrainConfig& cfg, std::size_t C, std::size_t N,
                          std::uint64_t seed) {
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    const std::uint64_t s = derive_seed(seed, "plan", attempt);
    MaskPlan plan = cfg.stdm_enabled
                        ? sample_mask(C, N, cfg.p_time, cfg.p_lead, cfg.k_visible, s)
                        : uniform_random_mask(C, N, cfg.uniform_mask_ratio, s);
    if (plan.count_visible() > 0 && plan.count_masked() > 0) return plan;
  }
  throw ConfigError("mask configuration yields no usable visible/masked split");
}

template <typename T>
SampleForward<T> build_sample_forward(Model<T>& model, const CachedSample& sample,
                                      const MaskPlan& plan, std::uint64_t fda_seed,
                                      const TrainConfig& cfg,
                                      const Tensor<T>* cached_spec = nullptr) {
  const auto& mc = model.cfg;
  SampleForward<T> out;
  out.tape = std::make_unique<Tape<T>>();
  out.sctx = std::make_unique<FwdCtx<T>>(*out.tape, true);
  out.tctx = std::make_unique<FwdCtx<T>>(*out.tape, false);

  auto x_sig = Tensor<T>::constant({mc.n_leads, mc.crop_len()},
                                   cast_signal<T>(sample.signal));
  auto x = reshape(x_sig, {mc.n_leads, mc.n_patches, mc.patch_len});
  auto vis = visible_index(plan);
  auto z_v = encode_visible(*out.sctx, model, x, vis);

  // reconstructive branch (forward always runs so L_rec can be logged)
  auto xhat = decode_time(*out.sctx, model, z_v, vis);
  out.sse = masked_sse(x, xhat, plan);
  out.masked = plan.count_masked();
  out.has_rec = true;

  // contrastive branch
  Tensor<T> x_aug = x;
  if (cfg.fda_enabled) {
    FrequencyImportance<T> fi{out.sctx->p(*model.fda_w), cfg.fda_epsilon};
    auto noise = compute_fda_noise(fi.W, fi.epsilon, fda_seed);
    x_aug = cached_spec
                ? fda_augment_spec(*cached_spec, mc.crop_len(), fi, noise, mc.patch_len)
                : fda_augment(x_sig, fi, noise, mc.patch_len);
  }
  out.ht = teacher_forward(*out.tctx, model, x_aug);
  auto z_global = decode_latent_global(*out.sctx, model, z_v, vis);
  out.hs = project(*out.sctx, model.student_proj, z_global);
  out.has_con = true;
  return out;
}

}  // namespace detail

// Signal spectra are constant per record; precompute once and reuse across
// epochs.
template <typename T>
using SpectrumCache = std::unordered_map<const CachedSample*, Tensor<T>>;

template <typename T>
SpectrumCache<T> build_spectrum_cache(const std::vector<const CachedSample*>& samples,
                                      const ModelConfig& mc, unsigned workers) {
  SpectrumCache<T> cache;
  std::vector<Tensor<T>> specs(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    auto x = Tensor<T>::constant({mc.n_leads, mc.crop_len()},
                                 detail::cast_signal<T>(samples[i]->signal));
    specs[i] = rfft(x);
  });
  for (std::size_t i = 0; i < samples.size(); ++i) cache.emplace(samples[i], specs[i]);
  return cache;
}

// One optimizer step over a batch; returns the loss report.
template <typename T>
LossReport pretrain_batch(Model<T>& model, const std::vector<const CachedSample*>& batch,
                          std::uint64_t epoch, const TrainConfig& cfg, AdamW<T>& opt,
                          double lr, const SpectrumCache<T>* spectra = nullptr) {
  const std::size_t b = batch.size();
  std::vector<SampleForward<T>> fwd(b);
  parallel_for(b, std::min<unsigned>(cfg.worker_count(), static_cast<unsigned>(b)),
               [&](std::size_t i) {
                 const auto& s = *batch[i];
                 MaskPlan plan = detail::draw_plan(
                     cfg, model.cfg.n_leads, model.cfg.n_patches,
                     derive_seed(cfg.seed, "mask", s.record_id, epoch));
                 const Tensor<T>* spec = nullptr;
                 if (spectra) {
                   auto it = spectra->find(&s);
                   if (it != spectra->end()) spec = &it->second;
                 }
                 fwd[i] = detail::build_sample_forward(
                     model, s, plan, derive_seed(cfg.seed, "fda", s.record_id, epoch), cfg,
                     spec);
               });

  // combiner graph over per-sample outputs
  Tape<T> ctape;
  std::vector<Tensor<T>> sse_leaves, hs_leaves, ht_leaves;
  std::size_t masked_total = 0;
  for (auto& f : fwd) {
    sse_leaves.push_back(ctape.leaf({1}, f.sse.data));
    hs_leaves.push_back(reshape(ctape.leaf(f.hs.shape, f.hs.data), {1, f.hs.size()}));
    ht_leaves.push_back(reshape(ctape.leaf(f.ht.shape, f.ht.data), {1, f.ht.size()}));
    masked_total += f.masked;
  }
  auto l_rec = scale(sum_all(concat(sse_leaves, 0)), 1.0 / static_cast<double>(masked_total));
  auto hs_mat = b == 1 ? hs_leaves[0] : concat(hs_leaves, 0);
  auto ht_mat = b == 1 ? ht_leaves[0] : concat(ht_leaves, 0);
  auto l_con = infonce_graph(hs_mat, ht_mat, cfg.tau);

  LossReport rep;
  rep.l_rec = static_cast<double>(l_rec.item());
  rep.l_con = static_cast<double>(l_con.item());
  rep.total = total_loss(rep.l_rec, rep.l_con, cfg.alpha_eff(), cfg.beta_eff());
  rep.masked_count = masked_total;
  rep.batch_size = b;

  // only live branches join the root, so a disabled branch contributes no
  // cotangents and its exclusive parameters keep exactly-zero gradients
  Tensor<T> total;
  if (cfg.alpha_eff() != 0.0 && cfg.beta_eff() != 0.0)
    total = add(scale(l_rec, cfg.alpha_eff()), scale(l_con, cfg.beta_eff()));
  else if (cfg.alpha_eff() != 0.0)
    total = scale(l_rec, cfg.alpha_eff());
  else
    total = scale(l_con, cfg.beta_eff());
  ctape.backward(total);

  // seed per-sample backward passes with the combiner cotangents
  parallel_for(b, std::min<unsigned>(cfg.worker_count(), static_cast<unsigned>(b)),
               [&](std::size_t i) {
                 auto& f = fwd[i];
                 std::vector<std::pair<const Tensor<T>*, const std::vector<T>*>> seeds;
                 const std::vector<T>* g_sse = ctape.grad(sse_leaves[i]);
                 const std::vector<T>* g_hs = ctape.grad(hs_leaves[i]);
                 const std::vector<T>* g_ht = ctape.grad(ht_leaves[i]);
                 if (g_sse && f.sse.recorded()) seeds.emplace_back(&f.sse, g_sse);
                 if (g_hs && f.hs.recorded()) seeds.emplace_back(&f.hs, g_hs);
                 // ht is constant when the teacher consumes the raw, un-augmented view
                 if (g_ht && f.ht.recorded()) seeds.emplace_back(&f.ht, g_ht);
                 if (!seeds.empty()) f.tape->backward_seeded(seeds);
               });

  model.params.zero_grads();
  for (auto& f : fwd) {
    f.sctx->accumulate_grads();
    f.tctx->accumulate_grads();
  }
  opt.step(model.params.trainable(), lr, cfg.weight_decay);
  model.ema_update(cfg.ema_momentum);
  return rep;
}

struct PretrainOutcome {
  std::vector<LossReport> epoch_means;
  std::string last_checkpoint;
  std::uint64_t steps = 0;
};

template <typename T>
PretrainOutcome pretrain(Model<T>& model, const DataCache& data, const TrainConfig& cfg,
                         const std::string& out_dir = "", std::ostream* log = nullptr) {
  cfg.validate();
  tune_allocator_for_training();
  if (data.C != model.cfg.n_leads || data.T != model.cfg.crop_len())
    throw ShapeError("pretrain: cache [" + std::to_string(data.C) + "," + std::to_string(data.T) +
                     "] does not match model grid");
  std::vector<const CachedSample*> train;
  for (const auto& s : data.samples)
    if (s.split == "train") train.push_back(&s);
  if (train.empty()) throw DataError("pretrain: no training samples in cache");

  const std::size_t spe = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * spe;
  const std::size_t warmup_steps = cfg.warmup_epochs * spe;
  AdamW<T> opt;
  PretrainOutcome out;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  SpectrumCache<T> spectra;
  if (cfg.fda_enabled)
    spectra = build_spectrum_cache<T>(train, model.cfg, cfg.worker_count());

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<const CachedSample*> order = train;
    Rng rng(derive_seed(cfg.seed, "shuffle", epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(i)]);

    LossReport mean;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, order.size());
      std::vector<const CachedSample*> batch(order.begin() + start, order.begin() + stop);
      const double lr = lr_at(step, total_steps, warmup_steps, cfg.lr);
      LossReport rep;
      try {
        rep = pretrain_batch(model, batch, epoch, cfg, opt, lr,
                             cfg.fda_enabled ? &spectra : nullptr);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batches) + ": " + e.what());
      }
      if (log) {
        nlohmann::json line;
        line["step"] = step;
        line["epoch"] = epoch;
        line["lr"] = lr;
        line["l_rec"] = rep.l_rec;
        line["l_con"] = rep.l_con;
        line["total"] = rep.total;
        (*log) << line.dump() << "\n";
      }
      mean.l_rec += rep.l_rec;
      mean.l_con += rep.l_con;
      mean.total += rep.total;
      mean.masked_count += rep.masked_count;
      mean.batch_size += rep.batch_size;
      ++batches;
      ++step;
    }
    mean.l_rec /= static_cast<double>(batches);
    mean.l_con /= static_cast<double>(batches);
    mean.total /= static_cast<double>(batches);
    out.epoch_means.push_back(mean);

    if (!out_dir.empty()) {
      CheckpointMeta meta{cfg.config_hash, step};
      const std::string path = out_dir + "/ckpt_epoch_" + std::to_string(epoch) + ".ckpt";
      save_checkpoint(model.params, path, meta);
      out.last_checkpoint = path;
    }
  }
  out.steps = step;
  return out;
}

// ---- evaluation / fine-tuning --------------------------------------------------

// Forward-only pass over one split; probabilities via softmax (single-label)
// or sigmoid (multi-label).
template <typename T>
MetricsReport evaluate(Model<T>& model, const DataCache& data, const std::string& split,
                       const TrainConfig& cfg) {
  std::vector<const CachedSample*> subset;
  for (const auto& s : data.samples)
    if (s.split == split) subset.push_back(&s);
  if (subset.empty()) throw DataError("evaluate: split '" + split + "' is empty");
  const std::size_t n_classes = data.class_names.size();
  std::vector<double> probs(subset.size() * n_classes, 0.0);
  std::vector<int> labels(subset.size(), -1);
  std::vector<std::uint8_t> multi(subset.size() * n_classes, 0);

  parallel_for(subset.size(), cfg.worker_count(), [&](std::size_t i) {
    const auto& s = *subset[i];
    Tape<T> tape;
    FwdCtx<T> ctx(tape, false);
    auto x = Tensor<T>::constant({model.cfg.n_leads, model.cfg.n_patches, model.cfg.patch_len},
                                 detail::cast_signal<T>(s.signal));
    auto logits = classify(ctx, model, x, cfg.lead_subset);
    if (data.multilabel) {
      for (std::size_t c = 0; c < n_classes; ++c)
        probs[i * n_classes + c] =
            1.0 / (1.0 + std::exp(-static_cast<double>(logits.ptr()[c])));
      for (std::size_t c = 0; c < n_classes && c < s.multi.size(); ++c)
        multi[i * n_classes + c] = s.multi[c];
    } else {
      double mx = logits.ptr()[0];
      for (std::size_t c = 1; c < n_classes; ++c)
        mx = std::max(mx, static_cast<double>(logits.ptr()[c]));
      double z = 0;
      for (std::size_t c = 0; c < n_classes; ++c)
        z += std::exp(static_cast<double>(logits.ptr()[c]) - mx);
      for (std::size_t c = 0; c < n_classes; ++c)
        probs[i * n_classes + c] = std::exp(static_cast<double>(logits.ptr()[c]) - mx) / z;
      labels[i] = s.label;
    }
  });
  return compute_metrics(probs, subset.size(), n_classes, labels, multi, data.multilabel);
}

struct FinetuneOutcome {
  MetricsReport test;
  std::vector<MetricsReport> val_history;
  double best_val_acc = 0.0;
  std::size_t best_epoch = 0;
  std::string best_checkpoint;
};

template <typename T>
FinetuneOutcome finetune(Model<T>& model, const DataCache& data, const TrainConfig& cfg,
                         const std::string& out_dir = "", std::ostream* log = nullptr) {
  cfg.validate();
  tune_allocator_for_training();
  const std::size_t n_classes = data.class_names.size();
  if (n_classes < 2) throw DataError("finetune: need at least two classes");
  if (!model.cls_w) model.add_classifier(n_classes, derive_seed(cfg.seed, "head"));
  if (model.cls_w->shape != Shape{model.cfg.dim, n_classes})
    throw ShapeError("finetune: classifier head shape mismatch");
  for (auto c : cfg.lead_subset)
    if (c < 0 || static_cast<std::size_t>(c) >= model.cfg.n_leads)
      throw ConfigError("finetune: lead subset index out of range");

  std::vector<const CachedSample*> train, val, test;
  for (const auto& s : data.samples) {
    if (s.split == "train") train.push_back(&s);
    else if (s.split == "val") val.push_back(&s);
    else test.push_back(&s);
  }
  if (train.empty() || val.empty() || test.empty())
    throw DataError("finetune: all three splits must be non-empty");

  // low-data protocol: keep a seeded fraction of the training set
  if (cfg.data_ratio < 1.0) {
    Rng rng(derive_seed(cfg.seed, "subsample"));
    for (std::size_t i = train.size(); i > 1; --i)
      std::swap(train[i - 1], train[rng.uniform_int(i)]);
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(cfg.data_ratio * static_cast<double>(train.size()))));
    train.resize(keep);
  }

  const std::size_t spe = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.finetune_epochs * spe;
  const std::size_t warmup_steps = cfg.finetune_warmup_epochs * spe;
  if (total_steps <= warmup_steps) throw ConfigError("finetune: warmup exceeds schedule");
  AdamW<T> opt;
  FinetuneOutcome out;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  // best-validation snapshot (all parameter buffers)
  std::vector<std::vector<T>> best_values;
  auto snapshot = [&] {
    best_values.clear();
    for (Param<T>* p : model.params.all()) best_values.push_back(*p->value);
  };
  auto restore = [&] {
    auto params = model.params.all();
    for (std::size_t i = 0; i < params.size(); ++i) *params[i]->value = best_values[i];
  };
  snapshot();
  out.best_val_acc = -1.0;

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.finetune_epochs; ++epoch) {
    std::vector<const CachedSample*> order = train;
    Rng rng(derive_seed(cfg.seed, "ft_shuffle", epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(i)]);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, order.size());
      const std::size_t b = stop - start;
      const double lr = lr_at(step, total_steps, warmup_steps, cfg.finetune_lr);

      struct FtForward {
        std::unique_ptr<Tape<T>> tape;
        std::unique_ptr<FwdCtx<T>> ctx;
        Tensor<T> loss;
      };
      std::vector<FtForward> fwd(b);
      parallel_for(b, std::min<unsigned>(cfg.worker_count(), static_cast<unsigned>(b)),
                   [&](std::size_t i) {
                     const auto& s = *order[start + i];
                     auto& f = fwd[i];
                     f.tape = std::make_unique<Tape<T>>();
                     f.ctx = std::make_unique<FwdCtx<T>>(*f.tape, true);
                     auto x = Tensor<T>::constant(
                         {model.cfg.n_leads, model.cfg.n_patches, model.cfg.patch_len},
                         detail::cast_signal<T>(s.signal));
                     auto logits = classify(*f.ctx, model, x, cfg.lead_subset);
                     f.loss = data.multilabel
                                  ? bce_graph(logits, s.multi)
                                  : cross_entropy_graph(logits, s.label);
                     std::vector<T> cot{static_cast<T>(1.0 / static_cast<double>(b))};
                     f.tape->backward_seeded({{&f.loss, &cot}});
                   });
      model.params.zero_grads();
      double batch_loss = 0;
      for (auto& f : fwd) {
        f.ctx->accumulate_grads();
        batch_loss += static_cast<double>(f.loss.item()) / static_cast<double>(b);
      }
      try {
        opt.step(model.params.trainable(), lr, cfg.weight_decay);
      } catch (const NumericError& e) {
        throw NumericError("finetune epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (log) {
        nlohmann::json line;
        line["step"] = step;
        line["epoch"] = epoch;
        line["lr"] = lr;
        line["loss"] = batch_loss;
        (*log) << line.dump() << "\n";
      }
      ++step;
    }

    MetricsReport vm = evaluate(model, data, "val", cfg);
    out.val_history.push_back(vm);
    if (log) {
      nlohmann::json line;
      line["epoch"] = epoch;
      line["split"] = "val";
      line["acc"] = vm.acc;
      line["macro_f1"] = vm.macro_f1;
      line["macro_auroc"] = vm.macro_auroc;
      (*log) << line.dump() << "\n";
    }
    if (vm.acc > out.best_val_acc) {
      out.best_val_acc = vm.acc;
      out.best_epoch = epoch;
      snapshot();
    }
  }

  restore();
  out.test = evaluate(model, data, "test", cfg);
  if (log) {
    nlohmann::json line;
    line["split"] = "test";
    line["acc"] = out.test.acc;
    line["macro_f1"] = out.test.macro_f1;
    line["macro_auroc"] = out.test.macro_auroc;
    (*log) << line.dump() << "\n";
  }
  if (!out_dir.empty()) {
    CheckpointMeta meta{cfg.config_hash, step};
    out.best_checkpoint = out_dir + "/finetune_best.ckpt";
    save_checkpoint(model.params, out.best_checkpoint, meta);
  }
  return out;
}

// ---- mask-rate sweep ------------------------------------------------------------

struct SweepCell {
  double p_time = 0;
  double p_lead = 0;
  double final_l_rec = 0;
  MetricsReport test;
};

template <typename T>
std::vector<SweepCell> sweep_masks(const ModelConfig& mc, const TrainConfig& base,
                                   const DataCache& data, const std::vector<double>& p_times,
                                   const std::vector<double>& p_leads,
                                   std::ostream* log = nullptr) {
  if (p_times.empty() || p_leads.empty()) throw ConfigError("sweep: empty grid");
  std::vector<SweepCell> cells;
  for (double pt : p_times)
    for (double pl : p_leads) {
      TrainConfig cfg = base;
      cfg.p_time = pt;
      cfg.p_lead = pl;
      auto model = Model<T>::build(mc, cfg.seed);
      auto pre = pretrain(model, data, cfg, "", log);
      auto ft = finetune(model, data, cfg, "", log);
      SweepCell cell;
      cell.p_time = pt;
      cell.p_lead = pl;
      cell.final_l_rec = pre.epoch_means.back().l_rec;
      cell.test = ft.test;
      cells.push_back(cell);
    }
  return cells;
}

}  // namespace coreecg
