// Acceptance suite: runs every verification gate end to end and prints one
// pass/fail line per criterion. Exit code is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "coreecg/config.hpp"
#include "coreecg/fda.hpp"
#include "coreecg/primitive.hpp"
#include "coreecg/signal.hpp"
#include "coreecg/trainer.hpp"

using namespace coreecg;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %-22s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// ---- shared fixtures -------------------------------------------------------

ModelConfig micro_config() {
  ModelConfig c;
  c.dim = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.latent_dec_layers = 1;
  c.time_dec_layers = 1;
  c.patch_len = 5;
  c.n_leads = 3;
  c.n_patches = 4;
  c.proj_hidden = 8;
  c.proj_out = 6;
  return c;
}

// Synthetic 4-class dataset through the full preprocessing pipeline. When
// force_split is set, every record lands in that split (held-out eval sets).
DataCache make_synth_cache_split(std::size_t n_records, std::uint64_t seed,
                                 const char* force_split) {
  SynthParams sp;
  sp.n_records = n_records;
  sp.seed = seed;
  auto synth = generate_synthetic(sp);
  DataCache cache;
  cache.C = 12;
  cache.T = 2250;
  cache.class_names = synth.manifest.class_names;
  cache.multilabel = false;
  std::vector<std::vector<CachedSample>> rows(n_records);
  parallel_for(n_records, max_threads(), [&](std::size_t i) {
    const auto& entry = synth.manifest.entries[i];
    const std::string split = force_split ? force_split : entry.split;
    CropMode mode = split == "train" ? CropMode::random : CropMode::center;
    auto crops =
        preprocess_record(synth.records[i], mode, derive_seed(seed, "pp", entry.record_id));
    for (const auto& crop : crops) {
      CachedSample s;
      s.record_id = crop.record_id;
      s.split = split;
      s.label = entry.label;
      s.crop_offset = crop.crop_offset;
      s.signal = crop.samples;
      rows[i].push_back(std::move(s));
    }
  });
  for (auto& r : rows)
    for (auto& s : r) cache.samples.push_back(std::move(s));
  return cache;
}

DataCache make_synth_cache(std::size_t n_records, std::uint64_t seed) {
  return make_synth_cache_split(n_records, seed, nullptr);
}

const DataCache& shared_cache() {
  static DataCache cache = make_synth_cache(200, 2024);
  return cache;
}

std::string work_dir() {
  auto dir = std::filesystem::temp_directory_path() / "coreecg_acceptance";
  std::filesystem::create_directories(dir);
  return dir.string();
}

// ---- criterion 1: gradient suite ---------------------------------------------

// Full pretraining loss (both branches + combiner) on one tape so the whole
// parameter set can be checked against central finite differences.
double end_to_end_loss(Model<double>& model, const std::vector<CachedSample>& samples,
                       const std::vector<MaskPlan>& plans, const std::vector<FdaNoise>& noises,
                       const TrainConfig& cfg, bool with_grads) {
  Tape<double> tape;
  FwdCtx<double> sctx(tape, true), tctx(tape, false);
  const auto& mc = model.cfg;
  std::vector<Tensor<double>> sses, hss, hts;
  std::size_t masked_total = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto x_sig = Tensor<double>::constant({mc.n_leads, mc.crop_len()},
                                          detail::cast_signal<double>(samples[i].signal));
    auto x = reshape(x_sig, {mc.n_leads, mc.n_patches, mc.patch_len});
    auto vis = visible_index(plans[i]);
    auto z_v = encode_visible(sctx, model, x, vis);
    auto xhat = decode_time(sctx, model, z_v, vis);
    sses.push_back(masked_sse(x, xhat, plans[i]));
    masked_total += plans[i].count_masked();
    FrequencyImportance<double> fi{sctx.p(*model.fda_w), cfg.fda_epsilon};
    auto x_aug = fda_augment(x_sig, fi, noises[i], mc.patch_len);
    hts.push_back(reshape(teacher_forward(tctx, model, x_aug), {1, mc.proj_out}));
    auto zg = decode_latent_global(sctx, model, z_v, vis);
    hss.push_back(reshape(project(sctx, model.student_proj, zg), {1, mc.proj_out}));
  }
  auto l_rec = scale(sum_all(concat(sses, 0)), 1.0 / static_cast<double>(masked_total));
  auto l_con = infonce_graph(concat(hss, 0), concat(hts, 0), cfg.tau);
  auto total = add(scale(l_rec, cfg.alpha), scale(l_con, cfg.beta));
  if (with_grads) {
    tape.backward(total);
    model.params.zero_grads();
    sctx.accumulate_grads();
  }
  return total.item();
}

void criterion_1() {
  auto t0 = Clock::now();
  // (a) every primitive against central finite differences at 1e-4
  double worst_prim = 0;
  for (const auto& [kind, name] : prim_table()) {
    (void)name;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto rep = grad_check(kind, default_gradcheck_shapes(kind), 1e-4, seed);
      worst_prim = std::max(worst_prim, rep.max_rel_err);
    }
  }

  // (b) end-to-end L_rec + L_con on a toy batch at 1e-3, float64
  auto mc = micro_config();
  auto model = Model<double>::build(mc, 42);
  TrainConfig cfg;
  cfg.seed = 7;
  cfg.k_visible = 1;
  Rng rng(11);
  std::vector<CachedSample> samples(2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].record_id = "e2e-" + std::to_string(i);
    samples[i].signal.resize(mc.n_leads * mc.crop_len());
    for (auto& v : samples[i].signal) v = static_cast<float>(rng.normal());
  }
  std::vector<MaskPlan> plans;
  std::vector<FdaNoise> noises;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    plans.push_back(detail::draw_plan(cfg, mc.n_leads, mc.n_patches, 100 + i));
    noises.push_back(compute_fda_noise(Tensor<double>(model.fda_w->shape, model.fda_w->value),
                                       cfg.fda_epsilon, 200 + i));
  }

  end_to_end_loss(model, samples, plans, noises, cfg, /*with_grads=*/true);
  std::vector<std::pair<Param<double>*, std::vector<double>>> grads;
  for (Param<double>* p : model.params.trainable()) grads.emplace_back(p, p->grad);

  const double h = 1e-5;
  double worst_e2e = 0;
  Rng coord_rng(55);
  for (auto& [p, g] : grads) {
    const std::size_t n_coords = std::min<std::size_t>(6, p->size());
    for (std::size_t c = 0; c < n_coords; ++c) {
      const std::size_t idx = coord_rng.uniform_int(p->size());
      const double keep = (*p->value)[idx];
      (*p->value)[idx] = keep + h;
      const double lp = end_to_end_loss(model, samples, plans, noises, cfg, false);
      (*p->value)[idx] = keep - h;
      const double lm = end_to_end_loss(model, samples, plans, noises, cfg, false);
      (*p->value)[idx] = keep;
      const double fd = (lp - lm) / (2 * h);
      const double an = g[idx];
      worst_e2e =
          std::max(worst_e2e, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3}));
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_prim <= 1e-4 && worst_e2e <= 1e-3 && secs < 120.0;
  report(1, "gradient suite", pass,
         fmt("primitives max_rel_err=%.2e (tol 1e-4), end-to-end max_rel_err=%.2e (tol 1e-3), "
             "runtime %.1fs (< 120s)",
             worst_prim, worst_e2e, secs));
}

// ---- criterion 2: FFT round trip ------------------------------------------------

void criterion_2() {
  double worst = 0;
  for (std::size_t t : {8u, 75u, 2250u}) {
    Rng rng(5000 + t);
    std::vector<double> x(t);
    for (auto& v : x) v = rng.normal();
    auto spec = fftcore::rfft(x.data(), t);
    auto back = fftcore::irfft(spec.data(), fftcore::rfft_bins(t), t);
    for (std::size_t i = 0; i < t; ++i) worst = std::max(worst, std::abs(back[i] - x[i]));
  }
  report(2, "fft round trip", worst <= 1e-9,
         fmt("max abs err %.2e over T in {8,75,2250} (tol 1e-9)", worst));
}

// ---- criterion 3: STDM statistics -----------------------------------------------

void criterion_3() {
  auto t0 = Clock::now();
  const std::size_t plans = 100000, C = 12, N = 30;
  std::size_t vis = 0, dropped = 0, violations = 0;
  for (std::size_t s = 0; s < plans; ++s) {
    auto plan = sample_mask(C, N, 0.5, 0.2, 4, s);
    vis += plan.count_visible();
    dropped += plan.count_dropped();
    for (std::size_t i = 0; i < C * N; ++i)
      if (plan.V[i] + plan.M[i] + plan.D[i] != 1) ++violations;
  }
  const double cells = static_cast<double>(plans) * C * N;
  const double vis_rate = static_cast<double>(vis) / cells;
  const double drop_rate = static_cast<double>(dropped) / cells;
  const double secs = seconds_since(t0);
  const bool pass = std::abs(vis_rate - 1.0 / 6.0) <= 0.003 &&
                    std::abs(drop_rate - 1.0 / 15.0) <= 0.003 && violations == 0 && secs < 60.0;
  report(3, "stdm statistics", pass,
         fmt("visible %.4f (1/6 +- 0.003), dropped %.4f (1/15 +- 0.003), violations %zu, "
             "runtime %.1fs (< 60s)",
             vis_rate, drop_rate, violations, secs));
}

// ---- criterion 4: FDA identities --------------------------------------------------

void criterion_4() {
  bool pass = true;
  std::string why = "ok";

  // W = 0: output is exactly half the input, independent of the seed
  {
    Rng rng(31);
    std::vector<double> xv(3 * 40);
    for (auto& v : xv) v = rng.normal();
    auto x = Tensor<double>::constant({3, 40}, xv);
    FrequencyImportance<double> fi{Tensor<double>::zeros({3, 21})};
    auto o1 = fda_augment(x, fi, std::uint64_t{1}, 8);
    auto o2 = fda_augment(x, fi, std::uint64_t{9}, 8);
    if (o1.values() != o2.values()) {
      pass = false;
      why = "W=0 output not seed-invariant";
    }
    for (std::size_t i = 0; i < xv.size() && pass; ++i) {
      const double expect = 0.5 * xv[i];
      if (std::abs(o1.ptr()[i] - expect) > 1e-6 * std::max(1.0, std::abs(expect))) {
        pass = false;
        why = fmt("W=0 halving violated at %zu", i);
      }
    }
  }

  // gated bins scale exactly by A for any seed
  if (pass) {
    const std::size_t t_len = 32, k = 17;
    Rng rng(7);
    std::vector<double> xv(t_len), wv(k);
    for (auto& v : xv) v = rng.normal();
    for (auto& v : wv) v = rng.normal();
    auto x = Tensor<double>::constant({1, t_len}, xv);
    FrequencyImportance<double> fi{Tensor<double>::constant({1, k}, wv)};
    auto n1 = compute_fda_noise(fi.W, fi.epsilon, 1);
    auto n2 = compute_fda_noise(fi.W, fi.epsilon, 2);
    auto spec_in = rfft(x);
    auto s1 = rfft(reshape(fda_augment(x, fi, n1, 8), {1, t_len}));
    auto s2 = rfft(reshape(fda_augment(x, fi, n2, 8), {1, t_len}));
    for (std::size_t j = 0; j < k && pass; ++j) {
      if (n1.lambda[j] != 0.0) continue;
      const double a = 1.0 / (1.0 + std::exp(-wv[j]));
      for (int part = 0; part < 2; ++part) {
        const double expect = a * spec_in.ptr()[2 * j + part];
        if (std::abs(s1.ptr()[2 * j + part] - expect) > 1e-7 * std::max(1.0, std::abs(expect)) ||
            std::abs(s1.ptr()[2 * j + part] - s2.ptr()[2 * j + part]) >
                1e-9 * std::max(1.0, std::abs(expect))) {
          pass = false;
          why = fmt("gated bin %zu not scaled deterministically by A", j);
        }
      }
    }
  }

  // T = 8 case against a direct DFT oracle
  double oracle_err = 0;
  if (pass) {
    const std::size_t t_len = 8, k = 5;
    Rng rng(77);
    std::vector<double> xv(t_len), wv(k);
    for (auto& v : xv) v = rng.normal();
    for (auto& v : wv) v = rng.normal();
    auto x = Tensor<double>::constant({1, t_len}, xv);
    FrequencyImportance<double> fi{Tensor<double>::constant({1, k}, wv)};
    auto noise = compute_fda_noise(fi.W, fi.epsilon, 99);
    auto fast = fda_augment(x, fi, noise, 4);
    std::vector<std::complex<double>> spec(k);
    for (std::size_t j = 0; j < k; ++j) {
      std::complex<double> s{0, 0};
      for (std::size_t n = 0; n < t_len; ++n) {
        const double ang = -2.0 * fftcore::kPi * static_cast<double>(j * n) / t_len;
        s += xv[n] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      spec[j] = s * (1.0 / (1.0 + std::exp(-wv[j])) + noise.noise[j]);
    }
    for (std::size_t n = 0; n < t_len; ++n) {
      std::complex<double> acc = spec[0];
      for (std::size_t j = 1; j < k; ++j) {
        const double ang = 2.0 * fftcore::kPi * static_cast<double>(j * n) / t_len;
        std::complex<double> w(std::cos(ang), std::sin(ang));
        acc += (j == k - 1) ? spec[j] * w : spec[j] * w + std::conj(spec[j] * w);
      }
      oracle_err = std::max(oracle_err, std::abs(fast.ptr()[n] - acc.real() / t_len));
    }
    if (oracle_err > 1e-9) {
      pass = false;
      why = "DFT oracle mismatch";
    }
  }
  report(4, "fda identities", pass,
         pass ? fmt("halving, seed invariance, gated-bin scaling, DFT oracle err %.2e (tol 1e-9)",
                    oracle_err)
              : why);
}

// ---- criterion 5: loss oracles ----------------------------------------------------

double auroc_pairs(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  double num = 0;
  std::size_t np = 0, nn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (l[i]) ++np;
    else ++nn;
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!l[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j]) continue;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / (static_cast<double>(np) * static_cast<double>(nn));
}

void criterion_5() {
  bool pass = true;
  std::string why = "ok";

  auto h1 = Tensor<double>::constant({1, 3}, {0.2, -0.4, 0.9});
  if (infonce_graph(h1, h1, 0.2).item() != 0.0) {
    pass = false;
    why = "B=1 InfoNCE not exactly 0";
  }
  auto hs = Tensor<double>::constant({2, 2}, {1, 0, 0, 1});
  const double expect = std::log(1.0 + std::exp(-5.0));
  if (std::abs(infonce_graph(hs, hs, 0.2).item() - expect) > 1e-9) {
    pass = false;
    why = "orthogonal B=2 hand value off";
  }

  // L_rec bitwise insensitivity to unmasked perturbations
  if (pass) {
    Rng rng(4);
    std::vector<double> xv(2 * 3 * 4), xh(2 * 3 * 4);
    for (auto& v : xv) v = rng.normal();
    for (auto& v : xh) v = rng.normal();
    auto plan = sample_mask(2, 3, 0.4, 0.3, 1, 17);
    auto x = Tensor<double>::constant({2, 3, 4}, xv);
    const double base =
        reconstruction_loss_graph(x, Tensor<double>::constant({2, 3, 4}, xh), plan).item();
    auto xh2 = xh;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t n = 0; n < 3; ++n) {
        if (plan.M[plan.at(c, n)]) continue;
        for (std::size_t p = 0; p < 4; ++p) xh2[(c * 3 + n) * 4 + p] = 1e9 * rng.normal();
      }
    const double poked =
        reconstruction_loss_graph(x, Tensor<double>::constant({2, 3, 4}, xh2), plan).item();
    if (base != poked) {
      pass = false;
      why = "L_rec changed under unmasked perturbation";
    }
  }

  // AUROC equals exhaustive pair counting on every label set of size <= 12
  double worst_auc_err = 0;
  std::size_t checked = 0;
  if (pass) {
    Rng rng(3);
    const std::vector<double> grid = {0.1, 0.25, 0.5, 0.75};
    for (std::size_t n = 2; n <= 12 && pass; ++n) {
      for (std::uint32_t bits = 1; bits + 1 < (1u << n); ++bits) {
        std::vector<std::uint8_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = (bits >> i) & 1;
        std::vector<double> scores(n);
        for (auto& sc : scores) sc = grid[rng.uniform_int(grid.size())];
        const double fast = auroc_rank(scores, labels);
        const double slow = auroc_pairs(scores, labels);
        worst_auc_err = std::max(worst_auc_err, std::abs(fast - slow));
        ++checked;
        if (std::abs(fast - slow) > 1e-12) {
          pass = false;
          why = fmt("AUROC mismatch at n=%zu bits=%u", n, bits);
          break;
        }
      }
    }
  }
  report(5, "loss oracles", pass,
         pass ? fmt("InfoNCE hand values, bitwise L_rec gating, AUROC==pair-count on %zu "
                    "label sets (max dev %.1e)",
                    checked, worst_auc_err)
              : why);
}

// ---- criteria 6 and 7: training dynamics + transfer benefit ------------------------

struct PretrainRun {
  double first_l_rec = 0, final_l_rec = 0;
  std::string checkpoint;
};

TrainConfig toy_train_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  cfg.warmup_epochs = 2;
  cfg.lr = 1e-3;
  cfg.seed = seed;
  cfg.k_visible = 4;
  return cfg;
}

std::vector<PretrainRun> g_pretrain_runs;

void criterion_6() {
  auto t0 = Clock::now();
  const auto& cache = shared_cache();
  std::vector<double> ratios;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto model = Model<float>::build(ModelConfig::toy(), seed);
    auto cfg = toy_train_config(seed);
    const std::string dir = work_dir() + "/pretrain_seed" + std::to_string(seed);
    auto out = pretrain(model, cache, cfg, dir);
    PretrainRun run;
    run.first_l_rec = out.epoch_means.front().l_rec;
    run.final_l_rec = out.epoch_means.back().l_rec;
    run.checkpoint = out.last_checkpoint;
    g_pretrain_runs.push_back(run);
    ratios.push_back(run.final_l_rec / run.first_l_rec);
  }
  std::sort(ratios.begin(), ratios.end());
  const double median = ratios[1];
  const double secs = seconds_since(t0);
  const unsigned cores = std::thread::hardware_concurrency();
  // budget is stated for 4 desktop cores; on narrower machines check the
  // equivalent core-seconds
  const bool time_ok = cores >= 4 ? secs < 600.0 : secs * cores < 2400.0;
  const bool pass = median < 0.7 && time_ok;
  report(6, "training dynamics", pass,
         fmt("median final/first L_rec = %.3f (< 0.7) over 3 seeds, runtime %.0fs on %u cores "
             "(budget 600s on 4 cores)",
             median, secs, cores));
}

// Protocol: the dynamics checkpoints (20 epochs) are continued for another
// 40 epochs — at this scale reconstruction features need the longer schedule
// before they transfer. Both arms then get an identical gentle fine-tune
// budget (40 epochs, lr 5e-4, 25% of the labels); accuracies are measured on
// a larger held-out synthetic test set so per-seed margins are not dominated
// by small-sample noise.
void criterion_7() {
  const auto& cache = shared_cache();
  const DataCache big_test = make_synth_cache_split(120, 7777, "test");
  std::vector<double> margins, pre_accs, scratch_accs;
  for (std::size_t i = 0; i < g_pretrain_runs.size(); ++i) {
    const std::uint64_t seed = i + 1;

    // continue pretraining to 60 total epochs
    auto pretrained = Model<float>::build(ModelConfig::toy(), seed);
    load_checkpoint(pretrained.params, g_pretrain_runs[i].checkpoint);
    TrainConfig cont = toy_train_config(200 + seed);
    cont.epochs = 40;
    pretrain(pretrained, cache, cont);

    TrainConfig cfg = toy_train_config(seed);
    cfg.finetune_epochs = 40;
    cfg.finetune_lr = 5e-4;
    cfg.data_ratio = 0.25;

    finetune(pretrained, cache, cfg);
    const double acc_pre = evaluate(pretrained, big_test, "test", cfg).acc;

    auto scratch = Model<float>::build(ModelConfig::toy(), seed);
    finetune(scratch, cache, cfg);
    const double acc_scratch = evaluate(scratch, big_test, "test", cfg).acc;

    pre_accs.push_back(acc_pre);
    scratch_accs.push_back(acc_scratch);
    margins.push_back(acc_pre - acc_scratch);
  }
  std::sort(margins.begin(), margins.end());
  const double median = margins[margins.size() / 2];
  report(7, "transfer benefit", median >= 0.0,
         fmt("median margin %+.3f (>= 0), pretrained acc {%.2f,%.2f,%.2f} vs scratch "
             "{%.2f,%.2f,%.2f} on the 120-record held-out set",
             median, pre_accs[0], pre_accs[1], pre_accs[2], scratch_accs[0], scratch_accs[1],
             scratch_accs[2]));
}

// ---- criterion 8: ablation wiring ---------------------------------------------------

void criterion_8() {
  DataCache cache = make_synth_cache(16, 512);
  bool pass = true;
  std::string why = "ok";

  auto grad_norm = [](const Param<float>* p) {
    double n = 0;
    for (float g : p->grad) n += std::abs(static_cast<double>(g));
    return n;
  };

  for (auto ablation : {TrainConfig::Ablation::contrastive_only,
                        TrainConfig::Ablation::reconstructive_only, TrainConfig::Ablation::core}) {
    auto model = Model<float>::build(ModelConfig::toy(), 3);
    TrainConfig cfg = toy_train_config(3);
    cfg.epochs = 1;
    cfg.warmup_epochs = 0;
    cfg.ablation = ablation;

    std::vector<const CachedSample*> batch;
    for (const auto& s : cache.samples)
      if (s.split == "train") batch.push_back(&s);
    batch.resize(std::min<std::size_t>(batch.size(), 8));
    AdamW<float> opt;
    auto rep = pretrain_batch(model, batch, 1, cfg, opt, 1e-4);
    if (!std::isfinite(rep.total)) {
      pass = false;
      why = "non-finite loss";
      break;
    }
    double time_dec_g = grad_norm(model.time_dec.head_w) + grad_norm(model.time_dec.mask_token);
    for (const auto& blk : model.time_dec.blocks) time_dec_g += grad_norm(blk.wq);
    double con_g = grad_norm(model.latent_dec.mask_token) + grad_norm(model.student_proj.w1);
    switch (ablation) {
      case TrainConfig::Ablation::contrastive_only:
        if (time_dec_g != 0.0 || con_g == 0.0) {
          pass = false;
          why = "contrastive_only gradients misrouted";
        }
        break;
      case TrainConfig::Ablation::reconstructive_only:
        if (time_dec_g == 0.0 || con_g != 0.0) {
          pass = false;
          why = "reconstructive_only gradients misrouted";
        }
        break;
      case TrainConfig::Ablation::core:
        if (time_dec_g == 0.0 || con_g == 0.0) {
          pass = false;
          why = "core run missing gradients";
        }
        break;
    }
    if (!pass) break;
  }
  report(8, "ablation wiring", pass,
         pass ? "contrastive-only / reconstructive-only / joint all complete; "
                "branch-exclusive gradients exactly zero when disabled"
              : why);
}

// ---- criterion 9: determinism --------------------------------------------------------

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void criterion_9() {
  DataCache cache = make_synth_cache(32, 900);
  auto run = [&](const std::string& tag) {
    auto model = Model<float>::build(ModelConfig::toy(), 5);
    TrainConfig cfg = toy_train_config(5);
    cfg.epochs = 1;
    cfg.warmup_epochs = 0;
    cfg.deterministic = true;
    const std::string dir = work_dir() + "/det_" + tag;
    std::filesystem::remove_all(dir);
    pretrain(model, cache, cfg, dir);
    return dir + "/ckpt_epoch_1.ckpt";
  };
  const std::string a = run("a"), b = run("b");
  const bool pass = file_bytes(a) == file_bytes(b) && !file_bytes(a).empty();
  report(9, "determinism", pass,
         pass ? "two identical-seed pretrain runs produced bitwise-identical epoch-1 checkpoints"
              : "checkpoint bytes differ");
}

// ---- criterion 10: preprocessing ------------------------------------------------------

void criterion_10() {
  bool pass = true;
  std::string why = "ok";

  // analytic Butterworth response checks
  auto sine = [](double freq, float fs, double secs) {
    EcgRecord rec;
    rec.n_leads = 1;
    rec.n_samples = static_cast<std::size_t>(secs * fs);
    rec.fs = fs;
    rec.record_id = "sine";
    rec.samples.resize(rec.n_samples);
    for (std::size_t i = 0; i < rec.n_samples; ++i)
      rec.samples[i] = static_cast<float>(std::sin(2.0 * fftcore::kPi * freq * i / fs));
    return rec;
  };
  {
    auto filt = bandpass_filter(sine(10.0, 500.0f, 30.0));
    float peak = 0;
    for (std::size_t i = filt.n_samples / 3; i < 2 * filt.n_samples / 3; ++i)
      peak = std::max(peak, std::abs(filt.samples[i]));
    if (peak < std::pow(10.0, -1.0 / 20.0) || peak > std::pow(10.0, 1.0 / 20.0)) {
      pass = false;
      why = fmt("10 Hz response %.3f outside +-1 dB", peak);
    }
  }
  if (pass) {
    auto filt = bandpass_filter(sine(0.1, 500.0f, 30.0));
    float peak = 0;
    for (std::size_t i = filt.n_samples / 3; i < 2 * filt.n_samples / 3; ++i)
      peak = std::max(peak, std::abs(filt.samples[i]));
    if (peak > 0.1f) {
      pass = false;
      why = fmt("0.1 Hz response %.3f, needs >= 20 dB attenuation", peak);
    }
  }

  // pipeline shape + Einthoven identity on generated records
  if (pass) {
    SynthParams sp;
    sp.n_records = 20;
    sp.seed = 321;
    auto synth = generate_synthetic(sp);
    for (const auto& rec : synth.records) {
      float worst = 0;
      for (std::size_t i = 0; i < rec.n_samples; ++i)
        worst = std::max(worst,
                         std::abs(rec.lead(1)[i] - (rec.lead(0)[i] + rec.lead(2)[i])));
      if (worst > 1e-6f) {
        pass = false;
        why = "Einthoven identity violated";
        break;
      }
      auto crops = preprocess_record(rec, CropMode::center, 77);
      for (const auto& crop : crops) {
        auto patches = patchify(crop, 75);
        if (patches.C != 12 || patches.N != 30 || patches.P != 75) {
          pass = false;
          why = "pipeline shape not [12,30,75]";
        }
        for (float v : patches.data)
          if (!std::isfinite(v)) {
            pass = false;
            why = "NaN in pipeline output";
          }
      }
      if (!pass) break;
    }
  }
  report(10, "preprocessing", pass,
         pass ? "Butterworth 10 Hz within 1 dB, 0.1 Hz attenuated >= 20 dB, pipeline "
                "[12,30,75], Einthoven <= 1e-6"
              : why);
}

}  // namespace

int main() {
  tune_allocator_for_training();
  std::printf("acceptance suite (%u hardware cores, %u workers)\n",
              std::thread::hardware_concurrency(), max_threads());
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  std::printf("%d of 10 criteria failed\n", g_failures);
  return g_failures;
}
