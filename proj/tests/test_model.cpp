#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "coreecg/model.hpp"
#include "coreecg/objectives.hpp"

using namespace coreecg;

namespace {

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

Tensor<double> random_patches(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(c.n_leads * c.n_patches * c.patch_len);
  for (auto& x : v) x = rng.normal();
  return Tensor<double>::constant({c.n_leads, c.n_patches, c.patch_len}, std::move(v));
}

}  // namespace

TEST_CASE("toy preset and config validation") {
  auto toy = ModelConfig::toy();
  CHECK(toy.dim == 32);
  CHECK(toy.heads == 2);
  CHECK(toy.enc_layers == 2);
  CHECK(toy.latent_dec_layers == 2);
  CHECK(toy.time_dec_layers == 2);
  CHECK(toy.freq_bins() == 1126);
  ModelConfig bad;
  bad.dim = 30;
  bad.heads = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("shape contracts hold across random micro configs") {
  Rng rng(1234);
  for (int trial = 0; trial < 5; ++trial) {
    ModelConfig c;
    c.heads = 1 + rng.uniform_int(2);
    c.dim = c.heads * (3 + rng.uniform_int(4));
    c.enc_layers = 1 + rng.uniform_int(2);
    c.latent_dec_layers = 1 + rng.uniform_int(2);
    c.time_dec_layers = 1;
    c.patch_len = 3 + rng.uniform_int(3);
    c.n_leads = 2 + rng.uniform_int(3);
    c.n_patches = 2 + rng.uniform_int(3);
    c.proj_hidden = 4 + rng.uniform_int(5);
    c.proj_out = 3 + rng.uniform_int(4);
    auto model = Model<double>::build(c, trial);
    auto plan = sample_mask(c.n_leads, c.n_patches, 0.3, 0.2, 1, trial + 7);
    auto vis = visible_index(plan);
    if (vis.rows.empty()) continue;
    auto x = random_patches(c, 55 + trial);

    Tape<double> tape;
    FwdCtx<double> ctx(tape, true);
    auto z_v = encode_visible(ctx, model, x, vis);
    CHECK(z_v.shape == Shape{vis.rows.size(), c.dim});
    auto xhat = decode_time(ctx, model, z_v, vis);
    CHECK(xhat.shape == Shape{c.n_leads, c.n_patches, c.patch_len});
    auto zg = decode_latent_global(ctx, model, z_v, vis);
    CHECK(zg.shape == Shape{c.dim});
    auto hs = project(ctx, model.student_proj, zg);
    CHECK(hs.shape == Shape{c.proj_out});
    FwdCtx<double> tctx(tape, false);
    auto ht = teacher_forward(tctx, model, x);
    CHECK(ht.shape == Shape{c.proj_out});
    for (std::size_t i = 0; i < ht.size(); ++i) CHECK(std::isfinite(ht.ptr()[i]));
  }
}

TEST_CASE("empty visible set is an error") {
  auto c = micro_config();
  auto model = Model<double>::build(c, 0);
  auto plan = sample_mask(c.n_leads, c.n_patches, 1.0, 0.2, 1, 0);
  auto vis = visible_index(plan);
  auto x = random_patches(c, 1);
  Tape<double> tape;
  FwdCtx<double> ctx(tape, true);
  CHECK_THROWS_AS(encode_visible(ctx, model, x, vis), DataError);
}

TEST_CASE("encoder is permutation equivariant in the token list") {
  auto c = micro_config();
  auto model = Model<double>::build(c, 3);
  auto plan = sample_mask(c.n_leads, c.n_patches, 0.4, 0.2, 1, 5);
  auto vis = visible_index(plan);
  REQUIRE(vis.rows.size() >= 3);
  auto x = random_patches(c, 2);

  Tape<double> t1;
  FwdCtx<double> c1(t1, true);
  auto out1 = encode_visible(c1, model, x, vis);

  // rotate the token list by one
  VisibleIndex perm;
  const std::size_t L = vis.rows.size();
  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t j = (i + 1) % L;
    perm.rows.push_back(vis.rows[j]);
    perm.lead_ids.push_back(vis.lead_ids[j]);
    perm.patch_ids.push_back(vis.patch_ids[j]);
  }
  Tape<double> t2;
  FwdCtx<double> c2(t2, true);
  auto out2 = encode_visible(c2, model, x, perm);
  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t j = (i + 1) % L;
    for (std::size_t d = 0; d < c.dim; ++d)
      CHECK(std::abs(out1.ptr()[j * c.dim + d] - out2.ptr()[i * c.dim + d]) <= 1e-5);
  }
}

TEST_CASE("latent decoder with zeroed blocks reduces to the grid mean") {
  auto c = micro_config();
  auto model = Model<double>::build(c, 9);
  // zero the residual write-backs so every block is the identity
  for (auto& blk : model.latent_dec.blocks)
    for (Param<double>* p : {blk.wo, blk.bo, blk.w2, blk.b2})
      std::fill(p->value->begin(), p->value->end(), 0.0);

  auto plan = sample_mask(c.n_leads, c.n_patches, 0.4, 0.2, 1, 2);
  auto vis = visible_index(plan);
  REQUIRE(!vis.rows.empty());
  auto x = random_patches(c, 8);

  Tape<double> tape;
  FwdCtx<double> ctx(tape, true);
  auto z_v = encode_visible(ctx, model, x, vis);
  auto zg = decode_latent_global(ctx, model, z_v, vis);

  // oracle: assemble the grid by hand and average it
  const std::size_t CN = c.seq_len();
  std::vector<double> expect(c.dim, 0.0);
  const auto& mask_tok = *model.latent_dec.mask_token->value;
  const auto& lead_emb = *model.student_enc.lead_embed->value;
  const auto& pos_emb = *model.pos_embed->value;
  for (std::size_t cidx = 0; cidx < c.n_leads; ++cidx)
    for (std::size_t n = 0; n < c.n_patches; ++n) {
      const std::size_t row = cidx * c.n_patches + n;
      std::ptrdiff_t vis_slot = -1;
      for (std::size_t q = 0; q < vis.rows.size(); ++q)
        if (vis.rows[q] == static_cast<std::int64_t>(row)) vis_slot = static_cast<std::ptrdiff_t>(q);
      for (std::size_t d = 0; d < c.dim; ++d) {
        double tok = vis_slot >= 0 ? z_v.ptr()[static_cast<std::size_t>(vis_slot) * c.dim + d]
                                   : mask_tok[d];
        tok += lead_emb[cidx * c.dim + d] + pos_emb[n * c.dim + d];
        expect[d] += tok / static_cast<double>(CN);
      }
    }
  for (std::size_t d = 0; d < c.dim; ++d)
    CHECK(zg.ptr()[d] == doctest::Approx(expect[d]).epsilon(1e-10));
}

TEST_CASE("teacher path equals the student path at initialization") {
  auto c = micro_config();
  auto model = Model<double>::build(c, 21);
  auto x = random_patches(c, 3);

  Tape<double> tape;
  FwdCtx<double> tctx(tape, false);
  auto ht = teacher_forward(tctx, model, x);

  // student path on the full grid: encode everything, mean pool, project
  MaskPlan all_vis = uniform_random_mask(c.n_leads, c.n_patches, 0.0, 0);
  auto vis = visible_index(all_vis);
  Tape<double> tape2;
  FwdCtx<double> ctx(tape2, true);
  auto tokens = encode_visible(ctx, model, x, vis);
  auto pooled = reshape(mean_pool(tokens, 0), Shape{c.dim});
  auto hs = project(ctx, model.student_proj, pooled);
  for (std::size_t i = 0; i < c.proj_out; ++i)
    CHECK(std::abs(ht.ptr()[i] - hs.ptr()[i]) <= 1e-6);
}

TEST_CASE("teacher parameters take no gradient but pass it to inputs") {
  auto c = micro_config();
  auto model = Model<double>::build(c, 4);
  Tape<double> tape;
  FwdCtx<double> sctx(tape, true);
  FwdCtx<double> tctx(tape, false);
  auto w = sctx.p(*model.fda_w);  // pretend-augmentation: x scaled by sigmoid(W00)
  auto x = random_patches(c, 5);
  auto gate = reshape(index_select(reshape(sigmoid(w), {model.fda_w->size()}), 0, {0}), {1, 1, 1});
  auto x_aug = mul(x, gate);
  auto ht = teacher_forward(tctx, model, x_aug);
  auto loss = sum_all(mul(ht, ht));
  tape.backward(loss);
  model.params.zero_grads();
  sctx.accumulate_grads();
  tctx.accumulate_grads();
  double fda_gnorm = 0;
  for (double g : model.fda_w->grad) fda_gnorm += std::abs(g);
  CHECK(fda_gnorm > 0.0);
  for (auto [tp, sp] : model.ema_pairs()) {
    (void)sp;
    for (double g : tp->grad) CHECK(g == 0.0);
  }
}

TEST_CASE("ema update follows the convex combination exactly") {
  auto c = micro_config();
  auto model = Model<double>::build(c, 6);
  auto before = *model.teacher_enc.patch_w->value;
  model.ema_update(1.0);
  CHECK(*model.teacher_enc.patch_w->value == before);  // bitwise fixed point

  // force teacher=1, student=0, m=0.9 -> 0.9
  std::fill(model.teacher_enc.patch_w->value->begin(), model.teacher_enc.patch_w->value->end(),
            1.0);
  std::fill(model.student_enc.patch_w->value->begin(), model.student_enc.patch_w->value->end(),
            0.0);
  model.ema_update(0.9);
  for (double v : *model.teacher_enc.patch_w->value) CHECK(v == doctest::Approx(0.9));

  model.ema_update(0.0);
  CHECK(*model.teacher_enc.patch_w->value == *model.student_enc.patch_w->value);
  CHECK_THROWS_AS(model.ema_update(1.5), ConfigError);
}

TEST_CASE("with m=1 the teacher stays the initial function") {
  auto c = micro_config();
  auto model = Model<double>::build(c, 30);
  auto x = random_patches(c, 40);
  Tape<double> t0;
  FwdCtx<double> ctx0(t0, false);
  auto h0 = teacher_forward(ctx0, model, x);
  // scribble on the student, EMA with m=1 repeatedly
  Rng rng(50);
  for (auto [tp, sp] : model.ema_pairs()) {
    (void)tp;
    for (auto& v : *sp->value) v += 0.1 * rng.normal();
  }
  for (int i = 0; i < 5; ++i) model.ema_update(1.0);
  Tape<double> t1;
  FwdCtx<double> ctx1(t1, false);
  auto h1 = teacher_forward(ctx1, model, x);
  CHECK(h0.values() == h1.values());
}

TEST_CASE("masked reconstruction gradient reaches the mask token") {
  auto c = micro_config();
  auto model = Model<double>::build(c, 13);
  auto plan = sample_mask(c.n_leads, c.n_patches, 0.5, 0.2, 1, 3);
  REQUIRE(plan.count_masked() > 0);
  auto vis = visible_index(plan);
  REQUIRE(!vis.rows.empty());
  auto x = random_patches(c, 14);
  Tape<double> tape;
  FwdCtx<double> ctx(tape, true);
  auto z_v = encode_visible(ctx, model, x, vis);
  auto xhat = decode_time(ctx, model, z_v, vis);
  auto loss = reconstruction_loss_graph(x, xhat, plan);
  tape.backward(loss);
  model.params.zero_grads();
  ctx.accumulate_grads();
  double gnorm = 0;
  for (double g : model.time_dec.mask_token->grad) gnorm += std::abs(g);
  CHECK(gnorm > 0.0);
}

TEST_CASE("classifier head: shape, zero weights, lead subsets") {
  auto c = micro_config();
  auto model = Model<double>::build(c, 17);
  model.add_classifier(4, 18);
  auto x = random_patches(c, 19);
  Tape<double> tape;
  FwdCtx<double> ctx(tape, true);
  auto logits = classify(ctx, model, x);
  CHECK(logits.shape == Shape{4});

  std::fill(model.cls_w->value->begin(), model.cls_w->value->end(), 0.0);
  std::fill(model.cls_b->value->begin(), model.cls_b->value->end(), 0.0);
  Tape<double> tape2;
  FwdCtx<double> ctx2(tape2, true);
  auto zero_logits = classify(ctx2, model, x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(zero_logits.ptr()[i] == 0.0);

  Tape<double> tape3;
  FwdCtx<double> ctx3(tape3, true);
  auto single = classify(ctx3, model, x, {0});
  CHECK(single.shape == Shape{4});

  // argmax is invariant to adding a constant to every logit
  auto shifted = add(logits, Tensor<double>::full({4}, 3.25));
  std::size_t arg0 = 0, arg1 = 0;
  for (std::size_t i = 1; i < 4; ++i) {
    if (logits.ptr()[i] > logits.ptr()[arg0]) arg0 = i;
    if (shifted.ptr()[i] > shifted.ptr()[arg1]) arg1 = i;
  }
  CHECK(arg0 == arg1);
}

TEST_CASE("per-sample outputs are identical when recomputed on a fresh tape") {
  auto c = micro_config();
  auto model = Model<double>::build(c, 23);
  auto plan = sample_mask(c.n_leads, c.n_patches, 0.4, 0.2, 2, 4);
  auto vis = visible_index(plan);
  REQUIRE(!vis.rows.empty());
  auto x = random_patches(c, 24);
  auto run = [&] {
    Tape<double> tape;
    FwdCtx<double> ctx(tape, true);
    auto z = encode_visible(ctx, model, x, vis);
    return decode_latent_global(ctx, model, z, vis).values();
  };
  CHECK(run() == run());
}
