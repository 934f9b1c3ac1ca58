#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "coreecg/config.hpp"

using namespace coreecg;

TEST_CASE("defaults survive an empty config") {
  auto rc = RunConfig::from_json_text("{}", "test");
  CHECK(rc.model.dim == 256);
  CHECK(rc.model.enc_layers == 10);
  CHECK(rc.train.epochs == 80);
  CHECK(rc.train.batch_size == 256);
  CHECK(rc.train.lr == doctest::Approx(1.5e-4));
  CHECK(rc.train.finetune_lr == doctest::Approx(8e-5));
  CHECK(rc.train.weight_decay == doctest::Approx(0.01));
  CHECK(rc.train.warmup_epochs == 5);
  CHECK(rc.train.ema_momentum == doctest::Approx(0.996));
  CHECK(rc.train.tau == doctest::Approx(0.2));
  CHECK(rc.train.p_time == doctest::Approx(0.5));
  CHECK(rc.train.p_lead == doctest::Approx(0.2));
  CHECK(rc.train.k_visible == 4);
  CHECK(rc.train.fda_enabled);
  CHECK(rc.train.stdm_enabled);
  CHECK(rc.config_hash.size() == 16);
}

TEST_CASE("toy preset applies the documented overrides") {
  auto rc = RunConfig::from_json_text(R"({"model": {"toy_preset": true}})", "test");
  CHECK(rc.model.dim == 32);
  CHECK(rc.model.heads == 2);
  CHECK(rc.model.enc_layers == 2);
  CHECK(rc.model.latent_dec_layers == 2);
  CHECK(rc.model.time_dec_layers == 2);
  // explicit keys still win over the preset
  auto rc2 = RunConfig::from_json_text(R"({"model": {"toy_preset": true, "dim": 16}})", "test");
  CHECK(rc2.model.dim == 16);
}

TEST_CASE("unknown keys are rejected with a JSON-pointer path") {
  try {
    RunConfig::from_json_text(R"({"train": {"lrr": 0.1}})", "test");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/train/lrr") != std::string::npos);
  }
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"outputdir": "x"})", "test"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"stdm": {"ptime": 0.5}})", "test"), ConfigError);
}

TEST_CASE("type and range violations are reported") {
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"train": {"lr": "fast"}})", "test"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"train": {"epochs": -3}})", "test"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"stdm": {"p_time": 1.5}})", "test"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"fda": {"epsilon": 0.0}})", "test"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"train": {"ablation": "both"}})", "test"),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text("not json", "test"), ConfigError);
}

TEST_CASE("ablation and section values reach the train config") {
  auto rc = RunConfig::from_json_text(
      R"({"train": {"ablation": "contrastive_only", "tau": 0.1},
          "fda": {"enabled": false},
          "stdm": {"enabled": false, "uniform_mask_ratio": 0.6},
          "data": {"data_ratio": 0.5, "lead_subset": [0, 1]}})",
      "test");
  CHECK(rc.train.ablation == TrainConfig::Ablation::contrastive_only);
  CHECK(rc.train.tau == doctest::Approx(0.1));
  CHECK(!rc.train.fda_enabled);
  CHECK(!rc.train.stdm_enabled);
  CHECK(rc.train.uniform_mask_ratio == doctest::Approx(0.6));
  CHECK(rc.train.data_ratio == doctest::Approx(0.5));
  CHECK(rc.train.lead_subset == std::vector<std::int64_t>{0, 1});
}

TEST_CASE("config hash is stable and sensitive") {
  auto a = RunConfig::from_json_text(R"({"train": {"seed": 1}})", "test");
  auto b = RunConfig::from_json_text(R"({"train": {"seed": 1}})", "test");
  auto c = RunConfig::from_json_text(R"({"train": {"seed": 2}})", "test");
  CHECK(a.config_hash == b.config_hash);
  CHECK(a.config_hash != c.config_hash);
  // worker count must not change results, so it must not change the hash
  auto d = RunConfig::from_json_text(R"({"train": {"seed": 1, "threads": 7}})", "test");
  CHECK(a.config_hash == d.config_hash);
}
