#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "samba/config.hpp"
#include "samba/errors.hpp"

using namespace samba;

TEST_CASE("config round trip is exact") {
  RunConfig cfg;
  cfg.model.base_channels = 24;
  cfg.model.stage_depths = {1, 2, 3, 4};
  cfg.model.mlp_ratio = 0.1 + 0.2;  // non-representable decimal
  cfg.train.base_lr = 6e-4;
  cfg.train.seed = 1234567890123ull;
  cfg.aug.hue_delta = 17.999999999999996;
  cfg.data.root = "/some/where";
  cfg.data.excluded_classes = {0, 5};
  cfg.decoder.pool_scales = {1, 3, 6};

  const std::string text = serialize_config(cfg);
  RunConfig back = parse_config_text(text);
  CHECK(serialize_config(back) == text);
  CHECK(back.model.mlp_ratio == cfg.model.mlp_ratio);
  CHECK(back.train.seed == cfg.train.seed);
  CHECK(back.data.excluded_classes == cfg.data.excluded_classes);
}

TEST_CASE("unknown keys are rejected") {
  CHECK_THROWS_AS(parse_config_text("[model]\nbase_chanels = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[nosuch]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("orphan = 1\n"), ConfigError);
  try {
    parse_config_text("[train]\ntotal_iters = 5\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.total_iters") != std::string::npos);
  }
}

TEST_CASE("value parsing and overrides") {
  RunConfig cfg = parse_config_text(
      "[model]\nbase_channels = 16\nstage_depths = 1,1,2,1\n"
      "[train]\nbase_lr = 0.0006\n");
  CHECK(cfg.model.base_channels == 16);
  CHECK(cfg.model.stage_depths[2] == 2);
  CHECK(cfg.train.base_lr == doctest::Approx(6e-4));

  apply_override(cfg, "train.total_iterations", "7");
  CHECK(cfg.train.total_iterations == 7);
  apply_override(cfg, "data.excluded_classes", "1,2");
  CHECK(cfg.data.excluded_classes == std::vector<int>{1, 2});
  apply_override(cfg, "data.excluded_classes", "");
  CHECK(cfg.data.excluded_classes.empty());
  CHECK_THROWS_AS(apply_override(cfg, "train.nope", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "train.batch_size", "x"), ConfigError);

  CHECK_THROWS_AS(parse_config_text("[model]\nstage_depths = 1,2\n"), ConfigError);
}

TEST_CASE("validation catches bad settings") {
  RunConfig cfg;
  cfg.data.root = "x";
  cfg.validate();  // defaults are fine

  RunConfig bad = cfg;
  bad.train.warmup_iterations = bad.train.total_iterations + 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.aug.crop = 100;  // not a multiple of 32
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.decoder.pool_scales = {3, 1};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.model.num_classes = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
