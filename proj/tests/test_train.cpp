#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "samba/checkpoint.hpp"
#include "samba/errors.hpp"
#include "samba/ops.hpp"
#include "samba/train.hpp"

using namespace samba;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("samba_train_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SambaConfig tiny_config(int num_classes) {
  SambaConfig cfg;
  cfg.base_channels = 8;
  cfg.stage_depths = {1, 1, 1, 1};
  cfg.mlp_ratio = 2.0;
  cfg.mamba.d_state = 4;
  cfg.mamba.expansion = 2;
  cfg.mamba.conv_kernel = 4;
  cfg.mamba.dt_rank = 1;
  cfg.num_classes = num_classes;
  return cfg;
}

DecoderConfig tiny_decoder() {
  DecoderConfig d;
  d.fpn_channels = 16;
  d.pool_scales = {1, 2};
  d.dropout_rate = 0.0;
  return d;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Two-class dataset: top half class 0, bottom half class 1, class-correlated
// colors so the task is learnable.
void write_halves_dataset(const fs::path& root, int images, int side) {
  fs::create_directories(root / "train" / "images");
  fs::create_directories(root / "train" / "masks");
  std::ofstream cls(root / "classes.txt");
  cls << "0\ttop\t#C00000\n1\tbottom\t#0000C0\n";
  cls.close();
  Rng rng(31);
  for (int i = 0; i < images; ++i) {
    ImageU8 img;
    img.h = img.w = side;
    img.v.resize(static_cast<size_t>(side) * side * 3);
    MaskU8 m;
    m.h = m.w = side;
    m.v.resize(static_cast<size_t>(side) * side);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const bool top = y < side / 2;
        m.at(y, x) = top ? 0 : 1;
        const double n = rng.uniform(-10.0, 10.0);
        img.at(y, x, 0) = static_cast<uint8_t>(std::clamp(top ? 190.0 + n : 40.0 + n, 0.0, 255.0));
        img.at(y, x, 1) = static_cast<uint8_t>(std::clamp(60.0 + n, 0.0, 255.0));
        img.at(y, x, 2) = static_cast<uint8_t>(std::clamp(top ? 40.0 + n : 190.0 + n, 0.0, 255.0));
      }
    const std::string stem = "s" + std::to_string(i);
    write_png_rgb((root / "train" / "images" / (stem + ".png")).string(), img);
    write_png_gray((root / "train" / "masks" / (stem + ".png")).string(), m);
  }
}

}  // namespace

TEST_CASE("cross entropy examples") {
  PrecisionGuard g(Precision::f64);

  // uniform logits over 7 classes
  Tensor uniform = Tensor::zeros({1, 7, 2, 2});
  std::vector<uint8_t> labels(4, 3);
  CHECK(cross_entropy_loss(uniform, labels).value() ==
        doctest::Approx(std::log(7.0)).epsilon(1e-12));

  // saturated correct prediction
  Tensor sharp = Tensor::zeros({1, 2, 1, 1});
  (*sharp.data)[0] = 20.0;
  CHECK(cross_entropy_loss(sharp, {0}).value() <= 1e-8);

  // one of two pixels ignored: loss is the valid pixel's term
  Tensor two = Tensor::from({1, 2, 1, 2}, {1.0, -0.5, 0.2, 0.8});  // pixel logits (1,.2),(-.5,.8)
  std::vector<uint8_t> lab = {0, 255};
  const double z0 = 1.0, z1 = 0.2;
  const double expect = std::log(std::exp(z0) + std::exp(z1)) - z0;
  CHECK(cross_entropy_loss(two, lab).value() == doctest::Approx(expect).epsilon(1e-12));

  // all pixels ignored: zero loss, zero gradient
  Parameter p("logits", {1, 2, 1, 1}, {0.3, -0.4});
  {
    Tape tape;
    tape.watch(p);
    Tensor loss = cross_entropy_loss(p.value, {255});
    CHECK(loss.value() == 0.0);
    tape.backward(loss);
  }
  CHECK((*p.grad.data)[0] == 0.0);

  CHECK_THROWS_AS(cross_entropy_loss(uniform, std::vector<uint8_t>(4, 9)), ValidationError);
}

TEST_CASE("cross entropy decreases under its own gradient step") {
  PrecisionGuard g(Precision::f64);
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    Parameter logits("logits", {1, 4, 3, 3});
    for (double& v : *logits.value.data) v = rng.uniform(-2.0, 2.0);
    std::vector<uint8_t> labels(9);
    for (uint8_t& l : labels) l = static_cast<uint8_t>(rng.next() % 4);

    double before;
    {
      Tape tape;
      tape.watch(logits);
      Tensor loss = cross_entropy_loss(logits.value, labels);
      before = loss.value();
      tape.backward(loss);
    }
    for (size_t i = 0; i < logits.value.data->size(); ++i)
      (*logits.value.data)[i] -= 0.1 * (*logits.grad.data)[i];
    const double after = cross_entropy_loss(logits.value, labels).value();
    CHECK(after < before);
  }
}

TEST_CASE("adamw update rule") {
  PrecisionGuard g(Precision::f64);
  Parameter p("p", {1}, {1.0});

  SUBCASE("zero grad, zero decay is a fixed point") {
    AdamW opt({&p}, 0.9, 0.999, 0.0);
    opt.step(0.1);
    CHECK((*p.value.data)[0] == 1.0);
  }

  SUBCASE("pure decay") {
    AdamW opt({&p}, 0.9, 0.999, 0.01);
    opt.step(0.1);
    CHECK((*p.value.data)[0] == doctest::Approx(0.999).epsilon(1e-9));
  }

  SUBCASE("first bias-corrected step") {
    Parameter q("q", {1}, {0.0});
    (*q.grad.data)[0] = 1.0;
    AdamW opt({&q}, 0.9, 0.999, 0.0);
    opt.step(1e-3);
    CHECK((*q.value.data)[0] == doctest::Approx(-1e-3).epsilon(1e-6));
  }

  SUBCASE("non-finite gradient names the parameter") {
    Parameter q("layer.weight", {1}, {0.0});
    (*q.grad.data)[0] = std::nan("");
    AdamW opt({&q}, 0.9, 0.999, 0.0);
    try {
      opt.step(1e-3);
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
    }
  }
}

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  cfg.total_iterations = 161500;
  cfg.warmup_iterations = 1500;
  cfg.base_lr = 6e-4;
  cfg.poly_power = 1.0;

  CHECK(lr_at(0, cfg) == doctest::Approx(6e-7).epsilon(1e-12));
  CHECK(lr_at(1500, cfg) == 6e-4);  // exact at the warmup endpoint
  CHECK(std::fabs(lr_at(81500, cfg) - 3e-4) <= 1e-12);  // decay midpoint
  CHECK(lr_at(161500, cfg) == 0.0);

  // continuity at the boundary and monotone decay after it
  CHECK(std::fabs(lr_at(1499, cfg) - lr_at(1500, cfg)) < 1e-6);
  double prev = lr_at(1500, cfg);
  for (int64_t it = 1501; it < 161500; it += 997) {
    const double cur = lr_at(it, cfg);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("confusion matrix and miou") {
  SUBCASE("hand-counted example") {
    ConfusionMatrix cm(2);
    cm.update({0, 0, 0, 1}, {0, 0, 1, 1});
    CHECK(cm.at(0, 0) == 2);
    CHECK(cm.at(1, 0) == 1);
    CHECK(cm.at(1, 1) == 1);
    CHECK(cm.at(0, 1) == 0);
    MiouResult r = miou(cm, {0, 1});
    CHECK(r.per_class[0] == doctest::Approx(2.0 / 3.0));
    CHECK(r.per_class[1] == doctest::Approx(0.5));
    CHECK(r.mean == doctest::Approx(7.0 / 12.0));
  }

  SUBCASE("perfect prediction") {
    ConfusionMatrix cm(3);
    cm.update({0, 1, 1, 2}, {0, 1, 1, 2});
    CHECK(miou(cm, {0, 1, 2}).mean == 1.0);
  }

  SUBCASE("ignored pixels leave the matrix unchanged") {
    ConfusionMatrix cm(2);
    cm.update({0, 1}, {255, 255});
    CHECK(cm.total() == 0);
    CHECK_THROWS_AS(miou(cm, {0, 1}), MetricError);
  }

  SUBCASE("empty inclusion list") {
    ConfusionMatrix cm(2);
    CHECK_THROWS_AS(miou(cm, {}), MetricError);
  }

  SUBCASE("brute-force oracle on random maps") {
    Rng rng(51);
    for (int trial = 0; trial < 300; ++trial) {
      const int h = 1 + static_cast<int>(rng.next() % 32);
      const int w = 1 + static_cast<int>(rng.next() % 32);
      const int k = 7;
      std::vector<uint8_t> pred(static_cast<size_t>(h) * w), gt(pred.size());
      for (size_t i = 0; i < pred.size(); ++i) {
        pred[i] = static_cast<uint8_t>(rng.next() % k);
        gt[i] = rng.bernoulli(0.1) ? 255 : static_cast<uint8_t>(rng.next() % k);
      }
      ConfusionMatrix cm(k);
      cm.update(pred, gt);

      double sum = 0.0;
      int counted = 0;
      for (int c = 0; c < k; ++c) {
        int64_t inter = 0, uni = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
          if (gt[i] == 255) continue;
          const bool pin = pred[i] == c, gin = gt[i] == c;
          inter += pin && gin;
          uni += pin || gin;
        }
        if (uni == 0) continue;
        sum += static_cast<double>(inter) / static_cast<double>(uni);
        ++counted;
      }
      if (counted == 0) continue;
      MiouResult r = miou(cm, {0, 1, 2, 3, 4, 5, 6});
      CHECK(r.mean == doctest::Approx(sum / counted).epsilon(1e-12));
    }
  }

  SUBCASE("relabeling equivariance") {
    Rng rng(52);
    const int k = 5;
    std::vector<uint8_t> pred(64), gt(64);
    for (size_t i = 0; i < pred.size(); ++i) {
      pred[i] = static_cast<uint8_t>(rng.next() % k);
      gt[i] = static_cast<uint8_t>(rng.next() % k);
    }
    std::vector<int> perm{2, 0, 4, 1, 3};
    std::vector<uint8_t> pp(64), pg(64);
    for (size_t i = 0; i < pred.size(); ++i) {
      pp[i] = static_cast<uint8_t>(perm[pred[i]]);
      pg[i] = static_cast<uint8_t>(perm[gt[i]]);
    }
    ConfusionMatrix a(k), b(k);
    a.update(pred, gt);
    b.update(pp, pg);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) CHECK(a.at(i, j) == b.at(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]));
  }
}

TEST_CASE("checkpoint round trip") {
  TempDir td;
  SambaConfig cfg = tiny_config(2);
  DecoderConfig dc = tiny_decoder();
  SambaSegmenter model(cfg, dc, 61);
  std::vector<Parameter*> params = model.parameters();

  const std::string path = (td.path / "m.smba").string();
  save_checkpoint(path, "sample config text", params);

  CheckpointData data = read_checkpoint(path);
  CHECK(data.version == kCheckpointVersion);
  CHECK(data.config_text == "sample config text");
  CHECK(data.tensors.size() == params.size());

  SambaSegmenter other(cfg, dc, 62);  // different init
  std::vector<Parameter*> oparams = other.parameters();
  load_parameters(oparams, data);
  for (size_t i = 0; i < params.size(); ++i) {
    REQUIRE(oparams[i]->name == params[i]->name);
    CHECK(*oparams[i]->value.data == *params[i]->value.data);  // bit-exact in f32 mode
  }

  Tensor img = Tensor::zeros({1, 3, 64, 64});
  {
    Rng rng(63);
    for (double& v : *img.data) v = quantize_value(rng.uniform(-1.0, 1.0), precision());
  }
  Tensor ya = model.forward(img);
  Tensor yb = other.forward(img);
  CHECK(*ya.data == *yb.data);

  SUBCASE("corruption is detected") {
    std::ofstream bad((td.path / "bad.smba").string(), std::ios::binary);
    bad << "NOPE";
    bad.close();
    CHECK_THROWS_AS(read_checkpoint((td.path / "bad.smba").string()), CheckpointError);

    // truncate a valid file
    std::string bytes = read_file(path);
    std::ofstream trunc((td.path / "trunc.smba").string(), std::ios::binary);
    trunc.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    trunc.close();
    CHECK_THROWS_AS(read_checkpoint((td.path / "trunc.smba").string()), CheckpointError);
  }
}

TEST_CASE("one optimization step lowers the sample loss") {
  TempDir td;
  write_halves_dataset(td.path / "ds", 1, 32);
  DatasetManifest data = load_manifest((td.path / "ds").string(), "train");

  SambaConfig cfg = tiny_config(2);
  DecoderConfig dc = tiny_decoder();
  dc.pool_scales = {1};
  SambaSegmenter model(cfg, dc, 71);

  AugmentationConfig aug;
  aug.crop = 32;
  aug.scale_min = aug.scale_max = 1.0;
  aug.hflip_prob = aug.vflip_prob = 0.0;
  aug.photometric_prob = 0.0;

  SegmentationSample s = load_sample(data, 0);
  Tensor img = reshape(normalize(s.image), {1, 3, 32, 32});
  std::vector<uint8_t> labels(s.mask.v.begin(), s.mask.v.end());

  model.training = false;
  const double before =
      cross_entropy_loss(model.forward(img), labels, data.ignore_index).value();

  TrainConfig tc;
  tc.total_iterations = 1;
  tc.batch_size = 1;
  tc.base_lr = 1e-3;
  tc.warmup_iterations = 0;
  tc.checkpoint_every = 10;
  tc.seed = 7;
  train_loop(model, data, aug, tc, (td.path / "run").string(), "cfg");

  model.training = false;
  const double after =
      cross_entropy_loss(model.forward(img), labels, data.ignore_index).value();
  CHECK(after < before);
}

TEST_CASE("training is deterministic for a fixed seed") {
  TempDir td;
  write_halves_dataset(td.path / "ds", 3, 32);
  DatasetManifest data = load_manifest((td.path / "ds").string(), "train");

  AugmentationConfig aug;
  aug.crop = 32;

  TrainConfig tc;
  tc.total_iterations = 3;
  tc.batch_size = 2;
  tc.base_lr = 1e-3;
  tc.warmup_iterations = 1;
  tc.checkpoint_every = 100;
  tc.seed = 99;

  auto run = [&](const std::string& name) {
    SambaConfig cfg = tiny_config(2);
    DecoderConfig dc = tiny_decoder();
    dc.pool_scales = {1};
    SambaSegmenter model(cfg, dc, 72);
    train_loop(model, data, aug, tc, (td.path / name).string(), "cfg");
    return read_file(td.path / name / "metrics.csv");
  };
  CHECK(run("a") == run("b"));
}

TEST_CASE("evaluate with doctored predictors") {
  TempDir td;
  write_halves_dataset(td.path / "ds", 2, 64);
  DatasetManifest data = load_manifest((td.path / "ds").string(), "train");

  SambaConfig cfg = tiny_config(2);
  DecoderConfig dc = tiny_decoder();
  SambaSegmenter model(cfg, dc, 73);

  // constant-class predictor: zero classifier, bias favoring class 0
  for (double& v : *model.decoder.classifier.weight.value.data) v = 0.0;
  for (double& v : *model.decoder.classifier.bias.value.data) v = 0.0;
  (*model.decoder.classifier.bias.value.data)[0] = 5.0;

  EvalResult r = evaluate(model, data, 64, 64, {});
  CHECK(r.metrics.mean == doctest::Approx(0.25));
  CHECK(r.metrics.per_class[0] == doctest::Approx(0.5));
  CHECK(r.metrics.per_class[1] == 0.0);

  // ground truth fed as prediction is perfect
  ConfusionMatrix cm(2);
  SegmentationSample s = load_sample(data, 0);
  cm.update(s.mask.v, s.mask.v, data.ignore_index);
  CHECK(miou(cm, {0, 1}).mean == 1.0);

  // class-count mismatch is a configuration error
  SambaConfig cfg3 = tiny_config(3);
  SambaSegmenter wrong(cfg3, dc, 74);
  CHECK_THROWS_AS(evaluate(wrong, data, 64, 64, {}), ConfigError);
}

TEST_CASE("predict mask covers odd scene sizes") {
  SambaConfig cfg = tiny_config(2);
  DecoderConfig dc = tiny_decoder();
  SambaSegmenter model(cfg, dc, 75);

  ImageU8 img;
  img.h = 70;
  img.w = 90;  // not divisible by 32: tiled + padded path
  img.v.assign(static_cast<size_t>(img.h) * img.w * 3, 100);
  MaskU8 pred = predict_mask(model, img, 64, 64);
  CHECK(pred.h == 70);
  CHECK(pred.w == 90);
  for (uint8_t v : pred.v) CHECK(v < 2);
}
