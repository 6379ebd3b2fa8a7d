#include "samba/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>

#include "samba/checkpoint.hpp"
#include "samba/errors.hpp"
#include "samba/ops.hpp"

namespace fs = std::filesystem;

namespace samba {

void TrainConfig::validate() const {
  if (total_iterations < 1) throw ConfigError("total_iterations must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
  if (warmup_iterations < 0 || warmup_iterations > total_iterations)
    throw ConfigError("warmup_iterations must lie within total_iterations");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (poly_power <= 0.0) throw ConfigError("poly_power must be positive");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
}

double lr_at(int64_t iter, const TrainConfig& cfg) {
  if (iter < 0) throw ContractError("lr_at: negative iteration");
  if (iter < cfg.warmup_iterations) {
    const double floor_frac = 1.0 / 1000.0;
    const double progress = static_cast<double>(iter) / cfg.warmup_iterations;
    return cfg.base_lr * (floor_frac + (1.0 - floor_frac) * progress);
  }
  const int64_t span = cfg.total_iterations - cfg.warmup_iterations;
  if (span <= 0) return iter >= cfg.total_iterations ? 0.0 : cfg.base_lr;
  const double progress =
      static_cast<double>(iter - cfg.warmup_iterations) / static_cast<double>(span);
  if (progress >= 1.0) return 0.0;
  return cfg.base_lr * std::pow(1.0 - progress, cfg.poly_power);
}

AdamW::AdamW(std::vector<Parameter*> params, double beta1, double beta2,
             double weight_decay, double eps)
    : params_(std::move(params)), b1_(beta1), b2_(beta2), wd_(weight_decay), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(static_cast<size_t>(params_[i]->numel()), 0.0);
    v_[i].assign(static_cast<size_t>(params_[i]->numel()), 0.0);
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void AdamW::step(double lr) {
  if (lr < 0.0) throw ContractError("adamw: negative learning rate");
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const Precision prec = precision();
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    const auto& g = *p->grad.data;
    auto& th = *p->value.data;
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < th.size(); ++j) {
      if (!std::isfinite(g[j]))
        throw TrainingError("non-finite gradient in parameter '" + p->name + "'");
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      double nv = th[j] - lr * wd_ * th[j] - lr * mhat / (std::sqrt(vhat) + eps_);
      th[j] = quantize_value(nv, prec);
    }
  }
}

namespace {

// Batch of normalized crops plus flattened labels.
struct Batch {
  Tensor images;                // [B, 3, crop, crop]
  std::vector<uint8_t> labels;  // B * crop * crop
};

Batch assemble_batch(const DatasetManifest& data, const AugmentationConfig& aug,
                     const std::vector<size_t>& indices, uint64_t seed, int64_t epoch) {
  const int crop = aug.crop;
  const int b = static_cast<int>(indices.size());
  Batch batch;
  batch.images = Tensor::zeros({b, 3, crop, crop});
  batch.labels.resize(static_cast<size_t>(b) * crop * crop);
  const int64_t img_block = 3ll * crop * crop;
  for (int s = 0; s < b; ++s) {
    const size_t idx = indices[static_cast<size_t>(s)];
    // per-sample keyed stream: completion order can never change results
    Rng rng(mix_seed(seed, static_cast<uint64_t>(epoch), static_cast<uint64_t>(idx)));
    SegmentationSample sample = load_sample(data, idx);
    sample = augment_geometric(sample, aug, rng);
    sample.image = photometric_distortion(sample.image, aug, rng);
    Tensor chw = normalize(sample.image);
    std::copy(chw.data->begin(), chw.data->end(),
              batch.images.data->begin() + s * img_block);
    std::copy(sample.mask.v.begin(), sample.mask.v.end(),
              batch.labels.begin() + static_cast<size_t>(s) * crop * crop);
  }
  return batch;
}

}  // namespace

TrainResult train_loop(SambaSegmenter& model, const DatasetManifest& data,
                       const AugmentationConfig& aug, const TrainConfig& cfg,
                       const std::string& out_dir, const std::string& config_text,
                       std::ostream* progress) {
  cfg.validate();
  aug.validate();
  if (data.size() == 0) throw ManifestError("training manifest is empty");
  if (data.num_classes != model.cfg.num_classes)
    throw ConfigError("model expects " + std::to_string(model.cfg.num_classes) +
                      " classes, dataset declares " + std::to_string(data.num_classes));

  fs::create_directories(out_dir);
  std::ofstream metrics(fs::path(out_dir) / "metrics.csv");
  if (!metrics) throw Error("cannot write metrics.csv in " + out_dir);
  metrics << "iter,lr,loss\n";

  model.training = true;
  std::vector<Parameter*> params = model.parameters();
  AdamW opt(params, cfg.beta1, cfg.beta2, cfg.weight_decay);

  const size_t n = data.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = n;  // forces a shuffle on first use
  int64_t epoch = -1;

  TrainResult result;
  double last_loss = 0.0;
  for (int iter = 0; iter < cfg.total_iterations; ++iter) {
    std::vector<size_t> picks;
    picks.reserve(static_cast<size_t>(cfg.batch_size));
    for (int s = 0; s < cfg.batch_size; ++s) {
      if (cursor >= n) {
        ++epoch;
        Rng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch), 0x0d0e0ull));
        for (size_t i = n; i > 1; --i)
          std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.next() %
                                                            static_cast<uint64_t>(i))]);
        cursor = 0;
      }
      picks.push_back(order[cursor++]);
    }

    Batch batch = assemble_batch(data, aug, picks, cfg.seed, epoch);
    const double lr = lr_at(iter, cfg);

    double loss_value;
    try {
      opt.zero_grad();
      Tape tape;
      for (Parameter* p : params) tape.watch(*p);
      Tensor logits = model.forward(batch.images, cfg.scan_chunk);
      Tensor loss = cross_entropy_loss(logits, batch.labels, data.ignore_index);
      loss_value = loss.value();
      if (!std::isfinite(loss_value))
        throw TrainingError("non-finite loss at iteration " + std::to_string(iter));
      tape.backward(loss);
    } catch (const NumericError& e) {
      throw TrainingError("aborted at iteration " + std::to_string(iter) + ": " + e.what());
    }

    if (cfg.grad_clip > 0.0) {
      double sq = 0.0;
      for (Parameter* p : params)
        for (double g : *p->grad.data) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > cfg.grad_clip) {
        const double scale = cfg.grad_clip / norm;
        for (Parameter* p : params)
          for (double& g : *p->grad.data) g *= scale;
      }
    }

    opt.step(lr);
    metrics << iter << ',' << lr << ',' << loss_value << '\n';
    last_loss = loss_value;

    if (progress && (iter % 50 == 0 || iter + 1 == cfg.total_iterations))
      (*progress) << "iter " << iter << " lr " << lr << " loss " << loss_value << "\n";

    if ((iter + 1) % cfg.checkpoint_every == 0 && iter + 1 < cfg.total_iterations) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "checkpoint_%06d.smba", iter + 1);
      save_checkpoint((fs::path(out_dir) / buf).string(), config_text, params);
    }
  }

  result.iterations = cfg.total_iterations;
  result.final_loss = last_loss;
  result.final_checkpoint = (fs::path(out_dir) / "checkpoint_final.smba").string();
  save_checkpoint(result.final_checkpoint, config_text, params);
  model.training = false;
  return result;
}

namespace {

// Accumulated scene logits with overlap counts; argmax after averaging.
struct SceneLogits {
  int k = 0, h = 0, w = 0;
  std::vector<double> sum;
  std::vector<int> hits;

  SceneLogits(int k_, int h_, int w_)
      : k(k_), h(h_), w(w_),
        sum(static_cast<size_t>(k_) * h_ * w_, 0.0),
        hits(static_cast<size_t>(h_) * w_, 0) {}

  void add_tile(const Tensor& logits, const TilePlacement& pl) {
    const int tile_h = logits.dim(2), tile_w = logits.dim(3);
    const double* p = logits.ptr();
    for (int c = 0; c < k; ++c)
      for (int y = 0; y < pl.h; ++y)
        for (int x = 0; x < pl.w; ++x)
          sum[(static_cast<size_t>(c) * h + pl.y0 + y) * w + pl.x0 + x] +=
              p[(static_cast<size_t>(c) * tile_h + y) * tile_w + x];
    for (int y = 0; y < pl.h; ++y)
      for (int x = 0; x < pl.w; ++x)
        ++hits[static_cast<size_t>(pl.y0 + y) * w + pl.x0 + x];
  }

  MaskU8 argmax() const {
    MaskU8 out;
    out.h = h;
    out.w = w;
    out.v.resize(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int best = 0;
        double bv = -1e300;
        for (int c = 0; c < k; ++c) {
          const double v = sum[(static_cast<size_t>(c) * h + y) * w + x];
          if (v > bv) {
            bv = v;
            best = c;
          }
        }
        out.v[static_cast<size_t>(y) * w + x] = static_cast<uint8_t>(best);
      }
    return out;
  }
};

MaskU8 run_tiled(SambaSegmenter& model, const SegmentationSample& scene, int tile,
                 int stride, int scan_chunk) {
  TileSet ts = tile_image(scene, tile, stride);
  SceneLogits acc(model.cfg.num_classes, ts.scene_h, ts.scene_w);
  for (size_t i = 0; i < ts.tiles.size(); ++i) {
    Tensor chw = normalize(ts.tiles[i].image);
    Tensor img = reshape(chw, {1, 3, tile, tile});
    Tensor logits = model.forward(img, scan_chunk);
    acc.add_tile(logits, ts.places[i]);
  }
  return acc.argmax();
}

}  // namespace

MaskU8 predict_mask(SambaSegmenter& model, const ImageU8& image, int tile, int stride,
                    int scan_chunk) {
  model.training = false;
  SegmentationSample scene;
  scene.image = image;
  scene.mask.h = image.h;
  scene.mask.w = image.w;
  scene.mask.v.assign(static_cast<size_t>(image.h) * image.w, 0);
  return run_tiled(model, scene, tile, stride, scan_chunk);
}

EvalResult evaluate(SambaSegmenter& model, const DatasetManifest& data, int tile,
                    int stride, const std::vector<int>& excluded_classes,
                    int scan_chunk) {
  if (data.num_classes != model.cfg.num_classes)
    throw ConfigError("model expects " + std::to_string(model.cfg.num_classes) +
                      " classes, dataset declares " + std::to_string(data.num_classes));
  model.training = false;

  ConfusionMatrix cm(data.num_classes);
  for (size_t i = 0; i < data.size(); ++i) {
    SegmentationSample scene = load_sample(data, i);
    MaskU8 pred = run_tiled(model, scene, tile, stride, scan_chunk);
    cm.update(pred.v, scene.mask.v, data.ignore_index);
  }

  std::vector<int> included;
  for (int c = 0; c < data.num_classes; ++c)
    if (std::find(excluded_classes.begin(), excluded_classes.end(), c) ==
        excluded_classes.end())
      included.push_back(c);

  EvalResult r{cm, miou(cm, included), included};
  return r;
}

}  // namespace samba
