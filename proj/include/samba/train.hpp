#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "samba/data.hpp"
#include "samba/metrics.hpp"
#include "samba/model.hpp"

namespace samba {

struct TrainConfig {
  int total_iterations = 15000;
  int batch_size = 16;
  double base_lr = 6e-4;
  double weight_decay = 0.01;
  int warmup_iterations = 1500;
  double poly_power = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double grad_clip = 0.0;  // max global norm; 0 disables
  uint64_t seed = 42;
  int checkpoint_every = 1000;
  int scan_chunk = 0;  // 0 = sequential scan

  void validate() const;
};

// Linear warmup from base_lr/1000 to base_lr, then polynomial decay
// base_lr * (1 - progress)^power, floored at 0.
double lr_at(int64_t iter, const TrainConfig& cfg);

// Decoupled weight decay plus bias-corrected Adam, eps 1e-8.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, double beta1, double beta2,
        double weight_decay, double eps = 1e-8);

  void step(double lr);
  void zero_grad();
  int64_t step_count() const { return t_; }
  const std::vector<double>& first_moment(size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(size_t i) const { return v_[i]; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int64_t t_ = 0;
  double b1_, b2_, wd_, eps_;
};

struct TrainResult {
  int iterations = 0;
  double final_loss = 0.0;
  std::string final_checkpoint;
};

// Full loop per the training settings: sample batch, augment, normalize,
// forward, cross-entropy, backward, optional clip, AdamW with lr_at.
// Writes metrics.csv and periodic checkpoints into out_dir. Deterministic
// for a fixed seed. Non-finite losses abort with the iteration named.
TrainResult train_loop(SambaSegmenter& model, const DatasetManifest& data,
                       const AugmentationConfig& aug, const TrainConfig& cfg,
                       const std::string& out_dir, const std::string& config_text,
                       std::ostream* progress = nullptr);

// Averaged-logit tiled inference for one scene.
MaskU8 predict_mask(SambaSegmenter& model, const ImageU8& image, int tile, int stride,
                    int scan_chunk = 0);

struct EvalResult {
  ConfusionMatrix cm;
  MiouResult metrics;
  std::vector<int> included_classes;
};

// Slides tile/stride windows over every scene, averages logits on overlaps,
// and accumulates the confusion matrix scene by scene.
EvalResult evaluate(SambaSegmenter& model, const DatasetManifest& data, int tile,
                    int stride, const std::vector<int>& excluded_classes,
                    int scan_chunk = 0);

}  // namespace samba
