#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "samba/image.hpp"
#include "samba/rng.hpp"
#include "samba/tensor.hpp"

namespace samba {

struct ClassInfo {
  int index = 0;
  std::string name;
  std::array<uint8_t, 3> color{0, 0, 0};
};

// Validated listing of one dataset split. Layout on disk:
//   root/classes.txt                 index<TAB>name<TAB>#RRGGBB per line
//   root/<split>/images/<stem>.png   RGB rasters
//   root/<split>/masks/<stem>.png    single-channel class indices, 255 ignore
struct DatasetManifest {
  std::string root;
  std::string split;
  std::vector<std::string> stems;
  std::vector<std::pair<std::string, std::string>> pairs;  // image path, mask path
  std::vector<ClassInfo> classes;
  int num_classes = 0;
  int ignore_index = 255;

  size_t size() const { return pairs.size(); }
};

DatasetManifest load_manifest(const std::string& root, const std::string& split);

// Decodes one pair and validates mask labels against num_classes.
SegmentationSample load_sample(const DatasetManifest& m, size_t index);

struct AugmentationConfig {
  double scale_min = 0.5;
  double scale_max = 2.0;
  int crop = 512;
  double hflip_prob = 0.5;
  double vflip_prob = 0.0;
  double photometric_prob = 0.5;  // per sub-transform
  double brightness_delta = 32.0;
  double contrast_min = 0.5;
  double contrast_max = 1.5;
  double saturation_min = 0.5;
  double saturation_max = 1.5;
  double hue_delta = 18.0;  // degrees on a 360-degree circle

  void validate() const;
};

// Resampling helpers; masks only ever move by nearest-neighbour.
ImageU8 resize_image_bilinear(const ImageU8& img, int out_h, int out_w);
MaskU8 resize_mask_nearest(const MaskU8& mask, int out_h, int out_w);
SegmentationSample flip_horizontal(const SegmentationSample& s);
SegmentationSample flip_vertical(const SegmentationSample& s);

// Random resize + pad-to-crop + random crop + random flips; image and mask
// move under the same transform. Output is crop x crop.
SegmentationSample augment_geometric(const SegmentationSample& s,
                                     const AugmentationConfig& cfg, Rng& rng);

// Photometric sub-transforms; every result is clamped to [0, 255].
ImageU8 adjust_brightness(const ImageU8& img, double delta);
ImageU8 adjust_contrast(const ImageU8& img, double factor);
ImageU8 adjust_saturation(const ImageU8& img, double factor);
ImageU8 adjust_hue(const ImageU8& img, double degrees);

// Brightness/contrast/saturation/hue jitter, each applied with
// photometric_prob. The mask is untouched.
ImageU8 photometric_distortion(const ImageU8& img, const AugmentationConfig& cfg,
                               Rng& rng);

// [0,255] -> [0,1], ImageNet mean/std, channel-first [3,H,W].
Tensor normalize(const ImageU8& img);
ImageU8 denormalize(const Tensor& chw);

struct TilePlacement {
  int y0 = 0;
  int x0 = 0;
  int h = 0;  // valid extent inside the tile (smaller than tile only when padded)
  int w = 0;
};

struct TileSet {
  std::vector<SegmentationSample> tiles;
  std::vector<TilePlacement> places;
  int scene_h = 0;
  int scene_w = 0;
};

// Covers the scene with tile x tile windows at the given stride; the last
// row/column is aligned to the far edge. Scenes smaller than the tile yield
// a single zero/ignore-padded tile.
TileSet tile_image(const SegmentationSample& s, int tile, int stride);

// Deterministic 4-class synthetic dataset: 8 images, 64x64, colored
// geometric regions on a textured background. Writes the standard layout.
void make_toy_dataset(const std::string& dir, uint64_t seed = 9);

}  // namespace samba
