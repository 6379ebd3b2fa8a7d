#include "samba/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "samba/errors.hpp"

namespace fs = std::filesystem;

namespace samba {

namespace {

std::vector<ClassInfo> parse_class_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("missing class table: " + path);
  std::vector<ClassInfo> classes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ClassInfo ci;
    std::string color;
    std::string name;
    if (!(ss >> ci.index) || !std::getline(ss, name, '\t') || !std::getline(ss, name, '\t') ||
        !std::getline(ss, color))
      throw ManifestError("bad class table line " + std::to_string(lineno) + " in " + path);
    ci.name = name;
    if (color.size() != 7 || color[0] != '#')
      throw ManifestError("bad color '" + color + "' in " + path);
    const long rgb = std::strtol(color.c_str() + 1, nullptr, 16);
    ci.color = {static_cast<uint8_t>((rgb >> 16) & 0xff),
                static_cast<uint8_t>((rgb >> 8) & 0xff),
                static_cast<uint8_t>(rgb & 0xff)};
    classes.push_back(std::move(ci));
  }
  std::sort(classes.begin(), classes.end(),
            [](const ClassInfo& a, const ClassInfo& b) { return a.index < b.index; });
  for (size_t i = 0; i < classes.size(); ++i)
    if (classes[i].index != static_cast<int>(i))
      throw ManifestError("class indices must be dense from 0 in " + path);
  if (classes.empty()) throw ManifestError("empty class table: " + path);
  return classes;
}

}  // namespace

DatasetManifest load_manifest(const std::string& root, const std::string& split) {
  DatasetManifest m;
  m.root = root;
  m.split = split;
  if (!fs::is_directory(root)) throw ManifestError("dataset root not found: " + root);
  m.classes = parse_class_table((fs::path(root) / "classes.txt").string());
  m.num_classes = static_cast<int>(m.classes.size());

  const fs::path images = fs::path(root) / split / "images";
  const fs::path masks = fs::path(root) / split / "masks";
  if (!fs::is_directory(images))
    throw ManifestError("missing image directory: " + images.string());
  if (!fs::is_directory(masks))
    throw ManifestError("missing mask directory: " + masks.string());

  for (const auto& entry : fs::directory_iterator(images)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    m.stems.push_back(entry.path().stem().string());
  }
  std::sort(m.stems.begin(), m.stems.end());
  for (const std::string& stem : m.stems) {
    const fs::path img = images / (stem + ".png");
    const fs::path msk = masks / (stem + ".png");
    if (!fs::is_regular_file(msk))
      throw ManifestError("missing mask for image stem '" + stem + "' in " + masks.string());
    m.pairs.emplace_back(img.string(), msk.string());
  }
  return m;
}

SegmentationSample load_sample(const DatasetManifest& m, size_t index) {
  if (index >= m.pairs.size())
    throw ContractError("sample index " + std::to_string(index) + " out of range");
  SegmentationSample s;
  s.image = read_png_rgb(m.pairs[index].first);
  s.mask = read_png_gray(m.pairs[index].second);
  if (s.image.h != s.mask.h || s.image.w != s.mask.w)
    throw ValidationError("image/mask size mismatch for stem '" + m.stems[index] + "'");
  for (uint8_t v : s.mask.v)
    if (v != m.ignore_index && v >= m.num_classes)
      throw ValidationError("unknown class index " + std::to_string(v) + " in mask '" +
                            m.stems[index] + "'");
  return s;
}

void AugmentationConfig::validate() const {
  if (scale_min <= 0.0 || scale_max < scale_min)
    throw ConfigError("augmentation scale range must be positive and ordered");
  if (crop < 32 || crop % 32 != 0)
    throw ConfigError("crop size must be a positive multiple of 32");
  if (hflip_prob < 0 || hflip_prob > 1 || vflip_prob < 0 || vflip_prob > 1 ||
      photometric_prob < 0 || photometric_prob > 1)
    throw ConfigError("flip/photometric probabilities must be in [0, 1]");
}

ImageU8 resize_image_bilinear(const ImageU8& img, int out_h, int out_w) {
  ImageU8 out;
  out.h = out_h;
  out.w = out_w;
  out.v.resize(static_cast<size_t>(out_h) * out_w * 3);
  for (int oy = 0; oy < out_h; ++oy) {
    double sy = (oy + 0.5) * static_cast<double>(img.h) / out_h - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(img.h - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, img.h - 1);
    const double fy = sy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double sx = (ox + 0.5) * static_cast<double>(img.w) / out_w - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(img.w - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, img.w - 1);
      const double fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) + (img.at(y0, x1, c) - img.at(y0, x0, c)) * fx;
        const double bot = img.at(y1, x0, c) + (img.at(y1, x1, c) - img.at(y1, x0, c)) * fx;
        const double val = top + (bot - top) * fy;
        out.at(oy, ox, c) = static_cast<uint8_t>(std::clamp(std::lround(val), 0l, 255l));
      }
    }
  }
  return out;
}

MaskU8 resize_mask_nearest(const MaskU8& mask, int out_h, int out_w) {
  MaskU8 out;
  out.h = out_h;
  out.w = out_w;
  out.v.resize(static_cast<size_t>(out_h) * out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    const int sy = std::min(mask.h - 1,
                            static_cast<int>((oy + 0.5) * static_cast<double>(mask.h) / out_h));
    for (int ox = 0; ox < out_w; ++ox) {
      const int sx = std::min(mask.w - 1,
                              static_cast<int>((ox + 0.5) * static_cast<double>(mask.w) / out_w));
      out.at(oy, ox) = mask.at(sy, sx);
    }
  }
  return out;
}

SegmentationSample flip_horizontal(const SegmentationSample& s) {
  SegmentationSample out = s;
  for (int y = 0; y < s.image.h; ++y)
    for (int x = 0; x < s.image.w; ++x) {
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = s.image.at(y, s.image.w - 1 - x, c);
      out.mask.at(y, x) = s.mask.at(y, s.mask.w - 1 - x);
    }
  return out;
}

SegmentationSample flip_vertical(const SegmentationSample& s) {
  SegmentationSample out = s;
  for (int y = 0; y < s.image.h; ++y)
    for (int x = 0; x < s.image.w; ++x) {
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = s.image.at(s.image.h - 1 - y, x, c);
      out.mask.at(y, x) = s.mask.at(s.mask.h - 1 - y, x);
    }
  return out;
}

namespace {

SegmentationSample pad_to(const SegmentationSample& s, int h, int w) {
  if (s.image.h >= h && s.image.w >= w) return s;
  const int ph = std::max(h, s.image.h), pw = std::max(w, s.image.w);
  SegmentationSample out;
  out.image.h = ph;
  out.image.w = pw;
  out.image.v.assign(static_cast<size_t>(ph) * pw * 3, 0);
  out.mask.h = ph;
  out.mask.w = pw;
  out.mask.v.assign(static_cast<size_t>(ph) * pw, 255);  // ignore padding
  for (int y = 0; y < s.image.h; ++y) {
    std::copy(&s.image.v[static_cast<size_t>(y) * s.image.w * 3],
              &s.image.v[static_cast<size_t>(y) * s.image.w * 3] + s.image.w * 3,
              &out.image.v[static_cast<size_t>(y) * pw * 3]);
    std::copy(&s.mask.v[static_cast<size_t>(y) * s.mask.w],
              &s.mask.v[static_cast<size_t>(y) * s.mask.w] + s.mask.w,
              &out.mask.v[static_cast<size_t>(y) * pw]);
  }
  return out;
}

SegmentationSample crop_at(const SegmentationSample& s, int y0, int x0, int h, int w) {
  SegmentationSample out;
  out.image.h = h;
  out.image.w = w;
  out.image.v.resize(static_cast<size_t>(h) * w * 3);
  out.mask.h = h;
  out.mask.w = w;
  out.mask.v.resize(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    std::copy(&s.image.v[(static_cast<size_t>(y0 + y) * s.image.w + x0) * 3],
              &s.image.v[(static_cast<size_t>(y0 + y) * s.image.w + x0) * 3] + w * 3,
              &out.image.v[static_cast<size_t>(y) * w * 3]);
    std::copy(&s.mask.v[static_cast<size_t>(y0 + y) * s.mask.w + x0],
              &s.mask.v[static_cast<size_t>(y0 + y) * s.mask.w + x0] + w,
              &out.mask.v[static_cast<size_t>(y) * w]);
  }
  return out;
}

}  // namespace

SegmentationSample augment_geometric(const SegmentationSample& s,
                                     const AugmentationConfig& cfg, Rng& rng) {
  cfg.validate();
  const double ratio = rng.uniform(cfg.scale_min, cfg.scale_max);
  const int nh = std::max(1, static_cast<int>(std::lround(s.image.h * ratio)));
  const int nw = std::max(1, static_cast<int>(std::lround(s.image.w * ratio)));

  SegmentationSample out;
  out.image = resize_image_bilinear(s.image, nh, nw);
  out.mask = resize_mask_nearest(s.mask, nh, nw);
  out = pad_to(out, cfg.crop, cfg.crop);

  const int y0 = rng.uniform_int(0, out.image.h - cfg.crop);
  const int x0 = rng.uniform_int(0, out.image.w - cfg.crop);
  out = crop_at(out, y0, x0, cfg.crop, cfg.crop);

  if (rng.bernoulli(cfg.hflip_prob)) out = flip_horizontal(out);
  if (rng.bernoulli(cfg.vflip_prob)) out = flip_vertical(out);
  return out;
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r)
    h = 60.0 * std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = 60.0 * ((b - r) / d + 2.0);
  else
    h = 60.0 * ((r - g) / d + 4.0);
  if (h < 0.0) h += 360.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  if (hp < 1)      { r1 = c; g1 = x; }
  else if (hp < 2) { r1 = x; g1 = c; }
  else if (hp < 3) { g1 = c; b1 = x; }
  else if (hp < 4) { g1 = x; b1 = c; }
  else if (hp < 5) { r1 = x; b1 = c; }
  else             { r1 = c; b1 = x; }
  const double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

uint8_t clamp_u8(double v) {
  return static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
}

}  // namespace

ImageU8 adjust_brightness(const ImageU8& img, double delta) {
  ImageU8 out = img;
  for (uint8_t& v : out.v) v = clamp_u8(v + delta);
  return out;
}

ImageU8 adjust_contrast(const ImageU8& img, double factor) {
  ImageU8 out = img;
  for (uint8_t& v : out.v) v = clamp_u8(v * factor);
  return out;
}

namespace {

template <typename Fn>
ImageU8 map_hsv(const ImageU8& img, Fn&& fn) {
  ImageU8 out = img;
  for (size_t i = 0; i < out.v.size(); i += 3) {
    double h, s, v;
    rgb_to_hsv(out.v[i] / 255.0, out.v[i + 1] / 255.0, out.v[i + 2] / 255.0, h, s, v);
    fn(h, s, v);
    double r, g, b;
    hsv_to_rgb(h, s, v, r, g, b);
    out.v[i] = clamp_u8(r * 255.0);
    out.v[i + 1] = clamp_u8(g * 255.0);
    out.v[i + 2] = clamp_u8(b * 255.0);
  }
  return out;
}

}  // namespace

ImageU8 adjust_saturation(const ImageU8& img, double factor) {
  return map_hsv(img, [factor](double&, double& s, double&) {
    s = std::clamp(s * factor, 0.0, 1.0);
  });
}

ImageU8 adjust_hue(const ImageU8& img, double degrees) {
  return map_hsv(img, [degrees](double& h, double&, double&) {
    h = std::fmod(h + degrees + 360.0, 360.0);
  });
}

ImageU8 photometric_distortion(const ImageU8& img, const AugmentationConfig& cfg,
                               Rng& rng) {
  ImageU8 out = img;
  if (rng.bernoulli(cfg.photometric_prob))
    out = adjust_brightness(out, rng.uniform(-cfg.brightness_delta, cfg.brightness_delta));
  if (rng.bernoulli(cfg.photometric_prob))
    out = adjust_contrast(out, rng.uniform(cfg.contrast_min, cfg.contrast_max));
  if (rng.bernoulli(cfg.photometric_prob))
    out = adjust_saturation(out, rng.uniform(cfg.saturation_min, cfg.saturation_max));
  if (rng.bernoulli(cfg.photometric_prob))
    out = adjust_hue(out, rng.uniform(-cfg.hue_delta, cfg.hue_delta));
  return out;
}

namespace {
constexpr double kMean[3] = {0.485, 0.456, 0.406};
constexpr double kStd[3] = {0.229, 0.224, 0.225};
}  // namespace

Tensor normalize(const ImageU8& img) {
  Tensor out = Tensor::zeros({3, img.h, img.w});
  double* p = out.mut();
  const int64_t plane = static_cast<int64_t>(img.h) * img.w;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c)
        p[c * plane + static_cast<int64_t>(y) * img.w + x] = quantize_value(
            (img.at(y, x, c) / 255.0 - kMean[c]) / kStd[c], precision());
  return out;
}

ImageU8 denormalize(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3)
    throw ShapeError("denormalize: expected [3,H,W], got " + shape_str(chw.shape));
  ImageU8 out;
  out.h = chw.dim(1);
  out.w = chw.dim(2);
  out.v.resize(static_cast<size_t>(out.h) * out.w * 3);
  const double* p = chw.ptr();
  const int64_t plane = static_cast<int64_t>(out.h) * out.w;
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = clamp_u8(
            (p[c * plane + static_cast<int64_t>(y) * out.w + x] * kStd[c] + kMean[c]) * 255.0);
  return out;
}

namespace {

std::vector<int> tile_positions(int size, int tile, int stride) {
  if (size <= tile) return {0};
  std::vector<int> pos;
  for (int p = 0; p + tile < size; p += stride) pos.push_back(p);
  pos.push_back(size - tile);
  return pos;
}

}  // namespace

TileSet tile_image(const SegmentationSample& s, int tile, int stride) {
  if (tile < 32 || tile % 32 != 0)
    throw ContractError("tile size must be a positive multiple of 32");
  if (stride < 1 || stride > tile)
    throw ContractError("stride must be in [1, tile]");
  TileSet ts;
  ts.scene_h = s.image.h;
  ts.scene_w = s.image.w;

  const SegmentationSample padded = pad_to(s, tile, tile);
  const std::vector<int> ys = tile_positions(padded.image.h, tile, stride);
  const std::vector<int> xs = tile_positions(padded.image.w, tile, stride);
  for (int y0 : ys)
    for (int x0 : xs) {
      ts.tiles.push_back(crop_at(padded, y0, x0, tile, tile));
      TilePlacement pl;
      pl.y0 = y0;
      pl.x0 = x0;
      pl.h = std::clamp(ts.scene_h - y0, 0, tile);
      pl.w = std::clamp(ts.scene_w - x0, 0, tile);
      ts.places.push_back(pl);
    }
  return ts;
}

void make_toy_dataset(const std::string& dir, uint64_t seed) {
  const fs::path root(dir);
  fs::create_directories(root / "train" / "images");
  fs::create_directories(root / "train" / "masks");

  {
    std::ofstream cls(root / "classes.txt");
    cls << "0\tbackground\t#404040\n"
        << "1\tblock\t#C03028\n"
        << "2\tdisc\t#30A048\n"
        << "3\tband\t#3060C0\n";
  }

  const int side = 64;
  const uint8_t base[4][3] = {{60, 60, 64}, {190, 50, 40}, {50, 160, 70}, {50, 95, 190}};
  Rng rng(mix_seed(seed, 0x70795f64ull));

  for (int idx = 0; idx < 8; ++idx) {
    MaskU8 mask;
    mask.h = mask.w = side;
    mask.v.assign(static_cast<size_t>(side) * side, 0);

    // one horizontal band (bottom layer)
    {
      const int bh = rng.uniform_int(9, 13);
      const int y0 = rng.uniform_int(0, side - bh);
      for (int y = y0; y < y0 + bh; ++y)
        for (int x = 0; x < side; ++x) mask.at(y, x) = 3;
    }
    // disc and block sampled to keep their boxes disjoint (clean boundaries)
    {
      int r = 0, cy = 0, cx = 0, bh = 0, bw = 0, y0 = 0, x0 = 0;
      for (int attempt = 0; attempt < 200; ++attempt) {
        r = rng.uniform_int(10, 14);
        cy = rng.uniform_int(r + 1, side - r - 1);
        cx = rng.uniform_int(r + 1, side - r - 1);
        bh = rng.uniform_int(20, 30);
        bw = rng.uniform_int(20, 30);
        y0 = rng.uniform_int(2, side - bh - 2);
        x0 = rng.uniform_int(2, side - bw - 2);
        const bool apart = cy + r < y0 || cy - r > y0 + bh || cx + r < x0 || cx - r > x0 + bw;
        if (apart) break;
      }
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) mask.at(y, x) = 2;
      for (int y = y0; y < y0 + bh; ++y)
        for (int x = x0; x < x0 + bw; ++x) mask.at(y, x) = 1;
    }

    ImageU8 img;
    img.h = img.w = side;
    img.v.resize(static_cast<size_t>(side) * side * 3);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const uint8_t cls = mask.at(y, x);
        for (int c = 0; c < 3; ++c) {
          const double noise = rng.uniform(-12.0, 12.0);
          img.at(y, x, c) = clamp_u8(base[cls][c] + noise);
        }
      }

    char stem[32];
    std::snprintf(stem, sizeof stem, "toy_%03d", idx);
    write_png_rgb((root / "train" / "images" / (std::string(stem) + ".png")).string(), img);
    write_png_gray((root / "train" / "masks" / (std::string(stem) + ".png")).string(), mask);
  }
}

}  // namespace samba
