#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace samba {

// 8-bit interleaved RGB, row-major.
struct ImageU8 {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> v;  // h * w * 3

  uint8_t at(int y, int x, int c) const {
    return v[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(c)];
  }
  uint8_t& at(int y, int x, int c) {
    return v[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(c)];
  }
};

// 8-bit single-channel class-index raster; 255 is the ignore value.
struct MaskU8 {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> v;  // h * w

  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
};

struct SegmentationSample {
  ImageU8 image;
  MaskU8 mask;
};

// PNG IO. Readers accept any 8/16-bit PNG and convert: images to RGB,
// masks to single-channel gray (non-gray mask files are rejected).
ImageU8 read_png_rgb(const std::string& path);
MaskU8 read_png_gray(const std::string& path);
void write_png_rgb(const std::string& path, const ImageU8& img);
void write_png_gray(const std::string& path, const MaskU8& mask);

}  // namespace samba
