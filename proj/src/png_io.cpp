#include "samba/image.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "samba/errors.hpp"

namespace samba {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

void open_reader(PngReader& r, FILE* f, const std::string& path) {
  png_byte header[8];
  if (std::fread(header, 1, 8, f) != 8 || png_sig_cmp(header, 0, 8))
    throw ValidationError("not a PNG file: " + path);
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) throw Error("libpng allocation failed");
  r.info = png_create_info_struct(r.png);
  if (!r.info) throw Error("libpng allocation failed");
  if (setjmp(png_jmpbuf(r.png))) throw ValidationError("corrupt PNG: " + path);
  png_init_io(r.png, f);
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);
}

}  // namespace

ImageU8 read_png_rgb(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ValidationError("cannot open image: " + path);
  PngReader r;
  open_reader(r, f.get(), path);
  if (setjmp(png_jmpbuf(r.png))) throw ValidationError("corrupt PNG: " + path);

  png_set_expand(r.png);          // palette/low-depth to 8-bit
  png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  png_set_gray_to_rgb(r.png);
  png_read_update_info(r.png, r.info);

  ImageU8 img;
  img.h = static_cast<int>(png_get_image_height(r.png, r.info));
  img.w = static_cast<int>(png_get_image_width(r.png, r.info));
  if (png_get_channels(r.png, r.info) != 3)
    throw ValidationError("unsupported channel layout in " + path);
  img.v.resize(static_cast<size_t>(img.h) * img.w * 3);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] = img.v.data() + static_cast<size_t>(y) * img.w * 3;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return img;
}

MaskU8 read_png_gray(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ValidationError("cannot open mask: " + path);
  PngReader r;
  open_reader(r, f.get(), path);
  if (setjmp(png_jmpbuf(r.png))) throw ValidationError("corrupt PNG: " + path);

  const png_byte color = png_get_color_type(r.png, r.info);
  if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA)
    throw ValidationError("mask must be a single-channel 8-bit PNG: " + path);
  if (png_get_bit_depth(r.png, r.info) < 8) png_set_expand_gray_1_2_4_to_8(r.png);
  png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  png_read_update_info(r.png, r.info);

  MaskU8 m;
  m.h = static_cast<int>(png_get_image_height(r.png, r.info));
  m.w = static_cast<int>(png_get_image_width(r.png, r.info));
  m.v.resize(static_cast<size_t>(m.h) * m.w);
  std::vector<png_bytep> rows(static_cast<size_t>(m.h));
  for (int y = 0; y < m.h; ++y)
    rows[static_cast<size_t>(y)] = m.v.data() + static_cast<size_t>(y) * m.w;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return m;
}

namespace {

void write_png(const std::string& path, int h, int w, int color_type,
               const uint8_t* data, size_t row_bytes) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw Error("cannot write PNG: " + path);
  PngWriter wr;
  wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!wr.png) throw Error("libpng allocation failed");
  wr.info = png_create_info_struct(wr.png);
  if (!wr.info) throw Error("libpng allocation failed");
  if (setjmp(png_jmpbuf(wr.png))) throw Error("PNG write failed: " + path);
  png_init_io(wr.png, f.get());
  png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wr.png, wr.info);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(data + static_cast<size_t>(y) * row_bytes);
  png_write_image(wr.png, rows.data());
  png_write_end(wr.png, nullptr);
}

}  // namespace

void write_png_rgb(const std::string& path, const ImageU8& img) {
  write_png(path, img.h, img.w, PNG_COLOR_TYPE_RGB, img.v.data(),
            static_cast<size_t>(img.w) * 3);
}

void write_png_gray(const std::string& path, const MaskU8& mask) {
  write_png(path, mask.h, mask.w, PNG_COLOR_TYPE_GRAY, mask.v.data(),
            static_cast<size_t>(mask.w));
}

}  // namespace samba
