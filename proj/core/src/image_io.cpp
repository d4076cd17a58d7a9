#include "latcomp/image_io.hpp"

#include <png.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <memory>
#include <vector>

#include "latcomp/errors.hpp"
#include "latcomp/log.hpp"
#include "latcomp/resample.hpp"

namespace latcomp {
namespace {

// Decoded PNG samples after libpng transforms. Kept outside the decoding
// function so no object with a destructor lives in the setjmp frame.
struct PngRaw {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<unsigned char> bytes;
  std::vector<png_bytep> rows;
};

bool decode_png(std::FILE* fp, PngRaw* out, bool gray) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (gray) {
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  } else if (!(color & PNG_COLOR_MASK_COLOR)) {
    png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);

  out->width = png_get_image_width(png, info);
  out->height = png_get_image_height(png, info);
  out->channels = png_get_channels(png, info);
  out->bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out->bytes.resize(rowbytes * out->height);
  out->rows.resize(out->height);
  for (png_uint_32 y = 0; y < out->height; ++y) out->rows[y] = out->bytes.data() + y * rowbytes;
  png_read_image(png, out->rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};

PngRaw load_png(const std::string& path, bool gray) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError(std::strerror(errno), path);
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("not a PNG file", path);
  }
  std::rewind(fp.get());
  PngRaw raw;
  if (!decode_png(fp.get(), &raw, gray)) throw IoError("corrupt or unsupported PNG", path);
  return raw;
}

double sample(const PngRaw& raw, std::size_t y, std::size_t x, int c) {
  const std::size_t i = x * raw.channels + c;
  if (raw.bit_depth == 16) {
    const unsigned char* p = raw.rows[y] + 2 * i;
    return ((p[0] << 8) | p[1]) / 65535.0;
  }
  return raw.rows[y][i] / 255.0;
}

void png_write(std::FILE* fp, const std::vector<unsigned char>& pixels, int width, int height, bool gray,
               const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_stdio(&image, fp, 0, pixels.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw IoError("PNG encode failed: " + message, path);
  }
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Tensor read_image(const std::string& path, int resolution) {
  const PngRaw raw = load_png(path, false);
  Tensor out(Shape{3, static_cast<int>(raw.height), static_cast<int>(raw.width)});
  for (std::size_t y = 0; y < raw.height; ++y) {
    for (std::size_t x = 0; x < raw.width; ++x) {
      for (int c = 0; c < 3; ++c) out(c, static_cast<int>(y), static_cast<int>(x)) = sample(raw, y, x, c);
    }
  }
  if (resolution > 0) out = clamp(bilinear_resize(out, resolution, resolution), 0.0, 1.0);
  return out;
}

PixelMask read_mask(const std::string& path, int height, int width) {
  const PngRaw raw = load_png(path, true);
  Plane plane(static_cast<int>(raw.height), static_cast<int>(raw.width));
  for (std::size_t y = 0; y < raw.height; ++y) {
    for (std::size_t x = 0; x < raw.width; ++x) {
      // 8-bit value > 127; 16-bit values compare on the same normalised scale.
      plane.at(static_cast<int>(y), static_cast<int>(x)) = sample(raw, y, x, 0) > 127.0 / 255.0 ? 1.0 : 0.0;
    }
  }
  if (height > 0 && width > 0 && (height != plane.height || width != plane.width)) {
    plane = nearest_resize(plane, height, width);
  }
  PixelMask mask(std::move(plane));
  if (mask.empty()) logger()->warn("mask '{}' is empty", path);
  return mask;
}

void atomic_write(const std::string& path, const std::function<void(std::FILE*)>& writer) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  std::error_code ec;
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path(), ec);
    if (ec) throw IoError("cannot create directory: " + ec.message(), target.parent_path().string());
  }
  std::string tmpl = path + ".tmp-XXXXXX";
  const int fd = ::mkstemp(tmpl.data());
  if (fd < 0) throw IoError(std::strerror(errno), path);
  std::FILE* fp = ::fdopen(fd, "wb");
  if (fp == nullptr) {
    ::close(fd);
    std::remove(tmpl.c_str());
    throw IoError(std::strerror(errno), path);
  }
  try {
    writer(fp);
    if (std::fflush(fp) != 0) throw IoError(std::strerror(errno), path);
  } catch (...) {
    std::fclose(fp);
    std::remove(tmpl.c_str());
    throw;
  }
  if (std::fclose(fp) != 0) {
    std::remove(tmpl.c_str());
    throw IoError(std::strerror(errno), path);
  }
  fs::rename(tmpl, target, ec);
  if (ec) {
    std::remove(tmpl.c_str());
    throw IoError("rename failed: " + ec.message(), path);
  }
}

void write_text_atomic(const std::string& path, const std::string& contents) {
  atomic_write(path, [&](std::FILE* fp) {
    if (std::fwrite(contents.data(), 1, contents.size(), fp) != contents.size()) {
      throw IoError(std::strerror(errno), path);
    }
  });
}

void write_image(const std::string& path, const Tensor& image) {
  if (image.channels() != 3) throw ShapeError("write_image expects 3 channels, got " + image.shape().to_string());
  const int h = image.height();
  const int w = image.width();
  std::vector<unsigned char> pixels(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image(c, y, x));
    }
  }
  atomic_write(path, [&](std::FILE* fp) { png_write(fp, pixels, w, h, false, path); });
}

void write_mask(const std::string& path, const PixelMask& mask) {
  std::vector<unsigned char> pixels(mask.plane().size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = mask.plane().values[i] > 0.5 ? 255 : 0;
  atomic_write(path, [&](std::FILE* fp) { png_write(fp, pixels, mask.width(), mask.height(), true, path); });
}

Plane normalize_min_max(const Plane& map) {
  Plane out = map;
  if (map.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double range = *hi - *lo;
  for (double& v : out.values) v = range > 0.0 ? (v - *lo) / range : 0.5;
  return out;
}

void write_heatmap(const std::string& path, const Plane& map) {
  const Plane norm = normalize_min_max(map);
  std::vector<unsigned char> pixels(norm.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = to_byte(norm.values[i]);
  atomic_write(path, [&](std::FILE* fp) { png_write(fp, pixels, norm.width, norm.height, true, path); });
}

}  // namespace latcomp
