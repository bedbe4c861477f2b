#ifndef CONTEXT_TRACKER_IMAGE_HPP
#define CONTEXT_TRACKER_IMAGE_HPP

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "context_tracker/errors.hpp"

#ifdef CONTEXT_TRACKER_WITH_JPEG
#include <jpeglib.h>
#endif

namespace context_tracker {

/// Interleaved 8-bit RGB image, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Bilinear resize with half-pixel centres (edge-clamped).
inline Image resize_bilinear(const Image& src, int out_w, int out_h) {
  if (out_w <= 0 || out_h <= 0) throw ContractError("resize_bilinear: target extents must be positive");
  if (out_w == src.width && out_h == src.height) return src;
  Image dst(out_w, out_h);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * src.at(x0, y0, c) + wx * src.at(x1, y0, c)) +
                         wy * ((1 - wx) * src.at(x0, y1, c) + wx * src.at(x1, y1, c));
        dst.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return dst;
}

/// Pads with replicated edge pixels up to at least min_w x min_h (anchored top-left).
inline Image pad_edge(const Image& src, int min_w, int min_h) {
  if (src.width >= min_w && src.height >= min_h) return src;
  Image dst(std::max(src.width, min_w), std::max(src.height, min_h));
  for (int y = 0; y < dst.height; ++y) {
    const int sy = std::min(y, src.height - 1);
    for (int x = 0; x < dst.width; ++x) {
      const int sx = std::min(x, src.width - 1);
      for (int c = 0; c < 3; ++c) dst.at(x, y, c) = src.at(sx, sy, c);
    }
  }
  return dst;
}

// --- PPM (binary P6) -------------------------------------------------------

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  if (token() != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
  int w = 0, h = 0, maxv = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxv = std::stoi(token());
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxv != 255) throw DataError(path.string() + ": unsupported PPM header");
  Image img(w, h);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw DataError(path.string() + ": truncated PPM");
  return img;
}

// --- JPEG ------------------------------------------------------------------

#ifdef CONTEXT_TRACKER_WITH_JPEG
namespace detail {
struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_jump(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}
}  // namespace detail

inline Image read_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "rb"), &std::fclose);
  if (!fp) throw DataError("cannot open " + path.string());
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = detail::jpeg_jump;
  Image img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError(path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = static_cast<int>(cinfo.output_width);
  img.height = static_cast<int>(cinfo.output_height);
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}
#endif

inline bool jpeg_supported() {
#ifdef CONTEXT_TRACKER_WITH_JPEG
  return true;
#else
  return false;
#endif
}

/// Loads .ppm always and .jpg/.jpeg when built with libjpeg.
inline Image load_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ppm") return read_ppm(path);
#ifdef CONTEXT_TRACKER_WITH_JPEG
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
#endif
  throw DataError("unsupported image format: " + path.string());
}

}  // namespace context_tracker

#endif  // CONTEXT_TRACKER_IMAGE_HPP
