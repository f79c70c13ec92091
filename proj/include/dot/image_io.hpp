#ifndef DOT_IMAGE_IO_HPP
#define DOT_IMAGE_IO_HPP

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dot/errors.hpp"
#include "dot/image.hpp"

namespace dot {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_handler(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

inline void png_warning_handler(png_structp, png_const_charp) {}

template <typename T>
void write_png_gray(const std::filesystem::path& path, const Image<T>& img) {
  static_assert(sizeof(T) == 1 || sizeof(T) == 2);
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  }
  std::string message;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng initialisation failed");
  }
  // Row buffer in big-endian order as PNG stores it.
  std::vector<png_byte> row(static_cast<std::size_t>(img.width()) * sizeof(T));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "writing " + path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()),
               8 * sizeof(T), PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto v = static_cast<std::uint32_t>(img(x, y));
      if constexpr (sizeof(T) == 1) {
        row[static_cast<std::size_t>(x)] = static_cast<png_byte>(v);
      } else {
        row[2 * static_cast<std::size_t>(x)] = static_cast<png_byte>(v >> 8);
        row[2 * static_cast<std::size_t>(x) + 1] = static_cast<png_byte>(v & 0xff);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

template <typename T>
Image<T> read_png_gray(const std::filesystem::path& path) {
  static_assert(sizeof(T) == 1 || sizeof(T) == 2);
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string());
  }
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorCode::DecodeError, path.string() + " is not a PNG file");
  }
  std::string message;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoError, "libpng initialisation failed");
  }
  Image<T> img;
  std::vector<png_byte> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::DecodeError, "decoding " + path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || bit_depth != static_cast<int>(8 * sizeof(T))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::DecodeError, path.string() + ": expected " +
                                            std::to_string(8 * sizeof(T)) + "-bit grayscale PNG");
  }
  img = Image<T>(static_cast<int>(width), static_cast<int>(height));
  row.resize(png_get_rowbytes(png, info));
  for (png_uint_32 y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < width; ++x) {
      if constexpr (sizeof(T) == 1) {
        img(static_cast<int>(x), static_cast<int>(y)) = static_cast<T>(row[x]);
      } else {
        img(static_cast<int>(x), static_cast<int>(y)) =
            static_cast<T>((static_cast<unsigned>(row[2 * x]) << 8) | row[2 * x + 1]);
      }
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const ByteImage& img) {
  detail::write_png_gray(path, img);
}

inline void write_png(const std::filesystem::path& path, const LabelImage& img) {
  detail::write_png_gray(path, img);
}

inline ByteImage read_png_u8(const std::filesystem::path& path) {
  return detail::read_png_gray<std::uint8_t>(path);
}

inline LabelImage read_png_u16(const std::filesystem::path& path) {
  return detail::read_png_gray<std::uint16_t>(path);
}

}  // namespace dot

#endif  // DOT_IMAGE_IO_HPP
