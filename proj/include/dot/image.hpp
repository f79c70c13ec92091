#ifndef DOT_IMAGE_HPP
#define DOT_IMAGE_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "dot/errors.hpp"

namespace dot {

/// Dense row-major single-channel image.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using IntensityImage = Image<double>;
using DepthImage = Image<double>;
using LabelImage = Image<std::uint16_t>;
using ByteImage = Image<std::uint8_t>;

/// Interpolated value together with the derivative of the bilinear
/// interpolant itself (piecewise constant across pixel cells).
struct BilinearSample {
  double value = 0.0;
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();
};

template <typename T>
bool in_interpolation_domain(const Image<T>& img, const Eigen::Vector2d& p) noexcept {
  return std::isfinite(p.x()) && std::isfinite(p.y()) && p.x() >= 0.0 && p.y() >= 0.0 &&
         p.x() <= img.width() - 1 && p.y() <= img.height() - 1;
}

/// Non-throwing bilinear lookup used in the inner tracking loops.
template <typename T>
std::optional<BilinearSample> try_sample_bilinear(const Image<T>& img, const Eigen::Vector2d& p) {
  if (img.width() < 2 || img.height() < 2 || !in_interpolation_domain(img, p)) {
    return std::nullopt;
  }
  // The cell is anchored so that x0 + 1 stays inside the image; on the last
  // column/row the weight of the far neighbour becomes exactly 1.
  const int x0 = std::min(static_cast<int>(std::floor(p.x())), img.width() - 2);
  const int y0 = std::min(static_cast<int>(std::floor(p.y())), img.height() - 2);
  const double a = p.x() - x0;
  const double b = p.y() - y0;
  const double i00 = static_cast<double>(img(x0, y0));
  const double i10 = static_cast<double>(img(x0 + 1, y0));
  const double i01 = static_cast<double>(img(x0, y0 + 1));
  const double i11 = static_cast<double>(img(x0 + 1, y0 + 1));

  BilinearSample s;
  s.value = (1.0 - a) * (1.0 - b) * i00 + a * (1.0 - b) * i10 + (1.0 - a) * b * i01 + a * b * i11;
  s.gradient.x() = (1.0 - b) * (i10 - i00) + b * (i11 - i01);
  s.gradient.y() = (1.0 - a) * (i01 - i00) + a * (i11 - i10);
  return s;
}

/// Bilinear interpolation of the four pixels around `p`.
/// Throws OutOfBounds outside [0, W-1] x [0, H-1].
template <typename T>
double sample_bilinear(const Image<T>& img, const Eigen::Vector2d& p) {
  auto s = try_sample_bilinear(img, p);
  if (!s) {
    throw Error(ErrorCode::OutOfBounds, "bilinear sample outside the image");
  }
  return s->value;
}

/// Central-difference gradient at an interior pixel (one-sided on borders).
template <typename T>
Eigen::Vector2d pixel_gradient(const Image<T>& img, int x, int y) {
  const int xm = std::max(x - 1, 0), xp = std::min(x + 1, img.width() - 1);
  const int ym = std::max(y - 1, 0), yp = std::min(y + 1, img.height() - 1);
  const double gx = (static_cast<double>(img(xp, y)) - static_cast<double>(img(xm, y))) /
                    std::max(xp - xm, 1);
  const double gy = (static_cast<double>(img(x, yp)) - static_cast<double>(img(x, ym))) /
                    std::max(yp - ym, 1);
  return {gx, gy};
}

}  // namespace dot

#endif  // DOT_IMAGE_HPP
