#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace hrbf {

namespace detail {
// Eigen fixed-size types are left uninitialized by T{}.
template <class T>
T zero_value() {
  if constexpr (requires { T::Zero(); })
    return T::Zero();
  else
    return T{};
}
}  // namespace detail

/// Row-major width x height grid with a per-pixel validity flag.
template <class T>
class PixelMap {
 public:
  PixelMap() = default;
  PixelMap(int width, int height, const T& fill = detail::zero_value<T>())
      : width_(width), height_(height), values_(std::size_t(width) * height, fill),
        valid_(std::size_t(width) * height, 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  bool same_shape(int w, int h) const { return width_ == w && height_ == h; }
  template <class U>
  bool same_shape(const PixelMap<U>& o) const { return width_ == o.width() && height_ == o.height(); }

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  bool valid(int x, int y) const { return in_bounds(x, y) && valid_[index(x, y)] != 0; }
  bool valid(std::size_t i) const { return valid_[i] != 0; }

  const T& operator()(int x, int y) const { return values_[index(x, y)]; }
  T& operator()(int x, int y) { return values_[index(x, y)]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  void set(int x, int y, const T& v) {
    values_[index(x, y)] = v;
    valid_[index(x, y)] = 1;
  }
  void set(std::size_t i, const T& v) {
    values_[i] = v;
    valid_[i] = 1;
  }
  void invalidate(int x, int y) { valid_[index(x, y)] = 0; }
  void invalidate(std::size_t i) { valid_[i] = 0; }

  std::size_t count_valid() const {
    std::size_t n = 0;
    for (auto v : valid_) n += v;
    return n;
  }

  std::size_t index(int x, int y) const {
    assert(in_bounds(x, y));
    return std::size_t(y) * width_ + x;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> values_;
  std::vector<std::uint8_t> valid_;
};

}  // namespace hrbf
