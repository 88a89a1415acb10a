#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dadkit/error.hpp"

namespace dadkit {

struct Shape {
  int height = 0;
  int width = 0;

  std::size_t size() const { return static_cast<std::size_t>(height) * width; }
  bool contains(int row, int col) const { return row >= 0 && row < height && col >= 0 && col < width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width);
}

// Dense row-major 2-D array.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int height, int width, T fill = T{}) : shape_{height, width} {
    DADKIT_CHECK(height >= 0 && width >= 0, ErrorKind::invalid_input, "negative grid dimension");
    data_.assign(shape_.size(), fill);
  }
  explicit Grid(Shape shape, T fill = T{}) : Grid(shape.height, shape.width, fill) {}
  Grid(int height, int width, std::vector<T> values) : shape_{height, width}, data_(std::move(values)) {
    DADKIT_CHECK(data_.size() == shape_.size(), ErrorKind::invalid_input,
                 "grid value count does not match " + to_string(shape_));
  }

  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  Shape shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int row, int col) { return data_[index(row, col)]; }
  const T& operator()(int row, int col) const { return data_[index(row, col)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * shape_.width + col; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::span<T> row(int r) { return {data_.data() + index(r, 0), static_cast<std::size_t>(shape_.width)}; }
  std::span<const T> row(int r) const {
    return {data_.data() + index(r, 0), static_cast<std::size_t>(shape_.width)};
  }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Grid2d = Grid<double>;

// Boolean grid; stored as bytes so spans and element references behave normally.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, bool fill = false) : bits_(height, width, fill ? 1 : 0) {}
  explicit Mask(Shape shape, bool fill = false) : Mask(shape.height, shape.width, fill) {}

  int height() const { return bits_.height(); }
  int width() const { return bits_.width(); }
  Shape shape() const { return bits_.shape(); }
  std::size_t size() const { return bits_.size(); }

  bool operator()(int row, int col) const { return bits_(row, col) != 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(int row, int col, bool v) { bits_(row, col) = v ? 1 : 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool any() const { return count() > 0; }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  Grid<std::uint8_t> bits_;
};

inline void require_same_shape(Shape a, Shape b, const char* what) {
  DADKIT_CHECK(a == b, ErrorKind::invalid_input,
               std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
bool all_finite(const Grid<T>& g) {
  return std::all_of(g.begin(), g.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
}

inline double sum(const Grid2d& g) {
  // Neumaier summation keeps probability totals accurate to ~1 ulp.
  double s = 0.0, c = 0.0;
  for (double v : g) {
    const double t = s + v;
    c += std::abs(s) >= std::abs(v) ? (s - t) + v : (v - t) + s;
    s = t;
  }
  return s + c;
}

inline double dot(const Grid2d& a, const Grid2d& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double max_value(const Grid2d& g) { return *std::max_element(g.begin(), g.end()); }

// Rotates a grid by 90 degrees counter-clockwise `quarter_turns` times.
template <typename T>
Grid<T> rot90(const Grid<T>& g, int quarter_turns) {
  quarter_turns = ((quarter_turns % 4) + 4) % 4;
  if (quarter_turns == 0) return g;
  const int h = g.height(), w = g.width();
  Grid<T> out = (quarter_turns % 2 == 0) ? Grid<T>(h, w) : Grid<T>(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      switch (quarter_turns) {
        case 1: out(w - 1 - c, r) = g(r, c); break;
        case 2: out(h - 1 - r, w - 1 - c) = g(r, c); break;
        case 3: out(c, h - 1 - r) = g(r, c); break;
      }
    }
  }
  return out;
}

// Half-sample symmetric reflection (d c b a | a b c d | d c b a), valid for any offset.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace dadkit
