#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace relaylab {

/// Square periodic grid. Values are stored row-major with y as the slow
/// index: entry (ix, iy) lives at iy * nx + ix, x = ix * dx, y = iy * dy.
struct Grid {
  std::size_t nx = 64;
  std::size_t ny = 64;
  double length = 2.0 * std::numbers::pi;

  [[nodiscard]] std::size_t size() const noexcept { return nx * ny; }
  [[nodiscard]] double dx() const noexcept { return length / static_cast<double>(nx); }
  [[nodiscard]] double dy() const noexcept { return length / static_cast<double>(ny); }
  /// Number of complex columns in the half-spectrum layout.
  [[nodiscard]] std::size_t nkx() const noexcept { return nx / 2 + 1; }
  [[nodiscard]] std::size_t spectral_size() const noexcept { return ny * nkx(); }

  void validate() const {
    auto pow2 = [](std::size_t n) { return n > 0 && (n & (n - 1)) == 0; };
    if (!pow2(nx) || !pow2(ny)) {
      throw std::invalid_argument("grid dimensions must be powers of two, got " +
                                  std::to_string(nx) + "x" + std::to_string(ny));
    }
    if (nx != ny) throw std::invalid_argument("grid must be square");
    if (!(length > 0.0) || !std::isfinite(length)) {
      throw std::invalid_argument("grid length must be positive and finite");
    }
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// A real scalar field on a Grid (vorticity, stream function, velocity component).
class Field {
 public:
  Field() = default;
  explicit Field(Grid grid) : grid_(grid), values_(grid.size(), 0.0) {}
  Field(Grid grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size()) {
      throw std::invalid_argument("field has " + std::to_string(values_.size()) +
                                  " values, grid needs " + std::to_string(grid_.size()));
    }
  }

  template <typename Fn>
  static Field from_function(Grid grid, Fn&& fn) {
    Field f(grid);
    for (std::size_t iy = 0; iy < grid.ny; ++iy) {
      for (std::size_t ix = 0; ix < grid.nx; ++ix) {
        f(ix, iy) = fn(static_cast<double>(ix) * grid.dx(), static_cast<double>(iy) * grid.dy());
      }
    }
    return f;
  }

  [[nodiscard]] const Grid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] std::span<double> values() noexcept { return values_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] const std::vector<double>& data() const noexcept { return values_; }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  double& operator()(std::size_t ix, std::size_t iy) noexcept { return values_[iy * grid_.nx + ix]; }
  double operator()(std::size_t ix, std::size_t iy) const noexcept {
    return values_[iy * grid_.nx + ix];
  }

  Field& operator+=(const Field& o) {
    check_same_grid(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }
  Field& operator-=(const Field& o) {
    check_same_grid(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
    return *this;
  }
  Field& operator*=(double s) noexcept {
    for (double& v : values_) v *= s;
    return *this;
  }
  friend Field operator+(Field a, const Field& b) { return a += b; }
  friend Field operator-(Field a, const Field& b) { return a -= b; }
  friend Field operator*(double s, Field a) { return a *= s; }

  friend bool operator==(const Field&, const Field&) = default;

  void check_same_grid(const Field& o) const {
    if (!(grid_ == o.grid_)) throw std::invalid_argument("fields live on different grids");
  }

 private:
  Grid grid_{};
  std::vector<double> values_;
};

using VorticityField = Field;

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

inline double mean(std::span<const double> a) noexcept {
  double s = 0.0;
  for (double v : a) s += v;
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

/// Index of the first non-finite entry, or size() if all are finite.
inline std::size_t first_non_finite(std::span<const double> a) noexcept {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i])) return i;
  }
  return a.size();
}

inline void require_finite(const Field& f, const char* what) {
  const std::size_t i = first_non_finite(f.values());
  if (i != f.size()) {
    const std::size_t ix = i % f.grid().nx;
    const std::size_t iy = i / f.grid().nx;
    throw std::domain_error(std::string(what) + ": non-finite value at (ix=" + std::to_string(ix) +
                            ", iy=" + std::to_string(iy) + ")");
  }
}

}  // namespace relaylab
