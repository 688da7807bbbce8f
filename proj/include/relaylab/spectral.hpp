#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "relaylab/field.hpp"

namespace relaylab {

using Complex = std::complex<double>;

/// Half-spectrum coefficients of a real field: ny rows by (nx/2 + 1) columns.
/// The forward transform is normalised by 1/(nx*ny), so coefficient (0, 0) is
/// the spatial mean and sum over the full plane of |c|^2 equals mean(f^2).
class Spectrum {
 public:
  Spectrum() = default;
  explicit Spectrum(Grid grid) : grid_(grid), coeffs_(grid.spectral_size()) {}

  [[nodiscard]] const Grid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::span<Complex> coeffs() noexcept { return coeffs_; }
  [[nodiscard]] std::span<const Complex> coeffs() const noexcept { return coeffs_; }
  [[nodiscard]] std::size_t size() const noexcept { return coeffs_.size(); }

  Complex& operator()(std::size_t kx_index, std::size_t ky_index) noexcept {
    return coeffs_[ky_index * grid_.nkx() + kx_index];
  }
  Complex operator()(std::size_t kx_index, std::size_t ky_index) const noexcept {
    return coeffs_[ky_index * grid_.nkx() + kx_index];
  }
  Complex& operator[](std::size_t i) noexcept { return coeffs_[i]; }
  Complex operator[](std::size_t i) const noexcept { return coeffs_[i]; }

 private:
  Grid grid_{};
  std::vector<Complex> coeffs_;
};

namespace detail {

// FFTW's planner is not thread-safe; execution with the new-array interface is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
};

inline const PlanPair& plans_for(std::size_t nx, std::size_t ny) {
  static std::map<std::pair<std::size_t, std::size_t>, PlanPair> cache;
  std::lock_guard lock(fftw_planner_mutex());
  auto it = cache.find({nx, ny});
  if (it != cache.end()) return it->second;
  // ESTIMATE planning is deterministic, which keeps reruns bit-identical.
  std::vector<double> real(nx * ny);
  std::vector<Complex> cplx(ny * (nx / 2 + 1));
  auto* c = reinterpret_cast<fftw_complex*>(cplx.data());
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  PlanPair p;
  p.forward = fftw_plan_dft_r2c_2d(static_cast<int>(ny), static_cast<int>(nx), real.data(), c, flags);
  p.backward = fftw_plan_dft_c2r_2d(static_cast<int>(ny), static_cast<int>(nx), c, real.data(),
                                    flags | FFTW_DESTROY_INPUT);
  return cache.emplace(std::pair{nx, ny}, p).first->second;
}

}  // namespace detail

/// Wavenumber for storage index `i` along an axis of length n on a domain of
/// the given length. Indices above n/2 map to negative wavenumbers.
inline double signed_wavenumber(std::size_t i, std::size_t n, double length) noexcept {
  const double base = 2.0 * std::numbers::pi / length;
  const auto si = static_cast<long long>(i);
  const auto sn = static_cast<long long>(n);
  return base * static_cast<double>(si <= sn / 2 ? si : si - sn);
}

/// Integer mode index for storage index i (same sign convention as above).
inline long long signed_mode(std::size_t i, std::size_t n) noexcept {
  const auto si = static_cast<long long>(i);
  const auto sn = static_cast<long long>(n);
  return si <= sn / 2 ? si : si - sn;
}

/// Real-to-complex and complex-to-real transforms for one grid shape.
class SpectralTransform {
 public:
  explicit SpectralTransform(Grid grid) : grid_(grid), plans_(&detail::plans_for(grid.nx, grid.ny)),
                                          scratch_(grid.spectral_size()) {}

  [[nodiscard]] const Grid& grid() const noexcept { return grid_; }

  void forward(std::span<const double> in, Spectrum& out) {
    if (out.size() != grid_.spectral_size()) out = Spectrum(grid_);
    // r2c does not modify its input, but the FFTW signature is non-const.
    fftw_execute_dft_r2c(plans_->forward, const_cast<double*>(in.data()),
                         reinterpret_cast<fftw_complex*>(out.coeffs().data()));
    const double scale = 1.0 / static_cast<double>(grid_.size());
    for (Complex& c : out.coeffs()) c *= scale;
  }

  void backward(const Spectrum& in, std::span<double> out) {
    std::copy(in.coeffs().begin(), in.coeffs().end(), scratch_.begin());
    fftw_execute_dft_c2r(plans_->backward, reinterpret_cast<fftw_complex*>(scratch_.data()),
                         out.data());
  }

  [[nodiscard]] Spectrum forward(const Field& f) {
    Spectrum s(grid_);
    forward(f.values(), s);
    return s;
  }

  [[nodiscard]] Field backward(const Spectrum& s) {
    Field f(grid_);
    backward(s, f.values());
    return f;
  }

 private:
  Grid grid_;
  const detail::PlanPair* plans_;
  std::vector<Complex> scratch_;
};

/// Calls fn(index, kx, ky, weight) for every stored half-spectrum coefficient.
/// `weight` is the multiplicity of the coefficient in the full plane (1 for
/// the self-conjugate columns kx = 0 and kx = nx/2, else 2).
template <typename Fn>
void for_each_mode(const Grid& grid, Fn&& fn) {
  const std::size_t nkx = grid.nkx();
  for (std::size_t iy = 0; iy < grid.ny; ++iy) {
    const long long ky = signed_mode(iy, grid.ny);
    for (std::size_t ix = 0; ix < nkx; ++ix) {
      const auto kx = static_cast<long long>(ix);
      const double weight = (ix == 0 || ix == grid.nx / 2) ? 1.0 : 2.0;
      fn(iy * nkx + ix, kx, ky, weight);
    }
  }
}

}  // namespace relaylab
