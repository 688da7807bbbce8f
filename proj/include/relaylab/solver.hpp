#pragma once

// Pseudo-spectral integrator for forced 2D vorticity dynamics on a periodic box:
//
//   d(omega)/dt + u . grad(omega) = nu * lap(omega) + f,   lap(psi) = -omega,
//   u = (d psi/dy, -d psi/dx),  f = A cos(k_f y)
//
// with y scaled by 2 pi / L. A diagonal forcing A (sin + cos)(k_f (x + y)) is
// also available.
//
// The nonlinear term is evaluated in grid space and 2/3-truncated. Time
// stepping is classical RK4 on the advection+forcing part with an exact
// integrating factor exp(-nu k^2 t) for the viscous part.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "relaylab/errors.hpp"
#include "relaylab/field.hpp"
#include "relaylab/spectral.hpp"

#if defined(__SSE__) || defined(_M_X64)
#include <xmmintrin.h>
#define RELAYLAB_HAS_MXCSR 1
#endif

namespace relaylab {

namespace detail {

// Strongly damped modes underflow into subnormals, which are orders of
// magnitude slower on x86. Flush-to-zero is deterministic, so it is set for
// the duration of time stepping and restored afterwards.
class DenormalGuard {
 public:
#ifdef RELAYLAB_HAS_MXCSR
  DenormalGuard() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~DenormalGuard() { _mm_setcsr(saved_); }

 private:
  unsigned int saved_;

 public:
#else
  DenormalGuard() = default;
#endif
  DenormalGuard(const DenormalGuard&) = delete;
  DenormalGuard& operator=(const DenormalGuard&) = delete;
};

}  // namespace detail

enum class ForcingShape { kolmogorov, diagonal };

enum class InitialSpectrum { power_law, matern };

/// Zero-mean Gaussian random field used as the initial vorticity, rescaled to
/// the requested rms.
///
/// power_law: per-mode amplitude rises as k^2 below `peak_k` and falls as
/// k^-decay above it, k the integer mode magnitude.
/// matern: per-mode amplitude (|kappa|^2 + tau^2)^(-alpha/2), kappa the
/// physical wavenumber 2 pi k / L.
struct InitialConditionSpec {
  InitialSpectrum spectrum = InitialSpectrum::power_law;
  double peak_k = 4.0;
  double decay = 3.0;
  double tau = 7.0;
  double alpha = 2.5;
  double rms = 5.0;
};

struct SolverConfig {
  Grid grid{};
  double nu = 1e-3;
  int k_f = 4;
  double forcing_amplitude = 0.1;
  ForcingShape forcing_shape = ForcingShape::kolmogorov;
  double dt = 1e-3;
  double record_interval = 1.0;
  double spinup_time = 10.0;
  std::uint64_t seed = 0;
  InitialConditionSpec ic{};
  bool check_cfl = true;

  [[nodiscard]] std::uint64_t steps_per_record() const {
    return static_cast<std::uint64_t>(std::llround(record_interval / dt));
  }
  [[nodiscard]] std::uint64_t spinup_steps() const {
    return static_cast<std::uint64_t>(std::llround(spinup_time / dt));
  }

  void validate() const {
    grid.validate();
    if (!(nu >= 0.0) || !std::isfinite(nu)) throw std::invalid_argument("nu must be >= 0");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (!(record_interval > 0.0)) throw std::invalid_argument("record_interval must be positive");
    if (!(spinup_time >= 0.0)) throw std::invalid_argument("spinup_time must be >= 0");
    const double recorded = dt * static_cast<double>(steps_per_record());
    if (steps_per_record() == 0 || std::abs(recorded - record_interval) > 1e-12) {
      throw std::invalid_argument("record_interval " + std::to_string(record_interval) +
                                  " is not a whole number of dt=" + std::to_string(dt) + " steps");
    }
    if (k_f <= 0 || 3 * static_cast<std::size_t>(k_f) >= grid.ny) {
      throw std::invalid_argument("forcing wavenumber k_f=" + std::to_string(k_f) +
                                  " outside the dealiased band");
    }
  }
};

struct Velocity {
  Field ux;
  Field uy;
};

struct StreamVelocity {
  Field psi;
  Field ux;
  Field uy;
};

struct Trajectory {
  std::vector<VorticityField> frames;
  SolverConfig config{};
  std::uint32_t trajectory_id = 0;

  [[nodiscard]] const Grid& grid() const { return frames.front().grid(); }
};

namespace detail {

// True if mode (mx, my) survives 2/3 truncation.
inline bool in_dealiased_band(long long mx, long long my, const Grid& g) {
  return 3 * std::llabs(mx) < static_cast<long long>(g.nx) &&
         3 * std::llabs(my) < static_cast<long long>(g.ny);
}

inline Spectrum spectral_derivative(const Spectrum& s, bool along_x) {
  const Grid& g = s.grid();
  Spectrum out(g);
  for_each_mode(g, [&](std::size_t i, long long mx, long long my, double) {
    // Nyquist derivatives are zeroed so real fields stay real.
    const bool nyquist = (along_x && 2 * mx == static_cast<long long>(g.nx)) ||
                         (!along_x && 2 * std::llabs(my) == static_cast<long long>(g.ny));
    const double k = nyquist ? 0.0
                             : (2.0 * std::numbers::pi / g.length) *
                                   static_cast<double>(along_x ? mx : my);
    out[i] = Complex(0.0, k) * s[i];
  });
  return out;
}

}  // namespace detail

/// Solves lap(psi) = -omega spectrally. The mean of omega is projected out.
inline Field poisson_solve(const VorticityField& omega) {
  require_finite(omega, "poisson_solve");
  const Grid& g = omega.grid();
  SpectralTransform fft(g);
  Spectrum s = fft.forward(omega);
  const double base = 2.0 * std::numbers::pi / g.length;
  for_each_mode(g, [&](std::size_t i, long long mx, long long my, double) {
    const double k2 = base * base * static_cast<double>(mx * mx + my * my);
    s[i] = k2 == 0.0 ? Complex{} : s[i] / k2;
  });
  return fft.backward(s);
}

/// u = d(psi)/dy, v = -d(psi)/dx.
inline Velocity velocity_from_stream(const Field& psi) {
  require_finite(psi, "velocity_from_stream");
  SpectralTransform fft(psi.grid());
  const Spectrum s = fft.forward(psi);
  Spectrum uy = detail::spectral_derivative(s, true);
  for (Complex& c : uy.coeffs()) c = -c;
  return {fft.backward(detail::spectral_derivative(s, false)), fft.backward(uy)};
}

inline StreamVelocity stream_and_velocity(const VorticityField& omega) {
  Field psi = poisson_solve(omega);
  Velocity u = velocity_from_stream(psi);
  return {std::move(psi), std::move(u.ux), std::move(u.uy)};
}

/// The dealiased advection term u . grad(omega).
inline Field advect(const VorticityField& omega, const Velocity& u) {
  omega.check_same_grid(u.ux);
  omega.check_same_grid(u.uy);
  require_finite(omega, "advect");
  require_finite(u.ux, "advect");
  require_finite(u.uy, "advect");
  const Grid& g = omega.grid();
  SpectralTransform fft(g);
  const Spectrum w = fft.forward(omega);
  const Field wx = fft.backward(detail::spectral_derivative(w, true));
  const Field wy = fft.backward(detail::spectral_derivative(w, false));
  Field product(g);
  for (std::size_t i = 0; i < product.size(); ++i) product[i] = u.ux[i] * wx[i] + u.uy[i] * wy[i];
  Spectrum p = fft.forward(product);
  for_each_mode(g, [&](std::size_t i, long long mx, long long my, double) {
    if (!detail::in_dealiased_band(mx, my, g)) p[i] = Complex{};
  });
  return fft.backward(p);
}

/// Kolmogorov forcing in vorticity form, amplitude * cos(k_f * y).
inline VorticityField forcing_field(const Grid& grid, int k_f, double amplitude,
                                    ForcingShape shape = ForcingShape::kolmogorov) {
  grid.validate();
  if (k_f <= 0 || 3 * static_cast<std::size_t>(k_f) >= grid.ny) {
    throw std::invalid_argument("forcing wavenumber k_f=" + std::to_string(k_f) +
                                " outside the dealiased band (0, " + std::to_string(grid.ny / 3) +
                                "]");
  }
  const double scale = 2.0 * std::numbers::pi / grid.length;
  const double k = static_cast<double>(k_f) * scale;
  if (shape == ForcingShape::diagonal) {
    return Field::from_function(grid, [&](double x, double y) {
      return amplitude * (std::sin(k * (x + y)) + std::cos(k * (x + y)));
    });
  }
  return Field::from_function(grid, [&](double, double y) { return amplitude * std::cos(k * y); });
}

inline double kinetic_energy(const VorticityField& omega) {
  const StreamVelocity sv = stream_and_velocity(omega);
  double s = 0.0;
  for (std::size_t i = 0; i < omega.size(); ++i) s += sv.ux[i] * sv.ux[i] + sv.uy[i] * sv.uy[i];
  return 0.5 * s / static_cast<double>(omega.size());
}

inline double enstrophy(const VorticityField& omega) {
  return 0.5 * dot(omega.values(), omega.values()) / static_cast<double>(omega.size());
}

/// Stateful integrator holding the spectral state and precomputed operators.
/// Not shareable across threads; create one per worker.
class VorticitySolver {
 public:
  explicit VorticitySolver(const SolverConfig& cfg) : cfg_(cfg), fft_(cfg.grid) {
    cfg_.validate();
    const Grid& g = cfg_.grid;
    const std::size_t n = g.spectral_size();
    kx_.resize(n);
    ky_.resize(n);
    inv_k2_.resize(n);
    mask_.resize(n);
    decay_full_.resize(n);
    decay_half_.resize(n);
    const double base = 2.0 * std::numbers::pi / g.length;
    for_each_mode(g, [&](std::size_t i, long long mx, long long my, double) {
      const double k2 = base * base * static_cast<double>(mx * mx + my * my);
      kx_[i] = 2 * mx == static_cast<long long>(g.nx) ? 0.0 : base * static_cast<double>(mx);
      ky_[i] = 2 * std::llabs(my) == static_cast<long long>(g.ny) ? 0.0 : base * static_cast<double>(my);
      inv_k2_[i] = k2 == 0.0 ? 0.0 : 1.0 / k2;
      mask_[i] = detail::in_dealiased_band(mx, my, g) && k2 != 0.0 ? 1.0 : 0.0;
      decay_full_[i] = std::exp(-cfg_.nu * k2 * cfg_.dt);
      decay_half_[i] = std::exp(-cfg_.nu * k2 * cfg_.dt * 0.5);
    });
    forcing_ = fft_.forward(forcing_field(g, cfg_.k_f, cfg_.forcing_amplitude, cfg_.forcing_shape));
    state_ = Spectrum(g);
    for (auto* s : {&k1_, &k2_, &k3_, &k4_, &stage_, &scratch_}) *s = Spectrum(g);
    for (auto* f : {&ux_, &uy_, &wx_, &wy_}) f->assign(g.size(), 0.0);
  }

  [[nodiscard]] const SolverConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::uint64_t steps_taken() const noexcept { return steps_; }
  [[nodiscard]] double last_max_velocity() const noexcept { return max_velocity_; }

  void set_state(const VorticityField& omega) {
    require_finite(omega, "VorticitySolver::set_state");
    omega.check_same_grid(Field(cfg_.grid));
    fft_.forward(omega.values(), state_);
    state_[0] = Complex{};
  }

  [[nodiscard]] VorticityField state() {
    Field f(cfg_.grid);
    fft_.backward(state_, f.values());
    return f;
  }

  [[nodiscard]] const Spectrum& spectral_state() const noexcept { return state_; }

  void advance(std::uint64_t n_steps) {
    detail::DenormalGuard ftz;
    for (std::uint64_t s = 0; s < n_steps; ++s) step_once();
  }

 private:
  // out = mask * (-(u . grad w))^ + f^, also records max|u|.
  void tendency(const Spectrum& w, Spectrum& out) {
    const std::size_t n = w.size();
    auto build = [&](auto&& coeff, std::vector<double>& dst) {
      for (std::size_t i = 0; i < n; ++i) scratch_[i] = coeff(i);
      fft_.backward(scratch_, dst);
    };
    build([&](std::size_t i) { return Complex(0.0, ky_[i]) * (w[i] * inv_k2_[i]); }, ux_);
    build([&](std::size_t i) { return Complex(0.0, -kx_[i]) * (w[i] * inv_k2_[i]); }, uy_);
    build([&](std::size_t i) { return Complex(0.0, kx_[i]) * w[i]; }, wx_);
    build([&](std::size_t i) { return Complex(0.0, ky_[i]) * w[i]; }, wy_);
    double umax2 = 0.0;
    for (std::size_t i = 0; i < ux_.size(); ++i) {
      umax2 = std::max(umax2, ux_[i] * ux_[i] + uy_[i] * uy_[i]);
      wx_[i] = ux_[i] * wx_[i] + uy_[i] * wy_[i];
    }
    max_velocity_ = std::sqrt(umax2);
    fft_.forward(wx_, out);
    for (std::size_t i = 0; i < n; ++i) out[i] = -mask_[i] * out[i] + forcing_[i];
    out[0] = Complex{};
  }

  void step_once() {
    const std::size_t n = state_.size();
    const double dt = cfg_.dt;
    tendency(state_, k1_);
    if (cfg_.check_cfl && max_velocity_ > 0.0) {
      const double admissible = 0.5 * std::min(cfg_.grid.dx(), cfg_.grid.dy()) / max_velocity_;
      if (dt > admissible) throw CflError(max_velocity_, dt, admissible);
    }
    for (std::size_t i = 0; i < n; ++i) stage_[i] = decay_half_[i] * (state_[i] + 0.5 * dt * k1_[i]);
    tendency(stage_, k2_);
    for (std::size_t i = 0; i < n; ++i) stage_[i] = decay_half_[i] * state_[i] + 0.5 * dt * k2_[i];
    tendency(stage_, k3_);
    for (std::size_t i = 0; i < n; ++i) {
      stage_[i] = decay_full_[i] * state_[i] + dt * decay_half_[i] * k3_[i];
    }
    tendency(stage_, k4_);
    bool finite = true;
    for (std::size_t i = 0; i < n; ++i) {
      state_[i] = decay_full_[i] * state_[i] +
                  (dt / 6.0) * (decay_full_[i] * k1_[i] + 2.0 * decay_half_[i] * (k2_[i] + k3_[i]) + k4_[i]);
      finite = finite && std::isfinite(state_[i].real()) && std::isfinite(state_[i].imag());
    }
    state_[0] = Complex{};
    ++steps_;
    if (!finite) throw BlowupError(steps_);
  }

  SolverConfig cfg_;
  SpectralTransform fft_;
  std::vector<double> kx_, ky_, inv_k2_, mask_, decay_full_, decay_half_;
  Spectrum forcing_, state_, k1_, k2_, k3_, k4_, stage_, scratch_;
  std::vector<double> ux_, uy_, wx_, wy_;
  double max_velocity_ = 0.0;
  std::uint64_t steps_ = 0;
};

/// Advances omega by one dt.
inline VorticityField step(const VorticityField& omega, const SolverConfig& config) {
  SolverConfig cfg = config;
  cfg.grid = omega.grid();
  VorticitySolver solver(cfg);
  solver.set_state(omega);
  solver.advance(1);
  return solver.state();
}

inline VorticityField random_initial_condition(const SolverConfig& cfg) {
  const Grid& g = cfg.grid;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Field noise(g);
  for (double& v : noise.values()) v = normal(rng);
  SpectralTransform fft(g);
  Spectrum s = fft.forward(noise);
  for_each_mode(g, [&](std::size_t i, long long mx, long long my, double) {
    const double k = std::sqrt(static_cast<double>(mx * mx + my * my));
    if (k == 0.0 || !detail::in_dealiased_band(mx, my, g)) {
      s[i] = Complex{};
      return;
    }
    if (cfg.ic.spectrum == InitialSpectrum::matern) {
      const double kappa = 2.0 * std::numbers::pi * k / g.length;
      s[i] *= std::pow(kappa * kappa + cfg.ic.tau * cfg.ic.tau, -cfg.ic.alpha / 2.0);
      return;
    }
    const double r = k / cfg.ic.peak_k;
    s[i] *= r * r * std::pow(1.0 + r * r * r * r, -(2.0 + cfg.ic.decay) / 4.0);
  });
  Field omega = fft.backward(s);
  const double rms = std::sqrt(2.0 * enstrophy(omega));
  if (rms > 0.0) omega *= cfg.ic.rms / rms;
  return omega;
}

/// Integrates through the spinup, then records n_frames frames separated by
/// record_interval. Recorded values are rounded to single precision so they
/// survive the on-disk format unchanged.
inline Trajectory generate_trajectory(const SolverConfig& config, std::size_t n_frames,
                                      std::uint32_t trajectory_id = 0) {
  if (n_frames == 0) throw std::invalid_argument("n_frames must be >= 1");
  VorticitySolver solver(config);
  solver.set_state(random_initial_condition(config));
  solver.advance(config.spinup_steps());
  Trajectory traj;
  traj.config = config;
  traj.trajectory_id = trajectory_id;
  traj.frames.reserve(n_frames);
  const std::uint64_t per_frame = config.steps_per_record();
  for (std::size_t f = 0; f < n_frames; ++f) {
    if (f > 0) solver.advance(per_frame);
    Field frame = solver.state();
    for (double& v : frame.values()) v = static_cast<double>(static_cast<float>(v));
    traj.frames.push_back(std::move(frame));
  }
  return traj;
}

}  // namespace relaylab
