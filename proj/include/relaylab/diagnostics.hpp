#pragma once

// Error metrics, spectral diagnostics and bootstrap intervals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "relaylab/field.hpp"
#include "relaylab/spectral.hpp"

namespace relaylab {

/// Mean relative L2 error in percent, with per-step and per-trajectory marginals.
struct ErrorReport {
  std::vector<double> per_step;
  double mean = 0.0;
  std::vector<double> per_trajectory_means;
  /// values[n][t], percent.
  std::vector<std::vector<double>> values;
};

inline double relative_l2(const VorticityField& pred, const VorticityField& truth) {
  pred.check_same_grid(truth);
  const double denom = norm2(truth.values());
  if (!(denom > 0.0)) throw std::invalid_argument("relative_l2: truth frame has zero norm");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    s += d * d;
  }
  return std::sqrt(s) / denom;
}

/// preds[n][t] against truth[n][t]; 100/(N T) * sum |pred - truth| / |truth|.
inline ErrorReport relative_l2(std::span<const std::vector<VorticityField>> preds,
                               std::span<const std::vector<VorticityField>> truth) {
  if (preds.size() != truth.size()) throw std::invalid_argument("relative_l2: trajectory counts differ");
  if (preds.empty()) throw std::invalid_argument("relative_l2: no trajectories");
  const std::size_t T = preds.front().size();
  ErrorReport r;
  r.per_step.assign(T, 0.0);
  for (std::size_t n = 0; n < preds.size(); ++n) {
    if (preds[n].size() != T || truth[n].size() != T) {
      throw std::invalid_argument("relative_l2: trajectory " + std::to_string(n) + " has a different step count");
    }
    std::vector<double> row(T);
    for (std::size_t t = 0; t < T; ++t) {
      if (!(norm2(truth[n][t].values()) > 0.0)) {
        throw std::invalid_argument("relative_l2: zero-norm truth at (n=" + std::to_string(n) +
                                    ", t=" + std::to_string(t + 1) + ")");
      }
      row[t] = 100.0 * relative_l2(preds[n][t], truth[n][t]);
      r.per_step[t] += row[t];
    }
    r.per_trajectory_means.push_back(mean(row));
    r.values.push_back(std::move(row));
  }
  for (double& v : r.per_step) v /= static_cast<double>(preds.size());
  r.mean = mean(r.per_trajectory_means);
  return r;
}

/// <a,b>/(|a||b|), or nullopt when either norm is <= 1e-12.
inline std::optional<double> dynamics_cosine(const VorticityField& borrowed, const VorticityField& actual) {
  borrowed.check_same_grid(actual);
  const double na = norm2(borrowed.values());
  const double nb = norm2(actual.values());
  if (!(na > 1e-12) || !(nb > 1e-12)) return std::nullopt;
  return std::clamp(dot(borrowed.values(), actual.values()) / (na * nb), -1.0, 1.0);
}

/// Shell-binned profile. Shell k collects modes with round(|k|) == k for
/// k = 0..nx/2; corner modes beyond nx/2 are accumulated in `beyond`.
struct SpectrumProfile {
  std::vector<double> values;
  std::vector<bool> defined;
  double beyond = 0.0;

  [[nodiscard]] std::size_t k_max() const { return values.empty() ? 0 : values.size() - 1; }
  [[nodiscard]] std::size_t undefined_count() const {
    return static_cast<std::size_t>(std::count(defined.begin(), defined.end(), false));
  }
  [[nodiscard]] double total() const {
    double s = beyond;
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (defined[k]) s += values[k];
    }
    return s;
  }
};

/// Shells whose energy is below this fraction of the field total hold only
/// transform round-off and are treated as empty.
inline constexpr double kEmptyShellFraction = 1e-20;

inline std::size_t shell_of(long long mx, long long my) {
  return static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(mx * mx + my * my))));
}

/// Z(k) = sum over shell k of |w_hat|^2 / 2, with the transform normalised so
/// that sum_k Z(k) (plus the corner bin) equals mean(omega^2) / 2.
inline SpectrumProfile enstrophy_spectrum(const VorticityField& omega) {
  require_finite(omega, "enstrophy_spectrum");
  const Grid& g = omega.grid();
  SpectralTransform fft(g);
  const Spectrum s = fft.forward(omega);
  const std::size_t kmax = g.nx / 2;
  SpectrumProfile p{std::vector<double>(kmax + 1, 0.0), std::vector<bool>(kmax + 1, true), 0.0};
  for_each_mode(g, [&](std::size_t i, long long mx, long long my, double w) {
    const double e = 0.5 * w * std::norm(s[i]);
    const std::size_t k = shell_of(mx, my);
    if (k <= kmax) {
      p.values[k] += e;
    } else {
      p.beyond += e;
    }
  });
  return p;
}

/// Elementwise numerator/denominator; shells with an empty denominator are undefined.
inline SpectrumProfile spectrum_ratio(const SpectrumProfile& num, const SpectrumProfile& den) {
  if (num.values.size() != den.values.size()) throw std::invalid_argument("spectrum_ratio: shell counts differ");
  SpectrumProfile r{std::vector<double>(num.values.size(), 0.0), std::vector<bool>(num.values.size(), false), 0.0};
  const double floor = kEmptyShellFraction * den.total();
  for (std::size_t k = 0; k < num.values.size(); ++k) {
    if (num.defined[k] && den.defined[k] && den.values[k] > floor) {
      r.values[k] = num.values[k] / den.values[k];
      r.defined[k] = true;
    } else {
      r.values[k] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  r.beyond = den.beyond > floor ? num.beyond / den.beyond : std::numeric_limits<double>::quiet_NaN();
  return r;
}

/// Per shell: |P(k-shell) - T(k-shell)| / |T(k-shell)| over the complex mode
/// coefficients of the shell. Shells where truth has no energy are undefined.
inline SpectrumProfile spectral_relative_error(const VorticityField& pred, const VorticityField& truth) {
  pred.check_same_grid(truth);
  require_finite(pred, "spectral_relative_error");
  require_finite(truth, "spectral_relative_error");
  const Grid& g = truth.grid();
  SpectralTransform fft(g);
  const Spectrum sp = fft.forward(pred);
  const Spectrum st = fft.forward(truth);
  const std::size_t kmax = g.nx / 2;
  std::vector<double> num(kmax + 1, 0.0);
  std::vector<double> den(kmax + 1, 0.0);
  for_each_mode(g, [&](std::size_t i, long long mx, long long my, double w) {
    const std::size_t k = shell_of(mx, my);
    if (k > kmax) return;
    num[k] += w * std::norm(sp[i] - st[i]);
    den[k] += w * std::norm(st[i]);
  });
  SpectrumProfile r{std::vector<double>(kmax + 1, 0.0), std::vector<bool>(kmax + 1, false), 0.0};
  double total = 0.0;
  for (double d : den) total += d;
  for (std::size_t k = 0; k <= kmax; ++k) {
    if (den[k] > kEmptyShellFraction * total) {
      r.values[k] = std::sqrt(num[k] / den[k]);
      r.defined[k] = true;
    } else {
      r.values[k] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return r;
}

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
};

namespace detail {

// Linear interpolation between order statistics (Hyndman-Fan type 7).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

/// Percentile bootstrap interval for the mean of `values`.
inline ConfidenceInterval bootstrap_ci(std::span<const double> values, std::size_t n_boot, double level,
                                       std::uint64_t seed) {
  if (values.empty()) throw std::invalid_argument("bootstrap_ci: no values");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap_ci: level must lie in (0, 1)");
  if (n_boot == 0) throw std::invalid_argument("bootstrap_ci: n_boot must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(n_boot);
  for (double& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[pick(rng)];
    m = s / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  return {detail::quantile_sorted(means, 0.5 * (1.0 - level)), detail::quantile_sorted(means, 0.5 * (1.0 + level))};
}

}  // namespace relaylab
