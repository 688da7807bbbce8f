#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "relaylab/diagnostics.hpp"
#include "relaylab/solver.hpp"

using namespace relaylab;

namespace {

Grid two_pi_grid(std::size_t n = 64) { return Grid{n, n, 2.0 * std::numbers::pi}; }

double max_abs_diff(const Field& a, const Field& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double rel_diff(const Field& a, const Field& b) { return norm2((a - b).values()) / norm2(b.values()); }

// Band-limited random zero-mean field, built from a few explicit Fourier modes.
Field smooth_random_field(const Grid& g, std::uint64_t seed, int kmax = 6) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double base = 2.0 * std::numbers::pi / g.length;
  struct Mode { int kx, ky; double amp, ph; };
  std::vector<Mode> modes;
  for (int kx = 0; kx <= kmax; ++kx) {
    for (int ky = -kmax; ky <= kmax; ++ky) {
      if (kx == 0 && ky <= 0) continue;
      modes.push_back({kx, ky, n(rng) / (1.0 + kx * kx + ky * ky), phase(rng)});
    }
  }
  return Field::from_function(g, [&](double x, double y) {
    double v = 0.0;
    for (const Mode& m : modes) v += m.amp * std::cos(base * (m.kx * x + m.ky * y) + m.ph);
    return v;
  });
}

Field spectral_laplacian(const Field& f) {
  const Grid& g = f.grid();
  SpectralTransform fft(g);
  Spectrum s = fft.forward(f);
  const double base = 2.0 * std::numbers::pi / g.length;
  for_each_mode(g, [&](std::size_t i, long long mx, long long my, double) {
    s[i] *= -base * base * static_cast<double>(mx * mx + my * my);
  });
  return fft.backward(s);
}

SolverConfig unforced(double nu, double dt) {
  SolverConfig c;
  c.grid = two_pi_grid();
  c.nu = nu;
  c.dt = dt;
  c.forcing_amplitude = 0.0;
  c.record_interval = dt;
  return c;
}

}  // namespace

TEST(PoissonSolve, SineIsItsOwnStreamFunction) {
  const Grid g = two_pi_grid();
  const Field omega = Field::from_function(g, [](double x, double) { return std::sin(x); });
  EXPECT_LT(max_abs_diff(poisson_solve(omega), omega), 1e-13);
}

TEST(PoissonSolve, ZeroGivesZero) {
  const Field psi = poisson_solve(Field(two_pi_grid()));
  for (double v : psi.values()) EXPECT_EQ(v, 0.0);
}

TEST(PoissonSolve, CosTwoY) {
  const Grid g = two_pi_grid();
  const Field omega = Field::from_function(g, [](double, double y) { return std::cos(2 * y); });
  const Field expected = Field::from_function(g, [](double, double y) { return std::cos(2 * y) / 4.0; });
  EXPECT_LT(max_abs_diff(poisson_solve(omega), expected), 1e-13);
}

TEST(PoissonSolve, ProjectsOutTheMean) {
  const Grid g = two_pi_grid();
  const Field omega = Field::from_function(g, [](double x, double) { return 3.0 + std::sin(x); });
  const Field psi = poisson_solve(omega);
  EXPECT_NEAR(mean(psi.values()), 0.0, 1e-14);
  EXPECT_LT(max_abs_diff(psi, Field::from_function(g, [](double x, double) { return std::sin(x); })), 1e-13);
}

TEST(PoissonSolve, RejectsNonFiniteWithLocation) {
  Field omega(two_pi_grid());
  omega(3, 5) = std::nan("");
  try {
    (void)poisson_solve(omega);
    FAIL() << "expected a throw";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("ix=3, iy=5"), std::string::npos) << e.what();
  }
}

TEST(PoissonSolve, InverseOfLaplacianOnRandomFields) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (double length : {2.0 * std::numbers::pi, 1.0}) {
      const Grid g{64, 64, length};
      const Field omega = smooth_random_field(g, seed, 12);
      const Field lap = spectral_laplacian(poisson_solve(omega));
      EXPECT_LT(rel_diff(-1.0 * lap, omega), 1e-10);
    }
  }
}

TEST(VelocityFromStream, SineX) {
  const Grid g = two_pi_grid();
  const Velocity u = velocity_from_stream(Field::from_function(g, [](double x, double) { return std::sin(x); }));
  EXPECT_LT(max_abs_diff(u.ux, Field(g)), 1e-13);
  EXPECT_LT(max_abs_diff(u.uy, Field::from_function(g, [](double x, double) { return -std::cos(x); })), 1e-13);
}

TEST(VelocityFromStream, ConstantGivesRest) {
  const Grid g = two_pi_grid();
  Field psi(g);
  for (double& v : psi.values()) v = 2.5;
  const Velocity u = velocity_from_stream(psi);
  EXPECT_LT(max_abs_diff(u.ux, Field(g)), 1e-13);
  EXPECT_LT(max_abs_diff(u.uy, Field(g)), 1e-13);
}

TEST(VelocityFromStream, SineY) {
  const Grid g = two_pi_grid();
  const Velocity u = velocity_from_stream(Field::from_function(g, [](double, double y) { return std::sin(y); }));
  EXPECT_LT(max_abs_diff(u.ux, Field::from_function(g, [](double, double y) { return std::cos(y); })), 1e-13);
  EXPECT_LT(max_abs_diff(u.uy, Field(g)), 1e-13);
}

TEST(VelocityFromStream, SpectralDivergenceVanishes) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const Grid g = two_pi_grid();
    const Velocity u = velocity_from_stream(smooth_random_field(g, seed, 20));
    SpectralTransform fft(g);
    const Spectrum sx = fft.forward(u.ux);
    const Spectrum sy = fft.forward(u.uy);
    Spectrum div(g);
    for_each_mode(g, [&](std::size_t i, long long mx, long long my, double) {
      div[i] = Complex(0, static_cast<double>(mx)) * sx[i] + Complex(0, static_cast<double>(my)) * sy[i];
    });
    const Field d = fft.backward(div);
    const double unorm = std::sqrt(dot(u.ux.values(), u.ux.values()) + dot(u.uy.values(), u.uy.values()));
    EXPECT_LT(norm2(d.values()), 1e-10 * unorm);
  }
}

TEST(SpectralTransform, RoundTripIsIdentity) {
  const Grid g = two_pi_grid();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Field f(g);
  for (double& v : f.values()) v = n(rng);
  SpectralTransform fft(g);
  EXPECT_LT(rel_diff(fft.backward(fft.forward(f)), f), 1e-14);
}

TEST(Advect, ConstantVorticityGivesZero) {
  const Grid g = two_pi_grid();
  Field omega(g);
  for (double& v : omega.values()) v = 1.7;
  const Velocity u = velocity_from_stream(smooth_random_field(g, 4));
  EXPECT_LT(max_abs_diff(advect(omega, u), Field(g)), 1e-12);
}

TEST(Advect, VelocityOrthogonalToGradient) {
  const Grid g = two_pi_grid();
  const Field omega = Field::from_function(g, [](double x, double) { return std::sin(x); });
  const Velocity u = velocity_from_stream(poisson_solve(omega));
  EXPECT_LT(max_abs_diff(advect(omega, u), Field(g)), 1e-13);
}

TEST(Advect, MatchesFiniteDifferencesOnRefinedGrid) {
  // omega = sin x + cos 2y, psi = sin x + cos(2y)/4, evaluated by centred
  // differences on a 512^2 grid and sampled at the 64^2 points.
  const Grid g = two_pi_grid();
  const auto omega_fn = [](double x, double y) { return std::sin(x) + std::cos(2 * y); };
  const auto psi_fn = [](double x, double y) { return std::sin(x) + std::cos(2 * y) / 4.0; };
  const double h = 2.0 * std::numbers::pi / 512.0;
  const Field oracle = Field::from_function(g, [&](double x, double y) {
    const double ux = (psi_fn(x, y + h) - psi_fn(x, y - h)) / (2 * h);
    const double uy = -(psi_fn(x + h, y) - psi_fn(x - h, y)) / (2 * h);
    const double wx = (omega_fn(x + h, y) - omega_fn(x - h, y)) / (2 * h);
    const double wy = (omega_fn(x, y + h) - omega_fn(x, y - h)) / (2 * h);
    return ux * wx + uy * wy;
  });
  const Field omega = Field::from_function(g, omega_fn);
  const Field got = advect(omega, velocity_from_stream(poisson_solve(omega)));
  EXPECT_LT(rel_diff(got, oracle), 1e-3);
}

TEST(ForcingField, KolmogorovProfile) {
  const Grid g = two_pi_grid();
  const Field f = forcing_field(g, 4, 0.1);
  for (std::size_t ix = 0; ix < g.nx; ++ix) EXPECT_DOUBLE_EQ(f(ix, 0), 0.1);
  EXPECT_NEAR(f(5, 7), 0.1 * std::cos(4 * 7 * g.dy()), 1e-15);
  const SpectrumProfile z = enstrophy_spectrum(f);
  for (std::size_t k = 0; k <= z.k_max(); ++k) {
    if (k == 4) {
      EXPECT_NEAR(z.values[k], 0.25 * 0.01, 1e-15);
    } else {
      EXPECT_LT(z.values[k], 1e-30) << "shell " << k;
    }
  }
}

TEST(ForcingField, DiagonalProfile) {
  const Grid g{64, 64, 1.0};
  const Field f = forcing_field(g, 1, 0.1, ForcingShape::diagonal);
  EXPECT_NEAR(f(0, 0), 0.1, 1e-15);
  const double s = 2.0 * std::numbers::pi * (3 * g.dx() + 10 * g.dy());
  EXPECT_NEAR(f(3, 10), 0.1 * (std::sin(s) + std::cos(s)), 1e-15);
  // sin + cos = sqrt(2) sin(. + pi/4): enstrophy 0.5 * (0.1 sqrt 2)^2 / 2.
  const SpectrumProfile z = enstrophy_spectrum(f);
  for (std::size_t k = 0; k <= z.k_max(); ++k) {
    if (k == shell_of(1, 1)) {
      EXPECT_NEAR(z.values[k], 0.005, 1e-15);
    } else {
      EXPECT_LT(z.values[k], 1e-30) << "shell " << k;
    }
  }
}

TEST(ForcingField, ZeroAmplitude) {
  const Field f = forcing_field(two_pi_grid(), 4, 0.0);
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(ForcingField, RejectsWavenumberOutsideBand) {
  EXPECT_THROW((void)forcing_field(two_pi_grid(), 0, 0.1), std::invalid_argument);
  EXPECT_THROW((void)forcing_field(two_pi_grid(), 22, 0.1), std::invalid_argument);
  EXPECT_NO_THROW((void)forcing_field(two_pi_grid(), 21, 0.1));
}

TEST(Step, SingleModeViscousDecay) {
  SolverConfig c = unforced(0.1, 0.01);
  VorticitySolver solver(c);
  const Field omega0 = Field::from_function(c.grid, [](double x, double) { return std::cos(x); });
  solver.set_state(omega0);
  solver.advance(100);
  const Field expected = std::exp(-0.1) * omega0;
  EXPECT_LT(rel_diff(solver.state(), expected), 1e-6);
}

TEST(Step, SingleModeDecayHoldsForHigherWavenumbers) {
  SolverConfig c = unforced(0.05, 0.02);
  VorticitySolver solver(c);
  const Field omega0 = Field::from_function(c.grid, [](double, double y) { return std::sin(3 * y); });
  solver.set_state(omega0);
  solver.advance(50);
  EXPECT_LT(rel_diff(solver.state(), std::exp(-0.05 * 9.0) * omega0), 1e-6);
}

TEST(Step, InviscidOneStepConservesInvariants) {
  SolverConfig c = unforced(0.0, 1e-3);
  const Field omega0 = smooth_random_field(c.grid, 21);
  const Field omega1 = step(omega0, c);
  EXPECT_NEAR(kinetic_energy(omega1) / kinetic_energy(omega0), 1.0, 1e-6);
  EXPECT_NEAR(enstrophy(omega1) / enstrophy(omega0), 1.0, 1e-6);
  EXPECT_GT(rel_diff(omega1, omega0), 0.0);
}

TEST(Step, InviscidHundredStepDrift) {
  SolverConfig c = unforced(0.0, 1e-3);
  const Field omega0 = smooth_random_field(c.grid, 22);
  VorticitySolver solver(c);
  solver.set_state(omega0);
  solver.advance(100);
  const Field omega = solver.state();
  EXPECT_LT(std::abs(kinetic_energy(omega) / kinetic_energy(omega0) - 1.0), 1e-5);
  EXPECT_LT(std::abs(enstrophy(omega) / enstrophy(omega0) - 1.0), 1e-5);
}

TEST(Step, ForcedResponseFromRest) {
  SolverConfig c;
  c.grid = two_pi_grid();
  c.nu = 1e-3;
  c.dt = 0.01;
  c.record_interval = 0.01;
  c.forcing_amplitude = 0.1;
  const Field omega = step(Field(c.grid), c);
  const SpectrumProfile z = enstrophy_spectrum(omega);
  for (std::size_t k = 0; k <= z.k_max(); ++k) {
    if (k != 4) { EXPECT_LT(z.values[k], 1e-30) << "shell " << k; }
  }
  // Linear response: A (1 - exp(-nu k^2 dt)) / (nu k^2) cos(4y).
  const double lam = c.nu * 16.0;
  const double amp = 0.1 * (1.0 - std::exp(-lam * c.dt)) / lam;
  EXPECT_NEAR(omega(0, 0), amp, 1e-12);
  EXPECT_NEAR(mean(omega.values()), 0.0, 1e-15);
}

TEST(Step, CflViolationReportsAdmissibleStep) {
  SolverConfig c = unforced(1e-3, 0.5);
  const Field omega = Field::from_function(c.grid, [](double x, double) { return 10.0 * std::sin(x); });
  try {
    (void)step(omega, c);
    FAIL() << "expected CflError";
  } catch (const CflError& e) {
    EXPECT_NEAR(e.max_velocity, 10.0, 1e-9);
    EXPECT_NEAR(e.admissible_dt, 0.5 * c.grid.dx() / 10.0, 1e-12);
    EXPECT_EQ(e.dt, 0.5);
  }
}

TEST(Step, BlowupNamesTheStep) {
  SolverConfig c = unforced(0.0, 5.0);
  c.check_cfl = false;
  VorticitySolver solver(c);
  solver.set_state(1e3 * smooth_random_field(c.grid, 5, 10));
  try {
    for (int i = 0; i < 2000; ++i) solver.advance(1);
    FAIL() << "expected BlowupError";
  } catch (const BlowupError& e) {
    EXPECT_GE(e.step, 1u);
    EXPECT_EQ(e.step, solver.steps_taken());
  }
}

TEST(Step, ZeroMeanIsPreserved) {
  SolverConfig c;
  c.grid = two_pi_grid();
  c.dt = 0.01;
  c.record_interval = 0.01;
  VorticitySolver solver(c);
  solver.set_state(smooth_random_field(c.grid, 8));
  solver.advance(20);
  EXPECT_NEAR(mean(solver.state().values()), 0.0, 1e-14);
}

TEST(SolverConfig, RecordIntervalMustLandOnSteps) {
  SolverConfig c;
  c.dt = 0.3;
  c.record_interval = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.dt = 0.25;
  EXPECT_NO_THROW(c.validate());
}

namespace {

SolverConfig quick_trajectory_config(std::uint64_t seed) {
  SolverConfig c;
  c.nu = 1e-3;
  c.dt = 0.025;
  c.spinup_time = 2.0;
  c.forcing_amplitude = 0.1;
  c.ic.rms = 1.0;
  c.ic.peak_k = 2.0;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(GenerateTrajectory, BitIdenticalReruns) {
  const SolverConfig c = quick_trajectory_config(7);
  const Trajectory a = generate_trajectory(c, 50, 3);
  const Trajectory b = generate_trajectory(c, 50, 3);
  ASSERT_EQ(a.frames.size(), 50u);
  EXPECT_EQ(a.trajectory_id, 3u);
  for (std::size_t f = 0; f < a.frames.size(); ++f) EXPECT_TRUE(a.frames[f] == b.frames[f]) << "frame " << f;
}

TEST(GenerateTrajectory, DistinctSeedsGiveDistinctInitialFrames) {
  const Trajectory a = generate_trajectory(quick_trajectory_config(7), 1);
  const Trajectory b = generate_trajectory(quick_trajectory_config(8), 1);
  EXPECT_FALSE(a.frames[0] == b.frames[0]);
  EXPECT_GT(rel_diff(a.frames[0], b.frames[0]), 0.1);
}

TEST(GenerateTrajectory, FramesAreSinglePrecisionRepresentable) {
  const Trajectory t = generate_trajectory(quick_trajectory_config(9), 3);
  for (const Field& f : t.frames) {
    for (double v : f.values()) ASSERT_EQ(v, static_cast<double>(static_cast<float>(v)));
  }
}

TEST(GenerateTrajectory, RejectsZeroFrames) {
  EXPECT_THROW((void)generate_trajectory(quick_trajectory_config(1), 0), std::invalid_argument);
}

TEST(RandomInitialCondition, ZeroMeanBandLimitedWithRequestedRms) {
  SolverConfig c = quick_trajectory_config(11);
  c.ic.rms = 2.0;
  const Field w = random_initial_condition(c);
  EXPECT_NEAR(std::sqrt(2.0 * enstrophy(w)), 2.0, 1e-12);
  EXPECT_NEAR(mean(w.values()), 0.0, 1e-13);
  const SpectrumProfile z = enstrophy_spectrum(w);
  for (std::size_t k = 31; k <= z.k_max(); ++k) EXPECT_LT(z.values[k], 1e-25);
}

TEST(RandomInitialCondition, MaternEnvelopeShapesShellEnergy) {
  SolverConfig c;
  c.grid = Grid{64, 64, 1.0};
  c.ic.spectrum = InitialSpectrum::matern;
  c.ic.rms = 1.0;
  // Expected shell energy ratio from the per-mode power (|kappa|^2 + tau^2)^-alpha.
  const auto expected_power = [&](std::size_t shell) {
    double p = 0.0;
    for (long long mx = -31; mx <= 31; ++mx) {
      for (long long my = -31; my <= 31; ++my) {
        if (shell_of(mx, my) != shell) continue;
        const double kappa = 2.0 * std::numbers::pi * std::sqrt(static_cast<double>(mx * mx + my * my));
        p += std::pow(kappa * kappa + 49.0, -2.5);
      }
    }
    return p;
  };
  double low = 0.0;
  double high = 0.0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    c.seed = seed;
    const Field w = random_initial_condition(c);
    EXPECT_NEAR(std::sqrt(2.0 * enstrophy(w)), 1.0, 1e-12);
    const SpectrumProfile z = enstrophy_spectrum(w);
    low += z.values[2];
    high += z.values[8];
  }
  const double ratio = low / high;
  const double expected = expected_power(2) / expected_power(8);
  EXPECT_NEAR(ratio / expected, 1.0, 0.2) << ratio << " vs " << expected;
}

TEST(GenerateTrajectory, ForcedFlowIsStatisticallyStationaryAfterLongSpinup) {
  // Diagonal forcing on the unit box at nu = 1e-3, coarse grid for speed.
  SolverConfig c;
  c.grid = Grid{32, 32, 1.0};
  c.nu = 1e-3;
  c.dt = 0.02;
  c.k_f = 1;
  c.forcing_shape = ForcingShape::diagonal;
  c.forcing_amplitude = 0.1;
  c.ic.spectrum = InitialSpectrum::matern;
  c.ic.rms = 0.27;
  c.spinup_time = 60.0;
  c.seed = 5;
  const Trajectory t = generate_trajectory(c, 30);
  std::vector<double> z;
  for (const Field& f : t.frames) z.push_back(enstrophy(f));
  const double m = mean(z);
  for (std::size_t i = 0; i < z.size(); ++i) {
    EXPECT_LE(std::abs(z[i] - m), 0.5 * m) << "frame " << i << " enstrophy " << z[i] << " mean " << m;
  }
}
