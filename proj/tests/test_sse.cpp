#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <random>

#include "qtraj/noise.hpp"
#include "qtraj/params.hpp"
#include "qtraj/sse.hpp"
#include "qtraj/wavefunction.hpp"

using namespace qtraj;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;

namespace {

SystemParams fig1_params() {
  // spin-1/2, dz = 22 z_g, c = 200 E_g / (J hbar), k = omega / 20 z_g^2
  return build_params(1.0, 1.0, 22.0, 0.5, 100.0 / 242.0, 0.1);
}

WaveFunction oscillator_state(double z0, const SystemParams& p, int n = 512) {
  const GridSpec grid = make_grid(n, z0, p.z_g);
  return product_state(grid, z0, 0.0, M_PI / 2, 0.0, p);
}

}  // namespace

TEST_CASE("kinetic Cayley half step") {
  SystemParams p = build_params(1, 1, 22, 0.5, 0.0, 0.0);
  p.c = 0.0;
  p.refresh();
  FftEngine fft;
  SUBCASE("norm is preserved to machine precision") {
    const GridSpec grid = make_grid(512, 0.0, p.z_g);
    WaveFunction psi = product_state(grid, 0.0, 0.7, M_PI / 2, 0.0, p);
    const double n0 = psi.norm();
    kinetic_half_step(psi, 1e-3, p, fft);
    CHECK(std::abs(psi.norm() - n0) < 1e-14);
  }
  SUBCASE("dt = 0 is the identity") {
    const GridSpec grid = make_grid(256, 0.0, p.z_g);
    WaveFunction psi = product_state(grid, 0.0, 0.0, M_PI / 2, 0.0, p);
    const MatrixXcd before = psi.amp;
    kinetic_half_step(psi, 0.0, p, fft);
    CHECK((psi.amp - before).norm() == 0.0);
  }
  SUBCASE("free Gaussian spreading over one period") {
    // V is never applied: two half steps per dt give exact free evolution
    // up to the Cayley phase error. Czz(t) = Czz0 + t^2 hbar^2/(4 m^2 Czz0).
    const GridSpec grid = make_grid(2048, 0.0, 5.0, 10.0);
    WaveFunction psi;
    psi.grid = grid;
    psi.amp = motional_coherent(grid, 0.0, 0.0, p);
    const double dt = 1e-3;
    const double tmax = 2.0 * M_PI;
    const long nsteps = std::lround(tmax / dt);
    for (long i = 0; i < nsteps; ++i) {
      kinetic_half_step(psi, dt, p, fft);
      kinetic_half_step(psi, dt, p, fft);
    }
    const Moments mo = expectations(psi, p);
    const double czz0 = p.z_g * p.z_g;
    const double want = czz0 + tmax * tmax / (4.0 * czz0);
    CHECK(std::abs(mo.cov(0, 0) - want) / want < 1e-4);
  }
}

TEST_CASE("potential Cayley step") {
  FftEngine fft;
  SUBCASE("c = 0 reduces to pointwise phases (norm per site preserved)") {
    SystemParams p = build_params(1, 1, 22, 0.5, 0.4, 0.0);
    p.c = 0.0;
    p.refresh();
    const GridSpec grid = make_grid(256, 0.0, p.z_g);
    WaveFunction psi = product_state(grid, 0.0, 0.0, M_PI / 3, 0.4, p);
    const Eigen::MatrixXd mags = psi.amp.cwiseAbs();
    potential_cayley_step(psi, 1e-2, p);
    CHECK((psi.amp.cwiseAbs() - mags).norm() < 1e-12);
  }
  SUBCASE("norm preserved for J = 200 with random amplitudes") {
    const SystemParams p = build_params(1, 1, 45, 200, 0.4, 0.0);
    WaveFunction psi;
    psi.grid = make_grid(512, 0.0, p.z_g, 20.0);
    std::mt19937_64 rng(5);
    auto unif = [&]() { return 2.0 * ((rng() >> 11) * 0x1.0p-53) - 1.0; };
    psi.amp.resize(512, p.spin_dim());
    for (int i = 0; i < psi.amp.rows(); ++i)
      for (int m = 0; m < psi.amp.cols(); ++m)
        psi.amp(i, m) = Complex(unif(), unif());
    psi.normalize();
    potential_cayley_step(psi, 1e-3, p);
    CHECK(std::abs(psi.norm() - 1.0) < 1e-12);
  }
  SUBCASE("spin-1/2 at fixed z matches the dense 2x2 Cayley matrix") {
    const SystemParams p = fig1_params();
    const double z = 1.7;
    // One-point grid: the step acts on the spinor alone.
    WaveFunction psi;
    psi.grid.n = 1;
    psi.grid.spacing = 1.0;
    psi.grid.center = z;
    psi.amp.resize(1, 2);
    psi.amp << Complex(0.6, 0.1), Complex(0.2, -0.77);
    const double dt = 1e-2;
    Eigen::Matrix2cd v;
    v << 0.5 * p.m * p.omega * p.omega * z * z + p.b * z * 0.5, 0.5 * p.c,
        0.5 * p.c, 0.5 * p.m * p.omega * p.omega * z * z - p.b * z * 0.5;
    const Eigen::Matrix2cd ident = Eigen::Matrix2cd::Identity();
    const Eigen::Matrix2cd cayley =
        (ident + Complex(0, dt / 2) * v).inverse() *
        (ident - Complex(0, dt / 2) * v);
    const Eigen::Vector2cd want = cayley * psi.amp.row(0).transpose();
    potential_cayley_step(psi, dt, p);
    CHECK((psi.amp.row(0).transpose() - want).norm() < 1e-14);
  }
}

TEST_CASE("measurement step") {
  FftEngine fft;
  SUBCASE("k = 0 is the identity and rejects nonzero dW") {
    SystemParams p = fig1_params();
    p.k = 0.0;
    const GridSpec grid = make_grid(256, 0.0, p.z_g);
    WaveFunction psi = product_state(grid, 0.0, 0.0, M_PI / 2, 0.0, p);
    const MatrixXcd before = psi.amp;
    const double rec = measurement_step(psi, 0.0, 1e-3, p);
    CHECK(std::isnan(rec));
    CHECK((psi.amp - before).norm() < 1e-12);
    CHECK_THROWS_AS(measurement_step(psi, 1e-2, 1e-3, p),
                    std::invalid_argument);
  }
  SUBCASE("narrow state: <z> unchanged") {
    const SystemParams p = fig1_params();
    WaveFunction psi;
    psi.grid = make_grid(256, 0.0, p.z_g);
    psi.amp = MatrixXcd::Zero(256, 2);
    const int i0 = 137;
    psi.amp(i0, 0) = 1.0;  // delta-narrow at z(i0)
    psi.normalize();
    const double z_before = psi.mean_z();
    measurement_step(psi, 0.02, 1e-3, p);
    CHECK(psi.mean_z() == doctest::Approx(z_before).epsilon(1e-12));
  }
  SUBCASE("Gaussian state: Czz increment matches the Riccati drift") {
    const SystemParams p = fig1_params();
    const GridSpec grid = make_grid(1024, 0.0, p.z_g);
    WaveFunction psi = product_state(grid, 0.0, 0.0, M_PI / 2, 0.0, p);
    const double dt = 1e-4;
    const Moments before = expectations(psi, p, fft);
    NoiseStream noise(3);
    measurement_step(psi, noise.next(dt).dw, dt, p);
    const Moments after = expectations(psi, p, fft);
    const double got = after.cov(0, 0) - before.cov(0, 0);
    const double want = -8.0 * p.k * before.cov(0, 0) * before.cov(0, 0) * dt;
    CHECK(got == doctest::Approx(want).epsilon(0.01));
  }
}

TEST_CASE("full split step") {
  FftEngine fft;
  SUBCASE("k = 0 coherent oscillator follows z0 cos(wt) for 10 periods") {
    SystemParams p = build_params(1, 1, 22, 0.5, 0.1, 0.0);
    p.b = 0.0;
    p.c = 0.0;
    p.refresh();
    const double z0 = 3.0 * p.z_g;
    WaveFunction psi = oscillator_state(z0, p, 1024);
    NoiseStream noise(1);
    SseOptions opt;
    opt.sample_every = 500;
    opt.regrid_every = 25;
    const SseTrajectory traj =
        propagate_sse(psi, noise, 20.0 * M_PI, 1e-3, p, fft, opt);
    double worst = 0.0;
    for (const auto& row : traj.rows)
      worst = std::max(worst, std::abs(row.mean(0) - z0 * std::cos(row.tau)));
    CHECK(worst < 1e-4 * z0);
    CHECK(traj.max_norm_defect < 1e-12);
  }
  SUBCASE("k = 0, b = 0: spin precesses about x at rate c") {
    SystemParams p = build_params(1, 1, 10, 5.0, 0.1, 0.0);
    p.b = 0.0;
    p.c = 0.3;
    p.refresh();
    const GridSpec grid = make_grid(256, 0.0, p.z_g);
    WaveFunction psi = product_state(grid, 0.0, 0.0, 0.0, 0.0, p);
    NoiseStream noise(1);
    SseOptions opt;
    opt.sample_every = 400;
    opt.regrid_every = 0;
    const SseTrajectory traj =
        propagate_sse(psi, noise, 20.0 * M_PI, 1e-3, p, fft, opt);
    const double jmag = p.j * p.hbar;
    double worst = 0.0;
    for (const auto& row : traj.rows) {
      worst = std::max(
          worst, std::abs(row.mean(4) - jmag * std::cos(p.c * row.tau)));
      worst = std::max(
          worst, std::abs(row.mean(3) + jmag * std::sin(p.c * row.tau)));
    }
    CHECK(worst < 2e-5 * jmag);
  }
  SUBCASE("Strang splitting is second order on the coherent oscillator") {
    SystemParams p = build_params(1, 1, 22, 0.5, 0.1, 0.0);
    p.b = 0.0;
    p.c = 0.0;
    p.refresh();
    const double z0 = 3.0 * p.z_g;
    // End time away from an integer period so the leading frequency error
    // is visible in <z>.
    const double tmax = 13.0;
    auto end_error = [&](double dt) {
      // grid centered on the trap: the packet swings to -z0 as well
      const GridSpec grid = make_grid(1024, 0.0, p.z_g, 14.0);
      WaveFunction psi = product_state(grid, z0, 0.0, M_PI / 2, 0.0, p);
      FftEngine eng;
      const long n = std::lround(tmax / dt);
      for (long i = 0; i < n; ++i) sse_step(psi, 0.0, dt, p, eng);
      const Moments mo = expectations(psi, p, eng);
      return std::abs(mo.mean(0) - z0 * std::cos(tmax));
    };
    const double e1 = end_error(2e-3);
    const double e2 = end_error(1e-3);
    CHECK(e1 / e2 >= 3.5);
  }
  SUBCASE("record consistency: y - <z> has variance 1/(8 k dt)") {
    const SystemParams p = fig1_params();
    const double dt = 1e-3;
    WaveFunction psi = oscillator_state(0.0, p, 512);
    NoiseStream noise(17);
    FftEngine eng;
    const int m = 4000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < m; ++i) {
      const double zpre = psi.mean_z();
      const double dw = noise.next(dt).dw;
      const SseStepResult r = sse_step(psi, dw, dt, p, eng);
      const double resid = r.record - zpre;
      sum += resid;
      sum2 += resid * resid;
    }
    const double var = (sum2 - sum * sum / m) / (m - 1);
    const double want = 1.0 / (8.0 * p.k * dt);
    const double band = 5.0 * want * std::sqrt(2.0 / (m - 1));
    CHECK(std::abs(var - want) < band);
  }
}

TEST_CASE("regrid") {
  const SystemParams p = fig1_params();
  SUBCASE("centered state is a no-op") {
    WaveFunction psi = oscillator_state(0.0, p);
    const MatrixXcd before = psi.amp;
    regrid(psi);
    CHECK((psi.amp - before).norm() == 0.0);
    CHECK(psi.grid.center == 0.0);
  }
  SUBCASE("displaced packet is shifted back by whole grid points") {
    const GridSpec grid = make_grid(512, 0.0, p.z_g);
    const double z0 = 7.0 * grid.spacing;  // exactly 7 points off center
    WaveFunction psi = product_state(grid, z0, 0.0, M_PI / 2, 0.0, p);
    const MatrixXcd before = psi.amp;
    const double n0 = psi.norm();
    regrid(psi);
    CHECK(psi.grid.center == doctest::Approx(z0).epsilon(1e-12));
    CHECK(std::abs(psi.norm() - n0) < 1e-10);
    CHECK(std::abs(psi.mean_z() - z0) < 1e-10);
    // amplitude content is the original moved down by 7 indices
    double worst = 0.0;
    for (int i = 0; i + 7 < grid.n; ++i)
      worst = std::max(worst, (psi.amp.row(i) - before.row(i + 7)).norm());
    CHECK(worst == 0.0);
  }
  SUBCASE("delocalized state is rejected") {
    WaveFunction psi = oscillator_state(0.0, p, 256);
    // put half the mass at the edge
    psi.amp(1, 0) = psi.amp.cwiseAbs().maxCoeff() * 40.0;
    psi.normalize();
    CHECK_THROWS_AS(regrid(psi), std::runtime_error);
  }
}

TEST_CASE("displacement and rotation") {
  const SystemParams p = build_params(1, 1, 45, 200, 0.4, 0.125);
  FftEngine fft;
  SUBCASE("zero arguments are the identity") {
    const GridSpec grid = make_grid(256, 0.0, p.z_g);
    WaveFunction psi = product_state(grid, 0.0, 0.0, M_PI, 0.0, p);
    const MatrixXcd before = psi.amp;
    displace_rotate(psi, 0.0, 0.0, Eigen::Vector3d::UnitY(), 0.0, p, fft);
    CHECK((psi.amp - before).norm() == 0.0);
  }
  SUBCASE("fractional displacement moves the mean, keeps Czz") {
    const GridSpec grid = make_grid(512, 0.0, p.z_g);
    WaveFunction psi = product_state(grid, 0.0, 0.3, M_PI, 0.0, p);
    const Moments before = expectations(psi, p, fft);
    const double dz = 0.37 * psi.grid.spacing;  // not a grid multiple
    const double dp = 0.21;
    displace_rotate(psi, dz, dp, Eigen::Vector3d::UnitY(), 0.0, p, fft);
    const Moments after = expectations(psi, p, fft);
    CHECK(after.mean(0) - before.mean(0) == doctest::Approx(dz).epsilon(1e-8));
    CHECK(after.mean(1) - before.mean(1) == doctest::Approx(dp).epsilon(1e-8));
    CHECK(std::abs(after.cov(0, 0) - before.cov(0, 0)) <
          1e-10 * before.cov(0, 0));
  }
  SUBCASE("small spin rotation about y rotates <J>") {
    const GridSpec grid = make_grid(128, 0.0, p.z_g);
    WaveFunction psi = product_state(grid, 0.0, 0.0, M_PI / 2, 0.0, p);
    const Moments before = expectations(psi, p, fft);
    const double dth = 1e-2;
    displace_rotate(psi, 0.0, 0.0, Eigen::Vector3d::UnitY(), dth, p, fft);
    const Moments after = expectations(psi, p, fft);
    Eigen::Vector3d jb = before.mean.tail<3>();
    Eigen::Vector3d ja = after.mean.tail<3>();
    // Heisenberg picture: U+ J U rotates expectation values by +dtheta.
    const Eigen::Vector3d want =
        Eigen::AngleAxisd(dth, Eigen::Vector3d::UnitY()) * jb;
    CHECK((ja - want).norm() < 1e-9 * jb.norm());
    // spin covariance spectrum unchanged to O(dtheta^2)
    Eigen::Vector3d evb =
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(
            before.cov.block<3, 3>(2, 2))
            .eigenvalues();
    Eigen::Vector3d eva =
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(
            after.cov.block<3, 3>(2, 2))
            .eigenvalues();
    CHECK((eva - evb).norm() < 10.0 * dth * dth * p.j);
  }
}

TEST_CASE("spin-1/2 collapse onto an adiabatic branch") {
  const SystemParams p = fig1_params();
  const double z0 = 38.0 * p.z_g;
  // Wide grid: the two branch components separate by tens of z_g before the
  // measurement suppresses one of them.
  const GridSpec grid = make_grid(4096, z0, p.z_g, 48.0);
  WaveFunction psi = product_state(grid, z0, 0.0, M_PI / 2, 0.0, p);
  NoiseStream noise(12345);
  FftEngine fft;
  SseOptions opt;
  opt.sample_every = 1000;
  opt.regrid_every = 10;
  opt.track_branches = true;
  const SseTrajectory traj = propagate_sse(psi, noise, 30.0, 1e-3, p, fft, opt);
  // uncertainty product never violated along the run
  for (const auto& row : traj.rows) {
    const double det = row.czz * row.cpp - row.czp * row.czp;
    CHECK(det >= 0.25 * p.hbar * p.hbar * (1.0 - 1e-9));
  }
  CHECK(traj.rows.back().branch_entropy < 0.3);  // collapse well underway
  CHECK(traj.discarded < 1e-8);
}
