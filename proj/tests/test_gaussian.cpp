#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "qtraj/classical.hpp"
#include "qtraj/gaussian.hpp"
#include "qtraj/noise.hpp"
#include "qtraj/params.hpp"
#include "qtraj/sse.hpp"
#include "qtraj/wavefunction.hpp"

using namespace qtraj;

namespace {

// Deterministic Riccati stationary point of the measured free oscillator
// (b = 0): solve 0 = 2Czp/m - 8k Czz^2, 0 = Cpp/m - m w^2 Czz - 8k Czz Czp,
// 0 = -2 m w^2 Czp + 2 hbar^2 k - 8k Czp^2.
struct StationaryCov {
  double czz, czp, cpp;
};

StationaryCov stationary_riccati(const SystemParams& p) {
  const double mw2 = p.m * p.omega * p.omega;
  const double disc = std::sqrt(mw2 * mw2 + 16.0 * p.hbar * p.hbar * p.k * p.k);
  StationaryCov s;
  s.czp = (-mw2 + disc) / (8.0 * p.k);
  s.czz = std::sqrt(s.czp / (4.0 * p.k * p.m));
  s.cpp = p.m * s.czz * disc;
  return s;
}

}  // namespace

TEST_CASE("initial Gaussian matches the exact product-state moments") {
  const SystemParams p = build_params(1, 1, 14, 5, 0.4, 0.25);
  const double z0 = 2.3, p0 = -0.7, theta = 1.1, phi = 0.7;
  const GaussianState g = initial_gaussian(z0, p0, theta, phi, p);

  const GridSpec grid = make_grid(512, z0, p.z_g);
  const WaveFunction psi = product_state(grid, z0, p0, theta, phi, p);
  const Moments mo = expectations(psi, p);
  CHECK((g.mean - mo.mean).norm() < 1e-8 * mo.mean.norm());
  CHECK((g.cov - mo.cov).norm() < 1e-8 * mo.cov.norm());
}

TEST_CASE("means drift") {
  const SystemParams p = build_params(1, 1, 45, 200, 0.4, 0.25);
  SUBCASE("zero covariance reduces to the classical equations") {
    ClassicalState cs;
    cs.zt = 1.3;
    cs.pt = -0.4;
    cs.n = Eigen::Vector3d(0.2, -0.5, 0.6).normalized();
    const ClassicalDeriv cd = classical_rhs(cs, p);

    GaussianState g;
    g.mean << cs.zt * p.dz, cs.pt * p.m * p.omega * p.dz,
        cs.n.x() * p.j * p.hbar, cs.n.y() * p.j * p.hbar,
        cs.n.z() * p.j * p.hbar;
    const Vec5 d = means_drift(g, p);
    // convert d/dt of absolute variables to d/dtau of scaled ones
    CHECK(d(0) / (p.dz * p.omega) == doctest::Approx(cd.zt).epsilon(1e-12));
    CHECK(d(1) / (p.m * p.omega * p.omega * p.dz) ==
          doctest::Approx(cd.pt).epsilon(1e-12));
    for (int a = 0; a < 3; ++a)
      CHECK(d(2 + a) / (p.j * p.hbar * p.omega) ==
            doctest::Approx(cd.n(a)).epsilon(1e-12));
  }
  SUBCASE("z-spin covariances feed the spin drift") {
    GaussianState g;
    g.mean << 0.5, 0.0, 3.0, -1.0, 2.0;
    const Vec5 base = means_drift(g, p);
    g.cov(0, 3) = g.cov(3, 0) = 0.7;  // CzJy
    g.cov(0, 2) = g.cov(2, 0) = -0.2; // CzJx
    const Vec5 d = means_drift(g, p);
    CHECK(d(2) - base(2) == doctest::Approx(-p.b * 0.7).epsilon(1e-12));
    CHECK(d(3) - base(3) == doctest::Approx(p.b * -0.2).epsilon(1e-12));
    CHECK((d - base).head(2).norm() == 0.0);
    CHECK(d(4) == base(4));
  }
  SUBCASE("diffusion is sqrt(8k) times the z column of the covariance") {
    GaussianState g = initial_gaussian(1.0, 0.0, M_PI / 2, 0.0, p);
    g.cov(0, 4) = g.cov(4, 0) = 0.3;
    const Vec5 d = means_diffusion(g, p);
    CHECK((d - std::sqrt(8.0 * p.k) * g.cov.col(0)).norm() == 0.0);
  }
}

TEST_CASE("covariance Riccati right-hand side") {
  const SystemParams p = build_params(1, 1, 45, 200, 0.4, 0.25);
  SUBCASE("zero covariance leaves only the measurement back-action") {
    const Mat5 dc = riccati_rhs(Mat5::Zero(), Vec5::Ones(), p);
    Mat5 u = Mat5::Zero();
    u(1, 1) = 2.0 * p.hbar * p.hbar * p.k;
    CHECK((dc - u).norm() == 0.0);
  }
  SUBCASE("decoupled motional block written out by hand") {
    SystemParams q = p;
    q.b = 0.0;
    q.c = 0.0;
    q.refresh();
    Mat5 c = Mat5::Zero();
    const double czz = 0.8, czp = 0.1, cpp = 1.7;
    c(0, 0) = czz;
    c(0, 1) = c(1, 0) = czp;
    c(1, 1) = cpp;
    const Mat5 dc = riccati_rhs(c, Vec5::Zero(), q);
    const double mw2 = q.m * q.omega * q.omega;
    CHECK(dc(0, 0) == doctest::Approx(2.0 * czp / q.m - 8.0 * q.k * czz * czz)
                          .epsilon(1e-14));
    CHECK(dc(0, 1) ==
          doctest::Approx(cpp / q.m - mw2 * czz - 8.0 * q.k * czz * czp)
              .epsilon(1e-14));
    CHECK(dc(1, 1) ==
          doctest::Approx(-2.0 * mw2 * czp + 2.0 * q.hbar * q.hbar * q.k -
                          8.0 * q.k * czp * czp)
              .epsilon(1e-14));
    CHECK(dc.block<3, 3>(2, 2).norm() == 0.0);
  }
  SUBCASE("finite-difference Jacobian of the drift reproduces W") {
    // With the covariance frozen, dl(means_drift)/d(mean) is exactly W.
    GaussianState g = initial_gaussian(1.7, -0.9, 2.0, 0.5, p);
    g.cov(0, 2) = g.cov(2, 0) = 0.11;
    g.cov(0, 3) = g.cov(3, 0) = -0.23;
    Mat5 w_fd;
    const double h = 1e-5;
    for (int jcol = 0; jcol < 5; ++jcol) {
      GaussianState gp = g, gm = g;
      gp.mean(jcol) += h;
      gm.mean(jcol) -= h;
      w_fd.col(jcol) = (means_drift(gp, p) - means_drift(gm, p)) / (2.0 * h);
    }
    const Mat5 w = w_matrix(g.mean, p);
    CHECK((w_fd - w).norm() < 1e-6 * (1.0 + w.norm()));

    const Mat5 want = riccati_rhs(g.cov, g.mean, p);
    Mat5 got = w_fd * g.cov + g.cov * w_fd.transpose();
    got -= 8.0 * p.k * g.cov.col(0) * g.cov.col(0).transpose();
    got(1, 1) += 2.0 * p.hbar * p.hbar * p.k;
    got = 0.5 * (got + got.transpose()).eval();
    CHECK((got - want).norm() < 1e-6 * (1.0 + want.norm()));
  }
}

TEST_CASE("gaussian step, deterministic limit") {
  SUBCASE("k = 0 with zero covariance follows the classical trajectory") {
    const SystemParams p = build_params(1, 1, 45, 200, 0.4, 0.0);
    ClassicalState cs;
    cs.zt = 76.0 / 45.0;
    cs.n = -Eigen::Vector3d::UnitZ();
    GaussianState g;
    g.mean << cs.zt * p.dz, 0.0, 0.0, 0.0, -p.j * p.hbar;

    const double dtau = 1e-3;
    const double tau_span = 10.0;
    const ClassicalTrajectory ref =
        integrate_classical(cs, tau_span, dtau, p);
    const long n = std::lround(tau_span / dtau);
    const WienerIncrement none{};
    for (long i = 0; i < n; ++i)
      g = gaussian_step(g, none, dtau / p.omega, p, SdeScheme::kStrong15);
    CHECK(g.cov.norm() == 0.0);
    const ClassicalState& end = ref.samples.back().state;
    // deterministic limit of the stochastic scheme is Heun-like (order 2),
    // hence the looser bound against the RK4 reference
    CHECK(std::abs(g.mean(0) / p.dz - end.zt) < 1e-4);
    CHECK(std::abs(g.mean(1) / (p.m * p.omega * p.dz) - end.pt) < 1e-4);
    CHECK((g.mean.tail<3>() / (p.j * p.hbar) - end.n).norm() < 1e-4);
  }
  SUBCASE("covariance relaxes to the algebraic stationary point") {
    SystemParams p = build_params(1, 1, 45, 200, 0.4, 0.25);
    p.b = 0.0;
    p.c = 0.0;
    p.refresh();
    const StationaryCov want = stationary_riccati(p);
    // start well away from the fixed point
    GaussianState g = initial_gaussian(0.0, 0.0, M_PI, 0.0, p);
    g.cov(0, 0) *= 9.0;
    const WienerIncrement none{};
    const double dt = 1e-3;
    for (long i = 0; i < 50000; ++i)
      g = gaussian_step(g, none, dt, p, SdeScheme::kStrong15);
    CHECK(g.cov(0, 0) == doctest::Approx(want.czz).epsilon(1e-6));
    CHECK(g.cov(0, 1) == doctest::Approx(want.czp).epsilon(1e-6));
    CHECK(g.cov(1, 1) == doctest::Approx(want.cpp).epsilon(1e-6));
    // localized far below the uncertainty of a free-evolving state, yet
    // the uncertainty product still holds
    const double det = g.cov(0, 0) * g.cov(1, 1) - g.cov(0, 1) * g.cov(0, 1);
    CHECK(det >= 0.25 * p.hbar * p.hbar * (1.0 - 1e-9));
  }
  SUBCASE("free rotation preserves the motional covariance determinant") {
    SystemParams p = build_params(1, 1, 10, 1, 0.0, 0.0);
    p.b = 0.0;
    p.c = 0.0;
    p.refresh();
    GaussianState g = initial_gaussian(1.0, 0.0, 0.0, 0.0, p);
    g.cov(0, 0) = 3.0;
    g.cov(0, 1) = g.cov(1, 0) = 0.4;
    g.cov(1, 1) = 0.6;
    const double det0 =
        g.cov(0, 0) * g.cov(1, 1) - g.cov(0, 1) * g.cov(0, 1);
    const WienerIncrement none{};
    for (long i = 0; i < 20000; ++i)
      g = gaussian_step(g, none, 1e-3, p, SdeScheme::kStrong15);
    const double det =
        g.cov(0, 0) * g.cov(1, 1) - g.cov(0, 1) * g.cov(0, 1);
    CHECK(det == doctest::Approx(det0).epsilon(1e-6));
  }
  SUBCASE("negative covariance excursions are rejected") {
    SystemParams p = build_params(1, 1, 10, 1, 0.0, 1.0);
    GaussianState g = initial_gaussian(0.0, 0.0, 0.0, 0.0, p);
    g.cov(0, 0) = 1.0;
    g.cov(1, 1) = 1.0;
    const WienerIncrement none{};
    // Euler step far beyond the stability limit drives Czz negative.
    CHECK_THROWS_AS(gaussian_step(g, none, 0.5, p, SdeScheme::kEulerMaruyama),
                    std::runtime_error);
  }
}

TEST_CASE("strong convergence against a refined reference path") {
  const SystemParams p = build_params(1, 1, 14, 5, 0.4, 0.25);
  const GaussianState g0 = initial_gaussian(1.5, 0.0, M_PI, 0.0, p);
  const double t_total = 0.5;
  const int n_fine = 512;
  const double h = t_total / n_fine;

  // One Brownian path at the finest resolution; coarse (dW, dZ) follow by
  // aggregation: Z over a block adds the running W offset times the substep.
  NoiseStream noise(77);
  std::vector<WienerIncrement> fine(n_fine);
  for (int i = 0; i < n_fine; ++i) fine[i] = noise.next(h);

  auto coarse_increment = [&](int start, int block) {
    WienerIncrement inc{0.0, 0.0};
    double w_off = 0.0;
    for (int i = start; i < start + block; ++i) {
      inc.dz += fine[i].dz + w_off * h;
      w_off += fine[i].dw;
    }
    inc.dw = w_off;
    return inc;
  };

  auto run = [&](int block, SdeScheme scheme) {
    GaussianState g = g0;
    for (int start = 0; start < n_fine; start += block)
      g = gaussian_step(g, coarse_increment(start, block), block * h, p,
                        scheme);
    return g;
  };

  const GaussianState ref = run(1, SdeScheme::kStrong15);
  auto err = [&](int block, SdeScheme scheme) {
    const GaussianState g = run(block, scheme);
    return (g.mean - ref.mean).norm() / ref.mean.norm() +
           (g.cov - ref.cov).norm() / ref.cov.norm();
  };

  const double e15_64 = err(64, SdeScheme::kStrong15);
  const double e15_16 = err(16, SdeScheme::kStrong15);
  const double e15_4 = err(4, SdeScheme::kStrong15);
  const double eem_16 = err(16, SdeScheme::kEulerMaruyama);

  // order >= 1: a 4x step refinement shrinks the error by >= 3x
  CHECK(e15_64 / e15_16 > 3.0);
  CHECK(e15_16 / e15_4 > 3.0);
  // the higher-order scheme beats Euler-Maruyama on the same path
  CHECK(e15_16 < eem_16);
}

TEST_CASE("propagation is deterministic for a fixed seed") {
  const SystemParams p = build_params(1, 1, 45, 200, 0.4, 0.25);
  const GaussianState g0 =
      initial_gaussian(76.0 / 45.0 * p.dz, 0.0, M_PI, 0.0, p);
  GaussianOptions opt;
  opt.sample_every = 50;
  NoiseStream n1(42), n2(42);
  const GaussianTrajectory a = propagate_gaussian(g0, n1, 2.0, 1e-3, p, opt);
  const GaussianTrajectory b = propagate_gaussian(g0, n2, 2.0, 1e-3, p, opt);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].mean == b.rows[i].mean);
    CHECK(a.rows[i].czz == b.rows[i].czz);
    if (std::isnan(a.rows[i].record_y))
      CHECK(std::isnan(b.rows[i].record_y));  // row at tau = 0
    else
      CHECK(a.rows[i].record_y == b.rows[i].record_y);
  }
}

TEST_CASE("gaussian estimator tracks the full wave function at large action") {
  // Moderate spin, shared noise: the second-cumulant closure should stay
  // close to the exact conditioned moments over a couple of trap periods.
  // The orbit is kept on one side of the trap center so the spin follows
  // the local field adiabatically; transverse spin means still carry
  // quantum projection noise ~ Jhbar/sqrt(2J) that no closure can track,
  // hence the sector-wise bounds.
  const SystemParams p =
      build_params(1, 1, std::sqrt(2.0 * 5.0625 * 10.0), 10, 0.4, 0.25);
  const double z0 = 0.8 * p.dz;
  const double dt = 1e-3;
  const double tau_span = 4.0 * M_PI;

  const GridSpec grid = make_grid(1024, z0, p.z_g, 14.0);
  WaveFunction psi = product_state(grid, z0, 0.0, M_PI, 0.0, p);
  NoiseStream ns(9001);
  FftEngine fft;
  SseOptions sse_opt;
  sse_opt.sample_every = 100;
  sse_opt.regrid_every = 20;
  const SseTrajectory exact =
      propagate_sse(psi, ns, tau_span, dt, p, fft, sse_opt);

  const GaussianState g0 = initial_gaussian(z0, 0.0, M_PI, 0.0, p);
  NoiseStream ng(9001);  // same dW sequence step for step
  GaussianOptions gopt;
  gopt.sample_every = 100;
  const GaussianTrajectory approx =
      propagate_gaussian(g0, ng, tau_span, dt, p, gopt);

  REQUIRE(exact.rows.size() == approx.rows.size());
  double zp = 0.0, spin = 0.0, den = 0.0, czz_num = 0.0, czz_den = 0.0;
  const Vec5 scale =
      (Vec5() << p.dz, p.m * p.omega * p.dz, p.j * p.hbar, p.j * p.hbar,
       p.j * p.hbar)
          .finished();
  for (std::size_t i = 0; i < exact.rows.size(); ++i) {
    CHECK(exact.rows[i].tau == doctest::Approx(approx.rows[i].tau));
    const Vec5 diff =
        (exact.rows[i].mean - approx.rows[i].mean).cwiseQuotient(scale);
    zp += diff.head<2>().squaredNorm();
    spin += diff.tail<3>().squaredNorm();
    den += 1.0;
    czz_num += std::pow(exact.rows[i].czz - approx.rows[i].czz, 2);
    czz_den += std::pow(exact.rows[i].czz, 2);
  }
  CHECK(std::sqrt(zp / den) < 0.10);          // motional means, scaled RMS
  CHECK(std::sqrt(spin / den) < 0.30);        // bounded by projection noise
  CHECK(std::sqrt(czz_num / czz_den) < 0.20); // relative RMS in Czz
}
