#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "qtraj/params.hpp"

namespace qtraj {

/// Classical state in the dimensionless coordinates of the scaled equations
/// of motion: zt = z/dz, pt = p/(m omega dz), n the unit magnetic-moment
/// direction. Time is tau = omega t.
struct ClassicalState {
  double zt = 0.0;
  double pt = 0.0;
  Eigen::Vector3d n = Eigen::Vector3d::UnitX();
};

struct ClassicalDeriv {
  double zt = 0.0;
  double pt = 0.0;
  Eigen::Vector3d n = Eigen::Vector3d::Zero();
};

/// Dimensionless coefficients of the scaled equations of motion, derived
/// from the physical parameters. For the standard construction
/// b = m omega^2 dz / (J hbar) they reduce to (I0/J, c~ I0/J, 1).
struct ClassicalCoeffs {
  double a;  // b dz / omega: gradient precession rate
  double g;  // b J hbar / (m omega^2 dz): spin force on the motion
  double ct; // c J hbar / (m omega^2 dz^2): transverse coupling

  explicit ClassicalCoeffs(const SystemParams& p)
      : a(p.b * p.dz / p.omega),
        g(p.gradient_weight()),
        ct(p.c * p.j * p.hbar / p.e0) {}
};

inline ClassicalDeriv classical_rhs(const ClassicalState& s,
                                    const SystemParams& p) {
  const ClassicalCoeffs c(p);
  const double c_over_omega = p.c / p.omega;  // = c~ I0/(J hbar)
  ClassicalDeriv d;
  d.zt = s.pt;
  d.pt = -s.zt - c.g * s.n.z();
  d.n.x() = -c.a * s.zt * s.n.y();
  d.n.y() = c.a * s.zt * s.n.x() - c_over_omega * s.n.z();
  d.n.z() = c_over_omega * s.n.y();
  return d;
}

/// Scaled energy in units of E0 = m omega^2 dz^2:
/// E~ = pt^2/2 + zt^2/2 + g zt n_z + c~ n_x.
inline double energy(const ClassicalState& s, const SystemParams& p) {
  const ClassicalCoeffs c(p);
  return 0.5 * s.pt * s.pt + 0.5 * s.zt * s.zt + c.g * s.zt * s.n.z() +
         c.ct * s.n.x();
}

/// Global minimum of the scaled energy over (zt, pt, n): with the magnetic
/// moment anti-aligned, V-(zt) = zt^2/2 - sqrt(g^2 zt^2 + c~^2); minimized
/// at zt^2 = g^2 - c~^2/g^2 when g^2 >= |c~|, else at zt = 0. Shell
/// energies quoted "above the ground energy" are offset by this value.
inline double potential_floor(const SystemParams& p) {
  const ClassicalCoeffs c(p);
  const double g2 = c.g * c.g;
  const double ct = std::abs(c.ct);
  if (g2 * g2 >= ct * ct) return -0.5 * g2 - 0.5 * ct * ct / g2;
  return -ct;
}

namespace detail {
inline ClassicalState axpy(const ClassicalState& s, double h,
                           const ClassicalDeriv& d) {
  ClassicalState r;
  r.zt = s.zt + h * d.zt;
  r.pt = s.pt + h * d.pt;
  r.n = s.n + h * d.n;
  return r;
}
}  // namespace detail

/// One classic fourth-order Runge-Kutta step of size dtau.
inline ClassicalState rk4_step(const ClassicalState& s, double dtau,
                               const SystemParams& p) {
  const ClassicalDeriv k1 = classical_rhs(s, p);
  const ClassicalDeriv k2 = classical_rhs(detail::axpy(s, 0.5 * dtau, k1), p);
  const ClassicalDeriv k3 = classical_rhs(detail::axpy(s, 0.5 * dtau, k2), p);
  const ClassicalDeriv k4 = classical_rhs(detail::axpy(s, dtau, k3), p);
  ClassicalState r;
  r.zt = s.zt + dtau / 6.0 * (k1.zt + 2.0 * k2.zt + 2.0 * k3.zt + k4.zt);
  r.pt = s.pt + dtau / 6.0 * (k1.pt + 2.0 * k2.pt + 2.0 * k3.pt + k4.pt);
  r.n = s.n + dtau / 6.0 * (k1.n + 2.0 * k2.n + 2.0 * k3.n + k4.n);
  return r;
}

struct ClassicalSample {
  double tau;
  ClassicalState state;
};

struct ClassicalTrajectory {
  std::vector<ClassicalSample> samples;
  double max_norm_drift = 0.0;  // max | |n| - 1 | seen along the run
  bool norm_warning = false;    // drift exceeded 1e-6 without renormalization
};

struct IntegrateOptions {
  bool renormalize_n = false;
  int sample_every = 1;
};

inline ClassicalTrajectory integrate_classical(const ClassicalState& s0,
                                               double tau_span, double dtau,
                                               const SystemParams& p,
                                               IntegrateOptions opt = {}) {
  if (!(dtau > 0.0))
    throw std::invalid_argument("integrate_classical: dtau must be positive");
  const long nsteps = std::lround(tau_span / dtau);
  ClassicalTrajectory traj;
  traj.samples.reserve(static_cast<std::size_t>(nsteps / opt.sample_every) + 2);
  ClassicalState s = s0;
  traj.samples.push_back({0.0, s});
  for (long i = 1; i <= nsteps; ++i) {
    s = rk4_step(s, dtau, p);
    if (opt.renormalize_n) s.n.normalize();
    const double drift = std::abs(s.n.norm() - 1.0);
    if (drift > traj.max_norm_drift) traj.max_norm_drift = drift;
    if (i % opt.sample_every == 0 || i == nsteps)
      traj.samples.push_back({i * dtau, s});
  }
  if (!opt.renormalize_n && traj.max_norm_drift > 1e-6)
    traj.norm_warning = true;
  return traj;
}

/// Draws a classical state on the energy shell E~: n uniform on the sphere,
/// zt uniform over the interval allowed for that n, pt solved with a random
/// sign. Proposals with no allowed zt interval are rejected.
inline ClassicalState sample_energy_shell(double e_tilde, std::mt19937_64& rng,
                                          const SystemParams& p,
                                          long max_proposals = 1000000) {
  const ClassicalCoeffs c(p);
  auto unif = [&rng]() {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  };
  for (long trial = 0; trial < max_proposals; ++trial) {
    // Marsaglia's method for a uniform point on the sphere.
    double u, v, s2;
    do {
      u = 2.0 * unif() - 1.0;
      v = 2.0 * unif() - 1.0;
      s2 = u * u + v * v;
    } while (s2 >= 1.0 || s2 == 0.0);
    Eigen::Vector3d n(2.0 * u * std::sqrt(1.0 - s2),
                      2.0 * v * std::sqrt(1.0 - s2), 1.0 - 2.0 * s2);
    // zt^2/2 + g n_z zt + (c~ n_x - E) <= 0 on the allowed interval.
    const double bq = c.g * n.z();
    const double cq = c.ct * n.x() - e_tilde;
    const double disc = bq * bq - 2.0 * cq;
    if (disc <= 0.0) continue;
    const double lo = -bq - std::sqrt(disc);
    const double hi = -bq + std::sqrt(disc);
    const double zt = lo + (hi - lo) * unif();
    const double rad = 2.0 * (e_tilde - 0.5 * zt * zt - c.g * zt * n.z() -
                              c.ct * n.x());
    if (rad < 0.0) continue;  // roundoff guard at the interval edges
    ClassicalState s;
    s.zt = zt;
    s.pt = (unif() < 0.5 ? -1.0 : 1.0) * std::sqrt(rad);
    s.n = n;
    return s;
  }
  throw std::runtime_error(
      "sample_energy_shell: no accepted sample; energy likely unreachable");
}

/// One crossing of the surface of section n_y = 0, dn_y/dtau > 0. All
/// coordinates are emitted; n_y is the bisection residual.
struct SectionPoint {
  double tau;
  double zt, pt;
  double nx, ny, nz;
};

namespace detail {

/// Cubic Hermite interpolation of a scalar over one step, u in [0, 1].
inline double hermite(double y0, double d0, double y1, double d1, double u) {
  const double u2 = u * u, u3 = u2 * u;
  return (2 * u3 - 3 * u2 + 1) * y0 + (u3 - 2 * u2 + u) * d0 +
         (-2 * u3 + 3 * u2) * y1 + (u3 - u2) * d1;
}

}  // namespace detail

/// Integrates from s0 and records crossings of the n_y = 0 slice with
/// dn_y/dtau > 0. Crossings are refined by bisection on a dense-output cubic
/// until |n_y| < 1e-10.
inline std::vector<SectionPoint> poincare_section(const ClassicalState& s0,
                                                  double tau_max, double dtau,
                                                  const SystemParams& p) {
  if (!(dtau > 0.0))
    throw std::invalid_argument("poincare_section: dtau must be positive");
  std::vector<SectionPoint> pts;
  ClassicalState prev = s0;
  ClassicalDeriv dprev = classical_rhs(prev, p);
  const long nsteps = std::lround(tau_max / dtau);
  for (long i = 1; i <= nsteps; ++i) {
    const ClassicalState cur = rk4_step(prev, dtau, p);
    const ClassicalDeriv dcur = classical_rhs(cur, p);
    if (prev.n.y() < 0.0 && cur.n.y() >= 0.0 && dcur.n.y() > 0.0) {
      // Hermite coefficients use derivatives scaled to unit interval.
      auto ny_at = [&](double u) {
        return detail::hermite(prev.n.y(), dtau * dprev.n.y(), cur.n.y(),
                               dtau * dcur.n.y(), u);
      };
      double lo = 0.0, hi = 1.0;
      double u = 0.5;
      for (int it = 0; it < 200; ++it) {
        u = 0.5 * (lo + hi);
        const double f = ny_at(u);
        if (std::abs(f) < 1e-10) break;
        if ((f < 0.0) == (ny_at(lo) < 0.0))
          lo = u;
        else
          hi = u;
      }
      SectionPoint sp;
      sp.tau = (i - 1) * dtau + u * dtau;
      sp.zt = detail::hermite(prev.zt, dtau * dprev.zt, cur.zt, dtau * dcur.zt, u);
      sp.pt = detail::hermite(prev.pt, dtau * dprev.pt, cur.pt, dtau * dcur.pt, u);
      sp.nx = detail::hermite(prev.n.x(), dtau * dprev.n.x(), cur.n.x(),
                              dtau * dcur.n.x(), u);
      sp.ny = ny_at(u);
      sp.nz = detail::hermite(prev.n.z(), dtau * dprev.n.z(), cur.n.z(),
                              dtau * dcur.n.z(), u);
      pts.push_back(sp);
    }
    prev = cur;
    dprev = dcur;
  }
  return pts;
}

/// Section extraction from an already-sampled series (used for quantum
/// trajectories where no analytic derivative is available). Crossings are
/// located on a Catmull-Rom cubic through neighboring samples.
struct SeriesPoint {
  double tau;
  double zt, pt;
  Eigen::Vector3d n;
};

inline std::vector<SectionPoint> section_from_series(
    const std::vector<SeriesPoint>& series) {
  std::vector<SectionPoint> pts;
  const std::size_t n = series.size();
  if (n < 4) return pts;
  for (std::size_t i = 1; i + 2 < n; ++i) {
    const SeriesPoint& a = series[i];
    const SeriesPoint& b = series[i + 1];
    if (!(a.n.y() < 0.0 && b.n.y() >= 0.0)) continue;
    const SeriesPoint& am = series[i - 1];
    const SeriesPoint& bp = series[i + 2];
    // Catmull-Rom tangents on the [a, b] interval.
    auto interp = [&](auto get, double u) {
      const double y0 = get(a), y1 = get(b);
      const double d0 = 0.5 * (get(b) - get(am));
      const double d1 = 0.5 * (get(bp) - get(a));
      return detail::hermite(y0, d0, y1, d1, u);
    };
    auto ny = [&](double u) {
      return interp([](const SeriesPoint& s) { return s.n.y(); }, u);
    };
    if (!(ny(1.0) > ny(0.0))) continue;  // need an increasing crossing
    double lo = 0.0, hi = 1.0, u = 0.5;
    for (int it = 0; it < 200; ++it) {
      u = 0.5 * (lo + hi);
      const double f = ny(u);
      if (std::abs(f) < 1e-10) break;
      if ((f < 0.0) == (ny(lo) < 0.0))
        lo = u;
      else
        hi = u;
    }
    SectionPoint sp;
    sp.tau = a.tau + u * (b.tau - a.tau);
    sp.zt = interp([](const SeriesPoint& s) { return s.zt; }, u);
    sp.pt = interp([](const SeriesPoint& s) { return s.pt; }, u);
    sp.nx = interp([](const SeriesPoint& s) { return s.n.x(); }, u);
    sp.ny = ny(u);
    sp.nz = interp([](const SeriesPoint& s) { return s.n.z(); }, u);
    pts.push_back(sp);
  }
  return pts;
}

}  // namespace qtraj
