#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "qtraj/noise.hpp"
#include "qtraj/params.hpp"
#include "qtraj/wavefunction.hpp"

namespace qtraj {

/// Kinetic half of the Cayley-form split step: each momentum component is
/// multiplied by (1 - i T dt/4hbar)/(1 + i T dt/4hbar), T = p^2/2m. The
/// multiplier has unit modulus, so the step is exactly norm preserving.
inline void kinetic_half_step(WaveFunction& psi, double dt,
                              const SystemParams& p, FftEngine& fft) {
  if (dt == 0.0) return;
  const int n = psi.grid.n;
  Eigen::VectorXcd factor(n);
  for (int jj = 0; jj < n; ++jj) {
    const double pj = psi.grid.p(jj, p.hbar);
    const double lam = pj * pj * dt / (8.0 * p.m * p.hbar);
    factor(jj) = Complex(1.0, -lam) / Complex(1.0, lam);
  }
  Eigen::VectorXcd col(n), phi(n);
  for (int m = 0; m < psi.spin_dim(); ++m) {
    col = psi.amp.col(m);
    fft.forward(col, phi);
    phi.array() *= factor.array();
    fft.inverse(phi, col);
    psi.amp.col(m) = col;
  }
}

/// Potential factor (1 - i V dt/2hbar)(1 + i V dt/2hbar)^{-1} with
/// V = (1/2) m w^2 z^2 + b z Jz + c Jx. V is block tridiagonal in
/// (position, Jz) so the inverse reduces to one complex tridiagonal solve
/// per grid point. Unitary up to roundoff.
inline void potential_cayley_step(WaveFunction& psi, double dt,
                                  const SystemParams& p) {
  if (dt == 0.0) return;
  const int n = psi.grid.n;
  const int dim = psi.spin_dim();
  const double lam = dt / (2.0 * p.hbar);
  const Eigen::VectorXd e = p.c * jx_offdiag(p.j, p.hbar);  // real couplings

  Eigen::VectorXcd rhs(dim), diag(dim), cprime(std::max(dim - 1, 1)), x(dim);
  for (int i = 0; i < n; ++i) {
    const double z = psi.grid.z(i);
    const double v0 = 0.5 * p.m * p.omega * p.omega * z * z;
    // rhs = (1 - i lam V) psi_row; diag of A = 1 + i lam V.
    for (int m = 0; m < dim; ++m) {
      const double vm = v0 + p.b * z * p.hbar * (p.j - m);
      const Complex pm = psi.amp(i, m);
      Complex r = Complex(1.0, -lam * vm) * pm;
      if (m > 0) r += Complex(0.0, -lam * e(m - 1)) * psi.amp(i, m - 1);
      if (m + 1 < dim) r += Complex(0.0, -lam * e(m)) * psi.amp(i, m + 1);
      rhs(m) = r;
      diag(m) = Complex(1.0, lam * vm);
    }
    // Thomas elimination with the constant off-diagonal i*lam*e.
    Complex piv = diag(0);
    if (std::abs(piv) < 1e-300)
      throw std::runtime_error("potential_cayley_step: zero pivot");
    x(0) = rhs(0) / piv;
    for (int m = 1; m < dim; ++m) {
      const Complex off = Complex(0.0, lam * e(m - 1));
      cprime(m - 1) = off / piv;
      piv = diag(m) - off * cprime(m - 1);
      if (std::abs(piv) < 1e-300)
        throw std::runtime_error("potential_cayley_step: zero pivot");
      x(m) = (rhs(m) - off * x(m - 1)) / piv;
    }
    for (int m = dim - 2; m >= 0; --m) x(m) -= cprime(m) * x(m + 1);
    for (int m = 0; m < dim; ++m) psi.amp(i, m) = x(m);
  }
}

/// Half of the measurement factor exp(-M dt/2) about the reference position
/// zref = <z> at the start of the step. The full-step multiplier
/// exp(-2k (z-zref)^2 dt + sqrt(2k) (z-zref) dW), Ito-expanded, reproduces
/// the conditioning terms of the SSE: -k z^2 dt + 4k <z> z dt + sqrt(2k) z dW
/// up to scalars absorbed by renormalization.
inline void measurement_half(WaveFunction& psi, double dw, double dt,
                             double zref, const SystemParams& p) {
  const double s2k = std::sqrt(2.0 * p.k);
  for (int i = 0; i < psi.grid.n; ++i) {
    const double zeta = psi.grid.z(i) - zref;
    const double f =
        std::exp(0.5 * (-2.0 * p.k * zeta * zeta * dt + s2k * zeta * dw));
    psi.amp.row(i) *= f;
  }
}

/// Measurement record sample y = <z> + dW / (sqrt(8k) dt).
inline double record_sample(double zmean, double dw, double dt, double k) {
  return zmean + dw / (std::sqrt(8.0 * k) * dt);
}

/// Full measurement update exp(-M dt) plus renormalization. Returns the
/// record sample. Standalone version used directly in tests; the split step
/// below applies the same update as two half factors around the Hamiltonian.
inline double measurement_step(WaveFunction& psi, double dw, double dt,
                               const SystemParams& p) {
  if (p.k == 0.0) {
    if (dw != 0.0)
      throw std::invalid_argument("measurement_step: dW without a channel (k=0)");
    return std::numeric_limits<double>::quiet_NaN();
  }
  const double zmean = psi.mean_z();
  measurement_half(psi, dw, dt, zmean, p);
  measurement_half(psi, dw, dt, zmean, p);
  psi.normalize();
  return record_sample(zmean, dw, dt, p.k);
}

struct SseStepResult {
  double record = std::numeric_limits<double>::quiet_NaN();
  double norm_defect = 0.0;  // |norm - 1| before renormalization
};

/// One full split step exp(-Mdt/2) exp(-iHdt/hbar) exp(-Mdt/2), the
/// Hamiltonian factor itself split kinetic/potential/kinetic in Cayley form.
/// <z> inside M is evaluated at the start of the step (Ito convention).
inline SseStepResult sse_step(WaveFunction& psi, double dw, double dt,
                              const SystemParams& p, FftEngine& fft) {
  SseStepResult res;
  const bool measured = p.k > 0.0;
  if (!measured && dw != 0.0)
    throw std::invalid_argument("sse_step: dW without a channel (k=0)");
  double zref = 0.0;
  if (measured) {
    zref = psi.mean_z();
    measurement_half(psi, dw, dt, zref, p);
  }
  kinetic_half_step(psi, dt, p, fft);
  potential_cayley_step(psi, dt, p);
  kinetic_half_step(psi, dt, p, fft);
  if (measured) {
    measurement_half(psi, dw, dt, zref, p);
    res.record = record_sample(zref, dw, dt, p.k);
  }
  res.norm_defect = std::abs(psi.norm() - 1.0);
  psi.normalize();
  return res;
}

/// One output row of a propagated trajectory (shared with the Gaussian
/// propagator; columns match the trajectory CSV schema).
struct TrajectoryRow {
  double tau = 0.0;
  Vec5 mean = Vec5::Zero();
  double record_y = std::numeric_limits<double>::quiet_NaN();
  double czz = 0.0, cpp = 0.0, czp = 0.0;
  double czjx = 0.0, czjy = 0.0, czjz = 0.0;
  double norm_defect = 0.0;
  double branch_entropy = std::numeric_limits<double>::quiet_NaN();
};

struct SseOptions {
  int sample_every = 10;
  int regrid_every = 20;
  bool track_branches = false;  // adiabatic populations at each sample
  /// Optional per-sample hook (tau, state) for custom diagnostics.
  std::function<void(double, const WaveFunction&)> on_sample;
};

struct SseTrajectory {
  std::vector<TrajectoryRow> rows;
  double discarded = 0.0;        // total probability lost to regrids
  double max_norm_defect = 0.0;  // worst per-step pre-normalization defect
};

inline TrajectoryRow row_from_moments(double tau, const Moments& mo) {
  TrajectoryRow row;
  row.tau = tau;
  row.mean = mo.mean;
  row.czz = mo.cov(0, 0);
  row.cpp = mo.cov(1, 1);
  row.czp = mo.cov(0, 1);
  row.czjx = mo.cov(0, 2);
  row.czjy = mo.cov(0, 3);
  row.czjz = mo.cov(0, 4);
  return row;
}

inline SseTrajectory propagate_sse(WaveFunction psi, NoiseStream& noise,
                                   double tau_span, double dt,
                                   const SystemParams& p, FftEngine& fft,
                                   SseOptions opt = {}) {
  if (!(dt > 0.0))
    throw std::invalid_argument("propagate_sse: dt must be positive");
  const long nsteps = std::lround(tau_span / (p.omega * dt));
  SseTrajectory traj;
  psi.normalize();

  auto emit = [&](double tau, const SseStepResult& step) {
    Moments mo = expectations(psi, p, fft);
    TrajectoryRow row = row_from_moments(tau, mo);
    row.record_y = step.record;
    row.norm_defect = step.norm_defect;
    if (opt.track_branches)
      row.branch_entropy = branch_entropy(adiabatic_populations(psi, p));
    traj.rows.push_back(row);
    if (opt.on_sample) opt.on_sample(tau, psi);
  };
  emit(0.0, SseStepResult{});

  for (long i = 1; i <= nsteps; ++i) {
    const double dw = (p.k > 0.0) ? noise.next(dt).dw : 0.0;
    const SseStepResult step = sse_step(psi, dw, dt, p, fft);
    if (step.norm_defect > traj.max_norm_defect)
      traj.max_norm_defect = step.norm_defect;
    if (opt.regrid_every > 0 && i % opt.regrid_every == 0) regrid(psi);
    if (i % opt.sample_every == 0 || i == nsteps)
      emit(i * dt * p.omega, step);
  }
  traj.discarded = psi.discarded;
  return traj;
}

}  // namespace qtraj
