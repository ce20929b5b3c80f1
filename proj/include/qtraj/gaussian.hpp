#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtraj/noise.hpp"
#include "qtraj/params.hpp"
#include "qtraj/sse.hpp"

namespace qtraj {

/// Gaussian (second-cumulant) description of the conditioned state: means of
/// (z, p, Jx, Jy, Jz) and their symmetric covariance matrix.
struct GaussianState {
  Vec5 mean = Vec5::Zero();
  Mat5 cov = Mat5::Zero();
};

/// Exact moments of a product coherent state: motional variances
/// (z_g^2, hbar^2/4z_g^2), spin covariance of the stretched state rotated to
/// point along (theta, phi): zero along the mean, J hbar^2/2 transverse.
inline GaussianState initial_gaussian(double z0, double p0, double theta,
                                      double phi, const SystemParams& p) {
  GaussianState s;
  const Eigen::Vector3d n(std::sin(theta) * std::cos(phi),
                          std::sin(theta) * std::sin(phi), std::cos(theta));
  s.mean << z0, p0, p.j * p.hbar * n.x(), p.j * p.hbar * n.y(),
      p.j * p.hbar * n.z();
  s.cov(0, 0) = p.z_g * p.z_g;
  s.cov(1, 1) = p.hbar * p.hbar / (4.0 * p.z_g * p.z_g);
  const Eigen::Matrix3d spin_cov =
      0.5 * p.j * p.hbar * p.hbar *
      (Eigen::Matrix3d::Identity() - n * n.transpose());
  s.cov.block<3, 3>(2, 2) = spin_cov;
  return s;
}

/// Drift of the conditioned means; the spin rows carry the second-cumulant
/// corrections through the z-spin covariances.
inline Vec5 means_drift(const GaussianState& s, const SystemParams& p) {
  const double z = s.mean(0), pm = s.mean(1);
  const double jx = s.mean(2), jy = s.mean(3), jz = s.mean(4);
  const double czjx = s.cov(0, 2), czjy = s.cov(0, 3);
  Vec5 d;
  d(0) = pm / p.m;
  d(1) = -p.m * p.omega * p.omega * z - p.b * jz;
  d(2) = -p.b * (z * jy + czjy);
  d(3) = p.b * (z * jx + czjx) - p.c * jz;
  d(4) = p.c * jy;
  return d;
}

/// Noise coefficients of the means: sqrt(8k) (Czz, Czp, CzJx, CzJy, CzJz).
inline Vec5 means_diffusion(const GaussianState& s, const SystemParams& p) {
  return std::sqrt(8.0 * p.k) * s.cov.col(0);
}

/// The linearized-drift matrix W of the covariance Riccati equation,
/// evaluated at the current means.
inline Mat5 w_matrix(const Vec5& mean, const SystemParams& p) {
  Mat5 w = Mat5::Zero();
  w(0, 1) = 1.0 / p.m;
  w(1, 0) = -p.m * p.omega * p.omega;
  w(1, 4) = -p.b;
  w(2, 0) = -p.b * mean(3);
  w(2, 3) = -p.b * mean(0);
  w(3, 0) = p.b * mean(2);
  w(3, 2) = p.b * mean(0);
  w(3, 4) = -p.c;
  w(4, 3) = p.c;
  return w;
}

/// dC/dt = U + C V C + W C + C W^T with U = diag(0, 2 hbar^2 k, 0, 0, 0) and
/// V carrying the single entry -8k at (z, z). Output symmetrized.
inline Mat5 riccati_rhs(const Mat5& c, const Vec5& mean,
                        const SystemParams& p) {
  const Mat5 w = w_matrix(mean, p);
  Mat5 dc = w * c + c * w.transpose();
  dc.noalias() -= 8.0 * p.k * c.col(0) * c.col(0).transpose();
  dc(1, 1) += 2.0 * p.hbar * p.hbar * p.k;
  return 0.5 * (dc + dc.transpose());
}

enum class SdeScheme { kEulerMaruyama, kStrong15 };

inline const char* scheme_id(SdeScheme s) {
  return s == SdeScheme::kEulerMaruyama ? "euler-maruyama" : "strong-1.5";
}

namespace detail {

// The coupled (means, covariance) system flattened to a 30-vector, driven by
// one scalar Wiener increment; the covariance rows have zero diffusion but
// feed the means' noise coefficients.
using GVec = Eigen::Matrix<double, 30, 1>;

inline GVec pack(const GaussianState& s) {
  GVec x;
  x.head<5>() = s.mean;
  Eigen::Map<Mat5>(x.data() + 5) = s.cov;
  return x;
}

inline GaussianState unpack(const GVec& x) {
  GaussianState s;
  s.mean = x.head<5>();
  s.cov = Eigen::Map<const Mat5>(x.data() + 5);
  return s;
}

inline GVec g_drift(const GVec& x, const SystemParams& p) {
  const GaussianState s = unpack(x);
  GVec d;
  d.head<5>() = means_drift(s, p);
  Eigen::Map<Mat5>(d.data() + 5) = riccati_rhs(s.cov, s.mean, p);
  return d;
}

inline GVec g_diffusion(const GVec& x, const SystemParams& p) {
  GVec b = GVec::Zero();
  b.head<5>() = means_diffusion(unpack(x), p);
  return b;
}

}  // namespace detail

/// One step of the coupled means + Riccati system. The strong order-1.5
/// scheme is the explicit scalar-noise scheme of Kloeden & Platen (11.2.1);
/// it consumes both dW and the area integral dZ.
inline GaussianState gaussian_step(const GaussianState& s,
                                   const WienerIncrement& inc, double dt,
                                   const SystemParams& p, SdeScheme scheme) {
  using detail::GVec;
  const GVec x = detail::pack(s);
  GVec y;
  if (scheme == SdeScheme::kEulerMaruyama) {
    y = x + detail::g_drift(x, p) * dt + detail::g_diffusion(x, p) * inc.dw;
  } else {
    const double sq = std::sqrt(dt);
    const GVec a = detail::g_drift(x, p);
    const GVec b = detail::g_diffusion(x, p);
    const GVec up = x + a * dt + b * sq;
    const GVec um = x + a * dt - b * sq;
    const GVec ap = detail::g_drift(up, p);
    const GVec am = detail::g_drift(um, p);
    const GVec bp = detail::g_diffusion(up, p);
    const GVec bm = detail::g_diffusion(um, p);
    const GVec fp = up + bp * sq;
    const GVec fm = up - bp * sq;
    const GVec bfp = detail::g_diffusion(fp, p);
    const GVec bfm = detail::g_diffusion(fm, p);
    const double w2 = inc.dw * inc.dw;
    y = x + b * inc.dw + (ap - am) * (inc.dz / (2.0 * sq)) +
        (ap + 2.0 * a + am) * (dt / 4.0) +
        (bp - bm) * ((w2 - dt) / (4.0 * sq)) +
        (bp - 2.0 * b + bm) * ((inc.dw * dt - inc.dz) / (2.0 * dt)) +
        (bfp - bfm - bp + bm) * ((w2 / 3.0 - dt) * inc.dw / (4.0 * dt));
  }
  GaussianState out = detail::unpack(y);
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(
      out.cov.block<2, 2>(0, 0));
  const double scale = std::max(1.0, out.cov(0, 0) + out.cov(1, 1));
  if (es.eigenvalues()(0) < -1e-10 * scale)
    throw std::runtime_error(
        "gaussian_step: motional covariance block lost positive "
        "semidefiniteness; reduce dt");
  return out;
}

struct GaussianOptions {
  SdeScheme scheme = SdeScheme::kStrong15;
  int sample_every = 10;
};

struct GaussianTrajectory {
  std::vector<TrajectoryRow> rows;
};

inline GaussianTrajectory propagate_gaussian(GaussianState s,
                                             NoiseStream& noise,
                                             double tau_span, double dt,
                                             const SystemParams& p,
                                             GaussianOptions opt = {}) {
  if (!(dt > 0.0))
    throw std::invalid_argument("propagate_gaussian: dt must be positive");
  const long nsteps = std::lround(tau_span / (p.omega * dt));
  GaussianTrajectory traj;

  auto emit = [&](double tau, double record) {
    TrajectoryRow row;
    row.tau = tau;
    row.mean = s.mean;
    row.record_y = record;
    row.czz = s.cov(0, 0);
    row.cpp = s.cov(1, 1);
    row.czp = s.cov(0, 1);
    row.czjx = s.cov(0, 2);
    row.czjy = s.cov(0, 3);
    row.czjz = s.cov(0, 4);
    traj.rows.push_back(row);
  };
  emit(0.0, std::numeric_limits<double>::quiet_NaN());

  for (long i = 1; i <= nsteps; ++i) {
    const WienerIncrement inc =
        (p.k > 0.0) ? noise.next(dt) : WienerIncrement{};
    const double zpre = s.mean(0);
    s = gaussian_step(s, inc, dt, p, opt.scheme);
    if (i % opt.sample_every == 0 || i == nsteps) {
      const double record = (p.k > 0.0)
                                ? record_sample(zpre, inc.dw, dt, p.k)
                                : std::numeric_limits<double>::quiet_NaN();
      emit(i * dt * p.omega, record);
    }
  }
  return traj;
}

}  // namespace qtraj
