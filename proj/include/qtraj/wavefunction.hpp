#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include "qtraj/params.hpp"
#include "qtraj/spin.hpp"

namespace qtraj {

/// Uniform position grid of n points (power of two) with spacing and center;
/// the conjugate momentum grid follows from discrete Fourier conjugacy.
struct GridSpec {
  int n = 0;
  double spacing = 0.0;
  double center = 0.0;

  double z(int i) const { return center + (i - n / 2) * spacing; }
  double z_min() const { return z(0); }
  double z_max() const { return z(n - 1); }
  double span() const { return n * spacing; }

  /// Momentum at FFT bin j (standard wrap-around ordering).
  double p(int j, double hbar) const {
    const int f = (j < n / 2) ? j : j - n;
    return 2.0 * M_PI * hbar * f / (n * spacing);
  }
  double p_max(double hbar) const { return M_PI * hbar / spacing; }
};

inline GridSpec make_grid(int n, double center, double sigma_z,
                          double half_width_sigmas = 8.0) {
  GridSpec g;
  g.n = n;
  g.center = center;
  g.spacing = 2.0 * half_width_sigmas * sigma_z / n;
  return g;
}

/// Conditioned wave function: complex amplitudes over position grid x spin
/// levels (columns ordered m = J .. -J), plus probability lost to regrids.
struct WaveFunction {
  GridSpec grid;
  Eigen::MatrixXcd amp;  // n x (2J+1)
  double discarded = 0.0;

  int spin_dim() const { return static_cast<int>(amp.cols()); }
  double norm_sq() const { return amp.squaredNorm() * grid.spacing; }
  double norm() const { return std::sqrt(norm_sq()); }
  void normalize() { amp /= norm(); }

  /// Position probability weights summed over spin (not including spacing).
  Eigen::VectorXd position_density() const {
    return amp.rowwise().squaredNorm();
  }

  double mean_z() const {
    const Eigen::VectorXd w = position_density();
    double s = 0.0, zsum = 0.0;
    for (int i = 0; i < grid.n; ++i) {
      s += w(i);
      zsum += grid.z(i) * w(i);
    }
    return zsum / s;
  }
};

/// Minimum-uncertainty motional coherent state centered at (z0, p0):
/// position variance z_g^2, momentum variance hbar^2 / (4 z_g^2).
inline Eigen::VectorXcd motional_coherent(const GridSpec& grid, double z0,
                                          double p0, const SystemParams& p) {
  const double zg = p.z_g;
  if (grid.z_min() > z0 - 6.0 * zg || grid.z_max() < z0 + 6.0 * zg)
    throw std::invalid_argument(
        "motional_coherent: grid must cover z0 +/- 6 ground-state widths "
        "([" + std::to_string(z0 - 6.0 * zg) + ", " +
        std::to_string(z0 + 6.0 * zg) + "])");
  Eigen::VectorXcd psi(grid.n);
  for (int i = 0; i < grid.n; ++i) {
    const double dzi = grid.z(i) - z0;
    psi(i) = std::polar(std::exp(-dzi * dzi / (4.0 * zg * zg)),
                        p0 * grid.z(i) / p.hbar);
  }
  psi /= std::sqrt(psi.squaredNorm() * grid.spacing);
  return psi;
}

/// Product of a motional coherent state and a spin coherent state (theta,
/// phi on the Bloch sphere).
inline WaveFunction product_state(const GridSpec& grid, double z0, double p0,
                                  double theta, double phi,
                                  const SystemParams& p) {
  WaveFunction psi;
  psi.grid = grid;
  const Eigen::VectorXcd mot = motional_coherent(grid, z0, p0, p);
  const Eigen::VectorXcd spin = spin_coherent(p.j, theta, phi);
  psi.amp = mot * spin.transpose();
  return psi;
}

/// Caches FFT plans; one instance per thread.
struct FftEngine {
  Eigen::FFT<double> fft;

  void forward(const Eigen::VectorXcd& in, Eigen::VectorXcd& out) {
    out.resize(in.size());
    fft.fwd(out, in);
  }
  void inverse(const Eigen::VectorXcd& in, Eigen::VectorXcd& out) {
    out.resize(in.size());
    fft.inv(out, in);
  }
};

/// Applies a spin operator (axis 0,1,2 -> Jx, Jy, Jz) to every spinor of the
/// wave function, exploiting the tridiagonal/diagonal structure.
inline Eigen::MatrixXcd apply_spin(const Eigen::MatrixXcd& amp, int axis,
                                   double j, double hbar) {
  const int dim = static_cast<int>(amp.cols());
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(amp.rows(), dim);
  if (axis == 2) {
    for (int m = 0; m < dim; ++m) out.col(m) = hbar * (j - m) * amp.col(m);
    return out;
  }
  const Eigen::VectorXd e = jx_offdiag(j, hbar);
  for (int m = 0; m + 1 < dim; ++m) {
    if (axis == 0) {
      out.col(m) += e(m) * amp.col(m + 1);
      out.col(m + 1) += e(m) * amp.col(m);
    } else {
      out.col(m) += Complex(0.0, -e(m)) * amp.col(m + 1);
      out.col(m + 1) += Complex(0.0, e(m)) * amp.col(m);
    }
  }
  return out;
}

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

/// First and second moments of (z, p, Jx, Jy, Jz), plus diagnostics.
struct Moments {
  Vec5 mean = Vec5::Zero();
  Mat5 cov = Mat5::Zero();      // symmetrized central second moments
  double z_third_central = 0.0; // third central moment of z
  double norm_sq = 1.0;
};

inline Moments expectations(const WaveFunction& psi, const SystemParams& p,
                            FftEngine& fft) {
  const int n = psi.grid.n;
  const int dim = psi.spin_dim();
  const double dz = psi.grid.spacing;
  Moments mo;
  mo.norm_sq = psi.norm_sq();
  const double inv_norm = 1.0 / mo.norm_sq;

  // Position moments.
  const Eigen::VectorXd w = psi.position_density();
  double zm = 0.0, z2 = 0.0;
  for (int i = 0; i < n; ++i) {
    zm += psi.grid.z(i) * w(i);
    z2 += psi.grid.z(i) * psi.grid.z(i) * w(i);
  }
  zm *= dz * inv_norm;
  z2 *= dz * inv_norm;
  double z3c = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = psi.grid.z(i) - zm;
    z3c += d * d * d * w(i);
  }
  z3c *= dz * inv_norm;

  // Momentum moments and (p psi) in position space, per spin column.
  Eigen::MatrixXcd pamp(n, dim);
  Eigen::VectorXcd col(n), phi(n), tmp(n);
  double pm = 0.0, p2 = 0.0;
  for (int m = 0; m < dim; ++m) {
    col = psi.amp.col(m);
    fft.forward(col, phi);
    for (int jj = 0; jj < n; ++jj) {
      const double pj = psi.grid.p(jj, p.hbar);
      const double a2 = std::norm(phi(jj));
      pm += pj * a2;
      p2 += pj * pj * a2;
      phi(jj) *= pj;
    }
    fft.inverse(phi, tmp);
    pamp.col(m) = tmp;
  }
  // Parseval: sum |phi|^2 = n * sum |psi|^2, so normalize by the same route.
  const double pnorm = dz / static_cast<double>(n) * inv_norm;
  pm *= pnorm;
  p2 *= pnorm;

  // Symmetrized <zp>.
  double zp = 0.0;
  for (int m = 0; m < dim; ++m)
    for (int i = 0; i < n; ++i)
      zp += psi.grid.z(i) *
            (std::conj(psi.amp(i, m)) * pamp(i, m)).real();
  zp *= dz * inv_norm;

  // Spin first and second moments, and cross moments with z, p.
  Eigen::MatrixXcd japs[3];
  for (int a = 0; a < 3; ++a)
    japs[a] = apply_spin(psi.amp, a, p.j, p.hbar);
  double jmean[3] = {0, 0, 0};
  double zj[3] = {0, 0, 0};
  double pj[3] = {0, 0, 0};
  double jj2[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  for (int a = 0; a < 3; ++a) {
    for (int m = 0; m < dim; ++m) {
      for (int i = 0; i < n; ++i) {
        const Complex ja = japs[a](i, m);
        jmean[a] += (std::conj(psi.amp(i, m)) * ja).real();
        zj[a] += psi.grid.z(i) * (std::conj(psi.amp(i, m)) * ja).real();
        pj[a] += (std::conj(pamp(i, m)) * ja).real();
      }
    }
    for (int bidx = a; bidx < 3; ++bidx)
      jj2[a][bidx] = (japs[a].conjugate().cwiseProduct(japs[bidx])).sum().real();
    jmean[a] *= dz * inv_norm;
    zj[a] *= dz * inv_norm;
    pj[a] *= dz * inv_norm;
  }

  mo.mean << zm, pm, jmean[0], jmean[1], jmean[2];
  mo.cov(0, 0) = z2 - zm * zm;
  mo.cov(1, 1) = p2 - pm * pm;
  mo.cov(0, 1) = zp - zm * pm;
  for (int a = 0; a < 3; ++a) {
    mo.cov(0, 2 + a) = zj[a] - zm * jmean[a];
    mo.cov(1, 2 + a) = pj[a] - pm * jmean[a];
    for (int bidx = a; bidx < 3; ++bidx)
      mo.cov(2 + a, 2 + bidx) =
          jj2[a][bidx] * dz * inv_norm - jmean[a] * jmean[bidx];
  }
  mo.cov = mo.cov.selfadjointView<Eigen::Upper>();
  mo.z_third_central = z3c;
  return mo;
}

inline Moments expectations(const WaveFunction& psi, const SystemParams& p) {
  FftEngine fft;
  return expectations(psi, p, fft);
}

/// Recenter the grid on <z>, shifting amplitudes by whole grid points with
/// zero fill. Requires the state to be localized: 99.99% of the probability
/// inside the inner 2/3 of the grid.
inline void regrid(WaveFunction& psi) {
  const int n = psi.grid.n;
  const Eigen::VectorXd w = psi.position_density();
  const double total = w.sum();
  double inner = 0.0;
  for (int i = n / 6; i < n - n / 6; ++i) inner += w(i);
  if (inner < 0.9999 * total)
    throw std::runtime_error(
        "regrid: state not localized on the inner 2/3 of the grid; increase "
        "the number of grid points");
  const double zm = psi.mean_z();
  const long shift = std::lround((zm - psi.grid.center) / psi.grid.spacing);
  if (shift == 0) return;
  Eigen::MatrixXcd next = Eigen::MatrixXcd::Zero(n, psi.amp.cols());
  double dropped = 0.0;
  for (int i = 0; i < n; ++i) {
    const long src = i + shift;
    if (src >= 0 && src < n)
      next.row(i) = psi.amp.row(static_cast<int>(src));
  }
  for (int i = 0; i < n; ++i) {
    const long dst = i - shift;
    if (dst < 0 || dst >= n) dropped += w(i) * psi.grid.spacing;
  }
  psi.amp = std::move(next);
  psi.grid.center += shift * psi.grid.spacing;
  psi.discarded += dropped;
}

/// Phase-space displacement exp(i(dp z - dz p)/hbar) on the motional factor
/// and rotation exp(-i dtheta (axis . J)/hbar) on the spin factor. Means move,
/// central moments stay (exactly for the displacement, to O(dtheta^2) for the
/// spin covariance spectrum).
inline void displace_rotate(WaveFunction& psi, double dz_shift,
                            double dp_shift, const Eigen::Vector3d& axis,
                            double dtheta, const SystemParams& p,
                            FftEngine& fft) {
  const int n = psi.grid.n;
  if (dp_shift != 0.0 || dz_shift != 0.0) {
    // D(dz,dp) = e^{i dp z/hbar} e^{-i dz p/hbar} e^{-i dz dp/(2 hbar)}
    const Complex global = std::polar(1.0, -dz_shift * dp_shift / (2.0 * p.hbar));
    for (int i = 0; i < n; ++i)
      psi.amp.row(i) *= global * std::polar(1.0, dp_shift * psi.grid.z(i) / p.hbar);
    if (dz_shift != 0.0) {
      Eigen::VectorXcd col(n), phi(n);
      for (int m = 0; m < psi.spin_dim(); ++m) {
        col = psi.amp.col(m);
        fft.forward(col, phi);
        for (int jj = 0; jj < n; ++jj)
          phi(jj) *= std::polar(1.0, -psi.grid.p(jj, p.hbar) * dz_shift / p.hbar);
        fft.inverse(phi, col);
        psi.amp.col(m) = col;
      }
    }
  }
  if (dtheta != 0.0) {
    const SpinOperators ops = spin_matrices(p.j, p.hbar);
    const Eigen::Vector3d u = axis.normalized();
    Eigen::MatrixXcd gen = u.x() * ops.jx + u.y() * ops.jy + u.z() * ops.jz;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(gen);
    Eigen::VectorXcd phases(es.eigenvalues().size());
    for (int i = 0; i < phases.size(); ++i)
      phases(i) = std::polar(1.0, -dtheta * es.eigenvalues()(i) / p.hbar);
    const Eigen::MatrixXcd rot = es.eigenvectors() * phases.asDiagonal() *
                                 es.eigenvectors().adjoint();
    psi.amp = psi.amp * rot.transpose();
  }
}

/// Population of each adiabatic branch (eigenstates of b z Jz + c Jx at each
/// grid point, ascending in energy).
inline Eigen::VectorXd adiabatic_populations(const WaveFunction& psi,
                                             const SystemParams& p) {
  if (std::abs(psi.norm_sq() - 1.0) > 1e-6)
    throw std::invalid_argument("adiabatic_populations: state not normalized");
  const int dim = psi.spin_dim();
  Eigen::VectorXd pops = Eigen::VectorXd::Zero(dim);
  for (int i = 0; i < psi.grid.n; ++i) {
    const AdiabaticSpectrum spec = adiabatic_spectrum(psi.grid.z(i), p);
    for (int bidx = 0; bidx < dim; ++bidx) {
      Complex proj = 0.0;
      for (int m = 0; m < dim; ++m)
        proj += spec.vectors(m, bidx) * psi.amp(i, m);
      pops(bidx) += std::norm(proj) * psi.grid.spacing;
    }
  }
  return pops;
}

/// Shannon entropy of the branch populations, in bits.
inline double branch_entropy(const Eigen::VectorXd& pops) {
  double h = 0.0;
  for (int i = 0; i < pops.size(); ++i)
    if (pops(i) > 1e-300) h -= pops(i) * std::log2(pops(i));
  return h;
}

}  // namespace qtraj
