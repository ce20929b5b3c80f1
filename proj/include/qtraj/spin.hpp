#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "qtraj/params.hpp"

namespace qtraj {

using Complex = std::complex<double>;

/// Angular momentum matrices in the Jz eigenbasis, ordered m = J, J-1, ..., -J.
struct SpinOperators {
  Eigen::MatrixXcd jx, jy, jz;
};

/// Off-diagonal elements of Jx: jx_offdiag[i] = <m_i|Jx|m_{i+1}> with
/// m_i = J - i. Real and symmetric; Jx is tridiagonal with these couplings.
inline Eigen::VectorXd jx_offdiag(double j, double hbar) {
  const int dim = static_cast<int>(std::lround(2.0 * j)) + 1;
  Eigen::VectorXd e(dim - 1);
  for (int i = 0; i + 1 < dim; ++i) {
    const double m = j - i;  // <m|Jx|m-1> = (hbar/2) sqrt(j(j+1) - m(m-1))
    e(i) = 0.5 * hbar * std::sqrt(j * (j + 1.0) - m * (m - 1.0));
  }
  return e;
}

inline SpinOperators spin_matrices(double j, double hbar = 1.0) {
  const double two_j = 2.0 * j;
  if (j < 0.0 || std::abs(two_j - std::lround(two_j)) > 1e-12)
    throw std::invalid_argument("spin_matrices: 2J must be a non-negative integer");
  const int dim = static_cast<int>(std::lround(two_j)) + 1;
  SpinOperators ops;
  ops.jx = Eigen::MatrixXcd::Zero(dim, dim);
  ops.jy = Eigen::MatrixXcd::Zero(dim, dim);
  ops.jz = Eigen::MatrixXcd::Zero(dim, dim);
  const Eigen::VectorXd e = jx_offdiag(j, hbar);
  for (int i = 0; i < dim; ++i) ops.jz(i, i) = hbar * (j - i);
  for (int i = 0; i + 1 < dim; ++i) {
    ops.jx(i, i + 1) = e(i);
    ops.jx(i + 1, i) = e(i);
    ops.jy(i, i + 1) = Complex(0.0, -e(i));
    ops.jy(i + 1, i) = Complex(0.0, e(i));
  }
  return ops;
}

/// Spin coherent state |theta, phi>: the stretched state |m=J> rotated by
/// Rz(phi) Ry(theta). Amplitudes in the m = J..-J basis are
///   c_m = sqrt(C(2J, J-m)) cos(theta/2)^{J+m} sin(theta/2)^{J-m} e^{-i m phi}.
/// Binomial weights are evaluated in log space so J of a few hundred is fine.
inline Eigen::VectorXcd spin_coherent(double j, double theta, double phi) {
  const double two_j = 2.0 * j;
  if (j < 0.0 || std::abs(two_j - std::lround(two_j)) > 1e-12)
    throw std::invalid_argument("spin_coherent: 2J must be a non-negative integer");
  if (theta < 0.0 || theta > M_PI)
    throw std::invalid_argument("spin_coherent: theta outside [0, pi]");
  const int dim = static_cast<int>(std::lround(two_j)) + 1;
  const double lc = std::log(std::cos(0.5 * theta));
  const double ls = std::log(std::sin(0.5 * theta));
  Eigen::VectorXcd psi(dim);
  for (int i = 0; i < dim; ++i) {
    const double m = j - i;
    const double np = j + m;  // cos exponent
    const double nm = j - m;  // sin exponent
    double logmag = 0.5 * (std::lgamma(two_j + 1.0) - std::lgamma(np + 1.0) -
                           std::lgamma(nm + 1.0));
    // 0^0 = 1 at the poles.
    if (np > 0.0) logmag += np * lc;
    if (nm > 0.0) logmag += nm * ls;
    const double mag = std::isfinite(logmag) ? std::exp(logmag) : 0.0;
    psi(i) = std::polar(mag, -m * phi);
  }
  psi.normalize();  // kill roundoff in the binomial sum
  return psi;
}

/// Eigen-decomposition of the spin potential b z Jz + c Jx at fixed z.
struct AdiabaticSpectrum {
  Eigen::VectorXd energies;  // ascending
  Eigen::MatrixXd vectors;   // column b is the eigenvector of branch b
};

/// Eigenvalues and eigenvectors of a real symmetric tridiagonal matrix by
/// implicit-shift QL iteration. diag has size n, offdiag size n-1.
/// Returns unsorted values in `diag`; columns of `vecs` are the vectors.
inline void tridiag_ql(Eigen::VectorXd& diag, Eigen::VectorXd offdiag,
                       Eigen::MatrixXd& vecs) {
  const int n = static_cast<int>(diag.size());
  vecs = Eigen::MatrixXd::Identity(n, n);
  if (n == 1) return;
  Eigen::VectorXd e(n);
  e.head(n - 1) = offdiag;
  e(n - 1) = 0.0;
  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m;
    do {
      for (m = l; m < n - 1; ++m) {
        const double dd = std::abs(diag(m)) + std::abs(diag(m + 1));
        if (std::abs(e(m)) <= 1e-300 || std::abs(e(m)) <= 2.3e-16 * dd) break;
      }
      if (m != l) {
        if (++iter == 50)
          throw std::runtime_error("tridiag_ql: no convergence in 50 iterations");
        double g = (diag(l + 1) - diag(l)) / (2.0 * e(l));
        double r = std::hypot(g, 1.0);
        g = diag(m) - diag(l) + e(l) / (g + std::copysign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        for (int i = m - 1; i >= l; --i) {
          double f = s * e(i);
          const double bb = c * e(i);
          r = std::hypot(f, g);
          e(i + 1) = r;
          if (r == 0.0) {
            diag(i + 1) -= p;
            e(m) = 0.0;
            break;
          }
          s = f / r;
          c = g / r;
          g = diag(i + 1) - p;
          r = (diag(i) - g) * s + 2.0 * c * bb;
          p = s * r;
          diag(i + 1) = g + p;
          g = c * r - bb;
          for (int kk = 0; kk < n; ++kk) {
            f = vecs(kk, i + 1);
            vecs(kk, i + 1) = s * vecs(kk, i) + c * f;
            vecs(kk, i) = c * vecs(kk, i) - s * f;
          }
        }
        if (r == 0.0 && m - 1 >= l) continue;
        diag(l) -= p;
        e(l) = g;
        e(m) = 0.0;
      }
    } while (m != l);
  }
}

/// Diagonalizes b z Jz + c Jx. Eigenvalues ascending; eigenvector gauge is
/// fixed by making the largest-magnitude component positive, so branch
/// projections are continuous in z.
inline AdiabaticSpectrum adiabatic_spectrum(double z, const SystemParams& p) {
  if (!std::isfinite(z))
    throw std::invalid_argument("adiabatic_spectrum: z must be finite");
  const int dim = p.spin_dim();
  Eigen::VectorXd d(dim);
  for (int i = 0; i < dim; ++i) d(i) = p.b * z * p.hbar * (p.j - i);
  Eigen::VectorXd e = p.c * jx_offdiag(p.j, p.hbar);

  Eigen::MatrixXd vecs;
  tridiag_ql(d, e, vecs);

  // Sort ascending and fix phases.
  std::vector<int> order(dim);
  for (int i = 0; i < dim; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int bidx) { return d(a) < d(bidx); });
  AdiabaticSpectrum spec;
  spec.energies.resize(dim);
  spec.vectors.resize(dim, dim);
  for (int col = 0; col < dim; ++col) {
    spec.energies(col) = d(order[col]);
    Eigen::VectorXd v = vecs.col(order[col]);
    int imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0.0) v = -v;
    spec.vectors.col(col) = v / v.norm();
  }
  return spec;
}

}  // namespace qtraj
