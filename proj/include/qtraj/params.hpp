#pragma once

#include <cmath>
#include <stdexcept>

namespace qtraj {

/// Physical parameters of the spin-oscillator system plus derived scales.
///
/// The coupled Hamiltonian is H = p^2/2m + (1/2) m w^2 z^2 + b z Jz + c Jx.
/// Internally the library works in units hbar = m = omega = 1; lengths are
/// reported in units of the ground-state width z_g = sqrt(hbar/2 m omega)
/// and times in 1/omega.
struct SystemParams {
  double m = 1.0;      // particle mass
  double omega = 1.0;  // trap frequency
  double b = 0.0;      // field-gradient coupling, energy/(length * ang.mom.)
  double c = 0.0;      // transverse coupling, energy/ang.mom.
  double j = 0.5;      // spin magnitude in units of hbar (half-integer)
  double k = 0.0;      // position-measurement strength, 1/(length^2 * time)
  double hbar = 1.0;

  // Derived scales.
  double z_g = 0.0;      // sqrt(hbar / 2 m omega)
  double e_g = 0.0;      // hbar omega / 2
  double dz = 0.0;       // characteristic length Delta z
  double e0 = 0.0;       // m omega^2 dz^2
  double i0 = 0.0;       // motional action m omega dz^2
  double c_tilde = 0.0;  // c * j * hbar / (m omega^2 dz^2)

  int spin_dim() const { return static_cast<int>(std::lround(2.0 * j)) + 1; }

  /// I0 / (J hbar), the action ratio controlling the classical regime.
  double action_ratio() const { return i0 / (j * hbar); }

  /// Dimensionless strength of the spin back-reaction on the motion,
  /// b J hbar / (m omega^2 dz); equals 1 for the standard construction
  /// b = m omega^2 dz / (J hbar).
  double gradient_weight() const { return b * j * hbar / (m * omega * omega * dz); }

  /// Refresh the derived fields after direct edits of the physical ones.
  void refresh() {
    z_g = std::sqrt(hbar / (2.0 * m * omega));
    e_g = 0.5 * hbar * omega;
    e0 = m * omega * omega * dz * dz;
    i0 = m * omega * dz * dz;
    c_tilde = c * j * hbar / e0;
  }
};

/// Builds SystemParams from the dimensionless inputs used throughout:
/// dz given in units of z_g, transverse coupling given as c_tilde.
/// The gradient is fixed by b = m omega^2 dz / (J hbar).
inline SystemParams build_params(double m, double omega, double dz_in_zg,
                                 double j, double c_tilde, double k,
                                 double hbar = 1.0) {
  if (!(m > 0.0) || !(omega > 0.0) || !(hbar > 0.0))
    throw std::invalid_argument("build_params: m, omega, hbar must be positive");
  if (!(dz_in_zg > 0.0))
    throw std::invalid_argument("build_params: dz must be positive");
  const double two_j = 2.0 * j;
  if (!(j > 0.0) || std::abs(two_j - std::lround(two_j)) > 1e-12)
    throw std::invalid_argument("build_params: 2J must be a positive integer");
  if (c_tilde < 0.0 || k < 0.0)
    throw std::invalid_argument("build_params: c_tilde and k must be non-negative");

  SystemParams p;
  p.m = m;
  p.omega = omega;
  p.j = j;
  p.k = k;
  p.hbar = hbar;
  p.z_g = std::sqrt(hbar / (2.0 * m * omega));
  p.dz = dz_in_zg * p.z_g;
  p.e_g = 0.5 * hbar * omega;
  p.e0 = m * omega * omega * p.dz * p.dz;
  p.i0 = m * omega * p.dz * p.dz;
  p.b = m * omega * omega * p.dz / (j * hbar);
  p.c = c_tilde * p.e0 / (j * hbar);
  p.c_tilde = c_tilde;
  return p;
}

}  // namespace qtraj
