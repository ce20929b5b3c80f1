#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "qtraj/classical.hpp"
#include "qtraj/gaussian.hpp"
#include "qtraj/noise.hpp"
#include "qtraj/params.hpp"

namespace qtraj {

/// Dimensionless phase coordinates (zt, pt, nx, ny, nz) used by the distance
/// metric: positions in units of dz, momenta of m omega dz, spin means of
/// J hbar.
using PhaseCoords = Eigen::Matrix<double, 5, 1>;

inline PhaseCoords phase_coords(const ClassicalState& s, const SystemParams&) {
  PhaseCoords c;
  c << s.zt, s.pt, s.n.x(), s.n.y(), s.n.z();
  return c;
}

inline PhaseCoords phase_coords(const GaussianState& s,
                                const SystemParams& p) {
  PhaseCoords c;
  c << s.mean(0) / p.dz, s.mean(1) / (p.m * p.omega * p.dz),
      s.mean(2) / (p.j * p.hbar), s.mean(3) / (p.j * p.hbar),
      s.mean(4) / (p.j * p.hbar);
  return c;
}

template <class State>
double phase_distance(const State& a, const State& b, const SystemParams& p) {
  return (phase_coords(a, p) - phase_coords(b, p)).norm();
}

namespace detail {

/// Moves a unit vector n along the tangent component of `step` by an exact
/// rotation, so the chord displacement equals |tangent step| and the result
/// stays on the sphere.
inline Eigen::Vector3d rotate_on_sphere(const Eigen::Vector3d& n,
                                        const Eigen::Vector3d& step) {
  const Eigen::Vector3d t = step - step.dot(n) * n;
  const double chord = t.norm();
  if (chord < 1e-300) return n;
  const double alpha = 2.0 * std::asin(std::min(1.0, 0.5 * chord));
  const Eigen::Vector3d axis = n.cross(t / chord);
  return Eigen::AngleAxisd(alpha, axis) * n;
}

}  // namespace detail

/// Classical trajectory propagated with fixed-step RK4; ignores the noise
/// buffer (the classical flow is deterministic) but honors the shared
/// stepping contract so fiducial and neighbor stay aligned.
struct ClassicalFlow {
  SystemParams params;
  double dt = 1e-3;  // dtau; omega = 1 internally so tau and t coincide

  using State = ClassicalState;

  double step_size() const { return dt / params.omega; }

  void advance(State& s, std::span<const WienerIncrement> /*noise*/,
               long nsteps) const {
    for (long i = 0; i < nsteps; ++i) s = rk4_step(s, dt, params);
  }

  State displace(const State& fiducial, const PhaseCoords& dir,
                 double eps) const {
    State nb = fiducial;
    nb.zt += eps * dir(0);
    nb.pt += eps * dir(1);
    nb.n = detail::rotate_on_sphere(nb.n,
                                    eps * Eigen::Vector3d(dir(2), dir(3), dir(4)));
    return nb;
  }
};

/// Gaussian-closure quantum trajectory. The neighbor construction shifts the
/// means only (spin mean rotated on its sphere of radius |<J>|) and copies
/// the covariance unchanged, so fiducial and neighbor share all higher
/// cumulants.
struct GaussianFlow {
  SystemParams params;
  double dt = 1e-4;
  SdeScheme scheme = SdeScheme::kStrong15;

  using State = GaussianState;

  double step_size() const { return dt; }

  void advance(State& s, std::span<const WienerIncrement> noise,
               long nsteps) const {
    for (long i = 0; i < nsteps; ++i)
      s = gaussian_step(s, noise[static_cast<std::size_t>(i)], dt, params,
                        scheme);
  }

  State displace(const State& fiducial, const PhaseCoords& dir,
                 double eps) const {
    if (eps > 0.1)
      throw std::invalid_argument(
          "GaussianFlow::displace: eps too large for the spin re-scaling");
    State nb = fiducial;
    nb.mean(0) += eps * dir(0) * params.dz;
    nb.mean(1) += eps * dir(1) * params.m * params.omega * params.dz;
    const double radius = nb.mean.tail<3>().norm();
    const Eigen::Vector3d u = nb.mean.tail<3>() / radius;
    nb.mean.tail<3>() =
        radius *
        detail::rotate_on_sphere(u, eps * Eigen::Vector3d(dir(2), dir(3), dir(4)));
    return nb;
  }
};

struct LyapunovEstimate {
  double lambda = 0.0;                  // 1/time, units of omega
  std::vector<double> log_stretches;    // ln(d_i(T)/eps) per segment
  std::vector<double> running_average;  // partial lambda estimates
  int segments = 0;
  double eps = 0.0;
  double segment_time = 0.0;
  bool converged = false;  // running average varies < 2% over final 20%
};

/// Benettin renormalization over an arbitrary flow: fiducial and neighbor
/// are propagated for T with identical noise increments, the log stretch is
/// accumulated, and the neighbor is restarted a distance eps from the
/// fiducial along the connecting direction.
template <class Flow>
LyapunovEstimate lyapunov_run(const Flow& flow, typename Flow::State s0,
                              double eps, double seg_time, int segments,
                              std::uint64_t seed) {
  if (!(eps > 0.0) || !(seg_time > 0.0) || segments <= 0)
    throw std::invalid_argument("lyapunov_run: eps, T, N must be positive");
  const SystemParams& p = flow.params;
  const long steps = std::lround(seg_time / (p.omega * flow.step_size()));
  NoiseStream noise(seed);

  // Isotropic initial displacement direction.
  PhaseCoords dir;
  for (int i = 0; i < 5; ++i) dir(i) = noise.normal();
  dir.normalize();

  typename Flow::State fid = s0;
  typename Flow::State nbr = flow.displace(fid, dir, eps);

  LyapunovEstimate est;
  est.eps = eps;
  est.segment_time = seg_time;
  est.log_stretches.reserve(segments);
  est.running_average.reserve(segments);
  std::vector<WienerIncrement> buf(static_cast<std::size_t>(steps));
  double sum = 0.0;
  for (int i = 0; i < segments; ++i) {
    for (long s = 0; s < steps; ++s) buf[static_cast<std::size_t>(s)] =
        noise.next(flow.step_size());
    flow.advance(fid, buf, steps);
    flow.advance(nbr, buf, steps);
    const double d = phase_distance(fid, nbr, p);
    if (d < 1e-14)
      throw std::runtime_error(
          "lyapunov_run: trajectory separation underflow; increase eps");
    est.log_stretches.push_back(std::log(d / eps));
    sum += est.log_stretches.back();
    est.running_average.push_back(sum / ((i + 1) * seg_time));
    dir = (phase_coords(nbr, p) - phase_coords(fid, p)) / d;
    nbr = flow.displace(fid, dir, eps);
  }
  est.segments = segments;
  est.lambda = sum / (segments * seg_time);

  const int tail = std::max(1, segments / 5);
  double lo = est.running_average.back(), hi = lo;
  for (int i = segments - tail; i < segments; ++i) {
    lo = std::min(lo, est.running_average[static_cast<std::size_t>(i)]);
    hi = std::max(hi, est.running_average[static_cast<std::size_t>(i)]);
  }
  const double scale = std::max(std::abs(est.lambda), 1e-3);
  est.converged = (hi - lo) <= 0.02 * scale;
  return est;
}

struct EnsembleSpec {
  enum class Family { kClassical, kGaussian };
  Family family = Family::kClassical;
  SystemParams params;
  double e_tilde = 0.58;           // shell energy above the classical ground
                                   // energy (potential_floor), units of E0
  int count = 500;                 // number of fiducials
  double eps = 1e-4;
  double seg_time = 1.0;           // T in units of 1/omega
  int segments = 2000;             // N
  double dt = 1e-3;                // integrator step
  SdeScheme scheme = SdeScheme::kStrong15;
  std::uint64_t seed = 1;
  int workers = 1;
};

struct LyapunovSample {
  int id = 0;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  int segments = 0;
  bool converged = false;
};

struct HistogramBin {
  double lo = 0.0, hi = 0.0;
  long count = 0;
};

struct LyapunovDistribution {
  std::vector<LyapunovSample> samples;
  std::vector<HistogramBin> histogram;  // 20 bins over [0, max lambda]
};

inline std::vector<HistogramBin> make_histogram(
    const std::vector<LyapunovSample>& samples, int nbins = 20) {
  double maxl = 0.0;
  for (const auto& s : samples) maxl = std::max(maxl, s.lambda);
  if (maxl <= 0.0) maxl = 1e-6;
  std::vector<HistogramBin> bins(static_cast<std::size_t>(nbins));
  for (int i = 0; i < nbins; ++i) {
    bins[static_cast<std::size_t>(i)].lo = maxl * i / nbins;
    bins[static_cast<std::size_t>(i)].hi = maxl * (i + 1) / nbins;
  }
  for (const auto& s : samples) {
    int idx = static_cast<int>(s.lambda / maxl * nbins);
    idx = std::clamp(idx, 0, nbins - 1);
    ++bins[static_cast<std::size_t>(idx)].count;
  }
  return bins;
}

/// Runs sample_energy_shell -> lyapunov_run for every fiducial. Quantum
/// fiducials start from a product coherent state centered on the sampled
/// classical phase-space point. Per-fiducial seeds are split from the master
/// seed; members run in parallel across `workers` threads.
inline LyapunovDistribution lyapunov_distribution(const EnsembleSpec& spec) {
  LyapunovDistribution out;
  out.samples.resize(static_cast<std::size_t>(spec.count));

  auto run_one = [&](int id) {
    const std::uint64_t sample_seed = split_seed(spec.seed, 2 * static_cast<std::uint64_t>(id));
    const std::uint64_t run_seed = split_seed(spec.seed, 2 * static_cast<std::uint64_t>(id) + 1);
    std::mt19937_64 rng(sample_seed);
    const ClassicalState ic = sample_energy_shell(
        spec.e_tilde + potential_floor(spec.params), rng, spec.params);
    LyapunovEstimate est;
    if (spec.family == EnsembleSpec::Family::kClassical) {
      ClassicalFlow flow{spec.params, spec.dt};
      est = lyapunov_run(flow, ic, spec.eps, spec.seg_time, spec.segments,
                         run_seed);
    } else {
      const SystemParams& p = spec.params;
      GaussianState g;
      g.mean << ic.zt * p.dz, ic.pt * p.m * p.omega * p.dz,
          p.j * p.hbar * ic.n.x(), p.j * p.hbar * ic.n.y(),
          p.j * p.hbar * ic.n.z();
      g.cov = Mat5::Zero();
      g.cov(0, 0) = p.z_g * p.z_g;
      g.cov(1, 1) = p.hbar * p.hbar / (4.0 * p.z_g * p.z_g);
      g.cov.block<3, 3>(2, 2) =
          0.5 * p.j * p.hbar * p.hbar *
          (Eigen::Matrix3d::Identity() - ic.n * ic.n.transpose());
      GaussianFlow flow{spec.params, spec.dt, spec.scheme};
      est = lyapunov_run(flow, g, spec.eps, spec.seg_time, spec.segments,
                         run_seed);
    }
    out.samples[static_cast<std::size_t>(id)] = {id, run_seed, est.lambda,
                                                 est.segments, est.converged};
  };

  if (spec.workers <= 1) {
    for (int i = 0; i < spec.count; ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < spec.workers; ++w)
      pool.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < spec.count; i = next.fetch_add(1))
          run_one(i);
      });
    for (auto& t : pool) t.join();
  }
  out.histogram = make_histogram(out.samples);
  return out;
}

}  // namespace qtraj
