// Batch experiment runner: reproduces the figure-level scenarios and writes
// plot-ready CSVs plus a metadata JSON per run.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtraj/classical.hpp"
#include "qtraj/gaussian.hpp"
#include "qtraj/io.hpp"
#include "qtraj/lyapunov.hpp"
#include "qtraj/noise.hpp"
#include "qtraj/params.hpp"
#include "qtraj/sse.hpp"
#include "qtraj/wavefunction.hpp"

namespace {

using namespace qtraj;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat key=value configuration with section-prefixed keys
/// ("system.j", "num.dt", ...). CLI flags override file keys, file keys
/// override preset keys, preset keys override defaults.
class Config {
 public:
  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) {
    if (!has(key)) values_[key] = fallback;
    return values_[key];
  }

  double num(const std::string& key, double fallback) {
    if (!has(key)) values_[key] = fmt_double(fallback);
    const std::string& s = values_[key];
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
      throw ConfigError("config key '" + key + "': not a number: " + s);
    return v;
  }

  double require(const std::string& key) {
    if (!has(key)) throw ConfigError("missing required config key: " + key);
    return num(key, 0.0);
  }

  long integer(const std::string& key, long fallback) {
    const double v = num(key, static_cast<double>(fallback));
    const long i = std::lround(v);
    if (static_cast<double>(i) != v)
      throw ConfigError("config key '" + key + "': expected an integer");
    return i;
  }

  nlohmann::json resolved() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

 private:
  std::map<std::string, std::string> values_;
};

void load_config_file(Config& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": empty key or value");
    cfg.set(key, value);
  }
}

void apply_preset(Config& cfg, const std::string& name) {
  using KV = std::vector<std::pair<std::string, std::string>>;
  static const std::map<std::string, KV> presets = {
      {"fig1",
       {{"system.j", "0.5"},
        {"system.dz_zg", "22"},
        {"system.c_tilde", "0.41322314049586778"},  // c = 200 E_g / (J hbar)
        {"system.k", "0.1"},                        // omega / 20 z_g^2
        {"ic.zt0", "1.7272727272727273"},           // z0 = 38 z_g
        {"ic.theta", "1.5707963267948966"},
        {"num.dt", "1e-3"},
        {"num.tau_max", "30"},
        {"num.nz", "4096"},
        {"num.grid_halfwidth_zg", "48"},
        {"num.sample_every", "50"},
        {"num.regrid_every", "10"},
        {"num.track_branches", "1"}}},
      {"fig2",
       {{"system.j", "200"},
        {"system.dz_zg", "45"},
        {"system.c_tilde", "0.4"},
        {"system.k", "0.25"},  // omega / 8 z_g^2
        {"ic.zt0", "1.6888888888888889"},  // z0 = 76 z_g
        {"ic.theta", "3.141592653589793"},
        {"num.dt", "1e-3"},
        {"num.tau_max", "62.832"},
        {"num.sample_every", "10"}}},
      {"fig2-chaotic",
       {{"system.j", "200"},
        {"system.dz_zg", "45"},
        {"system.c_tilde", "0.4"},
        {"system.k", "0.25"},
        {"ic.zt0", "1.9777777777777779"},  // z0 = 89 z_g
        {"ic.theta", "3.141592653589793"},
        {"num.dt", "1e-3"},
        {"num.tau_max", "62.832"},
        {"num.sample_every", "10"}}},
      {"fig3",
       {{"system.j", "200"},
        {"system.dz_zg", "31.622776601683793"},  // I0/J = 2.5
        {"system.c_tilde", "0.4"},
        {"system.k", "0.25"},
        {"ic.e_tilde", "0.08"},
        {"num.dt", "1e-3"},
        {"num.tau_max", "4000"},
        {"num.sample_every", "20"},
        {"poincare.count", "6"},
        {"poincare.quantum_count", "2"},
        {"poincare.quantum_tau_max", "400"}}},
      {"fig5",
       {{"system.j", "200"},
        {"system.dz_zg", "45"},  // I0/J = 5.0625
        {"system.c_tilde", "0.4"},
        {"system.k", "0.25"},
        {"ic.e_tilde", "0.58"},
        {"lyapunov.family", "classical"},
        {"lyapunov.count", "500"},
        {"lyapunov.eps", "1e-4"},
        {"lyapunov.T", "1"},
        {"lyapunov.N", "2000"},
        {"num.dt", "1e-3"}}},
      {"fig5-quantum",
       {{"system.j", "200"},
        {"system.dz_zg", "45"},
        {"system.c_tilde", "0.4"},
        {"system.k", "0.25"},
        {"ic.e_tilde", "0.58"},
        {"lyapunov.family", "gaussian"},
        {"lyapunov.count", "100"},
        {"lyapunov.eps", "1e-4"},
        {"lyapunov.T", "1"},
        {"lyapunov.N", "500"},
        {"num.dt", "1e-4"}}},
      {"closure",
       {{"system.j", "20"},
        {"system.dz_zg", "14.23024947075771"},  // I0/J = 5.0625 at J = 20
        {"system.c_tilde", "0.4"},
        {"system.k", "0.25"},
        {"ic.zt0", "0.8"},  // regular orbit on one side of the trap center
        {"ic.theta", "3.141592653589793"},
        {"num.dt", "1e-3"},
        {"num.tau_max", "31.416"},
        {"num.nz", "1024"},
        {"num.grid_halfwidth_zg", "14"},
        {"num.sample_every", "20"}}},
  };
  const auto it = presets.find(name);
  if (it == presets.end()) {
    std::string known;
    for (const auto& [k, v] : presets) known += (known.empty() ? "" : ", ") + k;
    throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
  }
  for (const auto& [k, v] : it->second) cfg.set(k, v);
}

SystemParams params_from(Config& cfg) {
  try {
    return build_params(cfg.num("system.m", 1.0), cfg.num("system.omega", 1.0),
                        cfg.require("system.dz_zg"), cfg.require("system.j"),
                        cfg.num("system.c_tilde", 0.0),
                        cfg.num("system.k", 0.0), cfg.num("system.hbar", 1.0));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

SdeScheme scheme_from(Config& cfg) {
  const std::string s = cfg.str("num.scheme", "strong-1.5");
  if (s == "strong-1.5") return SdeScheme::kStrong15;
  if (s == "euler-maruyama") return SdeScheme::kEulerMaruyama;
  throw ConfigError("num.scheme must be strong-1.5 or euler-maruyama");
}

ClassicalState classical_ic(Config& cfg, std::uint64_t seed,
                            const SystemParams& p) {
  if (cfg.has("ic.e_tilde")) {
    // shell energies are quoted above the classical ground energy
    std::mt19937_64 rng(split_seed(seed, 0));
    return sample_energy_shell(
        cfg.num("ic.e_tilde", 0.0) + potential_floor(p), rng, p);
  }
  ClassicalState s;
  s.zt = cfg.require("ic.zt0");
  s.pt = cfg.num("ic.pt0", 0.0);
  const double th = cfg.num("ic.theta", 0.0);
  const double ph = cfg.num("ic.phi", 0.0);
  s.n = Eigen::Vector3d(std::sin(th) * std::cos(ph),
                        std::sin(th) * std::sin(ph), std::cos(th));
  return s;
}

std::filesystem::path resolve_out(const std::string& out_flag,
                                  const std::string& kind,
                                  const std::string& preset,
                                  std::uint64_t seed) {
  if (!out_flag.empty()) return out_flag;
  const char* env = std::getenv("QTRAJ_OUT");
  const std::filesystem::path root = env ? env : "runs";
  std::string leaf = kind;
  if (!preset.empty()) leaf += "-" + preset;
  leaf += "-s" + std::to_string(seed);
  return root / leaf;
}

const std::vector<std::string> kTrajectoryColumns = {
    "tau",  "z_mean", "p_mean", "jx",   "jy",   "jz",          "record_y",
    "czz",  "cpp",    "czp",    "czjx", "czjy", "czjz",        "norm_defect",
    "branch_entropy"};

void append_row(CsvBuilder& csv, const TrajectoryRow& row) {
  csv.row({row.tau, row.mean(0), row.mean(1), row.mean(2), row.mean(3),
           row.mean(4), row.record_y, row.czz, row.cpp, row.czp, row.czjx,
           row.czjy, row.czjz, row.norm_defect, row.branch_entropy});
}

nlohmann::json base_metadata(const std::string& kind,
                             const std::string& preset, std::uint64_t seed,
                             Config& cfg) {
  nlohmann::json meta;
  meta["kind"] = kind;
  if (!preset.empty()) meta["preset"] = preset;
  meta["seed"] = seed;
  meta["generator"] = NoiseStream::generator_id();
  meta["config"] = cfg.resolved();
  return meta;
}

// --- subcommand bodies ----------------------------------------------------

int run_classical(Config& cfg, const std::string& preset, std::uint64_t seed,
                  const std::string& out_flag) {
  const SystemParams p = params_from(cfg);
  const ClassicalState s0 = classical_ic(cfg, seed, p);
  const double dtau = cfg.num("num.dt", 1e-3);
  const double tau_max = cfg.require("num.tau_max");
  IntegrateOptions opt;
  opt.sample_every = static_cast<int>(cfg.integer("num.sample_every", 10));
  const ClassicalTrajectory traj = integrate_classical(s0, tau_max, dtau, p, opt);

  OutputDir out(resolve_out(out_flag, "classical", preset, seed));
  CsvBuilder csv({"tau", "zt", "pt", "nx", "ny", "nz", "e_tilde"});
  for (const auto& s : traj.samples)
    csv.row({s.tau, s.state.zt, s.state.pt, s.state.n.x(), s.state.n.y(),
             s.state.n.z(), energy(s.state, p)});
  out.write_csv("trajectory.csv", csv);
  nlohmann::json meta = base_metadata("classical", preset, seed, cfg);
  meta["max_norm_drift"] = traj.max_norm_drift;
  meta["norm_warning"] = traj.norm_warning;
  out.write_metadata(meta);
  std::cout << "wrote " << out.path().string() << "\n";
  return 0;
}

int run_sse(Config& cfg, const std::string& preset, std::uint64_t seed,
            const std::string& out_flag) {
  const SystemParams p = params_from(cfg);
  const double zt0 = cfg.require("ic.zt0");
  const double pt0 = cfg.num("ic.pt0", 0.0);
  const double z0 = zt0 * p.dz;
  const double p0 = pt0 * p.m * p.omega * p.dz;
  const int nz = static_cast<int>(cfg.integer("num.nz", 1024));
  const double hw = cfg.num("num.grid_halfwidth_zg", 14.0);
  const GridSpec grid = make_grid(nz, z0, p.z_g, hw);
  WaveFunction psi = product_state(grid, z0, p0, cfg.num("ic.theta", 0.0),
                                   cfg.num("ic.phi", 0.0), p);

  SseOptions opt;
  opt.sample_every = static_cast<int>(cfg.integer("num.sample_every", 10));
  opt.regrid_every = static_cast<int>(cfg.integer("num.regrid_every", 20));
  opt.track_branches = cfg.integer("num.track_branches", 0) != 0;
  NoiseStream noise(seed);
  FftEngine fft;
  const SseTrajectory traj =
      propagate_sse(psi, noise, cfg.require("num.tau_max"),
                    cfg.num("num.dt", 1e-3), p, fft, opt);

  OutputDir out(resolve_out(out_flag, "sse", preset, seed));
  CsvBuilder csv(kTrajectoryColumns);
  for (const auto& row : traj.rows) append_row(csv, row);
  out.write_csv("trajectory.csv", csv);
  nlohmann::json meta = base_metadata("sse", preset, seed, cfg);
  meta["discarded_probability"] = traj.discarded;
  meta["max_norm_defect"] = traj.max_norm_defect;
  out.write_metadata(meta);
  std::cout << "wrote " << out.path().string() << "\n";
  return 0;
}

int run_gaussian(Config& cfg, const std::string& preset, std::uint64_t seed,
                 const std::string& out_flag) {
  const SystemParams p = params_from(cfg);
  const double z0 = cfg.require("ic.zt0") * p.dz;
  const double p0 = cfg.num("ic.pt0", 0.0) * p.m * p.omega * p.dz;
  const GaussianState g0 = initial_gaussian(
      z0, p0, cfg.num("ic.theta", 0.0), cfg.num("ic.phi", 0.0), p);
  GaussianOptions opt;
  opt.scheme = scheme_from(cfg);
  opt.sample_every = static_cast<int>(cfg.integer("num.sample_every", 10));
  NoiseStream noise(seed);
  const GaussianTrajectory traj = propagate_gaussian(
      g0, noise, cfg.require("num.tau_max"), cfg.num("num.dt", 1e-3), p, opt);

  OutputDir out(resolve_out(out_flag, "gaussian", preset, seed));
  CsvBuilder csv(kTrajectoryColumns);
  for (const auto& row : traj.rows) append_row(csv, row);
  out.write_csv("trajectory.csv", csv);
  nlohmann::json meta = base_metadata("gaussian", preset, seed, cfg);
  meta["scheme"] = scheme_id(opt.scheme);
  out.write_metadata(meta);
  std::cout << "wrote " << out.path().string() << "\n";
  return 0;
}

int run_poincare(Config& cfg, const std::string& preset, std::uint64_t seed,
                 const std::string& out_flag) {
  const SystemParams p = params_from(cfg);
  const double dtau = cfg.num("num.dt", 1e-3);
  const double tau_max = cfg.require("num.tau_max");
  const long count = cfg.integer("poincare.count", 4);
  const long qcount = cfg.integer("poincare.quantum_count", 0);
  // shell energies are quoted above the classical ground energy
  const double e_tilde = cfg.require("ic.e_tilde") + potential_floor(p);

  OutputDir out(resolve_out(out_flag, "poincare", preset, seed));
  nlohmann::json meta = base_metadata("poincare", preset, seed, cfg);
  nlohmann::json ics = nlohmann::json::array();

  CsvBuilder csv({"traj_id", "tau", "zt", "pt", "nx", "ny", "nz"});
  for (long id = 0; id < count; ++id) {
    std::mt19937_64 rng(split_seed(seed, static_cast<std::uint64_t>(id)));
    const ClassicalState s0 = sample_energy_shell(e_tilde, rng, p);
    ics.push_back({{"id", id},
                   {"zt", s0.zt},
                   {"pt", s0.pt},
                   {"n", {s0.n.x(), s0.n.y(), s0.n.z()}}});
    for (const SectionPoint& sp : poincare_section(s0, tau_max, dtau, p))
      csv.row({static_cast<double>(id), sp.tau, sp.zt, sp.pt, sp.nx, sp.ny,
               sp.nz});
  }
  out.write_csv("classical_section.csv", csv);

  if (qcount > 0) {
    const double qtau = cfg.num("poincare.quantum_tau_max", tau_max);
    const int qsample = static_cast<int>(cfg.integer("num.sample_every", 20));
    CsvBuilder qcsv({"traj_id", "tau", "zt", "pt", "nx", "ny", "nz"});
    for (long id = 0; id < qcount; ++id) {
      std::mt19937_64 rng(
          split_seed(seed, 1000 + static_cast<std::uint64_t>(id)));
      const ClassicalState s0 = sample_energy_shell(e_tilde, rng, p);
      GaussianState g = initial_gaussian(0, 0, 0, 0, p);
      g.mean << s0.zt * p.dz, s0.pt * p.m * p.omega * p.dz,
          p.j * p.hbar * s0.n.x(), p.j * p.hbar * s0.n.y(),
          p.j * p.hbar * s0.n.z();
      g.cov.block<3, 3>(2, 2) =
          0.5 * p.j * p.hbar * p.hbar *
          (Eigen::Matrix3d::Identity() - s0.n * s0.n.transpose());
      GaussianOptions opt;
      opt.scheme = scheme_from(cfg);
      opt.sample_every = qsample;
      NoiseStream noise(
          split_seed(seed, 2000 + static_cast<std::uint64_t>(id)));
      const GaussianTrajectory traj =
          propagate_gaussian(g, noise, qtau, cfg.num("num.dt", 1e-3), p, opt);
      std::vector<SeriesPoint> series;
      series.reserve(traj.rows.size());
      for (const auto& row : traj.rows) {
        SeriesPoint sp;
        sp.tau = row.tau;
        sp.zt = row.mean(0) / p.dz;
        sp.pt = row.mean(1) / (p.m * p.omega * p.dz);
        sp.n = row.mean.tail<3>() / (p.j * p.hbar);
        series.push_back(sp);
      }
      for (const SectionPoint& sp : section_from_series(series))
        qcsv.row({static_cast<double>(id), sp.tau, sp.zt, sp.pt, sp.nx, sp.ny,
                  sp.nz});
    }
    out.write_csv("quantum_section.csv", qcsv);
  }

  meta["initial_conditions"] = ics;
  out.write_metadata(meta);
  std::cout << "wrote " << out.path().string() << "\n";
  return 0;
}

int run_lyapunov(Config& cfg, const std::string& preset, std::uint64_t seed,
                 long workers, const std::string& out_flag) {
  EnsembleSpec spec;
  spec.params = params_from(cfg);
  const std::string family = cfg.str("lyapunov.family", "classical");
  if (family == "classical") {
    spec.family = EnsembleSpec::Family::kClassical;
  } else if (family == "gaussian") {
    spec.family = EnsembleSpec::Family::kGaussian;
  } else {
    throw ConfigError("lyapunov.family must be classical or gaussian");
  }
  spec.e_tilde = cfg.require("ic.e_tilde");
  spec.count = static_cast<int>(cfg.integer("lyapunov.count", 100));
  spec.eps = cfg.num("lyapunov.eps", 1e-4);
  spec.seg_time = cfg.num("lyapunov.T", 1.0);
  spec.segments = static_cast<int>(cfg.integer(
      "lyapunov.N", spec.family == EnsembleSpec::Family::kClassical ? 2000
                                                                    : 500));
  spec.dt = cfg.num(
      "num.dt",
      spec.family == EnsembleSpec::Family::kClassical ? 1e-3 : 1e-4);
  spec.scheme = scheme_from(cfg);
  spec.seed = seed;
  spec.workers = static_cast<int>(workers);

  const LyapunovDistribution dist = lyapunov_distribution(spec);

  OutputDir out(resolve_out(out_flag, "lyapunov", preset, seed));
  CsvBuilder samples({"id", "seed", "lambda", "segments", "converged"});
  double mean = 0.0;
  long converged = 0;
  for (const auto& s : dist.samples) {
    samples.row({static_cast<double>(s.id), static_cast<double>(s.seed),
                 s.lambda, static_cast<double>(s.segments),
                 s.converged ? 1.0 : 0.0});
    mean += s.lambda;
    converged += s.converged ? 1 : 0;
  }
  mean /= static_cast<double>(dist.samples.size());
  out.write_csv("samples.csv", samples);

  CsvBuilder hist({"bin_lo", "bin_hi", "count"});
  for (const auto& b : dist.histogram)
    hist.row({b.lo, b.hi, static_cast<double>(b.count)});
  out.write_csv("histogram.csv", hist);

  nlohmann::json meta = base_metadata("lyapunov", preset, seed, cfg);
  meta["family"] = family;
  meta["lambda_mean"] = mean;
  meta["converged_count"] = converged;
  meta["seed_split"] = "splitmix64(master, 2*id | 2*id+1)";
  out.write_metadata(meta);
  std::cout << "wrote " << out.path().string() << " lambda_mean=" << mean
            << "\n";
  return 0;
}

int run_compare(Config& cfg, const std::string& preset, std::uint64_t seed,
                bool force, const std::string& out_flag) {
  const SystemParams p = params_from(cfg);
  if (p.j > 30.0 && !force)
    throw ConfigError(
        "compare: J > 30 makes the full solver expensive; pass --force to "
        "override the cap");
  const double z0 = cfg.require("ic.zt0") * p.dz;
  const double p0 = cfg.num("ic.pt0", 0.0) * p.m * p.omega * p.dz;
  const double theta = cfg.num("ic.theta", 0.0);
  const double phi = cfg.num("ic.phi", 0.0);
  const double dt = cfg.num("num.dt", 1e-3);
  const double tau_max = cfg.require("num.tau_max");
  const int sample_every =
      static_cast<int>(cfg.integer("num.sample_every", 20));

  const int nz = static_cast<int>(cfg.integer("num.nz", 1024));
  const GridSpec grid =
      make_grid(nz, z0, p.z_g, cfg.num("num.grid_halfwidth_zg", 14.0));
  WaveFunction psi = product_state(grid, z0, p0, theta, phi, p);
  NoiseStream ns(seed);
  FftEngine fft;
  SseOptions sse_opt;
  sse_opt.sample_every = sample_every;
  sse_opt.regrid_every = static_cast<int>(cfg.integer("num.regrid_every", 20));
  const SseTrajectory exact =
      propagate_sse(psi, ns, tau_max, dt, p, fft, sse_opt);

  const GaussianState g0 = initial_gaussian(z0, p0, theta, phi, p);
  NoiseStream ng(seed);  // identical dW stream step for step
  GaussianOptions gopt;
  gopt.scheme = scheme_from(cfg);
  gopt.sample_every = sample_every;
  const GaussianTrajectory approx =
      propagate_gaussian(g0, ng, tau_max, dt, p, gopt);

  OutputDir out(resolve_out(out_flag, "compare", preset, seed));
  CsvBuilder scsv(kTrajectoryColumns), gcsv(kTrajectoryColumns);
  for (const auto& row : exact.rows) append_row(scsv, row);
  for (const auto& row : approx.rows) append_row(gcsv, row);
  out.write_csv("sse_trajectory.csv", scsv);
  out.write_csv("gaussian_trajectory.csv", gcsv);

  // phase-space-scale normalized differences, motional and spin sectors
  Vec5 scale;
  scale << p.dz, p.m * p.omega * p.dz, p.j * p.hbar, p.j * p.hbar,
      p.j * p.hbar;
  CsvBuilder dcsv({"tau", "zp_diff", "spin_diff", "czz_rel_diff"});
  double zp2 = 0.0, spin2 = 0.0, czz2 = 0.0, czzref2 = 0.0;
  const std::size_t n = std::min(exact.rows.size(), approx.rows.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Vec5 d =
        (exact.rows[i].mean - approx.rows[i].mean).cwiseQuotient(scale);
    const double zp = d.head<2>().norm();
    const double spin = d.tail<3>().norm();
    const double czd = exact.rows[i].czz - approx.rows[i].czz;
    dcsv.row({exact.rows[i].tau, zp, spin,
              exact.rows[i].czz != 0.0 ? czd / exact.rows[i].czz : 0.0});
    zp2 += zp * zp;
    spin2 += spin * spin;
    czz2 += czd * czd;
    czzref2 += exact.rows[i].czz * exact.rows[i].czz;
  }
  out.write_csv("difference.csv", dcsv);

  nlohmann::json meta = base_metadata("compare", preset, seed, cfg);
  meta["scheme"] = scheme_id(gopt.scheme);
  meta["rms_zp"] = std::sqrt(zp2 / static_cast<double>(n));
  meta["rms_spin"] = std::sqrt(spin2 / static_cast<double>(n));
  meta["rms_czz_rel"] = std::sqrt(czz2 / czzref2);
  out.write_metadata(meta);
  std::cout << "wrote " << out.path().string()
            << " rms_zp=" << std::sqrt(zp2 / static_cast<double>(n))
            << " rms_spin=" << std::sqrt(spin2 / static_cast<double>(n))
            << " rms_czz_rel=" << std::sqrt(czz2 / czzref2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "qtraj: classical, stochastic-Schrodinger and Gaussian-closure "
      "trajectories of a continuously measured spin-oscillator"};
  app.require_subcommand(1);

  struct Common {
    std::string config_path;
    std::string preset;
    std::uint64_t seed = 1;
    std::string out;
    long workers = 1;
    std::vector<std::string> sets;
    bool force = false;
  };
  std::map<std::string, Common> opts;
  for (const std::string name :
       {"classical", "sse", "gaussian", "poincare", "lyapunov", "compare"}) {
    CLI::App* sub = app.add_subcommand(name);
    Common& c = opts[name];
    sub->add_option("--config", c.config_path, "key=value config file");
    sub->add_option("--preset", c.preset,
                    "parameter preset (fig1, fig2, fig2-chaotic, fig3, fig5, "
                    "fig5-quantum, closure)");
    sub->add_option("--seed", c.seed, "master RNG seed");
    sub->add_option("--out", c.out,
                    "output directory (default: $QTRAJ_OUT/<run name>)");
    sub->add_option("--workers", c.workers, "parallel workers (ensembles)");
    sub->add_option("--set", c.sets, "override a config key, e.g. num.dt=1e-4");
    if (name == "compare")
      sub->add_flag("--force", c.force, "lift the J <= 30 cap");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  Common& c = opts[name];

  try {
    Config cfg;
    if (!c.preset.empty()) apply_preset(cfg, c.preset);
    if (!c.config_path.empty()) load_config_file(cfg, c.config_path);
    for (const std::string& kv : c.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == kv.size())
        throw ConfigError("--set expects key=value, got: " + kv);
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.workers < 1) throw ConfigError("--workers must be >= 1");

    if (name == "classical") return run_classical(cfg, c.preset, c.seed, c.out);
    if (name == "sse") return run_sse(cfg, c.preset, c.seed, c.out);
    if (name == "gaussian") return run_gaussian(cfg, c.preset, c.seed, c.out);
    if (name == "poincare") return run_poincare(cfg, c.preset, c.seed, c.out);
    if (name == "lyapunov")
      return run_lyapunov(cfg, c.preset, c.seed, c.workers, c.out);
    if (name == "compare")
      return run_compare(cfg, c.preset, c.seed, c.force, c.out);
    return 2;
  } catch (const ConfigError& e) {
    nlohmann::json err = {{"error", "invalid-config"}, {"detail", e.what()}};
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", "numerical-failure"}, {"detail", e.what()}};
    std::cerr << err.dump() << "\n";
    return 3;
  }
}
