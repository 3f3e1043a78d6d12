#include "npde/datagen.hpp"

#include <algorithm>
#include <complex>
#include <sstream>

#include "npde/binio.hpp"
#include "npde/error.hpp"
#include "npde/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace npde {

using cplx = std::complex<double>;

void SolverConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("data.solver." + field + ": " + why);
  };
  if (!is_power_of_two(nx) || nx < 4) fail("nx", "must be a power of two >= 4");
  if (!is_power_of_two(ny) || ny < 4) fail("ny", "must be a power of two >= 4");
  if (!(length > 0)) fail("length", "must be positive");
  if (!(viscosity > 0)) fail("viscosity", "must be positive");
  if (!std::isfinite(force)) fail("force", "must be finite");
  if (!(dt > 0)) fail("dt", "must be positive");
  if (save_stride == 0) fail("save_stride", "must be positive");
  if (n_steps == 0) fail("n_steps", "must be positive");
  if (!(max_courant > 0)) fail("max_courant", "must be positive");
  if (3 * forcing_wavenumber > std::min(nx, ny)) {
    fail("forcing_wavenumber", "lies outside the dealiased band");
  }
}

// Solver -------------------------------------------------------------------

VorticitySolver::VorticitySolver(const SolverConfig& cfg) : cfg_(cfg), half_(cfg.nx / 2 + 1) {
  cfg_.validate();
  const std::size_t nx = cfg_.nx, ny = cfg_.ny;
  const double scale = 2.0 * M_PI / cfg_.length;
  kx_.resize(half_);
  ky_.resize(ny);
  for (std::size_t c = 0; c < half_; ++c) kx_[c] = scale * static_cast<double>(c);
  for (std::size_t r = 0; r < ny; ++r) {
    const double k = r <= ny / 2 ? static_cast<double>(r) : static_cast<double>(r) - double(ny);
    ky_[r] = scale * k;
  }
  k2_.resize(ny * half_);
  keep_.resize(ny * half_);
  decay_full_.resize(ny * half_);
  decay_half_.resize(ny * half_);
  for (std::size_t r = 0; r < ny; ++r) {
    const std::size_t ir = r <= ny / 2 ? r : ny - r;
    for (std::size_t c = 0; c < half_; ++c) {
      const std::size_t i = r * half_ + c;
      k2_[i] = kx_[c] * kx_[c] + ky_[r] * ky_[r];
      keep_[i] = (3 * c <= nx && 3 * ir <= ny) ? 1 : 0;
      decay_full_[i] = std::exp(-cfg_.viscosity * k2_[i] * cfg_.dt);
      decay_half_[i] = std::exp(-cfg_.viscosity * k2_[i] * cfg_.dt * 0.5);
    }
  }
  std::vector<double> f(nx * ny);
  const double kf = scale * static_cast<double>(cfg_.forcing_wavenumber);
  for (std::size_t r = 0; r < ny; ++r) {
    const double y = cfg_.length * static_cast<double>(r) / static_cast<double>(ny);
    for (std::size_t c = 0; c < nx; ++c) f[r * nx + c] = cfg_.force * std::cos(kf * y);
  }
  forcing_ = to_spectral(f);
  dealias(forcing_);
  forcing_.plane(0, 0)[0] = 0.0;
}

VorticitySolver::Spectrum VorticitySolver::empty() const {
  Spectrum s;
  s.batch = 1;
  s.channels = 1;
  s.height = cfg_.ny;
  s.width = cfg_.nx;
  s.data.assign(2 * cfg_.ny * half_, 0.0);
  return s;
}

VorticitySolver::Spectrum VorticitySolver::to_spectral(const std::vector<double>& field) const {
  if (field.size() != cfg_.nx * cfg_.ny) {
    throw DimensionError("field has " + std::to_string(field.size()) + " values, grid needs " +
                         std::to_string(cfg_.nx * cfg_.ny));
  }
  Spectrum s = empty();
  fft::rfft2_plane(field.data(), cfg_.ny, cfg_.nx, s.plane(0, 0));
  return s;
}

std::vector<double> VorticitySolver::to_physical(const Spectrum& s) const {
  std::vector<double> out(cfg_.nx * cfg_.ny);
  fft::irfft2_plane(s.plane(0, 0), cfg_.ny, cfg_.nx, out.data());
  return out;
}

void VorticitySolver::dealias(Spectrum& s) const {
  cplx* p = s.plane(0, 0);
  for (std::size_t i = 0; i < keep_.size(); ++i) {
    if (!keep_[i]) p[i] = 0.0;
  }
}

void VorticitySolver::velocity(const Spectrum& omega_hat, std::vector<double>& u,
                               std::vector<double>& v) const {
  Spectrum uh = empty(), vh = empty();
  const cplx* w = omega_hat.plane(0, 0);
  cplx* pu = uh.plane(0, 0);
  cplx* pv = vh.plane(0, 0);
  const cplx I(0.0, 1.0);
  for (std::size_t r = 0; r < cfg_.ny; ++r) {
    for (std::size_t c = 0; c < half_; ++c) {
      const std::size_t i = r * half_ + c;
      if (k2_[i] == 0.0) continue;
      const cplx psi = w[i] / k2_[i];
      pu[i] = I * ky_[r] * psi;
      pv[i] = -I * kx_[c] * psi;
    }
  }
  u = to_physical(uh);
  v = to_physical(vh);
}

double VorticitySolver::courant(const Spectrum& omega_hat) const {
  std::vector<double> u, v;
  velocity(omega_hat, u, v);
  double umax = 0, vmax = 0;
  for (double x : u) umax = std::max(umax, std::abs(x));
  for (double x : v) vmax = std::max(vmax, std::abs(x));
  const double dx = cfg_.length / static_cast<double>(cfg_.nx);
  const double dy = cfg_.length / static_cast<double>(cfg_.ny);
  return cfg_.dt * (umax / dx + vmax / dy);
}

VorticitySolver::Spectrum VorticitySolver::rhs(const Spectrum& omega_hat) const {
  const std::size_t n = cfg_.nx * cfg_.ny;
  Spectrum uh = empty(), vh = empty(), wxh = empty(), wyh = empty();
  const cplx* w = omega_hat.plane(0, 0);
  const cplx I(0.0, 1.0);
  for (std::size_t r = 0; r < cfg_.ny; ++r) {
    for (std::size_t c = 0; c < half_; ++c) {
      const std::size_t i = r * half_ + c;
      if (!keep_[i]) continue;
      wxh.plane(0, 0)[i] = I * kx_[c] * w[i];
      wyh.plane(0, 0)[i] = I * ky_[r] * w[i];
      if (k2_[i] == 0.0) continue;
      const cplx psi = w[i] / k2_[i];
      uh.plane(0, 0)[i] = I * ky_[r] * psi;
      vh.plane(0, 0)[i] = -I * kx_[c] * psi;
    }
  }
  const auto u = to_physical(uh), v = to_physical(vh);
  const auto wx = to_physical(wxh), wy = to_physical(wyh);
  std::vector<double> adv(n);
  for (std::size_t i = 0; i < n; ++i) adv[i] = u[i] * wx[i] + v[i] * wy[i];
  Spectrum out = to_spectral(adv);
  dealias(out);
  cplx* o = out.plane(0, 0);
  const cplx* f = forcing_.plane(0, 0);
  for (std::size_t i = 0; i < keep_.size(); ++i) o[i] = f[i] - o[i];
  // Advection of a periodic field has zero mean; drop the round-off.
  o[0] = 0.0;
  return out;
}

VorticitySolver::Spectrum VorticitySolver::step(const Spectrum& omega_hat) const {
  const double c = courant(omega_hat);
  if (!(c <= cfg_.max_courant)) {
    std::ostringstream os;
    os << "time step " << cfg_.dt << " violates the CFL bound: Courant number " << c << " > "
       << cfg_.max_courant;
    throw StepSizeError(os.str(), c);
  }
  const std::size_t m = keep_.size();
  const double h = cfg_.dt;
  const cplx* w = omega_hat.plane(0, 0);
  Spectrum stage = empty();
  cplx* s = stage.plane(0, 0);

  const Spectrum k1 = rhs(omega_hat);
  const cplx* a = k1.plane(0, 0);
  for (std::size_t i = 0; i < m; ++i) s[i] = decay_half_[i] * (w[i] + 0.5 * h * a[i]);
  const Spectrum k2 = rhs(stage);
  const cplx* b = k2.plane(0, 0);
  for (std::size_t i = 0; i < m; ++i) s[i] = decay_half_[i] * w[i] + 0.5 * h * b[i];
  const Spectrum k3 = rhs(stage);
  const cplx* cc = k3.plane(0, 0);
  for (std::size_t i = 0; i < m; ++i) s[i] = decay_full_[i] * w[i] + h * decay_half_[i] * cc[i];
  const Spectrum k4 = rhs(stage);
  const cplx* d = k4.plane(0, 0);

  Spectrum out = empty();
  cplx* o = out.plane(0, 0);
  for (std::size_t i = 0; i < m; ++i) {
    if (!keep_[i]) continue;
    o[i] = decay_full_[i] * w[i] +
           (h / 6.0) * (decay_full_[i] * a[i] + 2.0 * decay_half_[i] * (b[i] + cc[i]) + d[i]);
  }
  o[0] = w[0];
  return out;
}

double VorticitySolver::divergence(const std::vector<double>& u, const std::vector<double>& v) const {
  Spectrum uh = to_spectral(u), vh = to_spectral(v), div = empty();
  const cplx I(0.0, 1.0);
  for (std::size_t r = 0; r < cfg_.ny; ++r) {
    for (std::size_t c = 0; c < half_; ++c) {
      const std::size_t i = r * half_ + c;
      // Nyquist derivatives are undefined for real data; those modes carry none.
      const bool nyq = c == cfg_.nx / 2 || r == cfg_.ny / 2;
      if (nyq) continue;
      div.plane(0, 0)[i] = I * kx_[c] * uh.plane(0, 0)[i] + I * ky_[r] * vh.plane(0, 0)[i];
    }
  }
  double m = 0;
  for (double x : to_physical(div)) m = std::max(m, std::abs(x));
  return m;
}

ComplexSpectrum<double> ns_vorticity_step(const ComplexSpectrum<double>& omega_hat,
                                          const SolverConfig& cfg) {
  if (omega_hat.batch != 1 || omega_hat.channels != 1 || omega_hat.height != cfg.ny ||
      omega_hat.width != cfg.nx) {
    throw DimensionError("vorticity spectrum does not match the solver grid");
  }
  return VorticitySolver(cfg).step(omega_hat);
}

// Trajectories ---------------------------------------------------------------

std::vector<double> initial_vorticity(const SolverConfig& cfg, std::uint64_t seed) {
  VorticitySolver solver(cfg);
  auto s = solver.empty();
  cplx* p = s.plane(0, 0);
  const std::size_t half = cfg.nx / 2 + 1;
  Rng rng(seed);
  for (std::size_t r = 0; r < cfg.ny; ++r) {
    const double ky = r <= cfg.ny / 2 ? double(r) : double(r) - double(cfg.ny);
    for (std::size_t c = 0; c < half; ++c) {
      const double re = rng.normal(), im = rng.normal();
      const double k = std::hypot(double(c), ky);
      if (k >= 1.0 && k <= kInitialMaxMode) p[r * half + c] = cplx(re, im);
    }
  }
  auto w = solver.to_physical(s);
  double ss = 0;
  for (double x : w) ss += x * x;
  const double rms = std::sqrt(ss / static_cast<double>(w.size()));
  for (auto& x : w) x /= rms;
  return w;
}

Trajectory generate_trajectory(const SolverConfig& cfg) {
  VorticitySolver solver(cfg);
  Trajectory t;
  t.n_steps = cfg.n_steps;
  t.ny = cfg.ny;
  t.nx = cfg.nx;
  t.force = cfg.force;
  t.dt_save = cfg.dt_save();
  t.seed = cfg.seed;
  t.data.resize(cfg.n_steps * kNumFields * cfg.ny * cfg.nx);

  auto w = solver.to_spectral(initial_vorticity(cfg, cfg.seed));
  solver.dealias(w);
  w.plane(0, 0)[0] = 0.0;
  for (std::size_t i = 0; i < cfg.burn_in * cfg.save_stride; ++i) w = solver.step(w);

  const std::size_t plane = cfg.ny * cfg.nx;
  std::vector<double> u, v;
  for (std::size_t s = 0; s < cfg.n_steps; ++s) {
    if (s > 0) {
      for (std::size_t i = 0; i < cfg.save_stride; ++i) w = solver.step(w);
    }
    const auto omega = solver.to_physical(w);
    solver.velocity(w, u, v);
    double* out = t.data.data() + s * kNumFields * plane;
    std::copy(omega.begin(), omega.end(), out);
    std::copy(u.begin(), u.end(), out + plane);
    std::copy(v.begin(), v.end(), out + 2 * plane);
  }
  return t;
}

// Datasets -------------------------------------------------------------------

std::vector<double> sample_forces(std::size_t n_traj, double lo, double hi, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, 0xf0ceULL));
  std::vector<double> f(n_traj);
  for (auto& x : f) x = lo == hi ? lo : rng.uniform(lo, hi);
  return f;
}

Dataset generate_dataset(const std::vector<double>& forces, const SolverConfig& cfg,
                         const DatasetOptions& opts) {
  if (forces.empty()) throw ConfigError("data.n_traj: need at least one trajectory");
  cfg.validate();
  const std::size_t n = forces.size();
  std::vector<Trajectory> trajs(n);
  int workers = opts.workers;
#ifdef _OPENMP
  if (workers <= 0) workers = omp_get_num_procs();
#else
  workers = 1;
#endif
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic) num_threads(workers)
  for (std::size_t i = 0; i < n; ++i) {
    SolverConfig c = cfg;
    c.force = forces[i];
    c.seed = Rng::derive(cfg.seed, i);
    try {
      trajs[i] = generate_trajectory(c);
    } catch (const StepSizeError& e) {
      errors[i] = std::string("trajectory ") + std::to_string(i) + ": " + e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw NumericalError(e);
  }

  Dataset ds;
  ds.n_traj = static_cast<std::uint32_t>(n);
  ds.n_steps = static_cast<std::uint32_t>(cfg.n_steps);
  ds.n_fields = static_cast<std::uint32_t>(kNumFields);
  ds.ny = static_cast<std::uint32_t>(cfg.ny);
  ds.nx = static_cast<std::uint32_t>(cfg.nx);
  ds.dt_save = cfg.dt_save();
  ds.burn_in = static_cast<std::uint32_t>(cfg.burn_in);
  ds.param_dim = 1;
  ds.params = forces;
  ds.mean.assign(kNumFields, 0.0);
  ds.stddev.assign(kNumFields, 1.0);

  const std::size_t plane = cfg.ny * cfg.nx;
  if (opts.normalize) {
    for (std::size_t f = 0; f < kNumFields; ++f) {
      double sum = 0, count = 0;
      for (const auto& t : trajs)
        for (std::size_t s = 0; s < t.n_steps; ++s) {
          const double* p = t.field(s, f);
          for (std::size_t i = 0; i < plane; ++i) sum += p[i];
          count += double(plane);
        }
      const double mean = sum / count;
      double ss = 0;
      for (const auto& t : trajs)
        for (std::size_t s = 0; s < t.n_steps; ++s) {
          const double* p = t.field(s, f);
          for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mean) * (p[i] - mean);
        }
      const double sd = std::sqrt(ss / count);
      ds.mean[f] = mean;
      ds.stddev[f] = sd > 0 ? sd : 1.0;
    }
  }
  ds.data.resize(n * cfg.n_steps * kNumFields * plane);
  float* out = ds.data.data();
  for (const auto& t : trajs)
    for (std::size_t s = 0; s < t.n_steps; ++s)
      for (std::size_t f = 0; f < kNumFields; ++f) {
        const double* p = t.field(s, f);
        for (std::size_t i = 0; i < plane; ++i) {
          *out++ = static_cast<float>((p[i] - ds.mean[f]) / ds.stddev[f]);
        }
      }
  return ds;
}

Dataset generate_dataset(std::size_t n_traj, double lo, double hi, const SolverConfig& cfg,
                         const DatasetOptions& opts) {
  if (n_traj == 0) throw ConfigError("data.n_traj: must be at least 1");
  if (!(lo <= hi)) throw ConfigError("data.f_range: lower bound exceeds upper bound");
  return generate_dataset(sample_forces(n_traj, lo, hi, cfg.seed), cfg, opts);
}

namespace {
constexpr char kMagic[4] = {'N', 'P', 'D', 'E'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string encode_dataset(const Dataset& ds) {
  const std::size_t expect = std::size_t{ds.n_traj} * ds.n_steps * ds.frame_size();
  if (ds.data.size() != expect || ds.mean.size() != ds.n_fields ||
      ds.stddev.size() != ds.n_fields || ds.params.size() != std::size_t{ds.n_traj} * ds.param_dim) {
    throw DimensionError("dataset arrays do not match its header");
  }
  binio::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kVersion);
  for (auto v : {ds.n_traj, ds.n_steps, ds.n_fields, ds.ny, ds.nx}) w.u32(v);
  w.f64(ds.dt_save);
  w.u32(ds.burn_in);
  w.u32(ds.param_dim);
  for (double v : ds.mean) w.f64(v);
  for (double v : ds.stddev) w.f64(v);
  for (double v : ds.params) w.f64(v);
  w.raw(ds.data.data(), ds.data.size() * sizeof(float));
  return w.buffer();
}

Dataset decode_dataset(const std::string& bytes, const std::string& what) {
  binio::Reader r(bytes, what);
  if (r.bytes(4, "magic") != std::string_view(kMagic, 4)) r.fail_at(0, "bad magic (expected NPDE)");
  const auto version = r.u32();
  if (version != kVersion) r.fail_at(4, "unsupported version " + std::to_string(version));
  Dataset ds;
  ds.n_traj = r.u32();
  ds.n_steps = r.u32();
  ds.n_fields = r.u32();
  ds.ny = r.u32();
  ds.nx = r.u32();
  ds.dt_save = r.f64();
  ds.burn_in = r.u32();
  ds.param_dim = r.u32();
  if (ds.n_traj == 0 || ds.n_steps == 0 || ds.n_fields == 0 || ds.ny == 0 || ds.nx == 0) {
    r.fail_at(8, "zero extent in header");
  }
  ds.mean.resize(ds.n_fields);
  ds.stddev.resize(ds.n_fields);
  for (auto& v : ds.mean) v = r.f64();
  for (auto& v : ds.stddev) v = r.f64();
  ds.params.resize(std::size_t{ds.n_traj} * ds.param_dim);
  for (auto& v : ds.params) v = r.f64();
  const std::size_t count = std::size_t{ds.n_traj} * ds.n_steps * ds.frame_size();
  if (r.remaining() != count * sizeof(float)) {
    r.fail("data block holds " + std::to_string(r.remaining()) + " bytes, header implies " +
           std::to_string(count * sizeof(float)));
  }
  ds.data.resize(count);
  r.raw(ds.data.data(), count * sizeof(float), "data");
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  binio::write_file(path, encode_dataset(ds));
}

Dataset read_dataset(const std::string& path) {
  return decode_dataset(binio::read_file(path), "dataset " + path);
}

}  // namespace npde
