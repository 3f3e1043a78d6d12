#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "npde/fft.hpp"

namespace npde {

/// Periodic 2-D incompressible Navier-Stokes in vorticity-streamfunction form
///   d(omega)/dt + u d(omega)/dx + v d(omega)/dy = nu lap(omega) + f cos(k_f y),
///   lap(psi) = -omega,  u = d(psi)/dy,  v = -d(psi)/dx
/// on [0, L)^2, stepped with integrating-factor (Lawson) RK4.
struct SolverConfig {
  std::size_t nx = 64;
  std::size_t ny = 64;
  double length = 2.0 * M_PI;
  double viscosity = 1e-2;
  double force = 0.0;
  std::size_t forcing_wavenumber = 4;
  double dt = 0.025;
  /// Solver steps between saved snapshots.
  std::size_t save_stride = 10;
  /// Saved snapshots per trajectory.
  std::size_t n_steps = 14;
  /// Saved-stride intervals integrated and discarded before the first snapshot.
  std::size_t burn_in = 50;
  /// Largest admissible advective Courant number dt (max|u|/dx + max|v|/dy).
  double max_courant = 1.0;
  std::uint64_t seed = 0;

  double dt_save() const { return dt * static_cast<double>(save_stride); }
  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const SolverConfig&) const = default;
};

inline constexpr std::size_t kNumFields = 3;  // omega, v_x, v_y
/// Initial vorticity is band-limited to |k| <= this (integer wavenumbers).
inline constexpr double kInitialMaxMode = 6.0;

/// Precomputed wavenumbers, dealiasing mask, forcing and integrating factors
/// for one configuration. Spectra are single planes [ny, nx/2+1] in the
/// unnormalized rfft2 convention.
class VorticitySolver {
 public:
  using Spectrum = ComplexSpectrum<double>;

  explicit VorticitySolver(const SolverConfig& cfg);

  const SolverConfig& config() const { return cfg_; }

  Spectrum empty() const;
  Spectrum to_spectral(const std::vector<double>& field) const;
  std::vector<double> to_physical(const Spectrum& s) const;

  /// 2/3-rule: zero every mode with 3|k| > N along either axis.
  void dealias(Spectrum& s) const;

  /// Physical velocity recovered from the streamfunction.
  void velocity(const Spectrum& omega_hat, std::vector<double>& u, std::vector<double>& v) const;

  /// Advective Courant number of the current state.
  double courant(const Spectrum& omega_hat) const;

  /// Dealiased advection plus forcing, -(u.grad omega)^ + F^.
  Spectrum rhs(const Spectrum& omega_hat) const;

  /// One time step of size cfg.dt. Throws StepSizeError on a CFL violation.
  Spectrum step(const Spectrum& omega_hat) const;

  /// max |d(u)/dx + d(v)/dy| evaluated spectrally.
  double divergence(const std::vector<double>& u, const std::vector<double>& v) const;

 private:
  SolverConfig cfg_;
  std::size_t half_;
  std::vector<double> kx_, ky_;     // per column / per row
  std::vector<double> k2_;          // |k|^2 per coefficient
  std::vector<unsigned char> keep_; // dealiasing mask
  std::vector<double> decay_full_, decay_half_;
  Spectrum forcing_;
};

/// ns_vorticity_step for a single dealiased vorticity spectrum.
ComplexSpectrum<double> ns_vorticity_step(const ComplexSpectrum<double>& omega_hat,
                                          const SolverConfig& cfg);

/// Random smooth mean-free vorticity: Gaussian coefficients on 1 <= |k| <= 6,
/// scaled to unit RMS.
std::vector<double> initial_vorticity(const SolverConfig& cfg, std::uint64_t seed);

struct Trajectory {
  std::size_t n_steps = 0, ny = 0, nx = 0;
  /// [n_steps][kNumFields][ny][nx]
  std::vector<double> data;
  double force = 0.0;
  double dt_save = 0.0;
  std::uint64_t seed = 0;

  const double* field(std::size_t step, std::size_t f) const {
    return data.data() + (step * kNumFields + f) * ny * nx;
  }
};

Trajectory generate_trajectory(const SolverConfig& cfg);

/// In-memory image of a dataset file. Stored fields are normalized per field
/// with the recorded mean/std (identity stats when normalization is off).
struct Dataset {
  std::uint32_t n_traj = 0, n_steps = 0, n_fields = 0, ny = 0, nx = 0;
  double dt_save = 0.0;
  std::uint32_t burn_in = 0;
  std::uint32_t param_dim = 0;
  std::vector<double> mean, stddev;
  /// [n_traj][param_dim]; column 0 is the forcing amplitude.
  std::vector<double> params;
  /// [n_traj][n_steps][n_fields][ny][nx]
  std::vector<float> data;

  std::size_t frame_size() const { return std::size_t{n_fields} * ny * nx; }
  const float* frame(std::size_t traj, std::size_t step) const {
    return data.data() + (traj * n_steps + step) * frame_size();
  }
  double force(std::size_t traj) const { return params[traj * param_dim]; }

  bool operator==(const Dataset&) const = default;
};

struct DatasetOptions {
  bool normalize = true;
  /// Trajectory-level worker threads; 0 uses every available core.
  int workers = 0;
};

/// One trajectory per forcing value, seeded by (cfg.seed, index).
Dataset generate_dataset(const std::vector<double>& forces, const SolverConfig& cfg,
                         const DatasetOptions& opts = {});

/// Forcing sampled uniformly from [lo, hi] per trajectory.
Dataset generate_dataset(std::size_t n_traj, double lo, double hi, const SolverConfig& cfg,
                         const DatasetOptions& opts = {});

/// The uniform draws generate_dataset uses for the forcing table.
std::vector<double> sample_forces(std::size_t n_traj, double lo, double hi, std::uint64_t seed);

/// Little-endian layout: "NPDE" | version u32 = 1 | n_traj u32 | n_steps u32 |
/// n_fields u32 | ny u32 | nx u32 | dt_save f64 | burn_in u32 | param_dim u32 |
/// mean f64[n_fields] | std f64[n_fields] | params f64[n_traj][param_dim] |
/// data f32[n_traj][n_steps][n_fields][ny][nx].
std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::string& bytes, const std::string& what = "dataset");
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace npde
