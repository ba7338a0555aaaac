#pragma once

#include "moment_glioma/core.hpp"
#include "moment_glioma/kinetic_system.hpp"

#include <array>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace moment_glioma {

enum class BoundaryKind { Thermal, Periodic };

BoundaryKind parse_boundary(const std::string& name);
std::string to_string(BoundaryKind kind);

struct SolverConfig {
  double cfl = 0.25;
  double weno_theta = 1e-6;
  double weno_z = 2.0;
  double t_end = 1.0;
  double realizability_floor = 1e-10;
  double dg_newton_tol = 1e-12;
  int dg_newton_maxit = 30;
  BoundaryKind boundary = BoundaryKind::Thermal;

  void validate() const;
  friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

/// Moment vectors on a grid, one column per cell (cell index = GridSpec::index).
struct MomentField {
  GridSpec grid;
  MatX values;

  MomentField() = default;
  MomentField(GridSpec g, int components) : grid(g), values(MatX::Zero(components, static_cast<Eigen::Index>(g.cell_count()))) {}

  [[nodiscard]] int components() const { return static_cast<int>(values.rows()); }
  [[nodiscard]] auto cell(std::size_t c) { return values.col(static_cast<Eigen::Index>(c)); }
  [[nodiscard]] auto cell(std::size_t c) const { return values.col(static_cast<Eigen::Index>(c)); }
  /// Sum of rho dx dy.
  [[nodiscard]] double total_mass() const;
  [[nodiscard]] std::vector<double> density() const;
};

/// 1/2 (F(uL) + F(uR) - C (uR - uL)) from precomputed fluxes.
VecX lax_friedrichs_flux(const VecX& u_left, const VecX& u_right, const VecX& flux_left, const VecX& flux_right,
                         double wave_speed);

template <typename Flux>
VecX lax_friedrichs_flux(const VecX& u_left, const VecX& u_right, Flux&& flux, double wave_speed) {
  return lax_friedrichs_flux(u_left, u_right, flux(u_left), flux(u_right), wave_speed);
}

/// (w(a) a + w(b) b) / (w(a) + w(b)) with w(s) = (theta + dx |s|)^(-z).
double weno2_slope(double d_minus, double d_plus, double dx, double theta = 1e-6, double z = 2.0);

struct FaceValues {
  VecX minus;  // at the lower face (i - 1/2)
  VecX plus;   // at the upper face (i + 1/2)
  bool fallback = false;  // componentwise reconstruction was used
};

/// Linear reconstruction inside the centre cell with WENO2 slopes in characteristic variables
/// of `basis`. Eigenvalues closer than 1e-6 (relative) form one field, limited through the
/// Euclidean norm of its projected difference; for simple eigenvalues this is the scalar WENO2
/// on unit-normalised eigenvectors. Invalid bases fall back to componentwise limiting.
FaceValues characteristic_reconstruct(const VecX& u_left, const VecX& u_center, const VecX& u_right, double dx,
                                      const CharacteristicBasis& basis, double theta = 1e-6, double z = 2.0);

struct LimitedValue {
  VecX value;
  double theta = 1.0;
};

/// Largest theta in [0, 1] (bisection to 1e-12) with u_mean + theta (u_face - u_mean) satisfying
/// rho >= min(floor, rho_mean) and |q| <= rho on the embedded first-order moments.
LimitedValue realizability_limit(const VecX& u_mean, const VecX& u_face, double floor);

/// First-order realizability of the embedded (rho, q) with a relative slack on |q| <= rho.
bool first_order_realizable(const Eigen::Ref<const VecX>& u, double slack = 1e-12);

/// Half-range quadratures on the four outward normals -x, +x, -y, +y.
struct BoundaryQuadratures {
  std::array<SphereQuadrature, 4> sides;
  std::array<Vec3, 4> normals;

  explicit BoundaryQuadratures(int degree);
};

struct BoundaryFlux {
  VecX normal_flux;     // <(v.n) a f> / eps, outward
  double outgoing = 0.0;  // Phi
};

/// Moment flux through a wall with outward normal n: absorbed by the ansatz on {v.n > 0},
/// re-emitted as F(v) Phi / zeta on {v.n < 0}, zeta = int_{v.n<0} |v.n| F dv, so the net
/// mass flux vanishes. `out` and `in` are the half-range rules for n and -n.
BoundaryFlux thermal_boundary_flux(const VecX& u_interior, std::size_t cell, const Vec3& n,
                                   const MomentSystem& system, const SphereQuadrature& out,
                                   const SphereQuadrature& in);

struct StepDiagnostics {
  long limiter_activations = 0;
  double min_theta = 1.0;
  long fallback_reconstructions = 0;
  int max_newton_iterations = 0;
  double boundary_mass_flux = 0.0;  // net outward mass per unit time through the walls
};

/// One SSP-RK2 (Heun) step of the unsplit finite-volume update.
MomentField flux_step(const MomentField& state, double dt, const MomentSystem& system, const SolverConfig& config,
                      StepDiagnostics* diagnostics = nullptr);

using SourceFn = std::function<VecX(const VecX&)>;
using JacobianFn = std::function<MatX(const VecX&)>;

struct DgResult {
  VecX value;
  int iterations = 0;
};

/// Quadratic discontinuous Galerkin step in time for u' = s(u) over [0, dt], returning the right
/// endpoint. Newton on the nine (3 x K) nodal unknowns.
DgResult dg_source_step(const VecX& u_old, double dt, const SourceFn& source, const JacobianFn& jacobian,
                        const SolverConfig& config);
/// Propagator P with u_new = P u_old for a linear source s(u) = S u.
MatX dg_linear_propagator(const MatX& source_matrix, double dt);

/// Source step in every cell (linear systems through cached propagators).
class SourceIntegrator {
 public:
  SourceIntegrator(const MomentSystem& system, const SolverConfig& config);
  MomentField step(const MomentField& state, double dt, StepDiagnostics* diagnostics = nullptr);

 private:
  const MomentSystem* system_;
  SolverConfig config_;
  double cached_dt_ = -1.0;
  std::vector<MatX> propagators_;
};

/// source(dt/2), flux(dt), source(dt/2).
MomentField strang_step(const MomentField& state, double dt, const MomentSystem& system, const SolverConfig& config,
                        SourceIntegrator& source, StepDiagnostics* diagnostics = nullptr);

/// cfl * min(dx, dy) * eps.
double stable_time_step(const GridSpec& grid, const MomentSystem& system, const SolverConfig& config);

struct RunDiagnostics {
  long steps = 0;
  double initial_mass = 0.0;
  double final_mass = 0.0;
  double max_mass_drift = 0.0;           // max |M(t) - M(0)| / M(0)
  double max_step_balance_error = 0.0;   // per-step |dM - dt * boundary| / M
  long limiter_activations = 0;
  double min_theta = 1.0;
  long fallback_reconstructions = 0;
  int max_newton_iterations = 0;
  double min_density = 0.0;
  double max_normalized_flux = 0.0;  // max |q| / rho
  long realizability_violations = 0;
};

using OutputCallback = std::function<void(double time, const MomentField& state)>;

/// Strang-split integration to config.t_end. `output_times` (sorted) are hit exactly.
MomentField run_moment_model(const MomentField& initial, const MomentSystem& system, const SolverConfig& config,
                             const std::vector<double>& output_times = {}, const OutputCallback& callback = {},
                             RunDiagnostics* diagnostics = nullptr);

/// Cell loop on up to MOMENT_GLIOMA_THREADS worker threads (default: hardware concurrency).
void parallel_for(std::size_t count, const std::function<void(std::size_t begin, std::size_t end)>& body);
int worker_threads();

// FIELD2D text format: `FIELD2D <name> nx ny x0 y0 dx dy t`, then nx*ny values (y outer).
struct ScalarField {
  std::string name;
  GridSpec grid;
  double time = 0.0;
  std::vector<double> values;
};

void write_field(std::ostream& out, const ScalarField& field);
void write_field_file(const std::string& path, const ScalarField& field);
ScalarField read_field(std::istream& in);
ScalarField read_field_file(const std::string& path);

}  // namespace moment_glioma
