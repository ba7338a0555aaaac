#pragma once

#include "moment_glioma/core.hpp"
#include "moment_glioma/diffusion_solver.hpp"
#include "moment_glioma/fv_solver.hpp"
#include "moment_glioma/kinetic_system.hpp"
#include "moment_glioma/tissue.hpp"

#include <array>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace moment_glioma {

enum class TensorSource { FiberStrand, File };

/// Density `inside` on the square of side `side` centred at (center_x, center_y) (mm) and
/// `background` elsewhere, with an isotropic velocity distribution. Cells take the exact average.
struct InitialSquare {
  double center_x = 0.0;
  double center_y = 0.0;
  double side = 0.0;
  double inside = 1.0;
  double background = 1e-4;

  friend bool operator==(const InitialSquare&, const InitialSquare&) = default;
};

/// Cells of a tensor file whose centres lie in [x_min, x_max] x [y_min, y_max] (mm).
struct CropBox {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;

  friend bool operator==(const CropBox&, const CropBox&) = default;
};

struct Scenario {
  std::string name = "scenario";
  TensorSource source = TensorSource::FiberStrand;
  GridSpec grid;  // mm; synthetic strand only, file sources take the file's grid
  FiberStrandGeometry strand;
  std::string tensor_file;
  std::optional<CropBox> crop;
  VolumeFractionEstimator estimator = VolumeFractionEstimator::FractionalAnisotropy;
  PhysicalParams physical;
  InitialSquare initial;
  std::string model = "K1F";  // "diffusion" or a closure name (K1F, M1F, P1F, P<N>, P<N>F)
  int quadrature_degree = 0;
  SolverConfig solver;  // solver.t_end is replaced by t_end / T at run time
  double t_end = 0.0;                // s
  std::vector<double> output_times;  // s, increasing, within (0, t_end]
  std::string output_directory = "out";

  [[nodiscard]] bool diffusion_model() const { return model == "diffusion"; }
  /// Checks every field that does not need the tensor file.
  void validate() const;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// Square grid of `cells` x `cells` over [0, size]^2 (mm).
GridSpec fiber_strand_grid(int cells, double size = 3.0);

/// T = 2 s, X = 3 mm, c = X/(eps T), all rates 1/(eps^2 T) (so R = eta = 1), density 1 on
/// [0.45, 0.55] x [1.45, 1.55] and 1e-4 elsewhere, thermal walls, FA estimator, output at T.
Scenario build_fiber_strand_scenario(double eps, const GridSpec& grid);

/// Table 1 inputs; x0 = 1000 mm is the length implied by St = x0/(T c) = 0.302.
PhysicalParams brain_slice_parameters();
/// Brain slice on `tensor_file`, cropped to [50, 150] x [110, 210] mm, CL estimator, density 1 on
/// [98.5, 103.5] x [158.5, 163.5], K1F, output at T.
Scenario brain_slice_scenario(const std::string& tensor_file);

// Configuration text: `key = value` lines, `[section]` headers, `#` comments. Top-level keys
// `name` and optionally `preset` (fiber_strand with `eps`, `cells`; brain_slice with
// `tensor_file`); explicit keys override the preset. Sections and keys (units):
//   [grid]     nx, ny, x0, y0, dx, dy (mm)
//   [tissue]   source (fiber_strand | file), file, crop (x_min, x_max, y_min, y_max in mm),
//              estimator (FA | CL), strand_size (mm), strand_sigma, strand_d33
//   [physics]  T (s), c (mm/s), lambda0, lambda1, kplus, kminus (1/s), x0 (mm)
//   [initial]  center_x, center_y, side (mm), inside, background (density)
//   [model]    name (diffusion | closure), quadrature_degree
//   [solver]   cfl, weno_theta, weno_z, realizability_floor, dg_newton_tol, dg_newton_maxit, boundary
//   [output]   t_end (s), times (s, comma separated), directory
// Unknown or repeated keys are InputErrors.
Scenario parse_scenario(std::istream& in);
Scenario parse_scenario_text(const std::string& text);
Scenario parse_scenario_file(const std::string& path);
/// Fully resolved configuration; reals printed with 17 significant digits.
void write_scenario(std::ostream& out, const Scenario& scenario);
std::string serialize_scenario(const Scenario& scenario);

/// Everything a run needs, derived from a scenario.
struct PreparedScenario {
  ScalingParams scaling;
  WaterTensorField water;  // physical grid (mm)
  TissueFields tissue;     // nondimensional grid (mm / x0)
  std::vector<double> initial_density;
};

PreparedScenario prepare_scenario(const Scenario& scenario);
/// Cell averages of the initial square on `grid` (mm).
std::vector<double> initial_density(const InitialSquare& initial, const GridSpec& grid);
/// Isotropic moment vector of density rho: rho <a> / 4 pi.
VecX isotropic_moments(const MomentSystem& system, double rho);

struct ScenarioResult {
  std::vector<ScalarField> outputs;  // density on the physical grid, time in s
  std::vector<std::string> files;    // FIELD2D files and the manifest, when written
  std::string manifest;              // JSON
  double wall_seconds = 0.0;
  RunDiagnostics kinetic;            // moment models
  DiffusionDiagnostics diffusion;    // diffusion model
};

/// Runs the scenario. With a non-empty `output_directory` it writes one FIELD2D file per
/// output time and `<name>_<model>_manifest.json` there.
ScenarioResult run_scenario(const Scenario& scenario, const std::string& output_directory = "");

inline constexpr std::array<double, 4> kContourLevels{0.1, 0.05, 0.02, 0.01};

/// relerr(x) = |h1(x) - h2(x)| / max|h2|.
struct ComparisonReport {
  GridSpec grid;
  std::vector<double> relerr;
  double max = 0.0;
  double mean = 0.0;
  std::array<double, 4> exceedance_area{};  // area with relerr >= kContourLevels[k]
};

ComparisonReport relative_difference(const ScalarField& h1, const ScalarField& h2);
ComparisonReport relative_difference(const std::vector<double>& h1, const std::vector<double>& h2,
                                     const GridSpec& grid);
/// Header `x,y,relerr`, one row per cell centre.
void write_comparison_csv(std::ostream& out, const ComparisonReport& report);

struct ConvergenceRow {
  double eps = 0.0;
  double max_relerr = 0.0;
  double mean_relerr = 0.0;
  long kinetic_steps = 0;
  double seconds = 0.0;
};

/// Fiber strand at each eps: `model` against the diffusion limit at t = T on `grid` (mm).
std::vector<ConvergenceRow> convergence_study(const std::vector<double>& eps_list, const ClosureSpec& model,
                                              const GridSpec& grid, const SolverConfig& solver = {},
                                              const std::function<void(const ConvergenceRow&)>& progress = {});

/// Command line entry point: simulate, compare, convergence, spectrum, validate.
/// Returns 0 on success, 1 on usage or input errors, 2 on numerical failures.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace moment_glioma
