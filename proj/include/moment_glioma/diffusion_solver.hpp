#pragma once

#include "moment_glioma/core.hpp"
#include "moment_glioma/kinetic_system.hpp"
#include "moment_glioma/tissue.hpp"

#include <functional>
#include <vector>

namespace moment_glioma {

/// Coefficients of d_t rho = div(div(rho D) - rho a), a = eta D lambda_H grad Q.
struct DiffusionFields {
  GridSpec grid;
  std::vector<Mat3> D;
  std::vector<Vec2> drift;  // in-plane part of a
  std::vector<Vec2> divD;   // (d_x D_xx + d_y D_xy, d_x D_xy + d_y D_yy) by central differences

  /// Symmetric PSD tensors and, when `R` > 0, tr(D) = 1/R within 1e-10.
  void validate(double R = 0.0) const;
  /// Largest eigenvalue of the in-plane 2 x 2 blocks.
  [[nodiscard]] double max_eigenvalue() const;
};

/// D = D_F/R and the drift in every cell; grid lengths are those of `tissue` (nondimensional).
DiffusionFields diffusion_fields(const TissueFields& tissue, const ScalingParams& scaling);
/// Fills divD from D.
void update_divergence(DiffusionFields& fields);

enum class DiffusionForm {
  Myopic,  // div(rho D)
  Fickian  // D grad rho, for comparisons only
};

/// Right-hand side of the conservative finite-difference scheme with zero-flux walls.
std::vector<double> diffusion_rate(const std::vector<double>& rho, const DiffusionFields& fields,
                                   DiffusionForm form = DiffusionForm::Myopic);

/// 0.5 min(dx, dy)^2 / (2 max eig D), with D restricted to the plane.
double diffusion_time_step_bound(const DiffusionFields& fields);

/// One Heun step. Throws InputError (naming the bound) when dt exceeds diffusion_time_step_bound.
std::vector<double> diffusion_step(const std::vector<double>& rho, double dt, const DiffusionFields& fields,
                                   DiffusionForm form = DiffusionForm::Myopic);

struct DiffusionDiagnostics {
  long steps = 0;
  double initial_mass = 0.0;
  double final_mass = 0.0;
  double max_step_mass_error = 0.0;  // relative
  double min_density = 0.0;
};

using DiffusionCallback = std::function<void(double time, const std::vector<double>& rho)>;

/// Integrates to t_end with the largest stable step, hitting `output_times` exactly.
std::vector<double> run_diffusion(const std::vector<double>& initial, const DiffusionFields& fields, double t_end,
                                  const std::vector<double>& output_times = {},
                                  const DiffusionCallback& callback = {}, DiffusionDiagnostics* diagnostics = nullptr,
                                  DiffusionForm form = DiffusionForm::Myopic);

/// Sum rho dx dy.
double total_mass(const std::vector<double>& rho, const GridSpec& grid);

}  // namespace moment_glioma
