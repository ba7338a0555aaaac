#pragma once

#include "moment_glioma/core.hpp"

#include <iosfwd>
#include <numbers>
#include <string>
#include <vector>

namespace moment_glioma {

struct ScalingParams;

// ---------------------------------------------------------------------------
// Peanut fiber distribution and tissue estimators, templated on the scalar type.
// ---------------------------------------------------------------------------

/// Fiber distribution 3/(4 pi tr D) v^T D v of the water diffusion tensor D.
template <typename Scalar>
Scalar peanut_density(const Matrix3<Scalar>& water_tensor, const Vector3<Scalar>& v) {
  const Scalar trace = water_tensor.trace();
  if (!(trace > Scalar(0))) throw InputError("peanut distribution needs tr(D_W) > 0");
  return Scalar(3) / (Scalar(4) * Scalar(std::numbers::pi) * trace) * v.dot(water_tensor * v);
}

/// Second moment <v (x) v Q> of the peanut distribution: (2 D + tr(D) I) / (5 tr D).
/// It has unit trace.
template <typename Scalar>
Matrix3<Scalar> peanut_pressure_tensor(const Matrix3<Scalar>& water_tensor) {
  const Scalar trace = water_tensor.trace();
  if (!(trace > Scalar(0))) throw InputError("peanut pressure tensor needs tr(D_W) > 0");
  return (Scalar(2) * water_tensor + trace * Matrix3<Scalar>::Identity()) / (Scalar(5) * trace);
}

double fractional_anisotropy(const Mat3& water_tensor);
double characteristic_length(const Mat3& water_tensor);

/// g'(Q) / (1 + alpha(Q)/lambda0) with alpha(Q) = k+ Q + k- and g(Q) = k+ Q / (k+ Q + k-).
template <typename Scalar>
Scalar haptotactic_coefficient(Scalar volume_fraction, Scalar lambda0, Scalar kplus, Scalar kminus) {
  if (!(lambda0 > 0) || !(kplus > 0) || !(kminus > 0)) {
    throw InputError("haptotactic coefficient needs positive rates");
  }
  if (volume_fraction < Scalar(0)) throw InputError("volume fraction must be nonnegative");
  const Scalar alpha = kplus * volume_fraction + kminus;
  const Scalar g_prime = kplus * kminus / (alpha * alpha);
  return g_prime / (Scalar(1) + alpha / lambda0);
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

enum class VolumeFractionEstimator { FractionalAnisotropy, CharacteristicLength };

VolumeFractionEstimator parse_estimator(const std::string& name);
std::string to_string(VolumeFractionEstimator estimator);

/// Symmetric water diffusion tensors (mm^2/s) on a grid with lengths in mm.
struct WaterTensorField {
  GridSpec grid;
  std::vector<Mat3> tensors;

  [[nodiscard]] const Mat3& at(int i, int j) const { return tensors[grid.index(i, j)]; }
  /// Symmetry within 1e-12, nonnegative eigenvalues and positive trace in every cell.
  void validate() const;
};

/// Tissue quantities derived per cell from the water tensors.
struct TissueFields {
  GridSpec grid;
  std::vector<double> volume_fraction;      // Q in [0, 1)
  std::vector<Vec2> volume_fraction_grad;   // grad Q in 1/(grid length unit)
  std::vector<Mat3> fiber_pressure;         // D_F = <v (x) v Q>, unit trace
  std::vector<double> haptotactic;          // lambda_H hat (Q)
  std::vector<Mat3> water_tensor;           // D_W, kept for the anchor density
};

struct FiberStrandGeometry {
  double domain_size = 3.0;  // X
  double sigma = 0.1;
  double out_of_plane = 1.0;  // D_33

  friend bool operator==(const FiberStrandGeometry&, const FiberStrandGeometry&) = default;
};

/// diag(D00(x), 1, D33) with D00 = 1 + 5 exp(-nu / (2 sigma^2)) and
/// nu = max{0, x1 - X/2, |x2 - X/2| - 0.1}, evaluated at cell centres.
WaterTensorField synth_fiber_strand(const FiberStrandGeometry& geometry, const GridSpec& grid);
double fiber_strand_d00(const FiberStrandGeometry& geometry, double x1, double x2);

/// Gradient by central differences, one-sided first-order differences on the edges.
std::vector<Vec2> grid_gradient(const GridSpec& grid, const std::vector<double>& values);

TissueFields derive_tissue_fields(const WaterTensorField& water, VolumeFractionEstimator estimator,
                                  const ScalingParams& params);

// TENSORFIELD2D text format: header `TENSORFIELD2D nx ny x0 y0 dx dy`, then nx*ny rows
// (y outer) of `Dxx Dxy Dxz Dyy Dyz Dzz`.
WaterTensorField read_tensor_field(std::istream& in);
WaterTensorField read_tensor_field_file(const std::string& path);
void write_tensor_field(std::ostream& out, const WaterTensorField& field);

}  // namespace moment_glioma
