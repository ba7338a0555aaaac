#pragma once

#include "moment_glioma/core.hpp"
#include "moment_glioma/sphere_quadrature.hpp"

#include <array>
#include <complex>
#include <optional>
#include <vector>

namespace moment_glioma {

/// Density and momentum (rho, q) of a velocity distribution on S^2.
struct MomentVector1 {
  double rho = 0.0;
  Vec3 q = Vec3::Zero();

  /// q / rho, or zero for vanishing density.
  [[nodiscard]] Vec3 q_hat() const { return rho > 0.0 ? Vec3(q / rho) : Vec3::Zero(); }
  [[nodiscard]] Vec4 as_vector() const { return {rho, q.x(), q.y(), q.z()}; }
  static MomentVector1 from_vector(const Eigen::Ref<const VecX>& u) {
    return {u[0], Vec3(u[1], u[2], u[3])};
  }
};

/// Multipliers (a, b) of the ansatz a * g(eps v.b) F(v).
struct ClosureMultipliers {
  double a = 0.0;
  Vec3 b = Vec3::Zero();
};

struct ClosureResult {
  Mat3 P = Mat3::Zero();
  std::optional<ClosureMultipliers> multipliers;
  int iterations = 0;
  double residual = 0.0;
};

/// Moments <v F>, <v (x) v F> and <v_k v (x) v F> (k = 0..2) of an anchor density F.
struct AnchorMoments {
  Vec3 m1 = Vec3::Zero();
  Mat3 m2 = Mat3::Zero();
  std::array<Mat3, 3> m3{Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};
};

/// Anchor moments by quadrature of the nodal values `anchor` (one per node).
AnchorMoments anchor_moments(const SphereQuadrature& quadrature, const std::vector<double>& anchor);
/// Exact anchor moments of the peanut distribution with pressure tensor D_F (odd moments vanish).
AnchorMoments peanut_anchor_moments(const Mat3& fiber_pressure);

/// Linear ansatz (a + eps v.b) F matched to (rho, q).
ClosureResult p1f_closure(const MomentVector1& m, const AnchorMoments& anchor, double eps);

struct M1Options {
  double tol = 1e-10;
  int max_iterations = 200;
  int max_line_search = 40;
};

/// Exponential ansatz a exp(eps v.b) F matched to (rho, q) by damped Newton on the
/// strictly convex dual in b; a follows in closed form. `anchor` holds F at the nodes.
ClosureResult m1f_closure(const MomentVector1& m, const SphereQuadrature& quadrature,
                          const std::vector<double>& anchor, double eps, const M1Options& options = {});

/// Normalised Kershaw-type pressure (1 - |q|^2) D_F + q (x) q for a normalised flux q.
template <typename Scalar>
Matrix3<Scalar> kershaw_normalized_pressure(const Vector3<Scalar>& q_hat, const Matrix3<Scalar>& fiber_pressure) {
  return (Scalar(1) - q_hat.squaredNorm()) * fiber_pressure + q_hat * q_hat.transpose();
}

/// P = rho [(1 - |q^|^2) D_F + q^ (x) q^]. Tolerates |q^| up to 1 + 1e-12 (clipped to 1).
ClosureResult kershaw_closure(const MomentVector1& m, const Mat3& fiber_pressure);

/// Signed realizability margins of (rho, q, P).
struct RealizabilityMargins {
  double first = 0.0;      // 1 - |q^|
  double second = 0.0;     // lambda_min(P^ - q^ q^T)
  double trace_error = 0.0;  // |tr(P^) - 1|
};
RealizabilityMargins check_realizability(const MomentVector1& m, const Mat3& P);

/// Jacobian of the unit-speed flux (q.n, P n) with respect to (rho, q) for the Kershaw closure.
Mat4 kershaw_flux_jacobian(const MomentVector1& m, const Mat3& fiber_pressure, const Vec3& n);

enum class SpectrumConfiguration { General, Parallel, Perpendicular };

struct SpectrumReport {
  Eigen::Vector4cd eigenvalues;   // sorted by real part, descending
  double max_imag = 0.0;
  double max_abs = 0.0;
  double min_singular_value = 0.0;  // of the unit-column eigenvector matrix
  bool diagonalizable = true;
  SpectrumConfiguration configuration = SpectrumConfiguration::General;
  /// Rotated-frame closed forms (only for n parallel or perpendicular to q^, or q^ = 0).
  /// `printed` uses the published characteristic polynomial, `derived` the one obtained
  /// from the assembled matrix; the residuals compare each to the numerical spectrum.
  std::optional<Vec4> closed_form_printed;
  std::optional<Vec4> closed_form_derived;
  double residual_printed = 0.0;
  double residual_derived = 0.0;
};

/// Eigenvector matrices with a smaller singular value are screened for defective
/// eigenvalue clusters (geometric multiplicity below algebraic multiplicity).
constexpr double kDiagonalizabilityThreshold = 1e-6;

SpectrumReport kershaw_spectrum(const MomentVector1& m, const Mat3& fiber_pressure, const Vec3& n);

}  // namespace moment_glioma
