#pragma once

#include "moment_glioma/closures.hpp"
#include "moment_glioma/core.hpp"
#include "moment_glioma/pn_basis.hpp"
#include "moment_glioma/sphere_quadrature.hpp"
#include "moment_glioma/tissue.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace moment_glioma {

/// Dimensional inputs: T (s), c (mm/s), rates (1/s), x0 (mm).
struct PhysicalParams {
  double T = 0.0;
  double c = 0.0;
  double lambda0 = 0.0;
  double lambda1 = 0.0;
  double kplus = 0.0;
  double kminus = 0.0;
  double x0 = 0.0;

  friend bool operator==(const PhysicalParams&, const PhysicalParams&) = default;
};

/// Characteristic numbers of the scaled kinetic equation
///   d_t f + (1/eps) div(v f) = (R/eps^2) L1 f + (eta/eps) L2 f.
struct ScalingParams {
  double eps = 0.0;  // Strouhal number
  double Kn = 0.0;
  double R = 0.0;
  double eta = 0.0;
  double lambda0 = 0.0;
  double lambda1 = 0.0;
  double kplus = 0.0;
  double kminus = 0.0;
  double c = 0.0;
  double x0 = 0.0;
  double t0 = 0.0;

  /// Positivity and the identities R = eps^2/Kn, eta = lambda1/lambda0 (relative 1e-12).
  void validate() const;
};

/// St = x0/(T c), Kn = 1/(T lambda0), eta = lambda1/lambda0, R = St^2/Kn, t0 = T.
ScalingParams compute_scaling(const PhysicalParams& physical);

enum class ClosureKind { P1F, M1F, K1F, PN, PNF };

/// Closure selection. `order` is the moment order N (1 for the first-order closures).
struct ClosureSpec {
  ClosureKind kind = ClosureKind::K1F;
  int order = 1;
  /// Velocity quadrature degree; 0 picks max(10, 2N + 3).
  int quadrature_degree = 0;

  [[nodiscard]] int resolved_quadrature_degree() const;
  [[nodiscard]] bool first_order() const {
    return kind == ClosureKind::P1F || kind == ClosureKind::M1F || kind == ClosureKind::K1F;
  }
  /// M1F and K1F are only defined for realizable moments; the linear closures accept any state.
  [[nodiscard]] bool needs_realizability() const { return kind == ClosureKind::M1F || kind == ClosureKind::K1F; }
};

/// Accepts K1F, M1F, P1F, P<N> and P<N>F (case-insensitive), e.g. "P3F".
ClosureSpec parse_closure(const std::string& name);
std::string to_string(const ClosureSpec& closure);

/// Tissue quantities the source needs in one cell (nondimensional lengths).
struct TissueCell {
  Mat3 water_tensor = Mat3::Identity();
  Mat3 fiber_pressure = Mat3::Identity() / 3.0;  // D_F
  Vec3 fiber_mean = Vec3::Zero();                 // m1 = <v Q^>, zero for the peanut
  double haptotactic = 0.0;                       // lambda_H hat
  Vec3 grad = Vec3::Zero();                       // grad Q

  [[nodiscard]] static TissueCell from_fields(const TissueFields& fields, std::size_t cell);
};

/// (q_d, P e_d) / eps for direction d in {0, 1, 2}.
Vec4 first_order_flux(const MomentVector1& m, const Mat3& pressure, int direction, double eps);

/// Source of the first-order system:
///   (0, (R/eps^2)(rho m1 - q) + (eta/eps) lambda_H (P grad Q - m1 (q . grad Q))).
Vec4 first_order_source(const MomentVector1& m, const Mat3& pressure, const TissueCell& cell,
                        const ScalingParams& s);

struct PnFluxSource {
  VecX flux_x;
  VecX flux_y;
  VecX source;
};

/// Reconstructs f^A = (lambda . a) F and integrates flux and kernel moments by quadrature.
PnFluxSource pn_flux_and_source(const VecX& u, const TissueCell& cell, const ScalingParams& s,
                                const PnBasis& basis, const SphereQuadrature& quadrature,
                                const std::vector<double>& anchor);

/// D = D_F / R and the local part eta D lambda_H grad Q of the drift.
struct DiffusionCoefficients {
  Mat3 D = Mat3::Zero();
  Vec3 drift = Vec3::Zero();
};
DiffusionCoefficients diffusion_coefficients(const TissueCell& cell, const ScalingParams& s);

/// Peanut density at every node of `quadrature`.
std::vector<double> peanut_values(const Mat3& water_tensor, const SphereQuadrature& quadrature);

/// Eigen-decomposition J = V diag(lambda) V^{-1} of a flux Jacobian with unit columns in V.
template <int K>
struct CharacteristicBasisT {
  Eigen::Matrix<double, K, 1> eigenvalues;
  Eigen::Matrix<double, K, K> right;  // V
  Eigen::Matrix<double, K, K> left;   // V^{-1}, set when valid
  bool valid = false;  // false: complex spectrum or eigenvector condition number > 1e8
  double condition = 0.0;
};
using CharacteristicBasis = CharacteristicBasisT<Eigen::Dynamic>;
using CharacteristicBasis4 = CharacteristicBasisT<4>;

/// Per-cell moment system on a fixed tissue. Immutable after construction; evaluation
/// is thread-safe.
class MomentSystem {
 public:
  MomentSystem(ClosureSpec closure, TissueFields tissue, ScalingParams scaling);
  MomentSystem(const MomentSystem&) = delete;
  MomentSystem& operator=(const MomentSystem&) = delete;
  MomentSystem(MomentSystem&&) noexcept;
  MomentSystem& operator=(MomentSystem&&) noexcept;
  ~MomentSystem();

  [[nodiscard]] int size() const;
  [[nodiscard]] const ClosureSpec& closure() const;
  [[nodiscard]] const TissueFields& tissue() const;
  [[nodiscard]] const ScalingParams& scaling() const;
  [[nodiscard]] const SphereQuadrature& quadrature() const;
  [[nodiscard]] const TissueCell& cell(std::size_t index) const;
  /// Global Lax-Friedrichs constant, 1/eps.
  [[nodiscard]] double wave_speed() const;

  /// Closed flux in direction d (0 = x, 1 = y), including the 1/eps factor.
  [[nodiscard]] VecX flux(const VecX& u, std::size_t cell, int direction) const;
  [[nodiscard]] VecX source(const VecX& u, std::size_t cell) const;
  /// Jacobian of the source.
  [[nodiscard]] MatX source_jacobian(const VecX& u, std::size_t cell) const;
  /// Source matrix S with source(u) = S u when the source of this cell is linear in u.
  [[nodiscard]] std::optional<MatX> linear_source(std::size_t cell) const;
  /// Jacobian of the unscaled flux in direction d (eigenvectors of the scaled flux are the same).
  [[nodiscard]] MatX flux_jacobian(const VecX& u, std::size_t cell, int direction) const;
  [[nodiscard]] CharacteristicBasis characteristic_basis(const VecX& u, std::size_t cell, int direction) const;

  /// Fixed-size forms of flux, source, source_jacobian and characteristic_basis for the
  /// first-order closures. InputError for P_N systems.
  [[nodiscard]] Vec4 flux4(const Vec4& u, std::size_t cell, int direction) const;
  [[nodiscard]] Vec4 source4(const Vec4& u, std::size_t cell) const;
  [[nodiscard]] Mat4 source_jacobian4(const Vec4& u, std::size_t cell) const;
  [[nodiscard]] CharacteristicBasis4 characteristic_basis4(const Vec4& u, std::size_t cell, int direction) const;

  /// Test functions a(v) of the moments: (1, v) or the P_N basis.
  [[nodiscard]] VecX moment_basis(const Vec3& v) const;
  /// Ansatz f^A(u) evaluated at arbitrary directions.
  [[nodiscard]] std::vector<double> ansatz_values(const VecX& u, std::size_t cell,
                                                  const std::vector<Vec3>& directions) const;
  /// Equilibrium state rho <a Q^> of the cell.
  [[nodiscard]] VecX equilibrium(double rho, std::size_t cell) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace moment_glioma
