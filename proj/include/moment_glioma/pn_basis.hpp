#pragma once

#include "moment_glioma/core.hpp"
#include "moment_glioma/sphere_quadrature.hpp"

#include <array>
#include <vector>

namespace moment_glioma {

using MultiIndex = std::array<int, 3>;

/// Monomial basis v^i = v_x^ix v_y^iy v_z^iz of total degree <= N on S^2.
///
/// Ordering: by total degree, then ix descending, then iy descending, so the first
/// four functions are 1, v_x, v_y, v_z.
///
/// All C(N+3, 3) monomials are redundant on the sphere for N >= 2 because
/// v_x^2 + v_y^2 + v_z^2 = 1. The active basis drops every monomial with iz >= 2
/// (v_z^2 is replaced by 1 - v_x^2 - v_y^2, recursively for higher powers), which
/// leaves (N+1)^2 functions spanning exactly the spherical polynomials of degree <= N.
class PnBasis {
 public:
  static constexpr int kMaxOrder = 5;

  explicit PnBasis(int order);

  [[nodiscard]] int order() const { return order_; }
  /// Number of monomials of total degree <= N, K(N).
  [[nodiscard]] int full_count() const { return static_cast<int>(full_.size()); }
  [[nodiscard]] const std::vector<MultiIndex>& full_indices() const { return full_; }
  /// Size of the active (reduced) basis, (N+1)^2.
  [[nodiscard]] int size() const { return static_cast<int>(active_.size()); }
  [[nodiscard]] const std::vector<MultiIndex>& indices() const { return active_; }

  /// Active basis evaluated at v.
  [[nodiscard]] VecX evaluate(const Vec3& v) const;
  /// Full monomial set evaluated at v.
  [[nodiscard]] VecX evaluate_full(const Vec3& v) const;

 private:
  int order_;
  std::vector<MultiIndex> full_;
  std::vector<MultiIndex> active_;
};

/// Basis lookup; errors for N outside [1, 5].
PnBasis pn_basis(int order);

/// Numerical rank of the weighted Gram matrix of the full monomial set.
int full_gram_rank(const PnBasis& basis, const SphereQuadrature& quadrature, const std::vector<double>& anchor);

/// Linear ansatz (lambda . a(v)) F(v) reproducing given moments.
struct PnAnsatz {
  VecX multipliers;
  /// Ansatz values at the quadrature nodes.
  std::vector<double> values;

  /// Ansatz at an arbitrary direction given the anchor value there.
  [[nodiscard]] double at(const PnBasis& basis, const Vec3& v, double anchor_value) const {
    return multipliers.dot(basis.evaluate(v)) * anchor_value;
  }
};

/// Solves G lambda = u with G = <a a^T F>; throws for a singular Gram matrix.
PnAnsatz pnf_reconstruct(const VecX& moments, const SphereQuadrature& quadrature,
                         const std::vector<double>& anchor, const PnBasis& basis);

/// Basis values at every quadrature node, one column per node.
MatX basis_table(const PnBasis& basis, const SphereQuadrature& quadrature);

/// Gram matrix <a a^T F> of the active basis.
MatX gram_matrix(const MatX& table, const SphereQuadrature& quadrature, const std::vector<double>& anchor);

}  // namespace moment_glioma
