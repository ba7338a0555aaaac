#pragma once

#include "moment_glioma/core.hpp"

#include <cmath>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace moment_glioma {

/// Gauss-Legendre nodes and weights on [-1, 1].
std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int points);
/// Gauss-Lobatto nodes and weights on [-1, 1] (endpoints included), ascending.
std::pair<std::vector<double>, std::vector<double>> gauss_lobatto(int points);

/// Quadrature on the unit sphere S^2 with positive weights.
///
/// Full-sphere rules are products of a Gauss-Lobatto rule in mu = cos(theta)
/// (polar axis e_z, an odd number of points so that mu = 0 is a node) and an
/// equispaced rule in phi with a multiple of four points starting at phi = 0.
/// The coincident pole nodes are merged. Every rule therefore contains the six
/// octahedral directions +-e_x, +-e_y, +-e_z.
///
/// Node ordering is fixed: north pole, then the interior mu rows from mu close
/// to 1 down to mu close to -1, phi ascending within a row, then the south pole.
class SphereQuadrature {
 public:
  static constexpr int kMinDegree = 2;
  static constexpr int kMaxDegree = 64;
  static constexpr int kDefaultDegree = 10;

  /// Rule exact for all spherical polynomials up to `degree`.
  static SphereQuadrature build(int degree = kDefaultDegree);

  /// Rule on the open hemisphere {v : v.n > 0}, exact for polynomials in v up to `degree`.
  /// Gauss-Legendre in mu = v.n on (0, 1), equispaced azimuth around n.
  static SphereQuadrature hemisphere(const Vec3& n, int degree = kDefaultDegree);

  [[nodiscard]] int order() const { return order_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] const Vec3& node(std::size_t i) const { return nodes_[i]; }
  [[nodiscard]] double weight(std::size_t i) const { return weights_[i]; }
  [[nodiscard]] const std::vector<Vec3>& nodes() const { return nodes_; }
  [[nodiscard]] const std::vector<double>& weights() const { return weights_; }

  /// Sum_i w_i f(v_i) in node order. `f` may return a scalar or a fixed/dynamic Eigen object.
  template <typename Fn>
  auto integrate(Fn&& f) const {
    using Result = std::decay_t<decltype(f(nodes_.front()))>;
    if constexpr (std::is_arithmetic_v<Result>) {
      double sum = 0.0;
      for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const double value = f(nodes_[i]);
        if (!std::isfinite(value)) throw_non_finite(i);
        sum += weights_[i] * value;
      }
      return sum;
    } else {
      using Plain = typename Result::PlainObject;
      Plain sum;
      for (std::size_t i = 0; i < nodes_.size(); ++i) {
        Plain value = f(nodes_[i]);
        if (!value.allFinite()) throw_non_finite(i);
        if (i == 0) {
          sum = weights_[i] * value;
        } else {
          sum += weights_[i] * value;
        }
      }
      return sum;
    }
  }

 private:
  SphereQuadrature(std::vector<Vec3> nodes, std::vector<double> weights, int order)
      : nodes_(std::move(nodes)), weights_(std::move(weights)), order_(order) {}

  [[noreturn]] void throw_non_finite(std::size_t index) const;

  std::vector<Vec3> nodes_;
  std::vector<double> weights_;
  int order_ = 0;
};

/// Closed-form integral of v_x^a v_y^b v_z^c over S^2 (zero unless all exponents are even).
double sphere_monomial_integral(int a, int b, int c);

}  // namespace moment_glioma
