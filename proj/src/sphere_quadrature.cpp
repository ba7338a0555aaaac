#include "moment_glioma/sphere_quadrature.hpp"

#include <numbers>

namespace moment_glioma {

namespace {

// P_n(x) and P_n'(x) by the three-term recurrence.
std::pair<double, double> legendre(int n, double x) {
  double p0 = 1.0;
  double p1 = x;
  if (n == 0) return {1.0, 0.0};
  for (int k = 2; k <= n; ++k) {
    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  const double dp = std::abs(1.0 - x * x) < 1e-300 ? 0.0 : n * (p0 - x * p1) / (1.0 - x * x);
  return {p1, dp};
}

int lobatto_points_for(int degree) {
  int n = 3;
  while (2 * n - 3 < degree) n += 2;
  return n;
}

int azimuth_points_for(int degree) {
  int m = 4;
  while (m < degree + 1) m += 4;
  return m;
}

void check_degree(int degree) {
  if (degree < SphereQuadrature::kMinDegree || degree > SphereQuadrature::kMaxDegree) {
    throw InputError("unsupported quadrature degree " + std::to_string(degree) +
                     "; supported degrees are " + std::to_string(SphereQuadrature::kMinDegree) +
                     ".." + std::to_string(SphereQuadrature::kMaxDegree));
  }
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int points) {
  std::vector<double> x(points);
  std::vector<double> w(points);
  for (int i = 0; i < points; ++i) {
    double xi = -std::cos(std::numbers::pi * (i + 0.75) / (points + 0.5));
    for (int it = 0; it < 100; ++it) {
      const auto [p, dp] = legendre(points, xi);
      const double step = p / dp;
      xi -= step;
      if (std::abs(step) < 1e-16) break;
    }
    const auto [p, dp] = legendre(points, xi);
    x[i] = xi;
    w[i] = 2.0 / ((1.0 - xi * xi) * dp * dp);
  }
  return {x, w};
}

std::pair<std::vector<double>, std::vector<double>> gauss_lobatto(int points) {
  // Interior nodes are the roots of P'_{n-1}; Newton on P'_{n-1} using
  // (1 - x^2) P''_{n-1} = 2x P'_{n-1} - (n-1) n P_{n-1}.
  const int n = points - 1;
  std::vector<double> x(points);
  std::vector<double> w(points);
  x.front() = -1.0;
  x.back() = 1.0;
  for (int i = 1; i < n; ++i) {
    double xi = -std::cos(std::numbers::pi * i / n);
    for (int it = 0; it < 100; ++it) {
      const auto [p, dp] = legendre(n, xi);
      const double ddp = (2.0 * xi * dp - n * (n + 1.0) * p) / (1.0 - xi * xi);
      const double step = dp / ddp;
      xi -= step;
      if (std::abs(step) < 1e-16) break;
    }
    x[i] = xi;
  }
  for (int i = 0; i < points; ++i) {
    const double p = legendre(n, x[i]).first;
    w[i] = 2.0 / (n * (n + 1.0) * p * p);
  }
  return {x, w};
}

SphereQuadrature SphereQuadrature::build(int degree) {
  check_degree(degree);
  const auto [mu, wmu] = gauss_lobatto(lobatto_points_for(degree));
  const int m = azimuth_points_for(degree);
  const double dphi = 2.0 * std::numbers::pi / m;

  std::vector<Vec3> nodes;
  std::vector<double> weights;
  const std::size_t rows = mu.size();
  nodes.emplace_back(0.0, 0.0, 1.0);
  weights.push_back(wmu[rows - 1] * 2.0 * std::numbers::pi);
  for (std::size_t r = rows - 2; r >= 1; --r) {
    const double s = std::sqrt(1.0 - mu[r] * mu[r]);
    for (int k = 0; k < m; ++k) {
      const double phi = k * dphi;
      nodes.emplace_back(s * std::cos(phi), s * std::sin(phi), mu[r]);
      weights.push_back(wmu[r] * dphi);
    }
  }
  nodes.emplace_back(0.0, 0.0, -1.0);
  weights.push_back(wmu[0] * 2.0 * std::numbers::pi);

  // Clean the exact zeros of cos/sin at multiples of pi/2 so that the octahedral
  // directions and the mirror symmetries of the rule are bitwise exact.
  for (auto& v : nodes) {
    for (int c = 0; c < 3; ++c) {
      if (std::abs(v[c]) < 1e-15) v[c] = 0.0;
    }
  }
  return {std::move(nodes), std::move(weights), 2 * static_cast<int>(rows) - 3 < m - 1
                                                    ? 2 * static_cast<int>(rows) - 3
                                                    : m - 1};
}

SphereQuadrature SphereQuadrature::hemisphere(const Vec3& n, int degree) {
  check_degree(degree);
  const Vec3 axis = n.normalized();
  // Tangent frame: for axis along a coordinate direction, use the remaining coordinate
  // directions so that mirrored normals give mirrored rules.
  Vec3 t1;
  if (std::abs(axis.x()) < 0.9) {
    t1 = (Vec3::UnitX() - axis.x() * axis).normalized();
  } else {
    t1 = (Vec3::UnitY() - axis.y() * axis).normalized();
  }
  Vec3 t2 = axis.cross(t1);
  if (t2.z() < 0.0 || (t2.z() == 0.0 && t2.y() < 0.0)) t2 = -t2;

  const int gl_points = degree / 2 + 1;
  const auto [x, wx] = gauss_legendre(gl_points);
  const int m = azimuth_points_for(degree);
  const double dphi = 2.0 * std::numbers::pi / m;
  std::vector<Vec3> nodes;
  std::vector<double> weights;
  for (int r = gl_points - 1; r >= 0; --r) {
    const double mu = 0.5 * (x[r] + 1.0);
    const double s = std::sqrt(1.0 - mu * mu);
    for (int k = 0; k < m; ++k) {
      const double phi = k * dphi;
      Vec3 v = mu * axis + s * (std::cos(phi) * t1 + std::sin(phi) * t2);
      for (int c = 0; c < 3; ++c) {
        if (std::abs(v[c]) < 1e-15) v[c] = 0.0;
      }
      nodes.push_back(v);
      weights.push_back(0.5 * wx[r] * dphi);
    }
  }
  return {std::move(nodes), std::move(weights), std::min(2 * gl_points - 1, m - 1)};
}

void SphereQuadrature::throw_non_finite(std::size_t index) const {
  const Vec3& v = nodes_[index];
  throw NumericalError("non-finite integrand at quadrature node " + std::to_string(index) + " (" +
                       std::to_string(v.x()) + ", " + std::to_string(v.y()) + ", " +
                       std::to_string(v.z()) + ")");
}

double sphere_monomial_integral(int a, int b, int c) {
  if (a % 2 != 0 || b % 2 != 0 || c % 2 != 0) return 0.0;
  // 2 Gamma(A) Gamma(B) Gamma(C) / Gamma(A + B + C), with A = (a+1)/2 etc.
  const double ga = std::tgamma((a + 1) / 2.0);
  const double gb = std::tgamma((b + 1) / 2.0);
  const double gc = std::tgamma((c + 1) / 2.0);
  return 2.0 * ga * gb * gc / std::tgamma((a + b + c + 3) / 2.0);
}

}  // namespace moment_glioma
