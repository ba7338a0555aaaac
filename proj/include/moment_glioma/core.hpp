#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace moment_glioma {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Invalid input, malformed files or configuration. The CLI maps this to exit code 1.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical method failed (non-convergence, broken realizability, singular systems).
/// The CLI maps this to exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cell-centred regular Cartesian grid. Cell (i, j) covers
/// [x0 + i dx, x0 + (i+1) dx] x [y0 + j dy, y0 + (j+1) dy]; storage is row-major
/// with y as the outer index.
struct GridSpec {
  int nx = 0;
  int ny = 0;
  double x0 = 0.0;
  double y0 = 0.0;
  double dx = 1.0;
  double dy = 1.0;

  void validate() const {
    if (nx < 3 || ny < 3) throw InputError("grid needs nx, ny >= 3");
    if (!(dx > 0.0) || !(dy > 0.0)) throw InputError("grid spacing must be positive");
  }

  [[nodiscard]] std::size_t cell_count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
  }
  [[nodiscard]] std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(i);
  }
  [[nodiscard]] double x_center(int i) const { return x0 + (i + 0.5) * dx; }
  [[nodiscard]] double y_center(int j) const { return y0 + (j + 0.5) * dy; }
  [[nodiscard]] double width() const { return nx * dx; }
  [[nodiscard]] double height() const { return ny * dy; }

  /// Same cells with every length divided by `length_scale`.
  [[nodiscard]] GridSpec scaled(double length_scale) const {
    return {nx, ny, x0 / length_scale, y0 / length_scale, dx / length_scale, dy / length_scale};
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

inline std::string describe_cell(const GridSpec& grid, int i, int j) {
  return "cell (" + std::to_string(i) + ", " + std::to_string(j) + ") at x = (" +
         std::to_string(grid.x_center(i)) + ", " + std::to_string(grid.y_center(j)) + ")";
}

}  // namespace moment_glioma
