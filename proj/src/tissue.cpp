#include "moment_glioma/tissue.hpp"

#include "moment_glioma/kinetic_system.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace moment_glioma {

namespace {

Vec3 sorted_eigenvalues(const Mat3& tensor) {
  Eigen::SelfAdjointEigenSolver<Mat3> solver(tensor, Eigen::EigenvaluesOnly);
  return solver.eigenvalues();  // ascending
}

}  // namespace

double fractional_anisotropy(const Mat3& water_tensor) {
  const Vec3 lambda = sorted_eigenvalues(water_tensor);
  const double norm2 = lambda.squaredNorm();
  if (!(norm2 > 0.0)) throw InputError("fractional anisotropy undefined for the zero tensor");
  const double mean = lambda.mean();
  const double spread = (lambda.array() - mean).square().sum();
  return std::sqrt(1.5 * spread / norm2);
}

double characteristic_length(const Mat3& water_tensor) {
  const double largest = sorted_eigenvalues(water_tensor)[2];
  if (!(largest > 0.0)) throw InputError("characteristic length needs a positive largest eigenvalue");
  return 1.0 - std::pow(water_tensor.trace() / (4.0 * largest), 1.5);
}

VolumeFractionEstimator parse_estimator(const std::string& name) {
  if (name == "FA" || name == "fa") return VolumeFractionEstimator::FractionalAnisotropy;
  if (name == "CL" || name == "cl") return VolumeFractionEstimator::CharacteristicLength;
  throw InputError("unknown volume fraction estimator '" + name + "' (expected FA or CL)");
}

std::string to_string(VolumeFractionEstimator estimator) {
  return estimator == VolumeFractionEstimator::FractionalAnisotropy ? "FA" : "CL";
}

void WaterTensorField::validate() const {
  grid.validate();
  if (tensors.size() != grid.cell_count()) throw InputError("tensor count does not match the grid");
  for (int j = 0; j < grid.ny; ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      const Mat3& d = at(i, j);
      const double scale = std::max(1.0, d.cwiseAbs().maxCoeff());
      if ((d - d.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw InputError("water tensor not symmetric in " + describe_cell(grid, i, j));
      }
      if (!(d.trace() > 0.0)) {
        throw InputError("water tensor has nonpositive trace in " + describe_cell(grid, i, j));
      }
      if (sorted_eigenvalues(d)[0] < -1e-12 * scale) {
        throw InputError("water tensor has a negative eigenvalue in " + describe_cell(grid, i, j));
      }
    }
  }
}

double fiber_strand_d00(const FiberStrandGeometry& geometry, double x1, double x2) {
  const double half = 0.5 * geometry.domain_size;
  const double nu = std::max({0.0, x1 - half, std::abs(x2 - half) - 0.1});
  return 1.0 + 5.0 * std::exp(-nu / (2.0 * geometry.sigma * geometry.sigma));
}

WaterTensorField synth_fiber_strand(const FiberStrandGeometry& geometry, const GridSpec& grid) {
  if (!(geometry.sigma > 0.0)) throw InputError("fiber strand sigma must be positive");
  grid.validate();
  WaterTensorField field{grid, std::vector<Mat3>(grid.cell_count(), Mat3::Zero())};
  for (int j = 0; j < grid.ny; ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      Mat3& d = field.tensors[grid.index(i, j)];
      d(0, 0) = fiber_strand_d00(geometry, grid.x_center(i), grid.y_center(j));
      d(1, 1) = 1.0;
      d(2, 2) = geometry.out_of_plane;
    }
  }
  return field;
}

std::vector<Vec2> grid_gradient(const GridSpec& grid, const std::vector<double>& values) {
  std::vector<Vec2> grad(grid.cell_count());
  auto at = [&](int i, int j) { return values[grid.index(i, j)]; };
  for (int j = 0; j < grid.ny; ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      double gx;
      if (i == 0) {
        gx = (at(1, j) - at(0, j)) / grid.dx;
      } else if (i == grid.nx - 1) {
        gx = (at(i, j) - at(i - 1, j)) / grid.dx;
      } else {
        gx = (at(i + 1, j) - at(i - 1, j)) / (2.0 * grid.dx);
      }
      double gy;
      if (j == 0) {
        gy = (at(i, 1) - at(i, 0)) / grid.dy;
      } else if (j == grid.ny - 1) {
        gy = (at(i, j) - at(i, j - 1)) / grid.dy;
      } else {
        gy = (at(i, j + 1) - at(i, j - 1)) / (2.0 * grid.dy);
      }
      grad[grid.index(i, j)] = Vec2(gx, gy);
    }
  }
  return grad;
}

TissueFields derive_tissue_fields(const WaterTensorField& water, VolumeFractionEstimator estimator,
                                  const ScalingParams& params) {
  water.validate();
  const GridSpec& grid = water.grid;
  TissueFields out;
  out.grid = grid;
  out.volume_fraction.resize(grid.cell_count());
  out.fiber_pressure.resize(grid.cell_count());
  out.haptotactic.resize(grid.cell_count());
  out.water_tensor = water.tensors;
  for (int j = 0; j < grid.ny; ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      const std::size_t c = grid.index(i, j);
      const Mat3& d = water.tensors[c];
      try {
        const double q = estimator == VolumeFractionEstimator::FractionalAnisotropy
                             ? fractional_anisotropy(d)
                             : characteristic_length(d);
        if (!(q >= 0.0 && q < 1.0)) {
          throw NumericalError("volume fraction " + std::to_string(q) + " outside [0, 1)");
        }
        out.volume_fraction[c] = q;
        out.fiber_pressure[c] = peanut_pressure_tensor(d);
        out.haptotactic[c] = haptotactic_coefficient(q, params.lambda0, params.kplus, params.kminus);
      } catch (const std::exception& e) {
        throw InputError(std::string(e.what()) + " in " + describe_cell(grid, i, j));
      }
    }
  }
  out.volume_fraction_grad = grid_gradient(grid, out.volume_fraction);
  return out;
}

WaterTensorField read_tensor_field(std::istream& in) {
  std::string line;
  int line_number = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_number;
      const auto first = line.find_first_not_of(" \t\r");
      if (first != std::string::npos && line[first] != '#') return true;
    }
    return false;
  };
  if (!next_line()) throw InputError("tensor field: empty input");
  std::istringstream header(line);
  std::string magic;
  GridSpec grid;
  header >> magic >> grid.nx >> grid.ny >> grid.x0 >> grid.y0 >> grid.dx >> grid.dy;
  std::string extra;
  if (magic != "TENSORFIELD2D" || header.fail() || (header >> extra)) {
    throw InputError("tensor field line " + std::to_string(line_number) +
                     ": expected `TENSORFIELD2D nx ny x0 y0 dx dy`");
  }
  grid.validate();
  WaterTensorField field{grid, {}};
  field.tensors.reserve(grid.cell_count());
  while (field.tensors.size() < grid.cell_count()) {
    if (!next_line()) {
      throw InputError("tensor field: expected " + std::to_string(grid.cell_count()) +
                       " tensor rows, found " + std::to_string(field.tensors.size()));
    }
    std::istringstream row(line);
    std::vector<double> v;
    double value;
    while (row >> value) v.push_back(value);
    if (!row.eof() || v.size() != 6) {
      throw InputError("tensor field line " + std::to_string(line_number) + ": expected 6 reals, found " +
                       (row.eof() ? std::to_string(v.size()) : std::string("non-numeric data")));
    }
    Mat3 d;
    d << v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5];
    field.tensors.push_back(d);
  }
  if (next_line()) {
    throw InputError("tensor field line " + std::to_string(line_number) + ": more rows than nx*ny");
  }
  field.validate();
  return field;
}

WaterTensorField read_tensor_field_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open tensor field file '" + path + "'");
  return read_tensor_field(in);
}

void write_tensor_field(std::ostream& out, const WaterTensorField& field) {
  const GridSpec& g = field.grid;
  out << std::setprecision(17);
  out << "TENSORFIELD2D " << g.nx << ' ' << g.ny << ' ' << g.x0 << ' ' << g.y0 << ' ' << g.dx << ' '
      << g.dy << '\n';
  for (const Mat3& d : field.tensors) {
    out << d(0, 0) << ' ' << d(0, 1) << ' ' << d(0, 2) << ' ' << d(1, 1) << ' ' << d(1, 2) << ' '
        << d(2, 2) << '\n';
  }
}

}  // namespace moment_glioma
