#include "moment_glioma/kinetic_system.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <limits>

namespace moment_glioma {

namespace {

bool close_relative(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
}

Vec3 unit(int direction) {
  Vec3 e = Vec3::Zero();
  e[direction] = 1.0;
  return e;
}

double log_sum_exp_partition(const SphereQuadrature& quadrature, const std::vector<double>& anchor, const Vec3& c) {
  double shift = -std::numeric_limits<double>::infinity();
  std::vector<double> expo(quadrature.size());
  for (std::size_t i = 0; i < quadrature.size(); ++i) {
    expo[i] = std::log(quadrature.weight(i) * anchor[i]) + c.dot(quadrature.node(i));
    shift = std::max(shift, expo[i]);
  }
  double z = 0.0;
  for (double e : expo) z += std::exp(e - shift);
  return shift + std::log(z);
}

}  // namespace

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

void ScalingParams::validate() const {
  if (!(eps > 0.0) || !(Kn > 0.0) || !(R > 0.0) || !(eta > 0.0)) {
    throw InputError("scaling parameters eps, Kn, R and eta must be positive");
  }
  if (!close_relative(R, eps * eps / Kn, 1e-12)) throw InputError("inconsistent scaling: R != eps^2/Kn");
  if (lambda0 > 0.0 && !close_relative(eta, lambda1 / lambda0, 1e-12)) {
    throw InputError("inconsistent scaling: eta != lambda1/lambda0");
  }
}

ScalingParams compute_scaling(const PhysicalParams& p) {
  const double inputs[] = {p.T, p.c, p.lambda0, p.lambda1, p.kplus, p.kminus, p.x0};
  const char* names[] = {"T", "c", "lambda0", "lambda1", "kplus", "kminus", "x0"};
  for (int k = 0; k < 7; ++k) {
    if (!(inputs[k] > 0.0) || !std::isfinite(inputs[k])) {
      throw InputError(std::string("physical parameter ") + names[k] + " must be positive and finite");
    }
  }
  ScalingParams s;
  s.t0 = p.T;
  s.x0 = p.x0;
  s.c = p.c;
  s.lambda0 = p.lambda0;
  s.lambda1 = p.lambda1;
  s.kplus = p.kplus;
  s.kminus = p.kminus;
  s.eps = p.x0 / (p.T * p.c);
  s.Kn = 1.0 / (p.T * p.lambda0);
  s.eta = p.lambda1 / p.lambda0;
  s.R = s.eps * s.eps / s.Kn;
  return s;
}

// ---------------------------------------------------------------------------
// Closure selection
// ---------------------------------------------------------------------------

int ClosureSpec::resolved_quadrature_degree() const {
  if (quadrature_degree > 0) return quadrature_degree;
  return std::max(SphereQuadrature::kDefaultDegree, 2 * order + 3);
}

ClosureSpec parse_closure(const std::string& name) {
  std::string upper;
  for (char ch : name) upper += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (upper == "K1F") return {ClosureKind::K1F, 1};
  if (upper == "M1F") return {ClosureKind::M1F, 1};
  if (upper == "P1F") return {ClosureKind::P1F, 1};
  if (upper.size() >= 2 && upper[0] == 'P') {
    std::string digits = upper.substr(1);
    bool fiber = false;
    if (!digits.empty() && digits.back() == 'F') {
      fiber = true;
      digits.pop_back();
    }
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](char ch) { return std::isdigit(ch); })) {
      const int order = std::stoi(digits);
      if (order < 1 || order > PnBasis::kMaxOrder) {
        throw InputError("closure '" + name + "': order must be between 1 and " + std::to_string(PnBasis::kMaxOrder));
      }
      return {fiber ? ClosureKind::PNF : ClosureKind::PN, order};
    }
  }
  throw InputError("unknown closure '" + name + "' (expected K1F, M1F, P1F, P<N> or P<N>F)");
}

std::string to_string(const ClosureSpec& closure) {
  switch (closure.kind) {
    case ClosureKind::K1F: return "K1F";
    case ClosureKind::M1F: return "M1F";
    case ClosureKind::P1F: return "P1F";
    case ClosureKind::PN: return "P" + std::to_string(closure.order);
    case ClosureKind::PNF: return "P" + std::to_string(closure.order) + "F";
  }
  return "?";
}

TissueCell TissueCell::from_fields(const TissueFields& fields, std::size_t cell) {
  TissueCell out;
  out.water_tensor = fields.water_tensor[cell];
  out.fiber_pressure = fields.fiber_pressure[cell];
  out.haptotactic = fields.haptotactic[cell];
  out.grad = Vec3(fields.volume_fraction_grad[cell].x(), fields.volume_fraction_grad[cell].y(), 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// First-order system
// ---------------------------------------------------------------------------

Vec4 first_order_flux(const MomentVector1& m, const Mat3& pressure, int direction, double eps) {
  if (direction < 0 || direction > 2) throw InputError("flux direction must be 0, 1 or 2");
  Vec4 out;
  out[0] = m.q[direction];
  out.tail<3>() = pressure.col(direction);
  return out / eps;
}

Vec4 first_order_source(const MomentVector1& m, const Mat3& pressure, const TissueCell& cell,
                        const ScalingParams& s) {
  Vec4 out = Vec4::Zero();
  const Vec3 relaxation = m.rho * cell.fiber_mean - m.q;
  const Vec3 haptotaxis = pressure * cell.grad - cell.fiber_mean * m.q.dot(cell.grad);
  out.tail<3>() = (s.R / (s.eps * s.eps)) * relaxation + (s.eta / s.eps) * cell.haptotactic * haptotaxis;
  return out;
}

// ---------------------------------------------------------------------------
// P_N reference evaluation
// ---------------------------------------------------------------------------

std::vector<double> peanut_values(const Mat3& water_tensor, const SphereQuadrature& quadrature) {
  std::vector<double> out(quadrature.size());
  for (std::size_t i = 0; i < quadrature.size(); ++i) out[i] = peanut_density<double>(water_tensor, quadrature.node(i));
  return out;
}

PnFluxSource pn_flux_and_source(const VecX& u, const TissueCell& cell, const ScalingParams& s,
                                const PnBasis& basis, const SphereQuadrature& quadrature,
                                const std::vector<double>& anchor) {
  if (!u.allFinite()) throw NumericalError("P_N evaluation: non-finite moment vector");
  const PnAnsatz ansatz = pnf_reconstruct(u, quadrature, anchor, basis);
  const int k = basis.size();
  double rho = 0.0;
  Vec3 q = Vec3::Zero();
  for (std::size_t i = 0; i < quadrature.size(); ++i) {
    rho += quadrature.weight(i) * ansatz.values[i];
    q += quadrature.weight(i) * ansatz.values[i] * quadrature.node(i);
  }
  PnFluxSource out;
  out.flux_x = VecX::Zero(k);
  out.flux_y = VecX::Zero(k);
  VecX l1 = VecX::Zero(k);
  VecX l2 = VecX::Zero(k);
  for (std::size_t i = 0; i < quadrature.size(); ++i) {
    const Vec3& v = quadrature.node(i);
    const double w = quadrature.weight(i);
    const double f = ansatz.values[i];
    const double equilibrium = peanut_density<double>(cell.water_tensor, v);
    const VecX a = basis.evaluate(v);
    out.flux_x += (w * v.x() * f) * a;
    out.flux_y += (w * v.y() * f) * a;
    l1 += (w * (equilibrium * rho - f)) * a;
    l2 += (w * cell.haptotactic * cell.grad.dot(v * f - equilibrium * q)) * a;
  }
  out.flux_x /= s.eps;
  out.flux_y /= s.eps;
  out.source = (s.R / (s.eps * s.eps)) * l1 + (s.eta / s.eps) * l2;
  return out;
}

DiffusionCoefficients diffusion_coefficients(const TissueCell& cell, const ScalingParams& s) {
  DiffusionCoefficients out;
  out.D = cell.fiber_pressure / s.R;
  out.drift = s.eta * cell.haptotactic * (out.D * cell.grad);
  return out;
}

// ---------------------------------------------------------------------------
// MomentSystem
// ---------------------------------------------------------------------------

namespace {

constexpr double kConditionLimit = 1e8;

template <typename Matrix>
CharacteristicBasisT<Matrix::RowsAtCompileTime> general_basis(const Matrix& jacobian) {
  CharacteristicBasisT<Matrix::RowsAtCompileTime> out;
  out.eigenvalues.setZero(jacobian.rows());
  out.right.setZero(jacobian.rows(), jacobian.cols());
  out.condition = std::numeric_limits<double>::infinity();
  Eigen::EigenSolver<Matrix> solver(jacobian, true);
  if (solver.info() != Eigen::Success) return out;
  const double scale = std::max(1.0, jacobian.cwiseAbs().maxCoeff());
  if (solver.eigenvalues().imag().cwiseAbs().maxCoeff() > 1e-9 * scale) return out;
  Matrix right = solver.eigenvectors().real();
  for (Eigen::Index c = 0; c < right.cols(); ++c) {
    const double norm = right.col(c).norm();
    if (!(norm > 0.0)) return out;
    right.col(c) /= norm;
  }
  // Frobenius condition number; it bounds the spectral one from above.
  const Matrix left = right.inverse();
  out.condition = right.norm() * left.norm();
  if (!std::isfinite(out.condition)) out.condition = std::numeric_limits<double>::infinity();
  out.eigenvalues = solver.eigenvalues().real();
  out.right = right;
  if (!(out.condition <= kConditionLimit)) return out;
  out.left = left;
  out.valid = true;
  return out;
}

// Real 3 x 3 spectrum from the characteristic cubic (trigonometric form, one Newton polish),
// eigenvectors as cross products of rows of J - lambda I. Empty when the roots are complex,
// nearly coincident, or an eigenvector is ill-determined; the caller then uses EigenSolver.
std::optional<CharacteristicBasisT<3>> closed_form_basis(const Mat3& j) {
  const double scale = std::max(1.0, j.cwiseAbs().maxCoeff());
  const double c2 = j.trace();
  const double c1 = j(0, 0) * j(1, 1) - j(0, 1) * j(1, 0) + j(0, 0) * j(2, 2) - j(0, 2) * j(2, 0) +
                    j(1, 1) * j(2, 2) - j(1, 2) * j(2, 1);
  const double c0 = j.determinant();
  const double m = c2 / 3.0;
  const double p = c1 - 3.0 * m * m;
  const double q = -2.0 * m * m * m + c1 * m - c0;
  if (!(p < -1e-8 * scale * scale)) return std::nullopt;
  const double r = std::sqrt(-p / 3.0);
  const double arg = 1.5 * q / (p * r);
  if (std::abs(arg) > 1.0 - 1e-10) return std::nullopt;
  const double phi = std::acos(arg) / 3.0;
  Vec3 lambda;
  for (int k = 0; k < 3; ++k) {
    double x = m + 2.0 * r * std::cos(phi - 2.0 * std::numbers::pi * k / 3.0);
    const double f = ((x - c2) * x + c1) * x - c0;
    const double df = (3.0 * x - 2.0 * c2) * x + c1;
    if (df != 0.0) x -= f / df;
    lambda[k] = x;
  }
  const double gap = std::min({std::abs(lambda[0] - lambda[1]), std::abs(lambda[1] - lambda[2]),
                               std::abs(lambda[0] - lambda[2])});
  if (gap < 1e-6 * scale) return std::nullopt;
  CharacteristicBasisT<3> out;
  out.eigenvalues = lambda;
  for (int k = 0; k < 3; ++k) {
    const Mat3 shifted = j - lambda[k] * Mat3::Identity();
    const Vec3 r0 = shifted.row(0), r1 = shifted.row(1), r2 = shifted.row(2);
    const std::array<Vec3, 3> candidates{r0.cross(r1), r0.cross(r2), r1.cross(r2)};
    const Vec3* best = &candidates[0];
    for (const Vec3& c : candidates) {
      if (c.squaredNorm() > best->squaredNorm()) best = &c;
    }
    const double norm = best->norm();
    if (!(norm > 1e-8 * scale * scale)) return std::nullopt;
    out.right.col(k) = *best / norm;
  }
  out.left = out.right.inverse();
  out.condition = out.right.norm() * out.left.norm();
  if (!std::isfinite(out.condition)) return std::nullopt;
  out.valid = out.condition <= kConditionLimit;
  return out;
}

/// Eigen-decomposition of A = B G^{-1} through the symmetric matrix L^{-1} B L^{-T}, G = L L^T.
CharacteristicBasis gram_symmetric_basis(const MatX& b, const Eigen::LLT<MatX>& llt) {
  const MatX l = llt.matrixL();
  const MatX linv = l.triangularView<Eigen::Lower>().solve(MatX::Identity(l.rows(), l.cols()));
  MatX sym = linv * b * linv.transpose();
  sym = 0.5 * (sym + sym.transpose());
  Eigen::SelfAdjointEigenSolver<MatX> solver(sym);
  CharacteristicBasis out;
  out.eigenvalues = solver.eigenvalues();
  out.right = l * solver.eigenvectors();
  VecX norms = out.right.colwise().norm().transpose();
  out.left = solver.eigenvectors().transpose() * linv;
  for (Eigen::Index c = 0; c < out.right.cols(); ++c) {
    out.right.col(c) /= norms[c];
    out.left.row(c) *= norms[c];
  }
  Eigen::JacobiSVD<MatX> svd(out.right);
  out.condition = svd.singularValues()[0] / svd.singularValues().tail(1)[0];
  out.valid = out.condition <= kConditionLimit;
  return out;
}

struct PnOperators {
  std::array<MatX, 2> flux;   // unscaled A_x, A_y
  std::array<CharacteristicBasis, 2> characteristic;
  MatX gram_inverse;
  VecX fiber_moments;  // <a Q^>
};

}  // namespace

struct MomentSystem::Impl {
  ClosureSpec closure;
  TissueFields tissue;
  ScalingParams scaling;
  SphereQuadrature quadrature;
  std::vector<TissueCell> cells;
  std::optional<PnBasis> basis;
  MatX table;  // P_N basis at the quadrature nodes
  // P_N: one operator set per cell (PNF) or a shared set (PN) plus per-cell fiber moments.
  std::vector<PnOperators> pn;
  std::vector<VecX> fiber_moments;
  std::vector<MatX> pn_source;
  // M1F anchor values per cell.
  std::vector<std::vector<double>> anchors;

  Impl(ClosureSpec c, TissueFields t, ScalingParams s)
      : closure(c), tissue(std::move(t)), scaling(s),
        quadrature(SphereQuadrature::build(c.resolved_quadrature_degree())) {}

  const PnOperators& pn_ops(std::size_t cell) const { return pn.size() == 1 ? pn.front() : pn[cell]; }

  std::vector<double> anchor_for(std::size_t cell) const {
    if (closure.kind == ClosureKind::PN) {
      return std::vector<double>(quadrature.size(), 1.0 / (4.0 * std::numbers::pi));
    }
    return peanut_values(cells[cell].water_tensor, quadrature);
  }

  Mat3 pressure(const MomentVector1& m, std::size_t cell) const {
    if (m.rho == 0.0 && m.q.isZero(0.0)) return Mat3::Zero();
    switch (closure.kind) {
      case ClosureKind::K1F: return kershaw_closure(m, cells[cell].fiber_pressure).P;
      case ClosureKind::P1F:
        return p1f_closure(m, peanut_anchor_moments(cells[cell].fiber_pressure), scaling.eps).P;
      case ClosureKind::M1F: {
        const std::vector<double>& anchor = anchors.empty() ? anchor_for(cell) : anchors[cell];
        return m1f_closure(m, quadrature, anchor, scaling.eps).P;
      }
      default: break;
    }
    throw NumericalError("pressure closure requested for a P_N system");
  }

  void require_first_order() const {
    if (basis) throw InputError("fixed-size evaluation needs a first-order closure, not " + to_string(closure));
  }

  // Without a haptotactic drift only the linear relaxation remains; P1F is always linear.
  std::optional<Mat4> linear_source4(std::size_t cell) const {
    const TissueCell& c = cells[cell];
    if (closure.kind == ClosureKind::P1F) {
      Mat4 out;
      for (int k = 0; k < 4; ++k) {
        const MomentVector1 m = MomentVector1::from_vector(Vec4::Unit(k));
        out.col(k) = first_order_source(m, pressure(m, cell), c, scaling);
      }
      return out;
    }
    if (c.haptotactic == 0.0 || c.grad.isZero(0.0)) {
      const double relax = scaling.R / (scaling.eps * scaling.eps);
      Mat4 out = Mat4::Zero();
      out.block<3, 1>(1, 0) = relax * c.fiber_mean;
      out.block<3, 3>(1, 1) = -relax * Mat3::Identity();
      return out;
    }
    return std::nullopt;
  }

  // Unscaled flux Jacobian of the first-order closures.
  Mat4 first_order_jacobian(const Vec4& u, std::size_t cell, int direction) const {
    const MomentVector1 m = MomentVector1::from_vector(u);
    switch (closure.kind) {
      case ClosureKind::K1F: return kershaw_flux_jacobian(m, cells[cell].fiber_pressure, unit(direction));
      case ClosureKind::P1F: {
        Mat4 out;
        for (int k = 0; k < 4; ++k) {
          const MomentVector1 e = MomentVector1::from_vector(Vec4::Unit(k));
          out.col(k) = first_order_flux(e, pressure(e, cell), direction, 1.0);
        }
        return out;
      }
      default: break;
    }
    const double h = 1e-7 * std::max(u.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    Mat4 out;
    for (int j = 0; j < 4; ++j) {
      Vec4 plus = u;
      Vec4 minus = u;
      plus[j] += h;
      minus[j] -= h;
      const MomentVector1 mp = MomentVector1::from_vector(plus);
      const MomentVector1 mm = MomentVector1::from_vector(minus);
      out.col(j) = (first_order_flux(mp, pressure(mp, cell), direction, 1.0) -
                    first_order_flux(mm, pressure(mm, cell), direction, 1.0)) /
                   (2.0 * h);
    }
    return out;
  }

  PnOperators build_pn(const std::vector<double>& anchor) const {
    PnOperators ops;
    const MatX gram = gram_matrix(table, quadrature, anchor);
    Eigen::LLT<MatX> llt(gram);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("P_N system: Gram matrix <a a^T F> is not positive definite");
    }
    ops.gram_inverse = llt.solve(MatX::Identity(gram.rows(), gram.cols()));
    for (int d = 0; d < 2; ++d) {
      VecX weights(table.cols());
      for (Eigen::Index i = 0; i < table.cols(); ++i) {
        weights[i] = quadrature.weight(i) * anchor[i] * quadrature.node(i)[d];
      }
      const MatX b = table * weights.asDiagonal() * table.transpose();
      ops.flux[d] = b * ops.gram_inverse;
      ops.characteristic[d] = gram_symmetric_basis(b, llt);
    }
    return ops;
  }
};

MomentSystem::MomentSystem(ClosureSpec closure, TissueFields tissue, ScalingParams scaling)
    : impl_(std::make_unique<Impl>(closure, std::move(tissue), scaling)) {
  scaling.validate();
  Impl& s = *impl_;
  const std::size_t n = s.tissue.grid.cell_count();
  if (s.tissue.fiber_pressure.size() != n || s.tissue.water_tensor.size() != n ||
      s.tissue.haptotactic.size() != n || s.tissue.volume_fraction_grad.size() != n) {
    throw InputError("tissue fields do not match the grid");
  }
  s.cells.reserve(n);
  for (std::size_t c = 0; c < n; ++c) s.cells.push_back(TissueCell::from_fields(s.tissue, c));

  if (closure.kind == ClosureKind::M1F) {
    s.anchors.reserve(n);
    for (std::size_t c = 0; c < n; ++c) s.anchors.push_back(peanut_values(s.cells[c].water_tensor, s.quadrature));
  }
  if (!closure.first_order()) {
    s.basis.emplace(closure.order);
    s.table = basis_table(*s.basis, s.quadrature);
    if (closure.kind == ClosureKind::PN) {
      s.pn.push_back(s.build_pn(s.anchor_for(0)));
    } else {
      s.pn.reserve(n);
      for (std::size_t c = 0; c < n; ++c) s.pn.push_back(s.build_pn(s.anchor_for(c)));
    }
    const int k = s.basis->size();
    const double relax = scaling.R / (scaling.eps * scaling.eps);
    s.fiber_moments.reserve(n);
    s.pn_source.reserve(n);
    for (std::size_t c = 0; c < n; ++c) {
      const std::vector<double> peanut = peanut_values(s.cells[c].water_tensor, s.quadrature);
      VecX fiber = VecX::Zero(k);
      for (std::size_t i = 0; i < s.quadrature.size(); ++i) {
        fiber += (s.quadrature.weight(i) * peanut[i]) * s.table.col(static_cast<Eigen::Index>(i));
      }
      const TissueCell& cell = s.cells[c];
      const PnOperators& ops = s.pn_ops(c);
      MatX source = relax * (fiber * VecX::Unit(k, 0).transpose() - MatX::Identity(k, k));
      for (int d = 0; d < 2; ++d) {
        source += (scaling.eta / scaling.eps) * cell.haptotactic * cell.grad[d] *
                  (ops.flux[d] - fiber * VecX::Unit(k, 1 + d).transpose());
      }
      source.row(0).setZero();
      s.fiber_moments.push_back(std::move(fiber));
      s.pn_source.push_back(std::move(source));
    }
  }
}

MomentSystem::MomentSystem(MomentSystem&&) noexcept = default;
MomentSystem& MomentSystem::operator=(MomentSystem&&) noexcept = default;
MomentSystem::~MomentSystem() = default;

int MomentSystem::size() const { return impl_->basis ? impl_->basis->size() : 4; }
const ClosureSpec& MomentSystem::closure() const { return impl_->closure; }
const TissueFields& MomentSystem::tissue() const { return impl_->tissue; }
const ScalingParams& MomentSystem::scaling() const { return impl_->scaling; }
const SphereQuadrature& MomentSystem::quadrature() const { return impl_->quadrature; }
const TissueCell& MomentSystem::cell(std::size_t index) const { return impl_->cells.at(index); }
double MomentSystem::wave_speed() const { return 1.0 / impl_->scaling.eps; }

VecX MomentSystem::flux(const VecX& u, std::size_t cell, int direction) const {
  const Impl& s = *impl_;
  if (s.basis) return s.pn_ops(cell).flux[direction] * u / s.scaling.eps;
  return flux4(u, cell, direction);
}

Vec4 MomentSystem::flux4(const Vec4& u, std::size_t cell, int direction) const {
  const Impl& s = *impl_;
  s.require_first_order();
  const MomentVector1 m = MomentVector1::from_vector(u);
  return first_order_flux(m, s.pressure(m, cell), direction, s.scaling.eps);
}

VecX MomentSystem::source(const VecX& u, std::size_t cell) const {
  const Impl& s = *impl_;
  if (s.basis) return s.pn_source[cell] * u;
  return source4(u, cell);
}

Vec4 MomentSystem::source4(const Vec4& u, std::size_t cell) const {
  const Impl& s = *impl_;
  s.require_first_order();
  const MomentVector1 m = MomentVector1::from_vector(u);
  return first_order_source(m, s.pressure(m, cell), s.cells[cell], s.scaling);
}

std::optional<MatX> MomentSystem::linear_source(std::size_t cell) const {
  const Impl& s = *impl_;
  if (s.basis) return s.pn_source[cell];
  if (auto fixed = s.linear_source4(cell)) return MatX(*fixed);
  return std::nullopt;
}

MatX MomentSystem::source_jacobian(const VecX& u, std::size_t cell) const {
  const Impl& s = *impl_;
  if (s.basis) return s.pn_source[cell];
  return source_jacobian4(u, cell);
}

Mat4 MomentSystem::source_jacobian4(const Vec4& u, std::size_t cell) const {
  const Impl& s = *impl_;
  s.require_first_order();
  if (auto linear = s.linear_source4(cell)) return *linear;
  if (s.closure.kind == ClosureKind::K1F && u[0] > 0.0) {
    const TissueCell& c = s.cells[cell];
    const double rho = u[0];
    const Vec3 q = u.segment<3>(1);
    const Vec3 g = c.grad;
    const Vec3 dg = c.fiber_pressure * g;
    const double relax = s.scaling.R / (s.scaling.eps * s.scaling.eps);
    const double hapto = s.scaling.eta / s.scaling.eps * c.haptotactic;
    // P g = rho D_F g - (|q|^2/rho) D_F g + q (q.g)/rho
    const Vec3 dp_drho = dg + (q.squaredNorm() / (rho * rho)) * dg - q * (q.dot(g) / (rho * rho));
    const Mat3 dp_dq =
        -(2.0 / rho) * dg * q.transpose() + (q.dot(g) / rho) * Mat3::Identity() + (q * g.transpose()) / rho;
    Mat4 out = Mat4::Zero();
    out.block<3, 1>(1, 0) = relax * c.fiber_mean + hapto * dp_drho;
    out.block<3, 3>(1, 1) = -relax * Mat3::Identity() + hapto * (dp_dq - c.fiber_mean * g.transpose());
    return out;
  }
  // Central finite differences, step 1e-7 relative to the state.
  const double h = 1e-7 * std::max(u.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  Mat4 out;
  for (int j = 0; j < 4; ++j) {
    Vec4 plus = u;
    Vec4 minus = u;
    plus[j] += h;
    minus[j] -= h;
    out.col(j) = (source4(plus, cell) - source4(minus, cell)) / (2.0 * h);
  }
  return out;
}

MatX MomentSystem::flux_jacobian(const VecX& u, std::size_t cell, int direction) const {
  const Impl& s = *impl_;
  if (s.basis) return s.pn_ops(cell).flux[direction];
  return s.first_order_jacobian(u, cell, direction);
}

CharacteristicBasis MomentSystem::characteristic_basis(const VecX& u, std::size_t cell, int direction) const {
  const Impl& s = *impl_;
  if (s.basis) return s.pn_ops(cell).characteristic[direction];
  const CharacteristicBasis4 fixed = characteristic_basis4(u, cell, direction);
  CharacteristicBasis out;
  out.valid = fixed.valid;
  out.condition = fixed.condition;
  out.eigenvalues = fixed.eigenvalues;
  out.right = fixed.right;
  if (fixed.valid) out.left = fixed.left;
  return out;
}

CharacteristicBasis4 MomentSystem::characteristic_basis4(const Vec4& u, std::size_t cell, int direction) const {
  impl_->require_first_order();
  const Mat4 jac = impl_->first_order_jacobian(u, cell, direction);
  // In-plane states with D_F free of z coupling: q_z decouples (up to rounding) and a 3 x 3 problem remains.
  const double coupling_tol = 1e-13 * std::max(1.0, jac.cwiseAbs().maxCoeff());
  if (jac.block<1, 3>(3, 0).cwiseAbs().maxCoeff() > coupling_tol ||
      jac.block<3, 1>(0, 3).cwiseAbs().maxCoeff() > coupling_tol) {
    return general_basis<Mat4>(jac);
  }
  const Mat3 block = jac.topLeftCorner<3, 3>();
  const auto closed = closed_form_basis(block);
  const CharacteristicBasisT<3> plane = closed ? *closed : general_basis<Mat3>(block);
  CharacteristicBasis4 out;
  out.condition = plane.condition;
  out.eigenvalues << plane.eigenvalues, jac(3, 3);
  out.right.setIdentity();
  out.right.topLeftCorner<3, 3>() = plane.right;
  if (!plane.valid) return out;
  out.left.setIdentity();
  out.left.topLeftCorner<3, 3>() = plane.left;
  // Frobenius norms gain the unit z entry.
  out.condition = std::sqrt(plane.right.squaredNorm() + 1.0) * std::sqrt(plane.left.squaredNorm() + 1.0);
  out.valid = out.condition <= kConditionLimit;
  return out;
}

VecX MomentSystem::moment_basis(const Vec3& v) const {
  if (impl_->basis) return impl_->basis->evaluate(v);
  return Vec4(1.0, v.x(), v.y(), v.z());
}

std::vector<double> MomentSystem::ansatz_values(const VecX& u, std::size_t cell,
                                                const std::vector<Vec3>& directions) const {
  const Impl& s = *impl_;
  std::vector<double> out(directions.size(), 0.0);
  if (s.basis) {
    const VecX lambda = s.pn_ops(cell).gram_inverse * u;
    const Mat3& water = s.cells[cell].water_tensor;
    for (std::size_t i = 0; i < directions.size(); ++i) {
      const double anchor = s.closure.kind == ClosureKind::PN ? 1.0 / (4.0 * std::numbers::pi)
                                                               : peanut_density<double>(water, directions[i]);
      out[i] = lambda.dot(s.basis->evaluate(directions[i])) * anchor;
    }
    return out;
  }
  MomentVector1 m = MomentVector1::from_vector(u);
  if (m.rho <= 0.0) {
    if (m.rho == 0.0 && m.q.isZero(0.0)) return out;
    throw NumericalError("ansatz reconstruction needs rho > 0");
  }
  const Mat3& water = s.cells[cell].water_tensor;
  if (s.closure.kind == ClosureKind::P1F) {
    const ClosureResult r = p1f_closure(m, peanut_anchor_moments(s.cells[cell].fiber_pressure), s.scaling.eps);
    const Vec3 c = s.scaling.eps * r.multipliers->b;
    for (std::size_t i = 0; i < directions.size(); ++i) {
      out[i] = (r.multipliers->a + c.dot(directions[i])) * peanut_density<double>(water, directions[i]);
    }
    return out;
  }
  // M1F ansatz; the Kershaw closure has no distribution of its own and borrows it.
  // Its flux is capped at |q^| = 0.999; near-beam states outside the reach of a coarse rule retry at 0.9.
  const double q_norm = m.q_hat().norm();
  if (q_norm > 0.999) m.q *= 0.999 / q_norm;
  const std::vector<double> anchor = s.anchors.empty() ? s.anchor_for(cell) : s.anchors[cell];
  const auto solve = [&]() {
    try {
      return m1f_closure(m, s.quadrature, anchor, s.scaling.eps);
    } catch (const NumericalError&) {
      if (q_norm <= 0.9) throw;
      m.q *= 0.9 / m.q_hat().norm();
      return m1f_closure(m, s.quadrature, anchor, s.scaling.eps);
    }
  };
  const ClosureResult r = solve();
  const Vec3 c = s.scaling.eps * r.multipliers->b;
  const double log_z = log_sum_exp_partition(s.quadrature, anchor, c);
  const double log_rho = std::log(m.rho);
  for (std::size_t i = 0; i < directions.size(); ++i) {
    out[i] = std::exp(log_rho - log_z + c.dot(directions[i])) * peanut_density<double>(water, directions[i]);
  }
  return out;
}

VecX MomentSystem::equilibrium(double rho, std::size_t cell) const {
  const Impl& s = *impl_;
  if (s.basis) return rho * s.fiber_moments[cell];
  Vec4 out = Vec4::Zero();
  out[0] = rho;
  out.tail<3>() = rho * s.cells[cell].fiber_mean;
  return out;
}

}  // namespace moment_glioma
