#include "moment_glioma/pn_basis.hpp"

#include <cmath>
#include <string>

namespace moment_glioma {

namespace {

double monomial(const MultiIndex& index, const Vec3& v) {
  double value = 1.0;
  for (int c = 0; c < 3; ++c) {
    for (int p = 0; p < index[c]; ++p) value *= v[c];
  }
  return value;
}

}  // namespace

PnBasis::PnBasis(int order) : order_(order) {
  if (order < 1 || order > kMaxOrder) {
    throw InputError("P_N order " + std::to_string(order) + " outside the supported range 1.." +
                     std::to_string(kMaxOrder));
  }
  for (int degree = 0; degree <= order; ++degree) {
    for (int ix = degree; ix >= 0; --ix) {
      for (int iy = degree - ix; iy >= 0; --iy) {
        const MultiIndex index{ix, iy, degree - ix - iy};
        full_.push_back(index);
        if (index[2] <= 1) active_.push_back(index);
      }
    }
  }
}

VecX PnBasis::evaluate(const Vec3& v) const {
  VecX out(size());
  for (int k = 0; k < size(); ++k) out[k] = monomial(active_[k], v);
  return out;
}

VecX PnBasis::evaluate_full(const Vec3& v) const {
  VecX out(full_count());
  for (int k = 0; k < full_count(); ++k) out[k] = monomial(full_[k], v);
  return out;
}

PnBasis pn_basis(int order) { return PnBasis(order); }

int full_gram_rank(const PnBasis& basis, const SphereQuadrature& quadrature, const std::vector<double>& anchor) {
  MatX gram = MatX::Zero(basis.full_count(), basis.full_count());
  for (std::size_t i = 0; i < quadrature.size(); ++i) {
    const VecX a = basis.evaluate_full(quadrature.node(i));
    gram += quadrature.weight(i) * anchor[i] * (a * a.transpose());
  }
  Eigen::SelfAdjointEigenSolver<MatX> solver(gram, Eigen::EigenvaluesOnly);
  const double largest = solver.eigenvalues().cwiseAbs().maxCoeff();
  int rank = 0;
  for (Eigen::Index k = 0; k < solver.eigenvalues().size(); ++k) {
    if (solver.eigenvalues()[k] > 1e-12 * largest) ++rank;
  }
  return rank;
}

MatX basis_table(const PnBasis& basis, const SphereQuadrature& quadrature) {
  MatX table(basis.size(), static_cast<Eigen::Index>(quadrature.size()));
  for (std::size_t i = 0; i < quadrature.size(); ++i) {
    table.col(static_cast<Eigen::Index>(i)) = basis.evaluate(quadrature.node(i));
  }
  return table;
}

MatX gram_matrix(const MatX& table, const SphereQuadrature& quadrature, const std::vector<double>& anchor) {
  if (anchor.size() != quadrature.size()) throw InputError("anchor values must match the quadrature nodes");
  VecX weights(table.cols());
  for (Eigen::Index i = 0; i < table.cols(); ++i) weights[i] = quadrature.weight(i) * anchor[i];
  return table * weights.asDiagonal() * table.transpose();
}

PnAnsatz pnf_reconstruct(const VecX& moments, const SphereQuadrature& quadrature,
                         const std::vector<double>& anchor, const PnBasis& basis) {
  if (moments.size() != basis.size()) {
    throw InputError("moment vector has " + std::to_string(moments.size()) + " entries, basis has " +
                     std::to_string(basis.size()));
  }
  const MatX table = basis_table(basis, quadrature);
  const MatX gram = gram_matrix(table, quadrature, anchor);
  Eigen::LDLT<MatX> ldlt(gram);
  const double largest = ldlt.vectorD().cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-13 * largest)) {
    throw NumericalError("P_N(F) reconstruction: Gram matrix <a a^T F> is singular (anchor with flat support?)");
  }
  PnAnsatz out;
  out.multipliers = ldlt.solve(moments);
  const VecX nodal = table.transpose() * out.multipliers;
  out.values.resize(quadrature.size());
  for (std::size_t i = 0; i < quadrature.size(); ++i) out.values[i] = nodal[static_cast<Eigen::Index>(i)] * anchor[i];
  return out;
}

}  // namespace moment_glioma
