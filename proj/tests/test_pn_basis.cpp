#include "moment_glioma/closures.hpp"
#include "moment_glioma/kinetic_system.hpp"
#include "moment_glioma/pn_basis.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace moment_glioma;

TEST(PnBasis, FirstOrderBasis) {
  const PnBasis basis(1);
  EXPECT_EQ(basis.size(), 4);
  EXPECT_EQ(basis.full_count(), 4);
  const Vec3 v = Vec3(0.2, -0.4, 0.5).normalized();
  const VecX a = basis.evaluate(v);
  EXPECT_EQ(a[0], 1.0);
  EXPECT_EQ(a.tail(3), v);
}

TEST(PnBasis, Counts) {
  for (int n = 1; n <= 5; ++n) {
    const PnBasis basis(n);
    EXPECT_EQ(basis.full_count(), (n + 1) * (n + 2) * (n + 3) / 6);
    EXPECT_EQ(basis.size(), (n + 1) * (n + 1));
  }
  EXPECT_EQ(PnBasis(2).full_count(), 10);
  EXPECT_THROW(PnBasis(0), InputError);
  EXPECT_THROW(PnBasis(6), InputError);
}

TEST(PnBasis, FullGramIsRankDeficientReducedIsNot) {
  const auto quad = SphereQuadrature::build(13);
  const std::vector<double> uniform(quad.size(), 1.0 / (4.0 * std::numbers::pi));
  for (int n = 1; n <= 5; ++n) {
    const PnBasis basis(n);
    EXPECT_EQ(full_gram_rank(basis, quad, uniform), (n + 1) * (n + 1)) << n;
    const MatX gram = gram_matrix(basis_table(basis, quad), quad, uniform);
    Eigen::SelfAdjointEigenSolver<MatX> solver(gram);
    EXPECT_GT(solver.eigenvalues()[0], 1e-10) << n;
  }
}

TEST(PnReconstruct, UniformFirstOrder) {
  const auto quad = SphereQuadrature::build(10);
  const std::vector<double> uniform(quad.size(), 1.0 / (4.0 * std::numbers::pi));
  const PnBasis basis(1);
  const MatX gram = gram_matrix(basis_table(basis, quad), quad, uniform);
  EXPECT_LT((gram - Vec4(1, 1.0 / 3, 1.0 / 3, 1.0 / 3).asDiagonal().toDenseMatrix()).norm(), 1e-14);
  const auto ansatz = pnf_reconstruct(Vec4(1, 0, 0, 0), quad, uniform, basis);
  for (double f : ansatz.values) EXPECT_NEAR(f, 1.0 / (4.0 * std::numbers::pi), 1e-15);
  const auto zero = pnf_reconstruct(Vec4::Zero(), quad, uniform, basis);
  for (double f : zero.values) EXPECT_EQ(f, 0.0);
}

TEST(PnReconstruct, ReproducesMoments) {
  const auto quad = SphereQuadrature::build(13);
  const Mat3 dw = Vec3(6, 1, 2).asDiagonal();
  const auto anchor = peanut_values(dw, quad);
  const PnBasis basis(3);
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  VecX moments = VecX::Zero(basis.size());
  for (int k = 0; k < basis.size(); ++k) moments[k] = u(rng);
  moments[0] = 1.0;
  const auto ansatz = pnf_reconstruct(moments, quad, anchor, basis);
  VecX back = VecX::Zero(basis.size());
  for (std::size_t i = 0; i < quad.size(); ++i) back += quad.weight(i) * ansatz.values[i] * basis.evaluate(quad.node(i));
  EXPECT_LT((back - moments).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PnReconstruct, PeanutFirstOrderMatchesP1F) {
  const auto quad = SphereQuadrature::build(10);
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const PnBasis basis(1);
  for (int trial = 0; trial < 20; ++trial) {
    Mat3 a;
    for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = u(rng);
    const Mat3 dw = a * a.transpose() + 0.1 * Mat3::Identity();
    const Vec3 q = 0.3 * Vec3(u(rng), u(rng), u(rng));
    const auto anchor = peanut_values(dw, quad);
    const auto ansatz = pnf_reconstruct(Vec4(1.0, q.x(), q.y(), q.z()), quad, anchor, basis);
    Mat3 p = Mat3::Zero();
    for (std::size_t i = 0; i < quad.size(); ++i) p += quad.weight(i) * ansatz.values[i] * quad.node(i) * quad.node(i).transpose();
    const auto reference = p1f_closure({1.0, q}, peanut_anchor_moments(peanut_pressure_tensor<double>(dw)), 1.0);
    EXPECT_LT((p - reference.P).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PnReconstruct, FlatAnchorIsSingular) {
  const auto quad = SphereQuadrature::build(10);
  std::vector<double> flat;
  for (const Vec3& v : quad.nodes()) flat.push_back(std::abs(v.z()) < 1e-12 ? 1.0 : 0.0);
  EXPECT_THROW(pnf_reconstruct(Vec4(1, 0, 0, 0), quad, flat, PnBasis(1)), NumericalError);
}
