#include "moment_glioma/closures.hpp"
#include "moment_glioma/kinetic_system.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace moment_glioma;

namespace {

Mat3 random_spd(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat3 a;
  for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = u(rng);
  return a * a.transpose() + 0.05 * Mat3::Identity();
}

Vec3 random_ball(std::mt19937& rng, double radius) {
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec3 d(n(rng), n(rng), n(rng));
  return d.normalized() * radius * std::cbrt(u(rng));
}

}  // namespace

TEST(P1F, SymmetricAnchorGivesRhoM2) {
  const Mat3 df = peanut_pressure_tensor<double>(Vec3(6, 1, 1).asDiagonal());
  const MomentVector1 m{2.0, Vec3(0.3, -0.2, 0.1)};
  const auto r = p1f_closure(m, peanut_anchor_moments(df), 0.5);
  EXPECT_LT((r.P - 2.0 * df).norm(), 1e-14);
}

TEST(P1F, PeanutIsotropicMultipliers) {
  const auto r = p1f_closure({1.0, Vec3(0.1, 0, 0)}, peanut_anchor_moments(Mat3::Identity() / 3.0), 1.0);
  ASSERT_TRUE(r.multipliers);
  EXPECT_LT((r.multipliers->b - Vec3(0.3, 0, 0)).norm(), 1e-14);
  EXPECT_LT((r.P - Mat3::Identity() / 3.0).norm(), 1e-15);
}

TEST(P1F, EquilibriumFluxHasZeroB) {
  // Non-symmetric anchor F = (1 + 0.5 v_x)/(4 pi) integrated by quadrature.
  const auto quad = SphereQuadrature::build(10);
  std::vector<double> anchor;
  for (const Vec3& v : quad.nodes()) anchor.push_back((1.0 + 0.5 * v.x()) / (4.0 * std::numbers::pi));
  const AnchorMoments am = anchor_moments(quad, anchor);
  const auto r = p1f_closure({1.5, 1.5 * am.m1}, am, 0.7);
  EXPECT_LT(r.multipliers->b.norm(), 1e-13);
  EXPECT_LT((r.P - 1.5 * am.m2).norm(), 1e-13);
}

TEST(P1F, FlatAnchorIsSingular) {
  AnchorMoments flat;
  flat.m2 = Vec3(0.5, 0.5, 0.0).asDiagonal();
  EXPECT_THROW(p1f_closure({1.0, Vec3::Zero()}, flat, 1.0), NumericalError);
}

TEST(M1F, IsotropicMomentResidualAndTrace) {
  const auto quad = SphereQuadrature::build(10);
  const std::vector<double> anchor(quad.size(), 1.0 / (4.0 * std::numbers::pi));
  const MomentVector1 m{1.0, Vec3(0.3, 0, 0)};
  const auto r = m1f_closure(m, quad, anchor, 1.0);
  EXPECT_LE(r.residual, 1e-10);
  EXPECT_NEAR(r.P.trace(), 1.0, 1e-10);
  // Cross-check against a dense rule evaluated with the returned multipliers.
  const auto dense = SphereQuadrature::build(40);
  const auto f = [&](const Vec3& v) { return r.multipliers->a * std::exp(r.multipliers->b.dot(v)) / (4.0 * std::numbers::pi); };
  // The closure is defined by the degree-10 rule; the dense rule sees a smooth integrand
  // and must agree to the degree-10 rule's error on exp(0.93 v_x).
  const double rho_dense = dense.integrate(f);
  EXPECT_NEAR(rho_dense, 1.0, 1e-6);
  const Mat3 p_dense = dense.integrate([&](const Vec3& v) -> Mat3 { return f(v) * v * v.transpose(); });
  EXPECT_LT((p_dense - r.P).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(M1F, EquilibriumGivesAnchorPressure) {
  const auto quad = SphereQuadrature::build(10);
  const Mat3 dw = Vec3(6, 1, 1).asDiagonal();
  std::vector<double> anchor;
  for (const Vec3& v : quad.nodes()) anchor.push_back(peanut_density<double>(dw, v));
  const auto r = m1f_closure({2.0, Vec3::Zero()}, quad, anchor, 0.5);
  EXPECT_LT(r.multipliers->b.norm(), 1e-12);
  EXPECT_NEAR(r.multipliers->a, 2.0, 1e-12);
  EXPECT_LT((r.P - 2.0 * peanut_pressure_tensor<double>(dw)).norm(), 1e-12);
}

TEST(M1F, ConcentrationLimit) {
  const auto quad = SphereQuadrature::build(10);
  const std::vector<double> anchor(quad.size(), 1.0 / (4.0 * std::numbers::pi));
  Mat3 e11 = Mat3::Zero();
  e11(0, 0) = 1.0;
  double previous = 1.0;
  for (double q : {0.9, 0.99, 0.999}) {
    const auto r = m1f_closure({1.0, Vec3(q, 0, 0)}, quad, anchor, 1.0);
    const double distance = (r.P - e11).cwiseAbs().maxCoeff();
    // P11 >= q^2 and tr P = 1 force 1 - P11 <= 1 - q^2 <= 2 (1 - q).
    EXPECT_LE(distance, 2.0 * (1.0 - q) + 1e-10) << q;
    EXPECT_LT(distance, previous);
    previous = distance;
  }
}

TEST(M1F, RejectsNonRealizable) {
  const auto quad = SphereQuadrature::build(10);
  const std::vector<double> anchor(quad.size(), 1.0 / (4.0 * std::numbers::pi));
  EXPECT_THROW(m1f_closure({1.0, Vec3(1.0, 0, 0)}, quad, anchor, 1.0), NumericalError);
  EXPECT_THROW(m1f_closure({0.0, Vec3::Zero()}, quad, anchor, 1.0), NumericalError);
}

TEST(Kershaw, Examples) {
  const Mat3 iso = Mat3::Identity() / 3.0;
  EXPECT_LT((kershaw_closure({1.0, Vec3::Zero()}, iso).P - iso).norm(), 1e-15);
  const Mat3 expected = Vec3(0.5, 0.25, 0.25).asDiagonal();
  EXPECT_LT((kershaw_closure({1.0, Vec3(0.5, 0, 0)}, iso).P - expected).norm(), 1e-15);
  std::mt19937 rng(11);
  const Mat3 df = peanut_pressure_tensor<double>(random_spd(rng));
  const Vec3 q = Vec3(1, 2, -1).normalized();
  EXPECT_LT((kershaw_closure({3.0, 3.0 * q}, df).P - 3.0 * q * q.transpose()).norm(), 1e-14);
  EXPECT_EQ(kershaw_closure({0.0, Vec3::Zero()}, df).P, Mat3::Zero());
  EXPECT_THROW(kershaw_closure({1.0, Vec3(1.1, 0, 0)}, df), NumericalError);
}

TEST(Kershaw, RealizableOnRandomStates) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Mat3 df = peanut_pressure_tensor<double>(random_spd(rng));
    const MomentVector1 m{1.3, 1.3 * random_ball(rng, 1.0)};
    const auto r = kershaw_closure(m, df);
    const auto margins = check_realizability(m, r.P);
    EXPECT_GE(margins.first, 0.0);
    EXPECT_GE(margins.second, -1e-12);
    EXPECT_LE(margins.trace_error, 1e-12);
  }
}

TEST(Realizability, Margins) {
  const Mat3 iso = Mat3::Identity() / 3.0;
  const auto eq = check_realizability({1.0, Vec3::Zero()}, iso);
  EXPECT_GE(eq.first, 0.0);
  EXPECT_GE(eq.second, 0.0);
  const Vec3 e1(1, 0, 0);
  EXPECT_NEAR(check_realizability({1.0, e1}, e1 * e1.transpose()).second, 0.0, 1e-15);
  const auto bad = check_realizability({1.0, Vec3(0.9, 0, 0)}, iso);
  EXPECT_NEAR(bad.second, 1.0 / 3.0 - 0.81, 1e-14);
  EXPECT_LT(bad.second, 0.0);
}

TEST(KershawJacobian, AtRestAndOddness) {
  const Mat3 iso = Mat3::Identity() / 3.0;
  const Vec3 n(1, 0, 0);
  const Mat4 jac = kershaw_flux_jacobian({1.0, Vec3::Zero()}, iso, n);
  Mat4 expected = Mat4::Zero();
  expected.block<1, 3>(0, 1) = n.transpose();
  expected.block<3, 1>(1, 0) = iso * n;
  EXPECT_LT((jac - expected).norm(), 1e-15);
  const auto report = kershaw_spectrum({1.0, Vec3::Zero()}, iso, n);
  const Vec4 values = report.eigenvalues.real();
  EXPECT_NEAR(values[0], 1.0 / std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(values[1], 0.0, 1e-12);
  EXPECT_NEAR(values[2], 0.0, 1e-12);
  EXPECT_NEAR(values[3], -1.0 / std::sqrt(3.0), 1e-12);

  std::mt19937 rng(2);
  const Mat3 df = peanut_pressure_tensor<double>(random_spd(rng));
  const MomentVector1 m{1.0, random_ball(rng, 0.9)};
  const Vec3 dir = random_ball(rng, 1.0).normalized();
  EXPECT_LT((kershaw_flux_jacobian(m, df, -dir) + kershaw_flux_jacobian(m, df, dir)).norm(), 1e-14);
}

TEST(KershawJacobian, MatchesFiniteDifferences) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat3 df = peanut_pressure_tensor<double>(random_spd(rng));
    const Vec4 u(1.2, 0, 0, 0);
    Vec4 state = u;
    state.tail<3>() = 1.2 * random_ball(rng, 0.8);
    const Vec3 n = random_ball(rng, 1.0).normalized();
    auto flux = [&](const Vec4& s) {
      const MomentVector1 m = MomentVector1::from_vector(s);
      const Mat3 p = kershaw_closure(m, df).P;
      Vec4 out;
      out[0] = m.q.dot(n);
      out.tail<3>() = p * n;
      return out;
    };
    Mat4 fd;
    for (int k = 0; k < 4; ++k) {
      const double h = 1e-6;
      fd.col(k) = (flux(state + h * Vec4::Unit(k)) - flux(state - h * Vec4::Unit(k))) / (2 * h);
    }
    EXPECT_LT((fd - kershaw_flux_jacobian(MomentVector1::from_vector(state), df, n)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(KershawSpectrum, InteriorSweepIsHyperbolic) {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const Mat3 df = peanut_pressure_tensor<double>(random_spd(rng));
    const MomentVector1 m{1.0, random_ball(rng, 0.999)};
    const auto report = kershaw_spectrum(m, df, random_ball(rng, 1.0).normalized());
    EXPECT_LE(report.max_imag, 1e-9);
    EXPECT_LE(report.max_abs, 1.0 + 1e-9);
  }
}

TEST(KershawSpectrum, FreeStreamingParallel) {
  const Mat3 df = peanut_pressure_tensor<double>(Vec3(6, 1, 1).asDiagonal());
  const Vec3 e1(1, 0, 0);
  const auto report = kershaw_spectrum({1.0, e1}, df, e1);
  const double s11 = df(0, 0);
  const Vec4 expected(1.0, 1.0, 1.0, 1.0 - 2.0 * s11);
  EXPECT_LT((report.eigenvalues.real() - expected).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_EQ(report.configuration, SpectrumConfiguration::Parallel);
  // J - I has rank one there, so the collapse keeps a full eigenbasis.
  EXPECT_TRUE(report.diagonalizable);
}

TEST(KershawSpectrum, FreeStreamingPerpendicularIsDefective) {
  const Mat3 df = peanut_pressure_tensor<double>(Vec3(6, 1, 2).asDiagonal());
  const auto report = kershaw_spectrum({1.0, Vec3(1, 0, 0)}, df, Vec3(0, 1, 0));
  EXPECT_LT(report.max_abs, 1e-4);
  EXPECT_FALSE(report.diagonalizable);
  EXPECT_EQ(report.configuration, SpectrumConfiguration::Perpendicular);
}

TEST(KershawSpectrum, DerivedClosedFormMatches) {
  std::mt19937 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat3 df = peanut_pressure_tensor<double>(random_spd(rng));
    const Vec3 dir = random_ball(rng, 1.0).normalized();
    std::uniform_real_distribution<double> u(0.0, 0.95);
    const double q = u(rng);
    const auto parallel = kershaw_spectrum({1.0, q * dir}, df, dir);
    ASSERT_TRUE(parallel.closed_form_derived);
    EXPECT_LT(parallel.residual_derived, 1e-9);
    Vec3 perp = dir.cross(Vec3(0.3, -0.5, 0.8)).normalized();
    const auto perpendicular = kershaw_spectrum({1.0, q * dir}, df, perp);
    ASSERT_TRUE(perpendicular.closed_form_derived);
    EXPECT_LT(perpendicular.residual_derived, 1e-9);
  }
}

TEST(KershawSpectrum, PrintedParallelFormDisagreesBelowFreeStreaming) {
  const Mat3 df = Mat3::Identity() / 3.0;
  const Vec3 e1(1, 0, 0);
  const auto report = kershaw_spectrum({1.0, 0.5 * e1}, df, e1);
  EXPECT_LT(report.residual_derived, 1e-12);
  EXPECT_GT(report.residual_printed, 0.1);
  const auto free = kershaw_spectrum({1.0, e1}, df, e1);
  EXPECT_LT(free.residual_printed, 1e-7);
}
