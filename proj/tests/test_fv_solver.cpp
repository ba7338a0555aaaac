#include "moment_glioma/fv_solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>

using namespace moment_glioma;

namespace {

constexpr double kPi = std::numbers::pi;

ScalingParams strand_scaling(double eps) {
  const double x = 3.0, t = 2.0;
  const double lambda0 = 1.0 / (eps * eps * t);
  return compute_scaling({t, x / (eps * t), lambda0, lambda0, lambda0, lambda0, x});
}

TissueFields strand_tissue(int n, const ScalingParams& s) {
  const GridSpec physical{n, n, 0.0, 0.0, 3.0 / n, 3.0 / n};
  const auto water = synth_fiber_strand({}, physical);
  WaterTensorField scaled{physical.scaled(s.x0), water.tensors};
  return derive_tissue_fields(scaled, VolumeFractionEstimator::FractionalAnisotropy, s);
}

// Isotropic water tensors on the unit square: peanut = 1/(4 pi), no haptotaxis.
TissueFields isotropic_tissue(int nx, int ny, const ScalingParams& s) {
  const GridSpec grid{nx, ny, 0.0, 0.0, 1.0 / nx, 1.0 / nx};
  WaterTensorField water{grid, std::vector<Mat3>(grid.cell_count(), Mat3::Identity())};
  return derive_tissue_fields(water, VolumeFractionEstimator::FractionalAnisotropy, s);
}

ScalingParams unit_scaling() {
  // eps = R = eta = 1 with x0 = 1.
  return compute_scaling({1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0});
}

// Square of density 1 at (0.5, 1.5)/3 on a background of 1e-4, isotropic.
MomentField strand_initial(const MomentSystem& system) {
  const GridSpec& g = system.tissue().grid;
  MomentField field(g, system.size());
  const double scale = 3.0;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const double x = g.x_center(i) * scale;
      const double y = g.y_center(j) * scale;
      const bool inside = std::abs(x - 0.5) < 0.05 + 1e-12 && std::abs(y - 1.5) < 0.05 + 1e-12;
      const std::size_t c = g.index(i, j);
      field.cell(c) = system.equilibrium(inside ? 1.0 : 1e-4, c);
    }
  }
  return field;
}

}  // namespace

TEST(LaxFriedrichs, Consistency) {
  const VecX u = VecX::LinSpaced(4, 0.5, 2.0);
  const auto flux = [](const VecX& x) -> VecX { return 3.0 * x; };
  EXPECT_LT((lax_friedrichs_flux(u, u, flux, 5.0) - 3.0 * u).norm(), 1e-15);
}

TEST(LaxFriedrichs, PureDissipation) {
  VecX ul(2), ur(2);
  ul << 1.0, 2.0;
  ur << 0.0, -1.0;
  const auto zero = [](const VecX& x) -> VecX { return VecX::Zero(x.size()); };
  EXPECT_LT((lax_friedrichs_flux(ul, ur, zero, 2.0) - (-(ur - ul))).norm(), 1e-15);
}

TEST(LaxFriedrichs, UpwindValueForAdvection) {
  const auto identity = [](const VecX& x) -> VecX { return x; };
  EXPECT_DOUBLE_EQ(lax_friedrichs_flux(VecX::Ones(1), VecX::Zero(1), identity, 1.0)[0], 1.0);
}

TEST(Weno2, EqualSlopesReproduced) {
  EXPECT_DOUBLE_EQ(weno2_slope(0.7, 0.7, 0.1), 0.7);
  EXPECT_DOUBLE_EQ(weno2_slope(-3.0, -3.0, 0.01), -3.0);
}

TEST(Weno2, CollapsesAtDiscontinuity) {
  // w(1) = (1e-6 + 1e-2)^-2, w(0) = 1e12.
  const double w1 = std::pow(1e-6 + 0.01, -2.0);
  const double expected = w1 / (w1 + 1e12);
  EXPECT_NEAR(weno2_slope(1.0, 0.0, 0.01), expected, 1e-20);
  EXPECT_NEAR(weno2_slope(1.0, 0.0, 0.01), 1.0e-8, 1e-10);
}

TEST(Weno2, Antisymmetric) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int k = 0; k < 100; ++k) {
    const double a = u(rng), b = u(rng);
    EXPECT_NEAR(weno2_slope(-b, -a, 0.05), -weno2_slope(a, b, 0.05), 1e-14);
  }
}

TEST(CharacteristicReconstruct, ConstantData) {
  const auto s = strand_scaling(0.5);
  MomentSystem system(parse_closure("K1F"), strand_tissue(12, s), s);
  VecX u(4);
  u << 1.0, 0.2, -0.1, 0.0;
  const auto basis = system.characteristic_basis(u, 40, 0);
  const auto faces = characteristic_reconstruct(u, u, u, 0.1, basis);
  EXPECT_LT((faces.minus - u).norm(), 1e-14);
  EXPECT_LT((faces.plus - u).norm(), 1e-14);
  EXPECT_FALSE(faces.fallback);
}

TEST(CharacteristicReconstruct, LinearDataInLinearSystem) {
  const auto s = unit_scaling();
  MomentSystem system(parse_closure("P1F"), isotropic_tissue(8, 3, s), s);
  VecX slope(4);
  slope << 0.3, -0.2, 0.1, 0.05;
  VecX center(4);
  center << 2.0, 0.1, 0.3, 0.0;
  const double dx = 0.1;
  const auto basis = system.characteristic_basis(center, 0, 0);
  ASSERT_TRUE(basis.valid);
  const auto faces = characteristic_reconstruct(center - dx * slope, center, center + dx * slope, dx, basis);
  EXPECT_LT((faces.minus - (center - 0.5 * dx * slope)).norm(), 1e-13);
  EXPECT_LT((faces.plus - (center + 0.5 * dx * slope)).norm(), 1e-13);
}

TEST(CharacteristicReconstruct, DegenerateJacobianFallsBack) {
  const auto s = strand_scaling(0.5);
  MomentSystem system(parse_closure("K1F"), isotropic_tissue(6, 6, s), s);
  // |q^| -> 1 along a D_F eigenvector, flux direction across it.
  VecX u(4);
  u << 1.0, 0.0, 1.0, 0.0;
  const auto basis = system.characteristic_basis(u, 0, 0);
  EXPECT_FALSE(basis.valid);
  VecX left = u, right = u;
  left[0] = 1.2;
  right[0] = 1.1;
  const auto faces = characteristic_reconstruct(left, u, right, 0.1, basis);
  EXPECT_TRUE(faces.fallback);
}

TEST(CharacteristicReconstruct, MirrorEquivariant) {
  const auto s = strand_scaling(0.5);
  MomentSystem system(parse_closure("K1F"), isotropic_tissue(6, 6, s), s);
  VecX l(4), c(4), r(4);
  l << 1.0, 0.1, 0.3, 0.0;
  c << 0.8, -0.2, 0.1, 0.0;
  r << 0.5, 0.2, -0.1, 0.0;
  const auto fwd = characteristic_reconstruct(l, c, r, 0.1, system.characteristic_basis(c, 0, 1));
  auto flip = [](VecX v) {
    v[2] = -v[2];
    return v;
  };
  const auto bwd =
      characteristic_reconstruct(flip(r), flip(c), flip(l), 0.1, system.characteristic_basis(flip(c), 0, 1));
  EXPECT_LT((flip(fwd.minus) - bwd.plus).norm(), 1e-13);
  EXPECT_LT((flip(fwd.plus) - bwd.minus).norm(), 1e-13);
}

TEST(RealizabilityLimit, RealizableFaceUnchanged) {
  VecX mean(4), face(4);
  mean << 1.0, 0.2, 0.0, 0.0;
  face << 1.1, 0.5, 0.1, 0.0;
  const auto limited = realizability_limit(mean, face, 1e-10);
  EXPECT_EQ(limited.theta, 1.0);
  EXPECT_EQ(limited.value, face);
}

TEST(RealizabilityLimit, ScalesOntoConeBoundary) {
  VecX mean(4), face(4);
  mean << 1.0, 0.0, 0.0, 0.0;
  face << 1.0, 2.0, 0.0, 0.0;
  const auto limited = realizability_limit(mean, face, 1e-10);
  EXPECT_NEAR(limited.theta, 0.5, 1e-12);
  EXPECT_NEAR(limited.value[0], 1.0, 1e-15);
  EXPECT_NEAR(limited.value[1], 1.0, 1e-11);
  EXPECT_LE(limited.value.segment<3>(1).norm(), limited.value[0]);
}

TEST(RealizabilityLimit, RestoresPositiveDensity) {
  VecX mean(4), face(4);
  mean << 0.5, 0.0, 0.0, 0.0;
  face << -0.5, 0.0, 0.0, 0.0;
  const auto limited = realizability_limit(mean, face, 1e-3);
  EXPECT_LT(limited.theta, 1.0);
  EXPECT_GE(limited.value[0], 1e-3);
}

TEST(RealizabilityLimit, NonRealizableMeanIsAnError) {
  VecX mean(4);
  mean << 1.0, 1.5, 0.0, 0.0;
  EXPECT_THROW(realizability_limit(mean, mean, 1e-10), NumericalError);
}

TEST(ThermalBoundary, HalfRangeFluxOfIsotropicDensity) {
  const auto half = SphereQuadrature::hemisphere(Vec3(1, 0, 0));
  double flux = 0.0;
  for (std::size_t i = 0; i < half.size(); ++i) flux += half.weight(i) * half.node(i).x() / (4.0 * kPi);
  EXPECT_NEAR(flux, 0.25, 1e-10);
}

TEST(ThermalBoundary, IsotropicStateHasZeroNetMassFlux) {
  const auto s = unit_scaling();
  MomentSystem system(parse_closure("K1F"), isotropic_tissue(6, 6, s), s);
  const BoundaryQuadratures walls(system.quadrature().order());
  const VecX u = system.equilibrium(1.0, 0);
  for (int side = 0; side < 4; ++side) {
    const auto b = thermal_boundary_flux(u, 0, walls.normals[side], system, walls.sides[side], walls.sides[side ^ 1]);
    EXPECT_EQ(b.normal_flux[0], 0.0);
    EXPECT_NEAR(b.outgoing, 0.25, 1e-10);
    // Emitted equals absorbed for F = f^A: the momentum flux is the full-range pressure.
    EXPECT_NEAR(b.normal_flux.segment<3>(1).dot(walls.normals[side]), 1.0 / 3.0, 1e-10);
  }
}

TEST(ThermalBoundary, ZeroStateGivesZeroFlux) {
  const auto s = strand_scaling(0.5);
  MomentSystem system(parse_closure("M1F"), strand_tissue(9, s), s);
  const BoundaryQuadratures walls(system.quadrature().order());
  const auto b = thermal_boundary_flux(VecX::Zero(4), 0, walls.normals[0], system, walls.sides[0], walls.sides[1]);
  EXPECT_EQ(b.normal_flux.norm(), 0.0);
}

TEST(FluxStep, ZeroFieldStaysZero) {
  const auto s = strand_scaling(0.5);
  MomentSystem system(parse_closure("K1F"), strand_tissue(9, s), s);
  const MomentField zero(system.tissue().grid, 4);
  SolverConfig config;
  const auto next = flux_step(zero, stable_time_step(zero.grid, system, config), system, config);
  EXPECT_EQ(next.values.norm(), 0.0);
}

TEST(FluxStep, ConstantPeriodicStateUnchanged) {
  const auto s = unit_scaling();
  for (const char* closure : {"K1F", "M1F", "P1F", "P3F"}) {
    MomentSystem system(parse_closure(closure), isotropic_tissue(5, 4, s), s);
    MomentField field(system.tissue().grid, system.size());
    for (std::size_t c = 0; c < field.grid.cell_count(); ++c) field.cell(c) = system.equilibrium(0.7, c);
    SolverConfig config;
    config.boundary = BoundaryKind::Periodic;
    const auto next = flux_step(field, stable_time_step(field.grid, system, config), system, config);
    EXPECT_LT((next.values - field.values).cwiseAbs().maxCoeff(), 1e-13) << closure;
  }
}

TEST(FluxStep, MassBalanceWithThermalWalls) {
  const auto s = strand_scaling(0.5);
  MomentSystem system(parse_closure("K1F"), strand_tissue(12, s), s);
  MomentField field(system.tissue().grid, 4);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t c = 0; c < field.grid.cell_count(); ++c) {
    const double rho = 0.1 + u(rng);
    field.cell(c) << rho, 0.5 * rho * (u(rng) - 0.5), 0.5 * rho * (u(rng) - 0.5), 0.0;
  }
  SolverConfig config;
  StepDiagnostics diag;
  const double dt = stable_time_step(field.grid, system, config);
  const auto next = flux_step(field, dt, system, config, &diag);
  EXPECT_NEAR(next.total_mass(), field.total_mass() - dt * diag.boundary_mass_flux, 1e-12 * field.total_mass());
  EXPECT_EQ(diag.boundary_mass_flux, 0.0);
}

TEST(DgSource, ZeroSourceKeepsState) {
  VecX u(3);
  u << 1.0, -2.0, 0.5;
  const auto r = dg_source_step(
      u, 0.3, [](const VecX& x) -> VecX { return VecX::Zero(x.size()); },
      [](const VecX& x) -> MatX { return MatX::Zero(x.size(), x.size()); }, SolverConfig{});
  EXPECT_LT((r.value - u).norm(), 1e-14);
}

TEST(DgSource, ConstantSourceIsExact) {
  VecX u(2), c(2);
  u << 1.0, 2.0;
  c << 0.5, -3.0;
  const auto r = dg_source_step(
      u, 0.7, [&](const VecX&) -> VecX { return c; }, [](const VecX& x) -> MatX { return MatX::Zero(x.size(), x.size()); },
      SolverConfig{});
  EXPECT_LT((r.value - (u + 0.7 * c)).norm(), 1e-14);
}

TEST(DgSource, DecayConvergesAtHighOrder) {
  auto integrate = [](int steps) {
    const double dt = 0.5 / steps;
    VecX u = VecX::Ones(1);
    for (int k = 0; k < steps; ++k) {
      u = dg_source_step(
              u, dt, [](const VecX& x) -> VecX { return -x; },
              [](const VecX&) -> MatX { return -MatX::Identity(1, 1); }, SolverConfig{})
              .value;
    }
    return std::abs(u[0] - std::exp(-0.5));
  };
  const double e1 = integrate(1), e2 = integrate(2), e4 = integrate(4);
  EXPECT_GE(std::log2(e1 / e2), 4.0);
  EXPECT_GE(std::log2(e2 / e4), 4.0);
}

TEST(DgSource, LinearPropagatorMatchesNewton) {
  MatX s(2, 2);
  s << -3.0, 1.0, 0.5, -10.0;
  VecX u(2);
  u << 1.0, -0.5;
  const auto r = dg_source_step(
      u, 0.4, [&](const VecX& x) -> VecX { return s * x; }, [&](const VecX&) -> MatX { return s; }, SolverConfig{});
  EXPECT_LT((dg_linear_propagator(s, 0.4) * u - r.value).norm(), 1e-13);
}

TEST(DgSource, StiffDecayStaysBounded) {
  // Unconditionally stable: a huge step on u' = -1e6 u must not blow up.
  const MatX p = dg_linear_propagator(-1e6 * MatX::Identity(1, 1), 1.0);
  EXPECT_LT(std::abs(p(0, 0)), 1e-5);
}

TEST(DgSource, NewtonFailureReportsHistory) {
  SolverConfig config;
  config.dg_newton_maxit = 2;
  try {
    dg_source_step(
        VecX::Ones(1), 1.0, [](const VecX& x) -> VecX { return x.array().square().matrix() * 5.0; },
        [](const VecX& x) -> MatX { return 10.0 * x.asDiagonal().toDenseMatrix(); }, config);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("history"), std::string::npos);
  }
}

TEST(Strang, ZeroSourceEqualsFluxStep) {
  // R = 1e-20 and no haptotaxis gradient: the P1F source -R q is negligible.
  const auto s = compute_scaling({1.0, 1.0, 1e-20, 1e-20, 1e-20, 1e-20, 1.0});
  MomentSystem system(parse_closure("P1F"), isotropic_tissue(6, 5, s), s);
  MomentField field(system.tissue().grid, 4);
  for (std::size_t c = 0; c < field.grid.cell_count(); ++c) field.cell(c) << 1.0 + 0.1 * c, 0.01 * c, 0.0, 0.0;
  SolverConfig config;
  SourceIntegrator source(system, config);
  const double dt = stable_time_step(field.grid, system, config);
  const auto a = strang_step(field, dt, system, config, source);
  const auto b = flux_step(field, dt, system, config);
  EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Strang, ConstantPeriodicEqualsTwoHalfSourceSteps) {
  const auto s = unit_scaling();
  MomentSystem system(parse_closure("P1F"), isotropic_tissue(5, 5, s), s);
  MomentField field(system.tissue().grid, 4);
  for (std::size_t c = 0; c < field.grid.cell_count(); ++c) field.cell(c) << 1.0, 0.3, 0.0, 0.0;
  SolverConfig config;
  config.boundary = BoundaryKind::Periodic;
  SourceIntegrator source(system, config);
  const double dt = 0.05;
  const auto a = strang_step(field, dt, system, config, source);
  const auto b = source.step(source.step(field, 0.5 * dt), 0.5 * dt);
  EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-13);
  // q relaxes as exp(-R t / eps^2); the DG step is accurate to far better than 1e-6 here.
  EXPECT_NEAR(a.values(1, 0), 0.3 * std::exp(-dt), 1e-8);
}

TEST(Strang, ManufacturedProblemConvergesAtSecondOrder) {
  // rho = 2 + A(t) cos(2 pi x), q_x = B(t) sin(2 pi x) for P1F with D_W = I, eps = R = 1:
  // A' = -k B, B' = k A / 3 - B.
  const double k = 2.0 * kPi;
  const double t_end = 0.2;
  Eigen::Matrix2d m;
  m << 0.0, -k, k / 3.0, -1.0;
  Eigen::EigenSolver<Eigen::Matrix2d> eig(m);
  const Eigen::Matrix2cd v = eig.eigenvectors();
  const Eigen::Vector2cd lam = eig.eigenvalues();
  const Eigen::Vector2cd coeff = v.partialPivLu().solve(Eigen::Vector2cd(1.0, 0.0));
  const Eigen::Vector2cd ab = v * (lam * t_end).array().exp().matrix().cwiseProduct(coeff);
  const double a_exact = ab[0].real(), b_exact = ab[1].real();

  auto error = [&](int n) {
    const auto s = unit_scaling();
    MomentSystem system(parse_closure("P1F"), isotropic_tissue(n, 3, s), s);
    const GridSpec& g = system.tissue().grid;
    const double h = g.dx;
    const double sinc = std::sin(k * h / 2) / (k * h / 2);
    MomentField field(g, 4);
    for (int j = 0; j < g.ny; ++j) {
      for (int i = 0; i < g.nx; ++i) field.cell(g.index(i, j)) << 2.0 + sinc * std::cos(k * g.x_center(i)), 0, 0, 0;
    }
    SolverConfig config;
    config.boundary = BoundaryKind::Periodic;
    config.t_end = t_end;
    const auto out = run_moment_model(field, system, config);
    double err = 0.0;
    for (int i = 0; i < g.nx; ++i) {
      const double rho = 2.0 + a_exact * sinc * std::cos(k * g.x_center(i));
      const double q = b_exact * sinc * std::sin(k * g.x_center(i));
      err += h * (std::abs(out.values(0, g.index(i, 1)) - rho) + std::abs(out.values(1, g.index(i, 1)) - q));
    }
    return err;
  };
  // L1 norm; the WENO2 weights clip smooth extrema, so the maximum norm lags behind.
  const double e32 = error(32), e64 = error(64), e128 = error(128);
  EXPECT_NEAR(std::log2(e32 / e64), 2.0, 0.2);
  EXPECT_NEAR(std::log2(e64 / e128), 2.0, 0.2);
}

TEST(RunMomentModel, FiberStrandConservesMassAndMirrorSymmetry) {
  const auto s = strand_scaling(0.5);
  MomentSystem system(parse_closure("K1F"), strand_tissue(30, s), s);
  const auto initial = strand_initial(system);
  SolverConfig config;
  config.t_end = 0.1;
  RunDiagnostics diag;
  std::vector<double> seen;
  const auto out = run_moment_model(
      initial, system, config, {0.0, 0.05, 0.1}, [&](double t, const MomentField&) { seen.push_back(t); }, &diag);
  ASSERT_EQ(seen.size(), 3u);
  EXPECT_DOUBLE_EQ(seen[1], 0.05);
  EXPECT_DOUBLE_EQ(seen[2], 0.1);
  EXPECT_LT(diag.max_mass_drift, 1e-12);
  EXPECT_EQ(diag.realizability_violations, 0);
  const GridSpec& g = out.grid;
  double asym = 0.0;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      asym = std::max(asym, std::abs(out.values(0, g.index(i, j)) - out.values(0, g.index(i, g.ny - 1 - j))));
    }
  }
  EXPECT_LT(asym, 1e-10);
}

TEST(RunMomentModel, ZeroInitialMassStaysZero) {
  const auto s = strand_scaling(0.5);
  MomentSystem system(parse_closure("P1F"), strand_tissue(9, s), s);
  SolverConfig config;
  config.t_end = 0.05;
  const auto out = run_moment_model(MomentField(system.tissue().grid, 4), system, config);
  EXPECT_EQ(out.values.norm(), 0.0);
}

TEST(RunMomentModel, RejectsNonRealizableInitialState) {
  const auto s = strand_scaling(0.5);
  MomentSystem system(parse_closure("K1F"), strand_tissue(9, s), s);
  MomentField field(system.tissue().grid, 4);
  field.values.row(0).setOnes();
  field.values(1, 7) = 2.0;
  try {
    run_moment_model(field, system, SolverConfig{});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("cell (7, 0)"), std::string::npos);
  }
}

TEST(RunMomentModel, LinearClosuresMayLeaveTheRealizableCone) {
  // P1 and P1F at small eps overshoot |q| <= rho next to the initial square; the run goes on
  // and counts the violations.
  const auto s = strand_scaling(0.1);
  for (const char* model : {"P1", "P1F"}) {
    MomentSystem system(parse_closure(model), strand_tissue(60, s), s);
    SolverConfig config;
    config.t_end = 0.02;
    RunDiagnostics diag;
    EXPECT_NO_THROW(run_moment_model(strand_initial(system), system, config, {}, {}, &diag)) << model;
    EXPECT_GT(diag.realizability_violations, 0) << model;
    EXPECT_LT(diag.max_mass_drift, 1e-12) << model;
  }
}

TEST(ParallelFor, CoversEveryIndexOnce) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) ++hits[i];
  });
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(Field2D, RoundTripIsBitExact) {
  ScalarField field{"rho", GridSpec{4, 3, -1.5, 0.25, 0.1, 1.0 / 3.0}, 0.123456789, {}};
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 12; ++k) field.values.push_back(u(rng) * std::pow(10.0, k - 6));
  std::stringstream buffer;
  write_field(buffer, field);
  EXPECT_EQ(buffer.str().rfind("FIELD2D rho 4 3 ", 0), 0u);
  const auto back = read_field(buffer);
  EXPECT_EQ(back.name, field.name);
  EXPECT_EQ(back.grid, field.grid);
  EXPECT_EQ(back.time, field.time);
  EXPECT_EQ(back.values, field.values);
}

TEST(Field2D, TruncatedFileIsAnInputError) {
  std::stringstream buffer("FIELD2D rho 3 3 0 0 1 1 0\n1 2 3\n4 5\n");
  EXPECT_THROW(read_field(buffer), InputError);
  std::stringstream bad("FIELD3D rho 3 3 0 0 1 1 0\n");
  EXPECT_THROW(read_field(bad), InputError);
}

TEST(SolverConfigTest, Validation) {
  SolverConfig config;
  EXPECT_NO_THROW(config.validate());
  config.cfl = 0.0;
  EXPECT_THROW(config.validate(), InputError);
  EXPECT_EQ(parse_boundary("periodic"), BoundaryKind::Periodic);
  EXPECT_THROW(parse_boundary("open"), InputError);
}
