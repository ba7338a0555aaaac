#include "moment_glioma/fv_solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

namespace moment_glioma {

BoundaryKind parse_boundary(const std::string& name) {
  if (name == "thermal") return BoundaryKind::Thermal;
  if (name == "periodic") return BoundaryKind::Periodic;
  throw InputError("unknown boundary kind '" + name + "' (expected thermal or periodic)");
}

std::string to_string(BoundaryKind kind) { return kind == BoundaryKind::Thermal ? "thermal" : "periodic"; }

void SolverConfig::validate() const {
  if (!(cfl > 0.0 && cfl <= 1.0)) throw InputError("cfl must lie in (0, 1]");
  if (!(weno_theta > 0.0) || !(weno_z > 0.0)) throw InputError("WENO parameters must be positive");
  if (!(t_end > 0.0)) throw InputError("t_end must be positive");
  if (!(realizability_floor > 0.0)) throw InputError("realizability floor must be positive");
  if (!(dg_newton_tol > 0.0) || dg_newton_maxit < 1) throw InputError("DG Newton settings must be positive");
}

double MomentField::total_mass() const { return values.row(0).sum() * grid.dx * grid.dy; }

std::vector<double> MomentField::density() const {
  std::vector<double> out(static_cast<std::size_t>(values.cols()));
  for (Eigen::Index c = 0; c < values.cols(); ++c) out[static_cast<std::size_t>(c)] = values(0, c);
  return out;
}

// ---------------------------------------------------------------------------
// Threads
// ---------------------------------------------------------------------------

int worker_threads() {
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("MOMENT_GLIOMA_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) threads = std::min(threads, cap);
  }
  return threads;
}

void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), count);
  if (threads <= 1) {
    if (count > 0) body(0, count);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (count + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    pool.emplace_back([&, t, begin, end] {
      try {
        if (begin < end) body(begin, end);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& thread : pool) thread.join();
  for (auto& error : errors) {
    if (error) std::rethrow_exception(error);
  }
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

VecX lax_friedrichs_flux(const VecX& u_left, const VecX& u_right, const VecX& flux_left, const VecX& flux_right,
                         double wave_speed) {
  return 0.5 * (flux_left + flux_right - wave_speed * (u_right - u_left));
}

namespace {

template <int K>
using VecK = Eigen::Matrix<double, K, 1>;

// (theta + dx |s|)^(-z)
double weno_weight(double base, double z) { return z == 2.0 ? 1.0 / (base * base) : std::pow(base, -z); }

template <typename Vec>
Vec weno2_vector(const Vec& d_minus, const Vec& d_plus, double dx, double theta, double z) {
  const double w_minus = weno_weight(theta + dx * d_minus.norm(), z);
  const double w_plus = weno_weight(theta + dx * d_plus.norm(), z);
  return (w_minus * d_minus + w_plus * d_plus) / (w_minus + w_plus);
}

template <int K>
struct Faces {
  VecK<K> minus;
  VecK<K> plus;
  bool fallback = false;
};

template <int K>
Faces<K> reconstruct(const VecK<K>& u_left, const VecK<K>& u_center, const VecK<K>& u_right, double dx,
                     const CharacteristicBasisT<K>& basis, double theta, double z);

template <int K>
struct Limited {
  VecK<K> value;
  double theta = 1.0;
};

template <int K>
Limited<K> limit(const VecK<K>& u_mean, const VecK<K>& u_face, double floor);

}  // namespace

double weno2_slope(double d_minus, double d_plus, double dx, double theta, double z) {
  const double w_minus = weno_weight(theta + dx * std::abs(d_minus), z);
  const double w_plus = weno_weight(theta + dx * std::abs(d_plus), z);
  return (w_minus * d_minus + w_plus * d_plus) / (w_minus + w_plus);
}

namespace {

template <int K>
Faces<K> reconstruct(const VecK<K>& u_left, const VecK<K>& u_center, const VecK<K>& u_right, double dx,
                     const CharacteristicBasisT<K>& basis, double theta, double z) {
  const VecK<K> d_minus = (u_center - u_left) / dx;
  const VecK<K> d_plus = (u_right - u_center) / dx;
  const Eigen::Index k = u_center.size();
  VecK<K> slope = VecK<K>::Zero(k);
  Faces<K> out;
  if (!basis.valid) {
    out.fallback = true;
    for (Eigen::Index c = 0; c < k; ++c) slope[c] = weno2_slope(d_minus[c], d_plus[c], dx, theta, z);
  } else {
    const VecK<K> a_minus = basis.left * d_minus;
    const VecK<K> a_plus = basis.left * d_plus;
    Eigen::Matrix<Eigen::Index, K, 1> order(k);
    for (Eigen::Index c = 0; c < k; ++c) order[c] = c;
    std::sort(order.data(), order.data() + k,
              [&](Eigen::Index a, Eigen::Index b) { return basis.eigenvalues[a] < basis.eigenvalues[b]; });
    const double tol = 1e-6 * std::max(1.0, basis.eigenvalues.cwiseAbs().maxCoeff());
    Eigen::Index start = 0;
    while (start < k) {
      Eigen::Index end = start + 1;
      while (end < k && basis.eigenvalues[order[end]] - basis.eigenvalues[order[end - 1]] < tol) ++end;
      VecK<K> p_minus = a_minus[order[start]] * basis.right.col(order[start]);
      VecK<K> p_plus = a_plus[order[start]] * basis.right.col(order[start]);
      for (Eigen::Index m = start + 1; m < end; ++m) {
        p_minus += a_minus[order[m]] * basis.right.col(order[m]);
        p_plus += a_plus[order[m]] * basis.right.col(order[m]);
      }
      slope += weno2_vector(p_minus, p_plus, dx, theta, z);
      start = end;
    }
  }
  out.minus = u_center - 0.5 * dx * slope;
  out.plus = u_center + 0.5 * dx * slope;
  return out;
}

template <int K>
Limited<K> limit(const VecK<K>& u_mean, const VecK<K>& u_face, double floor) {
  if (!first_order_realizable(u_mean)) {
    std::ostringstream msg;
    msg << "realizability limiter: cell mean is not realizable (rho = " << u_mean[0]
        << ", |q| = " << u_mean.template segment<3>(1).norm() << ")";
    throw NumericalError(msg.str());
  }
  const double rho_min = std::min(floor, u_mean[0]);
  auto admissible = [&](const VecK<K>& u) { return u[0] >= rho_min && u.template segment<3>(1).norm() <= u[0]; };
  Limited<K> out{u_face, 1.0};
  if (admissible(u_face)) return out;
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (admissible(u_mean + mid * (u_face - u_mean))) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  out.theta = lo;
  out.value = u_mean + lo * (u_face - u_mean);
  // A mean on the cone boundary can still miss by rounding; scale q onto the cone.
  const double qn = out.value.template segment<3>(1).norm();
  if (qn > out.value[0] && qn > 0.0) out.value.template segment<3>(1) *= out.value[0] / qn;
  return out;
}

}  // namespace

FaceValues characteristic_reconstruct(const VecX& u_left, const VecX& u_center, const VecX& u_right, double dx,
                                      const CharacteristicBasis& basis, double theta, double z) {
  const Faces<Eigen::Dynamic> faces = reconstruct<Eigen::Dynamic>(u_left, u_center, u_right, dx, basis, theta, z);
  return {faces.minus, faces.plus, faces.fallback};
}

bool first_order_realizable(const Eigen::Ref<const VecX>& u, double slack) {
  const double rho = u[0];
  if (!(rho >= 0.0)) return false;
  const double q = u.segment<3>(1).norm();
  return q <= rho * (1.0 + slack);
}

LimitedValue realizability_limit(const VecX& u_mean, const VecX& u_face, double floor) {
  const Limited<Eigen::Dynamic> limited = limit<Eigen::Dynamic>(u_mean, u_face, floor);
  return {limited.value, limited.theta};
}

BoundaryQuadratures::BoundaryQuadratures(int degree)
    : sides{SphereQuadrature::hemisphere(Vec3(-1, 0, 0), degree), SphereQuadrature::hemisphere(Vec3(1, 0, 0), degree),
            SphereQuadrature::hemisphere(Vec3(0, -1, 0), degree), SphereQuadrature::hemisphere(Vec3(0, 1, 0), degree)},
      normals{Vec3(-1, 0, 0), Vec3(1, 0, 0), Vec3(0, -1, 0), Vec3(0, 1, 0)} {}

BoundaryFlux thermal_boundary_flux(const VecX& u_interior, std::size_t cell, const Vec3& n,
                                   const MomentSystem& system, const SphereQuadrature& out,
                                   const SphereQuadrature& in) {
  const int k = system.size();
  BoundaryFlux result;
  result.normal_flux = VecX::Zero(k);
  const std::vector<double> ansatz = system.ansatz_values(u_interior, cell, out.nodes());
  VecX outgoing = VecX::Zero(k);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Vec3& v = out.node(i);
    outgoing += (out.weight(i) * v.dot(n) * ansatz[i]) * system.moment_basis(v);
  }
  result.outgoing = outgoing[0];
  const Mat3& water = system.cell(cell).water_tensor;
  double zeta = 0.0;
  VecX incoming_shape = VecX::Zero(k);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Vec3& v = in.node(i);
    const double f = peanut_density<double>(water, v);
    zeta += in.weight(i) * std::abs(v.dot(n)) * f;
    incoming_shape += (in.weight(i) * v.dot(n) * f) * system.moment_basis(v);
  }
  if (!(zeta > 0.0)) {
    throw NumericalError("thermal boundary: fiber distribution vanishes on the incoming hemisphere (zeta = 0)");
  }
  result.normal_flux = (outgoing + (result.outgoing / zeta) * incoming_shape) / system.scaling().eps;
  result.normal_flux[0] = 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Flux step
// ---------------------------------------------------------------------------

namespace {

struct Stencil {
  const GridSpec& grid;
  bool periodic;

  // Neighbour index or -1 for a wall.
  long neighbor(int i, int j, int di, int dj) const {
    int ii = i + di;
    int jj = j + dj;
    if (periodic) {
      ii = (ii + grid.nx) % grid.nx;
      jj = (jj + grid.ny) % grid.ny;
    } else if (ii < 0 || ii >= grid.nx || jj < 0 || jj >= grid.ny) {
      return -1;
    }
    return static_cast<long>(grid.index(ii, jj));
  }
};

struct StageCounters {
  long limiter = 0;
  double min_theta = 1.0;
  long fallback = 0;
};

// Closure evaluation at fixed (first-order) or dynamic size.
template <int K>
struct Closure;

template <>
struct Closure<4> {
  static Vec4 flux(const MomentSystem& system, const Vec4& u, std::size_t c, int d) { return system.flux4(u, c, d); }
  static CharacteristicBasis4 basis(const MomentSystem& system, const Vec4& u, std::size_t c, int d) {
    return system.characteristic_basis4(u, c, d);
  }
};

template <>
struct Closure<Eigen::Dynamic> {
  static VecX flux(const MomentSystem& system, const VecX& u, std::size_t c, int d) { return system.flux(u, c, d); }
  static CharacteristicBasis basis(const MomentSystem& system, const VecX& u, std::size_t c, int d) {
    return system.characteristic_basis(u, c, d);
  }
};

// Spatial operator L(u) = -div F and the net outward wall mass flux.
template <int K>
MatX spatial_operator(const MatX& u, const MomentSystem& system, const SolverConfig& config,
                      const BoundaryQuadratures& walls, StageCounters& counters, double& wall_mass_flux) {
  const GridSpec& grid = system.tissue().grid;
  const Stencil stencil{grid, config.boundary == BoundaryKind::Periodic};
  const std::size_t n = grid.cell_count();
  const Eigen::Index k = u.rows();
  const double speed = system.wave_speed();
  const bool strict = system.closure().needs_realizability();
  // faces[d][side]: reconstructed, limited values; fluxes[d][side]: flux in direction d.
  std::array<std::array<MatX, 2>, 2> faces;
  std::array<std::array<MatX, 2>, 2> fluxes;
  for (int d = 0; d < 2; ++d) {
    for (int s = 0; s < 2; ++s) {
      faces[d][s] = MatX(k, static_cast<Eigen::Index>(n));
      fluxes[d][s] = MatX(k, static_cast<Eigen::Index>(n));
    }
  }
  std::vector<StageCounters> per_cell(n);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      const int i = static_cast<int>(c % static_cast<std::size_t>(grid.nx));
      const int j = static_cast<int>(c / static_cast<std::size_t>(grid.nx));
      const VecK<K> center = u.col(static_cast<Eigen::Index>(c));
      for (int d = 0; d < 2; ++d) {
        const long lo = stencil.neighbor(i, j, d == 0 ? -1 : 0, d == 1 ? -1 : 0);
        const long hi = stencil.neighbor(i, j, d == 0 ? 1 : 0, d == 1 ? 1 : 0);
        const VecK<K> left = lo < 0 ? center : VecK<K>(u.col(lo));
        const VecK<K> right = hi < 0 ? center : VecK<K>(u.col(hi));
        const double h = d == 0 ? grid.dx : grid.dy;
        const Faces<K> rec = reconstruct<K>(left, center, right, h, Closure<K>::basis(system, center, c, d),
                                            config.weno_theta, config.weno_z);
        if (rec.fallback) ++per_cell[c].fallback;
        const std::array<const VecK<K>*, 2> sides{&rec.minus, &rec.plus};
        for (int s = 0; s < 2; ++s) {
          Limited<K> limited{*sides[s], 1.0};
          try {
            if (strict || first_order_realizable(center)) limited = limit<K>(center, *sides[s], config.realizability_floor);
          } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " in " + describe_cell(grid, i, j));
          }
          if (limited.theta < 1.0) {
            ++per_cell[c].limiter;
            per_cell[c].min_theta = std::min(per_cell[c].min_theta, limited.theta);
          }
          faces[d][s].col(static_cast<Eigen::Index>(c)) = limited.value;
          fluxes[d][s].col(static_cast<Eigen::Index>(c)) = Closure<K>::flux(system, limited.value, c, d);
        }
      }
    }
  });
  for (const StageCounters& pc : per_cell) {
    counters.limiter += pc.limiter;
    counters.fallback += pc.fallback;
    counters.min_theta = std::min(counters.min_theta, pc.min_theta);
  }

  // upper[d] / lower[d] column c: flux through the upper / lower face of cell c in direction d.
  std::array<MatX, 2> upper;
  std::array<MatX, 2> lower;
  std::vector<double> wall_flux(n, 0.0);
  for (int d = 0; d < 2; ++d) {
    upper[d] = MatX(k, static_cast<Eigen::Index>(n));
    lower[d] = MatX(k, static_cast<Eigen::Index>(n));
  }
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      const int i = static_cast<int>(c % static_cast<std::size_t>(grid.nx));
      const int j = static_cast<int>(c / static_cast<std::size_t>(grid.nx));
      const auto col = static_cast<Eigen::Index>(c);
      for (int d = 0; d < 2; ++d) {
        const double length = d == 0 ? grid.dy : grid.dx;
        for (int s = 0; s < 2; ++s) {
          const int step = s == 0 ? -1 : 1;
          const long nb = stencil.neighbor(i, j, d == 0 ? step : 0, d == 1 ? step : 0);
          MatX& target = s == 0 ? lower[d] : upper[d];
          if (nb >= 0) {
            // Left and right states of this face in the direction of increasing index.
            const auto l = s == 1 ? col : static_cast<Eigen::Index>(nb);
            const auto r = s == 1 ? static_cast<Eigen::Index>(nb) : col;
            target.col(col) = 0.5 * (fluxes[d][1].col(l) + fluxes[d][0].col(r) -
                                     speed * (faces[d][0].col(r) - faces[d][1].col(l)));
          } else {
            const int side = 2 * d + s;
            const BoundaryFlux wall = thermal_boundary_flux(faces[d][s].col(col), c, walls.normals[side], system,
                                                            walls.sides[side], walls.sides[side ^ 1]);
            target.col(col) = s == 1 ? wall.normal_flux : VecX(-wall.normal_flux);
            wall_flux[c] += wall.normal_flux[0] * length;
          }
        }
      }
    }
  });
  wall_mass_flux = 0.0;
  for (double w : wall_flux) wall_mass_flux += w;
  return -(upper[0] - lower[0]) / grid.dx - (upper[1] - lower[1]) / grid.dy;
}

MatX spatial_operator(const MatX& u, const MomentSystem& system, const SolverConfig& config,
                      const BoundaryQuadratures& walls, StageCounters& counters, double& wall_mass_flux) {
  if (system.closure().first_order()) {
    return spatial_operator<4>(u, system, config, walls, counters, wall_mass_flux);
  }
  return spatial_operator<Eigen::Dynamic>(u, system, config, walls, counters, wall_mass_flux);
}

// Non-finite values always fail; realizability only when `strict`.
void check_cells(const MatX& u, const GridSpec& grid, const char* stage, bool strict = true) {
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    if (!u.col(c).allFinite() || (strict && !first_order_realizable(u.col(c)))) {
      const int i = static_cast<int>(c % grid.nx);
      const int j = static_cast<int>(c / grid.nx);
      std::ostringstream msg;
      msg << stage << ": " << (u.col(c).allFinite() ? "realizability violated" : "non-finite state") << " in "
          << describe_cell(grid, i, j) << " (rho = " << u(0, c)
          << ", |q| = " << u.col(c).segment<3>(1).norm() << ")";
      throw NumericalError(msg.str());
    }
  }
}

}  // namespace

MomentField flux_step(const MomentField& state, double dt, const MomentSystem& system, const SolverConfig& config,
                      StepDiagnostics* diagnostics) {
  const GridSpec& grid = system.tissue().grid;
  if (!(state.grid == grid)) throw InputError("moment field and tissue use different grids");
  if (state.components() != system.size()) throw InputError("moment field has the wrong number of components");
  const BoundaryQuadratures walls(system.quadrature().order());
  StageCounters counters;
  double wall1 = 0.0;
  double wall2 = 0.0;
  MomentField stage = state;
  stage.values = state.values + dt * spatial_operator(state.values, system, config, walls, counters, wall1);
  check_cells(stage.values, grid, "flux step (stage 1)", system.closure().needs_realizability());
  MomentField out = state;
  out.values = 0.5 * state.values +
               0.5 * (stage.values + dt * spatial_operator(stage.values, system, config, walls, counters, wall2));
  check_cells(out.values, grid, "flux step", system.closure().needs_realizability());
  if (diagnostics != nullptr) {
    diagnostics->limiter_activations += counters.limiter;
    diagnostics->fallback_reconstructions += counters.fallback;
    diagnostics->min_theta = std::min(diagnostics->min_theta, counters.min_theta);
    diagnostics->boundary_mass_flux = 0.5 * (wall1 + wall2);
  }
  return out;
}

// ---------------------------------------------------------------------------
// DG source integrator
// ---------------------------------------------------------------------------

namespace {

// Nodal quadratic basis on tau in [-1, 1] with nodes -1, 0, 1.
double phi(int i, double t) {
  switch (i) {
    case 0: return 0.5 * t * t - 0.5 * t;
    case 1: return 1.0 - t * t;
    default: return 0.5 * t * t + 0.5 * t;
  }
}
double dphi(int i, double t) {
  switch (i) {
    case 0: return t - 0.5;
    case 1: return -2.0 * t;
    default: return t + 0.5;
  }
}

struct DgTables {
  Eigen::Matrix3d a;     // int phi_i phi_j' + delta_i0 delta_j0
  Eigen::Matrix3d mass;  // int phi_i phi_j
  std::vector<double> tau;
  std::vector<double> weight;

  DgTables() {
    const auto [x, w] = gauss_legendre(5);
    tau = x;
    weight = w;
    a.setZero();
    mass.setZero();
    for (std::size_t q = 0; q < tau.size(); ++q) {
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          a(i, j) += weight[q] * phi(i, tau[q]) * dphi(j, tau[q]);
          mass(i, j) += weight[q] * phi(i, tau[q]) * phi(j, tau[q]);
        }
      }
    }
    a(0, 0) += 1.0;
  }
};

const DgTables& dg_tables() {
  static const DgTables tables;
  return tables;
}

}  // namespace

MatX dg_linear_propagator(const MatX& s, double dt) {
  const auto& t = dg_tables();
  const Eigen::Index k = s.rows();
  MatX system(3 * k, 3 * k);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      system.block(i * k, j * k, k, k) = t.a(i, j) * MatX::Identity(k, k) - (0.5 * dt * t.mass(i, j)) * s;
    }
  }
  MatX rhs = MatX::Zero(3 * k, k);
  rhs.topRows(k).setIdentity();
  const MatX solution = system.partialPivLu().solve(rhs);
  return solution.bottomRows(k);
}

namespace {

template <int K>
struct DgSolution {
  VecK<K> value;
  int iterations = 0;
};

// Newton on the 3 K nodal values of the quadratic DG ansatz.
template <int K, typename Source, typename Jacobian>
DgSolution<K> dg_newton(const VecK<K>& u_old, double dt, const Source& source, const Jacobian& jacobian,
                        const SolverConfig& config) {
  constexpr int K3 = K == Eigen::Dynamic ? Eigen::Dynamic : 3 * K;
  using Stacked = Eigen::Matrix<double, K3, 1>;
  using StackedMatrix = Eigen::Matrix<double, K3, K3>;
  const auto& t = dg_tables();
  const Eigen::Index k = u_old.size();
  Stacked nodes(3 * k);
  for (int i = 0; i < 3; ++i) nodes.segment(i * k, k) = u_old;
  std::vector<double> history;
  for (int iteration = 1; iteration <= config.dg_newton_maxit; ++iteration) {
    Stacked residual = Stacked::Zero(3 * k);
    StackedMatrix jac = StackedMatrix::Zero(3 * k, 3 * k);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        residual.segment(i * k, k) += t.a(i, j) * nodes.segment(j * k, k);
        jac.block(i * k, j * k, k, k).diagonal().array() += t.a(i, j);
      }
    }
    residual.head(k) -= u_old;
    for (std::size_t q = 0; q < t.tau.size(); ++q) {
      VecK<K> uq = VecK<K>::Zero(k);
      for (int j = 0; j < 3; ++j) uq += phi(j, t.tau[q]) * nodes.segment(j * k, k);
      const VecK<K> sq = source(uq);
      const Eigen::Matrix<double, K, K> jq = jacobian(uq);
      for (int i = 0; i < 3; ++i) {
        const double wi = 0.5 * dt * t.weight[q] * phi(i, t.tau[q]);
        residual.segment(i * k, k) -= wi * sq;
        for (int j = 0; j < 3; ++j) jac.block(i * k, j * k, k, k) -= (wi * phi(j, t.tau[q])) * jq;
      }
    }
    const Stacked delta = jac.partialPivLu().solve(-residual);
    nodes += delta;
    const double scale = std::max(nodes.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    history.push_back(delta.cwiseAbs().maxCoeff() / scale);
    if (!nodes.allFinite()) break;
    if (history.back() <= config.dg_newton_tol) return {nodes.tail(k), iteration};
  }
  std::ostringstream msg;
  msg << "DG source step: Newton did not converge; relative update history";
  for (double h : history) msg << ' ' << h;
  throw NumericalError(msg.str());
}

}  // namespace

DgResult dg_source_step(const VecX& u_old, double dt, const SourceFn& source, const JacobianFn& jacobian,
                        const SolverConfig& config) {
  const DgSolution<Eigen::Dynamic> r = dg_newton<Eigen::Dynamic>(u_old, dt, source, jacobian, config);
  return {r.value, r.iterations};
}

SourceIntegrator::SourceIntegrator(const MomentSystem& system, const SolverConfig& config)
    : system_(&system), config_(config) {}

MomentField SourceIntegrator::step(const MomentField& state, double dt, StepDiagnostics* diagnostics) {
  const std::size_t n = state.grid.cell_count();
  if (dt != cached_dt_ || propagators_.size() != n) {
    propagators_.assign(n, MatX());
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
      for (std::size_t c = begin; c < end; ++c) {
        if (auto s = system_->linear_source(c)) propagators_[c] = dg_linear_propagator(*s, dt);
      }
    });
    cached_dt_ = dt;
  }
  MomentField out = state;
  std::vector<int> iterations(n, 0);
  const bool first_order = system_->closure().first_order();
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      const auto col = static_cast<Eigen::Index>(c);
      if (propagators_[c].size() > 0) {
        out.values.col(col).noalias() = propagators_[c] * state.values.col(col);
        continue;
      }
      if (first_order) {
        const DgSolution<4> r = dg_newton<4>(
            Vec4(state.values.col(col)), dt, [&](const Vec4& u) { return system_->source4(u, c); },
            [&](const Vec4& u) { return system_->source_jacobian4(u, c); }, config_);
        out.values.col(col) = r.value;
        iterations[c] = r.iterations;
      } else {
        const DgResult r = dg_source_step(
            state.values.col(col), dt, [&](const VecX& u) { return system_->source(u, c); },
            [&](const VecX& u) { return system_->source_jacobian(u, c); }, config_);
        out.values.col(col) = r.value;
        iterations[c] = r.iterations;
      }
    }
  });
  if (diagnostics != nullptr) {
    for (int it : iterations) diagnostics->max_newton_iterations = std::max(diagnostics->max_newton_iterations, it);
  }
  check_cells(out.values, state.grid, "source step", system_->closure().needs_realizability());
  return out;
}

MomentField strang_step(const MomentField& state, double dt, const MomentSystem& system, const SolverConfig& config,
                        SourceIntegrator& source, StepDiagnostics* diagnostics) {
  MomentField half = source.step(state, 0.5 * dt, diagnostics);
  MomentField transported = flux_step(half, dt, system, config, diagnostics);
  return source.step(transported, 0.5 * dt, diagnostics);
}

double stable_time_step(const GridSpec& grid, const MomentSystem& system, const SolverConfig& config) {
  return config.cfl * std::min(grid.dx, grid.dy) / system.wave_speed();
}

MomentField run_moment_model(const MomentField& initial, const MomentSystem& system, const SolverConfig& config,
                             const std::vector<double>& output_times, const OutputCallback& callback,
                             RunDiagnostics* diagnostics) {
  config.validate();
  check_cells(initial.values, initial.grid, "initial state");
  const double dt_max = stable_time_step(initial.grid, system, config);
  SourceIntegrator source(system, config);
  RunDiagnostics local;
  RunDiagnostics& diag = diagnostics != nullptr ? *diagnostics : local;
  diag = RunDiagnostics{};
  diag.initial_mass = initial.total_mass();
  MomentField state = initial;
  double time = 0.0;
  std::size_t next_output = 0;
  while (next_output < output_times.size() && output_times[next_output] <= 0.0) {
    if (callback) callback(0.0, state);
    ++next_output;
  }
  auto record = [&](const MomentField& field) {
    double min_rho = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < field.values.cols(); ++c) {
      const double rho = field.values(0, c);
      min_rho = std::min(min_rho, rho);
      if (rho > 0.0) diag.max_normalized_flux = std::max(diag.max_normalized_flux, field.values.col(c).segment<3>(1).norm() / rho);
      if (!first_order_realizable(field.values.col(c), 0.0)) ++diag.realizability_violations;
    }
    diag.min_density = diag.steps == 0 ? min_rho : std::min(diag.min_density, min_rho);
  };
  record(state);
  while (time < config.t_end * (1.0 - 1e-14)) {
    double target = config.t_end;
    if (next_output < output_times.size()) target = std::min(target, output_times[next_output]);
    double dt = std::min(dt_max, target - time);
    // Avoid a sliver step right before an output time.
    if (target - time - dt < 1e-3 * dt_max && target - time - dt > 0.0) dt = 0.5 * (target - time);
    StepDiagnostics step;
    const double mass_before = state.total_mass();
    state = strang_step(state, dt, system, config, source, &step);
    const double mass_after = state.total_mass();
    time = (std::abs(target - (time + dt)) < 1e-12 * std::max(1.0, target)) ? target : time + dt;
    ++diag.steps;
    const double scale = std::max(std::abs(mass_before), std::numeric_limits<double>::min());
    diag.max_step_balance_error =
        std::max(diag.max_step_balance_error, std::abs(mass_after - mass_before + dt * step.boundary_mass_flux) / scale);
    diag.max_mass_drift = std::max(diag.max_mass_drift, std::abs(mass_after - diag.initial_mass) /
                                                            std::max(diag.initial_mass, std::numeric_limits<double>::min()));
    diag.limiter_activations += step.limiter_activations;
    diag.min_theta = std::min(diag.min_theta, step.min_theta);
    diag.fallback_reconstructions += step.fallback_reconstructions;
    diag.max_newton_iterations = std::max(diag.max_newton_iterations, step.max_newton_iterations);
    record(state);
    while (next_output < output_times.size() && output_times[next_output] <= time * (1.0 + 1e-14)) {
      if (callback) callback(time, state);
      ++next_output;
    }
  }
  diag.final_mass = state.total_mass();
  return state;
}

// ---------------------------------------------------------------------------
// FIELD2D
// ---------------------------------------------------------------------------

void write_field(std::ostream& out, const ScalarField& field) {
  const GridSpec& g = field.grid;
  if (field.values.size() != g.cell_count()) throw InputError("field size does not match its grid");
  if (field.name.empty() || field.name.find_first_of(" \t\n") != std::string::npos) {
    throw InputError("field name must be a single non-empty token");
  }
  out << std::setprecision(17);
  out << "FIELD2D " << field.name << ' ' << g.nx << ' ' << g.ny << ' ' << g.x0 << ' ' << g.y0 << ' ' << g.dx << ' '
      << g.dy << ' ' << field.time << '\n';
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) out << (i == 0 ? "" : " ") << field.values[g.index(i, j)];
    out << '\n';
  }
}

void write_field_file(const std::string& path, const ScalarField& field) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write field file '" + path + "'");
  write_field(out, field);
}

ScalarField read_field(std::istream& in) {
  ScalarField field;
  std::string magic;
  std::string header;
  if (!std::getline(in, header)) throw InputError("FIELD2D: empty input");
  std::istringstream hs(header);
  hs >> magic >> field.name >> field.grid.nx >> field.grid.ny >> field.grid.x0 >> field.grid.y0 >> field.grid.dx >>
      field.grid.dy >> field.time;
  if (magic != "FIELD2D" || hs.fail()) throw InputError("FIELD2D: malformed header line '" + header + "'");
  field.grid.validate();
  field.values.reserve(field.grid.cell_count());
  double value;
  while (field.values.size() < field.grid.cell_count() && in >> value) field.values.push_back(value);
  if (field.values.size() != field.grid.cell_count()) {
    throw InputError("FIELD2D: expected " + std::to_string(field.grid.cell_count()) + " values, read " +
                     std::to_string(field.values.size()));
  }
  return field;
}

ScalarField read_field_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open field file '" + path + "'");
  return read_field(in);
}

}  // namespace moment_glioma
