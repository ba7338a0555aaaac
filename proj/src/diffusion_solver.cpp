#include "moment_glioma/diffusion_solver.hpp"

#include "moment_glioma/fv_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace moment_glioma {

void DiffusionFields::validate(double R) const {
  grid.validate();
  const std::size_t n = grid.cell_count();
  if (D.size() != n || drift.size() != n || divD.size() != n) {
    throw InputError("diffusion fields do not match the grid");
  }
  for (std::size_t c = 0; c < n; ++c) {
    const Mat3& d = D[c];
    if ((d - d.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, d.cwiseAbs().maxCoeff())) {
      throw InputError("diffusion tensor is not symmetric in cell " + std::to_string(c));
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(d, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, d.trace())) {
      throw InputError("diffusion tensor is not positive semidefinite in cell " + std::to_string(c));
    }
    if (R > 0.0 && std::abs(d.trace() - 1.0 / R) > 1e-10 * std::max(1.0, 1.0 / R)) {
      throw InputError("diffusion tensor trace differs from 1/R in cell " + std::to_string(c));
    }
  }
}

double DiffusionFields::max_eigenvalue() const {
  double out = 0.0;
  for (const Mat3& d : D) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(d.topLeftCorner<2, 2>(), Eigen::EigenvaluesOnly);
    out = std::max(out, eig.eigenvalues().maxCoeff());
  }
  return out;
}

namespace {

// Index with copy ghosts at the walls.
std::size_t clamped(const GridSpec& g, int i, int j) {
  return g.index(std::clamp(i, 0, g.nx - 1), std::clamp(j, 0, g.ny - 1));
}

}  // namespace

void update_divergence(DiffusionFields& fields) {
  const GridSpec& g = fields.grid;
  fields.divD.assign(g.cell_count(), Vec2::Zero());
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const int il = std::max(i - 1, 0), ir = std::min(i + 1, g.nx - 1);
      const int jl = std::max(j - 1, 0), jr = std::min(j + 1, g.ny - 1);
      const double hx = (ir - il) * g.dx, hy = (jr - jl) * g.dy;
      const Mat3& xl = fields.D[g.index(il, j)];
      const Mat3& xr = fields.D[g.index(ir, j)];
      const Mat3& yl = fields.D[g.index(i, jl)];
      const Mat3& yr = fields.D[g.index(i, jr)];
      fields.divD[g.index(i, j)] = Vec2((xr(0, 0) - xl(0, 0)) / hx + (yr(0, 1) - yl(0, 1)) / hy,
                                        (xr(0, 1) - xl(0, 1)) / hx + (yr(1, 1) - yl(1, 1)) / hy);
    }
  }
}

DiffusionFields diffusion_fields(const TissueFields& tissue, const ScalingParams& scaling) {
  DiffusionFields out;
  out.grid = tissue.grid;
  const std::size_t n = tissue.grid.cell_count();
  out.D.resize(n);
  out.drift.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    const DiffusionCoefficients k = diffusion_coefficients(TissueCell::from_fields(tissue, c), scaling);
    out.D[c] = k.D;
    out.drift[c] = k.drift.head<2>();
  }
  update_divergence(out);
  return out;
}

std::vector<double> diffusion_rate(const std::vector<double>& rho, const DiffusionFields& fields,
                                   DiffusionForm form) {
  const GridSpec& g = fields.grid;
  const std::size_t n = g.cell_count();
  if (rho.size() != n) throw InputError("density field does not match the diffusion grid");
  // Flux through the upper x face (fx) and upper y face (fy) of each cell; walls carry none.
  std::vector<double> fx(n, 0.0), fy(n, 0.0);
  auto w = [&](std::size_t c, int a, int b) {
    return form == DiffusionForm::Myopic ? rho[c] * fields.D[c](a, b) : rho[c];
  };
  // Coefficient multiplying the differences: 1 for the myopic form, the face-averaged D otherwise.
  auto coef = [&](std::size_t c0, std::size_t c1, int a, int b) {
    return form == DiffusionForm::Myopic ? 1.0 : 0.5 * (fields.D[c0](a, b) + fields.D[c1](a, b));
  };
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      const int i = static_cast<int>(c % static_cast<std::size_t>(g.nx));
      const int j = static_cast<int>(c / static_cast<std::size_t>(g.nx));
      if (i + 1 < g.nx) {
        const std::size_t r = g.index(i + 1, j);
        const double normal = coef(c, r, 0, 0) * (w(r, 0, 0) - w(c, 0, 0)) / g.dx;
        const double hy0 = (std::min(j + 1, g.ny - 1) - std::max(j - 1, 0)) * g.dy;
        const double cross =
            0.5 * coef(c, r, 0, 1) *
            ((w(clamped(g, i, j + 1), 0, 1) - w(clamped(g, i, j - 1), 0, 1)) / hy0 +
             (w(clamped(g, i + 1, j + 1), 0, 1) - w(clamped(g, i + 1, j - 1), 0, 1)) / hy0);
        const double drift = 0.5 * (rho[c] * fields.drift[c].x() + rho[r] * fields.drift[r].x());
        fx[c] = normal + cross - drift;
      }
      if (j + 1 < g.ny) {
        const std::size_t u = g.index(i, j + 1);
        const double normal = coef(c, u, 1, 1) * (w(u, 1, 1) - w(c, 1, 1)) / g.dy;
        const double hx0 = (std::min(i + 1, g.nx - 1) - std::max(i - 1, 0)) * g.dx;
        const double cross =
            0.5 * coef(c, u, 0, 1) *
            ((w(clamped(g, i + 1, j), 0, 1) - w(clamped(g, i - 1, j), 0, 1)) / hx0 +
             (w(clamped(g, i + 1, j + 1), 0, 1) - w(clamped(g, i - 1, j + 1), 0, 1)) / hx0);
        const double drift = 0.5 * (rho[c] * fields.drift[c].y() + rho[u] * fields.drift[u].y());
        fy[c] = normal + cross - drift;
      }
    }
  });
  std::vector<double> rate(n);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t c = g.index(i, j);
      const double west = i > 0 ? fx[g.index(i - 1, j)] : 0.0;
      const double south = j > 0 ? fy[g.index(i, j - 1)] : 0.0;
      rate[c] = (fx[c] - west) / g.dx + (fy[c] - south) / g.dy;
    }
  }
  return rate;
}

double diffusion_time_step_bound(const DiffusionFields& fields) {
  const double h = std::min(fields.grid.dx, fields.grid.dy);
  const double lambda = fields.max_eigenvalue();
  if (!(lambda > 0.0)) return std::numeric_limits<double>::infinity();
  return 0.5 * h * h / (2.0 * lambda);
}

std::vector<double> diffusion_step(const std::vector<double>& rho, double dt, const DiffusionFields& fields,
                                   DiffusionForm form) {
  const double bound = diffusion_time_step_bound(fields);
  if (!(dt > 0.0) || dt > bound * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "diffusion step dt = " << dt << " violates the explicit stability bound " << bound;
    throw InputError(msg.str());
  }
  const std::vector<double> k1 = diffusion_rate(rho, fields, form);
  std::vector<double> stage(rho.size());
  for (std::size_t c = 0; c < rho.size(); ++c) stage[c] = rho[c] + dt * k1[c];
  const std::vector<double> k2 = diffusion_rate(stage, fields, form);
  std::vector<double> out(rho.size());
  for (std::size_t c = 0; c < rho.size(); ++c) out[c] = rho[c] + 0.5 * dt * (k1[c] + k2[c]);
  return out;
}

double total_mass(const std::vector<double>& rho, const GridSpec& grid) {
  double sum = 0.0;
  for (double r : rho) sum += r;
  return sum * grid.dx * grid.dy;
}

std::vector<double> run_diffusion(const std::vector<double>& initial, const DiffusionFields& fields, double t_end,
                                  const std::vector<double>& output_times, const DiffusionCallback& callback,
                                  DiffusionDiagnostics* diagnostics, DiffusionForm form) {
  if (!(t_end > 0.0)) throw InputError("t_end must be positive");
  if (initial.size() != fields.grid.cell_count()) throw InputError("initial density does not match the grid");
  for (double r : initial) {
    if (!(r >= 0.0)) throw InputError("initial density must be nonnegative and finite");
  }
  // Margin below the bound so drift and cross terms cannot sit on the stability edge.
  const double dt_max = 0.8 * diffusion_time_step_bound(fields);
  DiffusionDiagnostics local;
  DiffusionDiagnostics& diag = diagnostics != nullptr ? *diagnostics : local;
  diag = DiffusionDiagnostics{};
  diag.initial_mass = total_mass(initial, fields.grid);
  diag.min_density = *std::min_element(initial.begin(), initial.end());
  std::vector<double> rho = initial;
  double time = 0.0;
  std::size_t next_output = 0;
  while (next_output < output_times.size() && output_times[next_output] <= 0.0) {
    if (callback) callback(0.0, rho);
    ++next_output;
  }
  while (time < t_end * (1.0 - 1e-14)) {
    double target = t_end;
    if (next_output < output_times.size()) target = std::min(target, output_times[next_output]);
    const double remaining = target - time;
    const double dt = remaining / std::max(1.0, std::ceil(remaining / dt_max * (1.0 - 1e-12)));
    const double before = total_mass(rho, fields.grid);
    rho = diffusion_step(rho, dt, fields, form);
    const double after = total_mass(rho, fields.grid);
    time = std::abs(target - (time + dt)) < 1e-12 * std::max(1.0, target) ? target : time + dt;
    ++diag.steps;
    diag.max_step_mass_error = std::max(
        diag.max_step_mass_error, std::abs(after - before) / std::max(std::abs(before), std::numeric_limits<double>::min()));
    diag.min_density = std::min(diag.min_density, *std::min_element(rho.begin(), rho.end()));
    while (next_output < output_times.size() && output_times[next_output] <= time * (1.0 + 1e-14)) {
      if (callback) callback(time, rho);
      ++next_output;
    }
  }
  diag.final_mass = total_mass(rho, fields.grid);
  return rho;
}

}  // namespace moment_glioma
