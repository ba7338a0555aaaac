#include "moment_glioma/scenarios.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace moment_glioma {

namespace {

Vec3 vector3(const std::vector<double>& v, const char* name) {
  if (v.size() != 3) throw InputError(std::string("--") + name + " expects 3 comma-separated reals");
  return {v[0], v[1], v[2]};
}

void print_grid(std::ostream& out, const char* label, const GridSpec& g) {
  out << label << ": " << g.nx << " x " << g.ny << " cells, origin (" << g.x0 << ", " << g.y0 << "), spacing ("
      << g.dx << ", " << g.dy << ")\n";
}

int simulate(const std::string& config, const std::string& output_dir, std::ostream& out) {
  const Scenario scenario = parse_scenario_file(config);
  const std::string directory = output_dir.empty() ? scenario.output_directory : output_dir;
  const ScenarioResult result = run_scenario(scenario, directory);
  out << "scenario " << scenario.name << ", model " << scenario.model << ", " << result.wall_seconds << " s\n";
  if (scenario.diffusion_model()) {
    const DiffusionDiagnostics& d = result.diffusion;
    out << "steps " << d.steps << ", relative mass change "
        << std::abs(d.final_mass - d.initial_mass) / std::max(d.initial_mass, 1e-300) << '\n';
  } else {
    const RunDiagnostics& d = result.kinetic;
    out << "steps " << d.steps << ", max mass drift " << d.max_mass_drift << ", realizability violations "
        << d.realizability_violations << ", limiter activations " << d.limiter_activations << '\n';
  }
  for (const std::string& file : result.files) out << "wrote " << file << '\n';
  return 0;
}

int compare(const std::string& a, const std::string& b, const std::string& csv, std::ostream& out) {
  const ComparisonReport report = relative_difference(read_field_file(a), read_field_file(b));
  if (csv.empty()) {
    write_comparison_csv(out, report);
    return 0;
  }
  std::ofstream file(csv);
  if (!file) throw InputError("cannot write '" + csv + "'");
  write_comparison_csv(file, report);
  out << "max relerr " << report.max << "\nmean relerr " << report.mean << '\n';
  for (std::size_t k = 0; k < kContourLevels.size(); ++k) {
    out << "area relerr >= " << kContourLevels[k] << ": " << report.exceedance_area[k] << '\n';
  }
  out << "wrote " << csv << '\n';
  return 0;
}

int convergence(const std::string& config, const std::vector<double>& eps, std::ostream& out) {
  const Scenario scenario = parse_scenario_file(config);
  if (scenario.source != TensorSource::FiberStrand) throw InputError("convergence needs a fiber strand scenario");
  if (scenario.diffusion_model()) throw InputError("convergence needs a moment model, not 'diffusion'");
  ClosureSpec closure = parse_closure(scenario.model);
  closure.quadrature_degree = scenario.quadrature_degree;
  out << "eps,max_relerr,mean_relerr,kinetic_steps,seconds\n" << std::setprecision(6);
  convergence_study(eps, closure, scenario.grid, scenario.solver, [&](const ConvergenceRow& row) {
    out << row.eps << ',' << row.max_relerr << ',' << row.mean_relerr << ',' << row.kinetic_steps << ','
        << row.seconds << std::endl;
  });
  return 0;
}

int spectrum(const std::vector<double>& qhat, const std::vector<double>& dw, const std::vector<double>& n,
             std::ostream& out) {
  if (dw.size() != 6) throw InputError("--dw expects 6 comma-separated reals: xx, xy, xz, yy, yz, zz");
  Mat3 water;
  water << dw[0], dw[1], dw[2], dw[1], dw[3], dw[4], dw[2], dw[4], dw[5];
  const Vec3 q = vector3(qhat, "qhat");
  const Vec3 direction = vector3(n, "n");
  if (q.norm() > 1.0 + 1e-12) throw InputError("|qhat| must not exceed 1");
  if (!(direction.norm() > 0.0)) throw InputError("--n must be a nonzero vector");
  const Mat3 pressure = peanut_pressure_tensor(water);
  const SpectrumReport report = kershaw_spectrum({1.0, q}, pressure, direction.normalized());
  out << std::setprecision(8) << "eigenvalues:";
  for (Eigen::Index k = 0; k < 4; ++k) {
    const auto lambda = report.eigenvalues[k];
    out << ' ' << lambda.real();
    if (lambda.imag() != 0.0) out << (lambda.imag() > 0 ? "+" : "") << lambda.imag() << 'i';
  }
  out << "\nmax |imag|: " << report.max_imag << "\nmax |lambda|: " << report.max_abs
      << "\nmin singular value of eigenvectors: " << report.min_singular_value
      << "\ndiagonalizable: " << (report.diagonalizable ? "yes" : "no") << '\n';
  if (report.closed_form_derived) {
    out << "closed form: " << report.closed_form_derived->transpose() << " (residual " << report.residual_derived
        << ")\n";
  }
  return 0;
}

int validate(const std::string& config, std::ostream& out) {
  const Scenario scenario = parse_scenario_file(config);
  const PreparedScenario prepared = prepare_scenario(scenario);
  const ScalingParams& s = prepared.scaling;
  out << "scenario " << scenario.name << " (model " << scenario.model << ")\n" << std::setprecision(6);
  out << "St = eps = " << s.eps << "\nKn = " << s.Kn << "\nR = " << s.R << "\neta = " << s.eta << '\n';
  print_grid(out, "grid (mm)", prepared.water.grid);
  print_grid(out, "grid (nondimensional)", prepared.tissue.grid);
  const double extent = std::max(prepared.water.grid.width(), prepared.water.grid.height());
  if (std::abs(extent - scenario.physical.x0) > 1e-9 * std::max(extent, scenario.physical.x0)) {
    out << "note: x0 = " << scenario.physical.x0 << " mm differs from the domain extent " << extent << " mm\n";
  }
  out << "config ok\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kinetic and diffusion models of glioma invasion along brain fibers"};
  app.require_subcommand(1);

  std::string config, output_dir, a, b, csv;
  std::vector<double> eps, qhat, dw, n;

  auto* sim = app.add_subcommand("simulate", "run one scenario and write FIELD2D outputs and a manifest");
  sim->add_option("--config", config, "scenario file")->required();
  sim->add_option("--output-dir", output_dir, "overrides the configured output directory");

  auto* cmp = app.add_subcommand("compare", "relative difference |a - b| / max|b| of two FIELD2D files");
  cmp->add_option("--a", a, "field h1")->required();
  cmp->add_option("--b", b, "reference field h2")->required();
  cmp->add_option("--csv", csv, "write the x,y,relerr table here instead of standard output");

  auto* conv = app.add_subcommand("convergence", "moment model against the diffusion limit for several eps");
  conv->add_option("--config", config, "fiber strand scenario file")->required();
  conv->add_option("--eps", eps, "comma-separated eps values")->required()->delimiter(',');

  auto* spec = app.add_subcommand("spectrum", "Kershaw flux Jacobian eigenvalues for m = (1, qhat)");
  spec->add_option("--qhat", qhat, "normalized flux qx,qy,qz")->required()->delimiter(',');
  spec->add_option("--dw", dw, "water tensor xx,xy,xz,yy,yz,zz")->required()->delimiter(',');
  spec->add_option("--n", n, "direction nx,ny,nz")->required()->delimiter(',');

  auto* val = app.add_subcommand("validate", "check a scenario file without running it");
  val->add_option("--config", config, "scenario file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (*sim) return simulate(config, output_dir, out);
    if (*cmp) return compare(a, b, csv, out);
    if (*conv) return convergence(config, eps, out);
    if (*spec) return spectrum(qhat, dw, n, out);
    if (*val) return validate(config, out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace moment_glioma
