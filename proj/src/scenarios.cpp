#include "moment_glioma/scenarios.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace moment_glioma {

namespace {

std::string format_real(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

std::string trim(const std::string& text) {
  const auto begin = text.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = text.find_last_not_of(" \t\r");
  return text.substr(begin, end - begin + 1);
}

bool valid_name(const std::string& name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

void Scenario::validate() const {
  if (!valid_name(name)) throw InputError("scenario name must be a non-empty token of letters, digits, '_', '-', '.'");
  if (source == TensorSource::FiberStrand) {
    grid.validate();
    if (!(strand.domain_size > 0.0) || !(strand.sigma > 0.0) || !(strand.out_of_plane >= 0.0)) {
      throw InputError("fiber strand geometry needs positive size and sigma and a nonnegative D33");
    }
  } else {
    if (tensor_file.empty()) throw InputError("tissue source 'file' needs a tensor file");
    if (crop && !(crop->x_min < crop->x_max && crop->y_min < crop->y_max)) {
      throw InputError("crop box needs x_min < x_max and y_min < y_max");
    }
  }
  compute_scaling(physical).validate();
  if (!(initial.side >= 0.0) || !(initial.inside >= 0.0) || !(initial.background >= 0.0)) {
    throw InputError("initial density must be nonnegative (side, inside, background >= 0)");
  }
  if (!diffusion_model()) parse_closure(model);
  if (quadrature_degree < 0) throw InputError("quadrature degree must be nonnegative");
  solver.validate();
  if (!(t_end > 0.0)) throw InputError("output t_end must be positive");
  double previous = 0.0;
  for (double t : output_times) {
    if (!(t > previous)) throw InputError("output times must be positive and increasing");
    if (t > t_end * (1.0 + 1e-12)) throw InputError("output time " + format_real(t) + " s exceeds t_end");
    previous = t;
  }
  if (output_directory.empty()) throw InputError("output directory must not be empty");
}

GridSpec fiber_strand_grid(int cells, double size) {
  if (cells < 3) throw InputError("fiber strand grid needs at least 3 cells per side");
  return {cells, cells, 0.0, 0.0, size / cells, size / cells};
}

Scenario build_fiber_strand_scenario(double eps, const GridSpec& grid) {
  if (!(eps > 0.0)) throw InputError("eps must be positive");
  Scenario s;
  s.name = "fiber_strand";
  s.source = TensorSource::FiberStrand;
  s.grid = grid;
  s.estimator = VolumeFractionEstimator::FractionalAnisotropy;
  const double t = 2.0;
  const double x = s.strand.domain_size;
  const double rate = 1.0 / (eps * eps * t);
  s.physical = {t, x / (eps * t), rate, rate, rate, rate, x};
  s.initial = {0.5, 1.5, 0.1, 1.0, 1e-4};
  s.model = "K1F";
  s.t_end = t;
  s.output_times = {t};
  s.validate();
  return s;
}

PhysicalParams brain_slice_parameters() { return {1.5768e7, 2.1e-4, 1e-5, 2.5e-4, 1e-5, 1e-5, 1000.0}; }

Scenario brain_slice_scenario(const std::string& tensor_file) {
  Scenario s;
  s.name = "brain_slice";
  s.source = TensorSource::File;
  s.tensor_file = tensor_file;
  s.crop = CropBox{50.0, 150.0, 110.0, 210.0};
  s.estimator = VolumeFractionEstimator::CharacteristicLength;
  s.physical = brain_slice_parameters();
  s.initial = {101.0, 161.0, 5.0, 1.0, 1e-4};
  s.model = "K1F";
  s.t_end = s.physical.T;
  s.output_times = {s.physical.T};
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Configuration text
// ---------------------------------------------------------------------------

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"", {"name", "preset", "eps", "cells", "tensor_file"}},
      {"grid", {"nx", "ny", "x0", "y0", "dx", "dy"}},
      {"tissue", {"source", "file", "crop", "estimator", "strand_size", "strand_sigma", "strand_d33"}},
      {"physics", {"T", "c", "lambda0", "lambda1", "kplus", "kminus", "x0"}},
      {"initial", {"center_x", "center_y", "side", "inside", "background"}},
      {"model", {"name", "quadrature_degree"}},
      {"solver", {"cfl", "weno_theta", "weno_z", "realizability_floor", "dg_newton_tol", "dg_newton_maxit",
                  "boundary"}},
      {"output", {"t_end", "times", "directory"}},
  };
  return keys;
}

struct Entry {
  std::string value;
  int line = 0;
};

class ConfigEntries {
 public:
  explicit ConfigEntries(std::istream& in) {
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const std::string text = trim(raw.substr(0, raw.find('#')));
      if (text.empty()) continue;
      if (text.front() == '[') {
        if (text.back() != ']') fail(line, "malformed section header '" + text + "'");
        section = trim(text.substr(1, text.size() - 2));
        if (section.empty() || known_keys().count(section) == 0) fail(line, "unknown section [" + section + "]");
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string::npos) fail(line, "expected 'key = value', got '" + text + "'");
      const std::string key = trim(text.substr(0, eq));
      const std::string value = trim(text.substr(eq + 1));
      if (known_keys().at(section).count(key) == 0) {
        fail(line, "unknown key '" + key + "'" + (section.empty() ? "" : " in [" + section + "]"));
      }
      const std::string full = section.empty() ? key : section + "." + key;
      if (entries_.count(full) != 0) fail(line, "repeated key '" + full + "'");
      if (value.empty()) fail(line, "empty value for '" + full + "'");
      entries_[full] = {value, line};
    }
  }

  [[nodiscard]] bool has(const std::string& key) const { return entries_.count(key) != 0; }

  [[nodiscard]] std::string text(const std::string& key) const { return entries_.at(key).value; }

  [[nodiscard]] double real(const std::string& key) const {
    const Entry& e = entries_.at(key);
    return parse_real(e.value, e.line, key);
  }

  [[nodiscard]] int integer(const std::string& key) const {
    const Entry& e = entries_.at(key);
    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(e.value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != e.value.size()) fail(e.line, "'" + key + "' expects an integer, got '" + e.value + "'");
    return value;
  }

  [[nodiscard]] std::vector<double> reals(const std::string& key) const {
    const Entry& e = entries_.at(key);
    std::vector<double> out;
    std::stringstream stream(e.value);
    std::string item;
    while (std::getline(stream, item, ',')) out.push_back(parse_real(trim(item), e.line, key));
    return out;
  }

  void set_real(const std::string& key, double& target) const {
    if (has(key)) target = real(key);
  }

  [[nodiscard]] int line(const std::string& key) const { return entries_.at(key).line; }

  [[noreturn]] static void fail(int line, const std::string& message) {
    throw InputError("config line " + std::to_string(line) + ": " + message);
  }

 private:
  static double parse_real(const std::string& text, int line, const std::string& key) {
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (text.empty() || used != text.size() || !std::isfinite(value)) {
      fail(line, "'" + key + "' expects a finite real number, got '" + text + "'");
    }
    return value;
  }

  std::map<std::string, Entry> entries_;
};

Scenario preset_scenario(const ConfigEntries& c) {
  for (const char* key : {"eps", "cells", "tensor_file"}) {
    if (c.has(key) && !c.has("preset")) ConfigEntries::fail(c.line(key), std::string("'") + key + "' needs a preset");
  }
  if (!c.has("preset")) return Scenario{};
  const std::string preset = c.text("preset");
  if (preset == "fiber_strand") {
    if (!c.has("eps")) ConfigEntries::fail(c.line("preset"), "preset fiber_strand needs 'eps'");
    if (c.has("tensor_file")) ConfigEntries::fail(c.line("tensor_file"), "preset fiber_strand takes no tensor file");
    return build_fiber_strand_scenario(c.real("eps"), fiber_strand_grid(c.has("cells") ? c.integer("cells") : 90));
  }
  if (preset == "brain_slice") {
    if (!c.has("tensor_file")) ConfigEntries::fail(c.line("preset"), "preset brain_slice needs 'tensor_file'");
    if (c.has("eps") || c.has("cells")) {
      ConfigEntries::fail(c.line("preset"), "preset brain_slice takes neither 'eps' nor 'cells'");
    }
    return brain_slice_scenario(c.text("tensor_file"));
  }
  ConfigEntries::fail(c.line("preset"), "unknown preset '" + preset + "' (expected fiber_strand or brain_slice)");
}

}  // namespace

Scenario parse_scenario(std::istream& in) {
  const ConfigEntries c(in);
  Scenario s = preset_scenario(c);
  if (c.has("name")) s.name = c.text("name");

  if (c.has("tissue.source")) {
    const std::string source = c.text("tissue.source");
    if (source == "fiber_strand") {
      s.source = TensorSource::FiberStrand;
    } else if (source == "file") {
      s.source = TensorSource::File;
    } else {
      ConfigEntries::fail(c.line("tissue.source"), "unknown tissue source '" + source + "' (expected fiber_strand or file)");
    }
  }
  for (const char* key : {"grid.nx", "grid.ny", "grid.x0", "grid.y0", "grid.dx", "grid.dy"}) {
    if (c.has(key) && s.source == TensorSource::File) {
      ConfigEntries::fail(c.line(key), "a tensor file source takes its grid from the file");
    }
  }
  if (c.has("grid.nx")) s.grid.nx = c.integer("grid.nx");
  if (c.has("grid.ny")) s.grid.ny = c.integer("grid.ny");
  c.set_real("grid.x0", s.grid.x0);
  c.set_real("grid.y0", s.grid.y0);
  c.set_real("grid.dx", s.grid.dx);
  c.set_real("grid.dy", s.grid.dy);
  if (s.source == TensorSource::File) s.grid = GridSpec{};

  if (c.has("tissue.file")) s.tensor_file = c.text("tissue.file");
  if (c.has("tissue.crop")) {
    const std::vector<double> box = c.reals("tissue.crop");
    if (box.size() != 4) ConfigEntries::fail(c.line("tissue.crop"), "crop expects x_min, x_max, y_min, y_max");
    s.crop = CropBox{box[0], box[1], box[2], box[3]};
  }
  if (s.source == TensorSource::FiberStrand) {
    for (const char* key : {"tissue.file", "tissue.crop"}) {
      if (c.has(key)) ConfigEntries::fail(c.line(key), "the synthetic fiber strand takes no tensor file or crop");
    }
    s.tensor_file.clear();
    s.crop.reset();
  }
  if (c.has("tissue.estimator")) s.estimator = parse_estimator(c.text("tissue.estimator"));
  c.set_real("tissue.strand_size", s.strand.domain_size);
  c.set_real("tissue.strand_sigma", s.strand.sigma);
  c.set_real("tissue.strand_d33", s.strand.out_of_plane);

  c.set_real("physics.T", s.physical.T);
  c.set_real("physics.c", s.physical.c);
  c.set_real("physics.lambda0", s.physical.lambda0);
  c.set_real("physics.lambda1", s.physical.lambda1);
  c.set_real("physics.kplus", s.physical.kplus);
  c.set_real("physics.kminus", s.physical.kminus);
  c.set_real("physics.x0", s.physical.x0);

  c.set_real("initial.center_x", s.initial.center_x);
  c.set_real("initial.center_y", s.initial.center_y);
  c.set_real("initial.side", s.initial.side);
  c.set_real("initial.inside", s.initial.inside);
  c.set_real("initial.background", s.initial.background);

  if (c.has("model.name")) s.model = c.text("model.name");
  if (c.has("model.quadrature_degree")) s.quadrature_degree = c.integer("model.quadrature_degree");

  c.set_real("solver.cfl", s.solver.cfl);
  c.set_real("solver.weno_theta", s.solver.weno_theta);
  c.set_real("solver.weno_z", s.solver.weno_z);
  c.set_real("solver.realizability_floor", s.solver.realizability_floor);
  c.set_real("solver.dg_newton_tol", s.solver.dg_newton_tol);
  if (c.has("solver.dg_newton_maxit")) s.solver.dg_newton_maxit = c.integer("solver.dg_newton_maxit");
  if (c.has("solver.boundary")) s.solver.boundary = parse_boundary(c.text("solver.boundary"));

  c.set_real("output.t_end", s.t_end);
  if (c.has("output.times")) s.output_times = c.reals("output.times");
  if (c.has("output.directory")) s.output_directory = c.text("output.directory");
  if (s.output_times.empty()) s.output_times = {s.t_end};

  s.validate();
  return s;
}

Scenario parse_scenario_text(const std::string& text) {
  std::istringstream in(text);
  return parse_scenario(in);
}

Scenario parse_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  return parse_scenario(in);
}

void write_scenario(std::ostream& out, const Scenario& s) {
  auto real = [&](const char* key, double value, const char* unit = nullptr) {
    out << key << " = " << format_real(value);
    if (unit != nullptr) out << "  # " << unit;
    out << '\n';
  };
  out << "name = " << s.name << "\n";
  if (s.source == TensorSource::FiberStrand) {
    out << "\n[grid]\n";
    out << "nx = " << s.grid.nx << "\nny = " << s.grid.ny << '\n';
    real("x0", s.grid.x0, "mm");
    real("y0", s.grid.y0, "mm");
    real("dx", s.grid.dx, "mm");
    real("dy", s.grid.dy, "mm");
  }
  out << "\n[tissue]\n";
  out << "source = " << (s.source == TensorSource::FiberStrand ? "fiber_strand" : "file") << '\n';
  if (s.source == TensorSource::File) {
    out << "file = " << s.tensor_file << '\n';
    if (s.crop) {
      out << "crop = " << format_real(s.crop->x_min) << ", " << format_real(s.crop->x_max) << ", "
          << format_real(s.crop->y_min) << ", " << format_real(s.crop->y_max) << "  # mm\n";
    }
  }
  out << "estimator = " << to_string(s.estimator) << '\n';
  real("strand_size", s.strand.domain_size, "mm");
  real("strand_sigma", s.strand.sigma);
  real("strand_d33", s.strand.out_of_plane);

  out << "\n[physics]\n";
  real("T", s.physical.T, "s");
  real("c", s.physical.c, "mm/s");
  real("lambda0", s.physical.lambda0, "1/s");
  real("lambda1", s.physical.lambda1, "1/s");
  real("kplus", s.physical.kplus, "1/s");
  real("kminus", s.physical.kminus, "1/s");
  real("x0", s.physical.x0, "mm");

  out << "\n[initial]\n";
  real("center_x", s.initial.center_x, "mm");
  real("center_y", s.initial.center_y, "mm");
  real("side", s.initial.side, "mm");
  real("inside", s.initial.inside, "density");
  real("background", s.initial.background, "density");

  out << "\n[model]\n";
  out << "name = " << s.model << '\n';
  out << "quadrature_degree = " << s.quadrature_degree << '\n';

  out << "\n[solver]\n";
  real("cfl", s.solver.cfl);
  real("weno_theta", s.solver.weno_theta);
  real("weno_z", s.solver.weno_z);
  real("realizability_floor", s.solver.realizability_floor);
  real("dg_newton_tol", s.solver.dg_newton_tol);
  out << "dg_newton_maxit = " << s.solver.dg_newton_maxit << '\n';
  out << "boundary = " << to_string(s.solver.boundary) << '\n';

  out << "\n[output]\n";
  real("t_end", s.t_end, "s");
  out << "times = ";
  for (std::size_t k = 0; k < s.output_times.size(); ++k) out << (k == 0 ? "" : ", ") << format_real(s.output_times[k]);
  out << "  # s\n";
  out << "directory = " << s.output_directory << '\n';
}

std::string serialize_scenario(const Scenario& scenario) {
  std::ostringstream out;
  write_scenario(out, scenario);
  return out.str();
}

// ---------------------------------------------------------------------------
// Preparation
// ---------------------------------------------------------------------------

namespace {

WaterTensorField crop_field(const WaterTensorField& field, const CropBox& box) {
  const GridSpec& g = field.grid;
  int i0 = g.nx, i1 = -1, j0 = g.ny, j1 = -1;
  for (int i = 0; i < g.nx; ++i) {
    if (g.x_center(i) >= box.x_min && g.x_center(i) <= box.x_max) {
      i0 = std::min(i0, i);
      i1 = std::max(i1, i);
    }
  }
  for (int j = 0; j < g.ny; ++j) {
    if (g.y_center(j) >= box.y_min && g.y_center(j) <= box.y_max) {
      j0 = std::min(j0, j);
      j1 = std::max(j1, j);
    }
  }
  if (i1 - i0 + 1 < 3 || j1 - j0 + 1 < 3) {
    throw InputError("crop box keeps fewer than 3 x 3 cells of the tensor field");
  }
  WaterTensorField out;
  out.grid = {i1 - i0 + 1, j1 - j0 + 1, g.x0 + i0 * g.dx, g.y0 + j0 * g.dy, g.dx, g.dy};
  for (int j = j0; j <= j1; ++j) {
    for (int i = i0; i <= i1; ++i) out.tensors.push_back(field.at(i, j));
  }
  return out;
}

// Covered fraction of [a0, a1] by [b0, b1]; square edges on cell faces give exact 0 or 1.
double covered(double a0, double a1, double b0, double b1) {
  const double f = std::max(0.0, std::min(a1, b1) - std::max(a0, b0)) / (a1 - a0);
  if (f < 1e-12) return 0.0;
  return f > 1.0 - 1e-12 ? 1.0 : f;
}

}  // namespace

std::vector<double> initial_density(const InitialSquare& initial, const GridSpec& grid) {
  const double half = 0.5 * initial.side;
  std::vector<double> out(grid.cell_count());
  for (int j = 0; j < grid.ny; ++j) {
    const double y0 = grid.y0 + j * grid.dy;
    const double fy = covered(y0, y0 + grid.dy, initial.center_y - half, initial.center_y + half);
    for (int i = 0; i < grid.nx; ++i) {
      const double x0 = grid.x0 + i * grid.dx;
      const double fx = covered(x0, x0 + grid.dx, initial.center_x - half, initial.center_x + half);
      const double fraction = fx * fy;
      out[grid.index(i, j)] = fraction == 1.0 ? initial.inside
                                              : initial.background + fraction * (initial.inside - initial.background);
    }
  }
  return out;
}

VecX isotropic_moments(const MomentSystem& system, double rho) {
  if (system.closure().first_order()) return Vec4(rho, 0.0, 0.0, 0.0);
  const SphereQuadrature& quadrature = system.quadrature();
  VecX sum = VecX::Zero(system.size());
  double total = 0.0;
  for (std::size_t i = 0; i < quadrature.size(); ++i) {
    sum += quadrature.weight(i) * system.moment_basis(quadrature.node(i));
    total += quadrature.weight(i);
  }
  sum /= total;
  // Odd moments vanish exactly; drop their rounding residue.
  const double scale = sum.cwiseAbs().maxCoeff();
  for (Eigen::Index k = 0; k < sum.size(); ++k) {
    if (std::abs(sum[k]) < 1e-14 * scale) sum[k] = 0.0;
  }
  return rho * sum;
}

PreparedScenario prepare_scenario(const Scenario& scenario) {
  scenario.validate();
  PreparedScenario out;
  out.scaling = compute_scaling(scenario.physical);
  if (scenario.source == TensorSource::FiberStrand) {
    out.water = synth_fiber_strand(scenario.strand, scenario.grid);
  } else {
    out.water = read_tensor_field_file(scenario.tensor_file);
    if (scenario.crop) out.water = crop_field(out.water, *scenario.crop);
  }
  out.water.validate();
  const WaterTensorField scaled{out.water.grid.scaled(scenario.physical.x0), out.water.tensors};
  out.tissue = derive_tissue_fields(scaled, scenario.estimator, out.scaling);
  out.initial_density = initial_density(scenario.initial, out.water.grid);
  return out;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

namespace {

using Json = nlohmann::ordered_json;

Json grid_json(const GridSpec& g) {
  return {{"nx", g.nx}, {"ny", g.ny}, {"x0", g.x0}, {"y0", g.y0}, {"dx", g.dx}, {"dy", g.dy}};
}

// St = x0/(T c) uses x0 as the length scale; the grid itself may span a different length.
Json length_scale_json(const Scenario& scenario, const GridSpec& physical) {
  const double extent = std::max(physical.width(), physical.height());
  const double x0 = scenario.physical.x0;
  const bool consistent = std::abs(x0 - extent) <= 1e-9 * std::max(x0, extent);
  Json out{{"x0_mm", x0}, {"domain_extent_mm", extent}, {"ratio", x0 / extent}, {"consistent", consistent}};
  if (!consistent) {
    out["note"] = "St = x0/(T c) = " + format_real(compute_scaling(scenario.physical).eps) + " uses x0 = " +
                  format_real(x0) + " mm while the computational domain spans " + format_real(extent) + " mm";
  }
  return out;
}

std::string output_stem(const Scenario& scenario) {
  std::string model = scenario.model;
  return scenario.name + "_" + model;
}

}  // namespace

ScenarioResult run_scenario(const Scenario& scenario, const std::string& output_directory) {
  const auto start = std::chrono::steady_clock::now();
  const PreparedScenario prepared = prepare_scenario(scenario);
  const GridSpec& physical = prepared.water.grid;
  const double time_scale = scenario.physical.T;
  const double length_scale = scenario.physical.x0;
  std::vector<double> times;
  for (double t : scenario.output_times) times.push_back(t / time_scale);
  const double t_end = scenario.t_end / time_scale;

  ScenarioResult result;
  auto keep = [&](double t, std::vector<double> density) {
    result.outputs.push_back({"rho", physical, t * time_scale, std::move(density)});
  };
  if (scenario.diffusion_model()) {
    const DiffusionFields fields = diffusion_fields(prepared.tissue, prepared.scaling);
    run_diffusion(
        prepared.initial_density, fields, t_end, times, [&](double t, const std::vector<double>& rho) { keep(t, rho); },
        &result.diffusion);
  } else {
    ClosureSpec closure = parse_closure(scenario.model);
    closure.quadrature_degree = scenario.quadrature_degree;
    const MomentSystem system(closure, prepared.tissue, prepared.scaling);
    MomentField initial(prepared.tissue.grid, system.size());
    for (std::size_t c = 0; c < initial.grid.cell_count(); ++c) {
      initial.cell(c) = isotropic_moments(system, prepared.initial_density[c]);
    }
    SolverConfig config = scenario.solver;
    config.t_end = t_end;
    run_moment_model(
        initial, system, config, times, [&](double t, const MomentField& state) { keep(t, state.density()); },
        &result.kinetic);
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  // Masses on the physical grid (density x mm^2).
  const double area = length_scale * length_scale;
  Json conservation;
  if (scenario.diffusion_model()) {
    const DiffusionDiagnostics& d = result.diffusion;
    conservation = {{"steps", d.steps},
                    {"initial_mass", d.initial_mass * area},
                    {"final_mass", d.final_mass * area},
                    {"relative_mass_change", std::abs(d.final_mass - d.initial_mass) / std::max(d.initial_mass, 1e-300)},
                    {"max_step_mass_error", d.max_step_mass_error},
                    {"min_density", d.min_density}};
  } else {
    const RunDiagnostics& d = result.kinetic;
    conservation = {{"steps", d.steps},
                    {"initial_mass", d.initial_mass * area},
                    {"final_mass", d.final_mass * area},
                    {"max_mass_drift", d.max_mass_drift},
                    {"max_step_balance_error", d.max_step_balance_error},
                    {"realizability_violations", d.realizability_violations},
                    {"limiter_activations", d.limiter_activations},
                    {"min_limiter_theta", d.min_theta},
                    {"fallback_reconstructions", d.fallback_reconstructions},
                    {"max_newton_iterations", d.max_newton_iterations},
                    {"min_density", d.min_density},
                    {"max_normalized_flux", d.max_normalized_flux}};
  }
  const ScalingParams& sc = prepared.scaling;
  Json manifest{
      {"scenario", scenario.name},
      {"model", scenario.model},
      {"tensor_source", scenario.source == TensorSource::FiberStrand ? "fiber_strand" : scenario.tensor_file},
      {"estimator", to_string(scenario.estimator)},
      {"parameters",
       {{"T_s", scenario.physical.T},
        {"c_mm_per_s", scenario.physical.c},
        {"lambda0_per_s", scenario.physical.lambda0},
        {"lambda1_per_s", scenario.physical.lambda1},
        {"kplus_per_s", scenario.physical.kplus},
        {"kminus_per_s", scenario.physical.kminus},
        {"x0_mm", scenario.physical.x0}}},
      {"scaling", {{"St", sc.eps}, {"Kn", sc.Kn}, {"R", sc.R}, {"eta", sc.eta}}},
      {"length_scale_check", length_scale_json(scenario, physical)},
      {"grid", {{"physical_mm", grid_json(physical)}, {"nondimensional", grid_json(prepared.tissue.grid)}}},
      {"solver",
       {{"cfl", scenario.solver.cfl},
        {"weno_theta", scenario.solver.weno_theta},
        {"weno_z", scenario.solver.weno_z},
        {"realizability_floor", scenario.solver.realizability_floor},
        {"dg_newton_tol", scenario.solver.dg_newton_tol},
        {"dg_newton_maxit", scenario.solver.dg_newton_maxit},
        {"boundary", to_string(scenario.solver.boundary)},
        {"quadrature_degree", scenario.quadrature_degree},
        {"threads", worker_threads()}}},
      {"t_end_s", scenario.t_end},
      {"wall_seconds", result.wall_seconds},
      {"conservation", conservation},
      {"config", serialize_scenario(scenario)},
  };
  Json outputs = Json::array();
  for (const ScalarField& f : result.outputs) {
    outputs.push_back({{"time_s", f.time}, {"mass", total_mass(f.values, f.grid)}});
  }

  if (!output_directory.empty()) {
    std::error_code error;
    std::filesystem::create_directories(output_directory, error);
    if (error) throw InputError("cannot create output directory '" + output_directory + "': " + error.message());
    const std::string stem = (std::filesystem::path(output_directory) / output_stem(scenario)).string();
    for (std::size_t k = 0; k < result.outputs.size(); ++k) {
      const std::string path = stem + "_rho_" + std::to_string(k) + ".field";
      write_field_file(path, result.outputs[k]);
      outputs[k]["file"] = path;
      result.files.push_back(path);
    }
    manifest["outputs"] = outputs;
    const std::string path = stem + "_manifest.json";
    std::ofstream out(path);
    if (!out) throw InputError("cannot write manifest '" + path + "'");
    out << manifest.dump(2) << '\n';
    result.files.push_back(path);
  } else {
    manifest["outputs"] = outputs;
  }
  result.manifest = manifest.dump(2);
  return result;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

namespace {

bool same_grid(const GridSpec& a, const GridSpec& b) {
  auto close = [](double x, double y) { return std::abs(x - y) <= 1e-12 * std::max({1.0, std::abs(x), std::abs(y)}); };
  return a.nx == b.nx && a.ny == b.ny && close(a.x0, b.x0) && close(a.y0, b.y0) && close(a.dx, b.dx) &&
         close(a.dy, b.dy);
}

}  // namespace

ComparisonReport relative_difference(const ScalarField& h1, const ScalarField& h2) {
  if (!same_grid(h1.grid, h2.grid)) throw InputError("relative difference: fields live on different grids");
  return relative_difference(h1.values, h2.values, h2.grid);
}

ComparisonReport relative_difference(const std::vector<double>& h1, const std::vector<double>& h2,
                                     const GridSpec& grid) {
  if (h1.size() != grid.cell_count() || h2.size() != grid.cell_count()) {
    throw InputError("relative difference: field sizes do not match the grid");
  }
  double reference = 0.0;
  for (std::size_t c = 0; c < h2.size(); ++c) {
    if (!std::isfinite(h1[c]) || !std::isfinite(h2[c])) throw InputError("relative difference: non-finite value");
    reference = std::max(reference, std::abs(h2[c]));
  }
  if (!(reference > 0.0)) throw InputError("relative difference: reference field is identically zero");
  ComparisonReport out;
  out.grid = grid;
  out.relerr.resize(h1.size());
  double sum = 0.0;
  std::array<long, 4> counts{};
  for (std::size_t c = 0; c < h1.size(); ++c) {
    const double r = std::abs(h1[c] - h2[c]) / reference;
    out.relerr[c] = r;
    out.max = std::max(out.max, r);
    sum += r;
    for (std::size_t k = 0; k < kContourLevels.size(); ++k) counts[k] += r >= kContourLevels[k] ? 1 : 0;
  }
  out.mean = sum / static_cast<double>(h1.size());
  for (std::size_t k = 0; k < kContourLevels.size(); ++k) {
    out.exceedance_area[k] = static_cast<double>(counts[k]) * grid.dx * grid.dy;
  }
  return out;
}

void write_comparison_csv(std::ostream& out, const ComparisonReport& report) {
  const GridSpec& g = report.grid;
  out << "x,y,relerr\n";
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      out << format_real(g.x_center(i)) << ',' << format_real(g.y_center(j)) << ','
          << format_real(report.relerr[g.index(i, j)]) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Convergence to the diffusion limit
// ---------------------------------------------------------------------------

std::vector<ConvergenceRow> convergence_study(const std::vector<double>& eps_list, const ClosureSpec& model,
                                              const GridSpec& grid, const SolverConfig& solver,
                                              const std::function<void(const ConvergenceRow&)>& progress) {
  for (double eps : eps_list) {
    if (!(eps > 0.0)) throw InputError("convergence study: every eps must be positive");
  }
  std::vector<ConvergenceRow> rows;
  for (double eps : eps_list) {
    Scenario kinetic = build_fiber_strand_scenario(eps, grid);
    kinetic.model = to_string(model);
    kinetic.quadrature_degree = model.quadrature_degree;
    kinetic.solver = solver;
    Scenario limit = kinetic;
    limit.model = "diffusion";
    const ScenarioResult k = run_scenario(kinetic);
    const ScenarioResult d = run_scenario(limit);
    const ComparisonReport report = relative_difference(k.outputs.back(), d.outputs.back());
    rows.push_back({eps, report.max, report.mean, k.kinetic.steps, k.wall_seconds});
    if (progress) progress(rows.back());
  }
  return rows;
}

}  // namespace moment_glioma
