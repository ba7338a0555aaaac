#include "moment_glioma/closures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace moment_glioma {

AnchorMoments anchor_moments(const SphereQuadrature& quadrature, const std::vector<double>& anchor) {
  if (anchor.size() != quadrature.size()) throw InputError("anchor values must match the quadrature nodes");
  AnchorMoments out;
  for (std::size_t i = 0; i < quadrature.size(); ++i) {
    const Vec3& v = quadrature.node(i);
    const double wf = quadrature.weight(i) * anchor[i];
    const Mat3 vv = v * v.transpose();
    out.m1 += wf * v;
    out.m2 += wf * vv;
    for (int k = 0; k < 3; ++k) out.m3[k] += (wf * v[k]) * vv;
  }
  return out;
}

AnchorMoments peanut_anchor_moments(const Mat3& fiber_pressure) {
  AnchorMoments out;
  out.m2 = fiber_pressure;
  return out;
}

ClosureResult p1f_closure(const MomentVector1& m, const AnchorMoments& anchor, double eps) {
  if (!(eps > 0.0)) throw InputError("P1F closure needs eps > 0");
  const Mat3 a_matrix = anchor.m2 - anchor.m1 * anchor.m1.transpose();
  Eigen::LLT<Mat3> llt(a_matrix);
  if (llt.info() != Eigen::Success ||
      Eigen::SelfAdjointEigenSolver<Mat3>(a_matrix, Eigen::EigenvaluesOnly).eigenvalues()[0] <=
          1e-14 * std::max(1.0, a_matrix.trace())) {
    throw NumericalError(
        "P1F closure: <v v F> - <v F><v F>^T is singular; the anchor density has flat support "
        "(contained in a plane)");
  }
  // c = eps b
  const Vec3 c = llt.solve(m.q - m.rho * anchor.m1);
  const double a = m.rho - c.dot(anchor.m1);
  ClosureResult out;
  out.P = a * anchor.m2;
  for (int k = 0; k < 3; ++k) out.P += c[k] * anchor.m3[k];
  out.multipliers = ClosureMultipliers{a, c / eps};
  return out;
}

ClosureResult m1f_closure(const MomentVector1& m, const SphereQuadrature& quadrature,
                          const std::vector<double>& anchor, double eps, const M1Options& options) {
  if (!(eps > 0.0)) throw InputError("M1F closure needs eps > 0");
  if (anchor.size() != quadrature.size()) throw InputError("anchor values must match the quadrature nodes");
  if (!(m.rho > 0.0)) throw NumericalError("M1F closure needs rho > 0");
  const Vec3 q_hat = m.q / m.rho;
  if (!(q_hat.norm() < 1.0)) {
    throw NumericalError("M1F closure: moment vector not strictly realizable, |q/rho| = " +
                         std::to_string(q_hat.norm()));
  }
  const std::size_t n = quadrature.size();
  std::vector<double> log_wf(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(anchor[i] > 0.0)) {
      throw InputError("M1F closure needs a strictly positive anchor; node " + std::to_string(i));
    }
    log_wf[i] = std::log(quadrature.weight(i) * anchor[i]);
  }

  // Dual objective phi(c) = log <exp(c.v) F> - c.q^ with c = eps b, evaluated with a
  // log-sum-exp shift. Returns phi and fills the normalised moments of the ansatz.
  std::vector<double> expo(n);
  auto evaluate = [&](const Vec3& c, Vec3* mean, Mat3* second, double* log_z) {
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      expo[i] = log_wf[i] + c.dot(quadrature.node(i));
      shift = std::max(shift, expo[i]);
    }
    double z = 0.0;
    Vec3 first = Vec3::Zero();
    Mat3 sec = Mat3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::exp(expo[i] - shift);
      const Vec3& v = quadrature.node(i);
      z += e;
      first += e * v;
      if (second != nullptr) sec += e * (v * v.transpose());
    }
    if (mean != nullptr) *mean = first / z;
    if (second != nullptr) *second = sec / z;
    const double lz = shift + std::log(z);
    if (log_z != nullptr) *log_z = lz;
    return lz - c.dot(q_hat);
  };

  Vec3 c = Vec3::Zero();
  Vec3 mean;
  Mat3 second;
  double log_z = 0.0;
  double phi = evaluate(c, &mean, &second, &log_z);
  double residual = (mean - q_hat).norm();
  int iteration = 0;
  for (; iteration < options.max_iterations && residual > options.tol; ++iteration) {
    const Vec3 gradient = mean - q_hat;
    const Mat3 hessian = second - mean * mean.transpose();
    Eigen::LDLT<Mat3> ldlt(hessian);
    Vec3 direction = -ldlt.solve(gradient);
    if (ldlt.info() != Eigen::Success || !direction.allFinite() || direction.dot(gradient) >= 0.0) {
      direction = -gradient;
    }
    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < options.max_line_search; ++ls) {
      const Vec3 trial = c + step * direction;
      Vec3 trial_mean;
      Mat3 trial_second;
      double trial_log_z = 0.0;
      const double trial_phi = evaluate(trial, &trial_mean, &trial_second, &trial_log_z);
      if (trial_phi <= phi + 1e-4 * step * gradient.dot(direction) ||
          (trial_mean - q_hat).norm() < residual) {
        c = trial;
        phi = trial_phi;
        mean = trial_mean;
        second = trial_second;
        log_z = trial_log_z;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    residual = (mean - q_hat).norm();
    if (!accepted) break;
  }
  if (!(residual <= options.tol)) {
    throw NumericalError("M1F closure did not converge after " + std::to_string(iteration) +
                         " iterations; last moment residual " + std::to_string(residual));
  }
  ClosureResult out;
  out.P = m.rho * second;
  out.multipliers = ClosureMultipliers{m.rho * std::exp(-log_z), c / eps};
  out.iterations = iteration;
  out.residual = residual;
  return out;
}

ClosureResult kershaw_closure(const MomentVector1& m, const Mat3& fiber_pressure) {
  ClosureResult out;
  if (m.rho == 0.0 && m.q.isZero(0.0)) return out;
  if (!(m.rho > 0.0)) throw NumericalError("Kershaw closure needs rho > 0");
  Vec3 q_hat = m.q / m.rho;
  const double norm = q_hat.norm();
  if (norm > 1.0 + 1e-12) {
    throw NumericalError("Kershaw closure: moment vector not realizable, |q/rho| = " + std::to_string(norm));
  }
  if (norm > 1.0) q_hat /= norm;
  out.P = m.rho * kershaw_normalized_pressure<double>(q_hat, fiber_pressure);
  return out;
}

RealizabilityMargins check_realizability(const MomentVector1& m, const Mat3& P) {
  if (!(m.rho > 0.0)) throw InputError("realizability check needs rho > 0");
  const Vec3 q_hat = m.q / m.rho;
  const Mat3 p_hat = P / m.rho;
  RealizabilityMargins out;
  out.first = 1.0 - q_hat.norm();
  const Mat3 centered = p_hat - q_hat * q_hat.transpose();
  out.second = Eigen::SelfAdjointEigenSolver<Mat3>(0.5 * (centered + centered.transpose()),
                                                   Eigen::EigenvaluesOnly)
                   .eigenvalues()[0];
  out.trace_error = std::abs(p_hat.trace() - 1.0);
  return out;
}

Mat4 kershaw_flux_jacobian(const MomentVector1& m, const Mat3& fiber_pressure, const Vec3& n) {
  const Vec3 q_hat = m.q_hat();
  if (q_hat.norm() > 1.0 + 1e-12) throw NumericalError("Kershaw Jacobian needs |q/rho| <= 1");
  const Vec3 dn = fiber_pressure * n;
  const double qn = q_hat.dot(n);
  Mat4 jac = Mat4::Zero();
  jac.block<1, 3>(0, 1) = n.transpose();
  jac.block<3, 1>(1, 0) = (1.0 + q_hat.squaredNorm()) * dn - qn * q_hat;
  jac.block<3, 3>(1, 1) = -2.0 * dn * q_hat.transpose() + qn * Mat3::Identity() + q_hat * n.transpose();
  return jac;
}

namespace {

Vec4 sorted_descending(Vec4 values) {
  std::sort(values.data(), values.data() + 4, [](double a, double b) { return a > b; });
  return values;
}

// Groups eigenvalues closer than 1e-3 and compares each group's size with the
// nullity of (J - mean I). Split Jordan blocks spread like eps^(1/k), hence the wide grouping.
bool has_defective_cluster(const Mat4& jac, const Eigen::Vector4cd& sorted) {
  const double scale = std::max(1.0, jac.cwiseAbs().maxCoeff());
  int start = 0;
  while (start < 4) {
    int end = start + 1;
    while (end < 4 && std::abs(sorted[end] - sorted[end - 1]) < 1e-3 * scale) ++end;
    const int size = end - start;
    if (size > 1) {
      std::complex<double> mean = 0.0;
      for (int k = start; k < end; ++k) mean += sorted[k];
      mean /= static_cast<double>(size);
      const Eigen::Matrix4cd shifted = jac.cast<std::complex<double>>() - mean * Eigen::Matrix4cd::Identity();
      Eigen::JacobiSVD<Eigen::Matrix4cd> svd(shifted);
      int nullity = 0;
      for (int k = 0; k < 4; ++k) nullity += svd.singularValues()[k] < 1e-7 * scale ? 1 : 0;
      if (nullity < size) return true;
    }
    start = end;
  }
  return false;
}

}  // namespace

SpectrumReport kershaw_spectrum(const MomentVector1& m, const Mat3& fiber_pressure, const Vec3& n) {
  const Mat4 jac = kershaw_flux_jacobian(m, fiber_pressure, n);
  Eigen::EigenSolver<Mat4> solver(jac, true);
  SpectrumReport report;
  Eigen::Vector4cd values = solver.eigenvalues();
  std::array<int, 4> order{0, 1, 2, 3};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return values[a].real() > values[b].real(); });
  Eigen::Matrix4cd vectors;
  for (int k = 0; k < 4; ++k) {
    report.eigenvalues[k] = values[order[k]];
    vectors.col(k) = solver.eigenvectors().col(order[k]).normalized();
    report.max_imag = std::max(report.max_imag, std::abs(values[order[k]].imag()));
    report.max_abs = std::max(report.max_abs, std::abs(values[order[k]]));
  }
  Eigen::JacobiSVD<Eigen::Matrix4cd> svd(vectors);
  report.min_singular_value = svd.singularValues()[3];
  report.diagonalizable =
      report.min_singular_value >= kDiagonalizabilityThreshold || !has_defective_cluster(jac, report.eigenvalues);

  const Vec3 q_hat = m.q_hat();
  const double q = q_hat.norm();
  const Vec4 real_sorted = report.eigenvalues.real();

  const Vec3 q_star = q > 0.0 ? Vec3(q_hat / q) : Vec3::Zero();
  const bool parallel = q == 0.0 || n.cross(q_star).norm() < 1e-10;
  const bool perpendicular = q > 0.0 && std::abs(n.dot(q_star)) < 1e-10;
  if (parallel) {
    report.configuration = SpectrumConfiguration::Parallel;
    const double sign = (q == 0.0 || n.dot(q_star) > 0.0) ? 1.0 : -1.0;
    const double s11 = n.dot(fiber_pressure * n);
    const double g_printed = s11 * s11 * q * q + s11 * (q - 1.0) * (q - 1.0) + (1.0 - q * q);
    const double g_derived = s11 * s11 * q * q + s11 * (1.0 - q * q);
    const double c_printed = 1.0 - s11 * q;
    const double c_derived = q * (1.0 - s11);
    report.closed_form_printed = sorted_descending(
        sign * Vec4(q, q, c_printed + std::sqrt(std::max(0.0, g_printed)),
                    c_printed - std::sqrt(std::max(0.0, g_printed))));
    report.closed_form_derived = sorted_descending(
        sign * Vec4(q, q, c_derived + std::sqrt(std::max(0.0, g_derived)),
                    c_derived - std::sqrt(std::max(0.0, g_derived))));
  } else if (perpendicular) {
    report.configuration = SpectrumConfiguration::Perpendicular;
    const double s12 = q_star.dot(fiber_pressure * n);
    const double s22 = n.dot(fiber_pressure * n);
    const double h = q * q * s12 * s12 + s22 * (1.0 - q * q);
    const Vec4 closed = sorted_descending(
        Vec4(0.0, 0.0, -q * s12 + std::sqrt(std::max(0.0, h)), -q * s12 - std::sqrt(std::max(0.0, h))));
    report.closed_form_printed = closed;
    report.closed_form_derived = closed;
  }
  if (report.closed_form_printed) {
    report.residual_printed = (real_sorted - *report.closed_form_printed).cwiseAbs().maxCoeff();
    report.residual_derived = (real_sorted - *report.closed_form_derived).cwiseAbs().maxCoeff();
  }
  return report;
}

}  // namespace moment_glioma
