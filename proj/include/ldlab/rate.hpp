// Rate functions: I1 for occupation measures of the single-scale family and
// I2 for (slow path, space-time measure) pairs of the slow-fast family.
#pragma once

#include "ldlab/measures.hpp"
#include "ldlab/models.hpp"
#include "ldlab/path.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

namespace ldlab {

struct RateResult {
  double value = 0.0;  // +inf when infeasible
  bool feasible = true;
  double residual_norm = 0.0;
  /// Minimal-norm control at the quadrature nodes (present iff feasible).
  std::optional<std::vector<Vec>> witness_control;
  std::vector<double> witness_times;
  double quadrature_step = 0.0;
  std::string diagnostics;

  nlohmann::json to_json() const {
    nlohmann::json j{{"feasible", feasible}, {"residual_norm", residual_norm}};
    j["value"] = feasible ? nlohmann::json(value) : nlohmann::json("inf");
    if (quadrature_step > 0.0) j["quadrature_step"] = quadrature_step;
    if (!diagnostics.empty()) j["diagnostics"] = diagnostics;
    return j;
  }

  /// CSV "t,v_1..v_k" of the witness control.
  void write_control_csv(std::ostream& os) const {
    if (!witness_control || witness_control->empty()) return;
    const auto& v = *witness_control;
    os << "t";
    for (Eigen::Index c = 0; c < v.front().size(); ++c) os << ",v_" << (c + 1);
    os << '\n';
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) {
      os << witness_times[i];
      for (Eigen::Index c = 0; c < v[i].size(); ++c) os << ',' << v[i](c);
      os << '\n';
    }
  }
};

/// I1(gamma) = 1/2 sum_i w_i |sigma^T(z_i) grad phi(z_i)|^2
inline RateResult eval_I1(const SingleScaleModel& model, const DiscreteMeasure& gamma) {
  if (gamma.dim() != model.d) throw InvalidInput("eval_I1: measure dimension does not match the model");
  if (!gamma.is_probability(1e-9)) throw InvalidInput("eval_I1: gamma must be a probability measure");
  RateResult r;
  r.value = 0.5 * gamma.integrate([&](const Vec& z) {
    return (model.sigma(z).transpose() * model.gradient(z)).squaredNorm();
  });
  return r;
}

namespace detail {

/// Trapezoid weights on the nodes of a uniform grid.
inline double node_weight(const TimeGrid& grid, std::size_t k) {
  return (k == 0 || k == grid.steps()) ? 0.5 * grid.dt() : grid.dt();
}

/// Derivative at node k: central differences inside, second-order one-sided
/// at the ends (first order when there is a single step).
inline Vec path_derivative(const Path& xi, std::size_t k) {
  const std::size_t n = xi.grid.steps();
  const double h = xi.grid.dt();
  const auto& s = xi.states;
  if (n == 1) return (s[1] - s[0]) / h;
  if (k == 0) return (-3.0 * s[0] + 4.0 * s[1] - s[2]) / (2.0 * h);
  if (k == n) return (3.0 * s[n] - 4.0 * s[n - 1] + s[n - 2]) / (2.0 * h);
  return (s[k + 1] - s[k - 1]) / (2.0 * h);
}

inline void check_pair(const MultiscaleModel& model, const Path& xi, const SpaceTimeMeasure& nu, const char* what) {
  if (xi.dim() != model.m) throw InvalidInput(std::string(what) + ": path dimension does not match the model");
  if (nu.dim() != model.d) throw InvalidInput(std::string(what) + ": measure dimension does not match the model");
  if (std::abs(xi.grid.start()) > 1e-12) throw InvalidInput(std::string(what) + ": path must start at t = 0");
  if (std::abs(xi.grid.horizon() - nu.horizon()) > 1e-9 * std::max(1.0, nu.horizon()))
    throw InvalidInput(std::string(what) + ": horizon mismatch");
}

}  // namespace detail

/// 1/2 int_0^T int |grad_y U(xi(s), y)|^2 nu_s(dy) ds by node quadrature.
inline double static_cost(const MultiscaleModel& model, const Path& xi, const SpaceTimeMeasure& nu) {
  detail::check_pair(model, xi, nu, "static_cost");
  double acc = 0.0;
  for (std::size_t k = 0; k <= xi.grid.steps(); ++k) {
    const Vec& x = xi.states[k];
    const auto& slice = nu.slice_at(xi.grid.time(k));
    acc += detail::node_weight(xi.grid, k) *
           slice.integrate([&](const Vec& y) { return model.gradient_y(x, y).squaredNorm(); });
  }
  return 0.5 * acc;
}

/// I2(xi, nu): minimal-norm v with alpha(xi) v = xi' - int b(xi, y) nu_t(dy)
/// at each node (ridge-regularized normal equations), feasibility judged by
/// the residual |alpha v - r| <= tol (1 + |r|).
inline RateResult eval_I2(const MultiscaleModel& model, const Path& xi, const SpaceTimeMeasure& nu,
                          double tol = 1e-6) {
  detail::check_pair(model, xi, nu, "eval_I2");
  if (xi.grid.steps() < 1) throw InvalidInput("eval_I2: path needs at least 2 grid points");
  if ((xi.front() - model.x0).norm() > 1e-9 * (1.0 + model.x0.norm()))
    throw InvalidInput("eval_I2: path must start at the model's x0");

  RateResult out;
  out.quadrature_step = xi.grid.dt();
  std::vector<Vec> controls;
  double control_energy = 0.0, worst = 0.0;
  std::size_t worst_node = 0;
  bool feasible = true;
  for (std::size_t k = 0; k <= xi.grid.steps(); ++k) {
    const double t = xi.grid.time(k);
    const Vec& x = xi.states[k];
    const auto& slice = nu.slice_at(t);
    Vec drift = Vec::Zero(model.m);
    for (const auto& atom : slice.atoms()) drift += atom.weight * model.b(x, atom.location);
    const Vec r = detail::path_derivative(xi, k) - drift;
    const Mat a = model.alpha(x);
    const Mat normal = a.transpose() * a + 1e-12 * Mat::Identity(model.k, model.k);
    const Vec v = normal.ldlt().solve(a.transpose() * r);
    const double res = (a * v - r).norm();
    const double rel = res / (1.0 + r.norm());
    if (res > worst) worst = res;
    if (rel > tol && feasible) {
      worst_node = k;
      feasible = false;
    }
    controls.push_back(v);
    control_energy += detail::node_weight(xi.grid, k) * v.squaredNorm();
  }
  out.residual_norm = worst;
  out.feasible = feasible;
  if (!feasible) {
    out.value = std::numeric_limits<double>::infinity();
    std::ostringstream os;
    os << "alpha v = r has no solution: first failing node " << worst_node << " (t = " << xi.grid.time(worst_node)
       << "), largest residual " << worst;
    out.diagnostics = os.str();
    return out;
  }
  out.value = 0.5 * control_energy + static_cost(model, xi, nu);
  out.witness_times.reserve(controls.size());
  for (std::size_t k = 0; k <= xi.grid.steps(); ++k) out.witness_times.push_back(xi.grid.time(k));
  out.witness_control = std::move(controls);
  return out;
}

}  // namespace ldlab
