// Coefficient bundles for the single-scale and slow-fast SDE families, noise
// schedules s(eps), built-in example models and grid-based assumption checks.
#pragma once

#include "ldlab/core.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace ldlab {

// ---------------------------------------------------------------------------
// Noise schedules

class NoiseSchedule {
 public:
  enum class Form { kPower, kLogInv, kTable, kConstant };

  /// s(eps) = eps^a
  static NoiseSchedule power(double a) {
    if (!(a > 0.0)) throw InvalidInput("NoiseSchedule::power: exponent must be positive");
    NoiseSchedule s;
    s.form_ = Form::kPower;
    s.exponent_ = a;
    return s;
  }

  /// s(eps) = (log(1/eps))^(-1/2)
  static NoiseSchedule log_inv() {
    NoiseSchedule s;
    s.form_ = Form::kLogInv;
    return s;
  }

  /// Explicit (eps, s) pairs; evaluation at any other eps is an error.
  static NoiseSchedule table(std::vector<std::pair<double, double>> pairs) {
    if (pairs.empty()) throw InvalidInput("NoiseSchedule::table: no entries");
    for (const auto& [e, v] : pairs)
      if (!(e > 0.0) || !(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("NoiseSchedule::table: bad entry");
    NoiseSchedule s;
    s.form_ = Form::kTable;
    s.table_ = std::move(pairs);
    return s;
  }

  /// Same s for every eps. constant(0) switches the noise off.
  static NoiseSchedule constant(double value) {
    if (!(value >= 0.0) || !std::isfinite(value)) throw InvalidInput("NoiseSchedule::constant: bad value");
    NoiseSchedule s;
    s.form_ = Form::kConstant;
    s.exponent_ = value;
    return s;
  }

  static NoiseSchedule off() { return constant(0.0); }

  /// "power:0.25", "log_inv", "constant:0", "table:0.01=0.3,0.005=0.25".
  static NoiseSchedule parse(const std::string& text) {
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
    try {
      if (kind == "power") return power(std::stod(arg));
      if (kind == "log_inv") return log_inv();
      if (kind == "constant" || kind == "off") return constant(arg.empty() ? 0.0 : std::stod(arg));
      if (kind == "table") {
        std::vector<std::pair<double, double>> pairs;
        std::stringstream ss(arg);
        std::string item;
        while (std::getline(ss, item, ',')) {
          const auto eq = item.find('=');
          if (eq == std::string::npos) throw ConfigError("noise schedule table entry needs eps=s: " + item);
          pairs.emplace_back(std::stod(item.substr(0, eq)), std::stod(item.substr(eq + 1)));
        }
        return table(std::move(pairs));
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad noise schedule: " + text);
    }
    throw ConfigError("unknown noise schedule: " + text);
  }

  Form form() const noexcept { return form_; }

  double operator()(double eps) const {
    if (!(eps > 0.0)) throw InvalidInput("NoiseSchedule: eps must be positive");
    switch (form_) {
      case Form::kPower:
        return std::pow(eps, exponent_);
      case Form::kLogInv:
        if (!(eps < 1.0)) throw InvalidInput("NoiseSchedule::log_inv: eps must be < 1");
        return 1.0 / std::sqrt(std::log(1.0 / eps));
      case Form::kConstant:
        return exponent_;
      case Form::kTable:
        for (const auto& [e, v] : table_)
          if (std::abs(e - eps) <= 1e-12 * eps) return v;
        throw InvalidInput("NoiseSchedule: eps " + std::to_string(eps) + " not in table");
    }
    return 0.0;
  }

  std::string describe() const {
    std::ostringstream os;
    switch (form_) {
      case Form::kPower: os << "power:" << exponent_; break;
      case Form::kLogInv: os << "log_inv"; break;
      case Form::kConstant: os << "constant:" << exponent_; break;
      case Form::kTable:
        os << "table:";
        for (std::size_t i = 0; i < table_.size(); ++i) os << (i ? "," : "") << table_[i].first << '=' << table_[i].second;
        break;
    }
    return os.str();
  }

 private:
  Form form_ = Form::kConstant;
  double exponent_ = 0.0;
  std::vector<std::pair<double, double>> table_;
};

// ---------------------------------------------------------------------------
// Finite differences (step 1e-5 by default)

using ScalarField = std::function<double(const Vec&)>;
using VectorField = std::function<Vec(const Vec&)>;
using MatrixField = std::function<Mat(const Vec&)>;

inline Vec fd_gradient(const ScalarField& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Vec p = x, q = x;
    p(c) += h;
    q(c) -= h;
    g(c) = (f(p) - f(q)) / (2.0 * h);
  }
  return g;
}

/// J(i, c) = d F_i / d x_c
inline Mat fd_jacobian(const VectorField& F, const Vec& x, double h = 1e-5) {
  const Vec f0 = F(x);
  Mat J(f0.size(), x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Vec p = x, q = x;
    p(c) += h;
    q(c) -= h;
    J.col(c) = (F(p) - F(q)) / (2.0 * h);
  }
  return J;
}

// ---------------------------------------------------------------------------
// Single-scale model:  dY = -(1/eps) psi(Y) dt + (s/sqrt(eps)) sigma(Y) dB

struct SingleScaleModel {
  std::string name = "custom";
  int d = 1;
  int r = 1;
  VectorField psi;
  MatrixField sigma;  // d x r
  ScalarField phi;
  VectorField grad_phi;  // optional; finite differences of phi when empty
  MatrixField hess_phi;  // optional; finite differences of the gradient when empty
  Vec y0;

  // Optional strongly convex potential with psi = grad phi_tilde. When set,
  // the Lyapunov clause is checked with the canonical quadratic-type V_x.
  bool strongly_convex = false;
  ScalarField phi_tilde;
  VectorField grad_phi_tilde;

  Vec gradient(const Vec& y) const { return grad_phi ? grad_phi(y) : fd_gradient(phi, y); }

  Mat hessian(const Vec& y) const {
    if (hess_phi) return hess_phi(y);
    return fd_jacobian([this](const Vec& z) { return gradient(z); }, y, 1e-4);
  }

  /// a = sigma sigma^T
  Mat diffusion(const Vec& y) const {
    const Mat s = sigma(y);
    return s * s.transpose();
  }

  void validate() const {
    check_dim(d, "SingleScaleModel.d");
    check_dim(r, "SingleScaleModel.r");
    if (!psi || !sigma || !phi) throw InvalidInput("SingleScaleModel: psi, sigma and phi are required");
    if (y0.size() != d) throw InvalidInput("SingleScaleModel: y0 has wrong dimension");
    const Mat s = sigma(y0);
    if (s.rows() != d || s.cols() != r) throw InvalidInput("SingleScaleModel: sigma must be d x r");
    if (psi(y0).size() != d) throw InvalidInput("SingleScaleModel: psi must map to R^d");
  }
};

/// V_x(y) = a(x+y) grad phi(x+y) - a(x) grad phi(x)
inline Vec stability_field_single(const SingleScaleModel& model, const Vec& x, const Vec& y) {
  if (x.size() != model.d || y.size() != model.d) throw InvalidInput("stability_field_single: dimension mismatch");
  const Vec z = x + y;
  return model.diffusion(z) * model.gradient(z) - model.diffusion(x) * model.gradient(x);
}

// ---------------------------------------------------------------------------
// Slow-fast model:
//   dX = b(X,Y) dt + s sqrt(eps) alpha(X) dW
//   dY = -(1/eps) grad_y U(X,Y) dt + (s/sqrt(eps)) dB

struct MultiscaleModel {
  std::string name = "custom";
  int m = 1;  // slow dimension
  int d = 1;  // fast dimension
  int k = 1;  // slow noise dimension
  std::function<Vec(const Vec&, const Vec&)> b;
  MatrixField alpha;  // m x k
  std::function<double(const Vec&, const Vec&)> U;
  std::function<Vec(const Vec&, const Vec&)> grad_y_U;  // optional
  std::function<Vec(const Vec&, const Vec&)> grad_x_U;  // optional
  VectorField theta;
  Vec x0, y0;

  Vec gradient_y(const Vec& x, const Vec& y) const {
    if (grad_y_U) return grad_y_U(x, y);
    return fd_gradient([&](const Vec& z) { return U(x, z); }, y);
  }

  Vec gradient_x(const Vec& x, const Vec& y) const {
    if (grad_x_U) return grad_x_U(x, y);
    return fd_gradient([&](const Vec& z) { return U(z, y); }, x);
  }

  void validate() const {
    check_dim(m, "MultiscaleModel.m");
    check_dim(d, "MultiscaleModel.d");
    check_dim(k, "MultiscaleModel.k");
    if (!b || !alpha || !U || !theta) throw InvalidInput("MultiscaleModel: b, alpha, U and theta are required");
    if (x0.size() != m || y0.size() != d) throw InvalidInput("MultiscaleModel: initial states have wrong dimension");
    const Mat a = alpha(x0);
    if (a.rows() != m || a.cols() != k) throw InvalidInput("MultiscaleModel: alpha must be m x k");
    if (b(x0, y0).size() != m) throw InvalidInput("MultiscaleModel: b must map to R^m");
    if (theta(x0).size() != d) throw InvalidInput("MultiscaleModel: theta must map to R^d");
  }
};

/// V_{x,z}(u) = grad_y U(x, u + z) - grad_y U(x, z)
inline Vec stability_field_fast(const MultiscaleModel& model, const Vec& x, const Vec& z, const Vec& u) {
  if (x.size() != model.m || z.size() != model.d || u.size() != model.d)
    throw InvalidInput("stability_field_fast: dimension mismatch");
  return model.gradient_y(x, u + z) - model.gradient_y(x, z);
}

// ---------------------------------------------------------------------------
// Built-in models

using Params = std::map<std::string, double>;

namespace detail {

inline double param(const Params& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

inline void reject_unknown(const Params& p, std::initializer_list<const char*> allowed, const std::string& model) {
  for (const auto& [key, value] : p) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("model " + model + ": unknown parameter '" + key + "'");
  }
}

}  // namespace detail

/// phi = |y|^2 / 2, sigma = Id, psi = y.  Params: d (1), y0 (1).
inline SingleScaleModel quadratic_model(int d = 1, double y0 = 1.0) {
  check_dim(d, "quadratic model");
  SingleScaleModel m;
  m.name = "quadratic";
  m.d = m.r = d;
  m.psi = [](const Vec& y) { return Vec(y); };
  m.sigma = [d](const Vec&) { return Mat(Mat::Identity(d, d)); };
  m.phi = [](const Vec& y) { return 0.5 * y.squaredNorm(); };
  m.grad_phi = [](const Vec& y) { return Vec(y); };
  m.hess_phi = [d](const Vec&) { return Mat(Mat::Identity(d, d)); };
  m.y0 = constant_vec(d, y0);
  m.strongly_convex = true;
  m.phi_tilde = m.phi;
  m.grad_phi_tilde = m.grad_phi;
  return m;
}

/// One-dimensional multiplicative noise: psi(y) = y,
/// sigma(y) = (c1 y^2 + c2) / (1 + y^2), phi(x) = int_0^x y / sigma(y)^2 dy.
inline SingleScaleModel multiplicative1d_model(double c1 = 1.0, double c2 = 2.0, double y0 = 1.0) {
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw InvalidInput("multiplicative1d: c1 and c2 must be positive");
  SingleScaleModel m;
  m.name = "multiplicative1d";
  m.d = m.r = 1;
  auto sig = [c1, c2](double y) { return (c1 * y * y + c2) / (1.0 + y * y); };
  m.psi = [](const Vec& y) { return Vec(y); };
  m.sigma = [sig](const Vec& y) { return Mat(Mat::Constant(1, 1, sig(y(0)))); };
  // substitution q = c1 y^2 + c2 gives a closed form
  const double kk = c1 - c2;
  auto antiderivative = [c1, kk](double q) { return (q + 2.0 * kk * std::log(q) - kk * kk / q) / (2.0 * c1 * c1 * c1); };
  m.phi = [=](const Vec& y) { return antiderivative(c1 * y(0) * y(0) + c2) - antiderivative(c2); };
  m.grad_phi = [sig](const Vec& y) {
    const double s = sig(y(0));
    return vec({y(0) / (s * s)});
  };
  m.hess_phi = [sig, kk](const Vec& y) {
    const double x = y(0), s = sig(x);
    const double ds = 2.0 * x * kk / ((1.0 + x * x) * (1.0 + x * x));
    return Mat(Mat::Constant(1, 1, 1.0 / (s * s) - 2.0 * x * ds / (s * s * s)));
  };
  m.y0 = vec({y0});
  m.strongly_convex = true;
  m.phi_tilde = [](const Vec& y) { return 0.5 * y.squaredNorm(); };
  m.grad_phi_tilde = [](const Vec& y) { return Vec(y); };
  return m;
}

/// phi = y^4 / 4 per coordinate, sigma = Id (violates the Hessian bound).
inline SingleScaleModel quartic_model(int d = 1, double y0 = 1.0) {
  SingleScaleModel m = quadratic_model(d, y0);
  m.name = "quartic";
  m.psi = [](const Vec& y) { return Vec(y.array().cube().matrix()); };
  m.phi = [](const Vec& y) { return 0.25 * y.array().pow(4).sum(); };
  m.grad_phi = m.psi;
  m.hess_phi = [](const Vec& y) { return Mat((3.0 * y.array().square()).matrix().asDiagonal()); };
  m.strongly_convex = false;
  m.phi_tilde = nullptr;
  m.grad_phi_tilde = nullptr;
  return m;
}

/// U = |y - theta(x)|^2 / 2 with theta(x) = slope * x, b = y - x, alpha = Id,
/// m = d = k = dim, x0 = 1, y0 = theta(x0).
inline MultiscaleModel tracking_model(double slope = 0.5, int dim = 1, double x0 = 1.0) {
  check_dim(dim, "tracking model");
  MultiscaleModel m;
  m.name = "tracking";
  m.m = m.d = m.k = dim;
  m.theta = [slope](const Vec& x) { return Vec(slope * x); };
  m.U = [slope](const Vec& x, const Vec& y) { return 0.5 * (y - slope * x).squaredNorm(); };
  m.grad_y_U = [slope](const Vec& x, const Vec& y) { return Vec(y - slope * x); };
  m.grad_x_U = [slope](const Vec& x, const Vec& y) { return Vec(-slope * (y - slope * x)); };
  m.b = [](const Vec& x, const Vec& y) { return Vec(y - x); };
  m.alpha = [dim](const Vec&) { return Mat(Mat::Identity(dim, dim)); };
  m.x0 = constant_vec(dim, x0);
  m.y0 = m.theta(m.x0);
  return m;
}

using AnyModel = std::variant<SingleScaleModel, MultiscaleModel>;

inline bool is_single_builtin(const std::string& name) {
  return name == "quadratic" || name == "multiplicative1d" || name == "quartic";
}

inline SingleScaleModel builtin_single(const std::string& name, const Params& p = {}) {
  if (name == "quadratic") {
    detail::reject_unknown(p, {"d", "y0"}, name);
    return quadratic_model(static_cast<int>(detail::param(p, "d", 1)), detail::param(p, "y0", 1.0));
  }
  if (name == "multiplicative1d") {
    detail::reject_unknown(p, {"c1", "c2", "y0"}, name);
    return multiplicative1d_model(detail::param(p, "c1", 1.0), detail::param(p, "c2", 2.0), detail::param(p, "y0", 1.0));
  }
  if (name == "quartic") {
    detail::reject_unknown(p, {"d", "y0"}, name);
    return quartic_model(static_cast<int>(detail::param(p, "d", 1)), detail::param(p, "y0", 1.0));
  }
  throw ConfigError("unknown single-scale model: " + name);
}

inline MultiscaleModel builtin_multiscale(const std::string& name, const Params& p = {}) {
  if (name == "tracking") {
    detail::reject_unknown(p, {"slope", "dim", "x0"}, name);
    return tracking_model(detail::param(p, "slope", 0.5), static_cast<int>(detail::param(p, "dim", 1)),
                          detail::param(p, "x0", 1.0));
  }
  throw ConfigError("unknown multiscale model: " + name);
}

inline AnyModel builtin(const std::string& name, const Params& p = {}) {
  if (is_single_builtin(name)) return builtin_single(name, p);
  return builtin_multiscale(name, p);
}

// ---------------------------------------------------------------------------
// Assumption checks on a grid

enum class ClauseStatus { kPass, kFail, kNotChecked };

inline const char* to_string(ClauseStatus s) {
  switch (s) {
    case ClauseStatus::kPass: return "pass";
    case ClauseStatus::kFail: return "fail";
    case ClauseStatus::kNotChecked: return "not checked";
  }
  return "?";
}

struct ClauseResult {
  std::string id;
  std::string description;
  ClauseStatus status = ClauseStatus::kNotChecked;
  double value = 0.0;      // measured quantity (constant, ratio, residual...)
  double threshold = 0.0;  // what it was compared against
  std::vector<double> witness;  // worst grid point
  std::string note;
};

struct AssumptionReport {
  std::vector<ClauseResult> clauses;

  /// True when no checked clause failed.
  bool passed() const {
    for (const auto& c : clauses)
      if (c.status == ClauseStatus::kFail) return false;
    return true;
  }

  const ClauseResult& clause(const std::string& id) const {
    for (const auto& c : clauses)
      if (c.id == id) return c;
    throw InvalidInput("no clause " + id);
  }

  nlohmann::json to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& c : clauses)
      out.push_back({{"id", c.id},
                     {"description", c.description},
                     {"status", ldlab::to_string(c.status)},
                     {"value", c.value},
                     {"threshold", c.threshold},
                     {"witness", c.witness},
                     {"note", c.note}});
    return {{"passed", passed()}, {"clauses", out}};
  }
};

/// Box [lo, hi]^dim sampled with `points` per axis (seeded random points when
/// the lattice would exceed max_points).
struct CheckGrid {
  double lo = -10.0;
  double hi = 10.0;
  int points = 21;
  std::size_t max_points = 20000;
  std::uint64_t seed = 7;

  // Clause tolerances.
  double growth_ratio = 1.5;       // allowed sup(full box) / sup(half box)
  double consistency_tol = 1e-8;   // psi = a grad phi, grad_y U(x, theta(x)) = 0
  double zero_tol = 1e-10;         // grad phi(0) = 0
  double stability_horizon = 50.0;
  double stability_tol = 1e-3;
  int stability_starts = 16;
};

namespace detail {

struct GridPoints {
  std::vector<Vec> pts;
  double spacing;
  double center;
  double half_width;

  bool in_half(const Vec& p) const {
    for (Eigen::Index c = 0; c < p.size(); ++c)
      if (std::abs(p(c) - center) > 0.5 * half_width + 1e-12) return false;
    return true;
  }
  bool in_box(const Vec& p) const {
    for (Eigen::Index c = 0; c < p.size(); ++c)
      if (std::abs(p(c) - center) > half_width + 1e-12) return false;
    return true;
  }
};

inline GridPoints make_grid(const CheckGrid& g, int dim) {
  if (g.points < 2 || !(g.hi > g.lo)) throw InvalidInput("CheckGrid: need hi > lo and at least 2 points");
  GridPoints out;
  out.spacing = (g.hi - g.lo) / (g.points - 1);
  out.center = 0.5 * (g.lo + g.hi);
  out.half_width = 0.5 * (g.hi - g.lo);
  const double total = std::pow(static_cast<double>(g.points), dim);
  if (total <= static_cast<double>(g.max_points)) {
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    while (true) {
      Vec p(dim);
      for (int c = 0; c < dim; ++c) p(c) = g.lo + idx[static_cast<std::size_t>(c)] * out.spacing;
      out.pts.push_back(p);
      int c = 0;
      while (c < dim && ++idx[static_cast<std::size_t>(c)] == g.points) idx[static_cast<std::size_t>(c++)] = 0;
      if (c == dim) break;
    }
  } else {
    RandomStream rng(g.seed, 0, Channel::kAuxiliary);
    for (std::size_t i = 0; i < g.max_points; ++i) {
      Vec p(dim);
      for (int c = 0; c < dim; ++c) p(c) = g.lo + (g.hi - g.lo) * rng.uniform();
      out.pts.push_back(p);
    }
  }
  return out;
}

inline std::vector<double> to_vector(const Vec& v) { return {v.data(), v.data() + v.size()}; }

/// Running maximum over the full box and over the half box.
struct GrowthTracker {
  double full = 0.0, half = 0.0;
  Vec witness;
  bool non_finite = false;
  Vec bad_point;

  void add(double value, const Vec& where, bool in_half) {
    if (!std::isfinite(value)) {
      if (!non_finite) bad_point = where;
      non_finite = true;
      return;
    }
    if (value > full || witness.size() == 0) {
      full = std::max(full, value);
      witness = where;
    }
    if (in_half) half = std::max(half, value);
  }

  ClauseResult result(std::string id, std::string description, double max_ratio) const {
    ClauseResult r;
    r.id = std::move(id);
    r.description = std::move(description);
    r.threshold = max_ratio;
    if (non_finite) {
      r.status = ClauseStatus::kFail;
      r.witness = to_vector(bad_point);
      r.note = "non-finite evaluation";
      return r;
    }
    r.witness = to_vector(witness);
    if (half <= 1e-12) {
      r.value = full <= 1e-12 ? 1.0 : std::numeric_limits<double>::infinity();
    } else {
      r.value = full / half;
    }
    r.status = r.value <= max_ratio ? ClauseStatus::kPass : ClauseStatus::kFail;
    std::ostringstream os;
    os << "sup over box " << full << ", over half box " << half;
    r.note = os.str();
    return r;
  }
};

/// Growth test for a Lipschitz constant: difference quotients along each axis.
template <typename F>
ClauseResult lipschitz_clause(const std::string& id, const std::string& description, const GridPoints& grid,
                              F&& f, double max_ratio) {
  GrowthTracker t;
  for (const Vec& p : grid.pts) {
    const auto fp = f(p);
    for (Eigen::Index c = 0; c < p.size(); ++c) {
      Vec q = p;
      q(c) += grid.spacing;
      if (!grid.in_box(q)) continue;
      const auto fq = f(q);
      const double quotient = (fq - fp).norm() / grid.spacing;
      t.add(quotient, p, grid.in_half(p) && grid.in_half(q));
    }
  }
  return t.result(id, description, max_ratio);
}

template <typename F>
ClauseResult bounded_clause(const std::string& id, const std::string& description, const GridPoints& grid, F&& f,
                            double max_ratio) {
  GrowthTracker t;
  for (const Vec& p : grid.pts) t.add(f(p), p, grid.in_half(p));
  return t.result(id, description, max_ratio);
}

/// Integrates u' = -field(u) with step-doubling RK4 up to `horizon`.
/// Returns the final state (non-finite on blow-up).
inline Vec integrate_gradient_flow(const VectorField& field, Vec u, double horizon) {
  double t = 0.0, dt = 0.01;
  auto rk4 = [&](const Vec& s, double h) {
    const Vec k1 = -field(s);
    const Vec k2 = -field(s + 0.5 * h * k1);
    const Vec k3 = -field(s + 0.5 * h * k2);
    const Vec k4 = -field(s + h * k3);
    return Vec(s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4));
  };
  int guard = 0;
  while (t < horizon && guard++ < 2000000) {
    const double h = std::min(dt, horizon - t);
    const Vec full = rk4(u, h);
    const Vec half = rk4(rk4(u, 0.5 * h), 0.5 * h);
    if (!half.allFinite()) {
      if (h < 1e-9) return half;
      dt = 0.25 * h;
      continue;
    }
    const double err = (full - half).norm();
    if (err > 1e-8 * (1.0 + half.norm()) && h > 1e-9) {
      dt = 0.5 * h;
      continue;
    }
    u = half;
    t += h;
    if (err < 1e-10 * (1.0 + half.norm())) dt = std::min(2.0 * dt, 0.5);
  }
  return u;
}

/// Sampled (base point, start) pairs for the stability clauses.
inline std::vector<std::pair<Vec, Vec>> stability_starts(const CheckGrid& g, int base_dim, int dim) {
  RandomStream rng(g.seed, 1, Channel::kAuxiliary);
  std::vector<std::pair<Vec, Vec>> out;
  for (int i = 0; i < g.stability_starts; ++i) {
    Vec base(base_dim), start(dim);
    for (int c = 0; c < base_dim; ++c) base(c) = g.lo + (g.hi - g.lo) * rng.uniform();
    for (int c = 0; c < dim; ++c) start(c) = (g.lo + (g.hi - g.lo) * rng.uniform()) * 0.5;
    if (i == 0) base.setZero();
    out.emplace_back(base, start);
  }
  return out;
}

inline ClauseResult stability_clause(const std::string& id, const std::string& description, const CheckGrid& g,
                                     const std::vector<std::pair<Vec, Vec>>& starts,
                                     const std::function<Vec(const Vec&, const Vec&)>& field) {
  ClauseResult r;
  r.id = id;
  r.description = description;
  r.threshold = g.stability_tol;
  double worst = 0.0;
  for (const auto& [base, start] : starts) {
    const Vec end = integrate_gradient_flow([&](const Vec& u) { return field(base, u); }, start, g.stability_horizon);
    const double n = end.allFinite() ? end.norm() : std::numeric_limits<double>::infinity();
    if (n >= worst) {
      worst = n;
      Vec w(base.size() + start.size());
      w << base, start;
      r.witness = to_vector(w);
    }
  }
  r.value = worst;
  r.status = worst < g.stability_tol ? ClauseStatus::kPass : ClauseStatus::kFail;
  std::ostringstream os;
  os << "largest |u(" << g.stability_horizon << ")| over " << starts.size() << " starts (witness = base, start)";
  r.note = os.str();
  return r;
}

}  // namespace detail

inline AssumptionReport check_single(const SingleScaleModel& model, const CheckGrid& g = {}) {
  model.validate();
  const auto grid = detail::make_grid(g, model.d);
  AssumptionReport report;
  using detail::to_vector;

  // (1) nondegeneracy: c_a = min eigenvalue of a over the grid
  {
    ClauseResult r{"1-nondegenerate", "a = sigma sigma^T uniformly nondegenerate (c_a > 0)"};
    double ca = std::numeric_limits<double>::infinity();
    for (const Vec& p : grid.pts) {
      const Mat a = model.diffusion(p);
      const double e = a.allFinite() ? Eigen::SelfAdjointEigenSolver<Mat>(a).eigenvalues().minCoeff()
                                     : -std::numeric_limits<double>::infinity();
      if (!(e >= ca)) {
        ca = e;
        r.witness = to_vector(p);
      }
    }
    r.value = ca;
    r.threshold = 1e-10;
    r.status = ca > r.threshold ? ClauseStatus::kPass : ClauseStatus::kFail;
    r.note = "c_a = min eigenvalue of a on the grid";
    report.clauses.push_back(r);
  }
  report.clauses.push_back(detail::bounded_clause(
      "1-sigma-bounded", "sigma bounded (growth test)", grid,
      [&](const Vec& p) { return model.sigma(p).norm(); }, g.growth_ratio));
  report.clauses.push_back(detail::lipschitz_clause(
      "1-sigma-lipschitz", "sigma Lipschitz (growth test on difference quotients)", grid,
      [&](const Vec& p) {
        const Mat s = model.sigma(p);
        return Eigen::Map<const Eigen::VectorXd>(s.data(), s.size()).eval();
      },
      g.growth_ratio));

  // (2a) psi = a grad phi
  {
    ClauseResult r{"2a-consistency", "psi = a grad phi"};
    double worst = 0.0;
    for (const Vec& p : grid.pts) {
      const Vec psi = model.psi(p);
      const double res = (psi - model.diffusion(p) * model.gradient(p)).norm() / std::max(1.0, psi.norm());
      if (!(res <= worst)) {
        worst = std::isfinite(res) ? std::max(worst, res) : std::numeric_limits<double>::infinity();
        r.witness = to_vector(p);
      }
    }
    r.value = worst;
    r.threshold = g.consistency_tol;
    r.status = worst <= r.threshold ? ClauseStatus::kPass : ClauseStatus::kFail;
    r.note = "max |psi - a grad phi| / max(1, |psi|)";
    report.clauses.push_back(r);
  }
  // (2b) bounded Hessian
  report.clauses.push_back(detail::bounded_clause(
      "2b-hessian", "sup |Hess phi| finite (growth test)", grid,
      [&](const Vec& p) { return model.hessian(p).norm(); }, g.growth_ratio));
  // (2c) zero set of grad phi is {0}
  {
    ClauseResult r{"2c-zero-set", "grad phi(y) = 0 iff y = 0"};
    const Vec zero = Vec::Zero(model.d);
    const double at_zero = model.gradient(zero).norm();
    r.value = at_zero;
    r.threshold = g.zero_tol;
    r.status = at_zero <= g.zero_tol ? ClauseStatus::kPass : ClauseStatus::kFail;
    if (r.status == ClauseStatus::kFail) {
      r.witness = to_vector(zero);
      r.note = "grad phi(0) != 0";
    }
    for (const Vec& p : grid.pts) {
      if (p.norm() < 1e-12) continue;
      const double gn = model.gradient(p).norm();
      if (!(gn > g.zero_tol)) {
        r.status = ClauseStatus::kFail;
        r.witness = to_vector(p);
        r.note = "grad phi vanishes away from 0";
        break;
      }
    }
    report.clauses.push_back(r);
  }
  // (2d) growth of |grad phi|^2
  {
    ClauseResult r{"2d-growth", "min over |y| = R of |grad phi|^2 increasing in R"};
    std::vector<Vec> dirs;
    for (int c = 0; c < model.d; ++c) {
      dirs.push_back(Vec::Unit(model.d, c));
      dirs.push_back(-Vec::Unit(model.d, c));
    }
    if (model.d > 1) {
      RandomStream rng(g.seed, 2, Channel::kAuxiliary);
      for (int i = 0; i < 64; ++i) dirs.push_back(rng.normal_vec(model.d).normalized());
    }
    double prev = -1.0;
    bool increasing = true;
    std::ostringstream os;
    for (int k = 1; k <= 4; ++k) {
      const double R = grid.half_width * k / 4.0;
      double mn = std::numeric_limits<double>::infinity();
      for (const Vec& u : dirs) mn = std::min(mn, model.gradient(Vec::Constant(model.d, grid.center) + R * u).squaredNorm());
      os << (k > 1 ? ", " : "") << "R=" << R << ": " << mn;
      if (!(mn > prev)) {
        increasing = false;
        r.witness = {R};
      }
      prev = mn;
    }
    r.value = prev;
    r.status = increasing ? ClauseStatus::kPass : ClauseStatus::kFail;
    r.note = os.str();
    report.clauses.push_back(r);
  }
  // (3) asymptotic stability of xi' = -V_x(xi)
  report.clauses.push_back(detail::stability_clause(
      "3-stability", "xi' = -V_x(xi) converges to 0", g, detail::stability_starts(g, model.d, model.d),
      [&](const Vec& x, const Vec& y) { return stability_field_single(model, x, y); }));
  // (4) Lyapunov function
  {
    ClauseResult r{"4-lyapunov", "Lyapunov function V_x"};
    if (!model.strongly_convex || !model.phi_tilde || !model.grad_phi_tilde) {
      r.status = ClauseStatus::kNotChecked;
      r.note = "no strongly convex potential declared";
    } else {
      // V_x(xi) = phi~(xi + x) - phi~(x) - xi . grad phi~(x) + 1
      double a2 = std::numeric_limits<double>::infinity(), a1 = 0.0, c1 = std::numeric_limits<double>::infinity();
      const auto bases = detail::stability_starts(g, model.d, model.d);
      for (const auto& [x, unused] : bases) {
        const double px = model.phi_tilde(x);
        const Vec gx = model.grad_phi_tilde(x);
        for (const Vec& xi : grid.pts) {
          const double n2 = xi.squaredNorm();
          if (n2 < 1e-12) continue;
          const double V = model.phi_tilde(xi + x) - px - xi.dot(gx) + 1.0;
          const Vec gradV = model.grad_phi_tilde(xi + x) - gx;
          const double drift = stability_field_single(model, x, xi).dot(gradV);
          if ((V - 1.0) / n2 < a2) {
            a2 = (V - 1.0) / n2;
            r.witness = to_vector(xi);
          }
          a1 = std::max(a1, V / (1.0 + n2));
          c1 = std::min(c1, drift / n2);
        }
      }
      r.value = std::min(a2, c1);
      r.threshold = 0.0;
      r.status = (a2 > 0.0 && c1 > 0.0 && std::isfinite(a1)) ? ClauseStatus::kPass : ClauseStatus::kFail;
      std::ostringstream os;
      os << "alpha_2 = " << a2 << ", alpha_1 = " << a1 << ", c_1 = " << c1;
      r.note = os.str();
    }
    report.clauses.push_back(r);
  }
  return report;
}

inline AssumptionReport check_multiscale(const MultiscaleModel& model, const CheckGrid& g = {}) {
  model.validate();
  const int m = model.m, d = model.d;
  const auto joint = detail::make_grid(g, m + d);
  const auto xgrid = detail::make_grid(g, m);
  auto split = [m, d](const Vec& p) { return std::make_pair(Vec(p.head(m)), Vec(p.tail(d))); };
  AssumptionReport report;
  using detail::to_vector;

  // (1) slow coefficients
  report.clauses.push_back(detail::lipschitz_clause(
      "1-b-lipschitz", "b Lipschitz in (x, y) (growth test)", joint,
      [&](const Vec& p) {
        auto [x, y] = split(p);
        return model.b(x, y);
      },
      g.growth_ratio));
  auto alpha_flat = [&](const Vec& x) {
    const Mat a = model.alpha(x);
    return Eigen::Map<const Eigen::VectorXd>(a.data(), a.size()).eval();
  };
  report.clauses.push_back(detail::lipschitz_clause("1-alpha-lipschitz", "alpha Lipschitz (growth test)", xgrid,
                                                    alpha_flat, g.growth_ratio));
  report.clauses.push_back(detail::bounded_clause(
      "1-alpha-bounded", "alpha bounded (growth test)", xgrid, [&](const Vec& x) { return model.alpha(x).norm(); },
      g.growth_ratio));

  // (2a) Hessian growth
  report.clauses.push_back(detail::bounded_clause(
      "2a-hessian", "|Hess_y U| + |Hess_x U| / (1 + |x| + |y|) bounded (growth test)", joint,
      [&](const Vec& p) {
        auto [x, y] = split(p);
        const Mat hy = fd_jacobian([&](const Vec& z) { return model.gradient_y(x, z); }, y, 1e-4);
        const Mat hx = fd_jacobian([&](const Vec& z) { return model.gradient_x(z, y); }, x, 1e-4);
        return hy.norm() + hx.norm() / (1.0 + x.norm() + y.norm());
      },
      g.growth_ratio));
  // (2b) x-gradient growth
  report.clauses.push_back(detail::bounded_clause(
      "2b-x-gradient", "|grad_x U| / (1 + |x| + |y|) bounded (growth test)", joint,
      [&](const Vec& p) {
        auto [x, y] = split(p);
        return model.gradient_x(x, y).norm() / (1.0 + x.norm() + y.norm());
      },
      g.growth_ratio));
  // (2c) U + |grad_y U|^2 >= L1 |y|^2 - L2, L1 fitted on the outer y-shell
  {
    ClauseResult r{"2c-lower-bound", "U + |grad_y U|^2 >= L1 |y|^2 - L2 with L1 > 0"};
    double L1 = std::numeric_limits<double>::infinity();
    const double shell = 0.9 * joint.half_width;
    for (const Vec& p : joint.pts) {
      auto [x, y] = split(p);
      const double ny = (y - Vec::Constant(d, joint.center)).cwiseAbs().maxCoeff();
      if (ny < shell || y.squaredNorm() < 1e-12) continue;
      const double q = (model.U(x, y) + model.gradient_y(x, y).squaredNorm()) / y.squaredNorm();
      if (!(q >= L1)) {
        L1 = std::isfinite(q) ? q : -std::numeric_limits<double>::infinity();
        r.witness = to_vector(p);
      }
    }
    double L2 = 0.0;
    if (L1 > 0.0)
      for (const Vec& p : joint.pts) {
        auto [x, y] = split(p);
        L2 = std::max(L2, L1 * y.squaredNorm() - model.U(x, y) - model.gradient_y(x, y).squaredNorm());
      }
    r.value = L1;
    r.threshold = 0.0;
    r.status = L1 > 0.0 ? ClauseStatus::kPass : ClauseStatus::kFail;
    std::ostringstream os;
    os << "L1 = " << L1 << " (outer y-shell), L2 = " << L2;
    r.note = os.str();
    report.clauses.push_back(r);
  }
  // (2d) fast stability
  {
    const auto starts = detail::stability_starts(g, m + d, d);
    report.clauses.push_back(detail::stability_clause(
        "2d-stability", "u' = -V_{x,z}(u) converges to 0", g, starts, [&](const Vec& base, const Vec& u) {
          return stability_field_fast(model, Vec(base.head(m)), Vec(base.tail(d)), u);
        }));
  }
  // (2e) grad_y U Lipschitz; finite in x for every y on the grid
  report.clauses.push_back(detail::lipschitz_clause(
      "2e-grad-y-lipschitz", "grad_y U Lipschitz in (x, y) (growth test)", joint,
      [&](const Vec& p) {
        auto [x, y] = split(p);
        return model.gradient_y(x, y);
      },
      g.growth_ratio));
  {
    ClauseResult r{"2e-grad-y-finite", "sup_x |grad_y U(x, y)| finite for each y"};
    double worst = 0.0;
    bool finite = true;
    for (const Vec& p : joint.pts) {
      auto [x, y] = split(p);
      const double n = model.gradient_y(x, y).norm();
      if (!std::isfinite(n)) {
        finite = false;
        r.witness = to_vector(p);
        break;
      }
      if (n > worst) {
        worst = n;
        r.witness = to_vector(p);
      }
    }
    r.value = worst;
    r.status = finite ? ClauseStatus::kPass : ClauseStatus::kFail;
    r.note = "largest value on the grid";
    report.clauses.push_back(r);
  }
  // (2f) fixed point map
  {
    ClauseResult r{"2f-fixed-point", "grad_y U(x, theta(x)) = 0"};
    double worst = 0.0;
    for (const Vec& x : xgrid.pts) {
      const double n = model.gradient_y(x, model.theta(x)).norm();
      if (!(n <= worst)) {
        worst = std::isfinite(n) ? n : std::numeric_limits<double>::infinity();
        r.witness = to_vector(x);
      }
    }
    r.value = worst;
    r.threshold = g.consistency_tol;
    r.status = worst <= g.consistency_tol ? ClauseStatus::kPass : ClauseStatus::kFail;
    report.clauses.push_back(r);
  }
  report.clauses.push_back(detail::lipschitz_clause("2f-theta-lipschitz", "theta Lipschitz (growth test)", xgrid,
                                                    [&](const Vec& x) { return model.theta(x); }, g.growth_ratio));
  return report;
}

}  // namespace ldlab
