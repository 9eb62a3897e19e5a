// Experiment harness: bounded test functionals, the Monte Carlo Laplace
// functional -a log E exp(-F(mu)/a) with a = eps s(eps)^2, brute-force
// variational values inf F + I1, flat key-value configs and eps-sweeps.
#pragma once

#include "ldlab/measures.hpp"
#include "ldlab/models.hpp"
#include "ldlab/multiscale_control.hpp"
#include "ldlab/rate.hpp"
#include "ldlab/sde.hpp"
#include "ldlab/steering.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace ldlab {

/// Exponent left the double range in the Laplace reduction.
class OverflowError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Functionals on probability measures

struct FunctionalSpec {
  enum class Kind { kZero, kConstant, kMeanPenalty, kDblPenalty };
  Kind kind = Kind::kZero;
  double value = 0.0;  // constant
  Vec center;          // mean_penalty
  DiscreteMeasure target;
  double cap = 1.0;

  static FunctionalSpec zero() { return {}; }

  static FunctionalSpec constant(double c) {
    if (!std::isfinite(c)) throw InvalidInput("FunctionalSpec::constant: value must be finite");
    FunctionalSpec f;
    f.kind = Kind::kConstant;
    f.value = c;
    return f;
  }

  /// min(cap, |mean(mu) - c|^2), mean taken with coordinates clamped to +-1e6.
  static FunctionalSpec mean_penalty(const Vec& c, double cap) {
    if (!(cap > 0.0) || !std::isfinite(cap)) throw InvalidInput("mean_penalty: cap must be positive and finite");
    FunctionalSpec f;
    f.kind = Kind::kMeanPenalty;
    f.center = c;
    f.cap = cap;
    return f;
  }

  /// min(cap, d_bl(mu, target)).
  static FunctionalSpec dbl_penalty(const DiscreteMeasure& target, double cap) {
    if (!(cap > 0.0) || !std::isfinite(cap)) throw InvalidInput("dbl_penalty: cap must be positive and finite");
    if (!target.is_probability(1e-9)) throw InvalidInput("dbl_penalty: target must be a probability measure");
    FunctionalSpec f;
    f.kind = Kind::kDblPenalty;
    f.target = target;
    f.cap = cap;
    return f;
  }

  /// sup |F|
  double bound() const {
    switch (kind) {
      case Kind::kZero: return 0.0;
      case Kind::kConstant: return std::abs(value);
      case Kind::kMeanPenalty: return cap;
      case Kind::kDblPenalty: return std::min(cap, 2.0);
    }
    return 0.0;
  }

  double operator()(const DiscreteMeasure& mu) const {
    switch (kind) {
      case Kind::kZero: return 0.0;
      case Kind::kConstant: return value;
      case Kind::kMeanPenalty: {
        if (mu.dim() != center.size()) throw InvalidInput("mean_penalty: dimension mismatch");
        const double m = mu.total_mass();
        if (!(m > 0.0)) throw InvalidInput("mean_penalty: zero mass");
        Vec acc = Vec::Zero(mu.dim());
        for (const auto& a : mu.atoms()) acc += a.weight * a.location.cwiseMax(-1e6).cwiseMin(1e6);
        return std::min(cap, (acc / m - center).squaredNorm());
      }
      case Kind::kDblPenalty:
        return std::min(cap, dbl_distance(mu, target));
    }
    return 0.0;
  }

  std::string describe() const {
    std::ostringstream os;
    switch (kind) {
      case Kind::kZero: os << "zero"; break;
      case Kind::kConstant: os << "constant(" << value << ")"; break;
      case Kind::kMeanPenalty: os << "mean_penalty(c=" << center.transpose() << ", cap=" << cap << ")"; break;
      case Kind::kDblPenalty: os << "dbl_penalty(" << target.size() << " atoms, cap=" << cap << ")"; break;
    }
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Laplace functional

/// scale * log((1/N) sum_i exp(v_i / scale)), max-centered.
inline double logmeanexp(const std::vector<double>& values, double scale) {
  if (values.empty()) throw InvalidInput("logmeanexp: no values");
  if (!(scale > 0.0)) throw InvalidInput("logmeanexp: scale must be positive");
  const double m = *std::max_element(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += std::exp((v - m) / scale);
  return m + scale * std::log(acc / static_cast<double>(values.size()));
}

struct LaplaceValue {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// -a log mean exp(-F_i / a) from sampled functional values, with the
/// delta-method standard error a sd(Z) / (sqrt(N) mean(Z)), Z_i = exp(-(F_i - min F) / a).
/// Throws OverflowError when a centered exponent exceeds 700 in magnitude.
inline LaplaceValue laplace_from_values(const std::vector<double>& F, double a) {
  if (F.empty()) throw InvalidInput("laplace_from_values: no samples");
  if (!(a > 0.0)) throw InvalidInput("laplace_from_values: speed scale must be positive");
  const double lo = *std::min_element(F.begin(), F.end());
  const double hi = *std::max_element(F.begin(), F.end());
  if ((hi - lo) / a > 700.0)
    throw OverflowError("laplace estimate: exponent range " + std::to_string((hi - lo) / a) +
                        " exceeds 700 (F in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                        "], scale " + std::to_string(a) + ")");
  std::vector<double> neg(F.size());
  std::transform(F.begin(), F.end(), neg.begin(), [](double f) { return -f; });
  LaplaceValue out;
  out.estimate = -logmeanexp(neg, a);
  const double n = static_cast<double>(F.size());
  double mean = 0.0, sq = 0.0;
  for (double f : F) {
    const double z = std::exp(-(f - lo) / a);
    mean += z / n;
    sq += z * z / n;
  }
  const double var = F.size() > 1 ? std::max(0.0, sq - mean * mean) * n / (n - 1.0) : 0.0;
  out.std_error = a * std::sqrt(var / n) / mean;
  return out;
}

struct OccupationOptions {
  double horizon = 1.0;
  /// 0 keeps one atom per step (exact time average).
  double bin_width = 0.0;
  /// Step is the largest admissible one divided by this.
  std::size_t refine = 1;
};

/// Normalized occupation measure of one uncontrolled run on [0, horizon].
inline DiscreteMeasure occupation_measure(const SingleScaleModel& model, const NoiseSchedule& sched, double eps,
                                          std::uint64_t seed, std::uint64_t replica,
                                          const OccupationOptions& opt = {}) {
  if (opt.refine == 0) throw InvalidInput("occupation_measure: refine must be at least 1");
  const TimeGrid grid = TimeGrid::with_max_step(opt.horizon, eps / 10.0 / static_cast<double>(opt.refine));
  OccupationAccumulator binned(model.d, opt.bin_width > 0.0 ? opt.bin_width : 1.0);
  DiscreteMeasure exact(model.d);
  StepObserver observer;
  observer.single = [&](std::size_t, double, double dt, const Vec& y) {
    if (opt.bin_width > 0.0)
      binned.add(y, dt);
    else
      exact.add(y, dt);
  };
  SimulationOptions sim;
  sim.replica = replica;
  sim.record_stride = grid.steps();
  simulate_single(model, sched, eps, grid, seed, NoControl{}, sim, &observer);
  return opt.bin_width > 0.0 ? binned.measure(true) : exact.normalized();
}

struct LaplaceOptions {
  std::size_t replicas = 512;
  std::uint64_t seed = 1;
  OccupationOptions occupation;
};

struct LaplacePoint {
  double eps = 0.0;
  double scale = 0.0;  // eps s(eps)^2
  double estimate = 0.0;
  double std_error = 0.0;
  double mean_F = 0.0;
  double min_F = 0.0;
};

/// Naive Monte Carlo estimate of -eps s^2 log E exp(-F(mu^eps) / (eps s^2)) for each eps.
inline std::vector<LaplacePoint> laplace_estimate(const SingleScaleModel& model, const FunctionalSpec& F,
                                                  const NoiseSchedule& sched, const std::vector<double>& eps_list,
                                                  const LaplaceOptions& opt = {}) {
  if (opt.replicas == 0) throw InvalidInput("laplace_estimate: need at least one replica");
  std::vector<LaplacePoint> out;
  for (double eps : eps_list) {
    const double s = sched(eps);
    const double a = eps * s * s;
    if (!(a > 0.0)) throw InvalidInput("laplace_estimate: noise must be on");
    const std::vector<double> values = parallel_map(opt.replicas, [&](std::size_t r) {
      return F(occupation_measure(model, sched, eps, opt.seed, r, opt.occupation));
    });
    const LaplaceValue v = laplace_from_values(values, a);
    LaplacePoint p;
    p.eps = eps;
    p.scale = a;
    p.estimate = v.estimate;
    p.std_error = v.std_error;
    p.min_F = *std::min_element(values.begin(), values.end());
    for (double f : values) p.mean_F += f / static_cast<double>(values.size());
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Variational side: inf over a gridded family of F(gamma) + I1(gamma)

struct VariationalFamily {
  double lo = -3.0;
  double hi = 3.0;
  double step = 0.05;
  double weight_step = 0.05;
  bool two_atoms = true;
  /// Lattice spacing for two-atom locations (0: step in 1-d, 0.25 in 2-d).
  double pair_step = 0.0;
};

struct VariationalResult {
  double value = std::numeric_limits<double>::infinity();
  DiscreteMeasure argmin;
  std::size_t evaluated = 0;
};

namespace detail {

/// Multiples of h inside [lo, hi], per axis.
inline std::vector<Vec> lattice(int dim, double lo, double hi, double h) {
  if (!(h > 0.0) || !(hi >= lo)) return {};
  const auto k0 = static_cast<long>(std::ceil(lo / h - 1e-9));
  const auto k1 = static_cast<long>(std::floor(hi / h + 1e-9));
  if (k1 < k0) return {};
  std::vector<double> axis;
  for (long k = k0; k <= k1; ++k) axis.push_back(static_cast<double>(k) * h);
  std::vector<Vec> out;
  std::vector<std::size_t> idx(static_cast<std::size_t>(dim), 0);
  while (true) {
    Vec p(dim);
    for (int c = 0; c < dim; ++c) p(c) = axis[idx[static_cast<std::size_t>(c)]];
    out.push_back(p);
    int c = 0;
    while (c < dim && ++idx[static_cast<std::size_t>(c)] == axis.size()) idx[static_cast<std::size_t>(c++)] = 0;
    if (c == dim) break;
  }
  return out;
}

}  // namespace detail

inline VariationalResult variational_value(const SingleScaleModel& model, const FunctionalSpec& F,
                                           const VariationalFamily& family = {}) {
  if (model.d > 2) throw InvalidInput("variational_value: brute force is limited to d <= 2");
  const auto singles = detail::lattice(model.d, family.lo, family.hi, family.step);
  if (singles.empty()) throw InvalidInput("variational_value: empty family");
  VariationalResult best;
  auto consider = [&](const DiscreteMeasure& g, double rate) {
    ++best.evaluated;
    const double v = F(g) + rate;
    if (v < best.value) {
      best.value = v;
      best.argmin = g;
    }
  };
  auto I1_at = [&](const Vec& z) { return 0.5 * (model.sigma(z).transpose() * model.gradient(z)).squaredNorm(); };
  for (const auto& z : singles) consider(DiscreteMeasure::dirac(z), I1_at(z));
  if (!family.two_atoms) return best;

  if (!(family.weight_step > 0.0 && family.weight_step < 1.0))
    throw InvalidInput("variational_value: weight step must lie in (0, 1)");
  const double ps = family.pair_step > 0.0 ? family.pair_step : (model.d == 1 ? family.step : 0.25);
  const auto pts = detail::lattice(model.d, family.lo, family.hi, ps);
  std::vector<double> rates(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) rates[i] = I1_at(pts[i]);
  const auto n_w = static_cast<int>(std::round(1.0 / family.weight_step));
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      for (int k = 1; k < n_w; ++k) {
        const double w = k * family.weight_step;
        consider(DiscreteMeasure::from_atoms({pts[i], pts[j]}, {w, 1.0 - w}), w * rates[i] + (1.0 - w) * rates[j]);
      }
  return best;
}

// ---------------------------------------------------------------------------
// Plans from JSON

/// {"breakpoints": [...], "atoms": [[loc, ...] per interval], "weights": [[w, ...] per interval],
///  "controls": [[v_1..v_k] per interval]}; a location may be a number in 1-d.
inline PiecewisePlan plan_from_json(const nlohmann::json& j) {
  try {
    PiecewisePlan plan;
    plan.breakpoints = j.at("breakpoints").get<std::vector<double>>();
    const auto& atoms = j.at("atoms");
    const auto& weights = j.at("weights");
    const auto& controls = j.at("controls");
    if (atoms.size() != weights.size() || atoms.size() != controls.size())
      throw ConfigError("plan: atoms, weights and controls need one entry per interval");
    auto to_vec = [](const nlohmann::json& v) {
      if (v.is_number()) return vec({v.get<double>()});
      const auto xs = v.get<std::vector<double>>();
      return Vec(Eigen::Map<const Vec>(xs.data(), static_cast<Eigen::Index>(xs.size())));
    };
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      std::vector<Vec> locs;
      for (const auto& a : atoms[i]) locs.push_back(to_vec(a));
      plan.measures.push_back(Law::discrete(DiscreteMeasure::from_atoms(locs, weights[i].get<std::vector<double>>())));
      plan.controls.push_back(to_vec(controls[i]));
    }
    plan.validate();
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("plan: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("plan: ") + e.what());
  }
}

inline PiecewisePlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open plan file " + path);
  try {
    return plan_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("plan " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Config
//
// One "key = value" per line, '#' starts a comment. Keys:
//   experiment     lln | steer | multiscale | laplace
//   model          builtin name; model.<param> = number passes parameters
//   noise          noise schedule, default power:0.25
//   target.atoms   "x@w; x@w", coordinates comma separated ("-1@0.3; 1@0.7")
//   eps.list       strictly decreasing, comma separated
//   replicas, seed, out
//   grid.refine    divide the largest admissible step by this (default 1)
//   bin_width      occupation bin width (default 0.01; 0 = exact, lln/laplace only)
//   functional     zero | constant | mean_penalty | dbl_penalty (laplace)
//   functional.c, functional.cap
//   plan           JSON plan file (multiscale)
//   exponent       Delta = eps^exponent (multiscale, default 1/3)

struct ExperimentConfig {
  std::string experiment = "lln";
  std::string model = "quadratic";
  Params model_params;
  NoiseSchedule noise = NoiseSchedule::power(0.25);
  std::optional<DiscreteMeasure> target;
  std::vector<double> eps_list;
  std::size_t replicas = 1;
  std::uint64_t seed = 1;
  std::string out;
  std::size_t refine = 1;
  double bin_width = 0.01;
  FunctionalSpec functional;
  std::string plan;
  double exponent = 1.0 / 3.0;

  void validate() const {
    static const char* kExperiments[] = {"lln", "steer", "multiscale", "laplace"};
    if (std::find(std::begin(kExperiments), std::end(kExperiments), experiment) == std::end(kExperiments))
      throw ConfigError("unknown experiment: " + experiment);
    if (replicas < 1) throw ConfigError("replicas must be at least 1");
    if (eps_list.empty()) throw ConfigError("eps.list is empty");
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
      if (!(eps_list[i] > 0.0)) throw ConfigError("eps.list entries must be positive");
      if (i > 0 && !(eps_list[i] < eps_list[i - 1])) throw ConfigError("eps.list must be strictly decreasing");
    }
    if (refine < 1) throw ConfigError("grid.refine must be at least 1");
    if (!(bin_width >= 0.0)) throw ConfigError("bin_width must be nonnegative");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_number(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a number: '" + text + "'");
  }
}

inline std::uint64_t to_count(const std::string& key, const std::string& text) {
  const double v = to_number(key, text);
  if (v < 0.0 || v != std::floor(v) || v > 1e15) throw ConfigError(key + ": expected a nonnegative integer");
  return static_cast<std::uint64_t>(v);
}

inline Vec to_point(const std::string& key, const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.empty()) throw ConfigError(key + ": empty location");
  Vec v(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) v(static_cast<Eigen::Index>(i)) = to_number(key, parts[i]);
  return v;
}

}  // namespace detail

/// "-1@0.3; 1@0.7" -> 0.3 delta_{-1} + 0.7 delta_1
inline DiscreteMeasure parse_atoms(const std::string& text) {
  std::vector<Vec> locs;
  std::vector<double> weights;
  for (const auto& item : detail::split(text, ';')) {
    const auto at = item.find('@');
    if (at == std::string::npos) throw ConfigError("target.atoms: expected location@weight, got '" + item + "'");
    locs.push_back(detail::to_point("target.atoms", detail::trim(item.substr(0, at))));
    weights.push_back(detail::to_number("target.atoms", detail::trim(item.substr(at + 1))));
  }
  if (locs.empty()) throw ConfigError("target.atoms: no atoms");
  for (const auto& l : locs)
    if (l.size() != locs.front().size()) throw ConfigError("target.atoms: mixed dimensions");
  try {
    auto m = DiscreteMeasure::from_atoms(locs, weights);
    if (!m.is_probability(1e-9)) throw ConfigError("target.atoms: weights must sum to 1");
    return m;
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("target.atoms: ") + e.what());
  }
}

inline ExperimentConfig parse_config(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (!kv.emplace(key, detail::trim(line.substr(eq + 1))).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
  }

  ExperimentConfig c;
  std::string functional = "zero";
  std::optional<Vec> center;
  double cap = 1.0;
  for (const auto& [key, value] : kv) {
    if (key == "experiment") c.experiment = value;
    else if (key == "model") c.model = value;
    else if (key.rfind("model.", 0) == 0) c.model_params[key.substr(6)] = detail::to_number(key, value);
    else if (key == "noise") c.noise = NoiseSchedule::parse(value);
    else if (key == "target.atoms") c.target = parse_atoms(value);
    else if (key == "eps.list") {
      for (const auto& e : detail::split(value, ',')) c.eps_list.push_back(detail::to_number(key, e));
    } else if (key == "replicas") c.replicas = detail::to_count(key, value);
    else if (key == "seed") c.seed = detail::to_count(key, value);
    else if (key == "out") c.out = value;
    else if (key == "grid.refine") c.refine = detail::to_count(key, value);
    else if (key == "bin_width") c.bin_width = detail::to_number(key, value);
    else if (key == "functional") functional = value;
    else if (key == "functional.c") center = detail::to_point(key, value);
    else if (key == "functional.cap") cap = detail::to_number(key, value);
    else if (key == "plan") c.plan = value;
    else if (key == "exponent") c.exponent = detail::to_number(key, value);
    else throw ConfigError("unknown config key: " + key);
  }

  try {
    if (functional == "zero") c.functional = FunctionalSpec::zero();
    else if (functional == "constant") c.functional = FunctionalSpec::constant(center ? (*center)(0) : 0.0);
    else if (functional == "mean_penalty") {
      if (!center) throw ConfigError("mean_penalty needs functional.c");
      c.functional = FunctionalSpec::mean_penalty(*center, cap);
    } else if (functional == "dbl_penalty") {
      if (!c.target) throw ConfigError("dbl_penalty needs target.atoms");
      c.functional = FunctionalSpec::dbl_penalty(*c.target, cap);
    } else throw ConfigError("unknown functional: " + functional);
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_config(in);
}

// ---------------------------------------------------------------------------
// Sweeps

struct ResultTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw InvalidInput("ResultTable: no column " + name);
    return static_cast<std::size_t>(std::distance(columns.begin(), it));
  }

  /// (eps, mean of `name`) in order of first appearance of each eps.
  std::vector<std::pair<double, double>> mean_by_eps(const std::string& name) const {
    const std::size_t e = column("eps"), c = column(name);
    std::vector<std::pair<double, double>> sums;
    std::vector<std::size_t> counts;
    for (const auto& row : rows) {
      auto it = std::find_if(sums.begin(), sums.end(), [&](const auto& p) { return p.first == row[e]; });
      if (it == sums.end()) {
        sums.emplace_back(row[e], 0.0);
        counts.push_back(0);
        it = sums.end() - 1;
      }
      it->second += row[c];
      ++counts[static_cast<std::size_t>(std::distance(sums.begin(), it))];
    }
    for (std::size_t i = 0; i < sums.size(); ++i) sums[i].second /= static_cast<double>(counts[i]);
    return sums;
  }

  void write_csv(std::ostream& os) const {
    for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
    os << '\n';
    std::ostringstream cell;
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        cell.str("");
        cell.precision(12);
        cell << row[i];
        os << (i ? "," : "") << cell.str();
      }
      os << '\n';
    }
  }
};

namespace detail {

inline SingleScaleModel single_of(const ExperimentConfig& c) {
  if (!is_single_builtin(c.model)) throw ConfigError(c.experiment + " needs a single-scale model, got " + c.model);
  return builtin_single(c.model, c.model_params);
}

inline ResultTable sweep_lln(const ExperimentConfig& c) {
  const auto model = single_of(c);
  const DiscreteMeasure target = c.target ? *c.target : DiscreteMeasure::dirac(Vec::Zero(model.d));
  if (target.dim() != model.d) throw ConfigError("target dimension does not match the model");
  ResultTable t{{"eps", "replica", "dbl_to_target"}, {}};
  OccupationOptions occ;
  occ.bin_width = c.bin_width;
  occ.refine = c.refine;
  for (double eps : c.eps_list) {
    const auto d = parallel_map(c.replicas, [&](std::size_t r) {
      return dbl_distance(occupation_measure(model, c.noise, eps, c.seed, r, occ), target);
    });
    for (std::size_t r = 0; r < d.size(); ++r) t.rows.push_back({eps, static_cast<double>(r), d[r]});
  }
  return t;
}

inline ResultTable sweep_steer(const ExperimentConfig& c) {
  const auto model = single_of(c);
  if (!c.target) throw ConfigError("steer needs target.atoms");
  if (c.target->dim() != model.d) throw ConfigError("target dimension does not match the model");
  if (!(c.bin_width > 0.0)) throw ConfigError("steer needs a positive bin_width");
  ResultTable t{{"eps", "replica", "cost", "dbl_to_target"}, {}};
  for (double eps : c.eps_list) {
    const auto schedule = build_schedule(*c.target, eps);
    const auto grid = TimeGrid::with_max_step(1.0, eps * schedule.travel_duration / 10.0 / static_cast<double>(c.refine));
    const auto rows = parallel_map(c.replicas, [&](std::size_t r) {
      SteeringOptions opt;
      opt.bin_width = c.bin_width;
      opt.replica = r;
      const auto out = run_steered(model, schedule, c.noise, eps, grid, c.seed, opt);
      return std::vector<double>{eps, static_cast<double>(r), out.cost, dbl_distance(out.measure, *c.target)};
    });
    t.rows.insert(t.rows.end(), rows.begin(), rows.end());
  }
  return t;
}

inline ResultTable sweep_multiscale(const ExperimentConfig& c) {
  if (c.plan.empty()) throw ConfigError("multiscale needs a plan file");
  if (!(c.bin_width > 0.0)) throw ConfigError("multiscale needs a positive bin_width");
  const auto model = builtin_multiscale(c.model, c.model_params);
  PiecewisePlan plan = load_plan(c.plan);
  if (plan.measures.front().dim() != model.d || plan.controls.front().size() != model.k)
    throw ConfigError("plan dimensions do not match the model");
  solve_xi_star(model, plan, TimeGrid(0.0, plan.horizon(), 10000));
  MultiscaleSteeringOptions base;
  base.bin_width = c.bin_width;
  const SpaceTimeMeasure reference = plan.space_time().coarsened(base.bin_width, base.cell_width);
  ResultTable t{{"eps", "replica", "u_cost", "v_cost", "sup_dist_xi", "dbl_lambda"}, {}};
  for (double eps : c.eps_list) {
    const auto partition = build_partition(plan, eps, c.exponent);
    const auto grid =
        TimeGrid::with_max_step(plan.horizon(), eps * partition.travel / 10.0 / static_cast<double>(c.refine));
    const auto rows = parallel_map(c.replicas, [&](std::size_t r) {
      MultiscaleSteeringOptions opt = base;
      opt.replica = r;
      const auto out = run_multiscale_steered(model, plan, partition, c.noise, eps, grid, c.seed, opt);
      return std::vector<double>{eps,          static_cast<double>(r), out.u_cost, out.v_cost,
                                 out.sup_dist_xi, dbl_space_time(out.lambda, reference)};
    });
    t.rows.insert(t.rows.end(), rows.begin(), rows.end());
  }
  return t;
}

inline ResultTable sweep_laplace(const ExperimentConfig& c) {
  const auto model = single_of(c);
  LaplaceOptions opt;
  opt.replicas = c.replicas;
  opt.seed = c.seed;
  opt.occupation.bin_width = c.bin_width;
  opt.occupation.refine = c.refine;
  const double variational = model.d <= 2 ? variational_value(model, c.functional).value : std::nan("");
  ResultTable t{{"eps", "scale", "estimate", "std_error", "variational", "gap"}, {}};
  for (const auto& p : laplace_estimate(model, c.functional, c.noise, c.eps_list, opt))
    t.rows.push_back({p.eps, p.scale, p.estimate, p.std_error, variational, std::abs(p.estimate - variational)});
  return t;
}

}  // namespace detail

/// Runs the configured experiment over eps.list. Rows are deterministic in the seed.
inline ResultTable sweep(const ExperimentConfig& config) {
  config.validate();
  if (config.experiment == "lln") return detail::sweep_lln(config);
  if (config.experiment == "steer") return detail::sweep_steer(config);
  if (config.experiment == "multiscale") return detail::sweep_multiscale(config);
  if (config.experiment == "laplace") return detail::sweep_laplace(config);
  throw ConfigError("unknown experiment: " + config.experiment);
}

}  // namespace ldlab
