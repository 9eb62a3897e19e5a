// Near-optimal plans for the slow-fast system and the feedback control that
// realizes them: a plan (xi*, nu*, v*) with piecewise-constant finitely
// supported nu*, built from a general (v, nu) by mollification, piecewise
// averaging and discretization, then a nested time partition on which the
// fast control travels between the atoms of nu*_i and holds at each one.
#pragma once

#include "ldlab/measures.hpp"
#include "ldlab/models.hpp"
#include "ldlab/path.hpp"
#include "ldlab/rate.hpp"
#include "ldlab/sde.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ldlab {

// ---------------------------------------------------------------------------
// Laws and plan inputs.

/// Probability law on R^d. Finitely supported laws carry their atoms; other
/// laws carry a sampler and a reference sample that stands in for the law in
/// integrals.
struct Law {
  DiscreteMeasure support;
  std::function<Vec(RandomStream&)> sampler;

  static Law discrete(DiscreteMeasure m) {
    if (!m.is_probability(1e-9)) throw InvalidInput("Law: support must be a probability measure");
    return {std::move(m), {}};
  }

  static Law sampled(int dim, std::function<Vec(RandomStream&)> sampler, std::size_t reference_size,
                     std::uint64_t seed) {
    if (reference_size == 0) throw InvalidInput("Law: reference sample must be nonempty");
    RandomStream rng(seed, 0, Channel::kSampling);
    DiscreteMeasure ref(dim);
    const double w = 1.0 / static_cast<double>(reference_size);
    for (std::size_t i = 0; i < reference_size; ++i) {
      Vec x = sampler(rng);
      if (x.size() != dim) throw InvalidInput("Law: sampler returned the wrong dimension");
      ref.add(x, w);
    }
    return {std::move(ref), std::move(sampler)};
  }

  /// sum_k weights[k] parts[k]; weights are renormalized.
  static Law mixture(const std::vector<Law>& parts, const std::vector<double>& weights) {
    if (parts.empty() || parts.size() != weights.size()) throw InvalidInput("Law::mixture: size mismatch");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw InvalidInput("Law::mixture: negative weight");
      total += w;
    }
    if (!(total > 0.0)) throw InvalidInput("Law::mixture: zero total weight");
    std::vector<DiscreteMeasure> supports;
    std::vector<double> normalized;
    auto kept = std::make_shared<std::vector<Law>>();
    bool any_sampler = false;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (weights[k] <= 0.0) continue;
      supports.push_back(parts[k].support);
      normalized.push_back(weights[k] / total);
      kept->push_back(parts[k]);
      any_sampler = any_sampler || !parts[k].is_discrete();
    }
    Law out;
    out.support = DiscreteMeasure::mixture(supports, normalized);
    if (any_sampler) {
      out.sampler = [kept, normalized](RandomStream& rng) {
        double u = rng.uniform(), acc = 0.0;
        for (std::size_t k = 0; k + 1 < kept->size(); ++k) {
          acc += normalized[k];
          if (u < acc) return (*kept)[k].draw(rng);
        }
        return kept->back().draw(rng);
      };
    } else {
      out.support = out.support.merged();
    }
    return out;
  }

  int dim() const noexcept { return support.dim(); }
  bool is_discrete() const noexcept { return !sampler; }

  Vec draw(RandomStream& rng) const {
    if (sampler) return sampler(rng);
    const double u = rng.uniform();
    double acc = 0.0;
    for (const auto& a : support.atoms()) {
      acc += a.weight;
      if (u < acc) return a.location;
    }
    return support.atoms().back().location;
  }
};

/// Step function on [0, T]: values[i] on [breaks[i], breaks[i+1]), extended
/// by 0 for negative times.
struct StepControl {
  std::vector<double> breaks;
  std::vector<Vec> values;

  static StepControl constant(const Vec& v, double horizon) { return {{0.0, horizon}, {v}}; }

  double horizon() const { return breaks.back(); }
  int dim() const { return static_cast<int>(values.front().size()); }

  void validate() const {
    if (breaks.size() < 2 || values.size() + 1 != breaks.size())
      throw InvalidInput("StepControl: need one value per cell");
    if (std::abs(breaks.front()) > 1e-12) throw InvalidInput("StepControl: must start at 0");
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i)
      if (!(breaks[i + 1] > breaks[i])) throw InvalidInput("StepControl: breaks must increase");
    for (const auto& v : values)
      if (v.size() != values.front().size()) throw InvalidInput("StepControl: inconsistent dimension");
  }

  std::size_t index(double t) const {
    auto it = std::upper_bound(breaks.begin() + 1, breaks.end() - 1, t);
    return static_cast<std::size_t>(std::distance(breaks.begin() + 1, it));
  }

  Vec at(double t) const {
    if (t < 0.0) return Vec::Zero(dim());
    return values[index(t)];
  }

  /// (1/eta) int_{t-eta}^t v(r) dr.
  Vec window_average(double t, double eta) const {
    Vec acc = Vec::Zero(dim());
    const double a = t - eta, b = t;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
      const double lo = std::max(a, breaks[i]), hi = std::min(b, breaks[i + 1]);
      if (hi > lo) acc += (hi - lo) * values[i];
    }
    return acc / eta;
  }

  double energy() const {
    double e = 0.0;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) e += (breaks[i + 1] - breaks[i]) * values[i].squaredNorm();
    return e;
  }

  double min_cell() const {
    double m = breaks[1] - breaks[0];
    for (std::size_t i = 1; i + 1 < breaks.size(); ++i) m = std::min(m, breaks[i + 1] - breaks[i]);
    return m;
  }
};

/// Measure path constant on time cells: laws[i] on [breaks[i], breaks[i+1]);
/// `initial` is used for negative times.
struct LawPath {
  std::vector<double> breaks;
  std::vector<Law> laws;
  Law initial;

  double horizon() const { return breaks.back(); }
  int dim() const { return laws.front().dim(); }

  void validate() const {
    if (breaks.size() < 2 || laws.size() + 1 != breaks.size()) throw InvalidInput("LawPath: need one law per cell");
    if (std::abs(breaks.front()) > 1e-12) throw InvalidInput("LawPath: must start at 0");
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i)
      if (!(breaks[i + 1] > breaks[i])) throw InvalidInput("LawPath: breaks must increase");
    for (const auto& l : laws)
      if (l.dim() != initial.dim()) throw InvalidInput("LawPath: inconsistent dimension");
  }

  std::size_t index(double t) const {
    auto it = std::upper_bound(breaks.begin() + 1, breaks.end() - 1, t);
    return static_cast<std::size_t>(std::distance(breaks.begin() + 1, it));
  }

  double min_cell() const {
    double m = breaks[1] - breaks[0];
    for (std::size_t i = 1; i + 1 < breaks.size(); ++i) m = std::min(m, breaks[i + 1] - breaks[i]);
    return m;
  }
};

/// A control and occupation path (v, nu) to be approximated.
struct RawPlan {
  StepControl v;
  LawPath nu;
};

// ---------------------------------------------------------------------------
// Plan stages.

/// Mixture weights over a law table.
using LawWeights = std::vector<std::pair<std::size_t, double>>;

/// (v, nu) on a working grid with the path solving
/// xi' = int b(xi, y) nu_t(dy) + alpha(xi) v(t), xi(0) = x0 (explicit Euler).
struct PlanStage {
  std::string name;
  TimeGrid grid;
  std::vector<Law> laws;
  std::function<LawWeights(double)> measure;
  std::function<Vec(double)> control;
  Path xi;
  double nu_cost = 0.0;  // 1/2 int int |grad_y U(xi(s), y)|^2 nu_s(dy) ds
  double v_cost = 0.0;   // 1/2 int |v(s)|^2 ds

  double cost() const { return nu_cost + v_cost; }

  template <typename F>
  double integrate_at(double t, F&& f) const {
    double acc = 0.0;
    for (const auto& [k, w] : measure(t)) acc += w * laws[k].support.integrate(f);
    return acc;
  }

  /// int int f(y, s) nu(dy ds) by trapezoid quadrature on the grid nodes.
  double integrate(const std::function<double(const Vec&, double)>& f) const {
    double acc = 0.0;
    for (std::size_t j = 0; j <= grid.steps(); ++j) {
      const double t = grid.time(j);
      acc += detail::node_weight(grid, j) * integrate_at(t, [&](const Vec& y) { return f(y, t); });
    }
    return acc;
  }
};

namespace detail {

inline Vec mean_drift(const MultiscaleModel& model, const PlanStage& stage, double t, const Vec& x) {
  Vec drift = Vec::Zero(model.m);
  for (const auto& [k, w] : stage.measure(t))
    for (const auto& atom : stage.laws[k].support.atoms()) drift += (w * atom.weight) * model.b(x, atom.location);
  return drift;
}

inline void solve_stage(const MultiscaleModel& model, PlanStage& stage) {
  stage.xi = euler_ode(
      [&](double t, const Vec& x) { return Vec(mean_drift(model, stage, t, x) + model.alpha(x) * stage.control(t)); },
      model.x0, stage.grid);
  double nu = 0.0, v = 0.0;
  for (std::size_t j = 0; j <= stage.grid.steps(); ++j) {
    const double t = stage.grid.time(j), w = node_weight(stage.grid, j);
    const Vec& x = stage.xi.states[j];
    nu += w * stage.integrate_at(t, [&](const Vec& y) { return model.gradient_y(x, y).squaredNorm(); });
    v += w * stage.control(t).squaredNorm();
  }
  stage.nu_cost = 0.5 * nu;
  stage.v_cost = 0.5 * v;
}

inline void check_raw(const MultiscaleModel& model, const RawPlan& raw, const TimeGrid& grid) {
  raw.v.validate();
  raw.nu.validate();
  if (raw.v.dim() != model.k) throw InvalidInput("plan control dimension does not match the model");
  if (raw.nu.dim() != model.d) throw InvalidInput("plan measure dimension does not match the model");
  if (std::abs(raw.v.horizon() - raw.nu.horizon()) > 1e-12 || std::abs(grid.horizon() - raw.nu.horizon()) > 1e-12 ||
      std::abs(grid.start()) > 1e-12)
    throw InvalidInput("plan control, measure path and grid must share [0, T]");
}

}  // namespace detail

/// The input plan itself on the working grid.
inline PlanStage raw_stage(const MultiscaleModel& model, const RawPlan& raw, const TimeGrid& grid) {
  detail::check_raw(model, raw, grid);
  PlanStage s;
  s.name = "input";
  s.grid = grid;
  s.laws = raw.nu.laws;
  auto path = std::make_shared<LawPath>(raw.nu);
  auto v = std::make_shared<StepControl>(raw.v);
  s.measure = [path](double t) { return LawWeights{{path->index(t), 1.0}}; };
  s.control = [v](double t) { return v->at(t); };
  detail::solve_stage(model, s);
  return s;
}

/// Running averages v_eta(s) = (1/eta) int_{s-eta}^s v and
/// mu_eta,s = (1/eta) int_{s-eta}^s nu_r dr, with v = 0 and nu = nu.initial
/// for negative times, and the path re-solved.
inline PlanStage mollify_plan(const MultiscaleModel& model, const RawPlan& raw, double eta, const TimeGrid& grid) {
  detail::check_raw(model, raw, grid);
  if (!(eta > 0.0) || !(eta < std::min(raw.v.min_cell(), raw.nu.min_cell())))
    throw InvalidInput("mollify_plan: eta must lie in (0, smallest cell width)");
  PlanStage s;
  s.name = "mollified";
  s.grid = grid;
  s.laws = raw.nu.laws;
  s.laws.push_back(raw.nu.initial);
  const std::size_t initial = s.laws.size() - 1;
  auto path = std::make_shared<LawPath>(raw.nu);
  auto v = std::make_shared<StepControl>(raw.v);
  s.measure = [path, eta, initial](double t) {
    LawWeights w;
    const double a = t - eta;
    if (a < 0.0) w.emplace_back(initial, -a / eta);
    const auto& br = path->breaks;
    for (std::size_t i = 0; i + 1 < br.size(); ++i) {
      const double lo = std::max(a, br[i]), hi = std::min(t, br[i + 1]);
      if (hi > lo) w.emplace_back(i, (hi - lo) / eta);
    }
    return w;
  };
  s.control = [v, eta](double t) { return v->window_average(t, eta); };
  detail::solve_stage(model, s);
  return s;
}

/// Plan with v* and nu* constant on [t_i, t_{i+1}) (the last interval closed).
struct PiecewisePlan {
  std::vector<double> breakpoints;
  std::vector<Law> measures;
  std::vector<Vec> controls;
  Path xi_star;

  double horizon() const { return breakpoints.back(); }
  std::size_t intervals() const { return measures.size(); }

  std::size_t interval(double t) const {
    auto it = std::upper_bound(breakpoints.begin() + 1, breakpoints.end() - 1, t);
    return static_cast<std::size_t>(std::distance(breakpoints.begin() + 1, it));
  }

  bool discrete() const {
    return std::all_of(measures.begin(), measures.end(), [](const Law& l) { return l.is_discrete(); });
  }

  void validate() const {
    if (breakpoints.size() < 2 || measures.size() + 1 != breakpoints.size() || controls.size() != measures.size())
      throw InvalidInput("PiecewisePlan: need one measure and one control per interval");
    if (std::abs(breakpoints.front()) > 1e-12) throw InvalidInput("PiecewisePlan: must start at 0");
    for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i)
      if (!(breakpoints[i + 1] > breakpoints[i])) throw InvalidInput("PiecewisePlan: breakpoints must increase");
    for (const auto& m : measures)
      if (!m.support.is_probability(1e-9)) throw InvalidInput("PiecewisePlan: measures must be probabilities");
  }

  /// nu* as a space-time measure (reference samples for non-discrete laws).
  SpaceTimeMeasure space_time() const {
    std::vector<SpaceTimeMeasure::Cell> cells;
    for (std::size_t i = 0; i < measures.size(); ++i)
      cells.push_back({breakpoints[i], breakpoints[i + 1], measures[i].support});
    return SpaceTimeMeasure(measures.front().dim(), horizon(), std::move(cells));
  }
};

/// The plan on the working grid, with the path re-solved.
inline PlanStage stage_of(const MultiscaleModel& model, const PiecewisePlan& plan, const TimeGrid& grid,
                          std::string name = "piecewise") {
  plan.validate();
  if (std::abs(grid.horizon() - plan.horizon()) > 1e-12 || std::abs(grid.start()) > 1e-12)
    throw InvalidInput("stage_of: grid must cover the plan horizon");
  PlanStage s;
  s.name = std::move(name);
  s.grid = grid;
  s.laws = plan.measures;
  auto index = [breaks = plan.breakpoints](double t) {
    auto it = std::upper_bound(breaks.begin() + 1, breaks.end() - 1, t);
    return static_cast<std::size_t>(std::distance(breaks.begin() + 1, it));
  };
  s.measure = [index](double t) { return LawWeights{{index(t), 1.0}}; };
  s.control = [index, controls = plan.controls](double t) { return controls[index(t)]; };
  detail::solve_stage(model, s);
  return s;
}

/// Explicit Euler solve of xi' = int b(xi, y) nu*_t(dy) + alpha(xi) v*(t),
/// xi(0) = x0; the result is also stored in plan.xi_star.
inline Path solve_xi_star(const MultiscaleModel& model, PiecewisePlan& plan, const TimeGrid& grid) {
  if (plan.measures.front().dim() != model.d) throw InvalidInput("solve_xi_star: measure dimension mismatch");
  for (const auto& v : plan.controls)
    if (v.size() != model.k) throw InvalidInput("solve_xi_star: control dimension mismatch");
  plan.xi_star = stage_of(model, plan, grid).xi;
  return plan.xi_star;
}

/// Breakpoints t_i = i gamma for i <= K = floor(T / gamma) and t_{K+1} = T
/// (an empty last interval is dropped); nu*_i is the time average of the
/// stage measure over [t_i, t_{i+1}) and v*_i the stage control at t_i.
inline PiecewisePlan make_piecewise(const MultiscaleModel& model, const PlanStage& stage, double gamma) {
  const double T = stage.grid.horizon();
  if (!(gamma > 0.0) || !(gamma < T)) throw InvalidInput("make_piecewise: gamma must lie in (0, T)");
  const auto K = static_cast<std::size_t>(std::floor(T / gamma * (1.0 + 1e-12)));
  PiecewisePlan plan;
  for (std::size_t i = 0; i <= K; ++i) plan.breakpoints.push_back(static_cast<double>(i) * gamma);
  if (T - plan.breakpoints.back() > 1e-12 * T)
    plan.breakpoints.push_back(T);
  else
    plan.breakpoints.back() = T;

  const double h = stage.grid.dt() / 2.0;
  for (std::size_t i = 0; i + 1 < plan.breakpoints.size(); ++i) {
    const double a = plan.breakpoints[i], b = plan.breakpoints[i + 1];
    const auto sub = std::max<std::size_t>(64, static_cast<std::size_t>(std::ceil((b - a) / h)));
    std::vector<double> w(stage.laws.size(), 0.0);
    for (std::size_t q = 0; q < sub; ++q) {
      const double t = a + (static_cast<double>(q) + 0.5) * (b - a) / static_cast<double>(sub);
      for (const auto& [k, wk] : stage.measure(t)) w[k] += wk / static_cast<double>(sub);
    }
    plan.measures.push_back(Law::mixture(stage.laws, w));
    plan.controls.push_back(stage.control(a));
  }
  solve_xi_star(model, plan, stage.grid);
  return plan;
}

struct DiscretizeOptions {
  /// Bin width used when comparing measures in d_bl (0 compares exactly).
  double dbl_bin = 0.01;
};

struct DiscretizeResult {
  PiecewisePlan plan;
  /// sum_i int_{I_i} |int b(xi*(s), y) (nu_d - nu)(dy)| ds
  double drift_gap = 0.0;
  /// |static_cost(xi*, nu_d) - static_cost(xi*, nu)|
  double cost_gap = 0.0;
  /// max_i d_bl(nu_{i,d}, nu_i)
  double dbl_gap = 0.0;
};

/// Replaces each non-discrete nu*_i by the empirical measure of n draws and
/// re-solves xi*. Gaps are evaluated along the incoming xi*.
inline DiscretizeResult discretize_plan(const MultiscaleModel& model, const PiecewisePlan& plan, std::size_t n,
                                        std::uint64_t seed, const DiscretizeOptions& opt = {}) {
  plan.validate();
  if (n == 0) throw InvalidInput("discretize_plan: need at least one atom");
  if (plan.xi_star.states.empty()) throw InvalidInput("discretize_plan: plan has no solved path");
  DiscretizeResult out;
  out.plan = plan;
  for (std::size_t i = 0; i < plan.intervals(); ++i) {
    const Law& law = plan.measures[i];
    if (law.is_discrete()) continue;
    RandomStream rng(seed, i, Channel::kSampling);
    DiscreteMeasure emp(law.dim());
    for (std::size_t q = 0; q < n; ++q) emp.add(law.draw(rng), 1.0 / static_cast<double>(n));
    out.plan.measures[i] = Law::discrete(emp.merged());
    const auto& a = opt.dbl_bin > 0.0 ? law.support.coarsened(opt.dbl_bin) : law.support;
    const auto& b = opt.dbl_bin > 0.0 ? out.plan.measures[i].support.coarsened(opt.dbl_bin)
                                      : out.plan.measures[i].support;
    out.dbl_gap = std::max(out.dbl_gap, dbl_distance(a, b));
  }
  const Path& xi = plan.xi_star;
  for (std::size_t j = 0; j <= xi.grid.steps(); ++j) {
    const double t = xi.grid.time(j);
    const std::size_t i = plan.interval(t);
    if (plan.measures[i].is_discrete()) continue;
    const Vec& x = xi.states[j];
    Vec diff = Vec::Zero(model.m);
    for (const auto& atom : out.plan.measures[i].support.atoms()) diff += atom.weight * model.b(x, atom.location);
    for (const auto& atom : plan.measures[i].support.atoms()) diff -= atom.weight * model.b(x, atom.location);
    out.drift_gap += detail::node_weight(xi.grid, j) * diff.norm();
  }
  out.cost_gap = std::abs(static_cost(model, xi, out.plan.space_time()) - static_cost(model, xi, plan.space_time()));
  solve_xi_star(model, out.plan, xi.grid);
  return out;
}

// ---------------------------------------------------------------------------
// Plan pipeline.

/// Objective term F(xi, nu); the stage supplies nu through PlanStage::integrate.
using PlanFunctional = std::function<double(const Path& xi, const PlanStage& stage)>;

struct StageReport {
  std::string name;
  double F = 0.0;
  double nu_cost = 0.0;
  double v_cost = 0.0;
  double objective = 0.0;  // F + nu_cost + v_cost
  double change = 0.0;     // objective - previous objective
  double sup_shift = 0.0;  // sup |xi - previous xi|
};

struct PipelineOptions {
  double eta = 1e-3;
  double gamma = 0.05;
  std::size_t n_atoms = 2000;
  std::uint64_t seed = 1;
  DiscretizeOptions discretize;
};

struct PipelineReport {
  std::vector<StageReport> stages;  // input, mollified, piecewise, discrete
  DiscretizeResult discretized;
  double total_change() const { return stages.back().objective - stages.front().objective; }
};

/// input -> mollify -> piecewise -> discretize, reporting F + cost per stage.
inline PipelineReport run_pipeline(const MultiscaleModel& model, const RawPlan& raw, const PlanFunctional& F,
                                   const TimeGrid& grid, const PipelineOptions& opt = {}) {
  PipelineReport rep;
  auto record = [&](const PlanStage& s) {
    StageReport r{s.name, F(s.xi, s), s.nu_cost, s.v_cost};
    r.objective = r.F + r.nu_cost + r.v_cost;
    if (!rep.stages.empty()) r.change = r.objective - rep.stages.back().objective;
    return r;
  };
  const PlanStage input = raw_stage(model, raw, grid);
  rep.stages.push_back(record(input));
  const PlanStage moll = mollify_plan(model, raw, opt.eta, grid);
  rep.stages.push_back(record(moll));
  rep.stages.back().sup_shift = sup_distance(moll.xi, input.xi);
  const PiecewisePlan pw = make_piecewise(model, moll, opt.gamma);
  const PlanStage pws = stage_of(model, pw, grid);
  rep.stages.push_back(record(pws));
  rep.stages.back().sup_shift = sup_distance(pws.xi, moll.xi);
  rep.discretized = discretize_plan(model, pw, opt.n_atoms, opt.seed, opt.discretize);
  const PlanStage ds = stage_of(model, rep.discretized.plan, grid, "discrete");
  rep.stages.push_back(record(ds));
  rep.stages.back().sup_shift = sup_distance(ds.xi, pws.xi);
  return rep;
}

// ---------------------------------------------------------------------------
// Partition and fast feedback control.

struct PartitionCell {
  enum class Kind { kTravel, kHold, kTail };
  Kind kind;
  double start;
  double end;
  std::size_t interval;
  std::size_t sub;   // j
  std::size_t atom;  // index of the atom travelled to / held at (unused for tails)
};

/// Intervals [t_i, t_{i+1}) split into subintervals s_{i,j} = t_i + j Delta
/// (j <= N_i = floor((t_{i+1} - t_i) / Delta)), each split at
/// sigma_{i,j,l} = s_{i,j} + P_{i,l} Delta into a travel window of length
/// eps Delta followed by a hold; [s_{i,N_i}, t_{i+1}) is the tail.
struct PartitionPlan {
  double eps = 0.0;
  double delta = 0.0;
  double travel = 0.0;  // eps * delta
  std::vector<std::size_t> sub_count;
  std::vector<std::vector<double>> sub_starts;   // s_{i,0..N_i+1}
  std::vector<std::vector<double>> sub_lengths;  // Delta^{i,j}, j = 0..N_i
  std::vector<std::vector<double>> cum_weights;  // P_{i,0..m(i)}
  std::vector<std::vector<Vec>> atoms;           // y_{i,1..m(i)} (0-based)
  std::vector<PartitionCell> cells;

  double visit_time(std::size_t i, std::size_t j, std::size_t l) const {
    return sub_starts[i][j] + cum_weights[i][l] * sub_lengths[i][j];
  }

  std::size_t cell_index(double t) const {
    auto it = std::upper_bound(cells.begin(), cells.end(), t,
                               [](double value, const PartitionCell& c) { return value < c.start; });
    if (it == cells.begin()) return 0;
    return static_cast<std::size_t>(std::distance(cells.begin(), it)) - 1;
  }

  const Vec& target(const PartitionCell& c) const { return atoms[c.interval][c.atom]; }
};

inline PartitionPlan build_partition(const PiecewisePlan& plan, double eps, double a = 1.0 / 3.0) {
  plan.validate();
  if (!plan.discrete()) throw InvalidInput("build_partition: plan measures must be finitely supported");
  if (!(eps > 0.0 && eps < 1.0)) throw InvalidInput("build_partition: eps must lie in (0, 1)");
  if (!(a > 0.0 && a < 0.5)) throw InvalidInput("build_partition: exponent a must lie in (0, 1/2)");
  PartitionPlan p;
  p.eps = eps;
  p.delta = std::pow(eps, a);
  p.travel = eps * p.delta;
  if (!(p.delta > std::sqrt(eps))) throw InvalidInput("build_partition: Delta > sqrt(eps) violated");
  if (!(p.delta < 1.0)) throw InvalidInput("build_partition: Delta < 1 violated");
  for (std::size_t i = 0; i < plan.intervals(); ++i) {
    const auto& support = plan.measures[i].support;
    for (const auto& atom : support.atoms())
      if (!(atom.weight > eps))
        throw InvalidInput("build_partition: weight p_{i,l} > eps violated in interval " + std::to_string(i) +
                           " (weight " + std::to_string(atom.weight) + ")");
    const double t0 = plan.breakpoints[i], t1 = plan.breakpoints[i + 1];
    const auto N = static_cast<std::size_t>(std::floor((t1 - t0) / p.delta * (1.0 + 1e-12)));
    p.sub_count.push_back(N);
    std::vector<double> s, len;
    for (std::size_t j = 0; j <= N; ++j) s.push_back(t0 + static_cast<double>(j) * p.delta);
    s.push_back(t1);
    for (std::size_t j = 0; j < N; ++j) len.push_back(p.delta);
    len.push_back(t1 - s[N]);
    std::vector<double> P{0.0};
    std::vector<Vec> ys;
    for (const auto& atom : support.atoms()) {
      P.push_back(P.back() + atom.weight);
      ys.push_back(atom.location);
    }
    P.back() = 1.0;
    p.sub_starts.push_back(s);
    p.sub_lengths.push_back(len);
    p.cum_weights.push_back(P);
    p.atoms.push_back(ys);
    for (std::size_t j = 0; j < N; ++j) {
      for (std::size_t l = 0; l + 1 < P.size(); ++l) {
        const double sig = p.visit_time(i, j, l);
        const double next = (l + 2 == P.size()) ? s[j + 1] : p.visit_time(i, j, l + 1);
        p.cells.push_back({PartitionCell::Kind::kTravel, sig, sig + p.travel, i, j, l});
        p.cells.push_back({PartitionCell::Kind::kHold, sig + p.travel, next, i, j, l});
      }
    }
    if (t1 - s[N] > 1e-12) p.cells.push_back({PartitionCell::Kind::kTail, s[N], t1, i, N, 0});
  }
  return p;
}

/// States recorded at the visit time sigma_{i,j,l} of the active cell.
struct FastAnchors {
  std::optional<Vec> x;
  std::optional<Vec> y;
};

/// Travel: grad_y U(x, y) + (y_{i,l+1} - Y(sigma)) / Delta.
/// Hold:   grad_y U(x, y) - grad_y U(X(sigma), y) + grad_y U(X(sigma), y_{i,l+1}).
/// Tail:   grad_y U(x, y) - y, so the fast drift is -y / eps.
inline Vec feedback_u(const MultiscaleModel& model, const PartitionPlan& partition, double t, const Vec& x,
                      const Vec& y, const FastAnchors& anchors) {
  const double T = partition.cells.back().end;
  if (t < -1e-12 || t > T + 1e-12) throw InvalidInput("feedback_u: t outside [0, T]");
  const PartitionCell& c = partition.cells[partition.cell_index(t)];
  const Vec grad = model.gradient_y(x, y);
  switch (c.kind) {
    case PartitionCell::Kind::kTravel:
      if (!anchors.y) throw StateError("feedback_u: travel window without a recorded fast anchor");
      return grad + (partition.target(c) - *anchors.y) / partition.delta;
    case PartitionCell::Kind::kHold:
      if (!anchors.x) throw StateError("feedback_u: hold phase without a recorded slow anchor");
      return grad - model.gradient_y(*anchors.x, y) + model.gradient_y(*anchors.x, partition.target(c));
    case PartitionCell::Kind::kTail:
      break;
  }
  return grad - y;
}

/// Stateful fast feedback for one run: anchors are taken at the first step of
/// each travel window.
class MultiscaleSteeringController {
 public:
  MultiscaleSteeringController(const MultiscaleModel& model, const PartitionPlan& partition)
      : model_(model), partition_(partition) {}

  Vec operator()(double t, const Vec& x, const Vec& y) {
    const std::size_t c = partition_.cell_index(t);
    if (c != current_) {
      current_ = c;
      if (partition_.cells[c].kind == PartitionCell::Kind::kTravel) anchors_ = {x, y};
    }
    return feedback_u(model_, partition_, t, x, y, anchors_);
  }

  const PartitionCell& current_cell() const { return partition_.cells[current_]; }
  const FastAnchors& anchors() const noexcept { return anchors_; }

 private:
  const MultiscaleModel& model_;
  const PartitionPlan& partition_;
  std::size_t current_ = static_cast<std::size_t>(-1);
  FastAnchors anchors_;
};

struct MultiscaleSteeringOptions {
  /// Space bin and time cell width of the recorded occupation measure.
  double bin_width = 0.01;
  double cell_width = 0.05;
  /// Radius for the hold-phase occupation fraction.
  double hold_radius = 0.1;
  /// 0 records about 2000 states.
  std::size_t record_stride = 0;
  std::uint64_t replica = 0;
};

struct MultiscaleSteeredRun {
  Path x;
  SpaceTimeMeasure lambda;
  double u_cost = 0.0;
  double v_cost = 0.0;
  double travel_u_cost = 0.0;
  double hold_u_cost = 0.0;
  double tail_u_cost = 0.0;
  /// Share of hold time spent within hold_radius of the held atom.
  double hold_fraction = 0.0;
  /// sup over recorded times of |X(t) - xi*(t)|.
  double sup_dist_xi = 0.0;
};

/// Simulates the slow-fast system under v* and the partition feedback u.
/// Guard: dt <= eps^2 Delta / 10.
inline MultiscaleSteeredRun run_multiscale_steered(const MultiscaleModel& model, const PiecewisePlan& plan,
                                                   const PartitionPlan& partition, const NoiseSchedule& sched,
                                                   double eps, const TimeGrid& grid, std::uint64_t seed,
                                                   const MultiscaleSteeringOptions& opt = {}) {
  plan.validate();
  if (std::abs(grid.horizon() - plan.horizon()) > 1e-12 || std::abs(grid.start()) > 1e-12)
    throw InvalidInput("run_multiscale_steered: grid must cover the plan horizon");
  if (std::abs(partition.eps - eps) > 1e-15 * std::max(1.0, eps))
    throw InvalidInput("run_multiscale_steered: partition was built for a different eps");
  if (plan.xi_star.states.empty()) throw InvalidInput("run_multiscale_steered: plan has no solved path");
  const double max_dt = eps * partition.travel / 10.0;
  detail::guard_step(grid, max_dt, "run_multiscale_steered");

  MultiscaleSteeringController controller(model, partition);
  MultiscaleSteeredRun out;
  SpaceTimeAccumulator occupation(model.d, grid.horizon(), opt.cell_width, opt.bin_width);
  double hold_time = 0.0, hold_near = 0.0;
  const double dt = grid.dt();
  auto u = [&](double t, const Vec& x, const Vec& y) {
    Vec uj = controller(t, x, y);
    const PartitionCell& c = controller.current_cell();
    const double cost = 0.5 * uj.squaredNorm() * dt;
    switch (c.kind) {
      case PartitionCell::Kind::kTravel:
        out.travel_u_cost += cost;
        break;
      case PartitionCell::Kind::kHold:
        out.hold_u_cost += cost;
        hold_time += dt;
        if ((y - partition.target(c)).norm() <= opt.hold_radius) hold_near += dt;
        break;
      case PartitionCell::Kind::kTail:
        out.tail_u_cost += cost;
        break;
    }
    return uj;
  };
  auto v = [&](double t) { return plan.controls[plan.interval(t)]; };
  StepObserver observer;
  observer.multiscale = [&](std::size_t, double t, double step, const Vec&, const Vec& y) {
    occupation.add(t, step, y);
  };
  SimulationOptions sim;
  sim.max_dt = max_dt;
  sim.replica = opt.replica;
  sim.record_controls = false;
  sim.record_stride = opt.record_stride > 0 ? opt.record_stride : detail::auto_stride(grid.steps(), 2000);
  const ControlledRun run = simulate_multiscale(model, sched, eps, grid, seed, u, v, sim, &observer);
  out.x = run.path;
  out.lambda = occupation.measure();
  out.u_cost = run.u_cost;
  out.v_cost = run.cost;
  out.hold_fraction = hold_time > 0.0 ? hold_near / hold_time : 0.0;
  for (std::size_t j = 0; j <= out.x.grid.steps(); ++j) {
    const double t = out.x.grid.time(j);
    out.sup_dist_xi = std::max(out.sup_dist_xi, (out.x.states[j] - plan.xi_star.at(t)).norm());
  }
  return out;
}

/// X' = b(X, theta(X)), the averaged slow dynamics.
inline Path averaged_ode(const MultiscaleModel& model, const Vec& x0, const TimeGrid& grid) {
  if (!model.theta) throw InvalidInput("averaged_ode: model has no fixed-point map theta");
  if (x0.size() != model.m) throw InvalidInput("averaged_ode: x0 dimension mismatch");
  return euler_ode([&](double, const Vec& x) { return Vec(model.b(x, model.theta(x))); }, x0, grid);
}

}  // namespace ldlab
