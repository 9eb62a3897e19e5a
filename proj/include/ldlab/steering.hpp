// Feedback control that steers the occupation measure of the single-scale
// process onto a finitely supported target: for each atom x_i in turn, a
// travel window of length eps moves the state along the straight segment to
// x_i, then a hold phase pins it at x_i for the rest of its weight p_i.
#pragma once

#include "ldlab/measures.hpp"
#include "ldlab/models.hpp"
#include "ldlab/sde.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace ldlab {

struct Segment {
  enum class Kind { kTravel, kHold };
  Kind kind;
  double start;
  double end;
  std::size_t atom;  // index of the atom travelled to / held at
};

struct SteeringSchedule {
  DiscreteMeasure target;
  std::vector<double> cum_times;  // P_0 = 0 < P_1 < ... < P_k = 1
  double travel_duration = 0.0;
  std::vector<Segment> segments;  // travel, hold, travel, hold, ...

  /// Segment containing t, with segments treated as left-closed [a, b)
  /// (the last one closed at 1). Control is sampled at left endpoints, so a
  /// step starting at t belongs to the segment that contains t.
  std::size_t segment_index(double t) const {
    if (t < -1e-12 || t > 1.0 + 1e-12) throw InvalidInput("steering: t outside [0, 1]");
    for (std::size_t s = 0; s < segments.size(); ++s)
      if (t < segments[s].end - 1e-12) return s;
    return segments.size() - 1;
  }
};

/// Segments travel [P_i, P_i + tau), hold [P_i + tau, P_{i+1}) with tau the
/// travel duration (default eps). Atoms are visited in the listed order.
inline SteeringSchedule build_schedule(const DiscreteMeasure& target, double eps, double travel_duration = 0.0) {
  if (!target.is_probability(1e-9)) throw InvalidInput("build_schedule: target must be a probability measure");
  if (!(eps > 0.0)) throw InvalidInput("build_schedule: eps must be positive");
  const double tau = travel_duration > 0.0 ? travel_duration : eps;
  SteeringSchedule s;
  s.target = target;
  s.travel_duration = tau;
  s.cum_times.push_back(0.0);
  double P = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double p = target.atoms()[i].weight;
    if (!(p > tau))
      throw InvalidInput("build_schedule: travel duration " + std::to_string(tau) + " must be below every weight (atom " +
                         std::to_string(i) + " has " + std::to_string(p) + ")");
    const double next = (i + 1 == target.size()) ? 1.0 : P + p;
    s.segments.push_back({Segment::Kind::kTravel, P, P + tau, i});
    s.segments.push_back({Segment::Kind::kHold, P + tau, next, i});
    P = next;
    s.cum_times.push_back(P);
  }
  return s;
}

namespace detail {

inline Mat inverse_diffusion(const SingleScaleModel& model, const Vec& y) {
  const Mat a = model.diffusion(y);
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success) throw SingularityError("diffusion matrix a(y) is singular");
  const double min_diag = llt.matrixL().toDenseMatrix().diagonal().minCoeff();
  if (!(min_diag > 1e-7 * std::sqrt(std::max(1e-300, a.diagonal().maxCoeff()))))
    throw SingularityError("diffusion matrix a(y) is numerically singular");
  return llt.solve(Mat::Identity(model.d, model.d));
}

}  // namespace detail

/// rho_eps(x_from, x_to; local_t) = sigma^T(y(u)) a^{-1}(y(u)) (x_to - x_from),
/// y(u) = x_from + u (x_to - x_from), u = local_t / eps.
inline Vec travel_control(const SingleScaleModel& model, const Vec& x_from, const Vec& x_to, double eps,
                          double local_t) {
  if (local_t < -1e-12 || local_t > eps * (1.0 + 1e-12)) throw InvalidInput("travel_control: local time outside [0, eps]");
  const double u = std::clamp(local_t / eps, 0.0, 1.0);
  const Vec along = x_from + u * (x_to - x_from);
  return model.sigma(along).transpose() * (detail::inverse_diffusion(model, along) * (x_to - x_from));
}

/// Control at (t, y). Travel: sigma^T(y) grad phi(y) + rho_eps anchored at the
/// state recorded when the travel segment was entered (grad phi is evaluated
/// at y, not at sigma^T(y) y). Hold at x: sigma^T(y) a(y)^{-1} a(x) grad phi(x).
inline Vec feedback_v(const SingleScaleModel& model, const SteeringSchedule& schedule, double t, const Vec& y,
                      const std::optional<Vec>& anchor) {
  const Segment& seg = schedule.segments[schedule.segment_index(t)];
  const Vec& x = schedule.target.atoms()[seg.atom].location;
  const Mat sig_t = model.sigma(y).transpose();
  if (seg.kind == Segment::Kind::kTravel) {
    if (!anchor) throw StateError("feedback_v: travel segment without a recorded anchor");
    const double local = std::clamp(t - seg.start, 0.0, schedule.travel_duration);
    return sig_t * model.gradient(y) + travel_control(model, *anchor, x, schedule.travel_duration, local);
  }
  return sig_t * (detail::inverse_diffusion(model, y) * (model.diffusion(x) * model.gradient(x)));
}

/// Stateful feedback for one run: records the anchor at the first step of
/// each travel segment and tracks which segment each step belongs to.
class SteeringController {
 public:
  SteeringController(const SingleScaleModel& model, const SteeringSchedule& schedule)
      : model_(model), schedule_(schedule) {}

  Vec operator()(double t, const Vec& y) {
    const std::size_t s = schedule_.segment_index(t);
    if (s != current_) {
      current_ = s;
      if (schedule_.segments[s].kind == Segment::Kind::kTravel) anchor_ = y;
    }
    return feedback_v(model_, schedule_, t, y, anchor_);
  }

  std::size_t current_segment() const noexcept { return current_; }
  const std::optional<Vec>& anchor() const noexcept { return anchor_; }

 private:
  const SingleScaleModel& model_;
  const SteeringSchedule& schedule_;
  std::size_t current_ = static_cast<std::size_t>(-1);
  std::optional<Vec> anchor_;
};

struct SteeringOptions {
  /// Bin width for the occupation measure (0 keeps one atom per step).
  double bin_width = 0.01;
  /// Keep every `record_stride`-th state of the path (0 = record ~1000 points).
  std::size_t record_stride = 0;
  std::uint64_t replica = 0;
};

struct SteeredRun {
  ControlledRun run;
  DiscreteMeasure measure;  // normalized occupation measure
  double cost = 0.0;
  double travel_cost = 0.0;
  double hold_cost = 0.0;
  /// End-of-travel states Y(P_i + tau), one per atom.
  std::vector<Vec> travel_endpoints;
};

/// Simulates the controlled process with the steering feedback on [0, 1].
/// Guard: dt <= eps * tau / 10 (eps^2 / 10 for the default tau = eps).
inline SteeredRun run_steered(const SingleScaleModel& model, const SteeringSchedule& schedule,
                              const NoiseSchedule& sched, double eps, const TimeGrid& grid, std::uint64_t seed,
                              const SteeringOptions& opt = {}) {
  if (std::abs(grid.start()) > 1e-12 || std::abs(grid.horizon() - 1.0) > 1e-12)
    throw InvalidInput("run_steered: grid must cover [0, 1]");
  if (schedule.target.dim() != model.d) throw InvalidInput("run_steered: target dimension does not match the model");
  const double max_dt = eps * schedule.travel_duration / 10.0;
  detail::guard_step(grid, max_dt, "run_steered");

  SteeringController controller(model, schedule);
  SteeredRun out;
  OccupationAccumulator occupation(model.d, opt.bin_width > 0.0 ? opt.bin_width : 1.0);
  DiscreteMeasure exact(model.d);
  std::size_t last_segment = static_cast<std::size_t>(-1);
  StepObserver observer;
  observer.single = [&](std::size_t, double t, double dt, const Vec& y) {
    if (opt.bin_width > 0.0)
      occupation.add(y, dt);
    else
      exact.add(y, dt);
    const std::size_t s = schedule.segment_index(t);
    if (s != last_segment) {
      if (schedule.segments[s].kind == Segment::Kind::kHold) out.travel_endpoints.push_back(y);
      last_segment = s;
    }
  };
  // split the running cost by segment kind
  auto control = [&](double t, const Vec& y) {
    Vec v = controller(t, y);
    const double c = 0.5 * v.squaredNorm() * grid.dt();
    if (schedule.segments[controller.current_segment()].kind == Segment::Kind::kTravel)
      out.travel_cost += c;
    else
      out.hold_cost += c;
    return v;
  };
  SimulationOptions sim;
  sim.max_dt = max_dt;
  sim.replica = opt.replica;
  sim.record_controls = false;
  sim.record_stride = opt.record_stride > 0 ? opt.record_stride : detail::auto_stride(grid.steps(), 1000);
  out.run = simulate_single(model, sched, eps, grid, seed, control, sim, &observer);
  out.cost = out.run.cost;
  out.measure = opt.bin_width > 0.0 ? occupation.measure(true) : exact.normalized();
  return out;
}

/// Empirical measure (1/n) sum delta_{xi_i} of n draws.
inline DiscreteMeasure sample_target(const std::function<Vec(RandomStream&)>& sampler, std::size_t n,
                                     std::uint64_t seed) {
  if (n == 0) throw InvalidInput("sample_target: need at least one sample");
  RandomStream rng(seed, 0, Channel::kSampling);
  Vec first = sampler(rng);
  DiscreteMeasure out(static_cast<int>(first.size()));
  out.add(first, 1.0 / static_cast<double>(n));
  for (std::size_t i = 1; i < n; ++i) out.add(sampler(rng), 1.0 / static_cast<double>(n));
  return out.merged();
}

/// Mass of `mu` within `radius` of `center`.
inline double mass_near(const DiscreteMeasure& mu, const Vec& center, double radius) {
  double m = 0.0;
  for (const auto& a : mu.atoms())
    if ((a.location - center).norm() <= radius) m += a.weight;
  return m;
}

}  // namespace ldlab
