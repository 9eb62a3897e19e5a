// Euler-Maruyama simulation of the single-scale and slow-fast SDEs, with
// optional feedback controls, running-cost ledgers and seeded noise.
#pragma once

#include "ldlab/core.hpp"
#include "ldlab/models.hpp"
#include "ldlab/path.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace ldlab {

inline constexpr double kDivergenceBound = 1e8;

struct SimulationOptions {
  /// Largest admissible step; 0 selects the default guard dt <= eps / 10.
  double max_dt = 0.0;
  /// Keep every `record_stride`-th state (must divide the step count).
  std::size_t record_stride = 1;
  bool record_controls = true;
  std::uint64_t replica = 0;
};

/// Per-step hook: (step index, left time, dt, state before the step).
/// For multiscale runs the state is the fast component and `slow` is X.
struct StepObserver {
  std::function<void(std::size_t, double, double, const Vec&)> single;
  std::function<void(std::size_t, double, double, const Vec& x, const Vec& y)> multiscale;
};

struct ControlledRun {
  Path path;  // Y (single scale) or X (multiscale)
  Path fast;  // Y for multiscale runs, empty otherwise
  std::vector<Vec> control_trace;       // v per step
  std::vector<Vec> fast_control_trace;  // u per step (multiscale)
  double cost = 0.0;    // 1/2 sum |v|^2 dt
  double u_cost = 0.0;  // 1/2 sum |u|^2 dt (multiscale)
};

namespace detail {

inline void guard_step(const TimeGrid& grid, double max_dt, const char* what) {
  if (grid.dt() > max_dt * (1.0 + 1e-9)) {
    const auto steps = static_cast<std::size_t>(std::ceil(grid.duration() / max_dt * (1.0 - 1e-12)));
    throw StiffnessGuardError(std::string(what) + ": step " + std::to_string(grid.dt()) + " exceeds " +
                                  std::to_string(max_dt),
                              steps);
  }
}

inline void check_divergence(const Vec& v, std::size_t step, const char* what) {
  for (Eigen::Index c = 0; c < v.size(); ++c)
    if (!(std::abs(v(c)) <= kDivergenceBound))
      throw DivergenceError(std::string(what) + ": state left [-1e8, 1e8] in component " + std::to_string(c), step);
}

/// Largest divisor of `steps` that keeps at least `points` recorded states.
inline std::size_t auto_stride(std::size_t steps, std::size_t points) {
  for (std::size_t s = std::max<std::size_t>(1, steps / points); s > 1; --s)
    if (steps % s == 0) return s;
  return 1;
}

inline TimeGrid recorded_grid(const TimeGrid& grid, std::size_t stride) {
  if (stride == 0 || grid.steps() % stride != 0)
    throw InvalidInput("record_stride must divide the number of steps");
  return TimeGrid(grid.start(), grid.horizon(), grid.steps() / stride);
}

}  // namespace detail

/// No control: v = 0.
struct NoControl {
  template <typename... Args>
  std::optional<Vec> operator()(Args&&...) const {
    return std::nullopt;
  }
};

/// Y_{j+1} = Y_j - (dt/eps) psi(Y_j) + (dt/eps) sigma(Y_j) v_j + (s/sqrt(eps)) sigma(Y_j) dB_j
///
/// `control(t, y)` returns std::optional<Vec> (nullopt = 0) or a Vec of size r;
/// it is evaluated at the left endpoint of each step and may keep state.
template <typename Control = NoControl>
ControlledRun simulate_single(const SingleScaleModel& model, const NoiseSchedule& sched, double eps,
                              const TimeGrid& grid, std::uint64_t seed, Control&& control = {},
                              const SimulationOptions& opt = {}, const StepObserver* observer = nullptr) {
  if (!(eps > 0.0)) throw InvalidInput("simulate_single: eps must be positive");
  model.validate();
  detail::guard_step(grid, opt.max_dt > 0.0 ? opt.max_dt : eps / 10.0, "simulate_single");
  const double s = sched(eps);
  const double dt = grid.dt();
  const double drift_scale = dt / eps;
  const double noise_scale = s / std::sqrt(eps);
  const NoiseStream noise(seed, opt.replica, Channel::kSlowNoise);

  ControlledRun run;
  const TimeGrid rec = detail::recorded_grid(grid, opt.record_stride);
  std::vector<Vec> states;
  states.reserve(rec.steps() + 1);
  Vec y = model.y0;
  states.push_back(y);
  if (opt.record_controls) run.control_trace.reserve(grid.steps());

  for (std::size_t j = 0; j < grid.steps(); ++j) {
    const double t = grid.time(j);
    if (observer && observer->single) observer->single(j, t, dt, y);
    const Mat sig = model.sigma(y);
    Vec next = y - drift_scale * model.psi(y);
    Vec v;
    if constexpr (std::is_same_v<std::decay_t<decltype(control(t, y))>, std::optional<Vec>>) {
      auto maybe = control(t, y);
      v = maybe ? *maybe : Vec::Zero(model.r);
    } else {
      v = control(t, y);
    }
    if (v.size() != model.r) throw InvalidInput("simulate_single: control has wrong dimension");
    next += drift_scale * (sig * v);
    run.cost += 0.5 * v.squaredNorm() * dt;
    if (opt.record_controls) run.control_trace.push_back(v);
    if (noise_scale != 0.0) next += noise_scale * (sig * noise.increment(j, model.r, dt));
    detail::check_divergence(next, j + 1, "simulate_single");
    y = next;
    if ((j + 1) % opt.record_stride == 0) states.push_back(y);
  }
  run.path = Path(rec, std::move(states));
  return run;
}

/// X_{j+1} = X_j + (b + alpha v) dt + s sqrt(eps) alpha dW_j
/// Y_{j+1} = Y_j - (dt/eps) [grad_y U - u] + (s/sqrt(eps)) dB_j
///
/// `u(t, x, y)` and `v(t)` follow the same optional-return convention as
/// simulate_single. W and B come from independent channels.
template <typename FastControl = NoControl, typename SlowControl = NoControl>
ControlledRun simulate_multiscale(const MultiscaleModel& model, const NoiseSchedule& sched, double eps,
                                  const TimeGrid& grid, std::uint64_t seed, FastControl&& u = {},
                                  SlowControl&& v = {}, const SimulationOptions& opt = {},
                                  const StepObserver* observer = nullptr) {
  if (!(eps > 0.0)) throw InvalidInput("simulate_multiscale: eps must be positive");
  model.validate();
  detail::guard_step(grid, opt.max_dt > 0.0 ? opt.max_dt : eps / 10.0, "simulate_multiscale");
  const double s = sched(eps);
  const double dt = grid.dt();
  const double slow_noise = s * std::sqrt(eps);
  const double fast_noise = s / std::sqrt(eps);
  const NoiseStream W(seed, opt.replica, Channel::kSlowNoise);
  const NoiseStream B(seed, opt.replica, Channel::kFastNoise);

  ControlledRun run;
  const TimeGrid rec = detail::recorded_grid(grid, opt.record_stride);
  std::vector<Vec> xs, ys;
  xs.reserve(rec.steps() + 1);
  ys.reserve(rec.steps() + 1);
  Vec x = model.x0, y = model.y0;
  xs.push_back(x);
  ys.push_back(y);
  if (opt.record_controls) {
    run.control_trace.reserve(grid.steps());
    run.fast_control_trace.reserve(grid.steps());
  }

  for (std::size_t j = 0; j < grid.steps(); ++j) {
    const double t = grid.time(j);
    if (observer && observer->multiscale) observer->multiscale(j, t, dt, x, y);
    Vec uj, vj;
    if constexpr (std::is_same_v<std::decay_t<decltype(u(t, x, y))>, std::optional<Vec>>) {
      auto maybe = u(t, x, y);
      uj = maybe ? *maybe : Vec::Zero(model.d);
    } else {
      uj = u(t, x, y);
    }
    if constexpr (std::is_same_v<std::decay_t<decltype(v(t))>, std::optional<Vec>>) {
      auto maybe = v(t);
      vj = maybe ? *maybe : Vec::Zero(model.k);
    } else {
      vj = v(t);
    }
    if (uj.size() != model.d) throw InvalidInput("simulate_multiscale: u has wrong dimension");
    if (vj.size() != model.k) throw InvalidInput("simulate_multiscale: v has wrong dimension");
    const Mat a = model.alpha(x);
    Vec xn = x + (model.b(x, y) + a * vj) * dt;
    Vec yn = y - (dt / eps) * (model.gradient_y(x, y) - uj);
    if (slow_noise != 0.0) {
      xn += slow_noise * (a * W.increment(j, model.k, dt));
      yn += fast_noise * B.increment(j, model.d, dt);
    }
    run.cost += 0.5 * vj.squaredNorm() * dt;
    run.u_cost += 0.5 * uj.squaredNorm() * dt;
    if (opt.record_controls) {
      run.control_trace.push_back(vj);
      run.fast_control_trace.push_back(uj);
    }
    detail::check_divergence(xn, j + 1, "simulate_multiscale (slow)");
    detail::check_divergence(yn, j + 1, "simulate_multiscale (fast)");
    x = xn;
    y = yn;
    if ((j + 1) % opt.record_stride == 0) {
      xs.push_back(x);
      ys.push_back(y);
    }
  }
  run.path = Path(rec, std::move(xs));
  run.fast = Path(rec, std::move(ys));
  return run;
}

/// Y on [a, b] reinterpreted as Z(t) = Y(t eps) on [a/eps, b/eps].
inline Path time_rescale(const Path& path, double eps) {
  if (!(eps > 0.0)) throw InvalidInput("time_rescale: eps must be positive");
  return Path(TimeGrid(path.grid.start() / eps, path.grid.horizon() / eps, path.grid.steps()), path.states);
}

/// Exact Ornstein-Uhlenbeck dX = -rate X dt + noise_amp dB on the grid,
/// driven by the same Brownian increments dB_j as the Euler engine
/// (channel kSlowNoise). The stochastic integral over each step is sampled
/// jointly with dB_j, the conditional remainder using the auxiliary channel.
inline Path ou_exact(double rate, double noise_amp, const TimeGrid& grid, std::uint64_t seed, const Vec& x0,
                     std::uint64_t replica = 0) {
  if (!(rate > 0.0)) throw InvalidInput("ou_exact: rate must be positive");
  const double dt = grid.dt();
  const double decay = std::exp(-rate * dt);
  const double var = (1.0 - std::exp(-2.0 * rate * dt)) / (2.0 * rate);
  const double c = (1.0 - decay) / (rate * dt);  // regression of the integral on dB
  const double resid = std::sqrt(std::max(0.0, var - c * c * dt));
  const NoiseStream noise(seed, replica, Channel::kSlowNoise);
  const NoiseStream aux(seed, replica, Channel::kAuxiliary);
  const int dim = static_cast<int>(x0.size());
  std::vector<Vec> states;
  states.reserve(grid.steps() + 1);
  Vec x = x0;
  states.push_back(x);
  for (std::size_t j = 0; j < grid.steps(); ++j) {
    const Vec dB = noise.increment(j, dim, dt);
    const Vec z = aux.increment(j, dim, 1.0);
    x = decay * x + noise_amp * (c * dB + resid * z);
    states.push_back(x);
  }
  return Path(grid, std::move(states));
}

/// Explicit Euler for x' = f(t, x).
template <typename F>
Path euler_ode(F&& f, const Vec& x0, const TimeGrid& grid) {
  std::vector<Vec> states;
  states.reserve(grid.steps() + 1);
  Vec x = x0;
  states.push_back(x);
  for (std::size_t j = 0; j < grid.steps(); ++j) {
    x = x + grid.dt() * f(grid.time(j), x);
    detail::check_divergence(x, j + 1, "euler_ode");
    states.push_back(x);
  }
  return Path(grid, std::move(states));
}

}  // namespace ldlab
