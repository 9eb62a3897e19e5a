#pragma once

#include "ldlab/core.hpp"

#include <cstddef>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

namespace ldlab {

/// Uniform grid start = t_0 < t_1 < ... < t_n = horizon.
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double start, double horizon, std::size_t steps)
      : start_(start), horizon_(horizon), steps_(steps) {
    if (steps == 0) throw InvalidInput("TimeGrid: need at least one step");
    if (!(horizon > start)) throw InvalidInput("TimeGrid: horizon must exceed start");
  }

  /// Grid on [0, horizon] with step no larger than max_dt.
  static TimeGrid with_max_step(double horizon, double max_dt) {
    const auto n = static_cast<std::size_t>(std::ceil(horizon / max_dt * (1.0 - 1e-12)));
    return TimeGrid(0.0, horizon, std::max<std::size_t>(1, n));
  }

  double start() const noexcept { return start_; }
  double horizon() const noexcept { return horizon_; }
  std::size_t steps() const noexcept { return steps_; }
  double duration() const noexcept { return horizon_ - start_; }
  double dt() const noexcept { return duration() / static_cast<double>(steps_); }
  double time(std::size_t j) const noexcept {
    return j == steps_ ? horizon_ : start_ + static_cast<double>(j) * dt();
  }

 private:
  double start_ = 0.0;
  double horizon_ = 1.0;
  std::size_t steps_ = 1;
};

/// States sampled on a TimeGrid: states.size() == grid.steps() + 1.
struct Path {
  TimeGrid grid;
  std::vector<Vec> states;

  Path() = default;
  Path(TimeGrid g, std::vector<Vec> s) : grid(g), states(std::move(s)) { validate(); }

  int dim() const { return states.empty() ? 0 : static_cast<int>(states.front().size()); }
  const Vec& front() const { return states.front(); }
  const Vec& back() const { return states.back(); }

  void validate() const {
    if (states.size() != grid.steps() + 1)
      throw InvalidInput("Path: expected " + std::to_string(grid.steps() + 1) + " states, got " +
                         std::to_string(states.size()));
    for (std::size_t j = 0; j < states.size(); ++j)
      if (!states[j].allFinite()) throw InvalidInput("Path: non-finite state at index " + std::to_string(j));
  }

  /// Linear interpolation at time t (clamped to the grid).
  Vec at(double t) const {
    const double u = (t - grid.start()) / grid.dt();
    if (u <= 0.0) return states.front();
    const auto j = static_cast<std::size_t>(u);
    if (j >= grid.steps()) return states.back();
    const double frac = u - static_cast<double>(j);
    return (1.0 - frac) * states[j] + frac * states[j + 1];
  }
};

/// sup_k |a(t_k) - b(t_k)| over the grid of `a`, with `b` interpolated.
inline double sup_distance(const Path& a, const Path& b) {
  double worst = 0.0;
  for (std::size_t j = 0; j <= a.grid.steps(); ++j)
    worst = std::max(worst, (a.states[j] - b.at(a.grid.time(j))).norm());
  return worst;
}

/// CSV with header "t,<prefix>_1..<prefix>_dim". Multiscale runs pass the
/// fast path as `second` to get "t,x_1..x_m,y_1..y_d".
inline void write_path_csv(std::ostream& os, const Path& path, const std::string& prefix = "y",
                           const Path* second = nullptr, const std::string& second_prefix = "y") {
  os << "t";
  for (int c = 0; c < path.dim(); ++c) os << ',' << prefix << '_' << (c + 1);
  if (second)
    for (int c = 0; c < second->dim(); ++c) os << ',' << second_prefix << '_' << (c + 1);
  os << '\n';
  os.precision(17);
  for (std::size_t j = 0; j < path.states.size(); ++j) {
    os << path.grid.time(j);
    for (int c = 0; c < path.dim(); ++c) os << ',' << path.states[j](c);
    if (second)
      for (int c = 0; c < second->dim(); ++c) os << ',' << second->states[j](c);
    os << '\n';
  }
}

}  // namespace ldlab
