// Finite discrete measures, space-time occupation measures and the exact
// bounded-Lipschitz distance between them.
//
// For measures of equal total mass, sup{ int f d(mu - nu) : |f| <= 1,
// Lip(f) <= 1 } coincides with the optimal transport cost under the
// truncated metric min(|x - y|, 2): shifting f by a constant does not change
// the integral, so the bound |f| <= 1 only limits the oscillation of f to 2.
// The distance is therefore computed exactly by the transport solver.
#pragma once

#include "ldlab/core.hpp"
#include "ldlab/path.hpp"
#include "ldlab/transport.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>
#include <vector>

namespace ldlab {

struct Atom {
  Vec location;
  double weight = 0.0;
};

class DiscreteMeasure {
 public:
  DiscreteMeasure() = default;
  explicit DiscreteMeasure(int dim) : dim_(dim) { check_dim(dim, "DiscreteMeasure"); }
  DiscreteMeasure(int dim, std::vector<Atom> atoms) : dim_(dim), atoms_(std::move(atoms)) {
    check_dim(dim, "DiscreteMeasure");
    validate();
  }

  static DiscreteMeasure dirac(const Vec& x) { return DiscreteMeasure(static_cast<int>(x.size()), {{x, 1.0}}); }

  /// sum_i weights[i] * delta_{locations[i]}
  static DiscreteMeasure from_atoms(const std::vector<Vec>& locations, const std::vector<double>& weights) {
    if (locations.empty()) throw InvalidInput("DiscreteMeasure: no atoms");
    if (locations.size() != weights.size()) throw InvalidInput("DiscreteMeasure: locations/weights size mismatch");
    std::vector<Atom> atoms;
    for (std::size_t i = 0; i < locations.size(); ++i) atoms.push_back({locations[i], weights[i]});
    return DiscreteMeasure(static_cast<int>(locations.front().size()), std::move(atoms));
  }

  int dim() const noexcept { return dim_; }
  const std::vector<Atom>& atoms() const noexcept { return atoms_; }
  std::size_t size() const noexcept { return atoms_.size(); }
  bool empty() const noexcept { return atoms_.empty(); }

  void add(const Vec& x, double w) {
    if (x.size() != dim_) throw InvalidInput("DiscreteMeasure::add: dimension mismatch");
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidInput("DiscreteMeasure::add: invalid weight");
    if (!x.allFinite()) throw InvalidInput("DiscreteMeasure::add: non-finite location");
    atoms_.push_back({x, w});
  }

  double total_mass() const {
    double s = 0.0;
    for (const auto& a : atoms_) s += a.weight;
    return s;
  }

  bool is_probability(double tol = 1e-12) const { return std::abs(total_mass() - 1.0) <= tol; }

  DiscreteMeasure scaled(double factor) const {
    DiscreteMeasure out(dim_);
    out.atoms_ = atoms_;
    for (auto& a : out.atoms_) a.weight *= factor;
    return out;
  }

  DiscreteMeasure normalized() const {
    const double m = total_mass();
    if (!(m > 0.0)) throw InvalidInput("DiscreteMeasure::normalized: zero mass");
    return scaled(1.0 / m);
  }

  /// Coincident atoms merged, zero-weight atoms dropped, locations sorted.
  DiscreteMeasure merged() const {
    std::vector<Atom> sorted = atoms_;
    std::sort(sorted.begin(), sorted.end(), [](const Atom& a, const Atom& b) {
      return std::lexicographical_compare(a.location.data(), a.location.data() + a.location.size(),
                                          b.location.data(), b.location.data() + b.location.size());
    });
    DiscreteMeasure out(dim_);
    for (const auto& a : sorted) {
      if (a.weight <= 0.0) continue;
      if (!out.atoms_.empty() && out.atoms_.back().location == a.location)
        out.atoms_.back().weight += a.weight;
      else
        out.atoms_.push_back(a);
    }
    return out;
  }

  /// Snaps every atom to the lattice h * Z^dim. Moves mass by at most
  /// h * sqrt(dim) / 2 per unit, which bounds the change in d_bl.
  DiscreteMeasure coarsened(double h) const {
    if (h <= 0.0) return merged();
    DiscreteMeasure out(dim_);
    for (const auto& a : atoms_) {
      Vec snapped = a.location;
      for (int c = 0; c < dim_; ++c) snapped(c) = h * std::round(a.location(c) / h);
      out.atoms_.push_back({snapped, a.weight});
    }
    return out.merged();
  }

  Vec mean() const {
    const double m = total_mass();
    if (!(m > 0.0)) throw InvalidInput("DiscreteMeasure::mean: zero mass");
    Vec acc = Vec::Zero(dim_);
    for (const auto& a : atoms_) acc += a.weight * a.location;
    return acc / m;
  }

  /// Integral of a scalar function against the measure.
  template <typename F>
  double integrate(F&& f) const {
    double acc = 0.0;
    for (const auto& a : atoms_) acc += a.weight * f(a.location);
    return acc;
  }

  /// Weighted union, weights[k] applied to parts[k].
  static DiscreteMeasure mixture(const std::vector<DiscreteMeasure>& parts, const std::vector<double>& weights) {
    if (parts.empty()) throw InvalidInput("mixture: no components");
    DiscreteMeasure out(parts.front().dim());
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (parts[k].dim() != out.dim()) throw InvalidInput("mixture: dimension mismatch");
      if (weights[k] <= 0.0) continue;
      for (const auto& a : parts[k].atoms_) out.atoms_.push_back({a.location, a.weight * weights[k]});
    }
    return out.merged();
  }

  void validate() const {
    for (const auto& a : atoms_) {
      if (a.location.size() != dim_) throw InvalidInput("DiscreteMeasure: atom dimension mismatch");
      if (!a.location.allFinite()) throw InvalidInput("DiscreteMeasure: non-finite location");
      if (!(a.weight >= 0.0) || !std::isfinite(a.weight)) throw InvalidInput("DiscreteMeasure: invalid weight");
    }
  }

 private:
  int dim_ = 1;
  std::vector<Atom> atoms_;
};

/// Measure on R^dim x [0, T] whose time marginal is Lebesgue. Each cell
/// [a, b) carries the (probability) disintegration slice on that interval.
class SpaceTimeMeasure {
 public:
  struct Cell {
    double start;
    double end;
    DiscreteMeasure slice;
  };

  SpaceTimeMeasure() = default;
  SpaceTimeMeasure(int dim, double horizon, std::vector<Cell> cells)
      : dim_(dim), horizon_(horizon), cells_(std::move(cells)) {
    check_dim(dim, "SpaceTimeMeasure");
    validate();
  }

  /// Same slice for all of [0, horizon].
  static SpaceTimeMeasure constant(const DiscreteMeasure& slice, double horizon) {
    return SpaceTimeMeasure(slice.dim(), horizon, {{0.0, horizon, slice}});
  }

  int dim() const noexcept { return dim_; }
  double horizon() const noexcept { return horizon_; }
  const std::vector<Cell>& cells() const noexcept { return cells_; }

  /// Index of the cell containing t (half-open cells; t = horizon maps to the last).
  std::size_t cell_index(double t) const {
    auto it = std::upper_bound(cells_.begin(), cells_.end(), t,
                               [](double value, const Cell& c) { return value < c.start; });
    if (it == cells_.begin()) return 0;
    return static_cast<std::size_t>(std::distance(cells_.begin(), it)) - 1;
  }

  const DiscreteMeasure& slice_at(double t) const { return cells_[cell_index(t)].slice; }

  /// Mass of R^d x [0, t].
  double mass_until(double t) const {
    double m = 0.0;
    for (const auto& c : cells_) {
      if (t <= c.start) break;
      m += c.slice.total_mass() * (std::min(t, c.end) - c.start);
    }
    return m;
  }

  /// Time cells merged onto a uniform grid of width `cell_width` (slices are
  /// time-weighted mixtures) and space snapped to the lattice h * Z^d.
  SpaceTimeMeasure coarsened(double h, double cell_width) const {
    if (!(cell_width > 0.0)) throw InvalidInput("coarsened: cell width must be positive");
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(horizon_ / cell_width - 1e-9)));
    std::vector<Cell> out;
    std::size_t k = 0;
    for (std::size_t c = 0; c < n; ++c) {
      const double a = static_cast<double>(c) * cell_width;
      const double b = (c + 1 == n) ? horizon_ : std::min(horizon_, a + cell_width);
      std::vector<DiscreteMeasure> parts;
      std::vector<double> weights;
      while (k < cells_.size() && cells_[k].end <= a) ++k;
      for (std::size_t q = k; q < cells_.size() && cells_[q].start < b; ++q) {
        const double overlap = std::min(b, cells_[q].end) - std::max(a, cells_[q].start);
        if (overlap <= 0.0) continue;
        parts.push_back(cells_[q].slice);
        weights.push_back(overlap / (b - a));
      }
      out.push_back({a, b, DiscreteMeasure::mixture(parts, weights).coarsened(h)});
    }
    return SpaceTimeMeasure(dim_, horizon_, std::move(out));
  }

  void validate() const {
    if (!(horizon_ > 0.0)) throw InvalidInput("SpaceTimeMeasure: horizon must be positive");
    if (cells_.empty()) throw InvalidInput("SpaceTimeMeasure: no cells");
    const double tol = 1e-9 * std::max(1.0, horizon_);
    if (std::abs(cells_.front().start) > tol) throw InvalidInput("SpaceTimeMeasure: cells must start at 0");
    if (std::abs(cells_.back().end - horizon_) > tol)
      throw InvalidInput("SpaceTimeMeasure: cells must end at the horizon");
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      const auto& c = cells_[k];
      if (!(c.end > c.start)) throw InvalidInput("SpaceTimeMeasure: empty cell");
      if (k > 0 && std::abs(c.start - cells_[k - 1].end) > tol)
        throw InvalidInput("SpaceTimeMeasure: cells must tile [0, T] without gaps or overlap");
      if (c.slice.dim() != dim_) throw InvalidInput("SpaceTimeMeasure: slice dimension mismatch");
      if (!c.slice.is_probability(1e-9))
        throw InvalidInput("SpaceTimeMeasure: slice mass must be 1 (cell " + std::to_string(k) + ")");
    }
  }

 private:
  int dim_ = 1;
  double horizon_ = 1.0;
  std::vector<Cell> cells_;
};

// ---------------------------------------------------------------------------
// Occupation measures of paths (left-endpoint rule).

inline DiscreteMeasure from_path(const Path& path, bool normalize) {
  if (path.states.size() < 2) throw InvalidInput("from_path: path needs at least 2 grid points");
  const double dt = path.grid.dt();
  const double w = normalize ? dt / path.grid.duration() : dt;
  DiscreteMeasure out(path.dim());
  for (std::size_t j = 0; j + 1 < path.states.size(); ++j) out.add(path.states[j], w);
  return out;
}

inline SpaceTimeMeasure space_time_from_path(const Path& path) {
  if (path.states.size() < 2) throw InvalidInput("space_time_from_path: path needs at least 2 grid points");
  if (std::abs(path.grid.start()) > 0.0) throw InvalidInput("space_time_from_path: path must start at t = 0");
  std::vector<SpaceTimeMeasure::Cell> cells;
  cells.reserve(path.grid.steps());
  for (std::size_t j = 0; j < path.grid.steps(); ++j)
    cells.push_back({path.grid.time(j), path.grid.time(j + 1), DiscreteMeasure::dirac(path.states[j])});
  return SpaceTimeMeasure(path.dim(), path.grid.horizon(), std::move(cells));
}

namespace detail {

struct BinKey {
  std::array<std::int64_t, kMaxDim> k{};
  int dim = 0;
  bool operator==(const BinKey& o) const noexcept {
    for (int c = 0; c < dim; ++c)
      if (k[c] != o.k[c]) return false;
    return dim == o.dim;
  }
};

struct BinKeyHash {
  std::size_t operator()(const BinKey& key) const noexcept {
    std::uint64_t h = 0x243F6A8885A308D3ULL;
    for (int c = 0; c < key.dim; ++c) h = splitmix64(h ^ static_cast<std::uint64_t>(key.k[c]));
    return static_cast<std::size_t>(h);
  }
};

inline BinKey bin_of(const Vec& y, double h) {
  BinKey key;
  key.dim = static_cast<int>(y.size());
  for (int c = 0; c < key.dim; ++c) key.k[c] = std::llround(y(c) / h);
  return key;
}

}  // namespace detail

/// Streaming occupation measure on the lattice h * Z^d.
class OccupationAccumulator {
 public:
  OccupationAccumulator(int dim, double h) : dim_(dim), h_(h) {
    if (!(h > 0.0)) throw InvalidInput("OccupationAccumulator: bin width must be positive");
  }

  void add(const Vec& y, double weight) {
    const detail::BinKey key = detail::bin_of(y, h_);
    if (last_ && last_key_ == key) {
      *last_ += weight;
      return;
    }
    double& slot = bins_[key];
    slot += weight;
    last_ = &slot;
    last_key_ = key;
  }

  double bin_width() const noexcept { return h_; }

  DiscreteMeasure measure(bool normalize = false) const {
    DiscreteMeasure out(dim_);
    for (const auto& [key, w] : bins_) {
      Vec loc(dim_);
      for (int c = 0; c < dim_; ++c) loc(c) = h_ * static_cast<double>(key.k[c]);
      out.add(loc, w);
    }
    out = out.merged();
    return normalize ? out.normalized() : out;
  }

 private:
  int dim_;
  double h_;
  std::unordered_map<detail::BinKey, double, detail::BinKeyHash> bins_;
  double* last_ = nullptr;
  detail::BinKey last_key_;
};

/// Streaming space-time occupation measure: uniform time cells of width
/// `cell_width` on [0, horizon], space binned at h.
class SpaceTimeAccumulator {
 public:
  SpaceTimeAccumulator(int dim, double horizon, double cell_width, double h)
      : dim_(dim), horizon_(horizon), width_(cell_width) {
    if (!(cell_width > 0.0)) throw InvalidInput("SpaceTimeAccumulator: cell width must be positive");
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(horizon / cell_width - 1e-9)));
    cells_.assign(n, OccupationAccumulator(dim, h));
  }

  /// Occupation of state y over [t, t + dt).
  void add(double t, double dt, const Vec& y) {
    double a = t;
    const double b = t + dt;
    while (a < b - 1e-15) {
      const std::size_t c = std::min(cells_.size() - 1, static_cast<std::size_t>(std::max(0.0, a / width_)));
      const double cell_end = (c + 1 == cells_.size()) ? b : std::min(b, static_cast<double>(c + 1) * width_);
      const double piece = std::max(cell_end - a, 0.0);
      if (piece <= 0.0) break;
      cells_[c].add(y, piece);
      a = cell_end;
    }
  }

  SpaceTimeMeasure measure() const {
    std::vector<SpaceTimeMeasure::Cell> out;
    for (std::size_t c = 0; c < cells_.size(); ++c) {
      const double a = static_cast<double>(c) * width_;
      const double b = (c + 1 == cells_.size()) ? horizon_ : (static_cast<double>(c) + 1) * width_;
      out.push_back({a, b, cells_[c].measure(true)});
    }
    return SpaceTimeMeasure(dim_, horizon_, std::move(out));
  }

 private:
  int dim_;
  double horizon_;
  double width_;
  std::vector<OccupationAccumulator> cells_;
};

// ---------------------------------------------------------------------------
// Distances.

namespace detail {

inline void require_comparable(const DiscreteMeasure& mu, const DiscreteMeasure& nu, const char* what) {
  if (mu.dim() != nu.dim()) throw InvalidInput(std::string(what) + ": dimension mismatch");
  if (mu.empty() || nu.empty()) throw InvalidInput(std::string(what) + ": empty measure");
}

inline double transport_cost(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double cap) {
  const DiscreteMeasure a = mu.merged();
  const DiscreteMeasure b = nu.merged();
  std::vector<double> sa, sb;
  for (const auto& x : a.atoms()) sa.push_back(x.weight);
  for (const auto& x : b.atoms()) sb.push_back(x.weight);
  const auto& aa = a.atoms();
  const auto& bb = b.atoms();
  const auto result = solve_transport(sa, sb, [&](std::size_t i, std::size_t j) {
    const double d = (aa[i].location - bb[j].location).norm();
    return std::min(d, cap);
  });
  return std::max(0.0, result.cost);
}

}  // namespace detail

/// Bounded-Lipschitz distance between probability measures; value in [0, 2].
inline double dbl_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  detail::require_comparable(mu, nu, "dbl_distance");
  if (!mu.is_probability(1e-9) || !nu.is_probability(1e-9))
    throw InvalidInput("dbl_distance: inputs must be probability measures");
  return std::min(2.0, detail::transport_cost(mu, nu, 2.0));
}

/// Kantorovich (W1) distance between measures of equal mass, no cap.
inline double wasserstein1(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  detail::require_comparable(mu, nu, "wasserstein1");
  return detail::transport_cost(mu, nu, std::numeric_limits<double>::infinity());
}

namespace detail {

/// Atoms (y, s_mid) of a space-time measure on the given time breakpoints.
inline DiscreteMeasure refine(const SpaceTimeMeasure& m, const std::vector<double>& breaks) {
  DiscreteMeasure out(m.dim() + 1);
  for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
    const double a = breaks[k], b = breaks[k + 1];
    if (b - a <= 0.0) continue;
    const double mid = 0.5 * (a + b);
    for (const auto& atom : m.slice_at(mid).atoms()) {
      Vec z(m.dim() + 1);
      z.head(m.dim()) = atom.location;
      z(m.dim()) = mid;
      out.add(z, atom.weight * (b - a));
    }
  }
  return out;
}

}  // namespace detail

/// Bounded-Lipschitz distance on R^d x [0, T] with the sum metric
/// |y - y'| + |s - s'|, evaluated on the common refinement of both cell
/// partitions (each refined piece represented at its midpoint).
inline double dbl_space_time(const SpaceTimeMeasure& mu, const SpaceTimeMeasure& nu) {
  if (mu.dim() != nu.dim()) throw InvalidInput("dbl_space_time: dimension mismatch");
  if (std::abs(mu.horizon() - nu.horizon()) > 1e-9 * std::max(1.0, mu.horizon()))
    throw InvalidInput("dbl_space_time: horizon mismatch");
  std::vector<double> breaks;
  for (const auto& c : mu.cells()) breaks.push_back(c.start);
  for (const auto& c : nu.cells()) breaks.push_back(c.start);
  breaks.push_back(mu.horizon());
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end(),
                           [](double a, double b) { return std::abs(a - b) < 1e-12; }),
               breaks.end());
  const DiscreteMeasure a = detail::refine(mu, breaks);
  const DiscreteMeasure b = detail::refine(nu, breaks);
  const int d = mu.dim();
  const DiscreteMeasure am = a.merged(), bm = b.merged();
  std::vector<double> sa, sb;
  for (const auto& x : am.atoms()) sa.push_back(x.weight);
  for (const auto& x : bm.atoms()) sb.push_back(x.weight);
  const auto& aa = am.atoms();
  const auto& bb = bm.atoms();
  const auto result = solve_transport(sa, sb, [&](std::size_t i, std::size_t j) {
    const double dy = (aa[i].location.head(d) - bb[j].location.head(d)).norm();
    const double ds = std::abs(aa[i].location(d) - bb[j].location(d));
    return std::min(dy + ds, 2.0);
  });
  return std::clamp(result.cost, 0.0, 2.0 * mu.horizon());
}

/// Normalized second moment sum w |z|^2 / sum w.
inline double second_moment(const DiscreteMeasure& mu) {
  const double m = mu.total_mass();
  if (!(m > 0.0)) throw InvalidInput("second_moment: zero-mass measure");
  return mu.integrate([](const Vec& z) { return z.squaredNorm(); }) / m;
}

// ---------------------------------------------------------------------------
// JSON: {"dim": d, "atoms": [[[loc...], w], ...]}; space-time adds
// "horizon" and "cells": [{"start": a, "end": b, "atoms": [...]}, ...].

inline nlohmann::json atoms_to_json(const DiscreteMeasure& m) {
  nlohmann::json atoms = nlohmann::json::array();
  for (const auto& a : m.atoms()) {
    std::vector<double> loc(a.location.data(), a.location.data() + a.location.size());
    atoms.push_back(nlohmann::json::array({loc, a.weight}));
  }
  return atoms;
}

inline nlohmann::json to_json(const DiscreteMeasure& m) { return {{"dim", m.dim()}, {"atoms", atoms_to_json(m)}}; }

inline DiscreteMeasure atoms_from_json(int dim, const nlohmann::json& atoms) {
  DiscreteMeasure out(dim);
  for (const auto& entry : atoms) {
    if (!entry.is_array() || entry.size() != 2) throw InvalidInput("measure JSON: atom must be [[loc...], w]");
    const auto loc = entry[0].get<std::vector<double>>();
    if (static_cast<int>(loc.size()) != dim) throw InvalidInput("measure JSON: atom dimension mismatch");
    Vec x(dim);
    for (int c = 0; c < dim; ++c) x(c) = loc[static_cast<std::size_t>(c)];
    out.add(x, entry[1].get<double>());
  }
  return out;
}

inline DiscreteMeasure discrete_measure_from_json(const nlohmann::json& j) {
  const int dim = j.at("dim").get<int>();
  check_dim(dim, "measure JSON");
  return atoms_from_json(dim, j.at("atoms"));
}

inline nlohmann::json to_json(const SpaceTimeMeasure& m) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : m.cells()) cells.push_back({{"start", c.start}, {"end", c.end}, {"atoms", atoms_to_json(c.slice)}});
  return {{"dim", m.dim()}, {"horizon", m.horizon()}, {"cells", cells}};
}

inline SpaceTimeMeasure space_time_measure_from_json(const nlohmann::json& j) {
  const int dim = j.at("dim").get<int>();
  check_dim(dim, "space-time measure JSON");
  std::vector<SpaceTimeMeasure::Cell> cells;
  for (const auto& c : j.at("cells"))
    cells.push_back({c.at("start").get<double>(), c.at("end").get<double>(), atoms_from_json(dim, c.at("atoms"))});
  return SpaceTimeMeasure(dim, j.at("horizon").get<double>(), std::move(cells));
}

}  // namespace ldlab
