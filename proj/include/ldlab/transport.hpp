// Exact balanced transportation problem solved with a primal network simplex.
//
// The basis is kept as a spanning tree over sources, sinks and an artificial
// root. Artificial root arcs start with all the flow and a prohibitive cost,
// and the tree is kept strongly feasible (zero-flow arcs point away from the
// root) so degenerate pivots cannot cycle.
#pragma once

#include "ldlab/core.hpp"

#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace ldlab {

struct TransportResult {
  double cost = 0.0;
  std::size_t iterations = 0;
  /// Flow still routed through the artificial root (should be ~0).
  double artificial_flow = 0.0;
};

namespace detail {

class NetworkSimplex {
 public:
  using CostFn = std::function<double(std::size_t, std::size_t)>;

  NetworkSimplex(std::vector<double> supply, std::vector<double> demand, CostFn cost)
      : supply_(std::move(supply)), demand_(std::move(demand)), cost_fn_(std::move(cost)) {
    n_ = supply_.size();
    m_ = demand_.size();
    nodes_ = n_ + m_ + 1;
    root_ = n_ + m_;
  }

  TransportResult solve() {
    init_costs();
    init_tree();
    const std::size_t total = n_ * m_;
    const std::size_t block =
        std::max<std::size_t>(16, static_cast<std::size_t>(std::sqrt(static_cast<double>(total))));
    std::size_t cursor = 0;
    std::size_t iterations = 0;
    const double tol = 1e-12 * std::max(1.0, max_cost_);
    rebuild();
    while (true) {
      // block pricing: best candidate inside the first block that has one
      std::size_t best = total;
      double best_rc = -tol;
      std::size_t scanned = 0;
      while (scanned < total) {
        const std::size_t chunk = std::min(block, total - scanned);
        for (std::size_t k = 0; k < chunk; ++k) {
          const std::size_t a = cursor;
          cursor = (cursor + 1 == total) ? 0 : cursor + 1;
          const std::size_t i = a / m_, j = a % m_;
          const double rc = cost_[a] + pot_[i] - pot_[n_ + j];
          if (rc < best_rc) {
            best_rc = rc;
            best = a;
          }
        }
        scanned += chunk;
        if (best != total) break;
      }
      if (best == total) break;
      pivot(best / m_, n_ + best % m_, cost_[best]);
      ++iterations;
      rebuild();
    }
    TransportResult out;
    out.iterations = iterations;
    for (const auto& arc : arcs_) {
      if (arc.tail == root_ || arc.head == root_)
        out.artificial_flow += arc.flow;
      else
        out.cost += arc.flow * arc.cost;
    }
    return out;
  }

 private:
  struct Arc {
    std::size_t tail, head;
    double flow;
    double cost;
  };

  void init_costs() {
    cost_.resize(n_ * m_);
    max_cost_ = 0.0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < m_; ++j) {
        const double c = cost_fn_(i, j);
        cost_[i * m_ + j] = c;
        max_cost_ = std::max(max_cost_, std::abs(c));
      }
    art_cost_ = (max_cost_ + 1.0) * static_cast<double>(nodes_);
  }

  void init_tree() {
    arcs_.clear();
    adj_.assign(nodes_, {});
    for (std::size_t i = 0; i < n_; ++i) add_arc({i, root_, supply_[i], art_cost_});
    for (std::size_t j = 0; j < m_; ++j) add_arc({root_, n_ + j, demand_[j], art_cost_});
  }

  void add_arc(const Arc& arc) {
    arcs_.push_back(arc);
    const std::size_t id = arcs_.size() - 1;
    adj_[arc.tail].push_back(id);
    adj_[arc.head].push_back(id);
  }

  void remove_from_adj(std::size_t node, std::size_t id) {
    auto& list = adj_[node];
    for (auto& e : list)
      if (e == id) {
        e = list.back();
        list.pop_back();
        return;
      }
  }

  /// Recomputes parent arcs, depths and potentials from the root.
  void rebuild() {
    parent_arc_.assign(nodes_, npos);
    depth_.assign(nodes_, 0);
    pot_.assign(nodes_, 0.0);
    stack_.clear();
    stack_.push_back(root_);
    visited_.assign(nodes_, false);
    visited_[root_] = true;
    while (!stack_.empty()) {
      const std::size_t x = stack_.back();
      stack_.pop_back();
      for (std::size_t id : adj_[x]) {
        const Arc& arc = arcs_[id];
        const std::size_t y = arc.tail == x ? arc.head : arc.tail;
        if (visited_[y]) continue;
        visited_[y] = true;
        parent_arc_[y] = id;
        depth_[y] = depth_[x] + 1;
        // tree arcs have zero reduced cost: cost + pot[tail] - pot[head] = 0
        pot_[y] = (arc.tail == x) ? pot_[x] + arc.cost : pot_[x] - arc.cost;
        stack_.push_back(y);
      }
    }
  }

  std::size_t parent_of(std::size_t x) const {
    const Arc& arc = arcs_[parent_arc_[x]];
    return arc.tail == x ? arc.head : arc.tail;
  }

  // Entering arc u -> v. Cycle orientation: apex w down to u, across u -> v,
  // then v up to w. Leaving arc: last blocking arc in that traversal order.
  void pivot(std::size_t u, std::size_t v, double cost) {
    std::size_t a = u, b = v;
    std::vector<std::size_t>& u_side = path_u_;
    std::vector<std::size_t>& v_side = path_v_;
    u_side.clear();
    v_side.clear();
    while (depth_[a] > depth_[b]) {
      u_side.push_back(parent_arc_[a]);
      a = parent_of(a);
    }
    while (depth_[b] > depth_[a]) {
      v_side.push_back(parent_arc_[b]);
      b = parent_of(b);
    }
    while (a != b) {
      u_side.push_back(parent_arc_[a]);
      a = parent_of(a);
      v_side.push_back(parent_arc_[b]);
      b = parent_of(b);
    }
    // u_side: arcs from u upward; traversal goes downward, so an arc pointing
    // up (child -> parent) opposes it. Walking from u upward, the first
    // minimal one is the last in traversal order.
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leaving = npos;
    bool leaving_on_v_side = false;
    {
      std::size_t child = u;
      for (std::size_t id : u_side) {
        const Arc& arc = arcs_[id];
        if (arc.tail == child && arc.flow < theta) {
          theta = arc.flow;
          leaving = id;
        }
        child = arc.tail == child ? arc.head : arc.tail;
      }
    }
    {
      // v_side traversal is upward; an arc pointing down opposes it. Later
      // entries come later in traversal, so ties take the later one.
      std::size_t child = v;
      for (std::size_t id : v_side) {
        const Arc& arc = arcs_[id];
        if (arc.head == child && arc.flow <= theta) {
          theta = arc.flow;
          leaving = id;
          leaving_on_v_side = true;
        }
        child = arc.tail == child ? arc.head : arc.tail;
      }
    }
    (void)leaving_on_v_side;
    if (leaving == npos) throw Error("transport: unbounded pivot (negative cycle)");

    // push theta around the cycle
    {
      std::size_t child = u;
      for (std::size_t id : u_side) {
        Arc& arc = arcs_[id];
        if (arc.tail == child)
          arc.flow -= theta;
        else
          arc.flow += theta;
        child = arc.tail == child ? arc.head : arc.tail;
      }
      child = v;
      for (std::size_t id : v_side) {
        Arc& arc = arcs_[id];
        if (arc.head == child)
          arc.flow -= theta;
        else
          arc.flow += theta;
        child = arc.tail == child ? arc.head : arc.tail;
      }
    }
    arcs_[leaving].flow = 0.0;
    const Arc old = arcs_[leaving];
    remove_from_adj(old.tail, leaving);
    remove_from_adj(old.head, leaving);
    arcs_[leaving] = Arc{u, v, theta, cost};
    adj_[u].push_back(leaving);
    adj_[v].push_back(leaving);
  }

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  std::vector<double> supply_, demand_;
  CostFn cost_fn_;
  std::size_t n_ = 0, m_ = 0, nodes_ = 0, root_ = 0;
  std::vector<double> cost_;
  double max_cost_ = 0.0, art_cost_ = 0.0;
  std::vector<Arc> arcs_;
  std::vector<std::vector<std::size_t>> adj_;
  std::vector<std::size_t> parent_arc_, depth_, stack_;
  std::vector<double> pot_;
  std::vector<bool> visited_;
  std::vector<std::size_t> path_u_, path_v_;
};

}  // namespace detail

/// Minimum of sum c(i,j) * pi(i,j) over couplings pi of `supply` and `demand`.
/// Masses must be nonnegative with (numerically) equal totals; zero entries
/// are dropped before solving.
inline TransportResult solve_transport(const std::vector<double>& supply,
                                       const std::vector<double>& demand,
                                       const std::function<double(std::size_t, std::size_t)>& cost) {
  std::vector<std::size_t> rows, cols;
  std::vector<double> a, b;
  for (std::size_t i = 0; i < supply.size(); ++i)
    if (supply[i] > 0.0) {
      rows.push_back(i);
      a.push_back(supply[i]);
    }
  for (std::size_t j = 0; j < demand.size(); ++j)
    if (demand[j] > 0.0) {
      cols.push_back(j);
      b.push_back(demand[j]);
    }
  if (a.empty() || b.empty()) return {};
  const double sa = std::accumulate(a.begin(), a.end(), 0.0);
  const double sb = std::accumulate(b.begin(), b.end(), 0.0);
  if (std::abs(sa - sb) > 1e-9 * std::max(sa, sb))
    throw InvalidInput("transport: unbalanced masses " + std::to_string(sa) + " vs " +
                       std::to_string(sb));
  for (double& x : b) x *= sa / sb;
  detail::NetworkSimplex solver(std::move(a), std::move(b), [&](std::size_t i, std::size_t j) {
    return cost(rows[i], cols[j]);
  });
  return solver.solve();
}

}  // namespace ldlab
