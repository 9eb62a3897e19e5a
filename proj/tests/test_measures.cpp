#include "ldlab/measures.hpp"
#include "lp_oracle.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ldlab;

namespace {

DiscreteMeasure random_measure(std::mt19937_64& rng, int dim, int max_atoms, double spread) {
  std::uniform_int_distribution<int> count(1, max_atoms);
  std::uniform_real_distribution<double> coord(-spread, spread);
  std::uniform_real_distribution<double> weight(0.05, 1.0);
  const int n = count(rng);
  std::vector<Vec> locs;
  std::vector<double> ws;
  for (int i = 0; i < n; ++i) {
    Vec x(dim);
    for (int c = 0; c < dim; ++c) x(c) = coord(rng);
    locs.push_back(x);
    ws.push_back(weight(rng));
  }
  return DiscreteMeasure::from_atoms(locs, ws).normalized();
}

// Independent value: LP over f-values on the union support.
double oracle_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double cap) {
  std::vector<Vec> pts;
  std::vector<double> coef;
  for (const auto& a : mu.atoms()) {
    pts.push_back(a.location);
    coef.push_back(a.weight);
  }
  for (const auto& a : nu.atoms()) {
    pts.push_back(a.location);
    coef.push_back(-a.weight);
  }
  return oracle::lipschitz_dual(coef, [&](std::size_t i, std::size_t j) { return (pts[i] - pts[j]).norm(); }, cap);
}

Path path_1d(const std::vector<double>& values, double horizon) {
  std::vector<Vec> states;
  for (double v : values) states.push_back(vec({v}));
  return Path(TimeGrid(0.0, horizon, values.size() - 1), states);
}

}  // namespace

TEST(FromPath, ConstantPathGivesDirac) {
  const Path p = path_1d(std::vector<double>(11, 0.7), 1.0);
  const auto mu = from_path(p, true);
  ASSERT_EQ(mu.size(), 10u);
  for (const auto& a : mu.atoms()) {
    EXPECT_DOUBLE_EQ(a.location(0), 0.7);
    EXPECT_NEAR(a.weight, 0.1, 1e-15);
  }
  EXPECT_NEAR(dbl_distance(mu, DiscreteMeasure::dirac(vec({0.7}))), 0.0, 1e-12);
}

TEST(FromPath, TwoPhasePathMasses) {
  std::vector<double> v(11, 1.0);
  for (int i = 0; i < 3; ++i) v[static_cast<std::size_t>(i)] = -1.0;
  const auto mu = from_path(path_1d(v, 1.0), true).merged();
  ASSERT_EQ(mu.size(), 2u);
  EXPECT_DOUBLE_EQ(mu.atoms()[0].location(0), -1.0);
  EXPECT_NEAR(mu.atoms()[0].weight, 0.3, 1e-12);
  EXPECT_NEAR(mu.atoms()[1].weight, 0.7, 1e-12);
}

TEST(FromPath, UnnormalizedMassIsHorizon) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int n : {1, 7, 100}) {
    std::vector<double> v(static_cast<std::size_t>(n) + 1);
    for (auto& x : v) x = g(rng);
    EXPECT_NEAR(from_path(path_1d(v, 2.0), false).total_mass(), 2.0, 1e-12);
    EXPECT_NEAR(from_path(path_1d(v, 2.0), true).total_mass(), 1.0, 1e-12);
  }
}

TEST(FromPath, RejectsDegeneratePath) {
  Path empty;
  EXPECT_THROW(from_path(empty, true), InvalidInput);
  EXPECT_THROW(space_time_from_path(empty), InvalidInput);
}

TEST(SpaceTime, ConstantPathSlices) {
  const auto lam = space_time_from_path(path_1d(std::vector<double>(6, 0.0), 1.0));
  ASSERT_EQ(lam.cells().size(), 5u);
  for (const auto& c : lam.cells()) {
    ASSERT_EQ(c.slice.size(), 1u);
    EXPECT_EQ(c.slice.atoms()[0].location(0), 0.0);
  }
}

TEST(SpaceTime, TwoPhaseSwitchesAtBoundary) {
  const auto lam = space_time_from_path(path_1d({-1, -1, 1, 1, 1}, 1.0));
  EXPECT_EQ(lam.slice_at(0.1).atoms()[0].location(0), -1.0);
  EXPECT_EQ(lam.slice_at(0.49).atoms()[0].location(0), -1.0);
  EXPECT_EQ(lam.slice_at(0.5).atoms()[0].location(0), 1.0);
}

TEST(SpaceTime, TimeMarginalIsLebesgue) {
  const auto p = path_1d({0.3, -2, 1, 4, 0.5, 0.5, 7, 1}, 3.5);
  const auto lam = space_time_from_path(p);
  for (std::size_t k = 0; k <= p.grid.steps(); ++k)
    EXPECT_NEAR(lam.mass_until(p.grid.time(k)), p.grid.time(k), 1e-12);
}

TEST(SpaceTime, ValidationRejectsBadSlices) {
  auto half = DiscreteMeasure::dirac(vec({0.0})).scaled(0.5);
  EXPECT_THROW(SpaceTimeMeasure(1, 1.0, {{0.0, 1.0, half}}), InvalidInput);
  const auto d = DiscreteMeasure::dirac(vec({0.0}));
  EXPECT_THROW(SpaceTimeMeasure(1, 1.0, {{0.0, 0.4, d}, {0.5, 1.0, d}}), InvalidInput);
  EXPECT_THROW(SpaceTimeMeasure(1, 1.0, {{0.0, 0.6, d}, {0.5, 1.0, d}}), InvalidInput);
}

TEST(Dbl, DiracExamples) {
  const auto x = DiscreteMeasure::dirac(vec({0.0}));
  EXPECT_NEAR(dbl_distance(x, x), 0.0, 1e-15);
  EXPECT_NEAR(dbl_distance(x, DiscreteMeasure::dirac(vec({1.0}))), 1.0, 1e-12);
  EXPECT_NEAR(dbl_distance(x, DiscreteMeasure::dirac(vec({5.0}))), 2.0, 1e-12);
  // same three cases against the LP oracle
  EXPECT_NEAR(oracle_distance(x, DiscreteMeasure::dirac(vec({1.0})), 1.0), 1.0, 1e-12);
  EXPECT_NEAR(oracle_distance(x, DiscreteMeasure::dirac(vec({5.0})), 1.0), 2.0, 1e-12);
}

TEST(Dbl, RandomDiracsClosedForm) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const int dim = 1 + trial % 3;
    Vec x(dim), y(dim);
    for (int c = 0; c < dim; ++c) {
      x(c) = u(rng);
      y(c) = u(rng);
    }
    EXPECT_NEAR(dbl_distance(DiscreteMeasure::dirac(x), DiscreteMeasure::dirac(y)), std::min((x - y).norm(), 2.0),
                1e-12);
  }
}

TEST(Dbl, MatchesLipschitzDualOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 150; ++trial) {
    const int dim = 1 + trial % 3;
    const double spread = (trial % 2) ? 3.0 : 0.8;
    const auto mu = random_measure(rng, dim, 6, spread);
    const auto nu = random_measure(rng, dim, 6, spread);
    EXPECT_NEAR(dbl_distance(mu, nu), oracle_distance(mu, nu, 1.0), 1e-9) << "trial " << trial;
    EXPECT_NEAR(wasserstein1(mu, nu), oracle_distance(mu, nu, 1e6), 1e-8) << "trial " << trial;
  }
}

TEST(Dbl, MetricProperties) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int dim = 1 + trial % 2;
    const auto a = random_measure(rng, dim, 6, 2.0);
    const auto b = random_measure(rng, dim, 6, 2.0);
    const auto c = random_measure(rng, dim, 6, 2.0);
    const double ab = dbl_distance(a, b), bc = dbl_distance(b, c), ac = dbl_distance(a, c);
    EXPECT_NEAR(ab, dbl_distance(b, a), 1e-12);
    EXPECT_NEAR(dbl_distance(a, a), 0.0, 1e-12);
    EXPECT_LE(ac, ab + bc + 1e-9);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 2.0);
    EXPECT_LE(ab, wasserstein1(a, b) + 1e-9);
  }
}

TEST(Dbl, PermutationAndMergeInvariance) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const auto mu = random_measure(rng, 2, 6, 2.0);
    const auto nu = random_measure(rng, 2, 6, 2.0);
    std::vector<Atom> shuffled = mu.atoms();
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    // split the first atom into two coincident halves
    std::vector<Atom> split = shuffled;
    split.push_back({split.front().location, split.front().weight / 2});
    split.front().weight /= 2;
    const double ref = dbl_distance(mu, nu);
    EXPECT_NEAR(dbl_distance(DiscreteMeasure(2, shuffled), nu), ref, 1e-12);
    EXPECT_NEAR(dbl_distance(DiscreteMeasure(2, split), nu), ref, 1e-12);
  }
}

TEST(Dbl, Errors) {
  const auto a = DiscreteMeasure::dirac(vec({0.0}));
  const auto b = DiscreteMeasure::dirac(vec({0.0, 1.0}));
  EXPECT_THROW(dbl_distance(a, b), InvalidInput);
  EXPECT_THROW(dbl_distance(a, a.scaled(2.0)), InvalidInput);
  EXPECT_THROW(DiscreteMeasure(1, {{vec({0.0}), -1.0}}), InvalidInput);
  EXPECT_THROW(DiscreteMeasure(1, {{vec({NAN}), 1.0}}), InvalidInput);
}

TEST(Transport, LargeOneDimensionalMatchesCdfFormula) {
  // W1 on the line = integral of |F - G|; checks the solver beyond oracle sizes.
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 5; ++trial) {
    const auto mu = random_measure(rng, 1, 150, 3.0);
    const auto nu = random_measure(rng, 1, 150, 3.0);
    std::vector<std::pair<double, double>> events;
    for (const auto& a : mu.atoms()) events.push_back({a.location(0), a.weight});
    for (const auto& a : nu.atoms()) events.push_back({a.location(0), -a.weight});
    std::sort(events.begin(), events.end());
    double cdf = 0.0, expected = 0.0;
    for (std::size_t k = 0; k + 1 < events.size(); ++k) {
      cdf += events[k].second;
      expected += std::abs(cdf) * (events[k + 1].first - events[k].first);
    }
    EXPECT_NEAR(wasserstein1(mu, nu), expected, 1e-9);
  }
}

TEST(DblSpaceTime, Examples) {
  const auto z = DiscreteMeasure::dirac(vec({0.0}));
  const auto o = DiscreteMeasure::dirac(vec({1.0}));
  const auto a = SpaceTimeMeasure::constant(z, 1.0);
  const auto b = SpaceTimeMeasure::constant(o, 1.0);
  EXPECT_NEAR(dbl_space_time(a, a), 0.0, 1e-12);
  EXPECT_NEAR(dbl_space_time(a, b), 1.0, 1e-12);
  // a finer partition of the same measure changes nothing
  const auto fine = SpaceTimeMeasure(1, 1.0, {{0.0, 0.3, o}, {0.3, 1.0, o}});
  EXPECT_NEAR(dbl_space_time(a, fine), 1.0, 1e-12);
  EXPECT_THROW(dbl_space_time(a, SpaceTimeMeasure::constant(z, 2.0)), InvalidInput);
}

TEST(DblSpaceTime, BoundsSymmetryTriangle) {
  std::mt19937_64 rng(31);
  auto random_st = [&](double T) {
    std::uniform_int_distribution<int> cells(1, 4);
    const int n = cells(rng);
    std::vector<double> cuts{0.0, T};
    std::uniform_real_distribution<double> u(0.05, T - 0.05);
    for (int k = 1; k < n; ++k) cuts.push_back(u(rng));
    std::sort(cuts.begin(), cuts.end());
    std::vector<SpaceTimeMeasure::Cell> out;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k)
      out.push_back({cuts[k], cuts[k + 1], random_measure(rng, 1, 3, 3.0)});
    return SpaceTimeMeasure(1, T, out);
  };
  for (int trial = 0; trial < 40; ++trial) {
    const double T = 2.0;
    const auto a = random_st(T), b = random_st(T), c = random_st(T);
    const double ab = dbl_space_time(a, b);
    EXPECT_NEAR(ab, dbl_space_time(b, a), 1e-10);
    EXPECT_LE(ab, 2.0 * T + 1e-12);
    EXPECT_LE(dbl_space_time(a, c), ab + dbl_space_time(b, c) + 1e-9);
  }
}

TEST(SecondMoment, Examples) {
  EXPECT_DOUBLE_EQ(second_moment(DiscreteMeasure::dirac(vec({0.0}))), 0.0);
  EXPECT_DOUBLE_EQ(second_moment(DiscreteMeasure::from_atoms({vec({-1.0}), vec({1.0})}, {0.5, 0.5})), 1.0);
  EXPECT_DOUBLE_EQ(second_moment(DiscreteMeasure::dirac(vec({3.0, 4.0}))), 25.0);
  EXPECT_THROW(second_moment(DiscreteMeasure(1, {{vec({1.0}), 0.0}})), InvalidInput);
}

TEST(Coarsening, PerturbationBoundedByBinWidth) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 30; ++trial) {
    const auto mu = random_measure(rng, 2, 40, 1.0);
    for (double h : {0.01, 0.1, 0.3}) EXPECT_LE(dbl_distance(mu, mu.coarsened(h)), h + 1e-12);
  }
}

TEST(Coarsening, AccumulatorMatchesBinnedPath) {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> g;
  std::vector<double> v(501);
  for (auto& x : v) x = g(rng);
  const Path p = path_1d(v, 5.0);
  OccupationAccumulator acc(1, 0.05);
  for (std::size_t j = 0; j < p.grid.steps(); ++j) acc.add(p.states[j], p.grid.dt());
  EXPECT_NEAR(dbl_distance(acc.measure(true), from_path(p, true).coarsened(0.05)), 0.0, 1e-12);

  SpaceTimeAccumulator st(1, 5.0, 0.5, 0.05);
  for (std::size_t j = 0; j < p.grid.steps(); ++j) st.add(p.grid.time(j), p.grid.dt(), p.states[j]);
  const auto lam = st.measure();
  EXPECT_EQ(lam.cells().size(), 10u);
  EXPECT_NEAR(dbl_space_time(lam, space_time_from_path(p).coarsened(0.05, 0.5)), 0.0, 1e-9);
  // time averaging over 0.5-wide cells moves mass by at most one cell width
  const auto fine = space_time_from_path(p).coarsened(0.0, 0.25);
  EXPECT_LE(dbl_space_time(lam, fine), 5.0 * (0.025 + 0.5));
}

TEST(Json, RoundTrip) {
  const auto mu = DiscreteMeasure::from_atoms({vec({1.0, 2.0}), vec({-3.0, 0.5})}, {0.25, 0.75});
  const auto j = to_json(mu);
  EXPECT_EQ(j.at("dim"), 2);
  EXPECT_NEAR(dbl_distance(discrete_measure_from_json(j), mu), 0.0, 1e-15);
  const auto lam = SpaceTimeMeasure(2, 1.0, {{0.0, 0.5, mu}, {0.5, 1.0, mu.normalized()}});
  const auto back = space_time_measure_from_json(nlohmann::json::parse(to_json(lam).dump()));
  EXPECT_EQ(back.cells().size(), 2u);
  EXPECT_NEAR(dbl_space_time(back, lam), 0.0, 1e-12);
}
