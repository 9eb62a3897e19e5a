#include "ldlab/lab.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

using namespace ldlab;

namespace {

DiscreteMeasure random_measure(RandomStream& rng, int atoms) {
  std::vector<Vec> locs;
  std::vector<double> w;
  for (int i = 0; i < atoms; ++i) {
    locs.push_back(vec({3.0 * rng.normal()}));
    w.push_back(rng.uniform() + 0.01);
  }
  return DiscreteMeasure::from_atoms(locs, w).normalized();
}

std::string csv_of(const ResultTable& t) {
  std::ostringstream os;
  t.write_csv(os);
  return os.str();
}

}  // namespace

TEST(FunctionalSpec, Examples) {
  const auto mu = DiscreteMeasure::from_atoms({vec({0.0}), vec({1.0})}, {0.5, 0.5});
  EXPECT_EQ(FunctionalSpec::zero()(mu), 0.0);
  EXPECT_EQ(FunctionalSpec::constant(-0.7)(mu), -0.7);
  EXPECT_EQ(FunctionalSpec::constant(-0.7).bound(), 0.7);
  EXPECT_DOUBLE_EQ(FunctionalSpec::mean_penalty(vec({1.0}), 1.0)(mu), 0.25);
  EXPECT_DOUBLE_EQ(FunctionalSpec::mean_penalty(vec({1.0}), 0.1)(mu), 0.1);
  EXPECT_DOUBLE_EQ(FunctionalSpec::mean_penalty(vec({1.0}), 5.0)(DiscreteMeasure::dirac(vec({-1.0}))), 4.0);
  const auto far = DiscreteMeasure::dirac(vec({1e300}));
  EXPECT_EQ(FunctionalSpec::mean_penalty(vec({0.0}), 3.0)(far), 3.0);
  const auto d0 = FunctionalSpec::dbl_penalty(DiscreteMeasure::dirac(vec({0.0})), 1.5);
  EXPECT_EQ(d0(DiscreteMeasure::dirac(vec({0.0}))), 0.0);
  EXPECT_DOUBLE_EQ(d0(DiscreteMeasure::dirac(vec({0.5}))), 0.5);
  EXPECT_DOUBLE_EQ(d0(DiscreteMeasure::dirac(vec({5.0}))), 1.5);
  EXPECT_THROW(FunctionalSpec::mean_penalty(vec({0.0}), 0.0), InvalidInput);
  EXPECT_THROW(FunctionalSpec::dbl_penalty(mu.scaled(2.0), 1.0), InvalidInput);
  EXPECT_THROW(FunctionalSpec::mean_penalty(vec({0.0, 1.0}), 1.0)(mu), InvalidInput);
}

TEST(FunctionalSpec, BoundedOnRandomMeasures) {
  RandomStream rng(11, 0, Channel::kAuxiliary);
  const std::vector<FunctionalSpec> specs{
      FunctionalSpec::mean_penalty(vec({1.0}), 1.0), FunctionalSpec::mean_penalty(vec({-2.0}), 0.3),
      FunctionalSpec::dbl_penalty(DiscreteMeasure::dirac(vec({0.0})), 1.0),
      FunctionalSpec::dbl_penalty(DiscreteMeasure::dirac(vec({0.0})), 10.0), FunctionalSpec::constant(2.0)};
  for (int trial = 0; trial < 100; ++trial) {
    const auto mu = random_measure(rng, 1 + trial % 5);
    for (const auto& F : specs) {
      const double v = F(mu);
      EXPECT_LE(std::abs(v), F.bound() + 1e-12) << F.describe();
    }
  }
  EXPECT_EQ(specs[3].bound(), 2.0);
}

TEST(Logmeanexp, Examples) {
  EXPECT_DOUBLE_EQ(logmeanexp({0.4, 0.4, 0.4}, 0.01), 0.4);
  EXPECT_DOUBLE_EQ(logmeanexp({0.0, -1e300}, 0.3), 0.3 * std::log(0.5));
  const std::vector<double> v{0.1, -0.2, 0.35, 0.0};
  const double direct = 2.0 * std::log((std::exp(0.05) + std::exp(-0.1) + std::exp(0.175) + 1.0) / 4.0);
  EXPECT_NEAR(logmeanexp(v, 2.0), direct, 1e-15);
  std::vector<double> shifted = v;
  for (auto& x : shifted) x += 1e4;
  EXPECT_NEAR(logmeanexp(shifted, 1e-3) - 1e4, logmeanexp(v, 1e-3), 1e-9);
  EXPECT_TRUE(std::isfinite(logmeanexp({-5e5, -5e5 + 1.0}, 1e-4)));
  EXPECT_THROW(logmeanexp({}, 1.0), InvalidInput);
  EXPECT_THROW(logmeanexp({1.0}, 0.0), InvalidInput);
}

TEST(LaplaceFromValues, ConstantsAndBounds) {
  EXPECT_EQ(laplace_from_values({0.0, 0.0, 0.0}, 1e-3).estimate, 0.0);
  const auto c = laplace_from_values({0.3, 0.3}, 1e-3);
  EXPECT_DOUBLE_EQ(c.estimate, 0.3);
  EXPECT_EQ(c.std_error, 0.0);
  RandomStream rng(5, 0, Channel::kAuxiliary);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> F(40);
    double mean = 0.0;
    for (auto& f : F) {
      f = rng.uniform();
      mean += f / 40.0;
    }
    const double a = 0.01 + rng.uniform();
    const auto v = laplace_from_values(F, a);
    // min F <= estimate <= mean F (Jensen)
    EXPECT_GE(v.estimate, *std::min_element(F.begin(), F.end()) - 1e-12);
    EXPECT_LE(v.estimate, mean + 1e-12);
    EXPECT_GE(v.std_error, 0.0);
  }
  EXPECT_THROW(laplace_from_values({0.0, 1.0}, 1e-3), OverflowError);
  EXPECT_THROW(laplace_from_values({}, 1.0), InvalidInput);
}

TEST(LaplaceFromValues, StandardErrorMatchesReplicateSpread) {
  // spread of the estimator over independent batches vs the delta-method error
  RandomStream rng(9, 0, Channel::kAuxiliary);
  const double a = 0.5;
  std::vector<double> estimates;
  double se = 0.0;
  for (int b = 0; b < 400; ++b) {
    std::vector<double> F(200);
    for (auto& f : F) f = rng.uniform();
    const auto v = laplace_from_values(F, a);
    estimates.push_back(v.estimate);
    se += v.std_error / 400.0;
  }
  double m = 0.0, s2 = 0.0;
  for (double e : estimates) m += e / 400.0;
  for (double e : estimates) s2 += (e - m) * (e - m) / 399.0;
  EXPECT_NEAR(std::sqrt(s2) / se, 1.0, 0.1);
}

TEST(LaplaceEstimate, TrivialFunctionalsAreExact) {
  const auto m = quadratic_model(1);
  LaplaceOptions opt;
  opt.replicas = 16;
  for (const auto& p : laplace_estimate(m, FunctionalSpec::zero(), NoiseSchedule::power(0.25), {0.05, 0.02}, opt))
    EXPECT_EQ(p.estimate, 0.0);
  for (const auto& p :
       laplace_estimate(m, FunctionalSpec::constant(0.42), NoiseSchedule::power(0.25), {0.05, 0.02}, opt))
    EXPECT_DOUBLE_EQ(p.estimate, 0.42);
  EXPECT_THROW(laplace_estimate(m, FunctionalSpec::zero(), NoiseSchedule::off(), {0.05}, opt), InvalidInput);
}

TEST(LaplaceEstimate, BoundsAndMonotonicity) {
  const auto m = quadratic_model(1);
  LaplaceOptions opt;
  opt.replicas = 64;
  const auto sched = NoiseSchedule::power(0.25);
  const auto F = FunctionalSpec::mean_penalty(vec({0.3}), 0.05);
  const auto G = FunctionalSpec::mean_penalty(vec({0.3}), 0.2);
  const auto f = laplace_estimate(m, F, sched, {0.1, 0.05}, opt);
  const auto g = laplace_estimate(m, G, sched, {0.1, 0.05}, opt);
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_LE(f[i].estimate, F.bound() + f[i].std_error);
    EXPECT_GE(f[i].estimate, -F.bound());
    EXPECT_LE(f[i].estimate, g[i].estimate + 2.0 * (f[i].std_error + g[i].std_error));
    EXPECT_LE(f[i].min_F, f[i].estimate + 1e-12);
    EXPECT_LE(f[i].estimate, f[i].mean_F + 1e-12);
  }
}

TEST(LaplaceEstimate, DeterministicInSeed) {
  const auto m = quadratic_model(1);
  LaplaceOptions opt;
  opt.replicas = 8;
  const auto F = FunctionalSpec::mean_penalty(vec({0.2}), 1.0);
  const auto a = laplace_estimate(m, F, NoiseSchedule::power(0.25), {0.05}, opt);
  const auto b = laplace_estimate(m, F, NoiseSchedule::power(0.25), {0.05}, opt);
  EXPECT_EQ(a[0].estimate, b[0].estimate);
  opt.seed = 2;
  EXPECT_NE(laplace_estimate(m, F, NoiseSchedule::power(0.25), {0.05}, opt)[0].estimate, a[0].estimate);
}

TEST(OccupationMeasure, ExactAndBinnedAgreeOnMean) {
  const auto m = quadratic_model(1);
  const auto exact = occupation_measure(m, NoiseSchedule::power(0.25), 0.02, 3, 0);
  OccupationOptions binned;
  binned.bin_width = 0.01;
  const auto coarse = occupation_measure(m, NoiseSchedule::power(0.25), 0.02, 3, 0, binned);
  EXPECT_NEAR(exact.total_mass(), 1.0, 1e-12);
  EXPECT_NEAR(exact.mean()(0), coarse.mean()(0), 0.005);
  EXPECT_EQ(exact.size(), 500u);
}

TEST(VariationalValue, Examples) {
  const auto m = quadratic_model(1);
  const auto zero = variational_value(m, FunctionalSpec::zero());
  EXPECT_EQ(zero.value, 0.0);
  EXPECT_NEAR(dbl_distance(zero.argmin, DiscreteMeasure::dirac(vec({0.0}))), 0.0, 1e-12);

  // (y - 1)^2 + y^2 / 2 = 1/3 + 3/2 (y - 2/3)^2 at lattice spacing h
  const VariationalFamily fam;
  const auto mp = variational_value(m, FunctionalSpec::mean_penalty(vec({1.0}), 1.0), fam);
  EXPECT_GE(mp.value, 1.0 / 3.0 - 1e-12);
  EXPECT_LE(mp.value, 1.0 / 3.0 + 1.5 * std::pow(fam.step / 2.0, 2));
  EXPECT_NEAR(mp.argmin.mean()(0), 2.0 / 3.0, fam.step / 2.0 + 1e-12);

  const auto db = variational_value(m, FunctionalSpec::dbl_penalty(DiscreteMeasure::dirac(vec({0.0})), 1.0));
  EXPECT_EQ(db.value, 0.0);
  EXPECT_NEAR(db.argmin.mean()(0), 0.0, 1e-12);
}

TEST(VariationalValue, TwoAtomFamilyHelpsForBimodalTargets) {
  const auto m = quadratic_model(1);
  const auto F = FunctionalSpec::dbl_penalty(DiscreteMeasure::from_atoms({vec({-1.0}), vec({1.0})}, {0.5, 0.5}), 2.0);
  VariationalFamily fam;
  fam.step = 0.1;
  const auto both = variational_value(m, F, fam);
  fam.two_atoms = false;
  const auto singles = variational_value(m, F, fam);
  // best single atom: d_bl = 1 at y = 0; the symmetric pair at +-y costs (1 - y) + y^2 / 2 -> 1/2 at y = 1
  EXPECT_NEAR(singles.value, 1.0, 1e-9);
  EXPECT_NEAR(both.value, 0.5, 1e-9);
  EXPECT_EQ(both.argmin.size(), 2u);
}

TEST(VariationalValue, NonincreasingUnderEnlargement) {
  const auto m = multiplicative1d_model();
  for (const auto& F : {FunctionalSpec::mean_penalty(vec({0.8}), 1.0),
                        FunctionalSpec::dbl_penalty(DiscreteMeasure::dirac(vec({1.2})), 1.0)}) {
    VariationalFamily coarse;
    coarse.step = 0.2;
    coarse.weight_step = 0.25;
    VariationalFamily fine = coarse;
    fine.step = 0.1;
    VariationalFamily wide = fine;
    wide.lo = -4.0;
    wide.hi = 4.0;
    const double a = variational_value(m, F, coarse).value;
    const double b = variational_value(m, F, fine).value;
    const double c = variational_value(m, F, wide).value;
    EXPECT_LE(b, a + 1e-12);
    EXPECT_LE(c, b + 1e-12);
  }
}

TEST(VariationalValue, TwoDimensionsAndErrors) {
  const auto m2 = quadratic_model(2);
  VariationalFamily fam;
  fam.step = 0.1;
  fam.two_atoms = false;
  const auto r = variational_value(m2, FunctionalSpec::mean_penalty(vec({1.0, 0.0}), 1.0), fam);
  EXPECT_NEAR(r.value, 1.0 / 3.0, 1.5 * 0.05 * 0.05 + 1e-12);
  EXPECT_NEAR(r.argmin.mean()(1), 0.0, 1e-12);
  fam.lo = 1.0;
  fam.hi = 0.0;
  EXPECT_THROW(variational_value(m2, FunctionalSpec::zero(), fam), InvalidInput);
  EXPECT_THROW(variational_value(quadratic_model(3), FunctionalSpec::zero()), InvalidInput);
}

TEST(Config, ParsesDocumentedKeys) {
  const auto c = parse_config(R"(# steering sweep
experiment = steer
model = quadratic
model.y0 = 0.5
noise = power:0.25
target.atoms = -1@0.3; 1@0.7
eps.list = 0.05, 0.02
replicas = 4
seed = 9
out = steer.csv
grid.refine = 2
bin_width = 0.02
)");
  EXPECT_EQ(c.experiment, "steer");
  EXPECT_EQ(c.model_params.at("y0"), 0.5);
  EXPECT_EQ(c.eps_list, (std::vector<double>{0.05, 0.02}));
  EXPECT_EQ(c.replicas, 4u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.out, "steer.csv");
  EXPECT_EQ(c.refine, 2u);
  ASSERT_TRUE(c.target);
  EXPECT_EQ(c.target->size(), 2u);
  EXPECT_DOUBLE_EQ(c.target->atoms()[1].weight, 0.7);

  const auto l = parse_config("experiment = laplace\neps.list = 0.1\nfunctional = mean_penalty\nfunctional.c = 1\n");
  EXPECT_EQ(l.functional.kind, FunctionalSpec::Kind::kMeanPenalty);
  EXPECT_EQ(l.functional.cap, 1.0);
  const auto a2 = parse_atoms("0.5, 1@0.25; -1, 0@0.75");
  EXPECT_EQ(a2.dim(), 2);
}

TEST(Config, Rejections) {
  EXPECT_THROW(parse_config("eps.list = 0.1\ncolour = red\n"), ConfigError);
  EXPECT_THROW(parse_config("eps.list = 0.01, 0.02\n"), ConfigError);
  EXPECT_THROW(parse_config("eps.list = 0.02, 0.02\n"), ConfigError);
  EXPECT_THROW(parse_config("eps.list = 0.1\nreplicas = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("eps.list = 0.1\nreplicas = 2.5\n"), ConfigError);
  EXPECT_THROW(parse_config("eps.list = 0.1\nexperiment = ldp\n"), ConfigError);
  EXPECT_THROW(parse_config("eps.list = 0.1\neps.list = 0.2\n"), ConfigError);
  EXPECT_THROW(parse_config("eps.list = 0.1x\n"), ConfigError);
  EXPECT_THROW(parse_config("eps.list = 0.1\nno equals sign\n"), ConfigError);
  EXPECT_THROW(parse_config("eps.list = 0.1\ntarget.atoms = 1@0.5\n"), ConfigError);
  EXPECT_THROW(parse_config("eps.list = 0.1\nfunctional = mean_penalty\n"), ConfigError);
  EXPECT_THROW(parse_config("eps.list = 0.1\nnoise = loud\n"), ConfigError);
  EXPECT_THROW(parse_config(""), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/path.cfg"), ConfigError);
}

TEST(Sweep, LlnDistanceShrinksWithEps) {
  auto c = parse_config("experiment = lln\nmodel = quadratic\neps.list = 0.1, 0.02, 0.005\nreplicas = 8\n");
  const auto t = sweep(c);
  EXPECT_EQ(t.columns, (std::vector<std::string>{"eps", "replica", "dbl_to_target"}));
  ASSERT_EQ(t.rows.size(), 24u);
  const auto means = t.mean_by_eps("dbl_to_target");
  ASSERT_EQ(means.size(), 3u);
  EXPECT_GT(means[0].second, means[1].second);
  EXPECT_GT(means[1].second, means[2].second);
}

TEST(Sweep, DeterministicCsvAndUnknownExperiment) {
  auto c = parse_config("experiment = steer\ntarget.atoms = -1@0.3; 1@0.7\neps.list = 0.05\nreplicas = 3\n");
  const std::string a = csv_of(sweep(c));
  EXPECT_EQ(a, csv_of(sweep(c)));
  EXPECT_EQ(a.substr(0, a.find('\n')), "eps,replica,cost,dbl_to_target");
  c.experiment = "ldp";
  EXPECT_THROW(sweep(c), ConfigError);
  c.experiment = "steer";
  c.target.reset();
  EXPECT_THROW(sweep(c), ConfigError);
}

TEST(Sweep, MultiscaleFromPlanFile) {
  const std::string path = ::testing::TempDir() + "ldlab_plan.json";
  {
    std::ofstream out(path);
    out << R"({"breakpoints": [0, 1], "atoms": [[-0.5, 0.5]], "weights": [[0.5, 0.5]], "controls": [[0]]})";
  }
  auto c = parse_config("experiment = multiscale\nmodel = tracking\neps.list = 0.02\nreplicas = 2\nplan = " + path + "\n");
  const auto t = sweep(c);
  EXPECT_EQ(t.columns, (std::vector<std::string>{"eps", "replica", "u_cost", "v_cost", "sup_dist_xi", "dbl_lambda"}));
  ASSERT_EQ(t.rows.size(), 2u);
  for (const auto& row : t.rows) {
    EXPECT_EQ(row[3], 0.0);
    EXPECT_GT(row[2], 0.0);
    EXPECT_LT(row[4], 0.2);
  }
  c.model = "quadratic";
  EXPECT_THROW(sweep(c), ConfigError);
  std::remove(path.c_str());
}

TEST(Sweep, LaplaceRows) {
  auto c = parse_config(
      "experiment = laplace\neps.list = 0.1, 0.05\nreplicas = 16\nfunctional = mean_penalty\nfunctional.c = 0.2\n");
  const auto t = sweep(c);
  ASSERT_EQ(t.rows.size(), 2u);
  for (const auto& row : t.rows) {
    EXPECT_NEAR(row[t.column("variational")], 0.2 * 0.2 / 3.0, 1e-3);
    EXPECT_NEAR(row[t.column("gap")], std::abs(row[t.column("estimate")] - row[t.column("variational")]), 1e-15);
    EXPECT_NEAR(row[t.column("scale")], row[0] * std::sqrt(row[0]), 1e-15);
  }
}

TEST(PlanJson, ParsesAndRejects) {
  const auto plan = plan_from_json(nlohmann::json::parse(
      R"({"breakpoints": [0, 0.5, 1], "atoms": [[[0.1]], [[-0.2], [0.3]]], "weights": [[1], [0.4, 0.6]], "controls": [[0.5], [-1]]})"));
  EXPECT_EQ(plan.intervals(), 2u);
  EXPECT_DOUBLE_EQ(plan.controls[1](0), -1.0);
  EXPECT_EQ(plan.measures[1].support.size(), 2u);
  EXPECT_THROW(plan_from_json(nlohmann::json::parse(R"({"breakpoints": [0, 1]})")), ConfigError);
  EXPECT_THROW(plan_from_json(nlohmann::json::parse(
                   R"({"breakpoints": [0, 1], "atoms": [[0]], "weights": [[0.5]], "controls": [[0]]})")),
               ConfigError);
  EXPECT_THROW(load_plan("/nonexistent/plan.json"), ConfigError);
}
