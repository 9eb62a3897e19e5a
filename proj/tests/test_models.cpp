#include "ldlab/models.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ldlab;

namespace {

void expect_all_pass(const AssumptionReport& r) {
  for (const auto& c : r.clauses)
    EXPECT_NE(c.status, ClauseStatus::kFail) << c.id << ": value " << c.value << " " << c.note;
}

double simpson(const std::function<double(double)>& f, double a, double b, int n = 2000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

TEST(NoiseSchedule, Forms) {
  EXPECT_DOUBLE_EQ(NoiseSchedule::power(0.25)(0.0625), 0.5);
  EXPECT_NEAR(NoiseSchedule::log_inv()(std::exp(-4.0)), 0.5, 1e-15);
  const auto t = NoiseSchedule::table({{0.01, 0.3}, {0.001, 0.0}});
  EXPECT_EQ(t(0.01), 0.3);
  EXPECT_EQ(t(0.001), 0.0);
  EXPECT_THROW(t(0.02), InvalidInput);
  EXPECT_EQ(NoiseSchedule::off()(0.3), 0.0);
  EXPECT_THROW(NoiseSchedule::power(-1.0), InvalidInput);
}

TEST(NoiseSchedule, PowerStrictlyDecreasingAsEpsShrinks) {
  for (double a : {0.1, 0.25, 0.5, 1.0}) {
    const auto s = NoiseSchedule::power(a);
    double prev = 1.0;
    for (double eps : {0.5, 0.2, 0.1, 0.05, 0.01, 1e-3, 1e-5}) {
      const double v = s(eps);
      EXPECT_LT(v, prev);
      EXPECT_GT(v, 0.0);
      prev = v;
    }
  }
  const auto l = NoiseSchedule::log_inv();
  EXPECT_LT(l(1e-4), l(1e-2));
}

TEST(NoiseSchedule, Parse) {
  EXPECT_DOUBLE_EQ(NoiseSchedule::parse("power:0.5")(0.04), 0.2);
  EXPECT_EQ(NoiseSchedule::parse("constant:0")(0.1), 0.0);
  EXPECT_EQ(NoiseSchedule::parse("table:0.1=0.2,0.05=0.1")(0.05), 0.1);
  EXPECT_THROW(NoiseSchedule::parse("weird"), ConfigError);
}

TEST(Builtins, Quadratic) {
  const auto m = builtin_single("quadratic", {{"d", 1}});
  EXPECT_DOUBLE_EQ(m.phi(vec({2.0})), 2.0);
  EXPECT_DOUBLE_EQ(m.psi(vec({2.0}))(0), 2.0);
  EXPECT_DOUBLE_EQ(m.sigma(vec({2.0}))(0, 0), 1.0);
  EXPECT_THROW(builtin_single("nope"), ConfigError);
  EXPECT_THROW(builtin_single("quadratic", {{"bogus", 1}}), ConfigError);
}

TEST(Builtins, MultiplicativePotentialMatchesQuadrature) {
  const auto m = builtin_single("multiplicative1d", {{"c1", 1}, {"c2", 2}});
  for (double x : {-3.0, -0.4, 0.0, 0.7, 2.5}) {
    const double s = m.sigma(vec({x}))(0, 0);
    EXPECT_GE(s, 1.0);
    EXPECT_LE(s, 2.0);
    // phi(x) = int_0^x psi(y) / a(y) dy
    const double ref = simpson(
        [&](double y) {
          const double sy = m.sigma(vec({y}))(0, 0);
          return y / (sy * sy);
        },
        0.0, x);
    EXPECT_NEAR(m.phi(vec({x})), ref, 1e-10);
  }
}

TEST(Builtins, Tracking) {
  const auto m = builtin_multiscale("tracking", {{"slope", 0.5}});
  EXPECT_DOUBLE_EQ(m.U(vec({2.0}), vec({3.0})), 0.5 * 4.0);
  EXPECT_DOUBLE_EQ(m.theta(vec({3.0}))(0), 1.5);
  EXPECT_DOUBLE_EQ(m.y0(0), 0.5);
  EXPECT_TRUE(std::holds_alternative<MultiscaleModel>(builtin("tracking")));
  EXPECT_TRUE(std::holds_alternative<SingleScaleModel>(builtin("quadratic")));
}

TEST(Gradients, AnalyticMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-4, 4);
  std::vector<SingleScaleModel> singles{quadratic_model(3), multiplicative1d_model(1, 2), multiplicative1d_model(3, 0.5),
                                        quartic_model(2)};
  for (const auto& m : singles)
    for (int trial = 0; trial < 20; ++trial) {
      Vec y(m.d);
      for (int c = 0; c < m.d; ++c) y(c) = u(rng);
      const Vec g = m.grad_phi(y), fd = fd_gradient(m.phi, y);
      EXPECT_LE((g - fd).norm(), 1e-6 * std::max(1.0, g.norm())) << m.name;
      const Mat H = m.hess_phi(y), Hfd = fd_jacobian(m.grad_phi, y);
      EXPECT_LE((H - Hfd).norm(), 1e-6 * std::max(1.0, H.norm())) << m.name;
    }
  const auto t = tracking_model(0.5, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = vec({u(rng), u(rng)}), y = vec({u(rng), u(rng)});
    const Vec gy = t.grad_y_U(x, y);
    const Vec fd = fd_gradient([&](const Vec& z) { return t.U(x, z); }, y);
    EXPECT_LE((gy - fd).norm(), 1e-6 * std::max(1.0, gy.norm()));
    const Vec gx = t.grad_x_U(x, y);
    const Vec fdx = fd_gradient([&](const Vec& z) { return t.U(z, y); }, x);
    EXPECT_LE((gx - fdx).norm(), 1e-6 * std::max(1.0, gx.norm()));
  }
}

TEST(StabilityField, Single) {
  const auto q = quadratic_model(2);
  const auto mult = multiplicative1d_model(1, 2);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = vec({u(rng), u(rng)}), y = vec({u(rng), u(rng)});
    EXPECT_EQ(stability_field_single(q, x, Vec::Zero(2)).norm(), 0.0);
    EXPECT_LE((stability_field_single(q, x, y) - y).norm(), 1e-12);
    // multiplicative example: V_x(y) = phi~'(x + y) - phi~'(x) = y
    const Vec x1 = vec({u(rng)}), y1 = vec({u(rng)});
    EXPECT_EQ(stability_field_single(mult, x1, Vec::Zero(1)).norm(), 0.0);
    EXPECT_NEAR(stability_field_single(mult, x1, y1)(0), y1(0), 1e-12);
  }
}

TEST(StabilityField, Fast) {
  const auto t = tracking_model(0.5);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = vec({u(rng)}), z = vec({u(rng)}), w = vec({u(rng)}), w2 = vec({u(rng)});
    EXPECT_EQ(stability_field_fast(t, x, z, Vec::Zero(1)).norm(), 0.0);
    EXPECT_NEAR(stability_field_fast(t, x, z, w)(0), w(0), 1e-12);
    // affine gradient: linear in u
    EXPECT_NEAR(stability_field_fast(t, x, z, Vec(2.0 * w + w2))(0),
                2.0 * stability_field_fast(t, x, z, w)(0) + stability_field_fast(t, x, z, w2)(0), 1e-12);
  }
}

TEST(CheckSingle, BuiltinsPass) {
  const auto rq = check_single(quadratic_model(1));
  expect_all_pass(rq);
  EXPECT_EQ(rq.clause("4-lyapunov").status, ClauseStatus::kPass);
  expect_all_pass(check_single(quadratic_model(2)));
  expect_all_pass(check_single(multiplicative1d_model(1, 2)));
}

TEST(CheckSingle, QuarticFailsHessianBound) {
  const auto r = check_single(quartic_model(1));
  EXPECT_EQ(r.clause("2b-hessian").status, ClauseStatus::kFail);
  // sup |phi''| = 3 y^2: 300 on [-10, 10] against 75 on [-5, 5]
  EXPECT_NEAR(r.clause("2b-hessian").value, 4.0, 1e-9);
  EXPECT_EQ(r.clause("4-lyapunov").status, ClauseStatus::kNotChecked);
  EXPECT_FALSE(r.passed());
}

TEST(CheckSingle, DegenerateSigmaFails) {
  auto m = quadratic_model(1);
  m.sigma = [](const Vec& y) { return Mat(Mat::Constant(1, 1, std::abs(y(0) - 2.0) < 1e-12 ? 0.0 : 1.0)); };
  const auto r = check_single(m);
  EXPECT_EQ(r.clause("1-nondegenerate").status, ClauseStatus::kFail);
  EXPECT_EQ(r.clause("1-nondegenerate").value, 0.0);
  EXPECT_DOUBLE_EQ(r.clause("1-nondegenerate").witness.at(0), 2.0);
}

TEST(CheckSingle, InconsistentDriftFails) {
  auto m = quadratic_model(1);
  m.psi = [](const Vec& y) { return Vec(2.0 * y); };
  EXPECT_EQ(check_single(m).clause("2a-consistency").status, ClauseStatus::kFail);
}

TEST(CheckSingle, NonFiniteReportedWithLocation) {
  auto m = quadratic_model(1);
  m.hess_phi = [](const Vec& y) { return Mat(Mat::Constant(1, 1, y(0) > 9.5 ? NAN : 1.0)); };
  const auto c = check_single(m).clause("2b-hessian");
  EXPECT_EQ(c.status, ClauseStatus::kFail);
  EXPECT_GT(c.witness.at(0), 9.5);
}

TEST(CheckMultiscale, TrackingPasses) {
  expect_all_pass(check_multiscale(tracking_model(0.5)));
  expect_all_pass(check_multiscale(tracking_model(0.5, 2), CheckGrid{-10, 10, 9}));
}

TEST(CheckMultiscale, QuadraticThetaFailsLipschitz) {
  auto m = tracking_model(0.5);
  m.theta = [](const Vec& x) { return Vec(x.array().square().matrix()); };
  m.U = [](const Vec& x, const Vec& y) { return 0.5 * (y(0) - x(0) * x(0)) * (y(0) - x(0) * x(0)); };
  m.grad_y_U = [](const Vec& x, const Vec& y) { return vec({y(0) - x(0) * x(0)}); };
  m.grad_x_U = [](const Vec& x, const Vec& y) { return vec({-2.0 * x(0) * (y(0) - x(0) * x(0))}); };
  m.y0 = m.theta(m.x0);
  const auto r = check_multiscale(m);
  EXPECT_EQ(r.clause("2f-theta-lipschitz").status, ClauseStatus::kFail);
  EXPECT_EQ(r.clause("2f-fixed-point").status, ClauseStatus::kPass);
}

TEST(CheckMultiscale, BilinearDriftFailsLipschitz) {
  auto m = tracking_model(0.5);
  m.b = [](const Vec& x, const Vec& y) { return vec({x(0) * y(0)}); };
  EXPECT_EQ(check_multiscale(m).clause("1-b-lipschitz").status, ClauseStatus::kFail);
}

TEST(CheckReport, Json) {
  const auto j = check_single(quadratic_model(1)).to_json();
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_GE(j.at("clauses").size(), 8u);
}
