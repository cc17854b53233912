#include <drcc/scenarios.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

using namespace drcc;
using Catch::Approx;

namespace {

GaussianSpec reference_spec() {
  GaussianSpec spec;
  spec.forecast = Vector::Constant(2, 0.2);
  spec.zeta = 0.05;
  spec.rho = 0.2;
  return spec;
}

// Moments of clamp(X, lo, hi) for X ~ N(0, sigma^2) by composite Simpson
// quadrature over the interior plus the two boundary point masses.
std::pair<double, double> clipped_normal_moments(double sigma, double lo, double hi) {
  auto pdf = [&](double x) { return std::exp(-0.5 * x * x / (sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi)); };
  auto cdf = [&](double x) { return 0.5 * std::erfc(-x / (sigma * std::numbers::sqrt2)); };
  const int n = 200000;
  const double h = (hi - lo) / n;
  double m1 = 0, m2 = 0;
  for (int i = 0; i <= n; ++i) {
    double x = lo + i * h;
    double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    m1 += w * x * pdf(x);
    m2 += w * x * x * pdf(x);
  }
  m1 *= h / 3;
  m2 *= h / 3;
  double p_lo = cdf(lo), p_hi = 1 - cdf(hi);
  m1 += lo * p_lo + hi * p_hi;
  m2 += lo * lo * p_lo + hi * hi * p_hi;
  return {m1, m2 - m1 * m1};
}

}  // namespace

TEST_CASE("Philox4x32-10 known-answer vectors") {
  using C = Philox4x32::Counter;
  CHECK(Philox4x32::block(C{0, 0, 0, 0}, {0, 0}) == C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(Philox4x32::block(C{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(Philox4x32::block(C{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("unit conversion stays inside the open interval") {
  CHECK(Philox4x32::to_unit(0, 0) > 0);
  CHECK(Philox4x32::to_unit(0xffffffffu, 0xffffffffu) < 1);
  CHECK(std::isfinite(-std::numbers::sqrt2 * boost::math::erfc_inv(2 * Philox4x32::to_unit(0, 0))));
}

TEST_CASE("covariance construction") {
  GaussianSpec spec;
  spec.forecast = Vector(3);
  spec.forecast << 0.1, 0.2, 0.4;
  spec.zeta = 0.1;
  spec.rho = 0;
  Matrix s0 = build_covariance(spec);
  CHECK(s0.isDiagonal());
  CHECK(s0(2, 2) == Approx(0.04));

  // Equal forecasts: zeta p [(1 - rho) I + rho 11'], eigenvalues zeta p (1 - rho) and zeta p (1 + 2 rho).
  spec.forecast = Vector::Constant(3, 0.2);
  spec.rho = 0.2;
  Matrix s1 = build_covariance(spec);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s1);
  CHECK(eig.eigenvalues()[0] == Approx(0.1 * 0.2 * 0.8));
  CHECK(eig.eigenvalues()[2] == Approx(0.1 * 0.2 * 1.4));

  Matrix sigma = build_covariance(reference_spec());
  CHECK(sigma(0, 0) == Approx(0.01));
  CHECK(sigma(0, 1) == Approx(0.002));

  spec.rho = 1.0;
  CHECK_THROWS_AS(build_covariance(spec), ModelError);
}

TEST_CASE("sampling is deterministic and independent of worker count") {
  auto spec = reference_spec();
  auto a = sample(spec, 2000, 7);
  auto b = sample(spec, 2000, 7);
  auto c = sample(spec, 2000, 7, 4);
  CHECK((a.xi.array() == b.xi.array()).all());
  CHECK((a.xi.array() == c.xi.array()).all());
  auto d = sample(spec, 2000, 8);
  CHECK((a.xi.array() != d.xi.array()).any());
  // A prefix of a longer draw equals the shorter draw.
  auto e = sample(spec, 100, 7);
  CHECK((e.xi.array() == a.xi.topRows(100).array()).all());
}

TEST_CASE("vanishing variance") {
  auto spec = reference_spec();
  spec.zeta = 1e-12;
  auto set = sample(spec, 500, 1);
  CHECK(set.xi.cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("clip bounds hold") {
  auto spec = reference_spec();
  spec.zeta = 0.5;
  auto set = sample(spec, 5000, 2);
  for (int c = 0; c < 2; ++c) {
    CHECK((set.xi.col(c).array() + spec.forecast[c]).minCoeff() >= 0);
    CHECK((2 * spec.forecast[c] - set.xi.col(c).array()).minCoeff() >= 0);
  }
}

TEST_CASE("empirical moments match the clipped normal") {
  auto spec = reference_spec();
  const int s = 10000;
  auto set = sample(spec, s, 42);
  auto [mean, var] = clipped_normal_moments(0.1, -0.2, 0.4);
  auto st = summarize(set);
  for (int c = 0; c < 2; ++c) {
    CHECK(std::abs(st.mean[c] - mean) <= 3 * std::sqrt(var / s));
    CHECK(st.stddev[c] * st.stddev[c] == Approx(var).epsilon(0.05));
  }
}

TEST_CASE("large-sample correlation is near rho") {
  auto set = sample(reference_spec(), 100000, 3);
  auto st = summarize(set);
  CHECK(st.correlation(0, 1) == Approx(0.2).margin(0.05));
}

TEST_CASE("scenario CSV round trip and errors") {
  auto set = sample(reference_spec(), 50, 11);
  set.columns = {"vre_2", "vre_3"};
  auto back = parse_scenario_csv(scenario_csv(set));
  CHECK((back.xi.array() == set.xi.array()).all());
  CHECK(back.seed == 11);
  CHECK(back.spec_digest == set.spec_digest);
  CHECK(back.columns == set.columns);

  auto spec = reference_spec();
  CHECK_NOTHROW(parse_scenario_csv(scenario_csv(set), &spec));
  CHECK_THROWS_WITH(parse_scenario_csv("a,b\n0.1,x\n"), Catch::Matchers::ContainsSubstring("row 1, column 2"));
  CHECK_THROWS_WITH(parse_scenario_csv(""), Catch::Matchers::ContainsSubstring("no scenarios"));
  CHECK_THROWS_AS(parse_scenario_csv("a,b\n0.1\n"), ParseError);
  CHECK_THROWS_AS(parse_scenario_csv("a,b\n0.1,0.9\n", &spec), ParseError);
  GaussianSpec three = spec;
  three.forecast = Vector::Constant(3, 0.2);
  CHECK_THROWS_AS(parse_scenario_csv("a,b\n0.1,0.1\n", &three), ParseError);
}
