#include <drcc/ambiguity.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

using namespace drcc;
using Catch::Approx;

namespace {

// KL(empirical || q) for q uniform on two groups: mass a on the first k atoms,
// 1 - a on the remaining S - k. Evaluated atom by atom from the definition.
double kl_two_group(double a, int k, int s) {
  double kl = 0;
  for (int i = 0; i < s; ++i) {
    double q = i < k ? a / k : (1.0 - a) / (s - k);
    kl += (1.0 / s) * std::log((1.0 / s) / q);
  }
  return kl;
}

// Largest radius at which every distribution in the ball keeps at least 1 - eps
// on the first k atoms: the least divergent distribution with mass exactly
// 1 - eps there, found by a grid scan over the mass split.
double oracle_radius(int k, double eps, int s) {
  if (k == s) return -std::log(1.0 - eps);
  double best = kInf;
  const int n = 20000;
  for (int i = 1; i < n; ++i) {
    double a = (1.0 - eps) * i / n;
    best = std::min(best, kl_two_group(a, k, s));
  }
  return std::min(best, kl_two_group(1.0 - eps, k, s));
}

// Smallest mass a distribution within radius r can leave on the first k atoms.
double oracle_min_mass(int k, double r, int s) {
  if (k == s) return std::exp(-r);
  // Coarse scan, then a second scan inside the first feasible cell.
  const int n = 2000;
  double lo = 0, hi = static_cast<double>(k) / s;
  for (int pass = 0; pass < 2; ++pass) {
    double step = (hi - lo) / n;
    for (int i = 1; i <= n; ++i) {
      double a = lo + step * i;
      if (kl_two_group(a, k, s) <= r) {
        lo = a - step;
        hi = a;
        break;
      }
    }
  }
  return hi;
}

int oracle_k(double eps, double r, int s) {
  for (int k = 1; k <= s; ++k)
    if (oracle_min_mass(k, r, s) >= 1.0 - eps - 1e-5) return k;
  return kWorstCaseRequired;
}

}  // namespace

TEST_CASE("radius_for closed form") {
  CHECK(radius_for(100, 0.1, 100) == Approx(-std::log(0.9)).epsilon(1e-14));
  CHECK(radius_for(100, 0.1, 100) == Approx(0.10536).margin(1e-5));
  CHECK(radius_for(90, 0.1, 100) == Approx(0.0).margin(1e-15));
  CHECK(radius_for(7, 1.0 - 7.0 / 12.0, 12) == Approx(0.0).margin(1e-15));
  CHECK_THROWS_AS(radius_for(50, 0.1, 100), Error);
}

TEST_CASE("radius_for agrees with direct minimization of the divergence") {
  CHECK(radius_for(98, 0.0924, 100) == Approx(oracle_radius(98, 0.0924, 100)).epsilon(1e-6));
  CHECK(radius_for(98, 0.0924, 100) == Approx(0.044605948281879484).epsilon(1e-10));
  for (int s : {5, 8, 20})
    for (int k = 1; k <= s; ++k)
      for (double eps : {0.3, 0.5, 0.9}) {
        if (eps < 1.0 - double(k) / s) continue;
        CHECK(radius_for(k, eps, s) == Approx(oracle_radius(k, eps, s)).margin(1e-7));
      }
}

TEST_CASE("radius_for is nonnegative and strictly increasing in k") {
  for (int s : {10, 50, 100, 300})
    for (double eps : {0.02, 0.05, 0.1, 0.3, 0.7}) {
      double prev = -1;
      for (int k = 1; k <= s; ++k) {
        if (eps < 1.0 - double(k) / s - 1e-12) continue;
        double r = radius_for(k, eps, s);
        CHECK(r >= 0);
        CHECK(r > prev);
        prev = r;
      }
    }
}

TEST_CASE("k_for examples") {
  CHECK(k_for(0.1, 0.0, 100) == 90);
  CHECK(k_for(0.1, 5.0, 100) == kWorstCaseRequired);
  // Exhaustive radii for S = 20, eps = 0.2: k = 18 gives 0.0367, k = 19 gives 0.0939.
  CHECK(k_for(0.2, 0.05, 20) == 19);
}

TEST_CASE("k_for inverts radius_for") {
  for (int s : {10, 37, 100})
    for (double eps : {0.05, 0.1, 0.25, 0.6})
      for (int k = static_cast<int>(std::ceil((1.0 - eps) * s - 1e-9)); k <= s; ++k) {
        if (k < 1) continue;
        CHECK(k_for(eps, radius_for(k, eps, s), s) == k);
      }
}

TEST_CASE("k_for matches brute-force worst-case mass on small supports") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ueps(0.05, 0.6), ur(0.0, 0.5);
  int checked = 0;
  while (checked < 60) {
    int s = 2 + static_cast<int>(rng() % 7);
    double eps = ueps(rng), r = ur(rng);
    bool near_tie = false;
    for (int k = 1; k <= s; ++k)
      if (eps >= 1.0 - double(k) / s && std::abs(radius_for(k, eps, s) - r) < 1e-3) near_tie = true;
    if (near_tie) continue;
    INFO("S=" << s << " eps=" << eps << " r=" << r);
    CHECK(k_for(eps, r, s) == oracle_k(eps, r, s));
    ++checked;
  }
}

TEST_CASE("optimal_epsilon reproduces reference values") {
  auto e97 = optimal_epsilon(97, 100);
  auto e98 = optimal_epsilon(98, 100);
  CHECK(e97.epsilon == Approx(0.109).margin(0.001));
  CHECK(e98.epsilon == Approx(0.0924).margin(0.0005));
}

TEST_CASE("optimal_epsilon at k = S matches grid search") {
  double best = -1, arg = 0;
  for (int i = 0; i <= 1000000; ++i) {
    double e = i * 1e-6;
    double v = 1 - e - std::pow(1 - e, 5);
    if (v > best) {
      best = v;
      arg = e;
    }
  }
  auto r = optimal_epsilon(5, 5);
  CHECK(r.epsilon == Approx(arg).margin(2e-6));
  CHECK(r.bound == Approx(best).margin(1e-10));
  CHECK(r.epsilon == Approx(1.0 - std::pow(5.0, -0.25)).margin(1e-9));
}

TEST_CASE("optimal_epsilon properties over a grid") {
  for (int s : {5, 20, 100, 300}) {
    double prev = 2;
    for (int k = 1; k <= s; ++k) {
      auto r = optimal_epsilon(k, s);
      CHECK(r.epsilon > 1.0 - double(k) / s);
      CHECK(r.epsilon < 1.0);
      CHECK(r.bound >= 0);
      CHECK(r.bound <= double(k) / s + 1e-12);
      CHECK(r.epsilon <= prev + 1e-12);
      prev = r.epsilon;
    }
  }
}

TEST_CASE("min_k_for_target") {
  CHECK(min_k_for_target(0.10, 100) == 98);
  CHECK(min_k_for_target(1.0, 100) == 1);
  int k300 = min_k_for_target(0.10, 300);
  CHECK(optimal_epsilon(k300, 300).epsilon <= 0.10);
  CHECK(optimal_epsilon(k300 - 1, 300).epsilon > 0.10);
  CHECK(k300 == 286);
  CHECK_THROWS_AS(min_k_for_target(1e-6, 10), Error);
}
