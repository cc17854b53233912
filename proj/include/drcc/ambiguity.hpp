#pragma once

// Relative-entropy ambiguity arithmetic linking the sample count S, the number
// k of enforced best-case scenarios, the violation level epsilon and the radius r.

#include <drcc/common.hpp>

#include <fmt/format.h>

#include <cmath>
#include <optional>

namespace drcc {

/// Sentinel returned by k_for when even k = S cannot cover the radius.
inline constexpr int kWorstCaseRequired = -1;

struct AmbiguityParams {
  int s = 1;
  int k = 1;
  double epsilon = 1;
  double radius = 0;
};

struct EpsilonResult {
  double epsilon = 0;
  double bound = 0;
};

namespace detail {

inline double xlogy(double x, double y) { return x == 0 ? 0.0 : x * std::log(y); }

inline constexpr double kEpsBoundaryTol = 1e-12;

inline bool epsilon_admissible(int k, double epsilon, int s) {
  return epsilon >= 1.0 - static_cast<double>(k) / s - kEpsBoundaryTol && epsilon <= 1.0;
}

/// log of S^S / (k^k (S-k)^(S-k)).
inline double log_coefficient(int k, int s) {
  return xlogy(s, s) - xlogy(k, k) - xlogy(s - k, s - k);
}

/// log of the coefficient times (1-eps)^k eps^(S-k).
inline double log_mass(double epsilon, int k, int s) {
  return log_coefficient(k, s) + xlogy(k, 1.0 - epsilon) + xlogy(s - k, epsilon);
}

inline double phi(double epsilon, int k, int s) {
  return 1.0 - epsilon - std::exp(log_mass(epsilon, k, s));
}

inline double phi_prime(double epsilon, int k, int s) {
  double dlog = -static_cast<double>(k) / (1.0 - epsilon) + static_cast<double>(s - k) / epsilon;
  return -1.0 - std::exp(log_mass(epsilon, k, s)) * dlog;
}

}  // namespace detail

/// Largest KL radius for which enforcing k of S samples certifies violation level epsilon.
inline double radius_for(int k, double epsilon, int s) {
  if (s < 1 || k < 1 || k > s) throw Error(fmt::format("radius_for: need 1 <= k <= S, got k={} S={}", k, s));
  if (!detail::epsilon_admissible(k, epsilon, s))
    throw Error(fmt::format("radius_for: epsilon {} below 1 - k/S = {}", epsilon, 1.0 - double(k) / s));
  const double kk = k, ss = s;
  double r = -(kk / ss) * std::log(std::min(ss * (1.0 - epsilon) / kk, 1.0));
  if (k < s) r -= ((ss - kk) / ss) * std::log(std::max(ss * epsilon / (ss - kk), 1.0));
  return std::max(r, 0.0);
}

/// Smallest k whose radius covers r, or kWorstCaseRequired. Ties resolve to
/// the smaller k.
inline int k_for(double epsilon, double radius, int s) {
  if (!(epsilon > 0 && epsilon <= 1)) throw Error(fmt::format("k_for: epsilon {} outside (0, 1]", epsilon));
  if (radius < 0) throw Error("k_for: negative radius");
  for (int k = 1; k <= s; ++k) {
    if (!detail::epsilon_admissible(k, epsilon, s)) continue;
    if (radius_for(k, epsilon, s) >= radius) return k;
  }
  return kWorstCaseRequired;
}

/// Maximizes 1 - eps - C (1-eps)^k eps^(S-k) over [1 - k/S, 1].
inline EpsilonResult optimal_epsilon(int k, int s) {
  if (s < 1 || k < 1 || k > s) throw Error(fmt::format("optimal_epsilon: need 1 <= k <= S, got k={} S={}", k, s));
  const double lo = 1.0 - static_cast<double>(k) / s;
  if (k == s && s == 1) return {0.5, detail::phi(0.5, k, s)};

  // Coarse scan for the basin, then bisection on the derivative inside it.
  constexpr int kGrid = 4096;
  double best = -kInf;
  int best_i = 1;
  for (int i = 1; i < kGrid; ++i) {
    double e = lo + (1.0 - lo) * i / kGrid;
    double v = detail::phi(e, k, s);
    if (v > best) {
      best = v;
      best_i = i;
    }
  }
  double a = lo + (1.0 - lo) * (best_i - 1) / kGrid;
  double b = lo + (1.0 - lo) * (best_i + 1) / kGrid;
  if (a <= lo) a = lo + (1.0 - lo) * 1e-9;
  if (b >= 1.0) b = 1.0 - (1.0 - lo) * 1e-9;
  while (b - a > 1e-12) {
    double m = 0.5 * (a + b);
    if (detail::phi_prime(m, k, s) > 0)
      a = m;
    else
      b = m;
  }
  double e = 0.5 * (a + b);
  // For very small k the supremum is the limit 0 at eps -> 1.
  return {e, std::max(detail::phi(e, k, s), 0.0)};
}

/// Smallest k with optimal_epsilon(k, S).epsilon <= target.
inline int min_k_for_target(double target, int s) {
  if (!(target > 0 && target <= 1)) throw Error(fmt::format("min_k_for_target: target {} outside (0, 1]", target));
  // epsilon* is nonincreasing in k, so bisect on k.
  if (optimal_epsilon(s, s).epsilon > target)
    throw Error(fmt::format("no k <= {} achieves epsilon* <= {}", s, target));
  int lo = 1, hi = s;
  while (lo < hi) {
    int mid = lo + (hi - lo) / 2;
    if (optimal_epsilon(mid, s).epsilon <= target)
      hi = mid;
    else
      lo = mid + 1;
  }
  return lo;
}

/// Parameters for enforcing k of S samples at the optimal violation level.
inline AmbiguityParams params_for_k(int k, int s) {
  auto eps = optimal_epsilon(k, s);
  return {s, k, eps.epsilon, radius_for(k, eps.epsilon, s)};
}

}  // namespace drcc
