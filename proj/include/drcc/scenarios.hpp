#pragma once

// Forecast-error scenarios: correlated Gaussian draws clipped per component to
// [-p_i, 2 p_i], generated from a Philox stream indexed by (row, component).

#include <drcc/common.hpp>
#include <drcc/philox.hpp>

#include <boost/math/special_functions/erf.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace drcc {

inline constexpr const char* kRngName = "philox4x32-10/inverse-cdf/v1";

struct GaussianSpec {
  Vector forecast;  // p.u.
  double zeta = 0.05;
  double rho = 0.0;
  bool clip = true;

  Vector clip_low() const { return -forecast; }
  Vector clip_high() const { return 2.0 * forecast; }
  std::string digest() const {
    std::string s = fmt::format("zeta={:.17g};rho={:.17g};clip={};p=", zeta, rho, clip);
    for (Eigen::Index i = 0; i < forecast.size(); ++i) s += fmt::format("{:.17g},", forecast[i]);
    return hex_digest(s);
  }
};

struct ScenarioSet {
  Matrix xi;  // S x n_vre, p.u.
  std::uint64_t seed = 0;
  std::string spec_digest;
  std::vector<std::string> columns;

  int size() const { return static_cast<int>(xi.rows()); }
  int dim() const { return static_cast<int>(xi.cols()); }
};

inline Matrix build_covariance(const GaussianSpec& spec) {
  if (!(spec.zeta > 0)) throw ModelError("zeta must be positive");
  if (!(spec.rho >= 0 && spec.rho < 1)) throw ModelError("rho must lie in [0, 1)");
  const Eigen::Index n = spec.forecast.size();
  Matrix sigma(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double si = spec.zeta * spec.forecast[i], sj = spec.zeta * spec.forecast[j];
      sigma(i, j) = i == j ? si : spec.rho * std::sqrt(si * sj);
    }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma, Eigen::EigenvaluesOnly);
  if (n > 0 && eig.eigenvalues().minCoeff() < -1e-14 * sigma.cwiseAbs().maxCoeff())
    throw ModelError("covariance matrix is not positive semidefinite");
  return sigma;
}

/// Standard normal draw for (row, component) of the stream selected by seed.
inline double philox_normal(std::uint64_t seed, std::uint64_t row, std::uint32_t component,
                            std::uint32_t tag = 0) {
  Philox4x32::Counter ctr{static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(row >> 32), component, tag};
  auto out = Philox4x32::block(ctr, Philox4x32::key_from_seed(seed));
  double u = Philox4x32::to_unit(out[0], out[1]);
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
}

/// Draws s scenarios. Rows may be generated by several workers; the result
/// does not depend on the worker count.
inline ScenarioSet sample(const GaussianSpec& spec, int s, std::uint64_t seed, int workers = 1) {
  if (s < 1) throw Error("scenario count must be at least 1");
  Matrix sigma = build_covariance(spec);
  const Eigen::Index n = spec.forecast.size();
  Matrix L = Matrix::Zero(n, n);
  if (n > 0) {
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() == Eigen::Success) {
      L = llt.matrixL();
    } else {
      // Semidefinite fallback: symmetric square root.
      Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
      L = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0).cwiseSqrt().asDiagonal() *
          eig.eigenvectors().transpose();
    }
  }
  ScenarioSet set;
  set.xi.resize(s, n);
  set.seed = seed;
  set.spec_digest = spec.digest();
  const Vector lo = spec.clip_low(), hi = spec.clip_high();
  auto fill = [&](int begin, int end) {
    Vector z(n);
    for (int r = begin; r < end; ++r) {
      for (Eigen::Index c = 0; c < n; ++c) z[c] = philox_normal(seed, r, static_cast<std::uint32_t>(c));
      Vector x = L * z;
      if (spec.clip)
        for (Eigen::Index c = 0; c < n; ++c) x[c] = std::clamp(x[c], lo[c], hi[c]);
      set.xi.row(r) = x.transpose();
    }
  };
  workers = std::max(1, std::min(workers, s / 256 + 1));
  if (workers == 1) {
    fill(0, s);
  } else {
    std::vector<std::thread> pool;
    int chunk = (s + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) pool.emplace_back(fill, w * chunk, std::min(s, (w + 1) * chunk));
    for (auto& t : pool) t.join();
  }
  return set;
}

// ---------------------------------------------------------------------------

inline std::string scenario_csv(const ScenarioSet& set) {
  std::string out = fmt::format("# rng={} seed={} spec={}\n", kRngName, set.seed, set.spec_digest);
  for (int c = 0; c < set.dim(); ++c) {
    if (c) out += ',';
    out += c < static_cast<int>(set.columns.size()) ? set.columns[c] : fmt::format("vre_{}", c + 1);
  }
  out += '\n';
  for (int r = 0; r < set.size(); ++r) {
    for (int c = 0; c < set.dim(); ++c) out += fmt::format("{}{:.17g}", c ? "," : "", set.xi(r, c));
    out += '\n';
  }
  return out;
}

inline void save_csv(const ScenarioSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path));
  out << scenario_csv(set);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t\r"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace detail

/// Parses scenario CSV text. Clip bounds are validated when a spec is given.
inline ScenarioSet parse_scenario_csv(const std::string& text, const GaussianSpec* spec = nullptr) {
  ScenarioSet set;
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto grab = [&](const char* key) -> std::optional<std::string> {
        auto pos = line.find(key);
        if (pos == std::string::npos) return std::nullopt;
        pos += std::string(key).size();
        return line.substr(pos, line.find(' ', pos) - pos);
      };
      if (auto s = grab("seed=")) set.seed = std::stoull(*s);
      if (auto d = grab("spec=")) set.spec_digest = *d;
      continue;
    }
    auto cells = detail::split_csv_line(line);
    if (!have_header) {
      set.columns = cells;
      have_header = true;
      continue;
    }
    if (cells.size() != set.columns.size())
      throw ParseError(fmt::format("scenario row {} has {} columns, header has {}", rows.size() + 1,
                                   cells.size(), set.columns.size()),
                       line_no);
    std::vector<double> row;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      char* end = nullptr;
      double v = std::strtod(cells[c].c_str(), &end);
      if (cells[c].empty() || end != cells[c].c_str() + cells[c].size())
        throw ParseError(fmt::format("non-numeric cell '{}' at row {}, column {}", cells[c], rows.size() + 1, c + 1),
                         line_no);
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("no scenarios");
  set.xi.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(set.columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) set.xi(r, c) = rows[r][c];
  if (spec) {
    if (spec->forecast.size() != set.xi.cols())
      throw ParseError(fmt::format("scenario file has {} columns, the fleet has {} units", set.xi.cols(),
                                   spec->forecast.size()));
    if (spec->clip) {
      const double tol = 1e-12;
      for (int r = 0; r < set.size(); ++r)
        for (int c = 0; c < set.dim(); ++c)
          if (set.xi(r, c) < -spec->forecast[c] - tol || set.xi(r, c) > 2 * spec->forecast[c] + tol)
            throw ParseError(fmt::format("scenario {} column {} outside its clip bounds", r + 1, c + 1));
    }
  }
  return set;
}

inline ScenarioSet load_csv(const std::string& path, const GaussianSpec* spec = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open scenario file '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario_csv(buf.str(), spec);
}

// ---------------------------------------------------------------------------

struct ScenarioStats {
  Vector mean, stddev, min, max;
  Matrix correlation;
  double total_mean = 0, total_p10 = 0, total_p50 = 0, total_p90 = 0;
};

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  double pos = q * (v.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

inline ScenarioStats summarize(const ScenarioSet& set) {
  ScenarioStats st;
  const int s = set.size(), n = set.dim();
  st.mean = set.xi.colwise().mean().transpose();
  Matrix centered = set.xi.rowwise() - st.mean.transpose();
  Matrix cov = centered.transpose() * centered / std::max(1, s - 1);
  st.stddev = cov.diagonal().cwiseSqrt();
  st.min = set.xi.colwise().minCoeff().transpose();
  st.max = set.xi.colwise().maxCoeff().transpose();
  st.correlation = Matrix::Identity(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && st.stddev[i] > 0 && st.stddev[j] > 0)
        st.correlation(i, j) = cov(i, j) / (st.stddev[i] * st.stddev[j]);
  std::vector<double> totals(s);
  for (int r = 0; r < s; ++r) totals[r] = set.xi.row(r).sum();
  st.total_mean = set.xi.sum() / s;
  st.total_p10 = quantile(totals, 0.1);
  st.total_p50 = quantile(totals, 0.5);
  st.total_p90 = quantile(totals, 0.9);
  return st;
}

}  // namespace drcc
