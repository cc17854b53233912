// Walk-through on the 14-bus case: two wind units, 100 training scenarios,
// k chosen for a 10% violation target, then deterministic, KL and robust
// dispatch compared on 1000 fresh scenarios.
//
// usage: tutorial14 [output_dir]

#include <drcc/ambiguity.hpp>
#include <drcc/evaluation.hpp>
#include <drcc/svg.hpp>

#include <fmt/format.h>

#include <filesystem>
#include <fstream>

using namespace drcc;

int main(int argc, char** argv) {
  std::filesystem::path out = argc > 1 ? argv[1] : "tutorial14_out";
  std::filesystem::create_directories(out);

  // Linear costs: $20/MWh for generators 1 and 2, $40/MWh for the rest.
  NetworkOptions opt;
  opt.cost_overrides = {{1, 0, 20, 0}, {2, 0, 20, 0.01}, {3, 0, 40, 0.01}, {4, 0, 40, 0.01}, {5, 0, 40, 0.01}};
  auto net = to_network(load_matpower(std::string(DRCC_DATA_DIR) + "/case14.m"), opt);
  auto fleet = build_fleet_mw(net, {2, 3}, {20, 20}, 0.0);

  GaussianSpec spec;
  spec.forecast = fleet.forecast;
  spec.zeta = 0.05;
  spec.rho = 0.2;
  spec.clip = false;
  auto train = sample(spec, 100, 7);
  auto test = sample(spec, 1000, 8);

  const int s = train.size();
  const int k = min_k_for_target(0.10, s);
  auto eps = optimal_epsilon(k, s);
  fmt::print("violation target 0.10 with S = {}: enforce k = {} scenarios (epsilon* = {:.4f})\n\n", s, k, eps.epsilon);

  auto study = make_dc_study(net, fleet);
  auto det = solve_dc_deterministic(study);
  auto kl = solve_dc_kl(study, train.xi, k);
  auto ro = ro_baseline(study, train.xi);
  if (det.status != SelectionStatus::Optimal || kl.status != SelectionStatus::Optimal ||
      ro.status != SelectionStatus::Optimal) {
    fmt::print("solve failed: {} / {} / {}\n", det.message, kl.message, ro.message);
    return 1;
  }

  fmt::print("{:>10} {:>14} {:>14} {:>14}\n", "generator", "deterministic", "KL", "robust");
  for (int g = 0; g < net.n_gen(); ++g)
    fmt::print("{:>10} {:>11.3f} MW {:>11.3f} MW {:>11.3f} MW\n", g + 1, det.x[g] * net.base_mva,
               kl.x[g] * net.base_mva, ro.x[g] * net.base_mva);

  auto rate = [&](const Vector& x) { return violation_frequency(study.cc, x, test.xi).joint_rate; };
  fmt::print("\n{:>14} {:>12} {:>16}\n", "dispatch", "cost ($/h)", "violation rate");
  fmt::print("{:>14} {:>12.2f} {:>16.3f}\n", "deterministic", det.objective, rate(det.x));
  fmt::print("{:>14} {:>12.2f} {:>16.3f}\n", "KL", kl.objective, rate(kl.x));
  fmt::print("{:>14} {:>12.2f} {:>16.3f}\n", "robust", ro.objective, rate(ro.x));

  svg::Series kept{"enforced"}, dropped{"relaxed"};
  kept.line = dropped.line = false;
  dropped.color = "#d62728";
  fmt::print("\nrelaxed scenarios:");
  for (int j = 0; j < s; ++j) {
    auto& series = kl.z[j] ? dropped : kept;
    series.x.push_back(train.xi(j, 0) * net.base_mva);
    series.y.push_back(train.xi(j, 1) * net.base_mva);
    if (kl.z[j])
      fmt::print(" #{} (errors {:+.2f} MW, {:+.2f} MW)", j + 1, train.xi(j, 0) * net.base_mva,
                 train.xi(j, 1) * net.base_mva);
  }
  fmt::print("\n");

  std::ofstream(out / "scenarios.svg")
      << svg::render({{"error at bus 3 (MW)", {kept, dropped}}}, "error at bus 2 (MW)", "training scenarios");
  fmt::print("wrote {}\n", (out / "scenarios.svg").string());
  return 0;
}
