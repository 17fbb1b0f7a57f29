#include "msqferry/queueing.hpp"

#include <algorithm>
#include <cmath>

namespace msq {

namespace {

void check_rate(double value, const char* what) {
  if (!std::isfinite(value) || value < 0.0) {
    fail(ErrorCode::InvalidArgument, std::string(what) + " must be finite and non-negative");
  }
}

double flow_at(const FlowTable& flows, const SlotKey& key) {
  auto it = flows.find(key);
  return it == flows.end() ? 0.0 : it->second;
}

}  // namespace

QueueStats mm1_stats(double lambda, double mu) {
  check_rate(lambda, "arrival rate");
  check_rate(mu, "service rate");
  if (mu <= lambda) {
    fail(ErrorCode::Unstable, "service rate " + std::to_string(mu) +
                                  " does not exceed arrival rate " + std::to_string(lambda));
  }
  QueueStats stats;
  stats.rho = lambda / mu;
  stats.L = stats.rho / (1.0 - stats.rho);
  stats.ET = 1.0 / (mu - lambda);
  return stats;
}

RouteSet demand_routes(const Network& network, const DemandMatrix& demands,
                       const DamageSet& damage) {
  RouteSet routes;
  for (const auto& [pair, rate] : demands.rates) {
    check_rate(rate, "demand rate");
    if (pair.first == pair.second) {
      fail(ErrorCode::SameNode, "demand pair (" + std::to_string(pair.first) + "," +
                                    std::to_string(pair.second) + ") is diagonal");
    }
    if (rate == 0.0) continue;
    routes[pair] = enumerate_equal_shortest(network, pair.first, pair.second, damage);
  }
  return routes;
}

FlowTable edge_flows(const Network& network, const CyclePlan& plan, const DemandMatrix& demands,
                     const RouteSet& routes) {
  (void)network;
  // Accumulate per directed edge first, then split across serving cycles.
  std::map<DirectedEdge, double> per_edge;
  for (const auto& [pair, rate] : demands.rates) {
    if (rate == 0.0) continue;
    auto it = routes.find(pair);
    if (it == routes.end() || it->second.empty()) {
      fail(ErrorCode::Unreachable, "no routes for demand pair (" + std::to_string(pair.first) +
                                       "," + std::to_string(pair.second) + ")");
    }
    const double share = rate / static_cast<double>(it->second.size());
    for (const Route& r : it->second) {
      for (const RouteHop& hop : r.hops) per_edge[DirectedEdge{hop.from, hop.to}] += share;
    }
  }

  FlowTable table;
  const ServingIndex& serving = plan.serving_index();
  for (const auto& [edge, flow] : per_edge) {
    auto it = serving.find(edge);
    if (it == serving.end() || it->second.empty()) {
      fail(ErrorCode::BadFormat, "flow on unserved edge (" + std::to_string(edge.from) + "," +
                                     std::to_string(edge.to) + ")");
    }
    const double split = flow / static_cast<double>(it->second.size());
    for (const ServingEntry& entry : it->second) table[SlotKey{entry.cycle, entry.slot}] += split;
  }
  return table;
}

WeightTable compute_weights(const Network& network, const CyclePlan& plan,
                            const DemandMatrix& demands, const RouteSet& routes) {
  (void)network;
  // Weight of a slot = expected rate of visits a unit of demand makes to it,
  // accumulated route by route (same totals as the flow split, derived
  // independently from the per-route hop walk).
  WeightTable table;
  const ServingIndex& serving = plan.serving_index();
  for (const auto& [pair, rate] : demands.rates) {
    if (rate == 0.0) continue;
    auto it = routes.find(pair);
    if (it == routes.end() || it->second.empty()) {
      fail(ErrorCode::Unreachable, "no routes for demand pair (" + std::to_string(pair.first) +
                                       "," + std::to_string(pair.second) + ")");
    }
    const double share = rate / static_cast<double>(it->second.size());
    for (const Route& r : it->second) {
      for (const RouteHop& hop : r.hops) {
        auto sit = serving.find(DirectedEdge{hop.from, hop.to});
        if (sit == serving.end() || sit->second.empty()) {
          fail(ErrorCode::BadFormat, "weight on unserved edge (" + std::to_string(hop.from) +
                                         "," + std::to_string(hop.to) + ")");
        }
        const double visit = share / static_cast<double>(sit->second.size());
        for (const ServingEntry& entry : sit->second) {
          table[SlotKey{entry.cycle, entry.slot}] += visit;
        }
      }
    }
  }
  return table;
}

double delivery_cost(const FlowTable& flows, const WeightTable& weights,
                     const std::map<CycleId, double>& mu) {
  double cost = 0.0;
  for (const auto& [key, weight] : weights) {
    if (weight <= 0.0) continue;
    auto it = mu.find(key.cycle);
    if (it == mu.end()) {
      fail(ErrorCode::Unstable, "no service rate for cycle " + std::to_string(key.cycle));
    }
    const double rate = it->second;
    const double lambda = flow_at(flows, key);
    if (rate <= lambda) {
      fail(ErrorCode::Unstable, "cycle " + std::to_string(key.cycle) + " slot " +
                                    std::to_string(key.slot) + " unstable (mu=" +
                                    std::to_string(rate) + ", lambda=" + std::to_string(lambda) +
                                    ")");
    }
    cost += weight / (rate - lambda);
  }
  for (const auto& [cycle, rate] : mu) {
    (void)cycle;
    check_rate(rate, "service rate");
    cost += rate;
  }
  return cost;
}

CycleOptResult optimize_single_cycle(const std::vector<double>& weights,
                                     const std::vector<double>& lambdas) {
  if (weights.size() != lambdas.size()) {
    fail(ErrorCode::InvalidArgument, "weight and arrival vectors differ in length");
  }
  std::vector<double> w, l;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    check_rate(weights[i], "weight");
    check_rate(lambdas[i], "arrival rate");
    if (weights[i] > 0.0) {
      w.push_back(weights[i]);
      l.push_back(lambdas[i]);
    }
  }
  if (w.empty()) return {0.0, 0};

  // Busiest slot, ties to the earliest, sets the starting point
  // mu0 = sqrt(w at busiest) + max arrival rate.
  std::size_t busiest = 0;
  double lambda_max = l[0];
  for (std::size_t i = 1; i < l.size(); ++i) {
    if (l[i] > lambda_max) {
      lambda_max = l[i];
      busiest = i;
    }
  }

  auto slope = [&](double mu) {  // derivative of (sum w/(mu-l) + mu)
    double s = 1.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      double d = mu - l[i];
      s -= w[i] / (d * d);
    }
    return s;
  };
  auto curvature = [&](double mu) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      double d = mu - l[i];
      s += 2.0 * w[i] / (d * d * d);
    }
    return s;
  };

  double mu = std::sqrt(w[busiest]) + lambda_max;
  unsigned iterations = 0;
  bool converged = false;
  constexpr unsigned kMaxIterations = 200;
  constexpr double kSlopeTol = 1e-10;
  constexpr double kStepTol = 1e-12;

  for (; iterations < kMaxIterations; ++iterations) {
    double g = slope(mu);
    if (std::abs(g) <= kSlopeTol) {
      converged = true;
      break;
    }
    double step = g / curvature(mu);
    double next = mu - step;
    if (!std::isfinite(next) || next <= lambda_max) break;  // Newton left the region
    mu = next;
    if (std::abs(step) <= kStepTol * std::max(1.0, std::abs(mu))) {
      converged = true;
      break;
    }
  }

  if (!converged) {
    // Bisection rescue: slope runs from -inf at lambda_max to positive at hi.
    double total = 0.0;
    for (double wi : w) total += wi;
    double lo = lambda_max + 1e-12 * (1.0 + lambda_max);
    double hi = lambda_max + std::sqrt(total) + 1.0;
    for (unsigned i = 0; i < 200 && hi - lo > kStepTol * std::max(1.0, hi); ++i) {
      ++iterations;
      double mid = 0.5 * (lo + hi);
      (slope(mid) < 0.0 ? lo : hi) = mid;
    }
    mu = 0.5 * (lo + hi);
  }

  for (int polish = 0; polish < 2; ++polish) {
    double next = mu - slope(mu) / curvature(mu);
    if (std::isfinite(next) && next > lambda_max) mu = next;
  }

  if (!(mu > lambda_max) || !std::isfinite(mu)) {
    fail(ErrorCode::NonConvergence, "service-rate optimization failed to converge");
  }
  return {mu, static_cast<int>(iterations)};
}

RateSolution optimize_rates(const FlowTable& flows, const WeightTable& weights) {
  std::map<CycleId, std::vector<SlotKey>> slots_by_cycle;
  bool any_positive = false;
  for (const auto& [key, weight] : weights) {
    check_rate(weight, "weight");
    slots_by_cycle[key.cycle].push_back(key);
    if (weight > 0.0) any_positive = true;
  }
  if (!any_positive) {
    fail(ErrorCode::NoPositiveWeights, "no slot carries positive weight");
  }

  RateSolution solution;
  for (const auto& [cycle, keys] : slots_by_cycle) {
    std::vector<double> w, l;
    w.reserve(keys.size());
    l.reserve(keys.size());
    double lambda_max = 0.0;
    bool cycle_positive = false;
    for (const SlotKey& key : keys) {
      double weight = weights.at(key);
      double lambda = flow_at(flows, key);
      w.push_back(weight);
      l.push_back(lambda);
      if (weight > 0.0) {
        lambda_max = std::max(lambda_max, lambda);
        cycle_positive = true;
      }
    }
    CycleOptResult result = optimize_single_cycle(w, l);
    solution.mu[cycle] = result.mu;
    solution.iterations[cycle] = result.iterations;
    if (cycle_positive) solution.stability_margin[cycle] = result.mu - lambda_max;
  }
  solution.cost = delivery_cost(flows, weights, solution.mu);
  return solution;
}

double analytic_route_delay(const Route& route, const FlowTable& flows,
                            const RateSolution& solution) {
  if (route.cycle_trace.size() != route.hops.size()) {
    fail(ErrorCode::InvalidArgument, "route is missing its serving-cycle trace");
  }
  double delay = 0.0;
  for (const ServingEntry& entry : route.cycle_trace) {
    auto it = solution.mu.find(entry.cycle);
    if (it == solution.mu.end()) {
      fail(ErrorCode::Unstable, "no service rate for cycle " + std::to_string(entry.cycle));
    }
    const double lambda = flow_at(flows, SlotKey{entry.cycle, entry.slot});
    if (it->second <= lambda) {
      fail(ErrorCode::Unstable, "cycle " + std::to_string(entry.cycle) + " slot " +
                                    std::to_string(entry.slot) + " unstable");
    }
    delay += 1.0 / (it->second - lambda);
  }
  return delay;
}

}  // namespace msq
