#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <vector>

#include "msqferry/cycle_plan.hpp"
#include "msqferry/routing.hpp"

namespace msq {

struct QueueStats {
  double rho = 0.0;  // utilization lambda / mu
  double L = 0.0;    // mean number of waiting requests, rho / (1 - rho)
  double ET = 0.0;   // mean sojourn time, 1 / (mu - lambda)
};

/// Closed-form M/M/1 statistics; throws Unstable when mu <= lambda.
QueueStats mm1_stats(double lambda, double mu);

struct SlotKey {
  CycleId cycle = kInvalidId;
  std::uint32_t slot = 0;
  auto operator<=>(const SlotKey&) const = default;
};

/// Per-(cycle, slot) arrival rates.
using FlowTable = std::map<SlotKey, double>;
/// Per-(cycle, slot) delay-term weights.
using WeightTable = std::map<SlotKey, double>;

struct DemandMatrix {
  std::map<std::pair<NodeId, NodeId>, double> rates;  // (source, terminal) -> rate
};

/// Equal-shortest route sets per demand pair.
using RouteSet = std::map<std::pair<NodeId, NodeId>, std::vector<Route>>;

/// Enumerate equal-shortest routes for every demand pair (the flow inputs).
RouteSet demand_routes(const Network& network, const DemandMatrix& demands,
                       const DamageSet& damage = {});

/// Directed-edge flows attributed to serving cycles: each demand splits
/// equally across its equal-shortest routes; each edge's flow splits
/// across its 1 or 2 serving cycles.
FlowTable edge_flows(const Network& network, const CyclePlan& plan, const DemandMatrix& demands,
                     const RouteSet& routes);

/// Delay-term weights: one term per route edge, weighted by the demand's
/// rate and route share, split across serving cycles like the flows. With
/// this rate weighting the weight of a slot numerically equals its flow.
WeightTable compute_weights(const Network& network, const CyclePlan& plan,
                            const DemandMatrix& demands, const RouteSet& routes);

/// C = sum over slots with w > 0 of w/(mu - lambda) + sum over cycles of mu.
double delivery_cost(const FlowTable& flows, const WeightTable& weights,
                     const std::map<CycleId, double>& mu);

struct RateSolution {
  std::map<CycleId, double> mu;
  double cost = 0.0;
  std::map<CycleId, int> iterations;
  std::map<CycleId, double> stability_margin;  // mu - max slot lambda
};

struct CycleOptResult {
  double mu = 0.0;
  int iterations = 0;
};

/// Minimize g(mu) = sum_k w_k/(mu - lambda_k) + mu over mu > max lambda_k
/// for one cycle. Newton-Raphson on g'(mu) = 1 - sum w_k/(mu - lambda_k)^2
/// started from mu0 = sqrt(w at the largest lambda) + max lambda; g' is
/// strictly increasing so the root is unique, with bisection as the
/// safeguard. Slots with w <= 0 are ignored.
CycleOptResult optimize_single_cycle(const std::vector<double>& weights,
                                     const std::vector<double>& lambdas);

/// Per-cycle optimization over every cycle with positive weight; cycles
/// without positive weight get mu = 0 (no ferry needed). Throws
/// NoPositiveWeights when the whole table is degenerate.
RateSolution optimize_rates(const FlowTable& flows, const WeightTable& weights);

/// Sum of 1/(mu - lambda) over the route's cycle trace.
double analytic_route_delay(const Route& route, const FlowTable& flows,
                            const RateSolution& solution);

}  // namespace msq
