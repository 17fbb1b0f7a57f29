#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "msqferry/cycle_plan.hpp"
#include "msqferry/geometry.hpp"

namespace msq {

struct DamageSet {
  std::set<std::pair<NodeId, NodeId>> removed_edges;  // canonical (min, max) pairs
  std::set<NodeId> failed_nodes;

  bool empty() const { return removed_edges.empty() && failed_nodes.empty(); }
  bool edge_removed(NodeId a, NodeId b) const {
    return removed_edges.count(node_pair(a, b)) > 0;
  }
  bool node_failed(NodeId n) const { return failed_nodes.count(n) > 0; }
};

struct RouteHop {
  NodeId from = kInvalidId;
  NodeId to = kInvalidId;
};

struct Route {
  NodeId source = kInvalidId;
  NodeId terminal = kInvalidId;
  std::vector<RouteHop> hops;
  double length = 0.0;
  /// Chosen serving cycle per hop (parallel to hops); empty when the route
  /// was computed without a plan.
  std::vector<ServingEntry> cycle_trace;
};

/// Shortest s->t path restricted to nodes u with |su| + |ut| <= 2|st|
/// (any path of length <= 2|st| lies inside that ellipse, so the
/// restriction never cuts off the optimum on an intact network). Under
/// damage the ellipse doubles per retry (2|st|, 4|st|, whole graph), then
/// greedy forwarding runs as the final fallback. Ties among equal-shortest
/// paths and the serving cycle recorded per hop are resolved with the
/// seeded stream.
Route route(const Network& network, const CyclePlan& plan, NodeId s, NodeId t,
            const DamageSet& damage = {}, std::uint64_t seed = 0);

/// All minimum-length routes inside the first ellipse stage that connects
/// the pair (equal within 1e-9 relative tolerance), in deterministic
/// order. Downstream flow assignment splits demand equally across them.
std::vector<Route> enumerate_equal_shortest(const Network& network, NodeId s, NodeId t,
                                            const DamageSet& damage = {});

/// Route length / Euclidean distance on the intact network; <= 2 + 1e-9 on
/// generated networks.
double spanner_ratio(const Network& network, NodeId s, NodeId t);

/// Distance-greedy forwarding with a most-clockwise boundary walk to
/// escape local minima; returns nothing when the step budget is exhausted.
std::optional<Route> greedy_forward(const Network& network, NodeId s, NodeId t,
                                    const DamageSet& damage = {});

}  // namespace msq
