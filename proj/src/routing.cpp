#include "msqferry/routing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>

#include "msqferry/rng.hpp"

namespace msq {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLengthTol = 1e-9;  // relative, for equal-length comparisons
constexpr std::size_t kMaxEqualRoutes = 4096;

bool usable_node(const Network& network, const DamageSet& damage, NodeId u) {
  return network.node(u).state == NodeState::ACTIVE && !damage.node_failed(u);
}

std::vector<char> ellipse_allowed(const Network& network, const DamageSet& damage, NodeId s,
                                  NodeId t, double factor) {
  const Vec2 ps = network.node(s).pos;
  const Vec2 pt = network.node(t).pos;
  const double bound = factor * distance(ps, pt) * (1.0 + 1e-12);
  std::vector<char> allowed(network.node_count(), 0);
  for (const Node& n : network.nodes()) {
    if (!usable_node(network, damage, n.id)) continue;
    if (std::isinf(factor) || distance(ps, n.pos) + distance(n.pos, pt) <= bound) {
      allowed[n.id] = 1;
    }
  }
  allowed[s] = usable_node(network, damage, s) ? 1 : 0;
  allowed[t] = usable_node(network, damage, t) ? 1 : 0;
  return allowed;
}

std::vector<double> dijkstra(const Network& network, const DamageSet& damage, NodeId source,
                             const std::vector<char>& allowed) {
  std::vector<double> dist(network.node_count(), kInf);
  if (!allowed[source]) return dist;
  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
  dist[source] = 0.0;
  heap.push({0.0, source});
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    for (const auto& [v, len] : network.neighbors(u)) {
      if (!allowed[v] || damage.edge_removed(u, v)) continue;
      double nd = d + len;
      if (nd < dist[v]) {
        dist[v] = nd;
        heap.push({nd, v});
      }
    }
  }
  return dist;
}

Route path_to_route(const Network& network, const std::vector<NodeId>& path) {
  Route route;
  route.source = path.front();
  route.terminal = path.back();
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    route.hops.push_back({path[i], path[i + 1]});
    auto eid = network.find_edge(path[i], path[i + 1]);
    route.length += network.edge(*eid).length;
  }
  return route;
}

/// All equal-shortest paths inside one allowed set, or empty when t is out
/// of reach. Paths come out in lexicographic node order (deterministic).
std::vector<std::vector<NodeId>> equal_shortest_paths(const Network& network,
                                                      const DamageSet& damage, NodeId s, NodeId t,
                                                      const std::vector<char>& allowed) {
  std::vector<double> from_s = dijkstra(network, damage, s, allowed);
  if (from_s[t] == kInf) return {};
  std::vector<double> to_t = dijkstra(network, damage, t, allowed);
  const double best = from_s[t];
  const double tol = best * kLengthTol + 1e-12 * network.scale();

  std::vector<std::vector<NodeId>> paths;
  std::vector<NodeId> current{s};
  auto walk = [&](auto&& self, NodeId u) -> void {
    if (u == t) {
      if (paths.size() >= kMaxEqualRoutes) {
        fail(ErrorCode::InvalidArgument, "equal-shortest route set exceeds " +
                                             std::to_string(kMaxEqualRoutes) + " paths");
      }
      paths.push_back(current);
      return;
    }
    for (const auto& [v, len] : network.neighbors(u)) {
      if (!allowed[v] || damage.edge_removed(u, v)) continue;
      if (from_s[u] + len + to_t[v] <= best + tol) {
        current.push_back(v);
        self(self, v);
        current.pop_back();
      }
    }
  };
  walk(walk, s);
  return paths;
}

void check_endpoints(const Network& network, const DamageSet& damage, NodeId s, NodeId t) {
  if (!network.has_node(s)) fail(ErrorCode::UnknownEntity, "node " + std::to_string(s));
  if (!network.has_node(t)) fail(ErrorCode::UnknownEntity, "node " + std::to_string(t));
  if (s == t) fail(ErrorCode::SameNode, "source equals terminal (" + std::to_string(s) + ")");
  if (!usable_node(network, damage, s)) {
    fail(ErrorCode::InvalidArgument, "source node " + std::to_string(s) + " is not usable");
  }
  if (!usable_node(network, damage, t)) {
    fail(ErrorCode::InvalidArgument, "terminal node " + std::to_string(t) + " is not usable");
  }
}

constexpr double kStages[] = {2.0, 4.0, kInf};

}  // namespace

std::vector<Route> enumerate_equal_shortest(const Network& network, NodeId s, NodeId t,
                                            const DamageSet& damage) {
  check_endpoints(network, damage, s, t);
  for (double factor : kStages) {
    auto allowed = ellipse_allowed(network, damage, s, t, factor);
    auto paths = equal_shortest_paths(network, damage, s, t, allowed);
    if (paths.empty()) continue;
    std::vector<Route> routes;
    routes.reserve(paths.size());
    for (const auto& path : paths) routes.push_back(path_to_route(network, path));
    return routes;
  }
  fail(ErrorCode::Unreachable,
       "no path from " + std::to_string(s) + " to " + std::to_string(t));
}

std::optional<Route> greedy_forward(const Network& network, NodeId s, NodeId t,
                                    const DamageSet& damage) {
  check_endpoints(network, damage, s, t);
  const Vec2 goal = network.node(t).pos;
  auto dist_to_goal = [&](NodeId u) { return distance(network.node(u).pos, goal); };
  auto allowed_step = [&](NodeId u, NodeId v) {
    return usable_node(network, damage, v) && !damage.edge_removed(u, v);
  };

  std::vector<NodeId> walk{s};
  NodeId current = s;
  NodeId previous = kInvalidId;
  bool perimeter = false;
  double stuck_distance = 0.0;
  std::set<std::pair<NodeId, NodeId>> perimeter_steps;  // loop detection
  const std::size_t budget = 4 * network.alive_edge_count() + 16;

  for (std::size_t step = 0; step < budget && current != t; ++step) {
    if (perimeter && dist_to_goal(current) < stuck_distance) perimeter = false;

    NodeId next = kInvalidId;
    if (!perimeter) {
      double best = dist_to_goal(current);
      for (const auto& [v, len] : network.neighbors(current)) {
        (void)len;
        if (!allowed_step(current, v)) continue;
        double d = dist_to_goal(v);
        if (d < best) {
          best = d;
          next = v;
        }
      }
      if (next == kInvalidId) {  // local minimum: walk the boundary
        perimeter = true;
        stuck_distance = dist_to_goal(current);
        perimeter_steps.clear();
      }
    }
    if (perimeter) {
      // Right-hand rule: take the most clockwise edge from the reference
      // direction (back along the incoming edge, or toward the terminal
      // when entering perimeter mode).
      Vec2 here = network.node(current).pos;
      Vec2 reference = previous == kInvalidId ? goal - here : network.node(previous).pos - here;
      double best_angle = std::numeric_limits<double>::infinity();
      for (const auto& [v, len] : network.neighbors(current)) {
        (void)len;
        if (!allowed_step(current, v)) continue;
        Vec2 dir = network.node(v).pos - here;
        double angle = std::atan2(cross(reference, dir), dot(reference, dir));
        // Clockwise from the reference = smallest angle measured in (0, 2pi].
        double turn = angle > 1e-12 ? angle : angle + 2 * 3.141592653589793238462643383279502884;
        if (turn < best_angle) {
          best_angle = turn;
          next = v;
        }
      }
      if (next == kInvalidId) return std::nullopt;  // isolated: nowhere to go
      if (!perimeter_steps.insert({current, next}).second) return std::nullopt;  // looping
    }
    previous = current;
    current = next;
    walk.push_back(current);
  }
  if (current != t) return std::nullopt;

  // Erase loops so no directed edge repeats.
  std::map<NodeId, std::size_t> first_seen;
  std::vector<NodeId> simple;
  for (NodeId u : walk) {
    auto it = first_seen.find(u);
    if (it != first_seen.end()) {
      while (simple.size() > it->second + 1) {
        first_seen.erase(simple.back());
        simple.pop_back();
      }
    } else {
      first_seen[u] = simple.size();
      simple.push_back(u);
    }
  }
  return path_to_route(network, simple);
}

Route route(const Network& network, const CyclePlan& plan, NodeId s, NodeId t,
            const DamageSet& damage, std::uint64_t seed) {
  check_endpoints(network, damage, s, t);
  RandomStream stream(seed, "route");

  Route chosen;
  bool found = false;
  for (double factor : kStages) {
    auto allowed = ellipse_allowed(network, damage, s, t, factor);
    auto paths = equal_shortest_paths(network, damage, s, t, allowed);
    if (paths.empty()) continue;
    std::size_t pick = paths.size() == 1 ? 0 : stream.uniform_index(paths.size());
    chosen = path_to_route(network, paths[pick]);
    found = true;
    break;
  }
  if (!found) {
    auto fallback = greedy_forward(network, s, t, damage);
    if (!fallback) {
      fail(ErrorCode::Unreachable,
           "no path from " + std::to_string(s) + " to " + std::to_string(t));
    }
    chosen = std::move(*fallback);
  }

  const ServingIndex& serving = plan.serving_index();
  for (const RouteHop& hop : chosen.hops) {
    auto it = serving.find(DirectedEdge{hop.from, hop.to});
    if (it == serving.end() || it->second.empty()) {
      fail(ErrorCode::BadFormat, "hop (" + std::to_string(hop.from) + "," +
                                     std::to_string(hop.to) + ") has no serving cycle");
    }
    const auto& entries = it->second;
    std::size_t pick = entries.size() == 1 ? 0 : stream.uniform_index(entries.size());
    chosen.cycle_trace.push_back(entries[pick]);
  }
  return chosen;
}

double spanner_ratio(const Network& network, NodeId s, NodeId t) {
  check_endpoints(network, {}, s, t);
  std::vector<Route> routes = enumerate_equal_shortest(network, s, t, {});
  double euclid = distance(network.node(s).pos, network.node(t).pos);
  return routes.front().length / euclid;
}

}  // namespace msq
