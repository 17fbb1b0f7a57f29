#include "msqferry/sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

#include "msqferry/rng.hpp"

namespace msq {

std::string_view to_string(SimMode mode) {
  switch (mode) {
    case SimMode::QUEUE_ABSTRACTION: return "QUEUE_ABSTRACTION";
    case SimMode::FERRY_TOKEN: return "FERRY_TOKEN";
  }
  return "?";
}

SimMode sim_mode_from_string(std::string_view text) {
  if (text == "QUEUE_ABSTRACTION" || text == "queue") return SimMode::QUEUE_ABSTRACTION;
  if (text == "FERRY_TOKEN" || text == "ferry") return SimMode::FERRY_TOKEN;
  fail(ErrorCode::BadFormat, "unknown simulation mode '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// ServiceGraph
// ---------------------------------------------------------------------------

ServiceGraph ServiceGraph::from_plan(const CyclePlan& plan) {
  ServiceGraph graph;
  for (const Cycle& cycle : plan.cycles()) {
    graph.cycles[cycle.id] = cycle;
    graph.next_id = std::max(graph.next_id, cycle.id + 1);
  }
  graph.rebuild_serving();
  return graph;
}

CycleId ServiceGraph::add_cycle(Cycle cycle) {
  cycle.id = next_id++;
  CycleId id = cycle.id;
  cycles[id] = std::move(cycle);
  return id;
}

void ServiceGraph::remove_cycle(CycleId id) { cycles.erase(id); }

void ServiceGraph::rebuild_serving() {
  std::vector<Cycle> list;
  list.reserve(cycles.size());
  for (const auto& [id, cycle] : cycles) list.push_back(cycle);
  serving = build_serving_index(list);
}

const std::vector<ServingEntry>* ServiceGraph::serving_for(NodeId from, NodeId to) const {
  auto it = serving.find(DirectedEdge{from, to});
  return it == serving.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// Simulation implementation
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kNoMessage = ~std::uint64_t{0};
constexpr std::size_t kMaxEqualServicePaths = 4096;
constexpr double kServiceLengthTol = 1e-9;

enum EventKind : int {
  kPairArrival = 0,
  kStationDone = 1,
  kFerryArrive = 2,
  kVisitCheck = 3,
  kScript = 4,
};

struct Event {
  double time = 0.0;
  std::uint64_t seq = 0;
  int kind = 0;
  std::uint64_t a = 0;  // pair index / station index / ferry id / cycle id / script index
  std::uint64_t b = 0;  // generation / node id
  double x = 0.0;       // visit timestamp for checks

  bool operator>(const Event& other) const {
    if (time != other.time) return time > other.time;
    return seq > other.seq;
  }
};

struct PairFlow {
  NodeId s = kInvalidId;
  NodeId t = kInvalidId;
  double rate = 0.0;
  RandomStream stream{0};
  bool unroutable_logged = false;
};

struct Msg {
  MessageRecord record;
  std::vector<DirectedEdge> path;   // remaining + traversed arcs of the current route
  std::vector<CycleId> hop_cycles;  // QUEUE mode: chosen serving cycle per arc
  std::size_t hop = 0;              // index into path
};

using StationKey = std::pair<DirectedEdge, CycleId>;

struct Station {
  StationKey key;
  std::uint64_t current = kNoMessage;
  std::uint64_t generation = 0;
  std::deque<std::uint64_t> waiting;
};

struct FerryData {
  RandomStream stream{0};
  std::uint64_t move_generation = 0;
  std::size_t target_index = 0;
  NodeId last_node = kInvalidId;  // physical position: node last arrived at
  std::vector<std::uint64_t> onboard;
};

struct QueueAccount {
  std::uint64_t count = 0;
  double last_time = 0.0;
  double integral = 0.0;
};

struct FailedFerryRecord {
  FerryId ferry = kInvalidId;
  FaceId face = kInvalidId;
  DirectionClass direction_class = DirectionClass::FORWARD;
  bool resolved = false;
};

std::string pair_label(NodeId s, NodeId t) {
  return std::to_string(s) + "," + std::to_string(t);
}

}  // namespace

struct Simulation::Impl {
  Network net;
  ServiceGraph svc;
  SimConfig cfg;
  Scheme scheme = Scheme::MIXED;

  double now = 0.0;
  double arrival_stop = 0.0;
  std::uint64_t next_seq = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue;

  std::vector<PairFlow> pairs;
  std::vector<Msg> messages;
  std::map<NodeId, std::deque<std::uint64_t>> node_queues;
  std::map<NodeId, QueueAccount> queue_accounts;

  std::vector<Station> stations;
  std::map<StationKey, std::size_t> station_index;

  std::vector<Ferry> ferries;
  std::vector<FerryData> ferry_data;

  std::map<CycleId, double> runtime_mu;
  std::uint64_t version = 1;  // bumped on every structural / state change

  // Detection bookkeeping.
  std::map<std::pair<CycleId, NodeId>, double> last_visit;
  std::map<NodeId, int> node_fail_counter;
  std::set<NodeId> detected_nodes;
  std::vector<FailedFerryRecord> failed_ferries;
  std::map<FaceId, std::vector<NodeId>> pending_swaps;
  std::vector<std::pair<NodeId, std::uint64_t>> pending_dumps;  // (drop node, message)
  std::vector<std::uint64_t> queue_limbo;  // QUEUE mode: displaced, awaiting a route

  // Route cache over the service graph.
  struct CachedPaths {
    std::uint64_t version = 0;
    std::vector<std::vector<NodeId>> paths;
  };
  std::map<std::pair<NodeId, NodeId>, CachedPaths> route_cache;
  std::set<std::pair<NodeId, NodeId>> reroute_logged;

  RandomStream route_stream{0};
  RandomStream service_stream{0};
  RandomStream spawn_stream{0};

  // Metrics accumulators.
  std::uint64_t generated = 0;
  std::uint64_t delivered = 0;
  double delay_sum = 0.0;
  std::map<std::pair<NodeId, NodeId>, PairStats> per_pair;
  double service_load_integral = 0.0;
  double service_load_current = 0.0;
  double service_load_last_time = 0.0;
  std::uint64_t structural_changes = 0;
  std::vector<SimEvent> event_log;
  bool finished = false;

  // --- helpers -------------------------------------------------------------

  void log(const std::string& kind, const std::string& detail) {
    event_log.push_back(SimEvent{now, next_seq++, kind, detail});
  }

  void schedule(double time, int kind, std::uint64_t a, std::uint64_t b, double x = 0.0) {
    queue.push(Event{time, next_seq++, kind, a, b, x});
  }

  double mu_of(CycleId cycle) const {
    auto it = runtime_mu.find(cycle);
    if (it != runtime_mu.end() && it->second > 0.0) return it->second;
    return cfg.default_mu > 0.0 ? cfg.default_mu : 0.0;
  }

  bool node_usable(NodeId id) const {
    return id < net.node_count() && net.node(id).state == NodeState::ACTIVE;
  }

  void touch_service_load() {
    service_load_integral += service_load_current * (now - service_load_last_time);
    service_load_last_time = now;
  }

  void refresh_service_load() {
    touch_service_load();
    double total = 0.0;
    for (const auto& [id, cycle] : svc.cycles) {
      (void)cycle;
      total += mu_of(id);
    }
    service_load_current = total;
  }

  void bump_queue(NodeId node, std::int64_t delta) {
    QueueAccount& account = queue_accounts[node];
    account.integral += static_cast<double>(account.count) * (now - account.last_time);
    account.last_time = now;
    account.count = static_cast<std::uint64_t>(static_cast<std::int64_t>(account.count) + delta);
  }

  // --- service-graph routing ------------------------------------------------

  /// Directed transport arcs: every serving-index leg whose cycle has a
  /// positive rate, between usable nodes. Legs need not be graph edges
  /// (unified cycles skip failed nodes; growth legs span split edges).
  std::map<NodeId, std::vector<std::pair<NodeId, double>>> service_arcs() const {
    std::map<NodeId, std::vector<std::pair<NodeId, double>>> adjacency;
    for (const auto& [arc, entries] : svc.serving) {
      if (!node_usable(arc.from) || !node_usable(arc.to)) continue;
      bool usable = false;
      for (const ServingEntry& entry : entries) {
        if (mu_of(entry.cycle) > 0.0) {
          usable = true;
          break;
        }
      }
      if (!usable) continue;
      double length = distance(net.node(arc.from).pos, net.node(arc.to).pos);
      adjacency[arc.from].push_back({arc.to, length});
    }
    for (auto& [from, list] : adjacency) {
      (void)from;
      std::sort(list.begin(), list.end());
    }
    return adjacency;
  }

  std::map<NodeId, double> service_dijkstra(
      const std::map<NodeId, std::vector<std::pair<NodeId, double>>>& adjacency,
      NodeId source) const {
    std::map<NodeId, double> dist;
    using Item = std::pair<double, NodeId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
    dist[source] = 0.0;
    heap.push({0.0, source});
    while (!heap.empty()) {
      auto [d, u] = heap.top();
      heap.pop();
      auto du = dist.find(u);
      if (du != dist.end() && d > du->second) continue;
      auto it = adjacency.find(u);
      if (it == adjacency.end()) continue;
      for (const auto& [v, len] : it->second) {
        double nd = d + len;
        auto dv = dist.find(v);
        if (dv == dist.end() || nd < dv->second) {
          dist[v] = nd;
          heap.push({nd, v});
        }
      }
    }
    return dist;
  }

  /// Reverse arcs (for distance-to-terminal).
  static std::map<NodeId, std::vector<std::pair<NodeId, double>>> reversed(
      const std::map<NodeId, std::vector<std::pair<NodeId, double>>>& adjacency) {
    std::map<NodeId, std::vector<std::pair<NodeId, double>>> out;
    for (const auto& [from, list] : adjacency) {
      for (const auto& [to, len] : list) out[to].push_back({from, len});
    }
    for (auto& [from, list] : out) {
      (void)from;
      std::sort(list.begin(), list.end());
    }
    return out;
  }

  const std::vector<std::vector<NodeId>>& service_paths(NodeId s, NodeId t) {
    CachedPaths& cached = route_cache[{s, t}];
    if (cached.version == version) return cached.paths;
    cached.version = version;
    cached.paths.clear();
    if (!node_usable(s) || !node_usable(t) || s == t) return cached.paths;

    auto adjacency = service_arcs();
    auto from_s = service_dijkstra(adjacency, s);
    auto ts = from_s.find(t);
    if (ts == from_s.end()) return cached.paths;
    auto to_t = service_dijkstra(reversed(adjacency), t);
    const double best = ts->second;
    const double tol = best * kServiceLengthTol + 1e-12 * net.scale();

    std::vector<NodeId> current{s};
    bool truncated = false;
    auto walk = [&](auto&& self, NodeId u, double du) -> void {
      if (truncated) return;
      if (u == t) {
        if (cached.paths.size() >= kMaxEqualServicePaths) {
          truncated = true;  // keep the deterministic prefix
          return;
        }
        cached.paths.push_back(current);
        return;
      }
      auto it = adjacency.find(u);
      if (it == adjacency.end()) return;
      for (const auto& [v, len] : it->second) {
        auto dv = to_t.find(v);
        if (dv == to_t.end()) continue;
        if (du + len + dv->second <= best + tol) {
          current.push_back(v);
          self(self, v, du + len);
          current.pop_back();
        }
      }
    };
    walk(walk, s, 0.0);
    return cached.paths;
  }

  /// Serving cycles of an arc restricted to positive service rates.
  std::vector<ServingEntry> usable_serving(const DirectedEdge& arc) const {
    std::vector<ServingEntry> out;
    if (const auto* entries = svc.serving_for(arc.from, arc.to)) {
      for (const ServingEntry& entry : *entries) {
        if (mu_of(entry.cycle) > 0.0) out.push_back(entry);
      }
    }
    return out;
  }

  /// Sample a full route for a message standing at `from`; false when the
  /// terminal is currently unreachable over the service graph.
  bool assign_route(Msg& msg, NodeId from) {
    const auto& paths = service_paths(from, msg.record.terminal);
    if (paths.empty()) return false;
    std::size_t pick = paths.size() == 1 ? 0 : route_stream.uniform_index(paths.size());
    const std::vector<NodeId>& path = paths[pick];
    msg.path.clear();
    msg.hop_cycles.clear();
    msg.hop = 0;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      DirectedEdge arc{path[i], path[i + 1]};
      msg.path.push_back(arc);
      auto options = usable_serving(arc);
      if (options.empty()) return false;  // raced with a structural change
      std::size_t c = options.size() == 1 ? 0 : route_stream.uniform_index(options.size());
      msg.hop_cycles.push_back(options[c].cycle);
    }
    return true;
  }

  // --- message flow ---------------------------------------------------------

  void deliver(std::uint64_t mid) {
    Msg& msg = messages[mid];
    msg.record.delivered_at = now;
    ++delivered;
    double delay = now - msg.record.created_at;
    delay_sum += delay;
    PairStats& stats = per_pair[{msg.record.source, msg.record.terminal}];
    stats.mean_delay =
        (stats.mean_delay * static_cast<double>(stats.count) + delay) /
        static_cast<double>(stats.count + 1);
    ++stats.count;
  }

  void enqueue_at(NodeId node, std::uint64_t mid) {
    node_queues[node].push_back(mid);
    bump_queue(node, +1);
  }

  // QUEUE mode -----------------------------------------------------------

  std::size_t station_for(const StationKey& key) {
    auto it = station_index.find(key);
    if (it != station_index.end()) return it->second;
    std::size_t index = stations.size();
    stations.push_back(Station{key, kNoMessage, 0, {}});
    station_index[key] = index;
    return index;
  }

  void station_start(std::size_t index, std::uint64_t mid) {
    Station& station = stations[index];
    station.current = mid;
    ++station.generation;
    double mu = mu_of(station.key.second);
    schedule(now + service_stream.exponential(mu), kStationDone, index, station.generation);
  }

  void station_enter(std::uint64_t mid) {
    Msg& msg = messages[mid];
    const DirectedEdge& arc = msg.path[msg.hop];
    std::size_t index = station_for({arc, msg.hop_cycles[msg.hop]});
    bump_queue(arc.from, +1);
    if (stations[index].current == kNoMessage) {
      station_start(index, mid);
    } else {
      stations[index].waiting.push_back(mid);
    }
  }

  void on_station_done(const Event& event) {
    std::size_t index = static_cast<std::size_t>(event.a);
    Station& station = stations[index];
    if (station.generation != event.b || station.current == kNoMessage) return;
    std::uint64_t mid = station.current;
    station.current = kNoMessage;
    bump_queue(station.key.first.from, -1);
    if (!station.waiting.empty()) {
      std::uint64_t next = station.waiting.front();
      station.waiting.pop_front();
      station_start(index, next);
    }
    Msg& msg = messages[mid];
    ++msg.record.hops;
    ++msg.hop;
    if (msg.hop == msg.path.size()) {
      deliver(mid);
    } else {
      station_enter(mid);
    }
  }

  // FERRY mode -----------------------------------------------------------

  FerryId spawn_ferry(CycleId cycle) {
    FerryId id = static_cast<FerryId>(ferries.size());
    Ferry ferry;
    ferry.id = id;
    ferry.cycle = cycle;
    FerryData data;
    data.stream = RandomStream(cfg.seed, "ferry/" + std::to_string(id));
    const Cycle& c = svc.cycles.at(cycle);
    ferry.walk_index = data.stream.uniform_index(c.walk.size());
    data.last_node = c.walk[ferry.walk_index];
    NodeId start = data.last_node;
    ferries.push_back(ferry);
    ferry_data.push_back(std::move(data));
    log("ferry_spawned", "ferry=" + std::to_string(id) + " cycle=" + std::to_string(cycle) +
                             " node=" + std::to_string(start));
    return id;
  }

  void ferry_depart(FerryId fid) {
    Ferry& ferry = ferries[fid];
    if (ferry.state != FerryState::MOVING) return;
    const Cycle& cycle = svc.cycles.at(ferry.cycle);
    const std::size_t n = cycle.walk.size();
    NodeId u = cycle.walk[ferry.walk_index];
    std::size_t target = (ferry.walk_index + 1) % n;
    NodeId v = cycle.walk[target];

    if (node_usable(u)) pickup_matching(fid, u, v);

    double mu = mu_of(ferry.cycle);
    double rate = static_cast<double>(n) * mu;
    FerryData& data = ferry_data[fid];
    data.target_index = target;
    schedule(now + data.stream.exponential(rate), kFerryArrive, fid, data.move_generation);
  }

  void pickup_matching(FerryId fid, NodeId u, NodeId v) {
    auto it = node_queues.find(u);
    if (it == node_queues.end() || it->second.empty()) return;
    std::deque<std::uint64_t>& waiting = it->second;
    std::deque<std::uint64_t> keep;
    for (std::uint64_t mid : waiting) {
      Msg& msg = messages[mid];
      const DirectedEdge& arc = msg.path[msg.hop];
      if (arc.from == u && arc.to == v) {
        ferry_data[fid].onboard.push_back(mid);
        bump_queue(u, -1);
      } else {
        keep.push_back(mid);
      }
    }
    waiting.swap(keep);
  }

  void on_ferry_arrive(const Event& event) {
    FerryId fid = static_cast<FerryId>(event.a);
    Ferry& ferry = ferries[fid];
    FerryData& data = ferry_data[fid];
    if (ferry.state != FerryState::MOVING || data.move_generation != event.b) return;
    auto cycle_it = svc.cycles.find(ferry.cycle);
    if (cycle_it == svc.cycles.end()) return;  // retired mid-flight; reassignment pending
    const Cycle& cycle = cycle_it->second;
    ferry.walk_index = data.target_index;
    NodeId v = cycle.walk[ferry.walk_index];
    data.last_node = v;

    if (net.node(v).state == NodeState::FAILED) {
      record_failed_interaction(v);
    } else {
      last_visit[{ferry.cycle, v}] = now;
      schedule(now + cfg.detection.timeout_multiplier / mu_of(ferry.cycle), kVisitCheck,
               ferry.cycle, v, now);
      unload_at(fid, v);
    }

    auto pending = pending_swaps.find(cycle.face);
    if (cycle.face != kInvalidId && pending != pending_swaps.end()) {
      perform_swap(cycle.face);
      return;  // the swap reschedules every affected ferry
    }
    ferry_depart(fid);
  }

  void unload_at(FerryId fid, NodeId v) {
    FerryData& data = ferry_data[fid];
    std::vector<std::uint64_t> keep;
    for (std::uint64_t mid : data.onboard) {
      Msg& msg = messages[mid];
      const DirectedEdge& arc = msg.path[msg.hop];
      if (arc.to == v) {
        ++msg.record.hops;
        ++msg.hop;
        if (msg.hop == msg.path.size()) {
          deliver(mid);
        } else {
          enqueue_at(v, mid);
        }
      } else if (!node_usable(arc.to)) {
        // The planned drop-off died while we carried the message; leave it
        // here and find a fresh route (or wait for the next change).
        ++msg.record.hops;
        reroute_from(mid, v);
        if (msg.record.delivered_at < 0.0) enqueue_at(v, mid);
      } else {
        keep.push_back(mid);
      }
    }
    data.onboard.swap(keep);
  }

  bool reroute_from(std::uint64_t mid, NodeId from) {
    Msg& msg = messages[mid];
    if (from == msg.record.terminal) {
      deliver(mid);
      return true;
    }
    if (!assign_route(msg, from)) {
      auto key = std::pair{from, msg.record.terminal};
      if (reroute_logged.insert(key).second) {
        log("reroute_blocked", "from=" + std::to_string(from) +
                                   " terminal=" + std::to_string(msg.record.terminal));
      }
      msg.path.assign(1, DirectedEdge{from, msg.record.terminal});
      msg.hop_cycles.assign(1, kInvalidId);
      msg.hop = 0;  // placeholder hop; rescanned after the next change
      return false;
    }
    return true;
  }

  // --- arrivals --------------------------------------------------------------

  void on_pair_arrival(const Event& event) {
    std::size_t index = static_cast<std::size_t>(event.a);
    PairFlow& pair = pairs[index];
    if (now <= arrival_stop) {
      schedule(now + pair.stream.exponential(pair.rate), kPairArrival, index, 0);
      create_message(pair);
    }
  }

  void create_message(PairFlow& pair) {
    if (!node_usable(pair.s) || !node_usable(pair.t)) return;  // endpoint out of service
    Msg msg;
    msg.record.id = messages.size();
    msg.record.source = pair.s;
    msg.record.terminal = pair.t;
    msg.record.created_at = now;
    if (!assign_route(msg, pair.s)) {
      if (!pair.unroutable_logged) {
        pair.unroutable_logged = true;
        log("arrival_unroutable", "pair=" + pair_label(pair.s, pair.t));
      }
      return;
    }
    pair.unroutable_logged = false;
    std::uint64_t mid = messages.size();
    messages.push_back(std::move(msg));
    ++generated;
    if (cfg.mode == SimMode::QUEUE_ABSTRACTION) {
      station_enter(mid);
    } else {
      enqueue_at(pair.s, mid);
    }
  }

  // --- detection & recovery ---------------------------------------------------

  void record_failed_interaction(NodeId node) {
    int count = ++node_fail_counter[node];
    log("failed_interaction", "node=" + std::to_string(node) + " count=" + std::to_string(count));
    if (count >= cfg.detection.failed_interactions && !detected_nodes.count(node)) {
      detected_nodes.insert(node);
      log("node_failure_detected", "node=" + std::to_string(node));
      recover_node(node);
    }
  }

  void on_visit_check(const Event& event) {
    CycleId cycle_id = static_cast<CycleId>(event.a);
    NodeId node = static_cast<NodeId>(event.b);
    auto it = svc.cycles.find(cycle_id);
    if (it == svc.cycles.end()) return;
    auto visit = last_visit.find({cycle_id, node});
    if (visit == last_visit.end() || visit->second > event.x) return;  // visited again since
    for (const Ferry& ferry : ferries) {
      if (ferry.cycle == cycle_id && ferry.state == FerryState::MOVING) return;
    }
    log("ferry_failure_detected", "cycle=" + std::to_string(cycle_id) +
                                      " node=" + std::to_string(node));
    recover_ferry(cycle_id);
  }

  // Faces of every active non-perimeter cycle whose walk passes the node.
  std::vector<CycleId> cycles_through(NodeId node) const {
    std::vector<CycleId> out;
    for (const auto& [id, cycle] : svc.cycles) {
      if (std::find(cycle.walk.begin(), cycle.walk.end(), node) != cycle.walk.end()) {
        out.push_back(id);
      }
    }
    return out;
  }

  std::vector<FaceId> descendants(FaceId root) const {
    std::vector<FaceId> out{root};
    for (std::size_t i = 0; i < out.size(); ++i) {
      const Face& face = net.face(out[i]);
      if (!face.is_leaf()) {
        for (FaceId child : face.children) out.push_back(child);
      }
    }
    return out;
  }

  bool in_subtree(FaceId root, FaceId candidate) const {
    FaceId cursor = candidate;
    while (cursor != kInvalidId) {
      if (cursor == root) return true;
      cursor = net.face(cursor).parent;
    }
    return false;
  }

  bool subtree_has_failure(FaceId root) const {
    for (FaceId face_id : descendants(root)) {
      const Face& face = net.face(face_id);
      for (NodeId corner : face.corners) {
        if (net.node(corner).state == NodeState::FAILED) return true;
      }
      for (std::size_t k = 0; k < 3; ++k) {
        for (NodeId node : net.resolve_side(face.corners[k], face.corners[(k + 1) % 3])) {
          if (net.node(node).state == NodeState::FAILED) return true;
        }
      }
    }
    for (const FailedFerryRecord& record : failed_ferries) {
      if (!record.resolved && in_subtree(root, record.face)) return true;
    }
    return false;
  }

  void recover_node(NodeId node) {
    std::set<FaceId> parents;
    std::vector<CycleId> skip_rebuild;
    for (CycleId id : cycles_through(node)) {
      const Cycle& cycle = svc.cycles.at(id);
      FaceId face = cycle.face;
      if (face != kInvalidId && net.face(face).parent != kInvalidId) {
        parents.insert(net.face(face).parent);
      } else {
        skip_rebuild.push_back(id);
      }
    }
    // Only the outermost parents unify; nested ones are swallowed by them.
    std::vector<FaceId> outer;
    for (FaceId p : parents) {
      bool nested = false;
      for (FaceId q : parents) {
        if (q != p && in_subtree(q, p)) nested = true;
      }
      if (!nested) outer.push_back(p);
    }
    for (CycleId id : skip_rebuild) {
      if (svc.cycles.count(id)) rebuild_walk_without(id, node);
    }
    for (FaceId p : outer) do_unify(p);
    after_structural_change("node_recovery");
  }

  void rebuild_walk_without(CycleId id, NodeId node) {
    Cycle& cycle = svc.cycles.at(id);
    std::vector<NodeId> walk;
    for (NodeId n : cycle.walk) {
      if (n != node && net.node(n).state != NodeState::FAILED) walk.push_back(n);
    }
    if (walk.size() < 2) {
      log("cycle_stalled", "cycle=" + std::to_string(id));
      return;
    }
    cycle.walk = rotate_walk_to_min(std::move(walk));
    remap_ferries_of(id);
    log("walk_skip", "cycle=" + std::to_string(id) + " node=" + std::to_string(node));
  }

  void recover_ferry(CycleId cycle_id) {
    const Cycle cycle = svc.cycles.at(cycle_id);  // copy: recovery rewrites the map
    FaceId face = cycle.face;
    if (face != kInvalidId && net.face(face).parent != kInvalidId) {
      do_unify(net.face(face).parent);
      after_structural_change("ferry_recovery");
    } else {
      // Top-level cycle: nothing to merge into, so put a fresh ferry on it.
      FerryId id = spawn_ferry(cycle_id);
      log("ferry_respawned", "cycle=" + std::to_string(cycle_id));
      ferry_depart(id);
    }
  }

  /// Retire every cycle in the subtree and recreate coverage on the parent
  /// boundary (one cycle per direction class found), skipping failed nodes.
  CycleDelta do_unify(FaceId parent) {
    if (!net.has_face(parent)) fail(ErrorCode::UnknownEntity, "face " + std::to_string(parent));
    const Face& parent_face = net.face(parent);
    if (parent_face.is_leaf()) {
      fail(ErrorCode::NotDivided, "face " + std::to_string(parent) + " has no children");
    }
    if (!subtree_has_failure(parent)) {
      fail(ErrorCode::NoTrigger, "no failure recorded under face " + std::to_string(parent));
    }

    CycleDelta delta;
    std::set<DirectionClass> classes;
    std::vector<NodeId> former_walk_nodes;
    std::map<DirectionClass, std::vector<FerryId>> survivors;
    std::map<DirectionClass, double> inherited_mu;
    for (auto it = svc.cycles.begin(); it != svc.cycles.end();) {
      const Cycle& cycle = it->second;
      if (cycle.face != kInvalidId && in_subtree(parent, cycle.face)) {
        classes.insert(cycle.direction_class);
        former_walk_nodes.insert(former_walk_nodes.end(), cycle.walk.begin(), cycle.walk.end());
        auto& mu_slot = inherited_mu[cycle.direction_class];
        mu_slot = std::max(mu_slot, mu_of(cycle.id));
        collect_ferries(cycle.id, survivors[cycle.direction_class]);
        delta.retired.push_back(it->first);
        runtime_mu.erase(it->first);
        it = svc.cycles.erase(it);
      } else {
        ++it;
      }
    }
    if (classes.empty()) classes.insert(DirectionClass::FORWARD);

    for (DirectionClass cls : classes) {
      Handedness handed = unified_handedness(parent_face.orientation, cls);
      std::vector<NodeId> walk;
      for (NodeId node : face_boundary_walk(net, parent, handed)) {
        if (net.node(node).state != NodeState::FAILED) walk.push_back(node);
      }
      if (walk.size() < 2) continue;
      Cycle unified;
      unified.face = parent;
      unified.handedness = handed;
      unified.direction_class = cls;
      unified.walk = rotate_walk_to_min(std::move(walk));
      unified.unified = true;
      CycleId id = svc.add_cycle(std::move(unified));
      delta.created.push_back(id);
      if (!cfg.reoptimize_on_change && inherited_mu[cls] > 0.0) {
        runtime_mu[id] = inherited_mu[cls];
      }
      place_ferries(id, survivors[cls]);
    }

    deactivate_off_walk(former_walk_nodes, parent);
    finish_structure_edit();
    std::ostringstream detail;
    detail << "face=" << parent << " retired=" << delta.retired.size()
           << " created=" << delta.created.size();
    log("unify", detail.str());
    return delta;
  }

  static Handedness unified_handedness(Orientation orientation, DirectionClass cls) {
    Handedness forward =
        orientation == Orientation::UP ? Handedness::CLOCKWISE : Handedness::COUNTERCLOCKWISE;
    if (cls == DirectionClass::FORWARD) return forward;
    return forward == Handedness::CLOCKWISE ? Handedness::COUNTERCLOCKWISE
                                            : Handedness::CLOCKWISE;
  }

  void collect_ferries(CycleId cycle, std::vector<FerryId>& out) {
    for (Ferry& ferry : ferries) {
      if (ferry.cycle != cycle) continue;
      if (ferry.state == FerryState::MOVING) {
        out.push_back(ferry.id);
      } else if (ferry.state == FerryState::FAILED) {
        dump_cargo(ferry.id);
      }
    }
  }

  /// A dead or reassigned ferry leaves its cargo at its last node. Rerouting
  /// waits until the structural edit settles (the route cache and serving
  /// index are mid-rebuild when this runs).
  void dump_cargo(FerryId fid) {
    FerryData& data = ferry_data[fid];
    if (data.onboard.empty()) return;
    for (std::uint64_t mid : data.onboard) {
      NodeId drop = data.last_node != kInvalidId ? data.last_node
                                                 : messages[mid].path[messages[mid].hop].from;
      pending_dumps.push_back({drop, mid});
    }
    data.onboard.clear();
  }

  void process_pending_dumps() {
    std::vector<std::pair<NodeId, std::uint64_t>> drops;
    drops.swap(pending_dumps);
    for (const auto& [drop, mid] : drops) {
      if (messages[mid].record.delivered_at >= 0.0) continue;
      reroute_from(mid, drop);
      if (messages[mid].record.delivered_at < 0.0) enqueue_at(drop, mid);
    }
  }

  void place_ferries(CycleId cycle_id, const std::vector<FerryId>& candidates) {
    if (cfg.mode != SimMode::FERRY_TOKEN) return;
    const Cycle& cycle = svc.cycles.at(cycle_id);
    int placed = 0;
    for (FerryId fid : candidates) {
      Ferry& ferry = ferries[fid];
      ferry.cycle = cycle_id;
      ferry.walk_index = nearest_walk_index(cycle.walk, fid);
      ferry_data[fid].last_node = cycle.walk[ferry.walk_index];
      ++ferry_data[fid].move_generation;
      ++placed;
      ferry_depart(fid);
    }
    for (; placed < cfg.ferries_per_cycle; ++placed) {
      FerryId id = spawn_ferry(cycle_id);
      ferry_depart(id);
    }
  }

  /// Deterministic re-entry point onto a new walk: the node closest to where
  /// the ferry physically was, earliest walk position breaking ties.
  std::size_t nearest_walk_index(const std::vector<NodeId>& walk, FerryId fid) {
    NodeId last = ferry_data[fid].last_node;
    if (last == kInvalidId || !net.has_node(last)) return 0;
    Vec2 at = net.node(last).pos;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < walk.size(); ++i) {
      double d = distance(net.node(walk[i]).pos, at);
      if (d < best_d - 1e-15) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  void kick_cycle(CycleId cycle_id) {
    if (cfg.mode != SimMode::FERRY_TOKEN) return;
    for (Ferry& ferry : ferries) {
      if (ferry.cycle != cycle_id || ferry.state != FerryState::MOVING) continue;
      ++ferry_data[ferry.id].move_generation;
      ferry_depart(ferry.id);
    }
  }

  void remap_ferries_of(CycleId cycle_id) {
    const Cycle& cycle = svc.cycles.at(cycle_id);
    for (Ferry& ferry : ferries) {
      if (ferry.cycle != cycle_id || ferry.state != FerryState::MOVING) continue;
      ferry.walk_index = nearest_walk_index(cycle.walk, ferry.id);
      ferry_data[ferry.id].last_node = cycle.walk[ferry.walk_index];
      ++ferry_data[ferry.id].move_generation;
      ferry_depart(ferry.id);
    }
  }

  /// Candidates that end up on no active walk go INACTIVE; failed ones stay
  /// failed. Only nodes inside the unified subtree are considered.
  void deactivate_off_walk(const std::vector<NodeId>& candidates, FaceId parent) {
    std::set<NodeId> on_walk;
    for (const auto& [id, cycle] : svc.cycles) {
      (void)id;
      on_walk.insert(cycle.walk.begin(), cycle.walk.end());
    }
    std::set<NodeId> unique(candidates.begin(), candidates.end());
    for (FaceId face_id : descendants(parent)) {
      for (NodeId corner : net.face(face_id).corners) unique.insert(corner);
    }
    for (NodeId node : unique) {
      if (net.node(node).state == NodeState::ACTIVE && !on_walk.count(node)) {
        net.set_node_state(node, NodeState::INACTIVE);
        log("node_inactive", "node=" + std::to_string(node));
      }
    }
  }

  CycleDelta do_redivide(FaceId parent) {
    if (!net.has_face(parent)) fail(ErrorCode::UnknownEntity, "face " + std::to_string(parent));
    bool has_unified = false;
    for (const auto& [id, cycle] : svc.cycles) {
      (void)id;
      if (cycle.face == parent && cycle.unified) has_unified = true;
    }
    if (!has_unified) {
      fail(ErrorCode::NotUnified, "face " + std::to_string(parent) + " carries no unified cycle");
    }
    FaceId ancestor = net.face(parent).parent;
    while (ancestor != kInvalidId) {
      for (const auto& [id, cycle] : svc.cycles) {
        (void)id;
        if (cycle.face == ancestor && cycle.unified) {
          fail(ErrorCode::NodesStillInactive,
               "ancestor face " + std::to_string(ancestor) + " is still unified");
        }
      }
      ancestor = net.face(ancestor).parent;
    }

    CycleDelta delta;
    std::map<DirectionClass, std::vector<FerryId>> survivors;
    for (auto it = svc.cycles.begin(); it != svc.cycles.end();) {
      const Cycle& cycle = it->second;
      if (cycle.face != kInvalidId && in_subtree(parent, cycle.face)) {
        collect_ferries(cycle.id, survivors[cycle.direction_class]);
        delta.retired.push_back(it->first);
        runtime_mu.erase(it->first);
        it = svc.cycles.erase(it);
      } else {
        ++it;
      }
    }

    std::vector<std::pair<FaceId, bool>> targets;  // (face, keep-merged)
    collect_redivide_targets(parent, targets);
    std::map<DirectionClass, std::vector<CycleId>> created_by_class;
    for (const auto& [face_id, merged] : targets) {
      for (DirectionClass cls : scheme_classes()) {
        Handedness handed = unified_handedness(net.face(face_id).orientation, cls);
        std::vector<NodeId> walk;
        for (NodeId node : face_boundary_walk(net, face_id, handed)) {
          if (net.node(node).state != NodeState::FAILED) walk.push_back(node);
        }
        if (walk.size() < 2) continue;
        Cycle cycle;
        cycle.face = face_id;
        cycle.handedness = handed;
        cycle.direction_class = cls;
        cycle.walk = rotate_walk_to_min(std::move(walk));
        cycle.unified = merged || !net.face(face_id).is_leaf();
        CycleId id = svc.add_cycle(std::move(cycle));
        delta.created.push_back(id);
        created_by_class[cls].push_back(id);
      }
    }

    // Reactivate the nodes the restored cycles need.
    for (CycleId id : delta.created) {
      for (NodeId node : svc.cycles.at(id).walk) {
        if (net.node(node).state == NodeState::INACTIVE) {
          net.set_node_state(node, NodeState::ACTIVE);
          log("node_active", "node=" + std::to_string(node));
        }
      }
    }

    // Survivors spread round-robin over the new cycles of their class; every
    // cycle is then topped up to the configured ferry count.
    for (auto& [cls, list] : created_by_class) {
      const std::vector<FerryId>& pool = survivors[cls];
      std::map<CycleId, std::vector<FerryId>> assignment;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        assignment[list[i % list.size()]].push_back(pool[i]);
      }
      for (CycleId id : list) place_ferries(id, assignment[id]);
    }

    finish_structure_edit();
    after_structural_change("redivide");
    std::ostringstream detail;
    detail << "face=" << parent << " retired=" << delta.retired.size()
           << " created=" << delta.created.size();
    log("redivide", detail.str());
    return delta;
  }

  /// Leaves under `face` get their own cycles again; a child whose subtree
  /// still holds a failure keeps one merged cycle at its own boundary.
  void collect_redivide_targets(FaceId face_id, std::vector<std::pair<FaceId, bool>>& out) {
    const Face& face = net.face(face_id);
    if (face.is_leaf()) {
      out.push_back({face_id, false});
      return;
    }
    for (FaceId child : face.children) {
      if (subtree_has_failure(child)) {
        out.push_back({child, true});  // stays merged
      } else {
        collect_redivide_targets(child, out);
      }
    }
  }

  std::vector<DirectionClass> scheme_classes() const {
    if (scheme == Scheme::MIXED) {
      return {DirectionClass::FORWARD, DirectionClass::BACKWARD};
    }
    return {DirectionClass::FORWARD};
  }

  // --- growth -----------------------------------------------------------------

  void do_subdivide(FaceId face_id) {
    if (!net.has_face(face_id)) fail(ErrorCode::UnknownEntity, "face " + std::to_string(face_id));
    SubdivisionDelta delta = net.subdivide_face(face_id);
    for (NodeId node : delta.new_nodes) net.set_node_state(node, NodeState::INACTIVE);
    pending_swaps[face_id] = delta.new_nodes;
    log("subdivide", "face=" + std::to_string(face_id) + " new_nodes=" +
                         std::to_string(delta.new_nodes.size()));
  }

  void perform_swap(FaceId face_id) {
    auto pending = pending_swaps.find(face_id);
    if (pending == pending_swaps.end()) return;
    std::vector<NodeId> new_nodes = pending->second;
    pending_swaps.erase(pending);

    for (NodeId node : new_nodes) {
      if (net.node(node).state == NodeState::INACTIVE) {
        net.set_node_state(node, NodeState::ACTIVE);
        log("node_active", "node=" + std::to_string(node));
      }
    }

    CycleDelta delta;
    std::map<DirectionClass, std::vector<FerryId>> survivors;
    std::map<DirectionClass, double> inherited_mu;
    for (auto it = svc.cycles.begin(); it != svc.cycles.end();) {
      if (it->second.face == face_id) {
        auto& mu_slot = inherited_mu[it->second.direction_class];
        mu_slot = std::max(mu_slot, mu_of(it->first));
        collect_ferries(it->first, survivors[it->second.direction_class]);
        delta.retired.push_back(it->first);
        runtime_mu.erase(it->first);
        it = svc.cycles.erase(it);
      } else {
        ++it;
      }
    }

    const Face& face = net.face(face_id);
    std::map<DirectionClass, std::vector<CycleId>> created_by_class;
    for (FaceId child : face.children) {
      for (DirectionClass cls : scheme_classes()) {
        Handedness handed = unified_handedness(net.face(child).orientation, cls);
        Cycle cycle;
        cycle.face = child;
        cycle.handedness = handed;
        cycle.direction_class = cls;
        cycle.walk = face_boundary_walk(net, child, handed);
        CycleId id = svc.add_cycle(std::move(cycle));
        delta.created.push_back(id);
        created_by_class[cls].push_back(id);
        if (!cfg.reoptimize_on_change && inherited_mu[cls] > 0.0) {
          runtime_mu[id] = inherited_mu[cls];
        }
      }
    }

    refine_all_walks();

    for (auto& [cls, list] : created_by_class) {
      const std::vector<FerryId>& pool = survivors[cls];
      std::map<CycleId, std::vector<FerryId>> assignment;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        assignment[list[i % list.size()]].push_back(pool[i]);
      }
      for (CycleId id : list) place_ferries(id, assignment[id]);
    }

    finish_structure_edit();
    after_structural_change("swap");
    std::ostringstream detail;
    detail << "face=" << face_id << " retired=" << delta.retired.size()
           << " created=" << delta.created.size();
    log("swap", detail.str());
  }

  /// Expand walk legs that were split by a subdivision into their current
  /// edge chains (legs that never were edges — skip legs — stay as they are).
  void refine_all_walks() {
    for (auto& [id, cycle] : svc.cycles) {
      std::vector<NodeId> refined;
      bool changed = false;
      const std::size_t n = cycle.walk.size();
      for (std::size_t i = 0; i < n; ++i) {
        NodeId a = cycle.walk[i];
        NodeId b = cycle.walk[(i + 1) % n];
        refined.push_back(a);
        if (net.find_edge(a, b).has_value()) continue;
        try {
          std::vector<NodeId> chain = net.resolve_side(a, b);
          for (std::size_t k = 1; k + 1 < chain.size(); ++k) {
            refined.push_back(chain[k]);
            changed = true;
          }
        } catch (const Error&) {
          // A skip leg over a failed node: leave the direct move in place.
        }
      }
      if (changed) {
        cycle.walk = rotate_walk_to_min(std::move(refined));
        remap_ferries_of(id);
      }
    }
  }

  // --- shared structural-change plumbing ---------------------------------------

  void finish_structure_edit() {
    svc.rebuild_serving();
    ++version;
  }

  void after_structural_change(const std::string& reason) {
    ++structural_changes;
    if (cfg.reoptimize_on_change) reoptimize(reason);
    refresh_service_load();
    check_coverage();
    rescan_waiting_messages();
  }

  void reoptimize(const std::string& reason) {
    FlowTable flows;
    WeightTable weights;
    for (PairFlow& pair : pairs) {
      if (pair.rate <= 0.0 || !node_usable(pair.s) || !node_usable(pair.t)) continue;
      const auto& paths = service_paths(pair.s, pair.t);
      if (paths.empty()) continue;
      double share = pair.rate / static_cast<double>(paths.size());
      for (const auto& path : paths) {
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
          const auto* entries = svc.serving_for(path[i], path[i + 1]);
          if (!entries || entries->empty()) continue;
          double split = share / static_cast<double>(entries->size());
          for (const ServingEntry& entry : *entries) {
            flows[SlotKey{entry.cycle, entry.slot}] += split;
            weights[SlotKey{entry.cycle, entry.slot}] += split;
          }
        }
      }
    }
    bool any = false;
    for (const auto& [key, w] : weights) {
      (void)key;
      if (w > 0.0) any = true;
    }
    if (!any) {
      log("reoptimize_skipped", "reason=" + reason + " no-positive-weights");
      return;
    }
    RateSolution solution = optimize_rates(flows, weights);
    for (const auto& [cycle, mu] : solution.mu) {
      if (!svc.cycles.count(cycle)) continue;
      if (mu > 0.0) {
        double before = mu_of(cycle);
        runtime_mu[cycle] = mu;
        // A cycle coming out of a zero rate has ferries parked on a move
        // that will never complete; put them back on the road.
        if (before <= 0.0) kick_cycle(cycle);
      }
      // mu == 0 keeps whatever the cycle had (parking ferries mid-run would
      // silence failure detection on healthy cycles).
    }
    std::ostringstream detail;
    detail << "reason=" << reason << " cost=" << solution.cost;
    log("reoptimize", detail.str());
  }

  void check_coverage() {
    std::set<NodeId> on_walk;
    for (const auto& [id, cycle] : svc.cycles) {
      (void)id;
      on_walk.insert(cycle.walk.begin(), cycle.walk.end());
    }
    std::vector<NodeId> uncovered;
    for (const Node& node : net.nodes()) {
      if (node.state == NodeState::ACTIVE && !on_walk.count(node.id)) {
        uncovered.push_back(node.id);
      }
    }
    if (uncovered.empty()) {
      log("coverage_check", "ok");
    } else {
      std::ostringstream detail;
      detail << "violated:";
      for (NodeId node : uncovered) detail << " " << node;
      log("coverage_check", detail.str());
    }
  }

  /// After any structural change: waiting and in-service messages whose next
  /// arc is gone get fresh routes from where they stand.
  void rescan_waiting_messages() {
    process_pending_dumps();
    if (cfg.mode == SimMode::QUEUE_ABSTRACTION) {
      std::vector<std::uint64_t> displaced;
      displaced.swap(queue_limbo);
      for (auto it = station_index.begin(); it != station_index.end();) {
        Station& station = stations[it->second];
        if (svc.cycles.count(it->first.second)) {
          ++it;
          continue;
        }
        if (station.current != kNoMessage) {
          displaced.push_back(station.current);
          station.current = kNoMessage;
          ++station.generation;  // cancel the in-flight completion
          bump_queue(station.key.first.from, -1);
        }
        for (std::uint64_t mid : station.waiting) {
          displaced.push_back(mid);
          bump_queue(station.key.first.from, -1);
        }
        station.waiting.clear();
        it = station_index.erase(it);
      }
      for (std::uint64_t mid : displaced) {
        Msg& msg = messages[mid];
        if (msg.record.delivered_at >= 0.0) continue;
        NodeId at = msg.path[msg.hop].from;
        bool routed = reroute_from(mid, at);
        if (msg.record.delivered_at >= 0.0) continue;
        if (routed) {
          station_enter(mid);
        } else {
          queue_limbo.push_back(mid);  // retried after the next change
        }
      }
      return;
    }

    for (auto& [node, waiting] : node_queues) {
      if (waiting.empty()) continue;
      std::deque<std::uint64_t> keep;
      for (std::uint64_t mid : waiting) {
        Msg& msg = messages[mid];
        const DirectedEdge& arc = msg.path[msg.hop];
        bool ok = arc.from == node && !usable_serving(arc).empty();
        if (!ok) {
          bump_queue(node, -1);
          if (reroute_from(mid, node) && messages[mid].record.delivered_at < 0.0) {
            keep.push_back(mid);
            bump_queue(node, +1);
          } else if (messages[mid].record.delivered_at < 0.0) {
            keep.push_back(mid);  // still stuck; wait for the next change
            bump_queue(node, +1);
          }
        } else {
          keep.push_back(mid);
        }
      }
      waiting.swap(keep);
    }
  }

  // --- script ------------------------------------------------------------------

  void on_script(const Event& event) {
    const ScriptEvent& script = cfg.script[static_cast<std::size_t>(event.a)];
    switch (script.type) {
      case ScriptEvent::Type::NODE_FAILURE: apply_node_failure(script.node); break;
      case ScriptEvent::Type::FERRY_FAILURE:
        apply_ferry_failure(script.face, script.direction_class);
        break;
      case ScriptEvent::Type::SUBDIVIDE: do_subdivide(script.face); break;
      case ScriptEvent::Type::REPAIR_NODE: apply_repair_node(script.node); break;
      case ScriptEvent::Type::REPLACE_FERRY:
        apply_replace_ferry(script.face, script.direction_class);
        break;
    }
  }

  void apply_node_failure(NodeId node) {
    if (!net.has_node(node)) fail(ErrorCode::UnknownEntity, "node " + std::to_string(node));
    if (net.node(node).state == NodeState::FAILED) {
      fail(ErrorCode::AlreadyFailed, "node " + std::to_string(node) + " already failed");
    }
    net.set_node_state(node, NodeState::FAILED);
    ++version;  // routes through the node are stale immediately
    log("node_failed", "node=" + std::to_string(node));
  }

  void apply_ferry_failure(FaceId face, DirectionClass cls) {
    if (!net.has_face(face)) fail(ErrorCode::UnknownEntity, "face " + std::to_string(face));
    CycleId target = kInvalidId;
    for (const auto& [id, cycle] : svc.cycles) {
      if (cycle.face == face && cycle.direction_class == cls) target = id;
    }
    if (target == kInvalidId) {
      fail(ErrorCode::UnknownEntity, "no active cycle of that class on face " +
                                         std::to_string(face));
    }
    FerryId victim = kInvalidId;
    for (const Ferry& ferry : ferries) {
      if (ferry.cycle == target && ferry.state == FerryState::MOVING) {
        victim = ferry.id;
        break;
      }
    }
    if (victim == kInvalidId) {
      fail(ErrorCode::AlreadyFailed, "no moving ferry on cycle " + std::to_string(target));
    }
    ferries[victim].state = FerryState::FAILED;
    ++ferry_data[victim].move_generation;
    failed_ferries.push_back({victim, face, cls, false});
    log("ferry_failed", "ferry=" + std::to_string(victim) + " cycle=" + std::to_string(target));
  }

  void apply_repair_node(NodeId node) {
    if (!net.has_node(node)) fail(ErrorCode::UnknownEntity, "node " + std::to_string(node));
    if (net.node(node).state != NodeState::FAILED) {
      fail(ErrorCode::InvalidArgument, "node " + std::to_string(node) + " is not failed");
    }
    net.set_node_state(node, NodeState::ACTIVE);
    node_fail_counter.erase(node);
    detected_nodes.erase(node);
    ++version;
    log("node_repaired", "node=" + std::to_string(node));
    heal_unified_regions();
  }

  void apply_replace_ferry(FaceId face, DirectionClass cls) {
    if (!net.has_face(face)) fail(ErrorCode::UnknownEntity, "face " + std::to_string(face));
    bool found = false;
    for (FailedFerryRecord& record : failed_ferries) {
      if (record.resolved || record.face != face || record.direction_class != cls) continue;
      record.resolved = true;
      ferries[record.ferry].state = FerryState::RETIRED;
      dump_cargo(record.ferry);
      found = true;
      log("ferry_replaced", "ferry=" + std::to_string(record.ferry) + " face=" +
                                std::to_string(face));
      // Not yet merged away? Put a fresh ferry straight onto the cycle.
      for (const auto& [id, cycle] : svc.cycles) {
        if (cycle.face == face && cycle.direction_class == cls) {
          FerryId fresh = spawn_ferry(id);
          ferry_depart(fresh);
        }
      }
      break;
    }
    if (!found) {
      fail(ErrorCode::UnknownEntity, "no failed ferry recorded for face " + std::to_string(face));
    }
    heal_unified_regions();
    process_pending_dumps();  // replacement without a merge still drops cargo
  }

  /// Re-divide every outermost unified face whose subtree is failure-free.
  void heal_unified_regions() {
    std::vector<FaceId> unified;
    for (const auto& [id, cycle] : svc.cycles) {
      (void)id;
      if (cycle.unified && cycle.face != kInvalidId &&
          std::find(unified.begin(), unified.end(), cycle.face) == unified.end()) {
        unified.push_back(cycle.face);
      }
    }
    std::sort(unified.begin(), unified.end());
    for (FaceId face : unified) {
      bool outermost = true;
      for (FaceId other : unified) {
        if (other != face && in_subtree(other, face)) outermost = false;
      }
      if (outermost && !subtree_has_failure(face)) {
        do_redivide(face);
      }
    }
  }

  // --- event loop ----------------------------------------------------------------

  void dispatch(const Event& event) {
    switch (event.kind) {
      case kPairArrival: on_pair_arrival(event); break;
      case kStationDone: on_station_done(event); break;
      case kFerryArrive: on_ferry_arrive(event); break;
      case kVisitCheck: on_visit_check(event); break;
      case kScript: on_script(event); break;
      default: break;
    }
  }

  void run_until(double time) {
    while (!queue.empty() && queue.top().time <= time) {
      Event event = queue.top();
      queue.pop();
      now = event.time;
      dispatch(event);
    }
    now = std::max(now, time);
  }

  Metrics finish() {
    finished = true;
    touch_service_load();
    Metrics metrics;
    metrics.generated = generated;
    metrics.delivered = delivered;
    metrics.mean_delay = delivered > 0 ? delay_sum / static_cast<double>(delivered) : 0.0;
    metrics.per_pair = per_pair;
    for (auto& [node, account] : queue_accounts) {
      account.integral += static_cast<double>(account.count) * (now - account.last_time);
      account.last_time = now;
      metrics.avg_queue_length[node] = now > 0.0 ? account.integral / now : 0.0;
    }
    metrics.service_load = now > 0.0 ? service_load_integral / now : 0.0;
    metrics.realized_cost = (now > 0.0 ? delay_sum / now : 0.0) + metrics.service_load;
    metrics.structural_changes = structural_changes;

    std::uint64_t in_flight = generated - delivered;
    std::uint64_t undelivered = 0;
    for (const Msg& msg : messages) {
      if (msg.record.delivered_at < 0.0) ++undelivered;
    }
    std::ostringstream conservation;
    conservation << (undelivered == in_flight ? "ok" : "violated") << " generated=" << generated
                 << " delivered=" << delivered << " in_flight=" << in_flight;
    log("conservation_check", conservation.str());

    metrics.event_log = event_log;
    metrics.messages.reserve(messages.size());
    for (const Msg& msg : messages) metrics.messages.push_back(msg.record);
    return metrics;
  }

  // --- setup -----------------------------------------------------------------------

  void validate_and_start(const CyclePlan& plan) {
    if (!(cfg.horizon > 0.0)) fail(ErrorCode::InvalidArgument, "horizon must be positive");
    if (cfg.detection.failed_interactions < 1) {
      fail(ErrorCode::InvalidArgument, "detection needs at least one failed interaction");
    }
    if (!(cfg.detection.timeout_multiplier > 1.0)) {
      fail(ErrorCode::InvalidArgument, "visit-timeout multiplier must exceed 1");
    }
    if (cfg.ferries_per_cycle < 1) {
      fail(ErrorCode::InvalidArgument, "at least one ferry per cycle");
    }
    arrival_stop = cfg.arrival_stop >= 0.0 ? cfg.arrival_stop : cfg.horizon;

    scheme = plan.scheme();
    svc = ServiceGraph::from_plan(plan);
    runtime_mu = cfg.mu;

    route_stream = RandomStream(cfg.seed, "route-choice");
    service_stream = RandomStream(cfg.seed, "service");
    spawn_stream = RandomStream(cfg.seed, "spawn");

    for (const auto& [pair, rate] : cfg.demands.rates) {
      if (!std::isfinite(rate) || rate < 0.0) {
        fail(ErrorCode::InvalidArgument, "demand rate for " + pair_label(pair.first, pair.second) +
                                             " must be finite and non-negative");
      }
      if (pair.first == pair.second) {
        fail(ErrorCode::SameNode, "demand pair " + pair_label(pair.first, pair.second));
      }
      if (!net.has_node(pair.first) || !net.has_node(pair.second)) {
        fail(ErrorCode::UnknownEntity, "demand pair " + pair_label(pair.first, pair.second));
      }
      if (rate == 0.0) continue;
      PairFlow flow;
      flow.s = pair.first;
      flow.t = pair.second;
      flow.rate = rate;
      flow.stream = RandomStream(cfg.seed, "arrivals/" + pair_label(pair.first, pair.second));
      pairs.push_back(std::move(flow));
    }

    for (const ScriptEvent& event : cfg.script) {
      if (cfg.mode != SimMode::FERRY_TOKEN) {
        fail(ErrorCode::ScriptRequiresFerryMode,
             "scripted events need FERRY_TOKEN mode (detection and swaps ride on ferry visits)");
      }
      bool node_kind = event.type == ScriptEvent::Type::NODE_FAILURE ||
                       event.type == ScriptEvent::Type::REPAIR_NODE;
      if (node_kind) {
        if (!net.has_node(event.node)) {
          fail(ErrorCode::ScriptReferencesUnknownEntity,
               "script references node " + std::to_string(event.node));
        }
      } else if (!net.has_face(event.face)) {
        fail(ErrorCode::ScriptReferencesUnknownEntity,
             "script references face " + std::to_string(event.face));
      }
      if (event.time < 0.0 || event.time > cfg.horizon) {
        fail(ErrorCode::InvalidArgument, "script event time outside the horizon");
      }
    }

    check_stability();

    // Schedule in deterministic blocks: script, ferries, arrivals.
    for (std::size_t i = 0; i < cfg.script.size(); ++i) {
      schedule(cfg.script[i].time, kScript, i, 0);
    }
    if (cfg.mode == SimMode::FERRY_TOKEN) {
      // The stability check above guarantees a positive rate on every cycle.
      for (const auto& [id, cycle] : svc.cycles) {
        (void)cycle;
        for (int k = 0; k < cfg.ferries_per_cycle; ++k) {
          FerryId fid = spawn_ferry(id);
          ferry_depart(fid);
        }
      }
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      schedule(pairs[i].stream.exponential(pairs[i].rate), kPairArrival, i, 0);
    }

    refresh_service_load();
    check_coverage();
  }

  /// QUEUE mode must start stable: per-station arrival rates under the
  /// chosen rates, with demand split over equal routes and 50/50 over
  /// serving cycles, must stay below the cycle's service rate.
  void check_stability() {
    if (cfg.mode == SimMode::QUEUE_ABSTRACTION) {
      std::map<StationKey, double> load;
      for (PairFlow& pair : pairs) {
        const auto& paths = service_paths(pair.s, pair.t);
        if (paths.empty()) {
          fail(ErrorCode::Unreachable,
               "demand pair " + pair_label(pair.s, pair.t) + " has no service route");
        }
        double share = pair.rate / static_cast<double>(paths.size());
        for (const auto& path : paths) {
          for (std::size_t i = 0; i + 1 < path.size(); ++i) {
            DirectedEdge arc{path[i], path[i + 1]};
            auto options = usable_serving(arc);
            if (options.empty()) {
              fail(ErrorCode::UnstableConfig,
                   "no serviceable cycle on arc " + pair_label(arc.from, arc.to));
            }
            double split = share / static_cast<double>(options.size());
            for (const ServingEntry& entry : options) {
              load[{arc, entry.cycle}] += split;
            }
          }
        }
      }
      for (const auto& [key, lambda] : load) {
        double mu = mu_of(key.second);
        if (mu <= lambda) {
          fail(ErrorCode::UnstableConfig,
               "cycle " + std::to_string(key.second) + " serves arc " +
                   pair_label(key.first.from, key.first.to) + " with mu=" + std::to_string(mu) +
                   " <= lambda=" + std::to_string(lambda));
        }
      }
    } else {
      for (const auto& [id, cycle] : svc.cycles) {
        (void)cycle;
        if (mu_of(id) <= 0.0) {
          fail(ErrorCode::UnstableConfig,
               "cycle " + std::to_string(id) + " has no positive turnaround rate");
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Simulation facade
// ---------------------------------------------------------------------------

Simulation::Simulation(Network network, const CyclePlan& plan, SimConfig config)
    : impl_(std::make_unique<Impl>()) {
  impl_->net = std::move(network);
  impl_->cfg = std::move(config);
  impl_->validate_and_start(plan);
}

Simulation::~Simulation() = default;
Simulation::Simulation(Simulation&&) noexcept = default;
Simulation& Simulation::operator=(Simulation&&) noexcept = default;

Metrics Simulation::run() {
  impl_->run_until(impl_->cfg.horizon);
  return impl_->finish();
}

void Simulation::run_until(double time) { impl_->run_until(time); }

Metrics Simulation::finish() { return impl_->finish(); }

void Simulation::inject_node_failure(NodeId node, double time) {
  if (impl_->cfg.mode != SimMode::FERRY_TOKEN) {
    fail(ErrorCode::ScriptRequiresFerryMode, "failure injection needs FERRY_TOKEN mode");
  }
  if (!impl_->net.has_node(node)) {
    fail(ErrorCode::UnknownEntity, "node " + std::to_string(node));
  }
  if (time < impl_->now) fail(ErrorCode::InvalidArgument, "injection time is in the past");
  impl_->cfg.script.push_back(
      {ScriptEvent::Type::NODE_FAILURE, time, node, kInvalidId, DirectionClass::FORWARD});
  impl_->schedule(time, kScript, impl_->cfg.script.size() - 1, 0);
}

void Simulation::inject_ferry_failure(FaceId face, DirectionClass cls, double time) {
  if (impl_->cfg.mode != SimMode::FERRY_TOKEN) {
    fail(ErrorCode::ScriptRequiresFerryMode, "failure injection needs FERRY_TOKEN mode");
  }
  if (!impl_->net.has_face(face)) {
    fail(ErrorCode::UnknownEntity, "face " + std::to_string(face));
  }
  if (time < impl_->now) fail(ErrorCode::InvalidArgument, "injection time is in the past");
  impl_->cfg.script.push_back({ScriptEvent::Type::FERRY_FAILURE, time, kInvalidId, face, cls});
  impl_->schedule(time, kScript, impl_->cfg.script.size() - 1, 0);
}

CycleDelta Simulation::unify_cycles(FaceId parent_face) {
  CycleDelta delta = impl_->do_unify(parent_face);
  impl_->after_structural_change("manual_unify");
  return delta;
}

CycleDelta Simulation::redivide_cycles(FaceId parent_face) {
  return impl_->do_redivide(parent_face);
}

void Simulation::subdivide_at_runtime(FaceId face, double time) {
  if (impl_->cfg.mode != SimMode::FERRY_TOKEN) {
    fail(ErrorCode::ScriptRequiresFerryMode, "runtime growth needs FERRY_TOKEN mode");
  }
  if (!impl_->net.has_face(face)) {
    fail(ErrorCode::UnknownEntity, "face " + std::to_string(face));
  }
  if (!impl_->net.face(face).is_leaf()) {
    fail(ErrorCode::NotALeaf, "face " + std::to_string(face) + " is already subdivided");
  }
  if (time < impl_->now) fail(ErrorCode::InvalidArgument, "subdivision time is in the past");
  impl_->cfg.script.push_back(
      {ScriptEvent::Type::SUBDIVIDE, time, kInvalidId, face, DirectionClass::FORWARD});
  impl_->schedule(time, kScript, impl_->cfg.script.size() - 1, 0);
}

double Simulation::now() const { return impl_->now; }
const Network& Simulation::network() const { return impl_->net; }
const ServiceGraph& Simulation::service() const { return impl_->svc; }
const std::vector<Ferry>& Simulation::ferries() const { return impl_->ferries; }
std::uint64_t Simulation::in_flight() const { return impl_->generated - impl_->delivered; }

Metrics run_simulation(Network network, const CyclePlan& plan, const SimConfig& config) {
  Simulation sim(std::move(network), plan, config);
  return sim.run();
}

}  // namespace msq
