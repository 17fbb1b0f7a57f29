#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "msqferry/cycle_plan.hpp"
#include "msqferry/geometry.hpp"
#include "msqferry/queueing.hpp"

namespace msq {

enum class SimMode { QUEUE_ABSTRACTION, FERRY_TOKEN };

std::string_view to_string(SimMode mode);
SimMode sim_mode_from_string(std::string_view text);

using FerryId = std::uint32_t;

enum class FerryState { MOVING, FAILED, RETIRED };

struct Ferry {
  FerryId id = kInvalidId;
  CycleId cycle = kInvalidId;
  std::size_t walk_index = 0;  // node the ferry last arrived at
  FerryState state = FerryState::MOVING;
};

struct DetectionParams {
  int failed_interactions = 3;     // failed ferry-node contacts before a node is declared dead
  double timeout_multiplier = 3.0; // inter-visit gap, in expected turnarounds, before a ferry
                                   // is declared dead
};

struct ScriptEvent {
  enum class Type { NODE_FAILURE, FERRY_FAILURE, SUBDIVIDE, REPAIR_NODE, REPLACE_FERRY };
  Type type = Type::NODE_FAILURE;
  double time = 0.0;
  NodeId node = kInvalidId;  // NODE_FAILURE / REPAIR_NODE
  FaceId face = kInvalidId;  // FERRY_FAILURE / REPLACE_FERRY / SUBDIVIDE
  DirectionClass direction_class = DirectionClass::FORWARD;  // ferry events
};

struct SimConfig {
  SimMode mode = SimMode::QUEUE_ABSTRACTION;
  std::uint64_t seed = 0;
  double horizon = 0.0;
  /// Message generation stops here (defaults to the horizon); the gap is
  /// the drain margin for delivering everything already in flight.
  double arrival_stop = -1.0;
  DemandMatrix demands;
  std::map<CycleId, double> mu;  // per-cycle turnaround rates
  double default_mu = 0.0;       // applied to cycles missing from mu when > 0
  /// Re-run the rate optimizer over current demand routes whenever the
  /// cycle set changes (recovery, growth); otherwise new cycles inherit
  /// default_mu.
  bool reoptimize_on_change = true;
  int ferries_per_cycle = 1;  // FERRY_TOKEN mode
  DetectionParams detection;
  std::vector<ScriptEvent> script;
};

struct SimEvent {
  double time = 0.0;
  std::uint64_t seq = 0;
  std::string kind;
  std::string detail;
};

struct MessageRecord {
  std::uint64_t id = 0;
  NodeId source = kInvalidId;
  NodeId terminal = kInvalidId;
  double created_at = 0.0;
  double delivered_at = -1.0;  // negative while in flight
  std::uint32_t hops = 0;
};

struct PairStats {
  std::uint64_t count = 0;
  double mean_delay = 0.0;
};

struct Metrics {
  std::uint64_t generated = 0;
  std::uint64_t delivered = 0;
  double mean_delay = 0.0;  // over delivered messages
  std::map<std::pair<NodeId, NodeId>, PairStats> per_pair;
  std::map<NodeId, double> avg_queue_length;  // time-averaged, per node
  double service_load = 0.0;                  // time-averaged sum of active-cycle mu
  double realized_cost = 0.0;  // delivered-delay mass per unit time + service load
  std::uint64_t structural_changes = 0;
  std::vector<SimEvent> event_log;
  std::vector<MessageRecord> messages;
};

struct CycleDelta {
  std::vector<CycleId> retired;
  std::vector<CycleId> created;
};

/// The simulation's mutable view of the cycle system: active cycles plus
/// the directed-leg serving index derived from their walks.
struct ServiceGraph {
  std::map<CycleId, Cycle> cycles;
  ServingIndex serving;
  CycleId next_id = 0;

  static ServiceGraph from_plan(const CyclePlan& plan);
  CycleId add_cycle(Cycle cycle);      // assigns the next id
  void remove_cycle(CycleId id);
  void rebuild_serving();
  const std::vector<ServingEntry>* serving_for(NodeId from, NodeId to) const;
};

/// Discrete-event simulation of store-carry-forward delivery. Single
/// threaded; all randomness flows from the config seed; events at equal
/// times are ordered by their scheduling sequence number.
class Simulation {
 public:
  Simulation(Network network, const CyclePlan& plan, SimConfig config);
  ~Simulation();
  Simulation(Simulation&&) noexcept;
  Simulation& operator=(Simulation&&) noexcept;

  /// Run to the horizon and return the metrics.
  Metrics run();

  /// Advance until the given time (events at exactly that time included).
  void run_until(double time);
  /// Stop collecting and return metrics for the elapsed window.
  Metrics finish();

  // --- failure / growth operations --------------------------------------
  void inject_node_failure(NodeId node, double time);
  void inject_ferry_failure(FaceId face, DirectionClass cls, double time);
  /// Merge the cycles covering parent_face's subtree into one cycle per
  /// direction class on the parent boundary (skipping failed nodes);
  /// requires a recorded failure inside the subtree.
  CycleDelta unify_cycles(FaceId parent_face);
  /// Split a unified face back into child cycles, reactivating the nodes
  /// they need; children containing failed nodes stay merged.
  CycleDelta redivide_cycles(FaceId parent_face);
  /// Subdivide a leaf face at the given time; the new nodes join service
  /// (and the child cycles replace the face cycle) when a ferry of that
  /// face next arrives.
  void subdivide_at_runtime(FaceId face, double time);

  // --- inspection --------------------------------------------------------
  double now() const;
  const Network& network() const;
  const ServiceGraph& service() const;
  const std::vector<Ferry>& ferries() const;
  std::uint64_t in_flight() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Convenience wrapper: schedule the config's script and run to the horizon.
Metrics run_simulation(Network network, const CyclePlan& plan, const SimConfig& config);

}  // namespace msq
