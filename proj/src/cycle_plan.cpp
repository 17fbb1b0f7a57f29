#include "msqferry/cycle_plan.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace msq {

std::string_view to_string(Scheme scheme) {
  return scheme == Scheme::MIXED ? "MIXED" : "ALL_CLOCKWISE";
}

std::string_view to_string(Handedness handedness) {
  return handedness == Handedness::CLOCKWISE ? "CLOCKWISE" : "COUNTERCLOCKWISE";
}

std::string_view to_string(DirectionClass direction_class) {
  return direction_class == DirectionClass::FORWARD ? "FORWARD" : "BACKWARD";
}

Scheme scheme_from_string(std::string_view text) {
  if (text == "MIXED" || text == "mixed") return Scheme::MIXED;
  if (text == "ALL_CLOCKWISE" || text == "all-clockwise" || text == "all_clockwise") {
    return Scheme::ALL_CLOCKWISE;
  }
  fail(ErrorCode::BadFormat, "unknown scheme '" + std::string(text) + "'");
}

Handedness handedness_from_string(std::string_view text) {
  if (text == "CLOCKWISE") return Handedness::CLOCKWISE;
  if (text == "COUNTERCLOCKWISE") return Handedness::COUNTERCLOCKWISE;
  fail(ErrorCode::BadFormat, "unknown handedness '" + std::string(text) + "'");
}

DirectionClass direction_class_from_string(std::string_view text) {
  if (text == "FORWARD") return DirectionClass::FORWARD;
  if (text == "BACKWARD") return DirectionClass::BACKWARD;
  fail(ErrorCode::BadFormat, "unknown direction class '" + std::string(text) + "'");
}

std::vector<NodeId> rotate_walk_to_min(std::vector<NodeId> walk) {
  if (walk.empty()) return walk;
  auto min_it = std::min_element(walk.begin(), walk.end());
  std::rotate(walk.begin(), min_it, walk.end());
  return walk;
}

std::vector<NodeId> face_boundary_walk(const Network& network, FaceId face_id,
                                       Handedness handedness) {
  const Face& f = network.face(face_id);
  std::vector<NodeId> walk;
  for (int k = 0; k < 3; ++k) {
    std::vector<NodeId> chain = network.resolve_side(f.corners[k], f.corners[(k + 1) % 3]);
    walk.insert(walk.end(), chain.begin(), chain.end() - 1);  // drop the shared junction
  }
  if (handedness == Handedness::CLOCKWISE) {
    std::reverse(walk.begin(), walk.end());
  }
  return rotate_walk_to_min(std::move(walk));
}

ServingIndex build_serving_index(const std::vector<Cycle>& cycles) {
  ServingIndex index;
  for (const Cycle& cycle : cycles) {
    for (std::size_t i = 0; i < cycle.walk.size(); ++i) {
      index[cycle.leg(i)].push_back({cycle.id, static_cast<std::uint32_t>(i + 1)});
    }
  }
  for (auto& [edge, entries] : index) {
    std::sort(entries.begin(), entries.end());
  }
  return index;
}

CyclePlan::CyclePlan(Scheme scheme, std::vector<Cycle> cycles)
    : scheme_(scheme), cycles_(std::move(cycles)), serving_(build_serving_index(cycles_)) {}

const Cycle& CyclePlan::cycle(CycleId id) const {
  if (id >= cycles_.size()) fail(ErrorCode::UnknownEntity, "cycle " + std::to_string(id));
  return cycles_[id];
}

const std::vector<ServingEntry>& CyclePlan::serving_cycles(const Network& network, NodeId from,
                                                           NodeId to) const {
  if (!network.has_node(from) || !network.has_node(to) || !network.find_edge(from, to)) {
    fail(ErrorCode::UnknownEdge,
         "(" + std::to_string(from) + "," + std::to_string(to) + ") is not an edge");
  }
  static const std::vector<ServingEntry> kEmpty;
  auto it = serving_.find(DirectedEdge{from, to});
  return it == serving_.end() ? kEmpty : it->second;
}

namespace {

Handedness forward_handedness(Orientation orientation) {
  // Clockwise on UP faces, counterclockwise on DOWN faces: the two faces
  // sharing an edge then run it in the same direction (gear meshing).
  return orientation == Orientation::UP ? Handedness::CLOCKWISE : Handedness::COUNTERCLOCKWISE;
}

Handedness opposite(Handedness handedness) {
  return handedness == Handedness::CLOCKWISE ? Handedness::COUNTERCLOCKWISE
                                             : Handedness::CLOCKWISE;
}

/// Boundary edges (one adjacent leaf face) whose reverse direction no
/// clockwise face cycle covers, stitched into closed counterclockwise
/// loops. `uncovered` maps tail node -> heads, consumed while tracing.
std::vector<std::vector<NodeId>> trace_boundary_loops(
    std::map<NodeId, std::set<NodeId>>& uncovered) {
  std::vector<std::vector<NodeId>> loops;
  while (!uncovered.empty()) {
    NodeId start = uncovered.begin()->first;
    std::vector<NodeId> loop{start};
    NodeId current = start;
    while (true) {
      auto it = uncovered.find(current);
      if (it == uncovered.end() || it->second.empty()) {
        fail(ErrorCode::BadFormat, "boundary loop does not close at node " +
                                       std::to_string(current));
      }
      NodeId next = *it->second.begin();  // smallest head: deterministic at pinch points
      it->second.erase(it->second.begin());
      if (it->second.empty()) uncovered.erase(it);
      if (next == start) break;
      loop.push_back(next);
      current = next;
    }
    loops.push_back(rotate_walk_to_min(std::move(loop)));
  }
  return loops;
}

}  // namespace

CyclePlan assign_cycles(const Network& network, Scheme scheme) {
  std::vector<FaceId> leaves = network.leaf_faces();
  if (network.nodes().empty() || leaves.empty()) {
    fail(ErrorCode::EmptyNetwork, "cannot assign cycles to an empty network");
  }

  std::vector<Cycle> cycles;
  auto add = [&](FaceId face, Handedness handedness, DirectionClass cls, bool perimeter,
                 std::vector<NodeId> walk) {
    Cycle cycle;
    cycle.id = static_cast<CycleId>(cycles.size());
    cycle.face = face;
    cycle.handedness = handedness;
    cycle.direction_class = cls;
    cycle.perimeter = perimeter;
    cycle.walk = std::move(walk);
    cycles.push_back(std::move(cycle));
  };

  if (scheme == Scheme::MIXED) {
    for (FaceId leaf : leaves) {
      Handedness forward = forward_handedness(network.face(leaf).orientation);
      add(leaf, forward, DirectionClass::FORWARD, false,
          face_boundary_walk(network, leaf, forward));
      add(leaf, opposite(forward), DirectionClass::BACKWARD, false,
          face_boundary_walk(network, leaf, opposite(forward)));
    }
  } else {
    for (FaceId leaf : leaves) {
      add(leaf, Handedness::CLOCKWISE, DirectionClass::FORWARD, false,
          face_boundary_walk(network, leaf, Handedness::CLOCKWISE));
    }
    // Reverse directions of boundary edges are not covered by any clockwise
    // cycle; dedicated counterclockwise perimeter cycles provide them.
    ServingIndex covered = build_serving_index(cycles);
    std::map<NodeId, std::set<NodeId>> uncovered;
    for (const Edge& e : network.edges()) {
      if (!e.alive || e.adjacent_faces.size() != 1) continue;
      for (auto [from, to] : {std::pair{e.a, e.b}, std::pair{e.b, e.a}}) {
        if (!covered.count(DirectedEdge{from, to})) uncovered[from].insert(to);
      }
    }
    for (auto& loop : trace_boundary_loops(uncovered)) {
      add(kInvalidId, Handedness::COUNTERCLOCKWISE, DirectionClass::BACKWARD, true,
          std::move(loop));
    }
  }

  return CyclePlan(scheme, std::move(cycles));
}

}  // namespace msq
