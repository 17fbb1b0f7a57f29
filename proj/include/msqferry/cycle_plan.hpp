#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <vector>

#include "msqferry/geometry.hpp"

namespace msq {

enum class Scheme { MIXED, ALL_CLOCKWISE };
enum class Handedness { CLOCKWISE, COUNTERCLOCKWISE };
enum class DirectionClass { FORWARD, BACKWARD };

std::string_view to_string(Scheme scheme);
std::string_view to_string(Handedness handedness);
std::string_view to_string(DirectionClass direction_class);
Scheme scheme_from_string(std::string_view text);
Handedness handedness_from_string(std::string_view text);
DirectionClass direction_class_from_string(std::string_view text);

using CycleId = std::uint32_t;

struct DirectedEdge {
  NodeId from = kInvalidId;
  NodeId to = kInvalidId;
  auto operator<=>(const DirectedEdge&) const = default;
};

/// A ferry's closed route. The walk lists visited nodes in order; leg i
/// runs from walk[i] to walk[(i+1) % walk.size()]. For a plain leaf-face
/// cycle the walk is the face boundary at the finest existing edge
/// resolution, rotated to start at the smallest node id. Slot numbers are
/// 1-based walk positions (1..3 on a triangle whose sides are single
/// edges; larger when a side is a chain of finer edges).
struct Cycle {
  CycleId id = kInvalidId;
  FaceId face = kInvalidId;  // kInvalidId for the perimeter cycle
  Handedness handedness = Handedness::CLOCKWISE;
  DirectionClass direction_class = DirectionClass::FORWARD;
  std::vector<NodeId> walk;
  bool perimeter = false;  // ALL_CLOCKWISE boundary-coverage cycle
  bool unified = false;    // recovery cycle covering a non-leaf face

  std::size_t leg_count() const { return walk.size(); }
  DirectedEdge leg(std::size_t i) const {
    return {walk[i], walk[(i + 1) % walk.size()]};
  }
};

struct ServingEntry {
  CycleId cycle = kInvalidId;
  std::uint32_t slot = 0;  // 1-based
  auto operator<=>(const ServingEntry&) const = default;
};

using ServingIndex = std::map<DirectedEdge, std::vector<ServingEntry>>;

/// Immutable assignment of ferry cycles to leaf faces plus the directed
/// edge -> serving cycles index. Rebuilt wholesale after topology changes;
/// the simulation keeps its own evolving copy of the cycles.
class CyclePlan {
 public:
  CyclePlan() = default;
  CyclePlan(Scheme scheme, std::vector<Cycle> cycles);

  Scheme scheme() const { return scheme_; }
  const std::vector<Cycle>& cycles() const { return cycles_; }
  const Cycle& cycle(CycleId id) const;
  const ServingIndex& serving_index() const { return serving_; }

  /// Cycles serving the directed edge (from -> to); throws UnknownEdge if
  /// the pair is not an alive edge of the network.
  const std::vector<ServingEntry>& serving_cycles(const Network& network, NodeId from,
                                                  NodeId to) const;

 private:
  Scheme scheme_ = Scheme::MIXED;
  std::vector<Cycle> cycles_;
  ServingIndex serving_;
};

/// Boundary walk of a face at the finest existing edge resolution,
/// endpoints deduplicated, rotated to start at the smallest node id.
/// COUNTERCLOCKWISE follows the stored corner order; CLOCKWISE reverses it.
std::vector<NodeId> face_boundary_walk(const Network& network, FaceId face_id,
                                       Handedness handedness);

std::vector<NodeId> rotate_walk_to_min(std::vector<NodeId> walk);

/// Serving index over an arbitrary cycle set (also used by the simulation
/// after recovery operations rewrite cycles).
ServingIndex build_serving_index(const std::vector<Cycle>& cycles);

/// MIXED: forward cycles run clockwise on UP faces and counterclockwise on
/// DOWN faces (backward cycles the opposite), so the two faces sharing an
/// edge serve each direction together. ALL_CLOCKWISE: one clockwise cycle
/// per leaf face plus counterclockwise perimeter cycles covering the
/// otherwise-unserved reverse directions of boundary edges.
CyclePlan assign_cycles(const Network& network, Scheme scheme);

}  // namespace msq
