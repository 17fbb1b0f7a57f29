#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msqferry/errors.hpp"

namespace msq {

using NodeId = std::uint32_t;
using EdgeId = std::uint32_t;
using FaceId = std::uint32_t;

inline constexpr std::uint32_t kInvalidId = 0xffffffffu;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(b - a); }
inline Vec2 midpoint(Vec2 a, Vec2 b) { return {(a.x + b.x) / 2.0, (a.y + b.y) / 2.0}; }

enum class NodeState { ACTIVE, INACTIVE, FAILED };
enum class Orientation { UP, DOWN };
enum class FaceKind { INITIAL, CORNER_CHILD, CENTER_CHILD };

std::string_view to_string(NodeState state);
std::string_view to_string(Orientation orientation);
std::string_view to_string(FaceKind kind);
NodeState node_state_from_string(std::string_view text);
Orientation orientation_from_string(std::string_view text);
FaceKind face_kind_from_string(std::string_view text);

struct Node {
  NodeId id = kInvalidId;
  Vec2 pos;
  std::uint32_t layer = 0;
  NodeState state = NodeState::ACTIVE;
};

/// Undirected edge between two nodes. Edges are tombstoned (alive=false)
/// when a subdivision splits them in half; ids are never reused.
struct Edge {
  EdgeId id = kInvalidId;
  NodeId a = kInvalidId;  // a < b always
  NodeId b = kInvalidId;
  double length = 0.0;
  bool alive = true;
  /// Leaf faces bordering this edge (1 on the region boundary, 2 inside).
  /// Kept up to date across subdivisions; a leaf face's side may be a
  /// chain of several edges when the neighbouring face is finer.
  std::vector<FaceId> adjacent_faces;
};

struct Face {
  FaceId id = kInvalidId;
  std::array<NodeId, 3> corners{kInvalidId, kInvalidId, kInvalidId};  // counterclockwise
  std::uint32_t layer = 0;
  Orientation orientation = Orientation::UP;
  FaceKind kind = FaceKind::INITIAL;
  FaceId parent = kInvalidId;
  /// Empty (all invalid) for leaves, otherwise exactly four children in
  /// canonical order: corner child at corners[0..2], then the center child.
  std::array<FaceId, 4> children{kInvalidId, kInvalidId, kInvalidId, kInvalidId};

  bool is_leaf() const { return children[0] == kInvalidId; }
};

struct SubdivisionDelta {
  FaceId face = kInvalidId;
  std::vector<NodeId> new_nodes;
  std::vector<EdgeId> new_edges;
  std::vector<EdgeId> removed_edges;
  std::array<FaceId, 4> children{kInvalidId, kInvalidId, kInvalidId, kInvalidId};
};

struct ValidationReport {
  bool empty_network = false;
  std::size_t node_count = 0;
  std::size_t alive_edge_count = 0;
  std::size_t leaf_face_count = 0;
  std::size_t component_count = 0;
  int max_degree = 0;
  std::uint32_t max_layer = 0;
  /// One human-readable line per failed check; empty means all checks passed.
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
};

/// UP when the corner opposite the side with the largest horizontal extent
/// lies above that side's line (ties by lowest side midpoint, then by
/// comparing the corner against the centroid).
Orientation classify_initial_orientation(const std::array<Vec2, 3>& corners);

bool is_equilateral(Vec2 a, Vec2 b, Vec2 c, double relative_tolerance);

/// Non-strict containment with an absolute tolerance on the edge tests.
bool point_in_triangle(Vec2 p, Vec2 a, Vec2 b, Vec2 c, double tolerance);

/// True when the open segments cross (shared endpoints excluded by the
/// caller via node identity, not by geometry).
bool segments_properly_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2, double tolerance);

inline std::pair<NodeId, NodeId> node_pair(NodeId a, NodeId b) {
  return a < b ? std::pair{a, b} : std::pair{b, a};
}

/// Planar triangle mesh built by recursive quartering of equilateral
/// triangles. Construction and subdivision require exclusive access;
/// read-only queries are safe to run concurrently afterwards.
class Network {
 public:
  Network() = default;

  /// Build the layer-0 triangulation. Corners with identical coordinates
  /// are merged into one node; triangles must be equilateral, pairwise
  /// interior-disjoint and edge-to-edge.
  static Network init_triangulation(const std::vector<std::array<Vec2, 3>>& triangles);

  /// Rebuild a network from serialized parts (ids must be dense and
  /// ascending). Derived structures (edge index, midpoint registry,
  /// adjacency, edge->face lists) are reconstructed.
  static Network from_parts(std::vector<Node> nodes,
                            const std::vector<std::pair<NodeId, NodeId>>& edge_pairs,
                            std::vector<Face> faces);

  /// Quarter a leaf face: reuse or create side midpoints, split the side
  /// edges, add the three center edges and register the four children.
  SubdivisionDelta subdivide_face(FaceId face_id);

  /// Full invariant scan (Euler formula, degree bound, planarity,
  /// equilaterality, layers, registry, adjacency, position uniqueness).
  ValidationReport validate() const;

  /// Cheap incremental planarity check: do the given (new) edges cross any
  /// alive edge? Used after each subdivision during generation.
  bool edges_planar(const std::vector<EdgeId>& edge_ids) const;

  // --- accessors ---------------------------------------------------------
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<Face>& faces() const { return faces_; }
  const Node& node(NodeId id) const;
  const Edge& edge(EdgeId id) const;
  const Face& face(FaceId id) const;
  bool has_node(NodeId id) const { return id < nodes_.size(); }
  bool has_face(FaceId id) const { return id < faces_.size(); }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t alive_edge_count() const { return alive_edge_count_; }
  std::size_t leaf_face_count() const;
  std::vector<FaceId> leaf_faces() const;  // ascending ids
  std::uint32_t max_layer() const;

  std::optional<EdgeId> find_edge(NodeId a, NodeId b) const;  // alive edges only
  std::optional<NodeId> registered_midpoint(NodeId a, NodeId b) const;
  const std::map<std::pair<NodeId, NodeId>, NodeId>& midpoint_registry() const {
    return midpoint_registry_;
  }

  /// Expand one side of a (possibly coarser) face into the chain of alive
  /// edges covering it, endpoints inclusive. Uses only the midpoint
  /// registry, never geometric predicates.
  std::vector<NodeId> resolve_side(NodeId a, NodeId b) const;

  /// Alive neighbours of a node as (neighbour id, edge length), sorted by id.
  const std::vector<std::pair<NodeId, double>>& neighbors(NodeId id) const;
  int degree(NodeId id) const { return static_cast<int>(neighbors(id).size()); }

  /// Representative length scale (side length of the first initial face).
  double scale() const { return base_side_; }

  void set_node_state(NodeId id, NodeState state);

 private:
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<Face> faces_;
  std::map<std::pair<NodeId, NodeId>, EdgeId> edge_index_;  // alive edges
  std::map<std::pair<NodeId, NodeId>, NodeId> midpoint_registry_;
  std::vector<std::vector<std::pair<NodeId, double>>> adjacency_;
  std::size_t alive_edge_count_ = 0;
  double base_side_ = 1.0;

  NodeId add_node(Vec2 pos, std::uint32_t layer, NodeState state = NodeState::ACTIVE);
  EdgeId add_edge(NodeId a, NodeId b);
  void kill_edge(EdgeId id);
  FaceId add_face(Face face);
  void check_validation_or_throw(ErrorCode code) const;
};

}  // namespace msq
