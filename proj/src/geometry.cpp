#include "msqferry/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <vector>

namespace msq {

namespace {

std::string id_text(std::uint32_t id) {
  return id == kInvalidId ? std::string("none") : std::to_string(id);
}

}  // namespace

std::string_view to_string(NodeState state) {
  switch (state) {
    case NodeState::ACTIVE: return "ACTIVE";
    case NodeState::INACTIVE: return "INACTIVE";
    case NodeState::FAILED: return "FAILED";
  }
  return "ACTIVE";
}

std::string_view to_string(Orientation orientation) {
  return orientation == Orientation::UP ? "UP" : "DOWN";
}

std::string_view to_string(FaceKind kind) {
  switch (kind) {
    case FaceKind::INITIAL: return "INITIAL";
    case FaceKind::CORNER_CHILD: return "CORNER_CHILD";
    case FaceKind::CENTER_CHILD: return "CENTER_CHILD";
  }
  return "INITIAL";
}

NodeState node_state_from_string(std::string_view text) {
  if (text == "ACTIVE") return NodeState::ACTIVE;
  if (text == "INACTIVE") return NodeState::INACTIVE;
  if (text == "FAILED") return NodeState::FAILED;
  fail(ErrorCode::BadFormat, "unknown node state '" + std::string(text) + "'");
}

Orientation orientation_from_string(std::string_view text) {
  if (text == "UP") return Orientation::UP;
  if (text == "DOWN") return Orientation::DOWN;
  fail(ErrorCode::BadFormat, "unknown orientation '" + std::string(text) + "'");
}

FaceKind face_kind_from_string(std::string_view text) {
  if (text == "INITIAL") return FaceKind::INITIAL;
  if (text == "CORNER_CHILD") return FaceKind::CORNER_CHILD;
  if (text == "CENTER_CHILD") return FaceKind::CENTER_CHILD;
  fail(ErrorCode::BadFormat, "unknown face kind '" + std::string(text) + "'");
}

Orientation classify_initial_orientation(const std::array<Vec2, 3>& corners) {
  int best = -1;
  double best_extent = -1.0;
  Vec2 best_mid{};
  for (int k = 0; k < 3; ++k) {
    Vec2 u = corners[k];
    Vec2 v = corners[(k + 1) % 3];
    double extent = std::abs(u.x - v.x);
    Vec2 mid = midpoint(u, v);
    bool better = false;
    if (extent > best_extent) {
      better = true;
    } else if (extent == best_extent) {
      better = mid.y < best_mid.y || (mid.y == best_mid.y && mid.x < best_mid.x);
    }
    if (better) {
      best = k;
      best_extent = extent;
      best_mid = mid;
    }
  }
  Vec2 u = corners[best];
  Vec2 v = corners[(best + 1) % 3];
  if (v.x < u.x || (v.x == u.x && v.y < u.y)) std::swap(u, v);
  Vec2 c = corners[(best + 2) % 3];
  double side = cross(v - u, c - u);
  if (side > 0) return Orientation::UP;
  if (side < 0) return Orientation::DOWN;
  Vec2 centroid = (1.0 / 3.0) * (corners[0] + corners[1] + corners[2]);
  return c.y > centroid.y ? Orientation::UP : Orientation::DOWN;
}

bool is_equilateral(Vec2 a, Vec2 b, Vec2 c, double relative_tolerance) {
  double l0 = distance(a, b);
  double l1 = distance(b, c);
  double l2 = distance(c, a);
  double lo = std::min({l0, l1, l2});
  double hi = std::max({l0, l1, l2});
  return hi > 0.0 && (hi - lo) <= relative_tolerance * hi;
}

bool point_in_triangle(Vec2 p, Vec2 a, Vec2 b, Vec2 c, double tolerance) {
  if (cross(b - a, c - a) < 0) std::swap(b, c);
  return cross(b - a, p - a) >= -tolerance && cross(c - b, p - b) >= -tolerance &&
         cross(a - c, p - c) >= -tolerance;
}

bool segments_properly_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2, double tolerance) {
  const double d1 = cross(p2 - p1, q1 - p1);
  const double d2 = cross(p2 - p1, q2 - p1);
  const double d3 = cross(q2 - q1, p1 - q1);
  const double d4 = cross(q2 - q1, p2 - q1);

  auto pos = [&](double d) { return d > tolerance; };
  auto neg = [&](double d) { return d < -tolerance; };

  if (((pos(d1) && neg(d2)) || (neg(d1) && pos(d2))) &&
      ((pos(d3) && neg(d4)) || (neg(d3) && pos(d4)))) {
    return true;  // proper crossing
  }

  // Near-collinear or endpoint-on-segment contact. Any touch that is not a
  // shared endpoint (the caller filters those by node id) is a violation.
  auto on_segment = [&](Vec2 a, Vec2 b, Vec2 p, double side_value) {
    if (std::abs(side_value) > tolerance) return false;
    const double len2 = dot(b - a, b - a);
    if (len2 == 0.0) return false;
    const double t = dot(p - a, b - a) / len2;
    return t > 1e-9 && t < 1.0 - 1e-9;  // strictly interior
  };
  if (on_segment(p1, p2, q1, d1)) return true;
  if (on_segment(p1, p2, q2, d2)) return true;
  if (on_segment(q1, q2, p1, d3)) return true;
  if (on_segment(q1, q2, p2, d4)) return true;
  return false;
}

// --- Network -----------------------------------------------------------

const Node& Network::node(NodeId id) const {
  if (id >= nodes_.size()) fail(ErrorCode::UnknownEntity, "node " + id_text(id));
  return nodes_[id];
}

const Edge& Network::edge(EdgeId id) const {
  if (id >= edges_.size()) fail(ErrorCode::UnknownEdge, "edge " + id_text(id));
  return edges_[id];
}

const Face& Network::face(FaceId id) const {
  if (id >= faces_.size()) fail(ErrorCode::FaceNotFound, "face " + id_text(id));
  return faces_[id];
}

std::size_t Network::leaf_face_count() const {
  std::size_t count = 0;
  for (const Face& f : faces_) {
    if (f.is_leaf()) ++count;
  }
  return count;
}

std::vector<FaceId> Network::leaf_faces() const {
  std::vector<FaceId> out;
  for (const Face& f : faces_) {
    if (f.is_leaf()) out.push_back(f.id);
  }
  return out;
}

std::uint32_t Network::max_layer() const {
  std::uint32_t deepest = 0;
  for (const Face& f : faces_) deepest = std::max(deepest, f.layer);
  return deepest;
}

std::optional<EdgeId> Network::find_edge(NodeId a, NodeId b) const {
  auto it = edge_index_.find(node_pair(a, b));
  if (it == edge_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<NodeId> Network::registered_midpoint(NodeId a, NodeId b) const {
  auto it = midpoint_registry_.find(node_pair(a, b));
  if (it == midpoint_registry_.end()) return std::nullopt;
  return it->second;
}

std::vector<NodeId> Network::resolve_side(NodeId a, NodeId b) const {
  if (find_edge(a, b)) return {a, b};
  auto mid = registered_midpoint(a, b);
  if (!mid) {
    fail(ErrorCode::BadFormat, "side (" + id_text(a) + "," + id_text(b) +
                                   ") has neither an edge nor a registered midpoint");
  }
  std::vector<NodeId> left = resolve_side(a, *mid);
  std::vector<NodeId> right = resolve_side(*mid, b);
  left.insert(left.end(), right.begin() + 1, right.end());
  return left;
}

const std::vector<std::pair<NodeId, double>>& Network::neighbors(NodeId id) const {
  if (id >= adjacency_.size()) fail(ErrorCode::UnknownEntity, "node " + id_text(id));
  return adjacency_[id];
}

void Network::set_node_state(NodeId id, NodeState state) {
  if (id >= nodes_.size()) fail(ErrorCode::UnknownEntity, "node " + id_text(id));
  nodes_[id].state = state;
}

NodeId Network::add_node(Vec2 pos, std::uint32_t layer, NodeState state) {
  NodeId id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(Node{id, pos, layer, state});
  adjacency_.emplace_back();
  return id;
}

EdgeId Network::add_edge(NodeId a, NodeId b) {
  auto key = node_pair(a, b);
  if (edge_index_.count(key)) {
    fail(ErrorCode::BadFormat,
         "duplicate edge (" + id_text(key.first) + "," + id_text(key.second) + ")");
  }
  EdgeId id = static_cast<EdgeId>(edges_.size());
  Edge e;
  e.id = id;
  e.a = key.first;
  e.b = key.second;
  e.length = distance(nodes_[e.a].pos, nodes_[e.b].pos);
  edges_.push_back(std::move(e));
  edge_index_[key] = id;
  ++alive_edge_count_;
  auto link = [&](NodeId u, NodeId v, double len) {
    auto& list = adjacency_[u];
    auto it = std::lower_bound(list.begin(), list.end(), v,
                               [](const auto& entry, NodeId id_) { return entry.first < id_; });
    list.insert(it, {v, len});
  };
  link(e.a, e.b, edges_[id].length);
  link(e.b, e.a, edges_[id].length);
  return id;
}

void Network::kill_edge(EdgeId id) {
  Edge& e = edges_[id];
  e.alive = false;
  edge_index_.erase(node_pair(e.a, e.b));
  --alive_edge_count_;
  auto unlink = [&](NodeId u, NodeId v) {
    auto& list = adjacency_[u];
    auto it = std::lower_bound(list.begin(), list.end(), v,
                               [](const auto& entry, NodeId id_) { return entry.first < id_; });
    if (it != list.end() && it->first == v) list.erase(it);
  };
  unlink(e.a, e.b);
  unlink(e.b, e.a);
}

FaceId Network::add_face(Face face) {
  face.id = static_cast<FaceId>(faces_.size());
  faces_.push_back(face);
  return face.id;
}

Network Network::init_triangulation(const std::vector<std::array<Vec2, 3>>& triangles) {
  Network net;
  std::map<std::pair<double, double>, NodeId> position_index;
  std::set<std::array<NodeId, 3>> seen_corner_sets;

  for (std::size_t i = 0; i < triangles.size(); ++i) {
    const auto& tri = triangles[i];
    if (!is_equilateral(tri[0], tri[1], tri[2], 1e-9)) {
      fail(ErrorCode::NonEquilateral, "input triangle #" + std::to_string(i));
    }
    std::array<NodeId, 3> ids{};
    for (int k = 0; k < 3; ++k) {
      auto key = std::pair{tri[k].x, tri[k].y};
      auto it = position_index.find(key);
      if (it != position_index.end()) {
        ids[k] = it->second;
      } else {
        ids[k] = net.add_node(tri[k], 0);
        position_index[key] = ids[k];
      }
    }
    std::array<Vec2, 3> pos{tri[0], tri[1], tri[2]};
    if (cross(pos[1] - pos[0], pos[2] - pos[0]) < 0) {
      std::swap(ids[1], ids[2]);
      std::swap(pos[1], pos[2]);
    }
    std::array<NodeId, 3> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    if (!seen_corner_sets.insert(sorted).second) {
      fail(ErrorCode::OverlappingFaces, "duplicate input triangle #" + std::to_string(i));
    }

    Face face;
    face.corners = ids;
    face.layer = 0;
    face.orientation = classify_initial_orientation(pos);
    face.kind = FaceKind::INITIAL;
    FaceId fid = net.add_face(face);

    for (int k = 0; k < 3; ++k) {
      NodeId a = ids[k];
      NodeId b = ids[(k + 1) % 3];
      EdgeId eid = net.find_edge(a, b) ? *net.find_edge(a, b) : net.add_edge(a, b);
      Edge& e = net.edges_[eid];
      if (e.adjacent_faces.size() >= 2) {
        fail(ErrorCode::OverlappingFaces,
             "edge (" + id_text(e.a) + "," + id_text(e.b) + ") bordered by 3+ triangles");
      }
      e.adjacent_faces.push_back(fid);
    }
  }

  if (!net.faces_.empty()) {
    const Face& first = net.faces_.front();
    net.base_side_ = distance(net.nodes_[first.corners[0]].pos, net.nodes_[first.corners[1]].pos);
  }

  const double area_tol = 1e-12 * net.base_side_ * net.base_side_;
  // Crossing edges mean overlapping triangles.
  for (std::size_t i = 0; i < net.edges_.size(); ++i) {
    for (std::size_t j = i + 1; j < net.edges_.size(); ++j) {
      const Edge& e = net.edges_[i];
      const Edge& g = net.edges_[j];
      if (e.a == g.a || e.a == g.b || e.b == g.a || e.b == g.b) continue;
      if (segments_properly_intersect(net.nodes_[e.a].pos, net.nodes_[e.b].pos,
                                      net.nodes_[g.a].pos, net.nodes_[g.b].pos, area_tol)) {
        fail(ErrorCode::OverlappingFaces, "edges (" + id_text(e.a) + "," + id_text(e.b) +
                                              ") and (" + id_text(g.a) + "," + id_text(g.b) +
                                              ") cross");
      }
    }
  }
  // A corner strictly inside another triangle also means overlap.
  for (const Node& n : net.nodes_) {
    for (const Face& f : net.faces_) {
      if (n.id == f.corners[0] || n.id == f.corners[1] || n.id == f.corners[2]) continue;
      Vec2 a = net.nodes_[f.corners[0]].pos;
      Vec2 b = net.nodes_[f.corners[1]].pos;
      Vec2 c = net.nodes_[f.corners[2]].pos;
      if (cross(b - a, n.pos - a) > area_tol && cross(c - b, n.pos - b) > area_tol &&
          cross(a - c, n.pos - c) > area_tol) {
        fail(ErrorCode::OverlappingFaces,
             "node " + id_text(n.id) + " lies inside face " + id_text(f.id));
      }
    }
  }
  // A corner in the interior of someone else's edge is a T-junction: the
  // triangles are not edge-to-edge.
  for (const Node& n : net.nodes_) {
    for (const Edge& e : net.edges_) {
      if (!e.alive || e.a == n.id || e.b == n.id) continue;
      Vec2 a = net.nodes_[e.a].pos;
      Vec2 b = net.nodes_[e.b].pos;
      double len2 = dot(b - a, b - a);
      double t = dot(n.pos - a, b - a) / len2;
      if (t <= 1e-9 || t >= 1.0 - 1e-9) continue;
      Vec2 closest = a + t * (b - a);
      if (distance(closest, n.pos) <= 1e-9 * net.base_side_) {
        fail(ErrorCode::DanglingVertex, "node " + id_text(n.id) + " splits edge (" +
                                            id_text(e.a) + "," + id_text(e.b) +
                                            ") without being its endpoint");
      }
    }
  }
  return net;
}

SubdivisionDelta Network::subdivide_face(FaceId face_id) {
  if (face_id >= faces_.size()) fail(ErrorCode::FaceNotFound, "face " + id_text(face_id));
  if (!faces_[face_id].is_leaf()) {
    fail(ErrorCode::NotALeaf, "face " + id_text(face_id) + " is already subdivided");
  }
  const std::array<NodeId, 3> corners = faces_[face_id].corners;
  const std::uint32_t layer = faces_[face_id].layer;
  const Orientation orientation = faces_[face_id].orientation;
  for (NodeId c : corners) {
    if (nodes_[c].state != NodeState::ACTIVE) {
      fail(ErrorCode::InvalidArgument,
           "corner node " + id_text(c) + " of face " + id_text(face_id) + " is not ACTIVE");
    }
  }

  SubdivisionDelta delta;
  delta.face = face_id;

  std::array<NodeId, 3> mids{};
  for (int k = 0; k < 3; ++k) {
    NodeId a = corners[k];
    NodeId b = corners[(k + 1) % 3];
    if (auto existing = registered_midpoint(a, b)) {
      mids[k] = *existing;
      continue;
    }
    auto eid = find_edge(a, b);
    if (!eid) {
      fail(ErrorCode::BadFormat, "leaf side (" + id_text(a) + "," + id_text(b) +
                                     ") has no edge and no registered midpoint");
    }
    NodeId m = add_node(midpoint(nodes_[a].pos, nodes_[b].pos), layer + 1);
    midpoint_registry_[node_pair(a, b)] = m;
    std::vector<FaceId> bordering = edges_[*eid].adjacent_faces;
    kill_edge(*eid);
    delta.removed_edges.push_back(*eid);
    for (NodeId end : {a, b}) {
      EdgeId half = add_edge(end, m);
      edges_[half].adjacent_faces = bordering;
      delta.new_edges.push_back(half);
    }
    delta.new_nodes.push_back(m);
    mids[k] = m;
  }

  for (int k = 0; k < 3; ++k) {
    EdgeId center_edge = add_edge(mids[k], mids[(k + 1) % 3]);
    delta.new_edges.push_back(center_edge);
  }

  for (int k = 0; k < 3; ++k) {
    Face child;
    child.corners = {corners[k], mids[k], mids[(k + 2) % 3]};
    child.layer = layer + 1;
    child.orientation = orientation;
    child.kind = FaceKind::CORNER_CHILD;
    child.parent = face_id;
    delta.children[k] = add_face(child);
  }
  {
    Face center;
    center.corners = {mids[0], mids[1], mids[2]};
    center.layer = layer + 1;
    center.orientation = orientation == Orientation::UP ? Orientation::DOWN : Orientation::UP;
    center.kind = FaceKind::CENTER_CHILD;
    center.parent = face_id;
    delta.children[3] = add_face(center);
  }
  faces_[face_id].children = delta.children;

  // Hand the side chains over from the parent to the bordering child, and
  // attach the center edges to their two new faces.
  auto reassign = [&](NodeId from, NodeId to, FaceId child) {
    std::vector<NodeId> chain = resolve_side(from, to);
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
      Edge& e = edges_[*find_edge(chain[i], chain[i + 1])];
      bool replaced = false;
      for (FaceId& f : e.adjacent_faces) {
        if (f == face_id) {
          f = child;
          replaced = true;
          break;
        }
      }
      if (!replaced) e.adjacent_faces.push_back(child);
    }
  };
  for (int k = 0; k < 3; ++k) {
    reassign(corners[k], mids[k], delta.children[k]);
    reassign(mids[k], corners[(k + 1) % 3], delta.children[(k + 1) % 3]);
  }
  for (int k = 0; k < 3; ++k) {
    Edge& e = edges_[*find_edge(mids[k], mids[(k + 1) % 3])];
    e.adjacent_faces = {delta.children[(k + 1) % 3], delta.children[3]};
    std::sort(e.adjacent_faces.begin(), e.adjacent_faces.end());
  }

  return delta;
}

bool Network::edges_planar(const std::vector<EdgeId>& edge_ids) const {
  const double area_tol = 1e-12 * base_side_ * base_side_;
  for (EdgeId id : edge_ids) {
    const Edge& e = edges_[id];
    if (!e.alive) continue;
    Vec2 ea = nodes_[e.a].pos;
    Vec2 eb = nodes_[e.b].pos;
    double lo_x = std::min(ea.x, eb.x), hi_x = std::max(ea.x, eb.x);
    double lo_y = std::min(ea.y, eb.y), hi_y = std::max(ea.y, eb.y);
    for (const Edge& g : edges_) {
      if (!g.alive || g.id == id) continue;
      if (e.a == g.a || e.a == g.b || e.b == g.a || e.b == g.b) continue;
      Vec2 ga = nodes_[g.a].pos;
      Vec2 gb = nodes_[g.b].pos;
      if (std::max(ga.x, gb.x) < lo_x - 1e-12 || std::min(ga.x, gb.x) > hi_x + 1e-12 ||
          std::max(ga.y, gb.y) < lo_y - 1e-12 || std::min(ga.y, gb.y) > hi_y + 1e-12) {
        continue;
      }
      if (segments_properly_intersect(ea, eb, ga, gb, area_tol)) return false;
    }
  }
  return true;
}

Network Network::from_parts(std::vector<Node> nodes,
                            const std::vector<std::pair<NodeId, NodeId>>& edge_pairs,
                            std::vector<Face> faces) {
  Network net;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id != i) fail(ErrorCode::BadFormat, "node ids must be dense and ascending");
  }
  net.nodes_ = std::move(nodes);
  net.adjacency_.resize(net.nodes_.size());
  for (const auto& [a, b] : edge_pairs) {
    if (a >= net.nodes_.size() || b >= net.nodes_.size() || a == b) {
      fail(ErrorCode::BadFormat, "edge references unknown node");
    }
    net.add_edge(a, b);
  }
  for (std::size_t i = 0; i < faces.size(); ++i) {
    if (faces[i].id != i) fail(ErrorCode::BadFormat, "face ids must be dense and ascending");
    for (NodeId c : faces[i].corners) {
      if (c >= net.nodes_.size()) fail(ErrorCode::BadFormat, "face references unknown node");
    }
  }
  net.faces_ = std::move(faces);
  for (const Face& f : net.faces_) {
    Vec2 a = net.nodes_[f.corners[0]].pos;
    Vec2 b = net.nodes_[f.corners[1]].pos;
    Vec2 c = net.nodes_[f.corners[2]].pos;
    if (cross(b - a, c - a) <= 0) {
      fail(ErrorCode::BadFormat, "face " + id_text(f.id) + " corners are not counterclockwise");
    }
    if (!f.is_leaf()) {
      for (FaceId child : f.children) {
        if (child >= net.faces_.size()) {
          fail(ErrorCode::BadFormat, "face " + id_text(f.id) + " references unknown child");
        }
      }
    }
  }
  if (!net.faces_.empty()) {
    const Face& first = net.faces_.front();
    net.base_side_ = distance(net.nodes_[first.corners[0]].pos, net.nodes_[first.corners[1]].pos);
  }

  // Rebuild the midpoint registry from the subdivision hierarchy: the
  // center child's corners are exactly the three side midpoints, matching
  // the side order of the parent.
  for (const Face& f : net.faces_) {
    if (f.is_leaf()) continue;
    const Face& center = net.faces_[f.children[3]];
    for (int k = 0; k < 3; ++k) {
      NodeId a = f.corners[k];
      NodeId b = f.corners[(k + 1) % 3];
      NodeId m = center.corners[k];
      Vec2 expected = midpoint(net.nodes_[a].pos, net.nodes_[b].pos);
      if (distance(expected, net.nodes_[m].pos) > 1e-9 * net.base_side_) {
        fail(ErrorCode::BadFormat,
             "face " + id_text(f.id) + " center child does not sit on the side midpoints");
      }
      net.midpoint_registry_[node_pair(a, b)] = m;
    }
  }

  // Rebuild the edge -> leaf-face adjacency by walking every leaf boundary.
  for (const Face& f : net.faces_) {
    if (!f.is_leaf()) continue;
    for (int k = 0; k < 3; ++k) {
      std::vector<NodeId> chain = net.resolve_side(f.corners[k], f.corners[(k + 1) % 3]);
      for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
        auto eid = net.find_edge(chain[i], chain[i + 1]);
        if (!eid) fail(ErrorCode::BadFormat, "leaf side chain uses a missing edge");
        Edge& e = net.edges_[*eid];
        if (std::find(e.adjacent_faces.begin(), e.adjacent_faces.end(), f.id) ==
            e.adjacent_faces.end()) {
          e.adjacent_faces.push_back(f.id);
        }
      }
    }
  }
  for (Edge& e : net.edges_) {
    if (e.alive) std::sort(e.adjacent_faces.begin(), e.adjacent_faces.end());
  }
  return net;
}

ValidationReport Network::validate() const {
  ValidationReport report;
  report.node_count = nodes_.size();
  report.alive_edge_count = alive_edge_count_;
  report.leaf_face_count = leaf_face_count();
  report.max_layer = max_layer();

  if (nodes_.empty()) {
    report.empty_network = true;
    report.failures.push_back("EmptyNetwork: network has no nodes");
    return report;
  }

  auto note = [&](const std::string& line) { report.failures.push_back(line); };

  // Connected components over alive edges.
  {
    std::vector<int> label(nodes_.size(), -1);
    int components = 0;
    for (NodeId start = 0; start < nodes_.size(); ++start) {
      if (label[start] != -1) continue;
      ++components;
      std::vector<NodeId> stack{start};
      label[start] = components;
      while (!stack.empty()) {
        NodeId u = stack.back();
        stack.pop_back();
        for (const auto& [v, len] : adjacency_[u]) {
          (void)len;
          if (label[v] == -1) {
            label[v] = components;
            stack.push_back(v);
          }
        }
      }
    }
    report.component_count = static_cast<std::size_t>(components);
  }

  // Euler formula: V - E + F_leaf + 1 = 1 + number of components
  // (= 2 when connected).
  {
    long long lhs = static_cast<long long>(nodes_.size()) -
                    static_cast<long long>(alive_edge_count_) +
                    static_cast<long long>(report.leaf_face_count) + 1;
    long long rhs = 1 + static_cast<long long>(report.component_count);
    if (lhs != rhs) {
      note("euler: V - E + F_leaf + 1 = " + std::to_string(lhs) + " but expected " +
           std::to_string(rhs));
    }
  }

  // Degree bound.
  for (NodeId u = 0; u < nodes_.size(); ++u) {
    int deg = static_cast<int>(adjacency_[u].size());
    report.max_degree = std::max(report.max_degree, deg);
  }
  if (report.max_degree > 6) {
    note("degree: maximum node degree " + std::to_string(report.max_degree) + " exceeds 6");
  }

  // Planarity: no two alive edges cross.
  {
    const double area_tol = 1e-12 * base_side_ * base_side_;
    std::vector<const Edge*> alive;
    alive.reserve(alive_edge_count_);
    for (const Edge& e : edges_) {
      if (e.alive) alive.push_back(&e);
    }
    bool crossing = false;
    for (std::size_t i = 0; i < alive.size() && !crossing; ++i) {
      const Edge& e = *alive[i];
      Vec2 ea = nodes_[e.a].pos, eb = nodes_[e.b].pos;
      double lo_x = std::min(ea.x, eb.x), hi_x = std::max(ea.x, eb.x);
      double lo_y = std::min(ea.y, eb.y), hi_y = std::max(ea.y, eb.y);
      for (std::size_t j = i + 1; j < alive.size(); ++j) {
        const Edge& g = *alive[j];
        if (e.a == g.a || e.a == g.b || e.b == g.a || e.b == g.b) continue;
        Vec2 ga = nodes_[g.a].pos, gb = nodes_[g.b].pos;
        if (std::max(ga.x, gb.x) < lo_x || std::min(ga.x, gb.x) > hi_x ||
            std::max(ga.y, gb.y) < lo_y || std::min(ga.y, gb.y) > hi_y) {
          continue;
        }
        if (segments_properly_intersect(ea, eb, ga, gb, area_tol)) {
          note("planarity: edges (" + id_text(e.a) + "," + id_text(e.b) + ") and (" +
               id_text(g.a) + "," + id_text(g.b) + ") cross");
          crossing = true;
          break;
        }
      }
    }
  }

  // All faces stay equilateral.
  for (const Face& f : faces_) {
    if (!is_equilateral(nodes_[f.corners[0]].pos, nodes_[f.corners[1]].pos,
                        nodes_[f.corners[2]].pos, 1e-9)) {
      note("equilateral: face " + id_text(f.id) + " violates the 1e-9 relative tolerance");
      break;
    }
  }

  // Layer consistency.
  for (const Face& f : faces_) {
    if (!f.is_leaf()) {
      for (FaceId child : f.children) {
        if (faces_[child].layer != f.layer + 1) {
          note("layers: face " + id_text(child) + " layer is not parent layer + 1");
        }
        if (faces_[child].parent != f.id) {
          note("layers: face " + id_text(child) + " parent link broken");
        }
      }
    }
    for (NodeId c : f.corners) {
      if (nodes_[c].layer > f.layer) {
        note("layers: corner " + id_text(c) + " is deeper than its face " + id_text(f.id));
      }
    }
  }
  for (const Node& n : nodes_) {
    if (n.layer > report.max_layer) {
      note("layers: node " + id_text(n.id) + " deeper than the deepest face");
    }
  }

  // Midpoint registry consistency: every entry names a real midpoint and
  // the spanned edge is gone (it was split).
  for (const auto& [pair, m] : midpoint_registry_) {
    Vec2 expected = midpoint(nodes_[pair.first].pos, nodes_[pair.second].pos);
    if (m >= nodes_.size() || distance(expected, nodes_[m].pos) > 1e-9 * base_side_) {
      note("registry: entry (" + id_text(pair.first) + "," + id_text(pair.second) +
           ") does not point at the midpoint");
    }
    if (find_edge(pair.first, pair.second)) {
      note("registry: split edge (" + id_text(pair.first) + "," + id_text(pair.second) +
           ") is still alive");
    }
  }

  // Position uniqueness.
  {
    std::vector<NodeId> order(nodes_.size());
    for (NodeId i = 0; i < nodes_.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](NodeId lhs, NodeId rhs) {
      const Vec2& a = nodes_[lhs].pos;
      const Vec2& b = nodes_[rhs].pos;
      return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    const double tol = 1e-9 * base_side_;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      const Vec2& a = nodes_[order[i]].pos;
      const Vec2& b = nodes_[order[i + 1]].pos;
      if (std::abs(a.x - b.x) <= tol && std::abs(a.y - b.y) <= tol) {
        note("positions: nodes " + id_text(order[i]) + " and " + id_text(order[i + 1]) +
             " coincide");
      }
    }
  }

  // Side chains resolve, and the stored edge->leaf adjacency matches a
  // recomputation from the leaf boundaries.
  {
    std::map<EdgeId, std::vector<FaceId>> recomputed;
    bool sides_ok = true;
    for (const Face& f : faces_) {
      if (!f.is_leaf()) continue;
      for (int k = 0; k < 3 && sides_ok; ++k) {
        std::vector<NodeId> chain;
        try {
          chain = resolve_side(f.corners[k], f.corners[(k + 1) % 3]);
        } catch (const Error&) {
          note("sides: face " + id_text(f.id) + " side " + std::to_string(k) +
               " cannot be resolved into edges");
          sides_ok = false;
          break;
        }
        for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
          auto eid = find_edge(chain[i], chain[i + 1]);
          if (!eid) {
            note("sides: face " + id_text(f.id) + " chain uses a dead edge");
            sides_ok = false;
            break;
          }
          recomputed[*eid].push_back(f.id);
        }
      }
    }
    if (sides_ok) {
      for (const Edge& e : edges_) {
        if (!e.alive) continue;
        auto stored = e.adjacent_faces;
        std::sort(stored.begin(), stored.end());
        auto fresh = recomputed[e.id];
        std::sort(fresh.begin(), fresh.end());
        if (fresh.empty() || fresh.size() > 2) {
          note("adjacency: edge (" + id_text(e.a) + "," + id_text(e.b) + ") borders " +
               std::to_string(fresh.size()) + " leaf faces");
          break;
        }
        if (stored != fresh) {
          note("adjacency: edge (" + id_text(e.a) + "," + id_text(e.b) +
               ") stored face list is stale");
          break;
        }
      }
    }
  }

  return report;
}

void Network::check_validation_or_throw(ErrorCode code) const {
  ValidationReport report = validate();
  if (!report.ok()) fail(code, report.failures.front());
}

}  // namespace msq
