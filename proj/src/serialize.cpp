#include "msqferry/serialize.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "msqferry/version.hpp"

namespace msq {

namespace {

using json = nlohmann::json;  // std::map-backed: keys always sorted

std::string dump(const json& document) { return document.dump(2) + "\n"; }

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::BadFormat, std::string("invalid JSON: ") + e.what());
  }
}

/// Shortest round-trip decimal form, identical to the JSON emitters.
std::string number_text(double value) { return json(value).dump(); }

std::string pair_key(NodeId a, NodeId b) {
  return std::to_string(a) + "," + std::to_string(b);
}

std::pair<NodeId, NodeId> parse_pair_key(const std::string& key) {
  auto comma = key.find(',');
  if (comma == std::string::npos) {
    fail(ErrorCode::BadFormat, "demand key '" + key + "' is not \"s,t\"");
  }
  try {
    std::size_t used_a = 0, used_b = 0;
    unsigned long a = std::stoul(key.substr(0, comma), &used_a);
    unsigned long b = std::stoul(key.substr(comma + 1), &used_b);
    if (used_a != comma || comma + 1 + used_b != key.size()) {
      fail(ErrorCode::BadFormat, "demand key '" + key + "' has trailing characters");
    }
    return {static_cast<NodeId>(a), static_cast<NodeId>(b)};
  } catch (const std::logic_error&) {
    fail(ErrorCode::BadFormat, "demand key '" + key + "' is not \"s,t\"");
  }
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

}  // namespace

std::string network_to_json(const Network& network) {
  json doc;
  doc["schema_version"] = kSchemaVersion;

  json nodes = json::array();
  for (const Node& n : network.nodes()) {
    nodes.push_back({{"id", n.id},
                     {"layer", n.layer},
                     {"state", std::string(to_string(n.state))},
                     {"x", n.pos.x},
                     {"y", n.pos.y}});
  }
  doc["nodes"] = std::move(nodes);

  json edges = json::array();
  for (const Edge& e : network.edges()) {
    if (e.alive) edges.push_back({e.a, e.b});
  }
  doc["edges"] = std::move(edges);

  json faces = json::array();
  for (const Face& f : network.faces()) {
    json entry = {{"id", f.id},
                  {"corners", {f.corners[0], f.corners[1], f.corners[2]}},
                  {"layer", f.layer},
                  {"orientation", std::string(to_string(f.orientation))},
                  {"kind", std::string(to_string(f.kind))}};
    entry["parent"] = f.parent == kInvalidId ? json(nullptr) : json(f.parent);
    json children = json::array();
    if (!f.is_leaf()) {
      for (FaceId child : f.children) children.push_back(child);
    }
    entry["children"] = std::move(children);
    faces.push_back(std::move(entry));
  }
  doc["faces"] = std::move(faces);
  return dump(doc);
}

Network network_from_json(const std::string& text) {
  json doc = parse(text);
  try {
    std::vector<Node> nodes;
    for (const auto& n : doc.at("nodes")) {
      Node node;
      node.id = n.at("id").get<NodeId>();
      node.pos = {n.at("x").get<double>(), n.at("y").get<double>()};
      node.layer = n.at("layer").get<std::uint32_t>();
      node.state = node_state_from_string(n.at("state").get<std::string>());
      nodes.push_back(node);
    }

    std::vector<std::pair<NodeId, NodeId>> edge_pairs;
    for (const auto& e : doc.at("edges")) {
      if (!e.is_array() || e.size() != 2) {
        fail(ErrorCode::BadFormat, "edge entries must be [a, b] pairs");
      }
      edge_pairs.push_back({e.at(0).get<NodeId>(), e.at(1).get<NodeId>()});
    }

    std::vector<Face> faces;
    for (const auto& f : doc.at("faces")) {
      Face face;
      face.id = f.at("id").get<FaceId>();
      const auto& corners = f.at("corners");
      if (!corners.is_array() || corners.size() != 3) {
        fail(ErrorCode::BadFormat, "faces need exactly 3 corners");
      }
      for (std::size_t i = 0; i < 3; ++i) face.corners[i] = corners.at(i).get<NodeId>();
      face.layer = f.at("layer").get<std::uint32_t>();
      face.orientation = orientation_from_string(f.at("orientation").get<std::string>());
      face.kind = face_kind_from_string(f.at("kind").get<std::string>());
      face.parent = f.at("parent").is_null() ? kInvalidId : f.at("parent").get<FaceId>();
      const auto& children = f.at("children");
      if (!children.empty()) {
        if (children.size() != 4) {
          fail(ErrorCode::BadFormat, "faces have either 0 or 4 children");
        }
        for (std::size_t i = 0; i < 4; ++i) face.children[i] = children.at(i).get<FaceId>();
      }
      faces.push_back(face);
    }
    return Network::from_parts(std::move(nodes), edge_pairs, std::move(faces));
  } catch (const json::exception& e) {
    fail(ErrorCode::BadFormat, std::string("bad network document: ") + e.what());
  }
}

std::string plan_to_json(const CyclePlan& plan) {
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["scheme"] = std::string(to_string(plan.scheme()));
  json cycles = json::array();
  for (const Cycle& c : plan.cycles()) {
    json entry = {{"id", c.id},
                  {"handedness", std::string(to_string(c.handedness))},
                  {"class", std::string(to_string(c.direction_class))},
                  {"perimeter", c.perimeter},
                  {"unified", c.unified},
                  {"walk", c.walk}};
    entry["face"] = c.face == kInvalidId ? json(nullptr) : json(c.face);
    json edges = json::array();
    for (std::size_t i = 0; i < c.leg_count(); ++i) {
      DirectedEdge leg = c.leg(i);
      edges.push_back({leg.from, leg.to});
    }
    entry["edges"] = std::move(edges);
    cycles.push_back(std::move(entry));
  }
  doc["cycles"] = std::move(cycles);
  return dump(doc);
}

std::string validation_to_json(const ValidationReport& report) {
  json doc = {{"ok", report.ok()},
              {"empty_network", report.empty_network},
              {"node_count", report.node_count},
              {"alive_edge_count", report.alive_edge_count},
              {"leaf_face_count", report.leaf_face_count},
              {"component_count", report.component_count},
              {"max_degree", report.max_degree},
              {"max_layer", report.max_layer},
              {"failures", report.failures}};
  return dump(doc);
}

std::string route_to_json(const Route& route, double euclidean_distance) {
  json hops = json::array();
  for (const RouteHop& hop : route.hops) hops.push_back({hop.from, hop.to});
  json trace = json::array();
  for (const ServingEntry& entry : route.cycle_trace) {
    trace.push_back({{"cycle", entry.cycle}, {"slot", entry.slot}});
  }
  json doc = {{"source", route.source},
              {"terminal", route.terminal},
              {"hops", std::move(hops)},
              {"length", route.length},
              {"euclidean", euclidean_distance},
              {"ratio", euclidean_distance > 0.0 ? route.length / euclidean_distance : 0.0},
              {"cycle_trace", std::move(trace)}};
  return dump(doc);
}

DemandMatrix demands_from_json(const std::string& text) {
  json doc = parse(text);
  if (doc.is_object() && doc.contains("demands")) doc = doc.at("demands");
  if (!doc.is_object()) {
    fail(ErrorCode::BadFormat, "demand matrix must be an object of \"s,t\" keys");
  }
  DemandMatrix demands;
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_number()) {
      fail(ErrorCode::BadFormat, "demand rate for '" + key + "' must be a number");
    }
    demands.rates[parse_pair_key(key)] = value.get<double>();
  }
  return demands;
}

std::string demands_to_json(const DemandMatrix& demands) {
  json doc = json::object();
  for (const auto& [pair, rate] : demands.rates) {
    doc[pair_key(pair.first, pair.second)] = rate;
  }
  return dump(doc);
}

std::string rate_solution_to_json(const RateSolution& solution) {
  json mu = json::object(), iterations = json::object(), margin = json::object();
  for (const auto& [cycle, value] : solution.mu) mu[std::to_string(cycle)] = value;
  for (const auto& [cycle, value] : solution.iterations) {
    iterations[std::to_string(cycle)] = value;
  }
  for (const auto& [cycle, value] : solution.stability_margin) {
    margin[std::to_string(cycle)] = value;
  }
  json doc = {{"cost", solution.cost},
              {"mu", std::move(mu)},
              {"iterations", std::move(iterations)},
              {"stability_margin", std::move(margin)}};
  return dump(doc);
}

std::string metrics_to_json(const Metrics& metrics) {
  json per_pair = json::object();
  for (const auto& [pair, stats] : metrics.per_pair) {
    per_pair[pair_key(pair.first, pair.second)] = {{"count", stats.count},
                                                   {"mean_delay", stats.mean_delay}};
  }
  json queues = json::object();
  for (const auto& [node, value] : metrics.avg_queue_length) {
    queues[std::to_string(node)] = value;
  }
  json doc = {{"generated", metrics.generated},
              {"delivered", metrics.delivered},
              {"in_flight", metrics.generated - metrics.delivered},
              {"mean_delay", metrics.mean_delay},
              {"per_pair", std::move(per_pair)},
              {"avg_queue_length", std::move(queues)},
              {"service_load", metrics.service_load},
              {"realized_cost", metrics.realized_cost},
              {"structural_changes", metrics.structural_changes},
              {"event_count", metrics.event_log.size()}};
  return dump(doc);
}

std::string messages_to_csv(const Metrics& metrics) {
  std::string out = "id,source,terminal,created_at,delivered_at,hops\n";
  for (const MessageRecord& m : metrics.messages) {
    out += std::to_string(m.id);
    out += ',';
    out += std::to_string(m.source);
    out += ',';
    out += std::to_string(m.terminal);
    out += ',';
    out += number_text(m.created_at);
    out += ',';
    if (m.delivered_at >= 0.0) out += number_text(m.delivered_at);
    out += ',';
    out += std::to_string(m.hops);
    out += '\n';
  }
  return out;
}

std::string events_to_csv(const Metrics& metrics) {
  std::string out = "time,seq,kind,detail\n";
  for (const SimEvent& e : metrics.event_log) {
    out += number_text(e.time);
    out += ',';
    out += std::to_string(e.seq);
    out += ',';
    out += csv_escape(e.kind);
    out += ',';
    out += csv_escape(e.detail);
    out += '\n';
  }
  return out;
}

Scenario scenario_from_json(const std::string& text) {
  json doc = parse(text);
  Scenario scenario;
  try {
    if (doc.contains("network")) {
      scenario.network_path = doc.at("network").get<std::string>();
    } else if (doc.contains("generation")) {
      scenario.has_generation = true;
      const json& gen = doc.at("generation");
      for (const auto& tri : gen.at("region")) {
        if (!tri.is_array() || tri.size() != 3) {
          fail(ErrorCode::BadFormat, "region triangles need 3 corners");
        }
        std::array<Vec2, 3> corners;
        for (std::size_t i = 0; i < 3; ++i) {
          corners[i] = {tri.at(i).at(0).get<double>(), tri.at(i).at(1).get<double>()};
        }
        scenario.region.push_back(corners);
      }
      if (gen.contains("population") && !gen.at("population").is_null()) {
        scenario.population_path = gen.at("population").get<std::string>();
      }
      scenario.target_size = gen.at("target_size").get<std::size_t>();
      scenario.generation_seed = gen.value("seed", std::uint64_t{0});
    } else {
      fail(ErrorCode::BadFormat, "scenario needs either \"network\" or \"generation\"");
    }

    scenario.scheme = scheme_from_string(doc.value("scheme", std::string("mixed")));

    if (doc.contains("demands")) {
      for (const auto& [key, value] : doc.at("demands").items()) {
        scenario.sim.demands.rates[parse_pair_key(key)] = value.get<double>();
      }
    }

    const json rates = doc.value("rates", json("optimize"));
    if (rates.is_string()) {
      if (rates.get<std::string>() != "optimize") {
        fail(ErrorCode::BadFormat, "rates must be \"optimize\", a number or a per-cycle map");
      }
      scenario.optimize_rates = true;
    } else if (rates.is_number()) {
      scenario.optimize_rates = false;
      scenario.default_mu = rates.get<double>();
    } else if (rates.is_object()) {
      scenario.optimize_rates = false;
      for (const auto& [key, value] : rates.items()) {
        scenario.fixed_mu[static_cast<CycleId>(std::stoul(key))] = value.get<double>();
      }
    } else {
      fail(ErrorCode::BadFormat, "rates must be \"optimize\", a number or a per-cycle map");
    }
    scenario.default_mu = doc.value("default_mu", scenario.default_mu);

    scenario.sim.mode = sim_mode_from_string(doc.value("mode", std::string("queue")));
    scenario.sim.seed = doc.value("seed", std::uint64_t{0});
    scenario.sim.horizon = doc.at("horizon").get<double>();
    scenario.sim.arrival_stop = doc.value("arrival_stop", -1.0);
    scenario.sim.reoptimize_on_change = doc.value("reoptimize_on_change", true);
    scenario.sim.ferries_per_cycle = doc.value("ferries_per_cycle", 1);
    if (doc.contains("detection")) {
      const json& detection = doc.at("detection");
      scenario.sim.detection.failed_interactions =
          detection.value("F", scenario.sim.detection.failed_interactions);
      scenario.sim.detection.timeout_multiplier =
          detection.value("T_mult", scenario.sim.detection.timeout_multiplier);
    }

    for (const auto& entry : doc.value("events", json::array())) {
      ScriptEvent event;
      const std::string type = entry.at("type").get<std::string>();
      event.time = entry.at("time").get<double>();
      if (type == "node_failure") {
        event.type = ScriptEvent::Type::NODE_FAILURE;
        event.node = entry.at("target").get<NodeId>();
      } else if (type == "ferry_failure") {
        event.type = ScriptEvent::Type::FERRY_FAILURE;
        event.face = entry.at("target").get<FaceId>();
        event.direction_class =
            direction_class_from_string(entry.value("class", std::string("forward")));
      } else if (type == "subdivide") {
        event.type = ScriptEvent::Type::SUBDIVIDE;
        event.face = entry.at("target").get<FaceId>();
      } else if (type == "repair_node") {
        event.type = ScriptEvent::Type::REPAIR_NODE;
        event.node = entry.at("target").get<NodeId>();
      } else if (type == "replace_ferry") {
        event.type = ScriptEvent::Type::REPLACE_FERRY;
        event.face = entry.at("target").get<FaceId>();
        event.direction_class =
            direction_class_from_string(entry.value("class", std::string("forward")));
      } else {
        fail(ErrorCode::BadFormat, "unknown event type '" + type + "'");
      }
      scenario.sim.script.push_back(event);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::BadFormat, std::string("bad scenario document: ") + e.what());
  }
  return scenario;
}

std::string manifest_to_json(const RunManifest& manifest) {
  json inputs = json::array();
  for (const auto& [label, path] : manifest.inputs) {
    inputs.push_back({{"label", label}, {"path", path}});
  }
  json doc = {{"subcommand", manifest.subcommand},
              {"inputs", std::move(inputs)},
              {"seed", manifest.seed},
              {"out_dir", manifest.out_dir},
              {"tool_version", manifest.tool_version},
              {"config_hash", hex64(manifest.config_hash)}};
  return dump(doc);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) fail(ErrorCode::IoError, "read failed on " + path);
  return buffer.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << content;
  out.flush();
  if (!out) fail(ErrorCode::IoError, "write failed on " + path);
}

}  // namespace msq
