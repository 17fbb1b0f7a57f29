// msqferry command-line tool: generate / plan / route / optimize / simulate /
// pipeline over multi-scale quartered triangle networks.
//
// Exit codes: 0 success, 2 bad input or configuration, 3 runtime failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msqferry/cycle_plan.hpp"
#include "msqferry/errors.hpp"
#include "msqferry/geometry.hpp"
#include "msqferry/population.hpp"
#include "msqferry/queueing.hpp"
#include "msqferry/rng.hpp"
#include "msqferry/routing.hpp"
#include "msqferry/serialize.hpp"
#include "msqferry/sim.hpp"
#include "msqferry/version.hpp"

namespace {

using namespace msq;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

/// Failure already mapped to an exit code (used for stage tagging).
struct CliFailure {
  int exit_code;
  std::string message;
};

[[noreturn]] void usage_error(const std::string& message) {
  throw CliFailure{kExitConfig, message};
}

const char kUsage[] =
    "usage: msqferry <subcommand> [flags]\n"
    "\n"
    "subcommands:\n"
    "  generate  --target-size N --out DIR [--seed N] [--side L]\n"
    "            [--population FILE]\n"
    "  plan      --network FILE --out DIR [--scheme mixed|all-clockwise]\n"
    "  route     --network FILE --source ID --terminal ID --out DIR\n"
    "            [--scheme S] [--seed N] [--fail-node ID]... [--drop-edge A,B]...\n"
    "  optimize  --network FILE --demands FILE --out DIR [--scheme S]\n"
    "  simulate  --scenario FILE --out DIR [--seed N] [--mode queue|ferry]\n"
    "            [--scheme S] [--replications N] [--format json|csv]\n"
    "  pipeline  --scenario FILE --out DIR [--seed N] [--mode queue|ferry]\n"
    "            [--scheme S] [--replications N] [--format json|csv]\n";

// ---------------------------------------------------------------------------
// Flag parsing
// ---------------------------------------------------------------------------

struct Args {
  std::map<std::string, std::string> values;
  std::map<std::string, std::vector<std::string>> repeated;

  bool has(const std::string& key) const { return values.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback = "") const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) usage_error("missing required flag --" + key);
    return it->second;
  }
};

const std::vector<std::string> kRepeatable = {"fail-node", "drop-edge"};

Args parse_args(int argc, char** argv, int start) {
  Args args;
  for (int i = start; i < argc; ++i) {
    std::string token = argv[i];
    if (token.rfind("--", 0) != 0 || token.size() <= 2) {
      usage_error("unexpected argument '" + token + "'");
    }
    std::string key = token.substr(2);
    if (i + 1 >= argc) usage_error("flag --" + key + " needs a value");
    std::string value = argv[++i];
    bool repeatable =
        std::find(kRepeatable.begin(), kRepeatable.end(), key) != kRepeatable.end();
    if (repeatable) {
      args.repeated[key].push_back(value);
    } else if (!args.values.emplace(key, value).second) {
      usage_error("flag --" + key + " given twice");
    }
  }
  return args;
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    unsigned long long value = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::uint64_t>(value);
  } catch (const std::exception&) {
    usage_error(what + " must be a non-negative integer, got '" + text + "'");
  }
}

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    double value = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    usage_error(what + " must be a number, got '" + text + "'");
  }
}

NodeId parse_node(const std::string& text, const std::string& what) {
  return static_cast<NodeId>(parse_u64(text, what));
}

Scheme parse_scheme(const Args& args, Scheme fallback) {
  if (!args.has("scheme")) return fallback;
  std::string text = args.get("scheme");
  if (text == "mixed") return Scheme::MIXED;
  if (text == "all-clockwise") return Scheme::ALL_CLOCKWISE;
  usage_error("--scheme must be 'mixed' or 'all-clockwise', got '" + text + "'");
}

SimMode parse_mode(const Args& args, SimMode fallback) {
  if (!args.has("mode")) return fallback;
  std::string text = args.get("mode");
  if (text == "queue") return SimMode::QUEUE_ABSTRACTION;
  if (text == "ferry") return SimMode::FERRY_TOKEN;
  usage_error("--mode must be 'queue' or 'ferry', got '" + text + "'");
}

std::string parse_format(const Args& args) {
  std::string text = args.get("format", "csv");
  if (text != "json" && text != "csv") {
    usage_error("--format must be 'json' or 'csv', got '" + text + "'");
  }
  return text;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

std::string resolve_path(const std::string& base_dir, const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return path;
  return (std::filesystem::path(base_dir) / p).lexically_normal().string();
}

std::string parent_dir(const std::string& path) {
  return std::filesystem::path(path).parent_path().string();
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create output directory '" + out + "'");
}

std::string out_file(const std::string& out, const std::string& name) {
  return (std::filesystem::path(out) / name).string();
}

/// Hash of the resolved configuration: subcommand plus sorted flag pairs.
std::uint64_t config_hash(const std::string& subcommand, const Args& args) {
  std::ostringstream text;
  text << subcommand;
  for (const auto& [key, value] : args.values) text << '\n' << key << '=' << value;
  for (const auto& [key, list] : args.repeated) {
    for (const std::string& value : list) text << '\n' << key << '=' << value;
  }
  return fnv1a64(text.str());
}

void write_manifest(const std::string& subcommand, const Args& args,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    std::uint64_t seed, const std::string& out) {
  RunManifest manifest;
  manifest.subcommand = subcommand;
  manifest.inputs = inputs;
  manifest.seed = seed;
  manifest.out_dir = out;
  manifest.tool_version = std::string(kVersion);
  manifest.config_hash = config_hash(subcommand, args);
  write_text_file(out_file(out, "manifest.json"), manifest_to_json(manifest));
}

Network load_network(const std::string& path) {
  return network_from_json(read_text_file(path));
}

DamageSet parse_damage(const Args& args) {
  DamageSet damage;
  auto nodes = args.repeated.find("fail-node");
  if (nodes != args.repeated.end()) {
    for (const std::string& text : nodes->second) {
      damage.failed_nodes.insert(parse_node(text, "--fail-node"));
    }
  }
  auto edges = args.repeated.find("drop-edge");
  if (edges != args.repeated.end()) {
    for (const std::string& text : edges->second) {
      auto comma = text.find(',');
      if (comma == std::string::npos) usage_error("--drop-edge expects 'A,B'");
      NodeId a = parse_node(text.substr(0, comma), "--drop-edge");
      NodeId b = parse_node(text.substr(comma + 1), "--drop-edge");
      damage.removed_edges.insert(node_pair(a, b));
    }
  }
  return damage;
}

/// Scenario -> network, honoring the embedded generation block when present.
Network scenario_network(const Scenario& scenario, const std::string& scenario_dir) {
  if (scenario.has_generation) {
    Network net = Network::init_triangulation(scenario.region);
    PopulationRaster raster;
    if (scenario.population_path.empty()) {
      raster = PopulationRaster::uniform_over(net);
    } else {
      raster = PopulationRaster::parse(
          read_text_file(resolve_path(scenario_dir, scenario.population_path)));
    }
    generate(net, raster, scenario.target_size, scenario.generation_seed);
    return net;
  }
  return load_network(resolve_path(scenario_dir, scenario.network_path));
}

/// Full per-cycle service rates for a fixed-rate scenario.
std::map<CycleId, double> fixed_rates(const Scenario& scenario, const CyclePlan& plan) {
  std::map<CycleId, double> mu;
  for (const Cycle& cycle : plan.cycles()) {
    auto it = scenario.fixed_mu.find(cycle.id);
    if (it != scenario.fixed_mu.end()) {
      mu[cycle.id] = it->second;
    } else if (scenario.default_mu > 0.0) {
      mu[cycle.id] = scenario.default_mu;
    }
  }
  return mu;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_generate(const Args& args) {
  std::size_t target = static_cast<std::size_t>(
      parse_u64(args.require("target-size"), "--target-size"));
  std::string out = args.require("out");
  std::uint64_t seed = parse_u64(args.get("seed", "0"), "--seed");
  double side = parse_double(args.get("side", "100"), "--side");
  if (!(side > 0.0)) usage_error("--side must be positive");

  Network net = Network::init_triangulation(
      {{Vec2{0.0, 0.0}, Vec2{side, 0.0}, Vec2{side / 2.0, side * std::sqrt(3.0) / 2.0}}});

  std::vector<std::pair<std::string, std::string>> inputs;
  PopulationRaster raster;
  if (args.has("population")) {
    std::string path = args.get("population");
    raster = PopulationRaster::parse(read_text_file(path));
    inputs.push_back({"population", path});
  } else {
    raster = PopulationRaster::uniform_over(net);
  }

  generate(net, raster, target, seed);
  ValidationReport report = net.validate();

  ensure_out_dir(out);
  write_text_file(out_file(out, "network.json"), network_to_json(net));
  write_text_file(out_file(out, "validation.json"), validation_to_json(report));
  write_manifest("generate", args, inputs, seed, out);

  if (!report.ok()) {
    std::ostringstream detail;
    for (const std::string& failure : report.failures) detail << "\n  " << failure;
    throw CliFailure{kExitConfig, "generated network failed validation:" + detail.str()};
  }
  std::cout << "generated " << report.node_count << " nodes, " << report.alive_edge_count
            << " edges, " << report.leaf_face_count << " leaf faces -> " << out << "\n";
  return kExitOk;
}

int cmd_plan(const Args& args) {
  std::string network_path = args.require("network");
  std::string out = args.require("out");
  Scheme scheme = parse_scheme(args, Scheme::MIXED);

  Network net = load_network(network_path);
  CyclePlan plan = assign_cycles(net, scheme);

  ensure_out_dir(out);
  write_text_file(out_file(out, "plan.json"), plan_to_json(plan));
  write_manifest("plan", args, {{"network", network_path}}, 0, out);
  std::cout << "planned " << plan.cycles().size() << " cycles (" << to_string(scheme)
            << ") -> " << out << "\n";
  return kExitOk;
}

int cmd_route(const Args& args) {
  std::string network_path = args.require("network");
  std::string out = args.require("out");
  NodeId source = parse_node(args.require("source"), "--source");
  NodeId terminal = parse_node(args.require("terminal"), "--terminal");
  std::uint64_t seed = parse_u64(args.get("seed", "0"), "--seed");
  Scheme scheme = parse_scheme(args, Scheme::MIXED);
  DamageSet damage = parse_damage(args);

  Network net = load_network(network_path);
  CyclePlan plan = assign_cycles(net, scheme);
  Route found = route(net, plan, source, terminal, damage, seed);
  double euclid = distance(net.node(source).pos, net.node(terminal).pos);

  ensure_out_dir(out);
  write_text_file(out_file(out, "route.json"), route_to_json(found, euclid));
  write_manifest("route", args, {{"network", network_path}}, seed, out);
  std::cout << "route " << source << " -> " << terminal << ": " << found.hops.size()
            << " hops, length " << found.length << " -> " << out << "\n";
  return kExitOk;
}

int cmd_optimize(const Args& args) {
  std::string network_path = args.require("network");
  std::string demands_path = args.require("demands");
  std::string out = args.require("out");
  Scheme scheme = parse_scheme(args, Scheme::MIXED);

  Network net = load_network(network_path);
  CyclePlan plan = assign_cycles(net, scheme);
  DemandMatrix demands = demands_from_json(read_text_file(demands_path));
  RouteSet routes = demand_routes(net, demands);
  FlowTable flows = edge_flows(net, plan, demands, routes);
  WeightTable weights = compute_weights(net, plan, demands, routes);
  RateSolution solution = optimize_rates(flows, weights);

  ensure_out_dir(out);
  write_text_file(out_file(out, "rates.json"), rate_solution_to_json(solution));
  write_manifest("optimize", args,
                 {{"network", network_path}, {"demands", demands_path}}, 0, out);
  std::cout << "optimized " << solution.mu.size() << " cycle rates, cost " << solution.cost
            << " -> " << out << "\n";
  return kExitOk;
}

/// Shared by simulate and pipeline: resolve rates, run the replications,
/// write rates/metrics/logs. Returns the number of delivered messages of
/// the last replication (for the summary line).
void run_replications(const Scenario& scenario, const Network& net, const CyclePlan& plan,
                      const Args& args, const std::string& out, bool write_network_files,
                      const std::string& stage_prefix) {
  std::string format = parse_format(args);
  std::uint64_t replications = parse_u64(args.get("replications", "1"), "--replications");
  if (replications == 0) usage_error("--replications must be at least 1");

  SimConfig base = scenario.sim;
  base.mode = parse_mode(args, base.mode);
  if (args.has("seed")) base.seed = parse_u64(args.get("seed"), "--seed");

  if (scenario.optimize_rates) {
    RouteSet routes = demand_routes(net, base.demands);
    FlowTable flows = edge_flows(net, plan, base.demands, routes);
    WeightTable weights = compute_weights(net, plan, base.demands, routes);
    RateSolution solution = optimize_rates(flows, weights);
    base.mu = solution.mu;
    write_text_file(out_file(out, "rates.json"), rate_solution_to_json(solution));
  } else {
    base.mu = fixed_rates(scenario, plan);
    base.default_mu = scenario.default_mu;
    RateSolution fixed;
    fixed.mu = base.mu;
    fixed.cost = delivery_cost(edge_flows(net, plan, base.demands,
                                          demand_routes(net, base.demands)),
                               compute_weights(net, plan, base.demands,
                                               demand_routes(net, base.demands)),
                               base.mu);
    write_text_file(out_file(out, "rates.json"), rate_solution_to_json(fixed));
  }

  if (write_network_files) {
    write_text_file(out_file(out, "network.json"), network_to_json(net));
    write_text_file(out_file(out, "validation.json"), validation_to_json(net.validate()));
    write_text_file(out_file(out, "plan.json"), plan_to_json(plan));
  }

  for (std::uint64_t k = 0; k < replications; ++k) {
    SimConfig config = base;
    config.seed = base.seed + k;
    Metrics metrics = run_simulation(net, plan, config);

    std::string suffix = replications == 1 ? "" : "_" + std::to_string(k);
    write_text_file(out_file(out, "metrics" + suffix + ".json"), metrics_to_json(metrics));
    if (format == "csv") {
      write_text_file(out_file(out, "messages" + suffix + ".csv"), messages_to_csv(metrics));
      write_text_file(out_file(out, "events" + suffix + ".csv"), events_to_csv(metrics));
    }
    std::cout << stage_prefix << "replication " << k << ": generated " << metrics.generated
              << ", delivered " << metrics.delivered << ", mean delay " << metrics.mean_delay
              << "\n";
  }
}

int cmd_simulate(const Args& args) {
  std::string scenario_path = args.require("scenario");
  std::string out = args.require("out");

  Scenario scenario = scenario_from_json(read_text_file(scenario_path));
  std::string scenario_dir = parent_dir(scenario_path);
  Network net = scenario_network(scenario, scenario_dir);
  Scheme scheme = parse_scheme(args, scenario.scheme);
  CyclePlan plan = assign_cycles(net, scheme);

  ensure_out_dir(out);
  run_replications(scenario, net, plan, args, out, /*write_network_files=*/false, "");

  std::vector<std::pair<std::string, std::string>> inputs{{"scenario", scenario_path}};
  if (!scenario.network_path.empty()) {
    inputs.push_back({"network", resolve_path(scenario_dir, scenario.network_path)});
  }
  std::uint64_t seed = args.has("seed") ? parse_u64(args.get("seed"), "--seed")
                                        : scenario.sim.seed;
  write_manifest("simulate", args, inputs, seed, out);
  return kExitOk;
}

int cmd_pipeline(const Args& args) {
  std::string scenario_path = args.require("scenario");
  std::string out = args.require("out");

  auto stage = [](const std::string& name, auto&& body) -> decltype(body()) {
    try {
      return body();
    } catch (const Error& error) {
      throw CliFailure{error.is_config_error() ? kExitConfig : kExitRuntime,
                       "stage '" + name + "': " + error.what()};
    }
  };

  Scenario scenario = stage("load", [&] {
    return scenario_from_json(read_text_file(scenario_path));
  });
  std::string scenario_dir = parent_dir(scenario_path);

  ensure_out_dir(out);

  Network net = stage("generate", [&] { return scenario_network(scenario, scenario_dir); });
  ValidationReport report = net.validate();
  if (!report.ok()) {
    throw CliFailure{kExitConfig, "stage 'generate': network failed validation"};
  }

  Scheme scheme = parse_scheme(args, scenario.scheme);
  CyclePlan plan = stage("plan", [&] { return assign_cycles(net, scheme); });

  stage("simulate", [&] {
    run_replications(scenario, net, plan, args, out, /*write_network_files=*/true,
                     "pipeline ");
    return 0;
  });

  std::vector<std::pair<std::string, std::string>> inputs{{"scenario", scenario_path}};
  if (!scenario.network_path.empty()) {
    inputs.push_back({"network", resolve_path(scenario_dir, scenario.network_path)});
  }
  if (!scenario.population_path.empty()) {
    inputs.push_back({"population", resolve_path(scenario_dir, scenario.population_path)});
  }
  std::uint64_t seed = args.has("seed") ? parse_u64(args.get("seed"), "--seed")
                                        : scenario.sim.seed;
  write_manifest("pipeline", args, inputs, seed, out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << kUsage;
    return kExitConfig;
  }
  std::string subcommand = argv[1];
  if (subcommand == "--help" || subcommand == "-h" || subcommand == "help") {
    std::cout << kUsage;
    return kExitOk;
  }
  if (subcommand == "--version") {
    std::cout << kToolName << " " << kVersion << "\n";
    return kExitOk;
  }

  try {
    Args args = parse_args(argc, argv, 2);
    if (subcommand == "generate") return cmd_generate(args);
    if (subcommand == "plan") return cmd_plan(args);
    if (subcommand == "route") return cmd_route(args);
    if (subcommand == "optimize") return cmd_optimize(args);
    if (subcommand == "simulate") return cmd_simulate(args);
    if (subcommand == "pipeline") return cmd_pipeline(args);
    std::cerr << "unknown subcommand '" << subcommand << "'\n" << kUsage;
    return kExitConfig;
  } catch (const CliFailure& failure) {
    std::cerr << "msqferry " << subcommand << ": " << failure.message << "\n";
    return failure.exit_code;
  } catch (const msq::Error& error) {
    std::cerr << "msqferry " << subcommand << ": " << error.what() << "\n";
    return error.is_config_error() ? kExitConfig : kExitRuntime;
  } catch (const std::exception& error) {
    std::cerr << "msqferry " << subcommand << ": " << error.what() << "\n";
    return kExitRuntime;
  }
}
