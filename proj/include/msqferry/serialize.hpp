#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msqferry/cycle_plan.hpp"
#include "msqferry/geometry.hpp"
#include "msqferry/queueing.hpp"
#include "msqferry/routing.hpp"
#include "msqferry/sim.hpp"

namespace msq {

// All emitters produce canonical JSON (sorted keys, stable number
// round-trips, no timestamps) so identical inputs give byte-identical
// files.

std::string network_to_json(const Network& network);
Network network_from_json(const std::string& text);

std::string plan_to_json(const CyclePlan& plan);

std::string validation_to_json(const ValidationReport& report);

std::string route_to_json(const Route& route, double euclidean_distance);

/// {"s,t": rate, ...}
DemandMatrix demands_from_json(const std::string& text);
std::string demands_to_json(const DemandMatrix& demands);

std::string rate_solution_to_json(const RateSolution& solution);

std::string metrics_to_json(const Metrics& metrics);
std::string messages_to_csv(const Metrics& metrics);
std::string events_to_csv(const Metrics& metrics);

/// Self-contained experiment description for `simulate` and `pipeline`:
/// the network comes from a file or an embedded generation spec; rates
/// come from the optimizer or are fixed.
struct Scenario {
  std::string network_path;  // empty when generation is embedded
  bool has_generation = false;
  std::vector<std::array<Vec2, 3>> region;  // generation: initial triangles
  std::string population_path;              // empty -> uniform density
  std::size_t target_size = 0;
  std::uint64_t generation_seed = 0;

  Scheme scheme = Scheme::MIXED;

  bool optimize_rates = true;
  double default_mu = 0.0;
  std::map<CycleId, double> fixed_mu;

  SimConfig sim;  // demands, mode, seed, horizon, script, detection
};

Scenario scenario_from_json(const std::string& text);

/// Reproducibility record written next to every CLI output.
struct RunManifest {
  std::string subcommand;
  std::vector<std::pair<std::string, std::string>> inputs;  // (label, path)
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string tool_version;
  std::uint64_t config_hash = 0;  // FNV-1a of the canonical config text
};

std::string manifest_to_json(const RunManifest& manifest);

// Small file helpers shared by the CLI and tests.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace msq
