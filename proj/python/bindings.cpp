// Python module exposing the main operations as JSON-string functions.
// Heavy objects stay on the C++ side; every entry point takes and returns
// canonical JSON so results are stable across languages.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <string>

#include "msqferry/cycle_plan.hpp"
#include "msqferry/errors.hpp"
#include "msqferry/geometry.hpp"
#include "msqferry/population.hpp"
#include "msqferry/queueing.hpp"
#include "msqferry/routing.hpp"
#include "msqferry/serialize.hpp"
#include "msqferry/sim.hpp"
#include "msqferry/version.hpp"

namespace py = pybind11;
using namespace msq;

namespace {

Scheme scheme_of(const std::string& text) { return scheme_from_string(text); }

std::string generate_network(std::size_t target_size, std::uint64_t seed, double side,
                             const std::string& population_text) {
  if (!(side > 0.0)) fail(ErrorCode::InvalidArgument, "side must be positive");
  Network net = Network::init_triangulation(
      {{Vec2{0.0, 0.0}, Vec2{side, 0.0}, Vec2{side / 2.0, side * std::sqrt(3.0) / 2.0}}});
  PopulationRaster raster = population_text.empty()
                                ? PopulationRaster::uniform_over(net)
                                : PopulationRaster::parse(population_text);
  generate(net, raster, target_size, seed);
  return network_to_json(net);
}

std::string validate_network(const std::string& network_json) {
  Network net = network_from_json(network_json);
  return validation_to_json(net.validate());
}

std::string plan_cycles(const std::string& network_json, const std::string& scheme) {
  Network net = network_from_json(network_json);
  return plan_to_json(assign_cycles(net, scheme_of(scheme)));
}

std::string find_route(const std::string& network_json, NodeId source, NodeId terminal,
                       const std::string& scheme, std::uint64_t seed) {
  Network net = network_from_json(network_json);
  CyclePlan plan = assign_cycles(net, scheme_of(scheme));
  Route found = route(net, plan, source, terminal, {}, seed);
  double euclid = distance(net.node(source).pos, net.node(terminal).pos);
  return route_to_json(found, euclid);
}

std::string optimize(const std::string& network_json, const std::string& demands_json,
                     const std::string& scheme) {
  Network net = network_from_json(network_json);
  CyclePlan plan = assign_cycles(net, scheme_of(scheme));
  DemandMatrix demands = demands_from_json(demands_json);
  RouteSet routes = demand_routes(net, demands);
  FlowTable flows = edge_flows(net, plan, demands, routes);
  WeightTable weights = compute_weights(net, plan, demands, routes);
  return rate_solution_to_json(optimize_rates(flows, weights));
}

std::string simulate(const std::string& scenario_json, const std::string& network_json) {
  Scenario scenario = scenario_from_json(scenario_json);
  Network net = [&] {
    if (!network_json.empty()) return network_from_json(network_json);
    if (!scenario.has_generation) {
      fail(ErrorCode::InvalidArgument,
           "pass network_json or embed a generation block in the scenario");
    }
    Network generated = Network::init_triangulation(scenario.region);
    PopulationRaster raster = scenario.population_path.empty()
                                  ? PopulationRaster::uniform_over(generated)
                                  : PopulationRaster::parse(
                                        read_text_file(scenario.population_path));
    generate(generated, raster, scenario.target_size, scenario.generation_seed);
    return generated;
  }();

  CyclePlan plan = assign_cycles(net, scenario.scheme);
  SimConfig config = scenario.sim;
  if (scenario.optimize_rates) {
    RouteSet routes = demand_routes(net, config.demands);
    FlowTable flows = edge_flows(net, plan, config.demands, routes);
    WeightTable weights = compute_weights(net, plan, config.demands, routes);
    config.mu = optimize_rates(flows, weights).mu;
  } else {
    for (const Cycle& cycle : plan.cycles()) {
      auto it = scenario.fixed_mu.find(cycle.id);
      if (it != scenario.fixed_mu.end()) config.mu[cycle.id] = it->second;
    }
    config.default_mu = scenario.default_mu;
  }
  return metrics_to_json(run_simulation(std::move(net), plan, config));
}

}  // namespace

PYBIND11_MODULE(_msqferry, m) {
  m.doc() = "Multi-scale quartered triangle networks: generation, cycle planning, "
            "routing, rate optimization, and delivery simulation.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& error) {
      if (error.is_config_error()) {
        PyErr_SetString(PyExc_ValueError, error.what());
      } else {
        PyErr_SetString(PyExc_RuntimeError, error.what());
      }
    }
  });

  m.def("version", [] { return std::string(kVersion); }, "Library version string.");

  m.def("generate_network", &generate_network, py::arg("target_size"), py::arg("seed") = 0,
        py::arg("side") = 100.0, py::arg("population_text") = std::string(),
        "Grow a quartered-triangle network to at most target_size nodes; returns "
        "network JSON.");

  m.def("validate_network", &validate_network, py::arg("network_json"),
        "Structural validation report for a network document, as JSON.");

  m.def("plan_cycles", &plan_cycles, py::arg("network_json"), py::arg("scheme") = "mixed",
        "Cyclic ferry routes covering every leaf face, as plan JSON.");

  m.def("find_route", &find_route, py::arg("network_json"), py::arg("source"),
        py::arg("terminal"), py::arg("scheme") = "mixed", py::arg("seed") = 0,
        "Shortest route between two nodes with its serving-cycle trace, as JSON.");

  m.def("optimize", &optimize, py::arg("network_json"), py::arg("demands_json"),
        py::arg("scheme") = "mixed",
        "Cost-optimal per-cycle turnaround rates for a demand matrix, as JSON.");

  m.def("simulate", &simulate, py::arg("scenario_json"),
        py::arg("network_json") = std::string(),
        "Run a scenario and return metrics JSON. The network comes from "
        "network_json or from the scenario's embedded generation block.");
}
