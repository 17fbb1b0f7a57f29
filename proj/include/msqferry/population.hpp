#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "msqferry/geometry.hpp"

namespace msq {

/// Discretized non-negative density over a rectangular grid. Text format:
/// a header line "ncols nrows xmin ymin cellsize" followed by nrows
/// whitespace-separated rows of ncols values; row 0 is the bottom row
/// (y = ymin .. ymin + cellsize).
struct PopulationRaster {
  std::size_t ncols = 0;
  std::size_t nrows = 0;
  double xmin = 0.0;
  double ymin = 0.0;
  double cellsize = 1.0;
  std::vector<double> values;  // row-major, nrows * ncols

  double at(std::size_t row, std::size_t col) const { return values[row * ncols + col]; }
  double& at(std::size_t row, std::size_t col) { return values[row * ncols + col]; }
  Vec2 cell_center(std::size_t row, std::size_t col) const {
    return {xmin + (static_cast<double>(col) + 0.5) * cellsize,
            ymin + (static_cast<double>(row) + 0.5) * cellsize};
  }
  double total_mass() const;

  static PopulationRaster parse(const std::string& text);
  std::string format() const;

  /// Uniform unit density covering the bounding box of the network,
  /// with `resolution` cells along the longer bounding-box side.
  static PopulationRaster uniform_over(const Network& network, std::size_t resolution = 64);
};

/// Grow the network up to (never beyond) target_size nodes: repeatedly
/// sample a leaf face with probability proportional to the population mass
/// inside it (uniformly when all leaves carry zero mass) and quarter it.
/// Stops when the sampled face's subdivision would push the node count
/// past target_size. Deterministic given the seed.
void generate(Network& network, const PopulationRaster& population, std::size_t target_size,
              std::uint64_t seed);

}  // namespace msq
