#include "msqferry/population.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "msqferry/rng.hpp"

namespace msq {

double PopulationRaster::total_mass() const {
  double total = 0.0;
  for (double v : values) total += v;
  return total;
}

PopulationRaster PopulationRaster::parse(const std::string& text) {
  std::istringstream in(text);
  PopulationRaster raster;
  if (!(in >> raster.ncols >> raster.nrows >> raster.xmin >> raster.ymin >> raster.cellsize)) {
    fail(ErrorCode::BadFormat, "population raster header must be: ncols nrows xmin ymin cellsize");
  }
  if (raster.ncols == 0 || raster.nrows == 0 || raster.cellsize <= 0.0) {
    fail(ErrorCode::BadFormat, "population raster dimensions must be positive");
  }
  raster.values.resize(raster.ncols * raster.nrows);
  for (std::size_t i = 0; i < raster.values.size(); ++i) {
    if (!(in >> raster.values[i])) {
      fail(ErrorCode::BadFormat, "population raster: expected " +
                                     std::to_string(raster.values.size()) + " values, got " +
                                     std::to_string(i));
    }
    if (!(raster.values[i] >= 0.0) || !std::isfinite(raster.values[i])) {
      fail(ErrorCode::BadFormat, "population raster values must be finite and non-negative");
    }
  }
  return raster;
}

std::string PopulationRaster::format() const {
  std::ostringstream out;
  out.precision(17);
  out << ncols << " " << nrows << " " << xmin << " " << ymin << " " << cellsize << "\n";
  for (std::size_t row = 0; row < nrows; ++row) {
    for (std::size_t col = 0; col < ncols; ++col) {
      if (col) out << " ";
      out << at(row, col);
    }
    out << "\n";
  }
  return out.str();
}

PopulationRaster PopulationRaster::uniform_over(const Network& network, std::size_t resolution) {
  double lo_x = std::numeric_limits<double>::infinity();
  double lo_y = std::numeric_limits<double>::infinity();
  double hi_x = -std::numeric_limits<double>::infinity();
  double hi_y = -std::numeric_limits<double>::infinity();
  for (const Node& n : network.nodes()) {
    lo_x = std::min(lo_x, n.pos.x);
    lo_y = std::min(lo_y, n.pos.y);
    hi_x = std::max(hi_x, n.pos.x);
    hi_y = std::max(hi_y, n.pos.y);
  }
  if (network.nodes().empty()) fail(ErrorCode::EmptyNetwork, "cannot cover an empty network");
  double span = std::max(hi_x - lo_x, hi_y - lo_y);
  if (span <= 0.0) span = 1.0;
  PopulationRaster raster;
  raster.cellsize = span / static_cast<double>(resolution);
  raster.xmin = lo_x;
  raster.ymin = lo_y;
  raster.ncols = static_cast<std::size_t>(std::ceil((hi_x - lo_x) / raster.cellsize)) + 1;
  raster.nrows = static_cast<std::size_t>(std::ceil((hi_y - lo_y) / raster.cellsize)) + 1;
  raster.values.assign(raster.ncols * raster.nrows, 1.0);
  return raster;
}

namespace {

/// Tracks which raster cells sit inside which leaf face, so face masses
/// stay exact while subdivisions move cells from a parent to the first
/// child (in canonical child order) that contains them.
class FaceMassIndex {
 public:
  FaceMassIndex(const Network& network, const PopulationRaster& raster) : raster_(raster) {
    area_tol_ = 1e-12 * network.scale() * network.scale();
    std::vector<FaceId> leaves = network.leaf_faces();
    for (std::size_t row = 0; row < raster.nrows; ++row) {
      for (std::size_t col = 0; col < raster.ncols; ++col) {
        double value = raster.at(row, col);
        if (value <= 0.0) continue;
        Vec2 p = raster.cell_center(row, col);
        for (FaceId leaf : leaves) {
          if (inside(network, leaf, p)) {
            cells_[leaf].push_back(row * raster.ncols + col);
            mass_[leaf] += value;
            break;
          }
        }
      }
    }
  }

  void on_subdivided(const Network& network, FaceId parent,
                     const std::array<FaceId, 4>& children) {
    auto it = cells_.find(parent);
    if (it == cells_.end()) return;
    std::vector<std::size_t> cells = std::move(it->second);
    cells_.erase(it);
    mass_.erase(parent);
    for (std::size_t cell : cells) {
      Vec2 p = raster_.cell_center(cell / raster_.ncols, cell % raster_.ncols);
      for (FaceId child : children) {
        if (inside(network, child, p)) {
          cells_[child].push_back(cell);
          mass_[child] += raster_.values[cell];
          break;
        }
      }
    }
  }

  double mass_of(FaceId face) const {
    auto it = mass_.find(face);
    return it == mass_.end() ? 0.0 : it->second;
  }

 private:
  bool inside(const Network& network, FaceId face, Vec2 p) const {
    const Face& f = network.face(face);
    return point_in_triangle(p, network.node(f.corners[0]).pos, network.node(f.corners[1]).pos,
                             network.node(f.corners[2]).pos, area_tol_);
  }

  const PopulationRaster& raster_;
  double area_tol_ = 0.0;
  std::map<FaceId, std::vector<std::size_t>> cells_;
  std::map<FaceId, double> mass_;
};

}  // namespace

void generate(Network& network, const PopulationRaster& population, std::size_t target_size,
              std::uint64_t seed) {
  for (double v : population.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      fail(ErrorCode::InvalidArgument, "population values must be finite and non-negative");
    }
  }
  if (network.node_count() > target_size) {
    fail(ErrorCode::TargetTooSmall, "target " + std::to_string(target_size) +
                                        " is below the current node count " +
                                        std::to_string(network.node_count()));
  }
  if (network.faces().empty()) fail(ErrorCode::EmptyNetwork, "nothing to subdivide");

  FaceMassIndex masses(network, population);
  RandomStream stream(seed, "generate");

  while (true) {
    std::vector<FaceId> leaves = network.leaf_faces();
    double total = 0.0;
    for (FaceId leaf : leaves) total += masses.mass_of(leaf);

    FaceId chosen = kInvalidId;
    if (total > 0.0) {
      double u = stream.uniform01() * total;
      double acc = 0.0;
      for (FaceId leaf : leaves) {
        double mass = masses.mass_of(leaf);
        if (mass <= 0.0) continue;
        acc += mass;
        chosen = leaf;  // keeps the last positive-mass leaf if u rounds past acc
        if (u < acc) break;
      }
    } else {
      chosen = leaves[stream.uniform_index(leaves.size())];
    }

    // A side midpoint already registered by a neighbour costs no new node.
    const Face& f = network.face(chosen);
    std::size_t would_add = 0;
    for (int k = 0; k < 3; ++k) {
      if (!network.registered_midpoint(f.corners[k], f.corners[(k + 1) % 3])) ++would_add;
    }
    if (network.node_count() + would_add > target_size) break;

    SubdivisionDelta delta = network.subdivide_face(chosen);
    masses.on_subdivided(network, chosen, delta.children);
  }
}

}  // namespace msq
