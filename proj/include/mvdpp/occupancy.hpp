#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvdpp::recon {

// Voxel occupancy over the fixed bounds [-1,1]^3, res^3 cells.
struct OccupancyGrid {
  int res = 0;
  std::vector<std::uint8_t> bits;  // res^3 entries, 0 or 1

  static OccupancyGrid zeros(int res) {
    OccupancyGrid g;
    g.res = res;
    g.bits.assign(static_cast<size_t>(res) * res * res, 0);
    return g;
  }

  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(z) * res + y) * res + x;
  }
  std::uint8_t at(int x, int y, int z) const { return bits[index(x, y, z)]; }
  void set(int x, int y, int z, std::uint8_t v) { bits[index(x, y, z)] = v; }

  // World coordinate of the center of cell (x,y,z).
  double cell_center(int i) const { return -1.0 + (i + 0.5) * (2.0 / res); }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
};

// File format: one-line JSON header {"res":N} + '\n' + packed bits
// (LSB-first within each byte, cell order x fastest).
void save_grid(const std::string& path, const OccupancyGrid& g);
OccupancyGrid load_grid(const std::string& path);

}  // namespace mvdpp::recon
