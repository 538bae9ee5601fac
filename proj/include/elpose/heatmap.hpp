#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace elpose {

// C x H x W stack of maps, row-major.
struct HeatmapStack {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

struct HeatmapLevel {
  int factor = 1;
  HeatmapStack maps;
};

struct HeatmapPyramid {
  std::vector<HeatmapLevel> levels;
};

// Pixel (x, y) has its center at (x + 0.5, y + 0.5); normalized coordinates
// map to pixel space as (u * width, v * height). pose is 17 x 2.
HeatmapStack joint_heatmaps(std::span<const double> pose, int width, int height, double sigma);

HeatmapStack limb_heatmaps(std::span<const double> pose,
                           std::span<const std::pair<int, int>> edges, int width, int height,
                           double sigma);

// Distance from p to segment [a, b]; degenerates to |p - a| when a == b.
double point_segment_distance(double px, double py, double ax, double ay, double bx, double by);

// Joint channels followed by one limb channel per layout edge.
HeatmapStack skeleton_heatmaps(std::span<const double> pose, int width, int height, double sigma);

// Area-averaged downsampling, one level per factor.
HeatmapPyramid build_pyramid(const HeatmapStack& maps, std::span<const int> factors);

// "ELH1" file: u32 C, H, W, u32 level count, then per level u32 factor and
// float32 values (little-endian, row-major).
std::string serialize_pyramid(const HeatmapPyramid& pyramid);
HeatmapPyramid parse_pyramid(std::string_view bytes);
void write_pyramid(const std::filesystem::path& path, const HeatmapPyramid& pyramid);
HeatmapPyramid read_pyramid(const std::filesystem::path& path);

}  // namespace elpose
