#include "elpose/heatmap.hpp"

#include <bit>
#include <cmath>

#include "elpose/errors.hpp"
#include "elpose/skeleton.hpp"

namespace elpose {

namespace {

void check_grid(int width, int height, double sigma) {
  if (width < 1 || height < 1) throw ValueError("heatmap dims must be positive");
  if (!(sigma > 0.0)) throw ValueError("sigma must be positive");
}

void check_pose(std::span<const double> pose) {
  if (pose.size() != static_cast<std::size_t>(kNumJoints) * 2) {
    throw ShapeError("heatmaps need a single 17 x 2 pose");
  }
}

}  // namespace

HeatmapStack joint_heatmaps(std::span<const double> pose, int width, int height, double sigma) {
  check_pose(pose);
  check_grid(width, height, sigma);
  HeatmapStack out{kNumJoints, height, width,
                   std::vector<double>(static_cast<std::size_t>(kNumJoints) * height * width)};
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int j = 0; j < kNumJoints; ++j) {
    const double jx = pose[2 * j] * width;
    const double jy = pose[2 * j + 1] * height;
    double* ch = out.values.data() + static_cast<std::size_t>(j) * height * width;
    for (int y = 0; y < height; ++y) {
      const double dy = y + 0.5 - jy;
      for (int x = 0; x < width; ++x) {
        const double dx = x + 0.5 - jx;
        ch[y * width + x] = std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
  return out;
}

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double ex = bx - ax, ey = by - ay;
  const double len2 = ex * ex + ey * ey;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((px - ax) * ex + (py - ay) * ey) / len2, 0.0, 1.0);
  const double dx = px - (ax + t * ex), dy = py - (ay + t * ey);
  return std::sqrt(dx * dx + dy * dy);
}

HeatmapStack limb_heatmaps(std::span<const double> pose,
                           std::span<const std::pair<int, int>> edges, int width, int height,
                           double sigma) {
  check_pose(pose);
  check_grid(width, height, sigma);
  const int channels = static_cast<int>(edges.size());
  HeatmapStack out{channels, height, width,
                   std::vector<double>(static_cast<std::size_t>(channels) * height * width)};
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int e = 0; e < channels; ++e) {
    const auto [a, b] = edges[e];
    if (a < 0 || b < 0 || a >= kNumJoints || b >= kNumJoints) {
      throw ValueError("edge references a joint outside [0, 16]");
    }
    const double ax = pose[2 * a] * width, ay = pose[2 * a + 1] * height;
    const double bx = pose[2 * b] * width, by = pose[2 * b + 1] * height;
    double* ch = out.values.data() + static_cast<std::size_t>(e) * height * width;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double d = point_segment_distance(x + 0.5, y + 0.5, ax, ay, bx, by);
        ch[y * width + x] = std::exp(-d * d * inv);
      }
    }
  }
  return out;
}

HeatmapStack skeleton_heatmaps(std::span<const double> pose, int width, int height, double sigma) {
  auto joints = joint_heatmaps(pose, width, height, sigma);
  const auto& edges = h36m_layout().limb_edges;
  const auto limbs = limb_heatmaps(pose, edges, width, height, sigma);
  joints.channels += limbs.channels;
  joints.values.insert(joints.values.end(), limbs.values.begin(), limbs.values.end());
  return joints;
}

HeatmapPyramid build_pyramid(const HeatmapStack& maps, std::span<const int> factors) {
  HeatmapPyramid pyramid;
  for (int f : factors) {
    if (f != 1 && f != 2 && f != 4 && f != 8) throw ValueError("pyramid factors must be 1, 2, 4 or 8");
    if (maps.height % f != 0 || maps.width % f != 0) {
      throw DivisibilityError("map dims " + std::to_string(maps.height) + "x" +
                              std::to_string(maps.width) + " not divisible by " +
                              std::to_string(f));
    }
  }
  for (int f : factors) {
    const int h = maps.height / f, w = maps.width / f;
    HeatmapStack level{maps.channels, h, w,
                       std::vector<double>(static_cast<std::size_t>(maps.channels) * h * w)};
    const double area = static_cast<double>(f) * f;
    for (int c = 0; c < maps.channels; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double sum = 0.0;
          for (int dy = 0; dy < f; ++dy) {
            for (int dx = 0; dx < f; ++dx) sum += maps.at(c, y * f + dy, x * f + dx);
          }
          level.values[(static_cast<std::size_t>(c) * h + y) * w + x] = f == 1 ? sum : sum / area;
        }
      }
    }
    pyramid.levels.push_back({f, std::move(level)});
  }
  return pyramid;
}

namespace {

constexpr char kMagic[4] = {'E', 'L', 'H', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t& pos) {
  if (pos + 4 > bytes.size()) throw ParseError("truncated heatmap file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += 4;
  return v;
}

}  // namespace

std::string serialize_pyramid(const HeatmapPyramid& pyramid) {
  if (pyramid.levels.empty()) throw ValueError("pyramid has no levels");
  const auto& base = pyramid.levels.front();
  const int channels = base.maps.channels;
  const int height = base.maps.height * base.factor;
  const int width = base.maps.width * base.factor;
  std::string out(kMagic, 4);
  put_u32(out, channels);
  put_u32(out, height);
  put_u32(out, width);
  put_u32(out, static_cast<std::uint32_t>(pyramid.levels.size()));
  for (const auto& level : pyramid.levels) {
    if (level.maps.channels != channels || level.maps.height * level.factor != height ||
        level.maps.width * level.factor != width) {
      throw ShapeError("pyramid levels disagree on base dimensions");
    }
    put_u32(out, level.factor);
    for (double v : level.maps.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

HeatmapPyramid parse_pyramid(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
    throw ParseError("not an ELH1 heatmap file");
  }
  std::size_t pos = 4;
  const auto channels = get_u32(bytes, pos);
  const auto height = get_u32(bytes, pos);
  const auto width = get_u32(bytes, pos);
  const auto count = get_u32(bytes, pos);
  HeatmapPyramid pyramid;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto factor = get_u32(bytes, pos);
    if (factor == 0 || height % factor || width % factor) throw ParseError("bad level factor");
    HeatmapStack maps{static_cast<int>(channels), static_cast<int>(height / factor),
                      static_cast<int>(width / factor), {}};
    const std::size_t n = static_cast<std::size_t>(channels) * maps.height * maps.width;
    if ((bytes.size() - pos) / 4 < n) throw ParseError("truncated heatmap file");
    maps.values.resize(n);
    for (auto& v : maps.values) v = std::bit_cast<float>(get_u32(bytes, pos));
    pyramid.levels.push_back({static_cast<int>(factor), std::move(maps)});
  }
  if (pos != bytes.size()) throw ParseError("trailing bytes in heatmap file");
  return pyramid;
}

void write_pyramid(const std::filesystem::path& path, const HeatmapPyramid& pyramid) {
  write_text_file(path, serialize_pyramid(pyramid));
}

HeatmapPyramid read_pyramid(const std::filesystem::path& path) {
  return parse_pyramid(read_text_file(path));
}

}  // namespace elpose
