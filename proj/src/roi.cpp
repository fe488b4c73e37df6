#include "roifuse/roi.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace roifuse::roi {

using geometry::Vec2;
using geometry::Vec3;
using tensor::Tensor;

// ---- feature maps ---------------------------------------------------------------

double FeatureMap::sample(std::size_t c, double y, double x) const {
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, width - 1);
  const std::size_t y1 = std::min(y0 + 1, height - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double top = (1.0 - fx) * at(c, y0, x0) + fx * at(c, y0, x1);
  const double bottom = (1.0 - fx) * at(c, y1, x0) + fx * at(c, y1, x1);
  return (1.0 - fy) * top + fy * bottom;
}

void validate(const FeatureMap& map) {
  if (map.channels == 0 || map.height == 0 || map.width == 0) {
    throw std::invalid_argument("feature map dimensions must be positive");
  }
  if (!(map.stride > 0.0)) throw std::invalid_argument("feature map stride must be positive");
  if (map.data.size() != map.channels * map.height * map.width) {
    throw std::invalid_argument("feature map data length does not match its dimensions");
  }
}

namespace {

constexpr std::array<char, 8> kMapMagic = {'R', 'F', 'F', 'M', 'A', 'P', '\0', '\0'};
constexpr std::uint32_t kMapVersion = 1;
static_assert(std::endian::native == std::endian::little);

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("feature map file truncated");
  return v;
}

}  // namespace

void write_feature_map(const std::filesystem::path& path, const FeatureMap& map) {
  validate(map);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write feature map: " + path.string());
  os.write(kMapMagic.data(), kMapMagic.size());
  put<std::uint32_t>(os, kMapVersion);
  put<std::uint64_t>(os, map.channels);
  put<std::uint64_t>(os, map.height);
  put<std::uint64_t>(os, map.width);
  put<double>(os, map.stride);
  os.write(reinterpret_cast<const char*>(map.data.data()), static_cast<std::streamsize>(map.data.size() * sizeof(double)));
}

FeatureMap read_feature_map(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open feature map: " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMapMagic) {
    throw std::runtime_error("not a feature map file: " + path.string());
  }
  if (const auto v = take<std::uint32_t>(is); v != kMapVersion) {
    throw std::runtime_error("unsupported feature map version " + std::to_string(v));
  }
  FeatureMap map;
  map.channels = take<std::uint64_t>(is);
  map.height = take<std::uint64_t>(is);
  map.width = take<std::uint64_t>(is);
  map.stride = take<double>(is);
  map.data.resize(map.channels * map.height * map.width);
  if (!is.read(reinterpret_cast<char*>(map.data.data()), static_cast<std::streamsize>(map.data.size() * sizeof(double)))) {
    throw std::runtime_error("feature map file truncated");
  }
  validate(map);
  return map;
}

// ---- point branch -----------------------------------------------------------------

RoiPoints gather_roi_points(const PointCloud& cloud, const Box3D& box, double k, std::size_t n,
                            std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("gather_roi_points: N must be >= 1");
  const Box3D region = geometry::expand_box(box, k);
  std::vector<std::size_t> inside = geometry::points_in_box(cloud.xyz, region);

  RoiPoints out;
  out.num_inside = inside.size();
  out.points.num_extras = cloud.num_extras;
  out.real.assign(n, false);

  if (inside.size() > n) {
    // Partial Fisher-Yates picks the subset; sorting keeps cloud order.
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, inside.size() - 1);
      std::swap(inside[i], inside[pick(rng)]);
    }
    inside.resize(n);
    std::sort(inside.begin(), inside.end());
  }

  if (inside.empty()) {
    const std::vector<double> zeros(cloud.num_extras, 0.0);
    for (std::size_t i = 0; i < n; ++i) out.points.push_back(Vec3::Zero(), zeros);
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = inside[i % inside.size()];
    out.points.push_back(cloud.xyz[src], cloud.extras_of(src));
    out.real[i] = i < inside.size();
  }
  return out;
}

std::size_t point_feature_dim(std::size_t num_extras) { return 27 + num_extras; }

std::vector<double> point_features(const RoiPoints& pts, const Box3D& box) {
  const std::size_t n = pts.points.size();
  const std::size_t e = pts.points.num_extras;
  const std::size_t dim = point_feature_dim(e);
  std::vector<double> out(n * dim, 0.0);
  if (pts.num_inside == 0) return out;
  const auto corners = geometry::box_corners(box);
  const Vec3 center = box.center();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * dim;
    const Vec3& p = pts.points.xyz[i];
    for (int j = 0; j < 8; ++j) {
      const Vec3 d = p - corners[j];
      row[3 * j + 0] = d.x();
      row[3 * j + 1] = d.y();
      row[3 * j + 2] = d.z();
    }
    const Vec3 dc = p - center;
    row[24] = dc.x();
    row[25] = dc.y();
    row[26] = dc.z();
    const auto extras = pts.points.extras_of(i);
    std::copy(extras.begin(), extras.end(), row + 27);
  }
  return out;
}

Tensor embed_points(tensor::Tape* tape, const Tensor& features, const tensor::LinearParams& projection) {
  return projection(tape, features);
}

// ---- image branch -----------------------------------------------------------------

namespace {

struct CameraCandidate {
  int valid_corners = 0;
  double area = 0.0;
  Rect2D rect;
  bool has_rect = false;
};

Rect2D clip_to_map(Rect2D r, const FeatureMap& map, bool& empty) {
  const double w = static_cast<double>(map.width - 1);
  const double h = static_cast<double>(map.height - 1);
  empty = r.x_max < 0.0 || r.y_max < 0.0 || r.x_min > w || r.y_min > h;
  r.x_min = std::clamp(r.x_min, 0.0, w);
  r.x_max = std::clamp(r.x_max, 0.0, w);
  r.y_min = std::clamp(r.y_min, 0.0, h);
  r.y_max = std::clamp(r.y_max, 0.0, h);
  return r;
}

CameraCandidate evaluate_camera(const CameraView& view, const std::array<Vec3, 8>& corners) {
  CameraCandidate c;
  std::vector<Vec2> cells;
  for (const auto& corner : corners) {
    const auto p = geometry::project_point(view.camera, corner);
    if (!p.valid) continue;
    ++c.valid_corners;
    cells.emplace_back(view.features.to_cell(p.u), view.features.to_cell(p.v));
  }
  if (cells.empty()) return c;
  bool empty = false;
  c.rect = clip_to_map(geometry::min_circumscribed_rect(cells), view.features, empty);
  c.has_rect = !empty;
  c.area = empty ? 0.0 : (c.rect.width() + 1.0) * (c.rect.height() + 1.0);
  return c;
}

}  // namespace

PooledImage pool_image_roi(std::span<const CameraView> cameras, const Box3D& box, double k, std::size_t s,
                           const PoolOptions& options) {
  if (s == 0) throw std::invalid_argument("pool_image_roi: S must be >= 1");
  PooledImage out;
  const auto corners = geometry::box_corners(geometry::expand_box(box, k));

  CameraCandidate best;
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    const CameraCandidate c = evaluate_camera(cameras[i], corners);
    if (c.valid_corners == 0) continue;
    const bool better = out.camera < 0 || c.valid_corners > best.valid_corners ||
                        (c.valid_corners == best.valid_corners && c.area > best.area);
    if (better) {
      best = c;
      out.camera = static_cast<int>(i);
    }
  }

  const std::size_t channels = cameras.empty() ? 0 : cameras.front().features.channels;
  out.values.assign(s * s * channels, 0.0);
  if (out.camera < 0 || !best.has_rect) return out;

  const FeatureMap& map = cameras[out.camera].features;
  Rect2D rect = best.rect;
  if (options.rect_jitter > 0.0) {
    if (options.rng == nullptr) throw std::invalid_argument("rect jitter requires an rng");
    std::uniform_real_distribution<double> jitter(-options.rect_jitter, options.rect_jitter);
    Rect2D j{rect.x_min + jitter(*options.rng), rect.y_min + jitter(*options.rng), rect.x_max + jitter(*options.rng),
             rect.y_max + jitter(*options.rng)};
    if (j.x_min > j.x_max) std::swap(j.x_min, j.x_max);
    if (j.y_min > j.y_max) std::swap(j.y_min, j.y_max);
    bool empty = false;
    rect = clip_to_map(j, map, empty);
    if (empty) return out;
  }
  out.rect = rect;
  out.valid = true;

  const auto grid = [s](double lo, double hi, std::size_t i) {
    if (s == 1) return 0.5 * (lo + hi);
    return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(s - 1);
  };
  for (std::size_t gy = 0; gy < s; ++gy) {
    const double y = grid(rect.y_min, rect.y_max, gy);
    for (std::size_t gx = 0; gx < s; ++gx) {
      const double x = grid(rect.x_min, rect.x_max, gx);
      double* cell = out.values.data() + (gy * s + gx) * map.channels;
      for (std::size_t c = 0; c < map.channels; ++c) cell[c] = map.sample(c, y, x);
    }
  }
  return out;
}

ImageTokens extract_image_roi(tensor::Tape* tape, std::span<const CameraView> cameras, const Box3D& box,
                              double k, std::size_t s, const tensor::LinearParams& projection,
                              const PoolOptions& options) {
  const std::size_t c_out = projection.weight.cols();
  PooledImage pooled = pool_image_roi(cameras, box, k, s, options);
  if (!pooled.valid) return {Tensor::zeros({s * s, c_out}), false};
  const std::size_t c_img = pooled.values.size() / (s * s);
  const Tensor raw({s * s, c_img}, std::move(pooled.values));
  return {projection(tape, raw), true};
}

// ---- backbone -----------------------------------------------------------------------

BackboneParams BackboneParams::create(std::uint64_t seed, std::size_t out_channels, std::size_t hidden_channels) {
  BackboneParams p;
  p.hidden_channels = hidden_channels;
  p.out_channels = out_channels;
  std::mt19937_64 rng(seed);
  const auto fill = [&rng](std::vector<double>& v, std::size_t n, double bound) {
    std::uniform_real_distribution<double> d(-bound, bound);
    v.resize(n);
    for (auto& x : v) x = d(rng);
  };
  const std::size_t fan1 = p.in_channels * 9, fan2 = hidden_channels * 9;
  fill(p.w1, hidden_channels * fan1, std::sqrt(6.0 / static_cast<double>(fan1 + hidden_channels)));
  fill(p.b1, hidden_channels, 0.1);
  fill(p.w2, out_channels * fan2, std::sqrt(6.0 / static_cast<double>(fan2 + out_channels)));
  fill(p.b2, out_channels, 0.1);
  return p;
}

namespace {

// 3x3, stride 2, edge-replicated padding of one cell.
std::vector<double> conv3x3_s2(const std::vector<double>& in, std::size_t c_in, std::size_t h, std::size_t w,
                               const std::vector<double>& weight, const std::vector<double>& bias, std::size_t c_out,
                               std::size_t& h_out, std::size_t& w_out) {
  h_out = (h + 1) / 2;
  w_out = (w + 1) / 2;
  std::vector<double> out(c_out * h_out * w_out);
  const auto clampi = [](long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
  };
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t y = 0; y < h_out; ++y) {
      for (std::size_t x = 0; x < w_out; ++x) {
        double acc = bias[o];
        for (std::size_t i = 0; i < c_in; ++i) {
          for (int dy = 0; dy < 3; ++dy) {
            const std::size_t sy = clampi(static_cast<long>(2 * y) + dy - 1, h);
            for (int dx = 0; dx < 3; ++dx) {
              const std::size_t sx = clampi(static_cast<long>(2 * x) + dx - 1, w);
              acc += weight[((o * c_in + i) * 3 + dy) * 3 + dx] * in[(i * h + sy) * w + sx];
            }
          }
        }
        out[(o * h_out + y) * w_out + x] = acc;
      }
    }
  }
  return out;
}

}  // namespace

FeatureMap synthetic_backbone(const Tensor& image, const BackboneParams& params) {
  if (image.rank() != 3 || image.dim(0) != params.in_channels) {
    throw std::invalid_argument("backbone expects a [3 x H x W] image, got " + tensor::to_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<double> in(image.data().begin(), image.data().end());
  std::size_t h1 = 0, w1 = 0, h2 = 0, w2 = 0;
  auto hidden = conv3x3_s2(in, params.in_channels, h, w, params.w1, params.b1, params.hidden_channels, h1, w1);
  for (auto& v : hidden) v = std::max(v, 0.0);
  FeatureMap map;
  map.data = conv3x3_s2(hidden, params.hidden_channels, h1, w1, params.w2, params.b2, params.out_channels, h2, w2);
  map.channels = params.out_channels;
  map.height = h2;
  map.width = w2;
  map.stride = 4.0;
  return map;
}

}  // namespace roifuse::roi
