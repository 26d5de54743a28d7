#pragma once

// Procedural clean scenes, depth, rain streaks and fog, and the two heavy-rain
// composition models:
//   ATS: J = T * (I + S) + (1 - T) * A
//   RF:  J = I * (1 - R - F) + R + A * F,  inverted as I = (J - R - A*F) / (1 - R - F)
// All generators are pure functions of their seed and parameters.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "glahrr/dataset.hpp"

namespace glahrr {

// Scene recipe, draws in this order from Rng(seed):
//   c0 (3 x uniform), c1 (3 x uniform), theta = uniform(0, 2pi)
//   background: u = x/(w-1)*cos(theta) + y/(h-1)*sin(theta), normalized over the
//     four image corners to t in [0,1]; pixel = c0 + (c1 - c0) * t
//   count = 5 + index(16) shapes, each drawing
//     kind = index(2) (0 rectangle, 1 ellipse), cy = uniform(0,h), cx = uniform(0,w),
//     ry = uniform(h/16, h/4), rx = uniform(w/16, w/4), color (3 x uniform),
//     alpha = uniform(0.5, 1)
//   and painted in order at pixel centres (y+0.5, x+0.5) by alpha blending.
template <typename T = float>
Tensor<T> gen_clean_scene(std::uint64_t seed, int h, int w) {
  if (h < 16 || w < 16) throw SizeError("gen_clean_scene needs h,w >= 16");
  Rng rng(seed);
  double c0[3], c1[3];
  for (double& v : c0) v = rng.uniform();
  for (double& v : c1) v = rng.uniform();
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double corners[4] = {0.0, ct, st, ct + st};
  const double umin = *std::min_element(corners, corners + 4);
  const double umax = *std::max_element(corners, corners + 4);

  std::vector<double> img(static_cast<std::size_t>(3) * h * w);
  auto at = [&](int c, int y, int x) -> double& { return img[(static_cast<std::size_t>(c) * h + y) * w + x]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = double(x) / (w - 1) * ct + double(y) / (h - 1) * st;
      const double t = (u - umin) / (umax - umin);
      for (int c = 0; c < 3; ++c) at(c, y, x) = c0[c] + (c1[c] - c0[c]) * t;
    }

  const int count = 5 + static_cast<int>(rng.index(16));
  for (int s = 0; s < count; ++s) {
    const bool ellipse = rng.index(2) == 1;
    const double cy = rng.uniform(0.0, h), cx = rng.uniform(0.0, w);
    const double ry = rng.uniform(h / 16.0, h / 4.0), rx = rng.uniform(w / 16.0, w / 4.0);
    double color[3];
    for (double& v : color) v = rng.uniform();
    const double alpha = rng.uniform(0.5, 1.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
        const bool inside = ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) at(c, y, x) = (1.0 - alpha) * at(c, y, x) + alpha * color[c];
      }
  }

  Tensor<T> out(Shape{1, 3, h, w}, T(0), Kind::image);
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<T>(std::clamp(img[i], 0.0, 1.0));
  return out;
}

// Depth recipe: 5x5 grid of Rng(seed).uniform() values (row-major), bilinearly
// interpolated over the image; v = (1 - y/(h-1)) + 0.5 * noise, so the top of
// the frame is far. v is then mapped affinely onto [0.05*d_max, d_max].
template <typename T = float>
Tensor<T> gen_depth(std::uint64_t seed, int h, int w, double d_max) {
  if (!(d_max > 0)) throw DomainError("gen_depth needs d_max > 0");
  if (h < 2 || w < 2) throw SizeError("gen_depth needs h,w >= 2");
  constexpr int kGrid = 5;
  Rng rng(seed);
  double grid[kGrid][kGrid];
  for (auto& row : grid)
    for (double& v : row) v = rng.uniform();
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gy = double(y) / (h - 1) * (kGrid - 1), gx = double(x) / (w - 1) * (kGrid - 1);
      const int y0 = std::min(static_cast<int>(gy), kGrid - 2), x0 = std::min(static_cast<int>(gx), kGrid - 2);
      const double fy = gy - y0, fx = gx - x0;
      const double noise = (1 - fy) * ((1 - fx) * grid[y0][x0] + fx * grid[y0][x0 + 1]) +
                           fy * ((1 - fx) * grid[y0 + 1][x0] + fx * grid[y0 + 1][x0 + 1]);
      v[static_cast<std::size_t>(y) * w + x] = (1.0 - double(y) / (h - 1)) + 0.5 * noise;
    }
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double vmin = *lo, vmax = *hi;
  Tensor<T> depth(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = vmax > vmin ? (v[i] - vmin) / (vmax - vmin) : 1.0;
    depth[i] = static_cast<T>(d_max * (0.05 + 0.95 * t));
  }
  return depth;
}

template <typename T>
Tensor<T> transmission_from_depth(const Tensor<T>& depth, double beta) {
  if (!(beta > 0)) throw DomainError("transmission_from_depth needs beta > 0");
  Tensor<T> t(depth.shape());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(std::exp(-beta * double(depth[i])));
  return t;
}

// Streak recipe: for every pixel in row-major order draw u = Rng(seed).uniform();
// if u < density the pixel is seeded with intensity uniform(0.5, 1). Each seed is
// splatted along a line of `length` taps at offsets t = i - (length-1)/2,
// (dy, dx) = (round(t*sin a), round(t*cos a)), weight 1/length; the map is
// then divided by its maximum. angle 90 gives vertical streaks.
template <typename T = float>
Tensor<T> gen_streaks(std::uint64_t seed, int h, int w, double angle_deg, int length, double density) {
  if (length < 1) throw ConfigError("streak length must be >= 1");
  if (!(density >= 0 && density <= 1)) throw ConfigError("streak density must lie in [0,1]");
  const double a = angle_deg * std::numbers::pi / 180.0;
  std::vector<std::pair<int, int>> taps;
  for (int i = 0; i < length; ++i) {
    const double t = i - (length - 1) / 2.0;
    taps.emplace_back(static_cast<int>(std::lround(t * std::sin(a))), static_cast<int>(std::lround(t * std::cos(a))));
  }
  Rng rng(seed);
  std::vector<double> map(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!(rng.uniform() < density)) continue;
      const double v = rng.uniform(0.5, 1.0) / length;
      for (const auto& [dy, dx] : taps) {
        const int yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < h && xx >= 0 && xx < w) map[static_cast<std::size_t>(yy) * w + xx] += v;
      }
    }
  const double peak = *std::max_element(map.begin(), map.end());
  Tensor<T> out(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = static_cast<T>(peak > 0 ? map[i] / peak : 0.0);
  return out;
}

template <typename T>
struct RainSceneATS {
  Tensor<T> clean;         // I, (B,3,H,W)
  Tensor<T> streaks;       // S, 1 or 3 channels, >= 0
  Tensor<T> transmission;  // T, 1 channel, in [0,1]
  double atmospheric = 1;  // A
};

template <typename T>
struct RainSceneRF {
  Tensor<T> clean;  // I
  Tensor<T> rain;   // R, 1 or 3 channels
  Tensor<T> fog;    // F, 1 or 3 channels, R + F <= 0.95
  double atmospheric = 1;
};

inline constexpr double kRainFogCap = 0.95;
inline constexpr double kRainScale = 0.8;
inline constexpr double kMinDenominator = 0.05;

namespace detail {

// Value of a 1- or 3-channel layer broadcast to channel c.
template <typename T>
T layer_at(const Tensor<T>& layer, int n, int c, std::size_t i) {
  return layer.plane(n, layer.c() == 1 ? 0 : c)[i];
}

template <typename T>
void require_layer(const Tensor<T>& layer, const Tensor<T>& clean, const char* what) {
  const Shape& l = layer.shape();
  const Shape& s = clean.shape();
  if (l.n != s.n || l.h != s.h || l.w != s.w || (l.c != 1 && l.c != s.c))
    throw ShapeError(std::string("composition error: ") + what + " " + l.str() + " does not match clean " + s.str());
}

}  // namespace detail

template <typename T>
Tensor<T> compose_ats(const RainSceneATS<T>& s, bool clamp = true) {
  detail::require_layer(s.streaks, s.clean, "streaks");
  detail::require_layer(s.transmission, s.clean, "transmission");
  if (s.transmission.c() != 1) throw ShapeError("composition error: transmission must have one channel");
  Tensor<T> j(s.clean.shape(), T(0), Kind::image);
  const T a = static_cast<T>(s.atmospheric);
  const std::size_t plane = j.shape().plane();
  for (int n = 0; n < j.n(); ++n)
    for (int c = 0; c < j.c(); ++c) {
      const T* i = s.clean.plane(n, c);
      const T* t = s.transmission.plane(n, 0);
      T* out = j.plane(n, c);
      for (std::size_t p = 0; p < plane; ++p)
        out[p] = t[p] * (i[p] + detail::layer_at(s.streaks, n, c, p)) + (T(1) - t[p]) * a;
    }
  return clamp ? clamp01(std::move(j)) : j;
}

template <typename T>
Tensor<T> compose_rf(const RainSceneRF<T>& s, bool clamp = true) {
  detail::require_layer(s.rain, s.clean, "rain");
  detail::require_layer(s.fog, s.clean, "fog");
  Tensor<T> j(s.clean.shape(), T(0), Kind::image);
  const T a = static_cast<T>(s.atmospheric);
  const std::size_t plane = j.shape().plane();
  for (int n = 0; n < j.n(); ++n)
    for (int c = 0; c < j.c(); ++c) {
      const T* i = s.clean.plane(n, c);
      T* out = j.plane(n, c);
      for (std::size_t p = 0; p < plane; ++p) {
        const T r = detail::layer_at(s.rain, n, c, p), f = detail::layer_at(s.fog, n, c, p);
        out[p] = i[p] * (T(1) - r - f) + r + a * f;
      }
    }
  return clamp ? clamp01(std::move(j)) : j;
}

template <typename T>
Tensor<T> invert_rf(const Tensor<T>& J, const RainSceneRF<T>& s) {
  detail::require_layer(s.rain, J, "rain");
  detail::require_layer(s.fog, J, "fog");
  Tensor<T> out(J.shape(), T(0), Kind::image);
  const T a = static_cast<T>(s.atmospheric);
  const std::size_t plane = J.shape().plane();
  // Layers sitting exactly on the R + F cap round to a hair under the limit.
  const T limit = T(kMinDenominator) - 8 * std::numeric_limits<T>::epsilon();
  for (int n = 0; n < J.n(); ++n)
    for (int c = 0; c < J.c(); ++c) {
      const T* j = J.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t p = 0; p < plane; ++p) {
        const T r = detail::layer_at(s.rain, n, c, p), f = detail::layer_at(s.fog, n, c, p);
        const T denom = T(1) - r - f;
        if (denom < limit) throw SingularityError("invert_rf: 1 - R - F below 0.05");
        o[p] = (j[p] - r - a * f) / denom;
      }
    }
  return out;
}

// R = 0.8 * streaks and F = 1 - T, jointly rescaled wherever R + F > 0.95.
template <typename T>
RainSceneRF<T> make_rf_scene(Tensor<T> clean, const Tensor<T>& streaks, const Tensor<T>& transmission,
                             double atmospheric) {
  RainSceneRF<T> s;
  s.clean = std::move(clean);
  s.rain = Tensor<T>(streaks.shape());
  s.fog = Tensor<T>(transmission.shape());
  s.rain.require_same(s.fog, "make_rf_scene");
  for (std::size_t i = 0; i < s.rain.size(); ++i) {
    double r = kRainScale * double(streaks[i]);
    double f = 1.0 - double(transmission[i]);
    if (r + f > kRainFogCap) {
      const double k = kRainFogCap / (r + f);
      r *= k;
      f *= k;
    }
    s.rain[i] = static_cast<T>(r);
    s.fog[i] = static_cast<T>(f);
  }
  s.atmospheric = atmospheric;
  return s;
}

enum class RainModel { ats, rf };

inline RainModel rain_model_from_string(const std::string& s) {
  if (s == "ats") return RainModel::ats;
  if (s == "rf") return RainModel::rf;
  throw ConfigError("unknown rain model '" + s + "' (expected ats or rf)");
}

// Per-pair generation parameters; see build_synthetic_dataset for ranges.
struct RainParams {
  std::uint64_t scene_seed = 0;
  double beta = 1;
  double angle = 90;
  int length = 9;
  double density = 0.02;
  double atmospheric = 1;
};

inline RainParams draw_rain_params(Rng& rng) {
  RainParams p;
  p.scene_seed = rng.next();
  p.beta = rng.uniform(0.8, 2.5);
  p.angle = rng.uniform(60.0, 120.0);
  p.length = 5 + static_cast<int>(rng.index(11));
  p.density = rng.uniform(0.01, 0.04);
  p.atmospheric = rng.uniform(0.7, 1.0);
  return p;
}

// Clean scene and composed rain image for one parameter set. The depth field
// has d_max = 1; scene, depth and streaks use sub-seeds 0, 1, 2 of scene_seed.
template <typename T = float>
std::pair<Tensor<T>, Tensor<T>> synthesize_pair(const RainParams& p, RainModel model, int h, int w,
                                                bool clamp = true) {
  Tensor<T> clean = gen_clean_scene<T>(mix_seed(p.scene_seed, 0), h, w);
  const Tensor<T> depth = gen_depth<T>(mix_seed(p.scene_seed, 1), h, w, 1.0);
  const Tensor<T> streaks = gen_streaks<T>(mix_seed(p.scene_seed, 2), h, w, p.angle, p.length, p.density);
  const Tensor<T> trans = transmission_from_depth(depth, p.beta);
  Tensor<T> rain;
  if (model == RainModel::ats) {
    RainSceneATS<T> s{clean, streaks, trans, p.atmospheric};
    for (T& v : s.streaks.values()) v *= T(kRainScale);
    rain = compose_ats(s, clamp);
  } else {
    rain = compose_rf(make_rf_scene(clean, streaks, trans, p.atmospheric), clamp);
  }
  return {std::move(rain), std::move(clean)};
}

inline constexpr int kDefaultSceneHeight = 64;
inline constexpr int kDefaultSceneWidth = 96;

// Writes rain/NNNN.png, clean/NNNN.png, manifest.tsv and params.tsv under out_dir.
// Parameters per pair come from one Rng(seed) stream: beta in [0.8, 2.5],
// angle in [60, 120] degrees, length in [5, 15], density in [0.01, 0.04],
// atmospheric light in [0.7, 1].
inline PairedDataset build_synthetic_dataset(int n, std::uint64_t seed, const fs::path& out_dir, RainModel model,
                                             int h = kDefaultSceneHeight, int w = kDefaultSceneWidth) {
  if (n < 1) throw ConfigError("dataset size must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir / "rain", ec);
  fs::create_directories(out_dir / "clean", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

  std::ofstream params(out_dir / "params.tsv", std::ios::binary);
  if (!params) throw IoError("cannot write " + (out_dir / "params.tsv").string());
  params << "id\tscene_seed\tmodel\tbeta\tangle\tlength\tdensity\tatmospheric\n";
  params << std::setprecision(17);

  PairedDataset ds;
  ds.name = out_dir.filename().string();
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const RainParams p = draw_rain_params(rng);
    auto [rain, clean] = synthesize_pair<float>(p, model, h, w);
    std::ostringstream id;
    id << std::setw(4) << std::setfill('0') << i;
    const fs::path rain_path = out_dir / "rain" / (id.str() + ".png");
    const fs::path clean_path = out_dir / "clean" / (id.str() + ".png");
    save_image(rain, rain_path);
    save_image(clean, clean_path);
    params << id.str() << '\t' << p.scene_seed << '\t' << (model == RainModel::ats ? "ats" : "rf") << '\t' << p.beta
           << '\t' << p.angle << '\t' << p.length << '\t' << p.density << '\t' << p.atmospheric << '\n';
    ds.pairs.emplace_back(rain_path, clean_path);
  }
  write_manifest(ds, out_dir / "manifest.tsv");
  return ds;
}

}  // namespace glahrr
