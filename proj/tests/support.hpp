#pragma once

// Shared fixtures: random tensors, scratch directories, finite differences.

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <unistd.h>

#include "glahrr/glahrr.hpp"

namespace testing_support {

using namespace glahrr;

template <typename T = double>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0, Kind kind = Kind::feature) {
  Tensor<T> t(s, T(0), kind);
  Rng rng(seed);
  for (T& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T = double>
Tensor<T> constant_image(int h, int w, double v) {
  return Tensor<T>(Shape{1, 3, h, w}, static_cast<T>(v), Kind::image);
}

// Directory removed on scope exit.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("glahrr_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& p) const { return path_ / p; }

 private:
  fs::path path_;
};

// ||a - b|| / max(||a||, ||b||), with 0 when both vanish.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale < 1e-300 ? 0.0 : std::sqrt(diff) / scale;
}

inline constexpr double kFiniteDifferenceStep = 1e-4;
// Whole-network checks: a bias step moves every pixel, so many kinks land
// inside +-1e-4 on small images.
inline constexpr double kNetworkDifferenceStep = 1e-7;

// Central difference of `loss` with respect to *value. Returns nullopt when
// the two one-sided slopes disagree, i.e. a ReLU or max kink lies within eps.
inline std::optional<double> central_difference(double* value, const std::function<double()>& loss,
                                                double eps = kFiniteDifferenceStep) {
  const double saved = *value;
  const double mid = loss();
  *value = saved + eps;
  const double up = loss();
  *value = saved - eps;
  const double down = loss();
  *value = saved;
  const double right = (up - mid) / eps, left = (mid - down) / eps;
  if (std::abs(right - left) > 1e-2 * 0.5 * (std::abs(right) + std::abs(left)) + 1e-6) return std::nullopt;
  return (up - down) / (2 * eps);
}

// Collects analytic/numeric pairs, skipping coordinates that sit on a kink.
struct GradientSamples {
  std::vector<double> analytic, numeric;
  std::size_t skipped = 0;

  void add(double analytic_value, std::optional<double> numeric_value) {
    if (!numeric_value) {
      ++skipped;
      return;
    }
    analytic.push_back(analytic_value);
    numeric.push_back(*numeric_value);
  }
  // Relative error, or +inf when more than 10% of the samples were kinks.
  double error() const {
    const std::size_t total = analytic.size() + skipped;
    if (total == 0 || skipped * 10 > total) return std::numeric_limits<double>::infinity();
    return relative_error(analytic, numeric);
  }
};

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Indices spread over [0, n): all of them when n <= count.
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> out;
  if (n <= count) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(i);
    return out;
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) out.push_back(rng.index(n));
  return out;
}

// Xavier weights plus small random biases, so bias gradients are exercised too.
inline void init_layer(Layer<double>& layer, std::uint64_t seed) {
  xavier_init(params_of(layer), seed);
  Rng rng(mix_seed(seed, 77));
  for (Param<double>* p : params_of(layer))
    if (p->is_bias())
      for (double& v : p->value.values()) v = rng.uniform(-0.1, 0.1);
}

inline void init_layer(Layer<float>& layer, std::uint64_t seed) { xavier_init(params_of(layer), seed); }

// Analytic vs central-difference gradients of sum(proj * layer(x)) with
// respect to sampled input coordinates and sampled entries of every parameter.
inline double layer_gradient_error(Layer<double>& layer, Tensor<double> x, std::uint64_t seed,
                                   std::size_t samples_per_array = 12) {
  const ParamList<double> params = params_of(layer);
  const Tensor<double> y = layer.forward(x);
  const Tensor<double> proj = random_tensor<double>(y.shape(), mix_seed(seed, 1), -1.0, 1.0);
  zero_grads(params);
  const Tensor<double> dx = layer.backward(proj);

  auto loss = [&]() { return dot(proj, layer.forward(x)); };
  GradientSamples samples;
  for (std::size_t i : sample_indices(x.size(), samples_per_array, mix_seed(seed, 2)))
    samples.add(dx[i], central_difference(&x[i], loss));
  std::uint64_t stream = 3;
  for (Param<double>* p : params)
    for (std::size_t i : sample_indices(p->value.size(), samples_per_array, mix_seed(seed, stream++)))
      samples.add(p->grad[i], central_difference(&p->value[i], loss));
  return samples.error();
}

}  // namespace testing_support
