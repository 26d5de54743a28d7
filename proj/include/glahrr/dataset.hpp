#pragma once

// Paired rain/clean datasets, manifests, seeded cropping and batching.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "glahrr/image_io.hpp"
#include "glahrr/rng.hpp"

namespace glahrr {

struct PairedDataset {
  std::string name;
  std::vector<std::pair<fs::path, fs::path>> pairs;  // (rain, clean)

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

// Manifest: one `rain<TAB>clean` line per pair; relative paths resolve
// against the manifest's directory.
inline PairedDataset read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw NotFoundError("manifest not found: " + manifest.string());
  PairedDataset ds;
  ds.name = manifest.parent_path().filename().string();
  const fs::path root = manifest.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw DecodeError(manifest.string() + ":" + std::to_string(lineno) + ": expected rain<TAB>clean");
    fs::path rain = line.substr(0, tab), clean = line.substr(tab + 1);
    if (rain.is_relative()) rain = root / rain;
    if (clean.is_relative()) clean = root / clean;
    ds.pairs.emplace_back(rain, clean);
  }
  return ds;
}

// Writes paths relative to the manifest directory when they live under it.
inline void write_manifest(const PairedDataset& ds, const fs::path& manifest) {
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + manifest.string());
  const fs::path root = manifest.parent_path();
  auto rel = [&](const fs::path& p) {
    const fs::path r = p.lexically_relative(root);
    return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
  };
  for (const auto& [rain, clean] : ds.pairs) out << rel(rain) << '\t' << rel(clean) << '\n';
}

template <typename T = float>
std::pair<Tensor<T>, Tensor<T>> load_pair(const PairedDataset& ds, std::size_t i) {
  auto rain = load_image<T>(ds.pairs.at(i).first);
  auto clean = load_image<T>(ds.pairs.at(i).second);
  if (!(rain.shape() == clean.shape()))
    throw ShapeError("pair " + std::to_string(i) + " has mismatched shapes " + rain.shape().str() + " vs " +
                     clean.shape().str());
  return {std::move(rain), std::move(clean)};
}

struct CropOffset {
  int y = 0;
  int x = 0;
};

// Offset of a crop_h x crop_w window: y then x, each drawn as
// Rng(seed).index(extent - crop + 1).
inline CropOffset crop_offset(int h, int w, int crop_h, int crop_w, std::uint64_t seed) {
  if (crop_h < 1 || crop_w < 1 || crop_h > h || crop_w > w)
    throw SizeError("crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) + " does not fit image " +
                    std::to_string(h) + "x" + std::to_string(w));
  Rng rng(seed);
  CropOffset o;
  o.y = static_cast<int>(rng.index(static_cast<std::uint64_t>(h - crop_h + 1)));
  o.x = static_cast<int>(rng.index(static_cast<std::uint64_t>(w - crop_w + 1)));
  return o;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> random_crop_pair(const Tensor<T>& rain, const Tensor<T>& clean, int crop_h,
                                                 int crop_w, std::uint64_t seed) {
  if (!(rain.shape() == clean.shape()))
    throw ShapeError("random_crop_pair: shapes differ " + rain.shape().str() + " vs " + clean.shape().str());
  const CropOffset o = crop_offset(rain.h(), rain.w(), crop_h, crop_w, seed);
  return {crop(rain, o.y, o.x, crop_h, crop_w), crop(clean, o.y, o.x, crop_h, crop_w)};
}

// Fisher-Yates over [0, n) driven by Rng(seed), i from n-1 down to 1.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[rng.index(i + 1)]);
  return order;
}

template <typename T>
struct Batch {
  Tensor<T> rain;
  Tensor<T> clean;
  std::vector<std::size_t> indices;
};

// One epoch over a dataset: seeded order, final partial batch kept. Element
// at epoch position p is cropped with seed mix_seed(seed, p + 1).
template <typename T = float>
class BatchIterator {
 public:
  BatchIterator(const PairedDataset& ds, int batch_size, int crop_h, int crop_w, std::uint64_t seed)
      : ds_(ds), batch_(batch_size), crop_h_(crop_h), crop_w_(crop_w), seed_(seed) {
    if (ds.empty()) throw EmptyDatasetError("dataset '" + ds.name + "' has no pairs");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    order_ = seeded_permutation(ds.size(), mix_seed(seed, 0));
  }

  const std::vector<std::size_t>& order() const { return order_; }
  std::size_t batch_count() const { return (order_.size() + batch_ - 1) / batch_; }

  std::optional<Batch<T>> next() {
    if (pos_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(order_.size(), pos_ + static_cast<std::size_t>(batch_));
    std::vector<Tensor<T>> rains, cleans;
    Batch<T> b;
    for (std::size_t p = pos_; p < end; ++p) {
      auto [rain, clean] = load_pair<T>(ds_, order_[p]);
      auto [rc, cc] = random_crop_pair(rain, clean, crop_h_, crop_w_, mix_seed(seed_, p + 1));
      rains.push_back(std::move(rc));
      cleans.push_back(std::move(cc));
      b.indices.push_back(order_[p]);
    }
    pos_ = end;
    b.rain = stack_samples<T>(rains);
    b.clean = stack_samples<T>(cleans);
    return b;
  }

 private:
  PairedDataset ds_;
  int batch_, crop_h_, crop_w_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

template <typename T = float>
BatchIterator<T> make_batches(const PairedDataset& ds, int batch_size, int crop_h, int crop_w,
                              std::uint64_t seed) {
  return BatchIterator<T>(ds, batch_size, crop_h, crop_w, seed);
}

}  // namespace glahrr
