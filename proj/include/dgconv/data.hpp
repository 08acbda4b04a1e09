// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dgconv/errors.hpp"
#include "dgconv/tensor.hpp"

namespace dgconv {

/// Labelled image set held as raw bytes (N, C, H, W), values 0..255.
struct Dataset {
  int channels = 3, height = 32, width = 32, classes = 10;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;

  int count() const { return static_cast<int>(labels.size()); }
  std::size_t image_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  const std::uint8_t* image(int i) const { return pixels.data() + i * image_size(); }
};

/// Where a dataset comes from and how to present it.
struct DatasetHandle {
  std::string kind = "synth10";  // two-blob | synth10 | cifar-bin | raw
  std::string path;              // cifar-bin file, or raw images file
  std::string labels_path;       // raw labels file
  int subset = 0;                // 0 = everything
  int synth_count = 10000;       // generated size for procedural kinds
  bool augment = false;          // pad-4 random crop + horizontal flip
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stdev{0.25f, 0.25f, 0.25f};
};

// ---------------------------------------------------------------------------
// procedural sets

/// Two-class set: one gaussian blob vs. two. Zero external files.
inline Dataset make_two_blob(int n, std::uint64_t seed) {
  Dataset d;
  d.classes = 2;
  d.pixels.resize(static_cast<std::size_t>(n) * d.image_size());
  d.labels.resize(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(6.0, 26.0);
  std::normal_distribution<double> noise(0.0, 12.0);
  for (int i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng() % 2);
    d.labels[i] = label;
    std::vector<std::pair<double, double>> centers{{pos(rng), pos(rng)}};
    if (label == 1) centers.push_back({pos(rng), pos(rng)});
    std::uint8_t* img = d.pixels.data() + i * d.image_size();
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          double v = 30.0;
          for (auto [cy, cx] : centers) {
            const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            v += 200.0 * std::exp(-r2 / 18.0);
          }
          v += noise(rng);
          img[(c * 32 + y) * 32 + x] =
              static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
  }
  return d;
}

/// Ten-class 32x32 set: each class is an oriented grating with a class color
/// profile, random phase and heavy pixel noise. A tenth of the labels are
/// resampled uniformly, so the Bayes loss is bounded away from zero the way
/// photographic data is; without that the complexity penalty (which scales
/// with the task loss) dies once training saturates.
inline Dataset make_synth10(int n, std::uint64_t seed) {
  Dataset d;
  d.pixels.resize(static_cast<std::size_t>(n) * d.image_size());
  d.labels.resize(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uphase(0.0, 2 * M_PI);
  std::normal_distribution<double> noise(0.0, 36.0);
  for (int i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng() % 10);
    d.labels[i] = (rng() % 10 == 0) ? static_cast<int>(rng() % 10) : label;
    const double theta = label * M_PI / 10.0;
    const double freq = 2 * M_PI * (0.18 + 0.04 * (label % 3));
    const double phase = uphase(rng);
    const double cx = std::cos(theta), sx = std::sin(theta);
    std::array<double, 3> gain{0.5 + 0.5 * std::cos(0.6 * label),
                               0.5 + 0.5 * std::cos(0.6 * label + 2.1),
                               0.5 + 0.5 * std::cos(0.6 * label + 4.2)};
    std::uint8_t* img = d.pixels.data() + i * d.image_size();
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const double wave = std::sin(freq * (cx * x + sx * y) + phase);
        for (int c = 0; c < 3; ++c) {
          const double v = 128.0 + 64.0 * gain[c] * wave + noise(rng);
          img[(c * 32 + y) * 32 + x] =
              static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
      }
  }
  return d;
}

// ---------------------------------------------------------------------------
// file formats

/// The common 10-class 32x32 binary batch format: records of 1 label byte +
/// 3072 channel-major pixel bytes.
inline Dataset load_cifar_bin(const std::string& path, int classes = 10) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw ParseError("cannot open " + path, 0);
  const std::size_t size = static_cast<std::size_t>(f.tellg());
  constexpr std::size_t record = 1 + 3072;
  if (size == 0 || size % record != 0)
    throw ParseError(path + ": size is not a multiple of 3073", size - size % record);
  f.seekg(0);
  Dataset d;
  d.classes = classes;
  const int n = static_cast<int>(size / record);
  d.pixels.resize(static_cast<std::size_t>(n) * 3072);
  d.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    std::uint8_t label;
    f.read(reinterpret_cast<char*>(&label), 1);
    f.read(reinterpret_cast<char*>(d.pixels.data() + i * std::size_t(3072)), 3072);
    if (!f) throw ParseError(path + ": truncated record", i * record);
    if (label >= classes)
      throw ValueError(path + ": label " + std::to_string(label) + " out of range at record " +
                       std::to_string(i));
    d.labels[i] = label;
  }
  return d;
}

inline void write_cifar_bin(const Dataset& d, const std::string& path) {
  if (d.channels != 3 || d.height != 32 || d.width != 32)
    throw ConfigError("write_cifar_bin: dataset must be 3x32x32");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ParseError("cannot write " + path, 0);
  for (int i = 0; i < d.count(); ++i) {
    const std::uint8_t label = static_cast<std::uint8_t>(d.labels[i]);
    f.write(reinterpret_cast<const char*>(&label), 1);
    f.write(reinterpret_cast<const char*>(d.image(i)), 3072);
  }
}

/// Raw tensor file: magic "DGT1", u32 ndims, u32 dims[], then little-endian
/// f32 payload.
inline void write_raw_tensor(const std::vector<std::uint32_t>& dims,
                             const std::vector<float>& data, const std::string& path) {
  std::size_t total = 1;
  for (auto x : dims) total *= x;
  if (total != data.size()) throw ConfigError("write_raw_tensor: dims do not match data");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ParseError("cannot write " + path, 0);
  f.write("DGT1", 4);
  const std::uint32_t nd = static_cast<std::uint32_t>(dims.size());
  f.write(reinterpret_cast<const char*>(&nd), 4);
  f.write(reinterpret_cast<const char*>(dims.data()), 4 * dims.size());
  f.write(reinterpret_cast<const char*>(data.data()), 4 * data.size());
}

inline std::vector<float> load_raw_tensor(const std::string& path,
                                          std::vector<std::uint32_t>& dims) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path, 0);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "DGT1", 4) != 0)
    throw ParseError(path + ": bad raw-tensor magic", 0);
  std::uint32_t nd = 0;
  f.read(reinterpret_cast<char*>(&nd), 4);
  if (!f || nd == 0 || nd > 8) throw ParseError(path + ": bad rank", 4);
  dims.resize(nd);
  f.read(reinterpret_cast<char*>(dims.data()), 4 * nd);
  if (!f) throw ParseError(path + ": truncated dims", 8);
  std::size_t total = 1;
  for (auto x : dims) total *= x;
  std::vector<float> data(total);
  f.read(reinterpret_cast<char*>(data.data()), 4 * total);
  if (!f) throw ParseError(path + ": truncated payload", 8 + 4 * nd);
  return data;
}

/// Raw-tensor pair: images (N,C,H,W) float 0..255, labels (N) float.
inline Dataset load_raw_dataset(const std::string& images_path,
                                const std::string& labels_path, int classes = 10) {
  std::vector<std::uint32_t> idims, ldims;
  const std::vector<float> img = load_raw_tensor(images_path, idims);
  const std::vector<float> lab = load_raw_tensor(labels_path, ldims);
  if (idims.size() != 4) throw ParseError(images_path + ": expected rank-4 images", 4);
  if (ldims.size() != 1 || ldims[0] != idims[0])
    throw ParseError(labels_path + ": labels must be rank 1 and match image count", 4);
  Dataset d;
  d.classes = classes;
  d.channels = idims[1];
  d.height = idims[2];
  d.width = idims[3];
  d.pixels.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    d.pixels[i] = static_cast<std::uint8_t>(std::clamp(img[i], 0.0f, 255.0f));
  d.labels.resize(lab.size());
  for (std::size_t i = 0; i < lab.size(); ++i) {
    d.labels[i] = static_cast<int>(lab[i]);
    if (d.labels[i] < 0 || d.labels[i] >= classes)
      throw ValueError(labels_path + ": label out of range at index " + std::to_string(i));
  }
  return d;
}

// ---------------------------------------------------------------------------

/// Resolves a handle to an in-memory dataset. `train_split` picks the seed
/// stream for procedural sets (train and test draw from disjoint streams).
inline Dataset load_dataset(const DatasetHandle& h, std::uint64_t seed, bool train_split) {
  Dataset d;
  const std::uint64_t s = seed * 2 + (train_split ? 0 : 1);
  if (h.kind == "two-blob")
    d = make_two_blob(h.synth_count, s);
  else if (h.kind == "synth10")
    d = make_synth10(h.synth_count, s);
  else if (h.kind == "cifar-bin")
    d = load_cifar_bin(h.path);
  else if (h.kind == "raw")
    d = load_raw_dataset(h.path, h.labels_path);
  else
    throw ConfigError("load_dataset: unknown kind '" + h.kind + "'");
  if (h.subset > 0 && h.subset < d.count()) {
    d.pixels.resize(static_cast<std::size_t>(h.subset) * d.image_size());
    d.labels.resize(h.subset);
  }
  return d;
}

struct Batch {
  Tensor4<float> images;
  std::vector<int> labels;
};

/// Normalized (and optionally augmented) minibatch of the given indices.
inline Batch make_batch(const Dataset& d, const DatasetHandle& h,
                        const std::vector<int>& idx, std::mt19937_64& rng,
                        bool augment) {
  Batch b;
  const int n = static_cast<int>(idx.size());
  b.images = Tensor4<float>(n, d.channels, d.height, d.width);
  b.labels.resize(n);
  constexpr int pad = 4;
  for (int s = 0; s < n; ++s) {
    b.labels[s] = d.labels[idx[s]];
    const std::uint8_t* img = d.image(idx[s]);
    int dy = 0, dx = 0;
    bool flip = false;
    if (augment) {
      dy = static_cast<int>(rng() % (2 * pad + 1)) - pad;
      dx = static_cast<int>(rng() % (2 * pad + 1)) - pad;
      flip = (rng() & 1) != 0;
    }
    for (int c = 0; c < d.channels; ++c) {
      const float mean = h.mean[c % 3] * 255.0f;
      const float inv_std = 1.0f / (h.stdev[c % 3] * 255.0f);
      for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x) {
          const int sy = y + dy;
          int sx = x + dx;
          if (flip) sx = d.width - 1 - sx;
          float v = 0;
          if (sy >= 0 && sy < d.height && sx >= 0 && sx < d.width)
            v = img[(c * d.height + sy) * d.width + sx];
          b.images(s, c, y, x) = (v - mean) * inv_std;
        }
    }
  }
  return b;
}

}  // namespace dgconv
