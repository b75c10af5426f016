// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "scopednas/rng.hpp"
#include "scopednas/tensor.hpp"

namespace scopednas {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A minibatch: NCHW images (values in [0,1] before normalization) and labels.
template <class T>
struct ImageBatch {
  Tensor<T> images;
  std::vector<int> labels;

  std::int64_t size() const { return images.defined() ? images.dim(0) : 0; }
};

// In-memory image set; the unit the streams and splits operate on.
template <class T>
struct Dataset {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<T> images;  // N*3*H*W
  std::vector<int> labels;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }

  const T* image(std::int64_t index) const { return images.data() + index * 3 * height * width; }
};

inline constexpr std::int64_t kCifarImageHw = 32;
inline constexpr std::int64_t kCifarRecordBytes = 1 + 3 * 32 * 32;

// CIFAR-10 binary records: 1 label byte then 3072 pixel bytes (all R rows, all
// G, all B; row-major 32x32). Pixels scale to [0,1] by /255.
template <class T>
ImageBatch<T> parse_cifar10(const std::vector<unsigned char>& bytes) {
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw DataError("CIFAR-10 batch file length " + std::to_string(bytes.size()) +
                    " is not a multiple of " + std::to_string(kCifarRecordBytes));
  }
  const std::int64_t count = static_cast<std::int64_t>(bytes.size()) / kCifarRecordBytes;
  ImageBatch<T> batch;
  batch.images = Tensor<T>(Shape{count, 3, kCifarImageHw, kCifarImageHw});
  batch.labels.resize(static_cast<std::size_t>(count));
  T* dst = batch.images.data().data();
  for (std::int64_t n = 0; n < count; ++n) {
    const unsigned char* rec = bytes.data() + n * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw DataError("CIFAR-10 record " + std::to_string(n) + " has label byte " +
                      std::to_string(static_cast<int>(rec[0])));
    }
    batch.labels[static_cast<std::size_t>(n)] = rec[0];
    for (std::int64_t i = 0; i < 3 * kCifarImageHw * kCifarImageHw; ++i) {
      dst[n * 3 * kCifarImageHw * kCifarImageHw + i] = static_cast<T>(rec[1 + i]) / T(255);
    }
  }
  return batch;
}

template <class T>
std::vector<unsigned char> serialize_cifar10(const ImageBatch<T>& batch) {
  const std::int64_t count = batch.size();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(count * kCifarRecordBytes));
  const T* src = batch.images.data().data();
  for (std::int64_t n = 0; n < count; ++n) {
    unsigned char* rec = bytes.data() + n * kCifarRecordBytes;
    rec[0] = static_cast<unsigned char>(batch.labels[static_cast<std::size_t>(n)]);
    for (std::int64_t i = 0; i < 3 * kCifarImageHw * kCifarImageHw; ++i) {
      const long long v = std::llround(static_cast<double>(src[n * 3 * kCifarImageHw * kCifarImageHw + i]) * 255.0);
      rec[1 + i] = static_cast<unsigned char>(std::clamp(v, 0LL, 255LL));
    }
  }
  return bytes;
}

inline std::vector<unsigned char> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

template <class T>
ImageBatch<T> load_cifar10_batchfile(const std::string& path) {
  return parse_cifar10<T>(read_binary_file(path));
}

template <class T>
Dataset<T> dataset_from_batch(const ImageBatch<T>& batch) {
  Dataset<T> ds;
  ds.height = batch.images.dim(2);
  ds.width = batch.images.dim(3);
  ds.images = batch.images.data();
  ds.labels = batch.labels;
  return ds;
}

template <class T>
void append_batch(Dataset<T>& ds, const ImageBatch<T>& batch) {
  if (ds.size() == 0) {
    ds = dataset_from_batch(batch);
    return;
  }
  if (batch.images.dim(2) != ds.height || batch.images.dim(3) != ds.width) {
    throw DataError("appended batch has a different image size");
  }
  ds.images.insert(ds.images.end(), batch.images.data().begin(), batch.images.data().end());
  ds.labels.insert(ds.labels.end(), batch.labels.begin(), batch.labels.end());
}

struct AugmentSpec {
  double area_min = 0.08;
  double area_max = 1.0;
  double aspect_min = 3.0 / 4.0;
  double aspect_max = 4.0 / 3.0;
  std::int64_t resize_target = 224;
  double flip_prob = 0.5;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

enum class AugmentMode { train, eval };

namespace detail {

// Bilinear sampling with the align-corners=false convention:
// src = (dst + 0.5) * (in/out) - 0.5, clamped to the valid range.
template <class T>
void resize_bilinear_plane(const T* src, std::int64_t src_h, std::int64_t src_w,
                           std::int64_t crop_top, std::int64_t crop_left,
                           std::int64_t crop_h, std::int64_t crop_w, T* dst,
                           std::int64_t dst_h, std::int64_t dst_w) {
  const double scale_y = static_cast<double>(crop_h) / static_cast<double>(dst_h);
  const double scale_x = static_cast<double>(crop_w) / static_cast<double>(dst_w);
  for (std::int64_t y = 0; y < dst_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * scale_y - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(crop_h - 1));
    const std::int64_t y0 = static_cast<std::int64_t>(fy);
    const std::int64_t y1 = std::min(y0 + 1, crop_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::int64_t x = 0; x < dst_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * scale_x - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(crop_w - 1));
      const std::int64_t x0 = static_cast<std::int64_t>(fx);
      const std::int64_t x1 = std::min(x0 + 1, crop_w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double v00 = src[(crop_top + y0) * src_w + crop_left + x0];
      const double v01 = src[(crop_top + y0) * src_w + crop_left + x1];
      const double v10 = src[(crop_top + y1) * src_w + crop_left + x0];
      const double v11 = src[(crop_top + y1) * src_w + crop_left + x1];
      const double top = v00 + (v01 - v00) * wx;
      const double bottom = v10 + (v11 - v10) * wx;
      dst[y * dst_w + x] = static_cast<T>(top + (bottom - top) * wy);
    }
  }
}

}  // namespace detail

// Flips every image left-right in place-order (returns a copy).
template <class T>
ImageBatch<T> flip_horizontal(const ImageBatch<T>& batch) {
  ImageBatch<T> out;
  out.labels = batch.labels;
  out.images = Tensor<T>(batch.images.shape());
  const std::int64_t count = batch.images.dim(0), channels = batch.images.dim(1),
                     h = batch.images.dim(2), w = batch.images.dim(3);
  const T* src = batch.images.data().data();
  T* dst = out.images.data().data();
  for (std::int64_t n = 0; n < count; ++n)
    for (std::int64_t c = 0; c < channels; ++c)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
          dst[((n * channels + c) * h + y) * w + x] =
              src[((n * channels + c) * h + y) * w + (w - 1 - x)];
  return out;
}

// Train mode: random-resized-crop (10 attempts, then center-crop fallback),
// horizontal flip, per-channel normalize. Eval mode: deterministic resize and
// normalize; consumes no randomness.
template <class T>
ImageBatch<T> augment(const ImageBatch<T>& batch, const AugmentSpec& spec, Rng& rng,
                      AugmentMode mode) {
  if (spec.flip_prob < 0.0 || spec.flip_prob > 1.0) throw DataError("flip_prob must be in [0,1]");
  if (spec.resize_target < 8) throw DataError("resize target must be >= 8");
  const std::int64_t count = batch.images.dim(0);
  const std::int64_t h = batch.images.dim(2), w = batch.images.dim(3);
  const std::int64_t target = spec.resize_target;
  ImageBatch<T> out;
  out.labels = batch.labels;
  out.images = Tensor<T>(Shape{count, 3, target, target});
  std::vector<T> flipped(static_cast<std::size_t>(h * w));
  for (std::int64_t n = 0; n < count; ++n) {
    std::int64_t crop_top = 0, crop_left = 0, crop_h = h, crop_w = w;
    bool flip = false;
    if (mode == AugmentMode::train) {
      bool found = false;
      for (int attempt = 0; attempt < 10 && !found; ++attempt) {
        const double area = rng.uniform(spec.area_min, spec.area_max) *
                            static_cast<double>(h) * static_cast<double>(w);
        const double log_aspect =
            rng.uniform(std::log(spec.aspect_min), std::log(spec.aspect_max));
        const double aspect = std::exp(log_aspect);
        const std::int64_t cw = static_cast<std::int64_t>(std::lround(std::sqrt(area * aspect)));
        const std::int64_t ch = static_cast<std::int64_t>(std::lround(std::sqrt(area / aspect)));
        if (cw >= 1 && ch >= 1 && cw <= w && ch <= h) {
          crop_w = cw;
          crop_h = ch;
          crop_top = ch == h ? 0 : static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(h - ch + 1)));
          crop_left = cw == w ? 0 : static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(w - cw + 1)));
          found = true;
        }
      }
      if (!found) {
        const std::int64_t side = std::min(h, w);
        crop_h = crop_w = side;
        crop_top = (h - side) / 2;
        crop_left = (w - side) / 2;
      }
      flip = rng.bernoulli(spec.flip_prob);
    }
    for (std::int64_t c = 0; c < 3; ++c) {
      const T* src = batch.images.data().data() + (n * 3 + c) * h * w;
      const T* plane = src;
      if (flip) {
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t x = 0; x < w; ++x) flipped[static_cast<std::size_t>(y * w + x)] = src[y * w + (w - 1 - x)];
        plane = flipped.data();
      }
      T* dst = out.images.data().data() + (n * 3 + c) * target * target;
      detail::resize_bilinear_plane(plane, h, w, crop_top, crop_left, crop_h, crop_w, dst,
                                    target, target);
      const T mean = static_cast<T>(spec.mean[static_cast<std::size_t>(c)]);
      const T stddev = static_cast<T>(spec.stddev[static_cast<std::size_t>(c)]);
      for (std::int64_t i = 0; i < target * target; ++i) dst[i] = (dst[i] - mean) / stddev;
    }
  }
  return out;
}

// One-pass per-channel mean and standard deviation over a dataset; used to
// fill AugmentSpec normalization constants from the training split.
template <class T>
std::pair<std::array<double, 3>, std::array<double, 3>> channel_mean_std(const Dataset<T>& ds) {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> sq{0, 0, 0};
  const std::int64_t plane = ds.height * ds.width;
  const std::int64_t count = ds.size();
  for (std::int64_t n = 0; n < count; ++n) {
    for (std::int64_t c = 0; c < 3; ++c) {
      const T* p = ds.images.data() + (n * 3 + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        mean[static_cast<std::size_t>(c)] += p[i];
        sq[static_cast<std::size_t>(c)] += static_cast<double>(p[i]) * p[i];
      }
    }
  }
  const double total = static_cast<double>(count * plane);
  std::array<double, 3> stddev{1, 1, 1};
  for (std::size_t c = 0; c < 3; ++c) {
    mean[c] /= total;
    stddev[c] = std::sqrt(std::max(sq[c] / total - mean[c] * mean[c], 1e-12));
  }
  return {mean, stddev};
}

// Deterministic shuffled partition; fraction is the training share.
inline std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> split_train_val(
    std::int64_t size, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0) throw DataError("split fraction must be in (0,1)");
  std::vector<std::int64_t> indices(static_cast<std::size_t>(size));
  for (std::int64_t i = 0; i < size; ++i) indices[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(indices);
  const std::int64_t n_train = static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(size)));
  if (n_train < 1 || n_train >= size) throw DataError("split leaves one side empty");
  std::vector<std::int64_t> train(indices.begin(), indices.begin() + n_train);
  std::vector<std::int64_t> val(indices.begin() + n_train, indices.end());
  return {std::move(train), std::move(val)};
}

// Class templates for the synthetic task: oriented sinusoid per class, phase
// shifted per channel. Distinct classes use distinct frequency/orientation, so
// a nearest-template classifier separates them perfectly at zero noise.
template <class T>
std::vector<T> synthetic_template(int classes, int class_id, std::int64_t hw) {
  std::vector<T> out(static_cast<std::size_t>(3 * hw * hw));
  const double theta = 3.141592653589793 * static_cast<double>(class_id) / classes;
  const double freq = 1.0 + class_id;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  for (std::int64_t c = 0; c < 3; ++c) {
    const double phase = static_cast<double>(c) * 3.141592653589793 / 3.0;
    for (std::int64_t y = 0; y < hw; ++y) {
      for (std::int64_t x = 0; x < hw; ++x) {
        const double u = (cos_t * x + sin_t * y) / static_cast<double>(hw);
        out[static_cast<std::size_t>((c * hw + y) * hw + x)] =
            static_cast<T>(0.5 + 0.35 * std::sin(2.0 * 3.141592653589793 * freq * u + phase));
      }
    }
  }
  return out;
}

// Labels are assigned round-robin, so the histogram is uniform within 1.
template <class T>
Dataset<T> synthetic_dataset(int classes, std::int64_t size, std::int64_t image_hw,
                             std::uint64_t seed, double noise = 0.05) {
  if (classes < 2) throw DataError("synthetic dataset needs at least 2 classes");
  Dataset<T> ds;
  ds.height = ds.width = image_hw;
  ds.images.resize(static_cast<std::size_t>(size * 3 * image_hw * image_hw));
  ds.labels.resize(static_cast<std::size_t>(size));
  std::vector<std::vector<T>> templates;
  templates.reserve(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) templates.push_back(synthetic_template<T>(classes, c, image_hw));
  Rng rng(seed);
  const std::int64_t plane = 3 * image_hw * image_hw;
  for (std::int64_t n = 0; n < size; ++n) {
    const int label = static_cast<int>(n % classes);
    ds.labels[static_cast<std::size_t>(n)] = label;
    const std::vector<T>& tmpl = templates[static_cast<std::size_t>(label)];
    T* dst = ds.images.data() + n * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      const double v = static_cast<double>(tmpl[static_cast<std::size_t>(i)]) + noise * rng.normal();
      dst[i] = static_cast<T>(std::clamp(v, 0.0, 1.0));
    }
  }
  return ds;
}

// Cycling minibatch source over a fixed index subset of a dataset. Training
// streams reshuffle at each epoch boundary with an epoch-derived seed and
// augment each batch; eval streams iterate in order with no randomness.
template <class T>
class BatchStream {
 public:
  BatchStream(const Dataset<T>& dataset, std::vector<std::int64_t> indices,
              std::int64_t batch_size, AugmentSpec spec, AugmentMode mode, std::uint64_t seed)
      : dataset_(&dataset),
        indices_(std::move(indices)),
        batch_size_(std::min<std::int64_t>(batch_size, static_cast<std::int64_t>(indices_.size()))),
        spec_(spec),
        mode_(mode),
        base_rng_(seed) {
    if (indices_.empty()) throw DataError("stream over an empty index set");
    if (batch_size < 1) throw DataError("batch size must be positive");
    begin_epoch();
  }

  // Training passes use full batches only (remainder dropped); eval passes
  // cover every sample, with a short final batch when needed.
  std::int64_t batches_per_epoch() const {
    const std::int64_t n = static_cast<std::int64_t>(indices_.size());
    if (mode_ == AugmentMode::eval) return (n + batch_size_ - 1) / batch_size_;
    return std::max<std::int64_t>(1, n / batch_size_);
  }

  ImageBatch<T> next() {
    const std::int64_t n = static_cast<std::int64_t>(order_.size());
    const std::int64_t want = mode_ == AugmentMode::eval ? 1 : batch_size_;
    if (cursor_ + want > n) {
      ++epoch_;
      begin_epoch();
    }
    const std::int64_t take =
        mode_ == AugmentMode::eval ? std::min(batch_size_, n - cursor_) : batch_size_;
    ImageBatch<T> raw;
    raw.images = Tensor<T>(Shape{take, 3, dataset_->height, dataset_->width});
    raw.labels.resize(static_cast<std::size_t>(take));
    const std::int64_t plane = 3 * dataset_->height * dataset_->width;
    for (std::int64_t i = 0; i < take; ++i) {
      const std::int64_t idx = order_[static_cast<std::size_t>(cursor_ + i)];
      std::copy_n(dataset_->image(idx), plane, raw.images.data().data() + i * plane);
      raw.labels[static_cast<std::size_t>(i)] = dataset_->labels[static_cast<std::size_t>(idx)];
    }
    cursor_ += take;
    return augment(raw, spec_, epoch_rng_, mode_);
  }

  const std::vector<std::int64_t>& indices() const { return indices_; }

 private:
  void begin_epoch() {
    order_ = indices_;
    epoch_rng_ = base_rng_.derive(static_cast<std::uint64_t>(epoch_));
    if (mode_ == AugmentMode::train) epoch_rng_.shuffle(order_);
    cursor_ = 0;
  }

  const Dataset<T>* dataset_;
  std::vector<std::int64_t> indices_;
  std::int64_t batch_size_;
  AugmentSpec spec_;
  AugmentMode mode_;
  Rng base_rng_;
  Rng epoch_rng_{0};
  std::vector<std::int64_t> order_;
  std::int64_t cursor_ = 0;
  std::int64_t epoch_ = 0;
};

}  // namespace scopednas
