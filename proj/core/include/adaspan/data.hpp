#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "adaspan/rng.hpp"
#include "adaspan/tensor.hpp"

namespace adaspan {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageBytes = kImageChannels * kImageSide * kImageSide;
inline constexpr std::size_t kRecordBytes = kImageBytes + 2;
inline constexpr int kNumClasses = 100;

/// Decoded CIFAR-100 records: planar RGB bytes and fine labels.
struct RawDataset {
  std::vector<std::uint8_t> pixels;  // size() * kImageBytes
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * kImageBytes, kImageBytes};
  }
};

/// Reads one CIFAR-100 binary file ([coarse][fine][3072 pixels] records).
RawDataset read_cifar_file(const std::filesystem::path& file);
/// Writes records in the same layout; coarse labels are written as fine / 5.
void write_cifar_file(const std::filesystem::path& file, const RawDataset& data);

/// load_cifar100: `dir/train.bin` and `dir/test.bin`.
std::pair<RawDataset, RawDataset> load_cifar100(const std::filesystem::path& dir);

/// Deterministic stand-in for CIFAR-100 with the same shapes and label
/// range: each class has its own colour cast and oriented stripe pattern,
/// each image a random phase and pixel noise. Balanced labels.
RawDataset synthetic_cifar(std::size_t count, std::uint64_t seed);

/// Writes synthetic train.bin / test.bin into `dir` unless both exist.
void ensure_synthetic_cifar(const std::filesystem::path& dir, std::size_t train_count = 50000,
                            std::size_t test_count = 10000, std::uint64_t seed = 2024);

struct Normalization {
  std::array<double, 3> mean{};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

/// Per-channel statistics of x/255 over the selected images.
Normalization compute_normalization(const RawDataset& data, std::span<const std::size_t> indices);

enum class SplitKind { Train, Val, Test };

/// A view of raw records plus the normalization applied when batches are
/// materialized. Images stay as bytes until a batch is requested.
struct DatasetSplit {
  const RawDataset* source = nullptr;
  std::vector<std::size_t> indices;
  std::vector<int> labels;
  Normalization norm;
  SplitKind kind = SplitKind::Train;
  double fraction = 1.0;

  std::size_t size() const { return indices.size(); }
  /// Normalized [n x 3 x 32 x 32] images and labels for the given
  /// positions (each in 0..size()-1).
  std::pair<Tensor, std::vector<int>> batch(std::span<const std::size_t> positions) const;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Class-stratified split: val_count records (equal share per class) go to
/// validation; `fraction` of each class's remainder forms the training set.
/// Subsets for growing fractions are nested under the same seed.
SplitIndices make_split_indices(std::span<const int> labels, std::size_t val_count,
                                double fraction, std::uint64_t seed,
                                int num_classes = kNumClasses);

/// make_splits: builds train and val views; normalization comes from the
/// training view.
std::pair<DatasetSplit, DatasetSplit> make_splits(const RawDataset& train_raw,
                                                  std::size_t val_count, double fraction,
                                                  std::uint64_t seed);

/// Every record of `raw` (e.g. the test file) under a given normalization.
DatasetSplit full_split(const RawDataset& raw, const Normalization& norm, SplitKind kind);

struct AugmentOptions {
  bool enabled = true;
  std::size_t pad = 4;
  double flip_probability = 0.5;
};

/// In place on [B x 3 x 32 x 32]: zero-pad by `pad`, random crop back to
/// 32 x 32, horizontal flip with the given probability.
void augment(Tensor& batch, Rng& rng, const AugmentOptions& options = {});

/// Horizontal mirror of every image in [B x C x H x W].
void flip_horizontal(Tensor& batch);

/// Shuffled order of 0..n-1, a function of (seed, epoch) only.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

}  // namespace adaspan
