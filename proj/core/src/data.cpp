#include "adaspan/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

namespace adaspan {

namespace fs = std::filesystem;

RawDataset read_cifar_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() % kRecordBytes != 0) {
    const std::size_t offset = bytes.size() / kRecordBytes * kRecordBytes;
    throw Error(ErrorCode::TruncatedRecord,
                file.string() + ": partial record at byte offset " + std::to_string(offset) +
                    " (" + std::to_string(bytes.size() - offset) + " of " +
                    std::to_string(kRecordBytes) + " bytes)");
  }
  const std::size_t n = bytes.size() / kRecordBytes;
  RawDataset out;
  out.labels.resize(n);
  out.pixels.resize(n * kImageBytes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kRecordBytes;
    const int fine = rec[1];
    if (fine >= kNumClasses) {
      throw Error(ErrorCode::LabelOutOfRange, file.string() + ": record " + std::to_string(i) +
                                                  " has fine label " + std::to_string(fine));
    }
    out.labels[i] = fine;
    std::copy_n(rec + 2, kImageBytes, out.pixels.data() + i * kImageBytes);
  }
  return out;
}

void write_cifar_file(const fs::path& file, const RawDataset& data) {
  std::vector<std::uint8_t> bytes(data.size() * kRecordBytes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint8_t* rec = bytes.data() + i * kRecordBytes;
    rec[0] = static_cast<std::uint8_t>(data.labels[i] / 5);
    rec[1] = static_cast<std::uint8_t>(data.labels[i]);
    std::copy_n(data.pixels.data() + i * kImageBytes, kImageBytes, rec + 2);
  }
  std::ofstream out(file, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + file.string());
}

std::pair<RawDataset, RawDataset> load_cifar100(const fs::path& dir) {
  for (const char* name : {"train.bin", "test.bin"}) {
    if (!fs::exists(dir / name)) {
      throw Error(ErrorCode::MissingFile, "expected " + (dir / name).string());
    }
  }
  return {read_cifar_file(dir / "train.bin"), read_cifar_file(dir / "test.bin")};
}

RawDataset synthetic_cifar(std::size_t count, std::uint64_t seed) {
  struct ClassStyle {
    std::array<double, 3> colour;
    double cos_t, sin_t, freq;
  };
  // Class styles depend only on the seed, so train and test files made with
  // the same seed share them.
  Rng style_rng = Rng::derive(seed, 0);
  std::vector<ClassStyle> styles(kNumClasses);
  for (auto& s : styles) {
    for (auto& c : s.colour) c = 2.0 * style_rng.uniform() - 1.0;
    const double theta = std::numbers::pi * style_rng.uniform();
    s.cos_t = std::cos(theta);
    s.sin_t = std::sin(theta);
    s.freq = 1.0 + 3.0 * style_rng.uniform();
  }
  Rng rng = Rng::derive(seed, 1, count);
  RawDataset out;
  out.labels.resize(count);
  out.pixels.resize(count * kImageBytes);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % kNumClasses);
    out.labels[i] = label;
    const auto& s = styles[static_cast<std::size_t>(label)];
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    std::uint8_t* img = out.pixels.data() + i * kImageBytes;
    for (std::size_t c = 0; c < kImageChannels; ++c) {
      for (std::size_t y = 0; y < kImageSide; ++y) {
        for (std::size_t x = 0; x < kImageSide; ++x) {
          const double t = (static_cast<double>(y) * s.cos_t + static_cast<double>(x) * s.sin_t) /
                           static_cast<double>(kImageSide);
          const double v = 128.0 + 45.0 * s.colour[c] +
                           40.0 * std::sin(2.0 * std::numbers::pi * s.freq * t + phase) +
                           30.0 * rng.normal();
          img[(c * kImageSide + y) * kImageSide + x] =
              static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
  }
  // Interleaved labels would make every batch perfectly balanced; shuffle.
  std::vector<std::size_t> perm(count);
  for (std::size_t i = 0; i < count; ++i) perm[i] = i;
  rng.shuffle(perm);
  RawDataset shuffled;
  shuffled.labels.resize(count);
  shuffled.pixels.resize(out.pixels.size());
  for (std::size_t i = 0; i < count; ++i) {
    shuffled.labels[i] = out.labels[perm[i]];
    std::copy_n(out.pixels.data() + perm[i] * kImageBytes, kImageBytes,
                shuffled.pixels.data() + i * kImageBytes);
  }
  return shuffled;
}

void ensure_synthetic_cifar(const fs::path& dir, std::size_t train_count, std::size_t test_count,
                            std::uint64_t seed) {
  const auto train = dir / "train.bin";
  const auto test = dir / "test.bin";
  if (fs::exists(train) && fs::exists(test) &&
      fs::file_size(train) == train_count * kRecordBytes &&
      fs::file_size(test) == test_count * kRecordBytes) {
    return;
  }
  fs::create_directories(dir);
  // Same seed, same class styles; the pixel noise stream differs by count.
  const auto write_atomic = [](const fs::path& file, const RawDataset& data) {
    auto tmp = file;
    tmp += ".partial";
    write_cifar_file(tmp, data);
    fs::rename(tmp, file);
  };
  write_atomic(train, synthetic_cifar(train_count, seed));
  write_atomic(test, synthetic_cifar(test_count, seed));
}

Normalization compute_normalization(const RawDataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(ErrorCode::InvalidArgument, "no images to normalize over");
  Normalization n;
  const std::size_t plane = kImageSide * kImageSide;
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    double s = 0.0, sq = 0.0;
    for (std::size_t idx : indices) {
      const std::uint8_t* p = data.pixels.data() + idx * kImageBytes + c * plane;
      std::uint64_t is = 0, isq = 0;
      for (std::size_t k = 0; k < plane; ++k) {
        is += p[k];
        isq += static_cast<std::uint64_t>(p[k]) * p[k];
      }
      s += static_cast<double>(is);
      sq += static_cast<double>(isq);
    }
    const double count = static_cast<double>(indices.size() * plane);
    const double mean = s / count / 255.0;
    const double var = sq / count / (255.0 * 255.0) - mean * mean;
    n.mean[c] = mean;
    n.std[c] = std::sqrt(std::max(var, 1e-12));
  }
  return n;
}

std::pair<Tensor, std::vector<int>> DatasetSplit::batch(std::span<const std::size_t> positions) const {
  const std::size_t n = positions.size();
  const std::size_t plane = kImageSide * kImageSide;
  Tensor images(Shape{n, kImageChannels, kImageSide, kImageSide});
  std::vector<int> out_labels(n);
  std::array<float, 256 * 3> lut{};
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    for (int v = 0; v < 256; ++v) {
      lut[c * 256 + static_cast<std::size_t>(v)] =
          static_cast<float>((v / 255.0 - norm.mean[c]) / norm.std[c]);
    }
  }
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t pos = positions[b];
    if (pos >= indices.size()) throw Error(ErrorCode::InvalidArgument, "batch position out of range");
    const std::uint8_t* src = source->pixels.data() + indices[pos] * kImageBytes;
    float* dst = images.ptr() + b * kImageBytes;
    for (std::size_t c = 0; c < kImageChannels; ++c) {
      for (std::size_t k = 0; k < plane; ++k) dst[c * plane + k] = lut[c * 256 + src[c * plane + k]];
    }
    out_labels[b] = labels[pos];
  }
  return {std::move(images), std::move(out_labels)};
}

SplitIndices make_split_indices(std::span<const int> labels, std::size_t val_count, double fraction,
                                std::uint64_t seed, int num_classes) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::FractionOutOfRange,
                "fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(labels[i]));
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  const auto classes = static_cast<std::size_t>(num_classes);
  SplitIndices out;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& members = by_class[c];
    Rng rng = Rng::derive(seed, 0x5EED, c);
    rng.shuffle(members);
    const std::size_t val_share = val_count / classes + (c < val_count % classes ? 1 : 0);
    const std::size_t n_val = std::min(val_share, members.size());
    out.val.insert(out.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    const std::size_t rest = members.size() - n_val;
    // A prefix of the same per-class order, so larger fractions contain smaller ones.
    std::size_t take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rest)));
    if (rest > 0) take = std::clamp<std::size_t>(take, 1, rest);
    out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val),
                     members.begin() + static_cast<std::ptrdiff_t>(n_val + take));
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

namespace {

DatasetSplit make_view(const RawDataset& raw, std::vector<std::size_t> indices,
                       const Normalization& norm, SplitKind kind, double fraction) {
  DatasetSplit s;
  s.source = &raw;
  s.labels.reserve(indices.size());
  for (std::size_t i : indices) s.labels.push_back(raw.labels[i]);
  s.indices = std::move(indices);
  s.norm = norm;
  s.kind = kind;
  s.fraction = fraction;
  return s;
}

}  // namespace

std::pair<DatasetSplit, DatasetSplit> make_splits(const RawDataset& train_raw, std::size_t val_count,
                                                  double fraction, std::uint64_t seed) {
  auto idx = make_split_indices(train_raw.labels, val_count, fraction, seed);
  const auto norm = compute_normalization(train_raw, idx.train);
  auto train = make_view(train_raw, std::move(idx.train), norm, SplitKind::Train, fraction);
  auto val = make_view(train_raw, std::move(idx.val), norm, SplitKind::Val, 1.0);
  return {std::move(train), std::move(val)};
}

DatasetSplit full_split(const RawDataset& raw, const Normalization& norm, SplitKind kind) {
  std::vector<std::size_t> all(raw.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_view(raw, std::move(all), norm, kind, 1.0);
}

void flip_horizontal(Tensor& batch) {
  const std::size_t rows = batch.size(0) * batch.size(1) * batch.size(2);
  const std::size_t w = batch.size(3);
  float* p = batch.ptr();
  for (std::size_t r = 0; r < rows; ++r) std::reverse(p + r * w, p + (r + 1) * w);
}

void augment(Tensor& batch, Rng& rng, const AugmentOptions& options) {
  if (!options.enabled) return;
  if (batch.dim() != 4) throw Error(ErrorCode::ShapeMismatch, "augment expects [B x C x H x W]");
  const std::size_t n = batch.size(0), channels = batch.size(1);
  const std::size_t h = batch.size(2), w = batch.size(3);
  const std::size_t pad = options.pad;
  std::vector<float> src(channels * h * w);
  for (std::size_t b = 0; b < n; ++b) {
    float* img = batch.ptr() + b * channels * h * w;
    const auto dy = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
    const auto dx = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
    const bool flip = rng.uniform() < options.flip_probability;
    std::copy_n(img, src.size(), src.begin());
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t xo = flip ? w - 1 - x : x;
          const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
          const auto sx = static_cast<std::ptrdiff_t>(xo) + dx;
          const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                              sx < static_cast<std::ptrdiff_t>(w);
          img[(c * h + y) * w + x] =
              inside ? src[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)]
                     : 0.0f;
        }
      }
    }
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, 0xE90C, epoch);
  rng.shuffle(order);
  return order;
}

}  // namespace adaspan
