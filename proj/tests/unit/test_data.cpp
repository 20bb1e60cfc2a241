#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "adaspan/data.hpp"
#include "support.hpp"

using namespace adaspan;

#ifndef ADASPAN_TEST_DATA_DIR
#define ADASPAN_TEST_DATA_DIR "synthetic_cifar"
#endif

namespace {

std::vector<int> balanced_labels(std::size_t per_class) {
  std::vector<int> labels;
  for (std::size_t i = 0; i < per_class * kNumClasses; ++i) labels.push_back(static_cast<int>(i % kNumClasses));
  Rng rng(99);
  rng.shuffle(labels);
  return labels;
}

void write_bytes(const std::filesystem::path& file, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(file, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Record layout: coarse label, fine label, 1024 R, 1024 G, 1024 B.
std::vector<std::uint8_t> record(int coarse, int fine, std::uint8_t base) {
  std::vector<std::uint8_t> r(kRecordBytes);
  r[0] = static_cast<std::uint8_t>(coarse);
  r[1] = static_cast<std::uint8_t>(fine);
  for (std::size_t i = 0; i < kImageBytes; ++i) r[2 + i] = static_cast<std::uint8_t>((base + i * 7) % 256);
  return r;
}

}  // namespace

TEST_SUITE("data_pipeline") {

TEST_CASE("hand-built two-record file") {
  testing::TempDir dir("cifar_fixture");
  auto bytes = record(3, 17, 0);
  const auto second = record(19, 99, 200);
  bytes.insert(bytes.end(), second.begin(), second.end());
  write_bytes(dir.path() / "two.bin", bytes);

  const auto raw = read_cifar_file(dir.path() / "two.bin");
  REQUIRE(raw.size() == 2);
  CHECK(raw.labels[0] == 17);
  CHECK(raw.labels[1] == 99);
  for (std::size_t i = 0; i < kImageBytes; ++i) {
    CHECK(raw.image(0)[i] == bytes[2 + i]);
    CHECK(raw.image(1)[i] == bytes[kRecordBytes + 2 + i]);
  }

  write_cifar_file(dir.path() / "copy.bin", raw);
  const auto again = read_cifar_file(dir.path() / "copy.bin");
  CHECK(again.labels == raw.labels);
  CHECK(again.pixels == raw.pixels);
}

TEST_CASE("loader errors") {
  testing::TempDir dir("cifar_bad");
  auto bytes = record(0, 1, 5);
  bytes.resize(kRecordBytes + 100, 0);
  write_bytes(dir.path() / "cut.bin", bytes);
  CHECK_ERROR(read_cifar_file(dir.path() / "cut.bin"), ErrorCode::TruncatedRecord);
  try {
    read_cifar_file(dir.path() / "cut.bin");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("byte offset 3074") != std::string::npos);
  }
  write_bytes(dir.path() / "label.bin", record(0, 100, 5));
  CHECK_ERROR(read_cifar_file(dir.path() / "label.bin"), ErrorCode::LabelOutOfRange);
  CHECK_ERROR(read_cifar_file(dir.path() / "none.bin"), ErrorCode::MissingFile);
  CHECK_ERROR(load_cifar100(dir.path()), ErrorCode::MissingFile);
}

TEST_CASE("full-size files load with standard counts") {
  const std::filesystem::path dir = ADASPAN_TEST_DATA_DIR;
  ensure_synthetic_cifar(dir);
  const auto [train, test] = load_cifar100(dir);
  CHECK(train.size() == 50000);
  CHECK(test.size() == 10000);
  std::vector<int> per_class(kNumClasses, 0);
  for (int l : train.labels) ++per_class[static_cast<std::size_t>(l)];
  for (int c : per_class) CHECK(c == 500);

  const auto [tr, val] = make_splits(train, 5000, 1.0, 0);
  CHECK(tr.size() == 45000);
  CHECK(val.size() == 5000);
}

TEST_CASE("stratified splits") {
  const auto labels = balanced_labels(500);
  const auto full = make_split_indices(labels, 5000, 1.0, 7);
  CHECK(full.train.size() == 45000);
  CHECK(full.val.size() == 5000);
  std::set<std::size_t> train_set(full.train.begin(), full.train.end()), val_set(full.val.begin(), full.val.end());
  CHECK(train_set.size() == 45000);
  for (auto v : val_set) CHECK(train_set.count(v) == 0);

  const auto tenth = make_split_indices(labels, 5000, 0.1, 7);
  CHECK(tenth.train.size() == 4500);
  std::vector<int> per_class(kNumClasses, 0);
  for (auto i : tenth.train) ++per_class[static_cast<std::size_t>(labels[i])];
  for (int c : per_class) CHECK(c == 45);
  CHECK(tenth.val == full.val);

  // Nested subsets under one seed.
  std::vector<std::size_t> previous;
  for (double f : {0.1, 0.25, 0.5, 1.0}) {
    auto idx = make_split_indices(labels, 5000, f, 7).train;
    std::sort(idx.begin(), idx.end());
    CHECK(std::includes(idx.begin(), idx.end(), previous.begin(), previous.end()));
    previous = idx;
  }

  const auto again = make_split_indices(labels, 5000, 0.1, 7);
  CHECK(again.train == tenth.train);
  CHECK(again.val == tenth.val);
  CHECK(make_split_indices(labels, 5000, 0.1, 8).train != tenth.train);

  CHECK_ERROR(make_split_indices(labels, 5000, 0.0, 7), ErrorCode::FractionOutOfRange);
  CHECK_ERROR(make_split_indices(labels, 5000, 1.5, 7), ErrorCode::FractionOutOfRange);
}

TEST_CASE("normalization and batches") {
  RawDataset raw;
  raw.labels = {1, 2};
  raw.pixels.assign(2 * kImageBytes, 0);
  const std::size_t plane = kImageSide * kImageSide;
  for (std::size_t i = 0; i < plane; ++i) {
    raw.pixels[i] = 0;                               // image 0, R
    raw.pixels[kImageBytes + i] = 255;               // image 1, R
    raw.pixels[plane + i] = 51;                      // image 0, G
    raw.pixels[kImageBytes + plane + i] = 51;        // image 1, G
    raw.pixels[2 * plane + i] = i % 2 ? 102 : 0;     // image 0, B
    raw.pixels[kImageBytes + 2 * plane + i] = 102;   // image 1, B
  }
  const std::vector<std::size_t> both{0, 1};
  const auto n = compute_normalization(raw, both);
  CHECK(n.mean[0] == doctest::Approx(0.5));
  CHECK(n.std[0] == doctest::Approx(0.5));
  CHECK(n.mean[1] == doctest::Approx(0.2));
  CHECK(n.mean[2] == doctest::Approx(0.3));
  // B is 0 on a quarter of all pixels and 0.4 elsewhere: mean 0.3, variance 0.03.
  CHECK(n.std[2] == doctest::Approx(std::sqrt(0.03)));

  const auto split = full_split(raw, n, SplitKind::Test);
  const std::vector<std::size_t> pos{1};
  const auto [x, labels] = split.batch(pos);
  REQUIRE(x.shape() == Shape{1, 3, 32, 32});
  CHECK(labels[0] == 2);
  CHECK(x[0] == doctest::Approx(1.0));  // (1 - 0.5) / 0.5
  CHECK(x[2 * plane] == doctest::Approx((0.4 - 0.3) / std::sqrt(0.03)).epsilon(1e-5));
}

TEST_CASE("augmentation") {
  Rng init(5);
  Tensor x({4, 3, 32, 32});
  for (auto& v : x.data()) v = static_cast<float>(init.normal());

  Tensor off = x.clone();
  Rng r0(1);
  augment(off, r0, {false});
  CHECK(std::equal(off.data().begin(), off.data().end(), x.data().begin()));

  Tensor twice = x.clone();
  flip_horizontal(twice);
  CHECK_FALSE(std::equal(twice.data().begin(), twice.data().end(), x.data().begin()));
  flip_horizontal(twice);
  CHECK(std::equal(twice.data().begin(), twice.data().end(), x.data().begin()));
  Tensor forced = x.clone();
  Rng rf(2);
  AugmentOptions only_flip{true, 0, 1.0};
  augment(forced, rf, only_flip);
  augment(forced, rf, only_flip);
  CHECK(std::equal(forced.data().begin(), forced.data().end(), x.data().begin()));

  Tensor a = x.clone(), b = x.clone();
  Rng ra(42), rb(42);
  augment(a, ra);
  augment(b, rb);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  // Each output image is a zero-filled shift of the input within +-4, maybe mirrored.
  const std::size_t S = 32, plane = S * S;
  for (std::size_t n = 0; n < 4; ++n) {
    bool matched = false;
    for (int flip = 0; flip < 2 && !matched; ++flip) {
      for (int dy = -4; dy <= 4 && !matched; ++dy) {
        for (int dx = -4; dx <= 4 && !matched; ++dx) {
          bool ok = true;
          for (std::size_t c = 0; c < 3 && ok; ++c) {
            for (int y = 0; y < 32 && ok; ++y) {
              for (int xx = 0; xx < 32 && ok; ++xx) {
                const int sx = flip ? 31 - (xx + dx) : xx + dx;
                const int sy = y + dy;
                const bool in = sy >= 0 && sy < 32 && xx + dx >= 0 && xx + dx < 32;
                const float want = in ? x[n * 3 * plane + c * plane + static_cast<std::size_t>(sy) * S + static_cast<std::size_t>(sx)] : 0.0f;
                ok = a[n * 3 * plane + c * plane + static_cast<std::size_t>(y) * S + static_cast<std::size_t>(xx)] == want;
              }
            }
          }
          matched = ok;
        }
      }
    }
    CHECK(matched);
  }
}

TEST_CASE("epoch order") {
  const auto a = epoch_order(1000, 3, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  CHECK(epoch_order(1000, 3, 0) == a);
  CHECK(epoch_order(1000, 3, 1) != a);
  CHECK(epoch_order(1000, 4, 0) != a);
}

TEST_CASE("synthetic data") {
  const auto a = synthetic_cifar(300, 1);
  const auto b = synthetic_cifar(300, 1);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  std::vector<int> per_class(kNumClasses, 0);
  for (int l : a.labels) ++per_class[static_cast<std::size_t>(l)];
  for (int c : per_class) CHECK(c == 3);
}

}
