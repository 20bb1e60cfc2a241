#include <cmath>

#include "adaspan/adaptive_mask.hpp"
#include "adaspan/local_attention.hpp"
#include "adaspan/ops.hpp"
#include "adaspan/verify.hpp"
#include "support.hpp"

using namespace adaspan;
using testing::random64;

namespace {

AttentionLayerConfig layer(std::size_t in, std::size_t out, std::size_t heads, std::size_t side,
                           AttentionVariant variant, std::size_t extent = 5) {
  AttentionLayerConfig c;
  c.in_channels = in;
  c.out_channels = out;
  c.heads = heads;
  c.input_size = side;
  c.variant = variant;
  c.fixed_extent = extent;
  return c;
}

}  // namespace

TEST_SUITE("local_attention") {

TEST_CASE("slice_relative_embeddings") {
  Tensor64 h({9, 2}), w({9, 2});
  for (std::size_t i = 0; i < 18; ++i) {
    h[i] = static_cast<double>(i);
    w[i] = 100.0 + static_cast<double>(i);
  }
  auto [fh, fw] = slice_relative_embeddings(h, w, 9);
  for (std::size_t i = 0; i < 18; ++i) CHECK(fh[i] == h[i]);

  auto [rh, rw] = slice_relative_embeddings(h, w, 5);
  REQUIRE(rh.shape() == Shape{5, 2});
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(rh[r * 2] == h[(r + 2) * 2]);
    CHECK(rw[r * 2 + 1] == w[(r + 2) * 2 + 1]);
  }
  // Middle row of the slice is table row 4, the zero offset.
  CHECK(rh[2 * 2] == h[4 * 2]);

  auto [oh, ow] = slice_relative_embeddings(h, w, 1);
  REQUIRE(oh.shape() == Shape{1, 2});
  CHECK(oh[0] == h[8]);
  CHECK(ow[1] == w[9]);

  CHECK_ERROR(slice_relative_embeddings(h, w, 11), ErrorCode::ExtentExceedsTable);
}

TEST_CASE("add_relative_embeddings") {
  Rng rng(4);
  const auto keys = random64({2, 9, 4}, rng);
  const auto same = add_relative_embeddings(keys, Tensor64({3, 2}), Tensor64({3, 2}));
  for (std::size_t i = 0; i < keys.numel(); ++i) CHECK(same[i] == keys[i]);

  const auto rel_h = random64({3, 2}, rng), rel_w = random64({3, 2}, rng);
  const auto k = add_relative_embeddings(Tensor64({9, 4}), rel_h, rel_w);
  // Cell (0, 2): width offset index 2 in the first half, height index 0 in the second.
  const std::size_t cell = 0 * 3 + 2;
  CHECK(k[cell * 4 + 0] == rel_w[2 * 2 + 0]);
  CHECK(k[cell * 4 + 1] == rel_w[2 * 2 + 1]);
  CHECK(k[cell * 4 + 2] == rel_h[0 * 2 + 0]);
  CHECK(k[cell * 4 + 3] == rel_h[0 * 2 + 1]);
  // Same column, different rows: equal first halves.
  for (std::size_t r = 1; r < 3; ++r) {
    CHECK(k[(r * 3 + 2) * 4 + 0] == k[cell * 4 + 0]);
    CHECK(k[(r * 3 + 2) * 4 + 1] == k[cell * 4 + 1]);
  }
  CHECK_ERROR(add_relative_embeddings(Tensor64({8, 4}), rel_h, rel_w), ErrorCode::ShapeMismatch);
}

TEST_CASE("zero queries give mask-weighted window means") {
  Rng rng(21);
  for (auto variant : {AttentionVariant::Fixed, AttentionVariant::Adaptive}) {
    auto cfg = layer(1, 2, 1, 6, variant, 5);
    auto p = AttentionLayerParams<double>::init(cfg, rng);
    for (auto& v : p.query.data()) v = 0.0;
    for (auto& v : p.key.data()) v = 0.0;
    for (auto& v : p.value.data()) v = 1.0;
    if (variant == AttentionVariant::Adaptive) p.spans[0] = 0.6;
    const std::size_t e = attention_extent(p, cfg);
    const auto mask = attention_masks(p, cfg, e);
    const auto x = random64({1, 1, 6, 6}, rng);
    NoGradGuard guard;
    const auto y = attention_forward(x, p, cfg);
    const int r = static_cast<int>(e / 2);
    double worst = 0;
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        double num = 0, den = 0;
        for (int a = -r; a <= r; ++a) {
          for (int b = -r; b <= r; ++b) {
            const double m = mask[static_cast<std::size_t>((a + r) * static_cast<int>(e) + (b + r))];
            const bool inside = i + a >= 0 && i + a < 6 && j + b >= 0 && j + b < 6;
            num += inside ? m * x[static_cast<std::size_t>((i + a) * 6 + j + b)] : 0.0;
            den += m;
          }
        }
        for (std::size_t ch = 0; ch < 2; ++ch) {
          worst = std::max(worst, std::abs(num / den - y[ch * 36 + static_cast<std::size_t>(i * 6 + j)]));
        }
      }
    }
    CHECK(worst < 1e-10);
  }

  // Constant image, saturated mask: interior pixels reproduce the constant.
  auto cfg = layer(1, 2, 1, 7, AttentionVariant::Fixed, 3);
  auto p = AttentionLayerParams<double>::init(cfg, rng);
  for (auto& v : p.query.data()) v = 0.0;
  for (auto& v : p.value.data()) v = 1.0;
  const auto y = attention_forward(Tensor64({1, 1, 7, 7}, 2.5), p, cfg);
  CHECK(y[3 * 7 + 3] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("single pixel input gives V x") {
  Rng rng(8);
  auto cfg = layer(3, 4, 2, 1, AttentionVariant::Fixed, 1);
  auto p = AttentionLayerParams<double>::init(cfg, rng);
  const auto x = random64({2, 3, 1, 1}, rng);
  for (bool naive : {false, true}) {
    const auto y = naive ? attention_forward_naive(x, p, cfg) : attention_forward(x, p, cfg);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t o = 0; o < 4; ++o) {
        double want = 0;
        for (std::size_t c = 0; c < 3; ++c) want += p.value[o * 3 + c] * x[b * 3 + c];
        CHECK(y[b * 4 + o] == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("zero values give zero output") {
  Rng rng(12);
  auto cfg = layer(3, 4, 2, 5, AttentionVariant::Adaptive);
  auto p = AttentionLayerParams<double>::init(cfg, rng);
  for (auto& v : p.value.data()) v = 0.0;
  const auto x = random64({1, 3, 5, 5}, rng);
  const auto fast = attention_forward(x, p, cfg), naive = attention_forward_naive(x, p, cfg);
  for (double v : fast.data()) CHECK(v == 0.0);
  for (double v : naive.data()) CHECK(v == 0.0);
}

TEST_CASE("vectorised output matches the naive loop") {
  Rng rng(30);
  auto cfg = layer(4, 8, 2, 8, AttentionVariant::Adaptive);
  auto p = AttentionLayerParams<double>::init(cfg, rng);
  p.spans[0] = 1.3;
  p.spans[1] = 0.4;
  const auto x = random64({2, 4, 8, 8}, rng);
  const auto fast = attention_forward(x, p, cfg);
  const auto slow = attention_forward_naive(x, p, cfg);
  REQUIRE(fast.shape() == Shape{2, 8, 8, 8});
  double worst = 0;
  for (std::size_t i = 0; i < fast.numel(); ++i) worst = std::max(worst, std::abs(fast[i] - slow[i]));
  CHECK(worst < 1e-10);

  double sweep = 0;
  for (const auto& c : oracle_cases(20, 5)) sweep = std::max(sweep, oracle_error(c));
  CHECK(sweep <= 1e-10);
}

TEST_CASE("stride two pools the output") {
  Rng rng(31);
  auto cfg = layer(2, 4, 2, 8, AttentionVariant::Fixed, 3);
  cfg.stride = 2;
  auto p = AttentionLayerParams<double>::init(cfg, rng);
  const auto x = random64({1, 2, 8, 8}, rng);
  auto dense_cfg = cfg;
  dense_cfg.stride = 1;
  const auto pooled = avg_pool2d(attention_forward(x, p, dense_cfg), 2);
  const auto y = attention_forward(x, p, cfg);
  REQUIRE(y.shape() == Shape{1, 4, 4, 4});
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(pooled[i]).epsilon(1e-12));
}

TEST_CASE("saturated adaptive layer equals the fixed layer") { CHECK(saturation_error(3) <= 1e-12); }

TEST_CASE("gradients of every parameter group") {
  const auto adaptive = check_attention_gradients(7);
  CHECK(adaptive.passed);
  CHECK(adaptive.max_rel_error <= 1e-4);
  CHECK(adaptive.params.size() == 7);
  const auto fixed = check_fixed_attention_gradients(7);
  CHECK(fixed.passed);
  CHECK(check_mask_gradients(7).passed);
}

TEST_CASE("extent, masks and span projection") {
  Rng rng(1);
  auto cfg = layer(4, 8, 2, 4, AttentionVariant::Adaptive);
  auto p = AttentionLayerParams<double>::init(cfg, rng);
  CHECK(attention_extent(p, cfg) == 7);  // 2*ceil(2+2)+1 = 9, capped at 2S-1 = 7
  p.spans[0] = 0.2;
  p.spans[1] = 0.1;
  CHECK(attention_extent(p, cfg) == 7);  // ceil(2.2) = 3
  p.spans[0] = 0.0;
  p.spans[1] = 0.0;
  CHECK(attention_extent(p, cfg) == 5);
  p.spans[0] = -0.5;
  p.spans[1] = 9.0;
  project_spans(p, cfg);
  CHECK(p.spans[0] == 0.0);
  CHECK(p.spans[1] == 4.0);

  auto fcfg = layer(4, 8, 2, 4, AttentionVariant::Fixed, 5);
  auto fp = AttentionLayerParams<double>::init(fcfg, rng);
  CHECK_FALSE(fp.spans.defined());
  const auto m = attention_masks(fp, fcfg, 5);
  REQUIRE(m.shape() == Shape{2, 25});
  for (double v : m.data()) CHECK(v == 1.0);
}

TEST_CASE("configuration errors") {
  CHECK_ERROR(layer(4, 6, 4, 8, AttentionVariant::Fixed).validate(), ErrorCode::ChannelMismatch);
  CHECK_ERROR(layer(4, 6, 2, 8, AttentionVariant::Fixed).validate(), ErrorCode::ChannelMismatch);
  CHECK_ERROR(layer(4, 8, 2, 3, AttentionVariant::Fixed, 7).validate(), ErrorCode::ExtentExceedsTable);
  CHECK_ERROR(layer(4, 8, 2, 8, AttentionVariant::Fixed, 4).validate(), ErrorCode::EvenExtent);
  auto strided = layer(4, 8, 2, 8, AttentionVariant::Fixed);
  strided.stride = 3;
  CHECK_ERROR(strided.validate(), ErrorCode::NonPositiveStride);

  Rng rng(2);
  auto cfg = layer(4, 8, 2, 8, AttentionVariant::Adaptive);
  auto p = AttentionLayerParams<double>::init(cfg, rng);
  CHECK_ERROR(attention_forward(random64({1, 3, 8, 8}, rng), p, cfg), ErrorCode::ChannelMismatch);
}

}
