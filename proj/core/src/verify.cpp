#include "adaspan/verify.hpp"

#include <algorithm>
#include <cmath>

#include "adaspan/adaptive_mask.hpp"
#include "adaspan/ops.hpp"
#include "adaspan/rng.hpp"

namespace adaspan {

namespace {

Tensor64 random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(std::move(shape));
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Values in +-[lo, hi] with a random sign, keeping clear of zero.
Tensor64 away_from_zero(Shape shape, Rng& rng, double lo, double hi) {
  Tensor64 t(std::move(shape));
  for (auto& v : t.data()) {
    const double mag = lo + (hi - lo) * rng.uniform();
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Scalar loss sum(y * w) with a fixed random w, so every output entry gets a
// distinct upstream gradient.
Tensor64 weighted_sum(const Tensor64& y, const Tensor64& w) { return sum(mul(y, w)); }

AttentionLayerConfig small_layer(AttentionVariant variant) {
  AttentionLayerConfig c;
  c.in_channels = 2;
  c.out_channels = 4;
  c.heads = 2;
  c.stride = 1;
  c.variant = variant;
  c.fixed_extent = 5;
  c.ramp = 2;
  c.input_size = 5;
  return c;
}

GradCheckReport attention_gradients(AttentionVariant variant, std::uint64_t seed, double tolerance) {
  Rng rng(seed);
  const auto config = small_layer(variant);
  auto params = AttentionLayerParams<double>::init(config, rng);
  if (variant == AttentionVariant::Adaptive) {
    // Integer z + R - d puts a head on a kink; keep fractional parts in [0.1, 0.9].
    for (auto& z : params.spans.data()) z = std::floor(2.0 * rng.uniform()) + 0.1 + 0.8 * rng.uniform();
  }
  auto x = random_tensor({1, 2, 5, 5}, rng);
  const auto w = random_tensor({1, 4, 5, 5}, rng);
  auto f = [&]() { return weighted_sum(attention_forward(x, params, config), w); };
  std::vector<NamedTensor> named{{"x", x},
                                 {"query", params.query},
                                 {"key", params.key},
                                 {"value", params.value},
                                 {"rel_height", params.rel_height},
                                 {"rel_width", params.rel_width}};
  if (variant == AttentionVariant::Adaptive) named.push_back({"spans", params.spans});
  GradCheckOptions opt;
  opt.tolerance = tolerance;
  return grad_check(f, std::move(named), opt);
}

}  // namespace

GradCheckReport check_attention_gradients(std::uint64_t seed, double tolerance) {
  return attention_gradients(AttentionVariant::Adaptive, seed, tolerance);
}

GradCheckReport check_fixed_attention_gradients(std::uint64_t seed, double tolerance) {
  return attention_gradients(AttentionVariant::Fixed, seed, tolerance);
}

GradCheckReport check_mask_gradients(std::uint64_t seed, double tolerance) {
  Rng rng(seed);
  auto z = Tensor64::scalar(1.0 + 0.1 + 0.8 * rng.uniform());
  const auto w = random_tensor({7, 7}, rng);
  auto f = [&]() { return weighted_sum(create_adaptive_mask(7, z, 2).values, w); };
  GradCheckOptions opt;
  opt.tolerance = tolerance;
  return grad_check(f, {{"z", z}}, opt);
}

std::vector<NamedReport> check_tensor_core_gradients(std::uint64_t seed, double tolerance) {
  Rng rng(seed);
  GradCheckOptions opt;
  opt.tolerance = tolerance;
  std::vector<NamedReport> out;
  auto run = [&](const std::string& name, const std::function<Tensor64()>& f,
                 std::vector<NamedTensor> params) {
    out.push_back({name, grad_check(f, std::move(params), opt)});
  };

  {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng);
    const auto w = random_tensor({3, 4}, rng);
    run("add", [=]() { return weighted_sum(add(a, b), w); }, {{"a", a}, {"b", b}});
    run("sub", [=]() { return weighted_sum(sub(a, b), w); }, {{"a", a}, {"b", b}});
    run("mul", [=]() { return weighted_sum(mul(a, b), w); }, {{"a", a}, {"b", b}});
    auto d = random_tensor({3, 4}, rng, 0.5, 1.5);
    run("div", [=]() { return weighted_sum(div(a, d), w); }, {{"a", a}, {"d", d}});
    run("exp", [=]() { return weighted_sum(exp(a), w); }, {{"a", a}});
    auto r = away_from_zero({3, 4}, rng, 0.1, 1.0);
    run("relu", [=]() { return weighted_sum(relu(r), w); }, {{"x", r}});
    auto c = away_from_zero({3, 4}, rng, 0.1, 1.0);
    for (auto& v : c.data()) {
      if (std::abs(std::abs(v) - 0.5) < 0.05) v += 0.1;
    }
    run("clamp", [=]() { return weighted_sum(clamp(c, -0.5, 0.5), w); }, {{"x", c}});
    run("sum", [=]() { return mul(sum(a), 1.7); }, {{"a", a}});
  }
  {
    auto a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
    const auto w = random_tensor({4, 3}, rng);
    run("matmul", [=]() { return weighted_sum(matmul(a, b), w); }, {{"a", a}, {"b", b}});
    auto x = random_tensor({3, 4}, rng), lw = random_tensor({4, 5}, rng),
         bias = random_tensor({5}, rng);
    const auto lw_up = random_tensor({3, 5}, rng);
    run("linear", [=]() { return weighted_sum(linear(x, lw, bias), lw_up); },
        {{"x", x}, {"weight", lw}, {"bias", bias}});
  }
  {
    auto x = random_tensor({2, 4, 4}, rng);
    const auto w = random_tensor({18, 16}, rng);
    run("unfold", [=]() { return weighted_sum(unfold(x, 3, 1, 1), w); }, {{"x", x}});
    auto img = random_tensor({2, 3, 5, 5}, rng), kern = random_tensor({4, 3, 3, 3}, rng);
    const auto up = random_tensor({2, 4, 3, 3}, rng);
    run("conv2d", [=]() { return weighted_sum(conv2d(img, kern, 2, 1), up); },
        {{"x", img}, {"weight", kern}});
  }
  {
    auto x = random_tensor({3, 2, 3, 3}, rng);
    auto gamma = random_tensor({2}, rng, 0.5, 1.5), beta = random_tensor({2}, rng);
    const auto w = random_tensor({3, 2, 3, 3}, rng);
    run("batch_norm",
        [=]() {
          auto stats = RunningStats<double>::init(2);
          return weighted_sum(batch_norm(x, gamma, beta, stats, true), w);
        },
        {{"x", x}, {"gamma", gamma}, {"beta", beta}});
  }
  {
    auto logits = random_tensor({2, 3, 5}, rng, -2.0, 2.0);
    auto mask = random_tensor({2, 5}, rng, 0.2, 1.0);
    const auto w = random_tensor({2, 3, 5}, rng);
    run("softmax_masked", [=]() { return weighted_sum(softmax_masked(logits, mask), w); },
        {{"logits", logits}, {"mask", mask}});
  }
  {
    auto x = random_tensor({1, 2, 4, 4}, rng);
    const auto w = random_tensor({1, 2, 2, 2}, rng);
    run("avg_pool2d", [=]() { return weighted_sum(avg_pool2d(x, 2), w); }, {{"x", x}});
    auto g = random_tensor({2, 3, 3, 3}, rng);
    const auto gw = random_tensor({2, 3}, rng);
    run("global_avg_pool", [=]() { return weighted_sum(global_avg_pool(g), gw); }, {{"x", g}});
    auto logits = random_tensor({4, 6}, rng, -2.0, 2.0);
    const std::vector<int> labels{0, 3, 5, 2};
    run("cross_entropy", [=]() { return cross_entropy(logits, labels); }, {{"logits", logits}});
  }
  return out;
}

std::vector<OracleCase> oracle_cases(std::size_t count, std::uint64_t seed) {
  const std::size_t sides[] = {4, 8};
  const std::size_t head_counts[] = {1, 2, 4};
  const std::size_t extents[] = {3, 5, 9};
  std::vector<OracleCase> out;
  for (std::size_t i = 0; i < count; ++i) {
    OracleCase c;
    c.seed = seed * 1000 + i;
    c.batch = 1 + i % 2;
    auto& cfg = c.config;
    cfg.input_size = sides[i % 2];
    cfg.heads = head_counts[i % 3];
    cfg.in_channels = 2 + i % 3;
    cfg.out_channels = 2 * cfg.heads * (1 + i % 2);
    cfg.stride = (i / 3) % 2 == 0 ? 1 : 2;
    cfg.variant = (i / 2) % 2 == 0 ? AttentionVariant::Adaptive : AttentionVariant::Fixed;
    const std::size_t extent = std::min(extents[(i / 4) % 3], cfg.table_rows());
    cfg.fixed_extent = extent;
    cfg.ramp = static_cast<int>(std::min<std::size_t>(2, (extent - 1) / 2));
    out.push_back(c);
  }
  return out;
}

double oracle_error(const OracleCase& c) {
  Rng rng(c.seed);
  auto params = AttentionLayerParams<double>::init(c.config, rng);
  if (c.config.variant == AttentionVariant::Adaptive) {
    // Spans whose shared reach ceil(max z + R) is the case's radius.
    const double radius = static_cast<double>((c.config.fixed_extent - 1) / 2);
    const double z_max = std::max(0.0, radius - c.config.ramp - 0.9 * rng.uniform());
    auto spans = params.spans.data();
    for (auto& z : spans) z = z_max * rng.uniform();
    spans[rng.below(spans.size())] = z_max;
  }
  const std::size_t s = c.config.input_size;
  const auto x = random_tensor({c.batch, c.config.in_channels, s, s}, rng);
  Tensor64 fast, naive;
  {
    NoGradGuard guard;
    fast = attention_forward(x, params, c.config);
    naive = attention_forward_naive(x, params, c.config);
  }
  if (fast.shape() != naive.shape()) return INFINITY;
  double err = 0.0;
  for (std::size_t i = 0; i < fast.numel(); ++i) {
    err = std::max(err, std::abs(fast[i] - naive[i]));
  }
  return err;
}

double saturation_error(std::uint64_t seed) {
  double worst = 0.0;
  // On an S x S map the widest window is 2S - 1; z = S saturates it.
  for (std::size_t side : {3, 5}) {
    AttentionLayerConfig adaptive;
    adaptive.in_channels = 4;
    adaptive.out_channels = 4;
    adaptive.heads = 2;
    adaptive.ramp = 2;
    adaptive.input_size = side;
    adaptive.variant = AttentionVariant::Adaptive;
    AttentionLayerConfig fixed = adaptive;
    fixed.variant = AttentionVariant::Fixed;
    fixed.fixed_extent = 2 * side - 1;

    Rng rng(seed + side);
    auto ap = AttentionLayerParams<double>::init(adaptive, rng);
    for (auto& z : ap.spans.data()) z = static_cast<double>(side);
    AttentionLayerParams<double> fp = ap;
    fp.spans = Tensor64();
    const auto x = random_tensor({2, 4, side, side}, rng);
    NoGradGuard guard;
    if (attention_extent(ap, adaptive) != fixed.fixed_extent) return INFINITY;
    const auto masks = attention_masks(ap, adaptive, fixed.fixed_extent);
    for (double m : masks.data()) {
      if (m != 1.0) return INFINITY;
    }
    const auto ya = attention_forward(x, ap, adaptive);
    const auto yf = attention_forward(x, fp, fixed);
    for (std::size_t i = 0; i < ya.numel(); ++i) worst = std::max(worst, std::abs(ya[i] - yf[i]));
  }
  return worst;
}

}  // namespace adaspan
