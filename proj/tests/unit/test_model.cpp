#include <cmath>
#include <fstream>
#include <set>

#include "adaspan/analysis.hpp"
#include "adaspan/checkpoint.hpp"
#include "adaspan/model.hpp"
#include "support.hpp"

using namespace adaspan;

namespace {

ModelConfig toy(Primitive p) {
  ModelConfig c;
  c.primitive = p;
  c.input_size = 8;
  c.stem_channels = 8;
  c.num_classes = 10;
  c.heads = 2;
  c.blocks = {{8, 1}, {16, 2}};
  return c;
}

Tensor random_images(std::size_t n, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({n, 3, side, side});
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  return x;
}

}  // namespace

TEST_SUITE("model_zoo") {

TEST_CASE("channel and stride plans") {
  CHECK(channel_plan(SizeClass::Small) == std::vector<std::size_t>{32, 64, 128});
  CHECK(channel_plan(SizeClass::Medium) == std::vector<std::size_t>{32, 64, 128, 256});
  CHECK(channel_plan(SizeClass::Large) ==
        std::vector<std::size_t>{32, 64, 64, 64, 128, 128, 128, 128, 256});
  for (auto s : {SizeClass::Small, SizeClass::Medium, SizeClass::Large}) {
    CHECK(stride_plan(s).size() == channel_plan(s).size());
  }
}

TEST_CASE("build and forward") {
  for (auto p : {Primitive::Conv, Primitive::FixedAttention, Primitive::AdaptiveAttention}) {
    ModelConfig c;
    c.primitive = p;
    c.size = SizeClass::Small;
    auto m = build_model(c, 1);
    REQUIRE(m.blocks().size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(m.blocks()[i].width == channel_plan(SizeClass::Small)[i]);
      CHECK(m.blocks()[i].out_channels == 4 * m.blocks()[i].width);
    }
    auto params = m.parameters();
    REQUIRE(params.front().name == "stem.weight");
    CHECK(params.front().tensor.shape() == Shape{32, 3, 3, 3});
    NoGradGuard guard;
    const auto logits = m.forward(random_images(2, 32, 3), false);
    REQUIRE(logits.shape() == Shape{2, 100});
    for (float v : logits.data()) CHECK(std::isfinite(v));
  }

  ModelConfig large;
  large.size = SizeClass::Large;
  auto m = build_model(large, 2);
  REQUIRE(m.blocks().size() == 9);
  for (const auto& b : m.blocks()) {
    REQUIRE(b.attention.spans.numel() == 4);
    for (float z : b.attention.spans.data()) CHECK(z == 2.0f);
  }
}

TEST_CASE("parameter naming and kinds") {
  auto m = build_model(toy(Primitive::AdaptiveAttention), 3);
  std::set<std::string> names;
  for (const auto& p : m.parameters()) {
    CHECK(names.insert(p.name).second);
    const bool span = p.name.ends_with(".spans");
    const bool norm = p.name.ends_with(".gamma") || p.name.ends_with(".beta");
    CHECK((p.kind == ParamKind::Span) == span);
    CHECK((p.kind == ParamKind::Norm) == norm);
  }
  CHECK(names.count("blocks.1.spatial.rel_width") == 1);
  CHECK(names.count("blocks.1.shortcut.weight") == 1);
  CHECK(names.count("head.bias") == 1);
  for (const auto& b : m.buffers()) {
    CHECK((b.name.ends_with(".running_mean") || b.name.ends_with(".running_var")));
  }
}

TEST_CASE("learned span report") {
  ModelConfig c;
  c.size = SizeClass::Medium;
  auto m = build_model(c, 4);
  auto report = m.learned_spans();
  REQUIRE(report.size() == 4);
  for (const auto& l : report) CHECK(l.extent == 9);
  CHECK(format_extents(report) == "9 9 9 9");

  // z + R ceils to 3, 3, 2, 2.
  m.set_spans(0, {0.5, 0.1, 0.9, 0.3});
  m.set_spans(1, {0.2, 0.7, 0.0, 0.6});
  m.set_spans(2, {0.0, 0.0, 0.0, 0.0});
  m.set_spans(3, {0.0, 0.0, 0.0, 0.0});
  report = m.learned_spans();
  CHECK(format_extents(report) == "7 7 5 5");
  CHECK(report[1].max_size == 3);
  CHECK(report[1].spans[1] == doctest::Approx(0.7));

  ModelConfig one = toy(Primitive::AdaptiveAttention);
  one.blocks = {{8, 1}};
  CHECK(build_model(one, 5).learned_spans().size() == 1);

  auto conv = build_model(toy(Primitive::Conv), 5);
  CHECK_ERROR(conv.learned_spans(), ErrorCode::NotAdaptiveModel);
  CHECK_ERROR(conv.set_spans(0, {1.0}), ErrorCode::NotAdaptiveModel);
}

TEST_CASE("span projection keeps z inside the feature map") {
  auto m = build_model(toy(Primitive::AdaptiveAttention), 6);
  m.set_spans(0, {-1.0, 50.0});
  m.project_spans();
  const auto r = m.learned_spans();
  CHECK(r[0].spans[0] == 0.0);
  CHECK(r[0].spans[1] == 8.0);
}

TEST_CASE("invalid plans") {
  auto c = toy(Primitive::FixedAttention);
  c.blocks = {{6, 1}};  // 6 / 2 heads = 3, odd head dim
  CHECK_ERROR(c.validate(), ErrorCode::InvalidChannelPlan);
  c.blocks = {{8, 3}};
  CHECK_ERROR(c.validate(), ErrorCode::InvalidChannelPlan);
  c.blocks = {{0, 1}};
  CHECK_ERROR(c.validate(), ErrorCode::InvalidChannelPlan);
  c.blocks = {{8, 2}, {8, 2}, {8, 2}, {8, 2}};  // 8 -> 4 -> 2 -> 1 -> cannot halve
  CHECK_ERROR(c.validate(), ErrorCode::InvalidChannelPlan);
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir("ckpt");
  for (auto p : {Primitive::Conv, Primitive::FixedAttention, Primitive::AdaptiveAttention}) {
    auto m = build_model(toy(p), 7);
    if (p == Primitive::AdaptiveAttention) m.set_spans(1, {1.25, 0.5});
    // Nonzero running stats.
    (void)m.forward(random_images(4, 8, 1), true);
    active_tape().clear();
    const auto path = dir.path() / std::string(to_string(p));
    save_checkpoint(path, m, 3, {{"val_acc", "0.5"}});

    CheckpointMeta meta;
    auto back = load_checkpoint<float>(path, &meta);
    CHECK(meta.epoch == 3);
    CHECK(meta.metrics.at("val_acc") == "0.5");
    CHECK(meta.config.primitive == p);
    CHECK(meta.config.blocks.size() == 2);
    auto a = m.parameters(), b = back.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].name == b[i].name);
      for (std::size_t j = 0; j < a[i].tensor.numel(); ++j) CHECK(a[i].tensor[j] == b[i].tensor[j]);
    }
    auto ab = m.buffers(), bb = back.buffers();
    REQUIRE(ab.size() == bb.size());
    for (std::size_t i = 0; i < ab.size(); ++i) {
      for (std::size_t j = 0; j < ab[i].tensor.numel(); ++j) CHECK(ab[i].tensor[j] == bb[i].tensor[j]);
    }
    NoGradGuard guard;
    const auto x = random_images(3, 8, 2);
    const auto ya = m.forward(x, false), yb = back.forward(x, false);
    for (std::size_t i = 0; i < ya.numel(); ++i) CHECK(ya[i] == yb[i]);

    CHECK(checkpoint_parameter_scalars(path) == count_params(m).total_params);
  }
}

TEST_CASE("checkpoint errors") {
  testing::TempDir dir("ckpt_err");
  CHECK_ERROR(load_checkpoint<float>(dir.path() / "missing"), ErrorCode::MissingFile);
  auto m = build_model(toy(Primitive::Conv), 8);
  save_checkpoint(dir.path() / "c", m, 1);
  std::filesystem::resize_file(dir.path() / "c" / "head.bias.f32", 8);
  CHECK_ERROR(load_checkpoint<float>(dir.path() / "c"), ErrorCode::CheckpointFormat);
  std::ofstream(dir.path() / "c" / "manifest.txt") << "format_version=99\n";
  CHECK_ERROR(load_checkpoint<float>(dir.path() / "c"), ErrorCode::CheckpointFormat);
}

TEST_CASE("config key-value round trip") {
  auto c = toy(Primitive::AdaptiveAttention);
  c.init_span = 1.75;
  c.ramp = 3;
  const auto back = model_config_from_kv(model_config_to_kv(c));
  CHECK(back.primitive == c.primitive);
  CHECK(back.ramp == 3);
  CHECK(back.init_span == 1.75);
  CHECK(back.input_size == 8);
  REQUIRE(back.blocks.size() == 2);
  CHECK(back.blocks[1].width == 16);
  CHECK(back.blocks[1].stride == 2);
}

TEST_CASE("double precision copy computes the same function") {
  auto m = build_model(toy(Primitive::AdaptiveAttention), 9);
  auto m64 = m.cast<double>();
  NoGradGuard guard;
  const auto x = random_images(2, 8, 4);
  const auto y = m.forward(x, false);
  Tensor64 x64(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  const auto y64 = m64.forward(x64, false);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(y64[i]).epsilon(1e-4));
}

}
