#include <cmath>
#include <fstream>
#include <numbers>

#include "adaspan/checkpoint.hpp"
#include "adaspan/data.hpp"
#include "adaspan/ops.hpp"
#include "adaspan/optim.hpp"
#include "adaspan/train.hpp"
#include "support.hpp"

using namespace adaspan;

namespace {

ModelConfig tiny(Primitive p) {
  ModelConfig c;
  c.primitive = p;
  c.stem_channels = 8;
  c.heads = 2;
  c.num_classes = 100;
  c.blocks = {{8, 2}, {16, 2}};
  return c;
}

struct TinyData {
  RawDataset raw = synthetic_cifar(600, 11);
  DatasetSplit train, val;
  TinyData() { std::tie(train, val) = make_splits(raw, 100, 1.0, 3); }
};

TrainConfig quick(int epochs) {
  TrainConfig t = TrainConfig::defaults_for(Primitive::Conv);
  t.epochs = epochs;
  t.warmup_epochs = epochs > 1 ? 1 : 0;
  t.batch_size = 50;
  t.seed = 5;
  return t;
}

}  // namespace

TEST_SUITE("train_harness") {

TEST_CASE("learning rate schedule") {
  CHECK(std::abs(lr_schedule(4, 100, 10, 0.2) - 0.1) <= 1e-12);
  CHECK(std::abs(lr_schedule(55, 100, 10, 0.2) - 0.1) <= 1e-12);
  CHECK(lr_schedule(0, 100, 10, 0.2) == doctest::Approx(0.02));
  CHECK(lr_schedule(10, 100, 10, 0.2) == doctest::Approx(0.2));
  const double last = 0.5 * 0.2 * (1.0 + std::cos(std::numbers::pi * 89.0 / 90.0));
  CHECK(lr_schedule(99, 100, 10, 0.2) == doctest::Approx(last).epsilon(1e-12));
  CHECK(lr_schedule(99, 100, 10, 0.2) < 1e-3);
  CHECK(lr_schedule(0, 3, 0, 0.05) == doctest::Approx(0.05));
  CHECK_ERROR(lr_schedule(100, 100, 10, 0.2), ErrorCode::EpochOutOfRange);
  CHECK_ERROR(lr_schedule(-1, 100, 10, 0.2), ErrorCode::EpochOutOfRange);
}

TEST_CASE("nesterov update rule") {
  std::vector<double> p{0.0}, v{0.0};
  const std::vector<double> g{1.0};
  nesterov_update<double>(p, g, v, 1.0, 0.9, 0.0);
  CHECK(p[0] == doctest::Approx(-1.9).epsilon(1e-15));
  nesterov_update<double>(p, g, v, 1.0, 0.9, 0.0);
  CHECK(p[0] == doctest::Approx(-4.61).epsilon(1e-15));

  std::vector<double> q{2.0, -1.0}, w{0.0, 0.0};
  const std::vector<double> h{0.5, 0.25};
  nesterov_update<double>(q, h, w, 0.1, 0.0, 0.0);
  CHECK(q[0] == doctest::Approx(1.95));
  CHECK(q[1] == doctest::Approx(-1.025));

  std::vector<double> d{3.0}, dv{0.0};
  const std::vector<double> zero{0.0};
  for (int i = 0; i < 5; ++i) {
    const double before = d[0];
    nesterov_update<double>(d, zero, dv, 0.1, 0.9, 0.1);
    CHECK(std::abs(d[0]) < std::abs(before));
  }
}

TEST_CASE("optimizer exempts norms and spans from weight decay") {
  std::vector<NamedParam<double>> params{
      {"w", Tensor64({2}, 1.0, true), ParamKind::Weight},
      {"g", Tensor64({2}, 1.0, true), ParamKind::Norm},
      {"z", Tensor64({1}, 2.0, true), ParamKind::Span}};
  for (auto& p : params) p.tensor.mutable_grad();  // zero gradients
  SgdNesterov<double> opt(0.9, 0.5);
  opt.step(params, 0.1);
  CHECK(params[0].tensor[0] < 1.0);
  CHECK(params[1].tensor[0] == 1.0);
  CHECK(params[2].tensor[0] == 2.0);

  std::vector<NamedParam<double>> missing{{"w", Tensor64({2}, 1.0, true), ParamKind::Weight}};
  CHECK_ERROR(opt.step(missing, 0.1), ErrorCode::MissingGradient);
}

TEST_CASE("configuration checks") {
  auto t = quick(3);
  t.warmup_epochs = 3;
  CHECK_ERROR(t.validate(), ErrorCode::InvalidArgument);
  t = quick(3);
  t.lr0 = 0.0;
  CHECK_ERROR(t.validate(), ErrorCode::InvalidArgument);
  CHECK(TrainConfig::defaults_for(Primitive::Conv).lr0 == 0.2);
  CHECK(TrainConfig::defaults_for(Primitive::Conv).weight_decay == 1e-4);
  CHECK(TrainConfig::defaults_for(Primitive::AdaptiveAttention).lr0 == 0.05);
  CHECK(TrainConfig::defaults_for(Primitive::FixedAttention).weight_decay == 5e-4);

  CHECK_ERROR(check_finite_loss(std::nan(""), 0, 3), ErrorCode::NonFiniteLoss);
  CHECK_ERROR(check_finite_loss(INFINITY, 0, 3), ErrorCode::NonFiniteLoss);
  check_finite_loss(2.5, 0, 0);
}

TEST_CASE("zero epochs writes only the initial checkpoint") {
  TinyData data;
  testing::TempDir dir("train0");
  auto model = build_model(tiny(Primitive::Conv), 1);
  auto cfg = quick(0);
  cfg.out_dir = dir.path();
  const auto m = train(model, data.train, data.val, cfg);
  CHECK(m.epochs.empty());
  CHECK(std::filesystem::exists(dir.path() / "initial" / "manifest.txt"));
  CHECK_FALSE(std::filesystem::exists(dir.path() / "last"));
}

TEST_CASE("short run: loss falls, files and determinism") {
  TinyData data;
  testing::TempDir dir("train3");
  auto model = build_model(tiny(Primitive::Conv), 2);
  auto cfg = quick(3);
  cfg.out_dir = dir.path();
  const auto m = train(model, data.train, data.val, cfg);
  REQUIRE(m.epochs.size() == 3);
  for (std::size_t e = 1; e < 3; ++e) CHECK(m.epochs[e].train_loss < m.epochs[e - 1].train_loss);
  for (std::size_t e = 0; e < 3; ++e) CHECK(m.epochs[e].epoch == static_cast<int>(e));

  std::ifstream csv(dir.path() / "metrics.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == kMetricsCsvHeader);
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 3);
  for (const char* ck : {"initial", "last", "best"}) CHECK(std::filesystem::exists(dir.path() / ck / "manifest.txt"));

  // Reloaded best checkpoint evaluates identically.
  CheckpointMeta meta;
  auto best = load_checkpoint<float>(dir.path() / "best", &meta);
  double best_val = 0;
  for (const auto& e : m.epochs) best_val = std::max(best_val, e.val_acc);
  CHECK(evaluate(best, data.val).accuracy == best_val);
  CHECK(meta.metrics.count("norm_mean0") == 1);

  auto again = build_model(tiny(Primitive::Conv), 2);
  auto cfg1 = quick(3);
  cfg1.epochs = 1;
  cfg1.warmup_epochs = 0;
  auto first = build_model(tiny(Primitive::Conv), 2);
  const auto r1 = train(first, data.train, data.val, cfg1);
  const auto r2 = train(again, data.train, data.val, cfg1);
  CHECK(r1.epochs[0].train_loss == r2.epochs[0].train_loss);
}

TEST_CASE("span gradient reaches z") {
  TinyData data;
  auto model = build_model(tiny(Primitive::AdaptiveAttention), 3);
  auto cfg = quick(1);
  cfg.lr0 = 0.05;
  cfg.span_l1 = 0.01;
  const auto before = model.learned_spans();
  const auto m = train(model, data.train, data.val, cfg);
  const auto after = model.learned_spans();
  double moved = 0;
  for (std::size_t l = 0; l < after.size(); ++l) {
    for (std::size_t h = 0; h < after[l].spans.size(); ++h) {
      moved = std::max(moved, std::abs(after[l].spans[h] - before[l].spans[h]));
      CHECK(after[l].spans[h] >= 0.0);
      CHECK(after[l].spans[h] <= static_cast<double>(after[l].input_size));
    }
  }
  CHECK(moved >= 1e-3);
  REQUIRE(m.epochs.size() == 1);
  CHECK(m.epochs[0].spans.size() == 2);

  const auto s = span_sum(model);
  double want = 0;
  for (const auto& l : after)
    for (double z : l.spans) want += z;
  CHECK(s.item() == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("metrics formatting") {
  CHECK(spans_json({{1.5, 2}, {0.25}}) == "[[1.5,2],[0.25]]");
  EpochMetrics e;
  e.epoch = 2;
  e.spans = {{1.0}};
  const auto row = metrics_csv_row(e);
  CHECK(row.rfind("2,", 0) == 0);
  CHECK(row.find("\"[[1]]\"") != std::string::npos);
}

}
