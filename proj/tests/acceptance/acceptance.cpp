// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>

#include "adaspan/adaptive_mask.hpp"
#include "adaspan/analysis.hpp"
#include "adaspan/checkpoint.hpp"
#include "adaspan/data.hpp"
#include "adaspan/optim.hpp"
#include "adaspan/train.hpp"
#include "adaspan/verify.hpp"

#ifndef ADASPAN_TEST_DATA_DIR
#define ADASPAN_TEST_DATA_DIR "synthetic_cifar"
#endif

using namespace adaspan;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char timing[64];
  std::snprintf(timing, sizeof timing, " [%.2fs, budget %.0fs]", s, budget_s);
  std::ostringstream line;
  line << (o.pass ? "PASS" : "FAIL") << ' ' << id << ' ' << name << ": " << o.detail << timing;
  if (s > budget_s) line << " (over budget)";
  std::cout << line.str() << std::endl;
  if (!o.pass) ++failures;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

int cheb(int r, int s, int c) { return std::max(std::abs(r - c), std::abs(s - c)); }

Outcome mask_fidelity() {
  const auto m = create_adaptive_mask<double>(9, 2.0, 2);
  int wrong = 0;
  for (int r = 0; r < 9; ++r) {
    for (int s = 0; s < 9; ++s) {
      const int d = cheb(r, s, 4);
      const double want = d <= 2 ? 1.0 : d == 3 ? 0.5 : 0.0;
      wrong += m.values[static_cast<std::size_t>(r * 9 + s)] != want;
    }
  }
  return {wrong == 0, std::to_string(wrong) + " of 81 cells differ bitwise"};
}

Outcome kernel_arithmetic() {
  const int a = static_cast<int>(kernel_extent(std::vector<double>{2.0}, 2, 32));
  const int b = static_cast<int>(kernel_extent(std::vector<double>{40.0}, 2, 32));
  const int c = static_cast<int>(kernel_extent(std::vector<double>{0.0}, 2, 32));
  return {a == 9 && b == 65 && c == 5,
          "extents " + std::to_string(a) + ", " + std::to_string(b) + ", " + std::to_string(c) +
              " (want 9, 65, 5)"};
}

Outcome gradient_suite() {
  const auto att = check_attention_gradients(1, 1e-4);
  double tensor_worst = 0.0;
  bool tensor_ok = true;
  std::string failed;
  for (const auto& n : check_tensor_core_gradients(1, 1e-5)) {
    tensor_worst = std::max(tensor_worst, n.report.max_rel_error);
    if (!n.report.passed) {
      tensor_ok = false;
      failed += " " + n.target;
    }
  }
  std::string detail = "attention " + std::to_string(att.params.size()) + " groups max rel err " +
                       sci(att.max_rel_error) + " (tol 1e-4); tensor ops max rel err " +
                       sci(tensor_worst) + " (tol 1e-5)";
  if (!failed.empty()) detail += "; failing:" + failed;
  return {att.passed && att.max_rel_error <= 1e-4 && tensor_ok, detail};
}

Outcome oracle_equivalence() {
  double worst = 0.0;
  const auto cases = oracle_cases(20, 1);
  for (const auto& c : cases) worst = std::max(worst, oracle_error(c));
  return {cases.size() == 20 && worst <= 1e-10,
          std::to_string(cases.size()) + " configs, max abs diff " + sci(worst) + " (tol 1e-10)"};
}

Outcome saturation() {
  const double e = saturation_error(1);
  return {e <= 1e-12, "max abs diff " + sci(e) + " (tol 1e-12)"};
}

Outcome count_reproduction() {
  struct Target {
    Primitive p;
    SizeClass s;
    double params_m, flops_m;
  };
  const std::vector<Target> table{
      {Primitive::Conv, SizeClass::Small, 0.54, 107},
      {Primitive::Conv, SizeClass::Medium, 2.10, 474},
      {Primitive::Conv, SizeClass::Large, 3.09, 655},
      {Primitive::FixedAttention, SizeClass::Small, 0.42, 82.7},
      {Primitive::FixedAttention, SizeClass::Medium, 1.59, 357},
      {Primitive::FixedAttention, SizeClass::Large, 2.23, 499},
      {Primitive::AdaptiveAttention, SizeClass::Small, 0.42, 95.0},
      {Primitive::AdaptiveAttention, SizeClass::Medium, 1.60, 394},
      {Primitive::AdaptiveAttention, SizeClass::Large, 2.26, 578}};
  std::map<std::pair<Primitive, SizeClass>, CostReport> got;
  bool ok = true;
  double worst_p = 0.0, worst_f = 0.0;
  std::string misses;
  for (const auto& t : table) {
    ModelConfig c;
    c.primitive = t.p;
    c.size = t.s;
    auto m = build_model(c, 0);
    const auto r = cost_report(m);
    got[{t.p, t.s}] = r;
    const double dp = std::abs(r.total_params / 1e6 - t.params_m) / t.params_m;
    const double df = std::abs(r.total_flops / 1e6 - t.flops_m) / t.flops_m;
    worst_p = std::max(worst_p, dp);
    worst_f = std::max(worst_f, df);
    if (dp > 0.10 || df > 0.15) {
      ok = false;
      misses += " " + std::string(to_string(t.s)) + "/" + std::string(to_string(t.p));
    }
  }
  bool order = true;
  for (auto s : {SizeClass::Small, SizeClass::Medium, SizeClass::Large}) {
    const auto& conv = got[{Primitive::Conv, s}];
    const auto& fixed = got[{Primitive::FixedAttention, s}];
    const auto& adaptive = got[{Primitive::AdaptiveAttention, s}];
    order = order && fixed.total_params < conv.total_params && adaptive.total_params < conv.total_params &&
            fixed.total_flops < adaptive.total_flops && adaptive.total_flops < conv.total_flops;
  }
  std::ostringstream d;
  d.precision(3);
  d << "worst param dev " << 100 * worst_p << "% (tol 10%), worst FLOPS dev " << 100 * worst_f
    << "% (tol 15%), orderings " << (order ? "hold" : "BROKEN");
  if (!misses.empty()) d << "; out of tolerance:" << misses;
  return {ok && order, d.str()};
}

struct DataSet {
  RawDataset train, test;
};

const DataSet& dataset() {
  static const DataSet d = [] {
    const fs::path dir = ADASPAN_TEST_DATA_DIR;
    ensure_synthetic_cifar(dir);
    auto [train, test] = load_cifar100(dir);
    return DataSet{std::move(train), std::move(test)};
  }();
  return d;
}

fs::path scratch(const std::string& tag) {
  const auto p = fs::temp_directory_path() / ("adaspan_acceptance_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

fs::path g_adaptive_run;

Outcome training_signal() {
  const auto& data = dataset();
  const std::uint64_t seed = 7;
  auto [train_split, val_split] = make_splits(data.train, 5000, 0.05, seed);
  bool ok = true;
  std::ostringstream d;
  d.precision(4);
  d << train_split.size() << " train / " << val_split.size() << " val;";
  for (auto p : {Primitive::Conv, Primitive::FixedAttention, Primitive::AdaptiveAttention}) {
    ModelConfig mc;
    mc.primitive = p;
    mc.size = SizeClass::Small;
    auto model = build_model(mc, seed);
    auto tc = TrainConfig::defaults_for(p);
    tc.epochs = 3;
    tc.warmup_epochs = 1;
    tc.seed = seed;
    const bool adaptive = p == Primitive::AdaptiveAttention;
    if (adaptive) {
      g_adaptive_run = scratch("adaptive");
      tc.out_dir = g_adaptive_run;
    }

    std::vector<double> initial;
    double moved = 0.0;
    bool in_range = true;
    const auto check_spans = [&](Model& m) {
      std::size_t k = 0;
      for (const auto& l : m.learned_spans()) {
        for (double z : l.spans) {
          if (initial.size() <= k) initial.push_back(z);
          moved = std::max(moved, std::abs(z - initial[k]));
          in_range = in_range && z >= 0.0 && z <= 32.0;
          ++k;
        }
      }
    };
    TrainHooks<float> hooks;
    if (adaptive) {
      check_spans(model);
      hooks.on_step = [&](int, std::size_t, Model& m) { check_spans(m); };
    }
    const auto metrics = train(model, train_split, val_split, tc, hooks);

    bool decreasing = metrics.epochs.size() == 3;
    for (std::size_t e = 1; e < metrics.epochs.size(); ++e) {
      decreasing = decreasing && metrics.epochs[e].train_loss < metrics.epochs[e - 1].train_loss;
    }
    const double val = metrics.epochs.empty() ? 0.0 : metrics.epochs.back().val_acc;
    const bool this_ok = decreasing && val >= 0.02 && (!adaptive || (in_range && moved >= 1e-3));
    ok = ok && this_ok;
    d << ' ' << to_string(p) << " loss";
    for (const auto& e : metrics.epochs) d << ' ' << e.train_loss;
    d << " val_acc " << val;
    if (adaptive) d << " span moved " << sci(moved) << (in_range ? " in [0,32]" : " OUT OF RANGE");
    d << ';';
  }
  d << " (need strictly falling loss, val_acc >= 0.02, span move >= 1e-3)";
  return {ok, d.str()};
}

Outcome determinism() {
  const auto& data = dataset();
  auto [train_split, val_split] = make_splits(data.train, 1000, 0.02, 11);
  const auto one_epoch = [&]() {
    ModelConfig mc;
    mc.primitive = Primitive::AdaptiveAttention;
    auto model = build_model(mc, 11);
    auto tc = TrainConfig::defaults_for(mc.primitive);
    tc.epochs = 1;
    tc.warmup_epochs = 0;
    tc.seed = 11;
    return train(model, train_split, val_split, tc).epochs.at(0).train_loss;
  };
  const double a = one_epoch(), b = one_epoch();
  const bool identical = std::memcmp(&a, &b, sizeof a) == 0;

  // Reload the last checkpoint of the adaptive training run and evaluate again.
  bool round_trip = false;
  std::ostringstream d;
  d.precision(17);
  d << "epoch-1 losses " << a << " / " << b << (identical ? " (bit-identical)" : " (DIFFER)");
  if (g_adaptive_run.empty() || !fs::exists(g_adaptive_run / "last")) {
    d << "; no checkpoint from the training run";
  } else {
    CheckpointMeta meta;
    auto model = load_checkpoint<float>(g_adaptive_run / "last", &meta);
    auto [tr, val] = make_splits(data.train, std::stoul(meta.metrics.at("val_count")),
                                 std::stod(meta.metrics.at("fraction")), std::stoull(meta.metrics.at("seed")));
    const double stored = std::stod(meta.metrics.at("val_acc"));
    const double again = evaluate(model, val).accuracy;
    round_trip = again == stored;
    d << "; checkpoint val_acc " << stored << " reloaded " << again;
    fs::remove_all(g_adaptive_run);
  }
  return {identical && round_trip, d.str()};
}

Outcome schedule() {
  const double e4 = lr_schedule(4, 100, 10, 0.2), e55 = lr_schedule(55, 100, 10, 0.2);
  const double err = std::max(std::abs(e4 - 0.1), std::abs(e55 - 0.1));
  std::ostringstream d;
  d.precision(17);
  d << "epoch 4 -> " << e4 << ", epoch 55 -> " << e55 << ", max err " << sci(err) << " (tol 1e-12)";
  return {err <= 1e-12, d.str()};
}

}  // namespace

int main() {
  std::cout << "acceptance: data in " << ADASPAN_TEST_DATA_DIR << std::endl;
  criterion(1, "mask fidelity", 1, mask_fidelity);
  criterion(2, "kernel-size arithmetic", 1, kernel_arithmetic);
  criterion(3, "gradient suite", 120, gradient_suite);
  criterion(4, "oracle equivalence", 120, oracle_equivalence);
  criterion(5, "saturation equivalence", 10, saturation);
  criterion(6, "count reproduction", 30, count_reproduction);
  criterion(7, "training signal", 45 * 60, training_signal);
  criterion(8, "determinism and persistence", 10 * 60, determinism);
  criterion(9, "schedule check", 1, schedule);
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
