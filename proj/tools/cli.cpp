#include "cli.hpp"

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "adaspan/analysis.hpp"
#include "adaspan/checkpoint.hpp"
#include "adaspan/data.hpp"
#include "adaspan/model.hpp"
#include "adaspan/train.hpp"
#include "adaspan/verify.hpp"

namespace adaspan::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::MissingGradient:
    case ErrorCode::StaleTape:
    case ErrorCode::NonDeterministicFunction:
    case ErrorCode::AllMaskedWithoutEpsilon:
    case ErrorCode::DegenerateBatch:
    case ErrorCode::TruncatedRecord:
    case ErrorCode::LabelOutOfRange:
    case ErrorCode::CheckpointFormat:
      return kExitRuntime;
    default:
      return kExitValidation;
  }
}

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_interrupt(int) { g_stop.store(true); }

struct InterruptScope {
  using Handler = void (*)(int);
  Handler previous;
  InterruptScope() : previous(std::signal(SIGINT, on_interrupt)) { g_stop.store(false); }
  ~InterruptScope() { std::signal(SIGINT, previous); }
};

// Model-shape flags shared by train, eval and analyze.
struct ModelFlags {
  std::string primitive = "adaptive";
  std::string size = "small";
  std::size_t heads = 4;
  int ramp = 2;
  double init_span = 2.0;
  CLI::Option* primitive_opt = nullptr;
  CLI::Option* size_opt = nullptr;
  CLI::Option* heads_opt = nullptr;
  CLI::Option* ramp_opt = nullptr;
  CLI::Option* init_span_opt = nullptr;

  void add_to(CLI::App* app) {
    primitive_opt = app->add_option("--primitive", primitive, "Spatial kernel")
                        ->check(CLI::IsMember({"conv", "fixed", "adaptive"}));
    size_opt = app->add_option("--size", size, "Model size class")
                   ->check(CLI::IsMember({"small", "medium", "large"}));
    heads_opt = app->add_option("--heads", heads, "Attention heads")->check(CLI::PositiveNumber);
    ramp_opt = app->add_option("--ramp", ramp, "Mask ramp width R")->check(CLI::NonNegativeNumber);
    init_span_opt = app->add_option("--init-span", init_span, "Initial span z")
                        ->check(CLI::NonNegativeNumber);
  }

  ModelConfig resolve() const {
    ModelConfig c;
    c.primitive = parse_primitive(primitive);
    c.size = parse_size_class(size);
    c.heads = heads;
    c.ramp = ramp;
    c.init_span = init_span;
    c.validate();
    return c;
  }
};

void conflict(const std::string& flag, const std::string& primitive) {
  throw Error(ErrorCode::ConflictingFlags, flag + " has no meaning for --primitive " + primitive);
}

void check_conflicts(const ModelFlags& m, const CLI::Option* span_l1) {
  const bool conv = m.primitive == "conv", fixed = m.primitive == "fixed";
  if (conv && m.heads_opt->count()) conflict("--heads", m.primitive);
  if ((conv || fixed) && m.ramp_opt->count()) conflict("--ramp", m.primitive);
  if ((conv || fixed) && m.init_span_opt->count()) conflict("--init-span", m.primitive);
  if (span_l1 && (conv || fixed) && span_l1->count()) conflict("--span-l1", m.primitive);
}

fs::path data_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("ADAPTIVE_ATTN_DATA"); env && *env) return env;
  throw Error(ErrorCode::MissingFile, "no data directory: pass --data or set ADAPTIVE_ATTN_DATA");
}

std::pair<RawDataset, RawDataset> load_data(const fs::path& dir, bool synthetic) {
  if (synthetic) ensure_synthetic_cifar(dir);
  return load_cifar100(dir);
}

std::string ini_quoted(const std::string& s) {
  std::ostringstream os;
  os << std::quoted(s);
  return os.str();
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// One "[section]" block that `--config FILE` accepts back.
class Snapshot {
 public:
  explicit Snapshot(std::string section) : section_(std::move(section)) {}
  Snapshot& set(const std::string& key, const std::string& value) {
    lines_.push_back(key + "=" + value);
    return *this;
  }
  void write(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream out(dir / "config.ini");
    out << "[" << section_ << "]\n";
    for (const auto& l : lines_) out << l << '\n';
  }

 private:
  std::string section_;
  std::vector<std::string> lines_;
};

void model_snapshot(Snapshot& s, const ModelFlags& m) {
  s.set("primitive", ini_quoted(m.primitive)).set("size", ini_quoted(m.size));
  if (m.primitive != "conv") s.set("heads", std::to_string(m.heads));
  if (m.primitive == "adaptive") s.set("ramp", std::to_string(m.ramp)).set("init-span", num(m.init_span));
}

// ---- train -----------------------------------------------------------------

struct TrainFlags {
  ModelFlags model;
  std::string data;
  bool synthetic = false;
  int epochs = 100;
  std::size_t batch = 50;
  int warmup = 10;
  double lr = 0.0, wd = 0.0, span_l1 = 0.0;
  double fraction = 1.0;
  std::size_t val_count = 5000;
  std::uint64_t seed = 0;
  std::string precision = "f32";
  bool no_augment = false;
  bool skip_test = false;
  std::string out = "runs/latest";
  CLI::Option *lr_opt = nullptr, *wd_opt = nullptr, *span_l1_opt = nullptr, *warmup_opt = nullptr;
};

template <typename T>
json run_training(const TrainFlags& f, const ModelConfig& mc, const TrainConfig& tc,
                  std::ostream& out) {
  const auto [train_raw, test_raw] = load_data(data_dir(f.data), f.synthetic);
  auto [train_split, val_split] = make_splits(train_raw, f.val_count, f.fraction, f.seed);
  auto model = build_model<T>(mc, f.seed);
  const auto cost = cost_report(model);
  out << "training " << to_string(mc.size) << '/' << to_string(mc.primitive) << " on "
      << train_split.size() << " images (" << val_split.size() << " val), "
      << cost.total_params << " params\n";

  InterruptScope interrupt;
  TrainHooks<T> hooks;
  hooks.stop = &g_stop;
  TrainConfig cfg = tc;
  const auto metrics = train(model, train_split, val_split, cfg, hooks);
  for (const auto& m : metrics.epochs) {
    out << "epoch " << m.epoch + 1 << "  loss " << std::fixed << std::setprecision(4)
        << m.train_loss << "  train_acc " << m.train_acc << "  val_acc " << m.val_acc << "  lr "
        << m.lr << "  " << std::setprecision(1) << m.seconds << "s\n"
        << std::defaultfloat;
  }

  json summary;
  summary["primitive"] = std::string(to_string(mc.primitive));
  summary["size_class"] = std::string(to_string(mc.size));
  summary["fraction"] = f.fraction;
  summary["seed"] = f.seed;
  summary["epochs_run"] = metrics.epochs.size();
  summary["params"] = cost.total_params;
  summary["flops"] = cost_report(model).total_flops;
  summary["interrupted"] = g_stop.load();
  if (!metrics.epochs.empty()) {
    double best = 0.0;
    for (const auto& m : metrics.epochs) best = std::max(best, m.val_acc);
    summary["final_train_loss"] = metrics.epochs.back().train_loss;
    summary["final_val_acc"] = metrics.epochs.back().val_acc;
    summary["best_val_acc"] = best;
  }
  if (mc.primitive == Primitive::AdaptiveAttention) {
    summary["extents"] = format_extents(model.learned_spans());
  }
  if (!f.skip_test && !g_stop.load()) {
    const auto test = full_split(test_raw, train_split.norm, SplitKind::Test);
    const auto r = evaluate(model, test);
    summary["test_acc"] = r.accuracy;
    out << "test_acc " << r.accuracy << '\n';
  }
  return summary;
}

int cmd_train(TrainFlags& f, std::ostream& out) {
  check_conflicts(f.model, f.span_l1_opt);
  const auto mc = f.model.resolve();
  auto tc = TrainConfig::defaults_for(mc.primitive);
  tc.epochs = f.epochs;
  tc.batch_size = f.batch;
  tc.warmup_epochs = f.warmup_opt->count() ? f.warmup : std::min(f.warmup, std::max(0, f.epochs - 1));
  if (f.lr_opt->count()) tc.lr0 = f.lr;
  if (f.wd_opt->count()) tc.weight_decay = f.wd;
  tc.span_l1 = f.span_l1;
  tc.seed = f.seed;
  tc.precision = f.precision == "f64" ? Precision::F64 : Precision::F32;
  tc.augment = !f.no_augment;
  tc.out_dir = f.out;
  tc.validate();
  if (f.fraction <= 0.0 || f.fraction > 1.0) {
    throw Error(ErrorCode::FractionOutOfRange, "--fraction must be in (0, 1]");
  }

  Snapshot snap("train");
  model_snapshot(snap, f.model);
  snap.set("data", ini_quoted(data_dir(f.data).string()));
  if (f.synthetic) snap.set("synthetic", "true");
  snap.set("epochs", std::to_string(tc.epochs))
      .set("batch", std::to_string(tc.batch_size))
      .set("warmup", std::to_string(tc.warmup_epochs))
      .set("lr", num(tc.lr0))
      .set("wd", num(tc.weight_decay));
  if (mc.primitive == Primitive::AdaptiveAttention) snap.set("span-l1", num(tc.span_l1));
  snap.set("fraction", num(f.fraction))
      .set("val-count", std::to_string(f.val_count))
      .set("seed", std::to_string(f.seed))
      .set("precision", ini_quoted(f.precision));
  if (f.no_augment) snap.set("no-augment", "true");
  if (f.skip_test) snap.set("skip-test", "true");
  snap.set("out", ini_quoted(f.out));
  snap.write(f.out);

  const auto summary = tc.precision == Precision::F64 ? run_training<double>(f, mc, tc, out)
                                                      : run_training<float>(f, mc, tc, out);
  std::ofstream(fs::path(f.out) / "summary.json") << summary.dump(2) << '\n';
  out << "wrote " << (fs::path(f.out) / "metrics.csv").string() << '\n';
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalFlags {
  ModelFlags model;
  std::string checkpoint;
  std::string split = "test";
  std::string data;
  bool synthetic = false;
  std::string precision = "f32";
  std::string out;
};

double metric(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw Error(ErrorCode::CheckpointFormat, "checkpoint lacks metric '" + key + "'");
  return std::stod(it->second);
}

void mismatch(const std::string& flag, const std::string& given, const std::string& stored) {
  throw Error(ErrorCode::ConfigMismatch,
              flag + " " + given + " disagrees with checkpoint (" + stored + ")");
}

void check_against(const ModelFlags& m, const ModelConfig& c) {
  if (m.primitive_opt->count() && parse_primitive(m.primitive) != c.primitive) {
    mismatch("--primitive", m.primitive, std::string(to_string(c.primitive)));
  }
  if (m.size_opt->count() && parse_size_class(m.size) != c.size) {
    mismatch("--size", m.size, std::string(to_string(c.size)));
  }
  if (m.heads_opt->count() && m.heads != c.heads) {
    mismatch("--heads", std::to_string(m.heads), std::to_string(c.heads));
  }
  if (m.ramp_opt->count() && m.ramp != c.ramp) {
    mismatch("--ramp", std::to_string(m.ramp), std::to_string(c.ramp));
  }
}

template <typename T>
EvalResult eval_checkpoint(const EvalFlags& f, CheckpointMeta& meta) {
  auto model = load_checkpoint<T>(f.checkpoint, &meta);
  check_against(f.model, meta.config);
  const auto [train_raw, test_raw] = load_data(data_dir(f.data), f.synthetic);
  Normalization norm;
  for (int c = 0; c < 3; ++c) {
    norm.mean[c] = metric(meta.metrics, "norm_mean" + std::to_string(c));
    norm.std[c] = metric(meta.metrics, "norm_std" + std::to_string(c));
  }
  if (f.split == "test") return evaluate(model, full_split(test_raw, norm, SplitKind::Test));
  auto [train_split, val_split] =
      make_splits(train_raw, static_cast<std::size_t>(metric(meta.metrics, "val_count")),
                  metric(meta.metrics, "fraction"),
                  static_cast<std::uint64_t>(metric(meta.metrics, "seed")));
  val_split.norm = norm;
  return evaluate(model, val_split);
}

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  CheckpointMeta meta;
  const auto r = f.precision == "f64" ? eval_checkpoint<double>(f, meta)
                                      : eval_checkpoint<float>(f, meta);
  out << f.split << " accuracy " << std::fixed << std::setprecision(4) << r.accuracy << " loss "
      << r.loss << " over " << r.count << " images\n"
      << std::defaultfloat;
  if (!f.out.empty()) {
    Snapshot snap("eval");
    snap.set("checkpoint", ini_quoted(f.checkpoint))
        .set("split", ini_quoted(f.split))
        .set("data", ini_quoted(data_dir(f.data).string()))
        .set("precision", ini_quoted(f.precision))
        .set("out", ini_quoted(f.out));
    snap.write(f.out);
    json j;
    j["checkpoint"] = f.checkpoint;
    j["split"] = f.split;
    j["accuracy"] = r.accuracy;
    j["loss"] = r.loss;
    j["count"] = r.count;
    std::ofstream(fs::path(f.out) / "eval.json") << j.dump(2) << '\n';
  }
  return kExitOk;
}

// ---- analyze ---------------------------------------------------------------

struct AnalyzeFlags {
  ModelFlags model;
  std::string checkpoint;
  bool as_json = false;
  std::string out;
};

int cmd_analyze(const AnalyzeFlags& f, std::ostream& out) {
  CostReport report;
  if (!f.checkpoint.empty()) {
    CheckpointMeta meta;
    auto model = load_checkpoint<float>(f.checkpoint, &meta);
    check_against(f.model, meta.config);
    report = cost_report(model);
  } else {
    check_conflicts(f.model, nullptr);
    auto model = build_model<float>(f.model.resolve(), 0);
    report = cost_report(model);
  }
  out << (f.as_json ? cost_report_json(report) + "\n" : format_cost_table(report));
  if (!f.out.empty()) {
    Snapshot snap("analyze");
    if (f.checkpoint.empty()) {
      model_snapshot(snap, f.model);
    } else {
      snap.set("checkpoint", ini_quoted(f.checkpoint));
    }
    if (f.as_json) snap.set("json", "true");
    snap.set("out", ini_quoted(f.out));
    snap.write(f.out);
    std::ofstream(fs::path(f.out) / "cost.json") << cost_report_json(report) << '\n';
  }
  return kExitOk;
}

// ---- spans -----------------------------------------------------------------

int cmd_spans(const std::string& checkpoint, std::ostream& out) {
  const auto model = load_checkpoint<float>(checkpoint);
  const auto layers = model.learned_spans();
  out << std::left << std::setw(7) << "block" << std::setw(6) << "size" << std::setw(8) << "extent"
      << std::setw(10) << "computed" << "spans\n";
  for (const auto& l : layers) {
    out << std::setw(7) << l.block << std::setw(6) << l.input_size << std::setw(8) << l.extent
        << std::setw(10) << l.computed_extent;
    out << std::fixed << std::setprecision(3);
    for (std::size_t h = 0; h < l.spans.size(); ++h) out << (h ? " " : "") << l.spans[h];
    out << std::defaultfloat << '\n';
  }
  out << std::right << "extents: " << format_extents(layers) << '\n';
  return kExitOk;
}

// ---- gradcheck -------------------------------------------------------------

struct GradcheckFlags {
  std::string target = "all";
  std::uint64_t seed = 1;
};

bool report_line(std::ostream& out, const std::string& name, bool pass, const std::string& what,
                 double value, double tol) {
  out << (pass ? "PASS " : "FAIL ") << std::left << std::setw(24) << name << std::right << what
      << ' ' << std::scientific << std::setprecision(3) << value << " (tol " << tol << ")\n"
      << std::defaultfloat;
  return pass;
}

int cmd_gradcheck(const GradcheckFlags& f, std::ostream& out) {
  const auto& t = f.target;
  const bool all = t == "all";
  bool ok = true;
  if (all || t == "attention") {
    const auto r = check_attention_gradients(f.seed);
    ok &= report_line(out, "attention", r.passed, "max rel err", r.max_rel_error, r.tolerance);
    const auto fr = check_fixed_attention_gradients(f.seed);
    ok &= report_line(out, "attention (fixed)", fr.passed, "max rel err", fr.max_rel_error, fr.tolerance);
  }
  if (all || t == "mask") {
    const auto r = check_mask_gradients(f.seed);
    ok &= report_line(out, "mask", r.passed, "max rel err", r.max_rel_error, r.tolerance);
  }
  if (all || t == "tensor") {
    for (const auto& n : check_tensor_core_gradients(f.seed)) {
      ok &= report_line(out, n.target, n.report.passed, "max rel err", n.report.max_rel_error,
                        n.report.tolerance);
    }
  }
  if (all || t == "oracle") {
    double worst = 0.0;
    for (const auto& c : oracle_cases(20, f.seed)) worst = std::max(worst, oracle_error(c));
    ok &= report_line(out, "oracle (20 configs)", worst <= 1e-10, "max err", worst, 1e-10);
  }
  if (all || t == "saturation") {
    const double e = saturation_error(f.seed);
    ok &= report_line(out, "saturation", e <= 1e-12, "max abs diff", e, 1e-12);
  }
  return ok ? kExitOk : kExitRuntime;
}

// ---- export-plots ----------------------------------------------------------

struct ExportFlags {
  std::vector<std::string> runs;
  std::string fraction_size = "medium";
  std::string out = "plots";
};

int cmd_export(const ExportFlags& f, std::ostream& out) {
  ScalingRuns runs;
  std::size_t found = 0;
  for (const auto& root : f.runs) {
    if (!fs::exists(root)) throw Error(ErrorCode::MissingFile, "no such run directory: " + root);
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (entry.path().filename() != "summary.json") continue;
      const auto j = json::parse(std::ifstream(entry.path()));
      if (!j.contains("test_acc") && !j.contains("best_val_acc")) continue;
      RunRecord r;
      r.primitive = j.at("primitive").get<std::string>();
      r.size_class = j.at("size_class").get<std::string>();
      r.fraction = j.at("fraction").get<double>();
      r.params = j.at("params").get<std::size_t>();
      r.flops = j.at("flops").get<std::uint64_t>();
      r.accuracy = j.contains("test_acc") ? j["test_acc"].get<double>() : j["best_val_acc"].get<double>();
      if (r.fraction == 1.0) runs.size_sweep.push_back(r);
      if (r.size_class == f.fraction_size) runs.fraction_sweep.push_back(r);
      ++found;
    }
  }
  const auto by_cost = [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.primitive, a.params) < std::tie(b.primitive, b.params);
  };
  const auto by_fraction = [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.primitive, a.fraction) < std::tie(b.primitive, b.fraction);
  };
  std::sort(runs.size_sweep.begin(), runs.size_sweep.end(), by_cost);
  std::sort(runs.fraction_sweep.begin(), runs.fraction_sweep.end(), by_fraction);
  const auto files = export_scaling_tables(runs, f.out);
  Snapshot snap("export-plots");
  std::string list = "[";
  for (std::size_t i = 0; i < f.runs.size(); ++i) list += (i ? ", " : "") + ini_quoted(f.runs[i]);
  snap.set("runs", list + "]")
      .set("fraction-size", ini_quoted(f.fraction_size))
      .set("out", ini_quoted(f.out));
  snap.write(f.out);
  out << found << " runs -> " << files.accuracy_vs_cost.string() << ", "
      << files.accuracy_vs_fraction.string() << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Local self-attention with learnable span: training, evaluation and analysis",
               "adaspan");
  app.set_config("--config", "", "Read flags from a config file (as written to config.ini)");
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write metrics and checkpoints");
  tf.model.add_to(train_cmd);
  train_cmd->add_option("--data", tf.data, "CIFAR-100 binary directory (env ADAPTIVE_ATTN_DATA)");
  train_cmd->add_flag("--synthetic", tf.synthetic, "Generate synthetic CIFAR-shaped data in --data if missing");
  train_cmd->add_option("--epochs", tf.epochs, "Epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", tf.batch, "Batch size")->check(CLI::PositiveNumber);
  tf.warmup_opt = train_cmd->add_option("--warmup", tf.warmup, "Linear warmup epochs")
                      ->check(CLI::NonNegativeNumber);
  tf.lr_opt = train_cmd->add_option("--lr", tf.lr, "Peak learning rate (default by primitive)");
  tf.wd_opt = train_cmd->add_option("--wd", tf.wd, "Weight decay (default by primitive)");
  tf.span_l1_opt = train_cmd->add_option("--span-l1", tf.span_l1, "L1 penalty on spans");
  train_cmd->add_option("--fraction", tf.fraction, "Fraction of each class used for training");
  train_cmd->add_option("--val-count", tf.val_count, "Held-out validation images");
  train_cmd->add_option("--seed", tf.seed, "Seed");
  train_cmd->add_option("--precision", tf.precision, "Scalar type")->check(CLI::IsMember({"f32", "f64"}));
  train_cmd->add_flag("--no-augment", tf.no_augment, "Disable crop and flip augmentation");
  train_cmd->add_flag("--skip-test", tf.skip_test, "Skip the final test-set evaluation");
  train_cmd->add_option("--out", tf.out, "Output directory");

  EvalFlags ef;
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint");
  ef.model.add_to(eval_cmd);
  eval_cmd->add_option("--checkpoint", ef.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--split", ef.split, "Split")->check(CLI::IsMember({"val", "test"}));
  eval_cmd->add_option("--data", ef.data, "CIFAR-100 binary directory (env ADAPTIVE_ATTN_DATA)");
  eval_cmd->add_flag("--synthetic", ef.synthetic, "Generate synthetic data in --data if missing");
  eval_cmd->add_option("--precision", ef.precision, "Scalar type")->check(CLI::IsMember({"f32", "f64"}));
  eval_cmd->add_option("--out", ef.out, "Write eval.json and config.ini here");

  AnalyzeFlags af;
  auto* analyze_cmd = app.add_subcommand("analyze", "Parameter and FLOPS report");
  af.model.add_to(analyze_cmd);
  analyze_cmd->add_option("--checkpoint", af.checkpoint, "Report a trained checkpoint instead");
  analyze_cmd->add_flag("--json", af.as_json, "Print JSON");
  analyze_cmd->add_option("--out", af.out, "Write cost.json and config.ini here");

  std::string spans_checkpoint;
  auto* spans_cmd = app.add_subcommand("spans", "Learned spans and kernel extents of a checkpoint");
  spans_cmd->add_option("--checkpoint", spans_checkpoint, "Checkpoint directory")->required();

  GradcheckFlags gf;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference and oracle checks");
  grad_cmd->add_option("--target", gf.target, "What to check")
      ->check(CLI::IsMember({"all", "attention", "mask", "tensor", "oracle", "saturation"}));
  grad_cmd->add_option("--seed", gf.seed, "Seed");

  ExportFlags xf;
  auto* export_cmd = app.add_subcommand("export-plots", "Collect run summaries into plot CSVs");
  export_cmd->add_option("--runs", xf.runs, "Run directories to scan for summary.json")->required();
  export_cmd->add_option("--fraction-size", xf.fraction_size, "Size class of the data-fraction sweep")
      ->check(CLI::IsMember({"small", "medium", "large"}));
  export_cmd->add_option("--out", xf.out, "Output directory");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ExtrasError& e) {
    err << "error [" << to_string(ErrorCode::UnknownFlag) << "]: " << e.what() << '\n';
    return kExitValidation;
  } catch (const CLI::ParseError& e) {
    err << "error [" << to_string(ErrorCode::InvalidArgument) << "]: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(tf, out);
    if (eval_cmd->parsed()) return cmd_eval(ef, out);
    if (analyze_cmd->parsed()) return cmd_analyze(af, out);
    if (spans_cmd->parsed()) return cmd_spans(spans_checkpoint, out);
    if (grad_cmd->parsed()) return cmd_gradcheck(gf, out);
    if (export_cmd->parsed()) return cmd_export(xf, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace adaspan::cli
