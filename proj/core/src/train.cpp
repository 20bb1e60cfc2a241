#include "adaspan/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "adaspan/checkpoint.hpp"
#include "adaspan/ops.hpp"
#include "adaspan/optim.hpp"

namespace adaspan {

namespace fs = std::filesystem;

TrainConfig TrainConfig::defaults_for(Primitive primitive) {
  TrainConfig c;
  if (primitive == Primitive::Conv) {
    c.lr0 = 0.2;
    c.weight_decay = 1e-4;
  } else {
    c.lr0 = 0.05;
    c.weight_decay = 5e-4;
  }
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 0");
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
  if (!(lr0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "lr0 must be positive");
  if (weight_decay < 0.0 || momentum < 0.0 || span_l1 < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "momentum, weight decay and span_l1 must be >= 0");
  }
  if (warmup_epochs < 0 || (epochs > 0 && warmup_epochs >= epochs)) {
    throw Error(ErrorCode::InvalidArgument, "warmup epochs (" + std::to_string(warmup_epochs) +
                                                ") must be below epochs (" +
                                                std::to_string(epochs) + ")");
  }
}

std::string spans_json(const std::vector<std::vector<double>>& spans) {
  std::ostringstream os;
  os.precision(9);
  os << '[';
  for (std::size_t l = 0; l < spans.size(); ++l) {
    if (l) os << ',';
    os << '[';
    for (std::size_t h = 0; h < spans[l].size(); ++h) {
      if (h) os << ',';
      os << spans[l][h];
    }
    os << ']';
  }
  os << ']';
  return os.str();
}

std::string metrics_csv_row(const EpochMetrics& m) {
  std::ostringstream os;
  os.precision(9);
  // spans_json contains commas, so it is quoted.
  os << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ',' << m.val_loss << ','
     << m.val_acc << ',' << m.lr << ',' << m.seconds << ",\"" << spans_json(m.spans) << '"';
  return os.str();
}

void write_metrics_csv(const fs::path& file, const RunMetrics& metrics) {
  std::ofstream out(file);
  out << kMetricsCsvHeader << '\n';
  for (const auto& m : metrics.epochs) out << metrics_csv_row(m) << '\n';
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + file.string());
}

void check_finite_loss(double loss, int epoch, std::size_t step) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite loss " << loss << " at epoch " << epoch << ", step " << step;
    throw Error(ErrorCode::NonFiniteLoss, os.str());
  }
}

namespace {

template <typename T>
BasicTensor<T> as_precision(Tensor x) {
  if constexpr (std::is_same_v<T, float>) {
    return x;
  } else {
    std::vector<T> data(x.data().begin(), x.data().end());
    return BasicTensor<T>(x.shape(), std::move(data));
  }
}

template <typename T>
std::size_t count_correct(const BasicTensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t k = logits.size(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const T* row = logits.ptr() + b * k;
    const auto best = static_cast<int>(std::max_element(row, row + k) - row);
    if (best == labels[b]) ++correct;
  }
  return correct;
}

template <typename T>
std::vector<std::vector<double>> span_snapshot(const BasicModel<T>& model) {
  std::vector<std::vector<double>> out;
  if (model.config().primitive != Primitive::AdaptiveAttention) return out;
  for (const auto& b : model.blocks()) {
    out.emplace_back(b.attention.spans.data().begin(), b.attention.spans.data().end());
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

template <typename T>
BasicTensor<T> span_sum(BasicModel<T>& model) {
  BasicTensor<T> total = BasicTensor<T>::scalar(T(0));
  for (auto& b : model.blocks()) {
    if (b.attention.spans.defined()) total = add(total, reshape(sum(b.attention.spans), Shape{1}));
  }
  return total;
}

template <typename T>
EvalResult evaluate(BasicModel<T>& model, const DatasetSplit& split, std::size_t batch_size) {
  NoGradGuard guard;
  EvalResult r;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> positions;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    const std::size_t end = std::min(split.size(), start + batch_size);
    positions.resize(end - start);
    for (std::size_t i = start; i < end; ++i) positions[i - start] = i;
    auto [x, labels] = split.batch(positions);
    const auto logits = model.forward(as_precision<T>(std::move(x)), false);
    loss_sum += static_cast<double>(cross_entropy(logits, labels).item()) *
                static_cast<double>(labels.size());
    correct += count_correct(logits, labels);
  }
  r.count = split.size();
  if (r.count > 0) {
    r.loss = loss_sum / static_cast<double>(r.count);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  }
  return r;
}

template <typename T>
RunMetrics train(BasicModel<T>& model, const DatasetSplit& train_split, const DatasetSplit& val_split,
                 const TrainConfig& config, const TrainHooks<T>& hooks) {
  config.validate();
  if (train_split.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty training split");
  const bool write = !config.out_dir.empty();
  // Enough to rebuild the splits and their normalization from a checkpoint.
  KeyValues run_info{{"seed", std::to_string(config.seed)},
                     {"fraction", fmt(train_split.fraction)},
                     {"val_count", std::to_string(val_split.size())}};
  for (int c = 0; c < 3; ++c) {
    run_info["norm_mean" + std::to_string(c)] = fmt(train_split.norm.mean[c]);
    run_info["norm_std" + std::to_string(c)] = fmt(train_split.norm.std[c]);
  }
  std::ofstream csv;
  if (write) {
    fs::create_directories(config.out_dir);
    save_checkpoint(config.out_dir / "initial", model, 0, run_info);
    csv.open(config.out_dir / "metrics.csv");
    csv << kMetricsCsvHeader << '\n' << std::flush;
  }

  RunMetrics metrics;
  SgdNesterov<T> optimizer(config.momentum, config.weight_decay);
  const AugmentOptions aug{config.augment};
  const bool adaptive = model.config().primitive == Primitive::AdaptiveAttention;
  double best_val = -1.0;
  bool stopped = false;
  std::vector<std::size_t> positions;

  for (int epoch = 0; epoch < config.epochs && !stopped; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_schedule(epoch, config.epochs, config.warmup_epochs, config.lr0);
    const auto order = epoch_order(train_split.size(), config.seed, static_cast<std::uint64_t>(epoch));
    Rng aug_rng = Rng::derive(config.seed, 0xA06, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, step = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      positions.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() + static_cast<std::ptrdiff_t>(end));
      auto [x, labels] = train_split.batch(positions);
      augment(x, aug_rng, aug);

      model.zero_grad();
      const auto logits = model.forward(as_precision<T>(std::move(x)), true);
      auto loss = cross_entropy(logits, labels);
      const double loss_value = static_cast<double>(loss.item());
      check_finite_loss(loss_value, epoch, step);
      if (adaptive && config.span_l1 > 0.0) {
        loss = add(loss, mul(span_sum(model), static_cast<T>(config.span_l1)));
      }
      backward(loss);
      auto params = model.parameters();
      optimizer.step(params, lr);
      model.project_spans();

      loss_sum += loss_value * static_cast<double>(labels.size());
      correct += count_correct(logits, labels);
      seen += labels.size();
      if (hooks.on_step) hooks.on_step(epoch, step, model);
      if (hooks.stop && hooks.stop->load()) {
        stopped = true;
        break;
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (val_split.size() > 0) {
      const auto v = evaluate(model, val_split);
      m.val_loss = v.loss;
      m.val_acc = v.accuracy;
    }
    m.spans = span_snapshot(model);
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.epochs.push_back(m);

    if (write) {
      csv << metrics_csv_row(m) << '\n' << std::flush;
      KeyValues snapshot = run_info;
      snapshot["train_loss"] = fmt(m.train_loss);
      snapshot["val_acc"] = fmt(m.val_acc);
      snapshot["val_loss"] = fmt(m.val_loss);
      save_checkpoint(config.out_dir / "last", model, epoch + 1, snapshot);
      if (m.val_acc > best_val) {
        best_val = m.val_acc;
        save_checkpoint(config.out_dir / "best", model, epoch + 1, snapshot);
      }
    }
  }
  return metrics;
}

template BasicTensor<float> span_sum(BasicModel<float>&);
template BasicTensor<double> span_sum(BasicModel<double>&);
template EvalResult evaluate(BasicModel<float>&, const DatasetSplit&, std::size_t);
template EvalResult evaluate(BasicModel<double>&, const DatasetSplit&, std::size_t);
template RunMetrics train(BasicModel<float>&, const DatasetSplit&, const DatasetSplit&,
                          const TrainConfig&, const TrainHooks<float>&);
template RunMetrics train(BasicModel<double>&, const DatasetSplit&, const DatasetSplit&,
                          const TrainConfig&, const TrainHooks<double>&);

}  // namespace adaspan
