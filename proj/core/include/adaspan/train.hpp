#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adaspan/data.hpp"
#include "adaspan/model.hpp"

namespace adaspan {

enum class Precision { F32, F64 };

struct TrainConfig {
  int epochs = 100;
  std::size_t batch_size = 50;
  int warmup_epochs = 10;
  double momentum = 0.9;
  double lr0 = 0.05;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  Precision precision = Precision::F32;
  double span_l1 = 0.0;
  bool augment = true;
  /// Where metrics.csv and checkpoints go; empty disables file output.
  std::filesystem::path out_dir;

  /// lr0 / weight decay for a primitive: 0.2 / 1e-4 for convolution,
  /// 0.05 / 5e-4 for attention.
  static TrainConfig defaults_for(Primitive primitive);
  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  /// Per attention layer, per head z (empty for non-adaptive models).
  std::vector<std::vector<double>> spans;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  std::optional<double> test_acc;
};

inline constexpr const char* kMetricsCsvHeader =
    "epoch,train_loss,train_acc,val_loss,val_acc,lr,seconds,spans_json";

std::string spans_json(const std::vector<std::vector<double>>& spans);
std::string metrics_csv_row(const EpochMetrics& m);
void write_metrics_csv(const std::filesystem::path& file, const RunMetrics& metrics);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

/// Top-1 accuracy and mean cross-entropy in eval mode, no augmentation.
template <typename T>
EvalResult evaluate(BasicModel<T>& model, const DatasetSplit& split, std::size_t batch_size = 100);

template <typename T>
struct TrainHooks {
  /// Called after every optimizer step (and span projection).
  std::function<void(int epoch, std::size_t step, BasicModel<T>& model)> on_step;
  /// Polled between steps; when set, training stops after saving `last`.
  const std::atomic<bool>* stop = nullptr;
};

/// Runs `config.epochs` epochs. Each epoch: shuffled batches (order fixed by
/// seed and epoch), optional augmentation, cross-entropy + span_l1 * sum(z),
/// one Nesterov step per batch followed by span projection, then validation.
/// With an out_dir, writes metrics.csv row by row and checkpoints
/// `initial`, `last` and `best` (best validation accuracy).
template <typename T>
RunMetrics train(BasicModel<T>& model, const DatasetSplit& train_split, const DatasetSplit& val_split,
                 const TrainConfig& config, const TrainHooks<T>& hooks = {});

/// Raises NonFiniteLoss if `loss` is not finite (used by train()).
void check_finite_loss(double loss, int epoch, std::size_t step);

/// Sum of spans of every adaptive layer, as a differentiable scalar.
template <typename T>
BasicTensor<T> span_sum(BasicModel<T>& model);

}  // namespace adaspan
