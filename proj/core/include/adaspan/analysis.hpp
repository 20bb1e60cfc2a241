#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adaspan/model.hpp"

namespace adaspan {

/// Cost of one layer group (stem, blocks.i.reduce, blocks.i.spatial, ...).
/// FLOPS use 2 per multiply-accumulate; `other_flops` counts elementwise
/// work (batch norm, relu, residual add, pooling, softmax) at 1 per element.
struct LayerCost {
  std::string name;
  std::size_t params = 0;
  std::uint64_t mac_flops = 0;
  std::uint64_t other_flops = 0;
  /// Spatial window evaluated by an attention layer this pass (0 otherwise).
  std::size_t extent = 0;

  std::uint64_t flops() const { return mac_flops + other_flops; }
};

struct CostReport {
  std::string primitive;
  std::string size_class;
  std::size_t input_size = 0;
  std::vector<LayerCost> layers;
  std::size_t total_params = 0;
  std::uint64_t total_mac_flops = 0;
  std::uint64_t total_flops = 0;
};

/// Closed forms for a single layer.
std::size_t conv2d_params(std::size_t in, std::size_t out, std::size_t kernel, bool bias);
std::size_t linear_params(std::size_t in, std::size_t out, bool bias);
/// 2 * k^2 * in * out per output pixel.
std::uint64_t conv2d_flops(std::size_t in, std::size_t out, std::size_t kernel, std::size_t out_side);

/// count_params: exact scalar counts grouped by layer.
template <typename T>
CostReport count_params(BasicModel<T>& model);

/// count_flops for one image of the model's input size, at the current
/// attention extents.
template <typename T>
CostReport count_flops(BasicModel<T>& model);

/// Both columns in one report.
template <typename T>
CostReport cost_report(BasicModel<T>& model);

std::string cost_report_json(const CostReport& report);
std::string format_cost_table(const CostReport& report);

/// Layer-group name of a canonical parameter path, e.g.
/// "blocks.3.spatial.rel_width" -> "blocks.3.spatial".
std::string layer_of(const std::string& param_path);

struct RunRecord {
  std::string primitive;
  std::string size_class;
  double fraction = 1.0;
  std::size_t params = 0;
  std::uint64_t flops = 0;
  double accuracy = 0.0;
};

struct ScalingRuns {
  /// Accuracy against model cost (one row per primitive x size run).
  std::vector<RunRecord> size_sweep;
  /// Accuracy against training-data fraction.
  std::vector<RunRecord> fraction_sweep;
};

struct ScalingFiles {
  std::filesystem::path accuracy_vs_cost;
  std::filesystem::path accuracy_vs_fraction;
};

/// Writes accuracy_vs_cost.csv (params,flops,acc,primitive,size_class) and
/// accuracy_vs_fraction.csv (fraction,acc,primitive) into `dir`. Raises
/// MissingRun when both sweeps are empty.
ScalingFiles export_scaling_tables(const ScalingRuns& runs, const std::filesystem::path& dir);

}  // namespace adaspan
