#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adaspan/local_attention.hpp"
#include "adaspan/ops.hpp"
#include "adaspan/rng.hpp"
#include "adaspan/tensor.hpp"

namespace adaspan {

enum class Primitive { Conv, FixedAttention, AdaptiveAttention };
enum class SizeClass { Small, Medium, Large };

std::string_view to_string(Primitive p);
std::string_view to_string(SizeClass s);
/// Accepts "conv", "fixed", "adaptive" (and the long forms).
Primitive parse_primitive(std::string_view text);
SizeClass parse_size_class(std::string_view text);

struct BlockPlan {
  std::size_t width = 0;
  std::size_t stride = 1;
};

/// Bottleneck widths per size class.
std::vector<std::size_t> channel_plan(SizeClass size);
/// Spatial stride of each block; downsampling happens after the spatial kernel.
std::vector<std::size_t> stride_plan(SizeClass size);

struct ModelConfig {
  Primitive primitive = Primitive::AdaptiveAttention;
  SizeClass size = SizeClass::Small;
  std::size_t num_classes = 100;
  std::size_t heads = 4;
  int ramp = 2;
  std::size_t fixed_extent = 5;
  std::size_t conv_extent = 3;
  double init_span = 2.0;
  std::size_t input_size = 32;
  std::size_t in_channels = 3;
  std::size_t stem_channels = 32;
  std::size_t expansion = 4;
  /// Overrides the size-class plan when non-empty (toy models in tests).
  std::vector<BlockPlan> blocks;

  std::vector<BlockPlan> resolved_blocks() const;
  bool is_attention() const { return primitive != Primitive::Conv; }
  void validate() const;
};

enum class ParamKind { Weight, Norm, Span };

template <typename T>
struct NamedParam {
  std::string name;
  BasicTensor<T> tensor;
  ParamKind kind = ParamKind::Weight;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
struct BatchNormLayer {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  RunningStats<T> stats;

  static BatchNormLayer init(std::size_t channels);
  BasicTensor<T> operator()(const BasicTensor<T>& x, bool training);
};

template <typename T>
struct ConvBn {
  BasicTensor<T> weight;  // [out x in x k x k], no bias
  BatchNormLayer<T> bn;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static ConvBn init(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                     Rng& rng);
  BasicTensor<T> operator()(const BasicTensor<T>& x, bool training);
};

template <typename T>
struct Bottleneck {
  std::size_t in_channels = 0;
  std::size_t width = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t input_size = 0;
  Primitive primitive = Primitive::Conv;

  ConvBn<T> reduce;
  // Spatial kernel: either a k x k convolution or an attention layer.
  BasicTensor<T> spatial_weight;
  AttentionLayerConfig attention_config;
  AttentionLayerParams<T> attention;
  BatchNormLayer<T> spatial_bn;
  ConvBn<T> expand;
  /// 1x1 projection when the width changes; otherwise identity (2x2 average
  /// pool when strided).
  std::optional<ConvBn<T>> shortcut;

  std::size_t output_size() const { return input_size / stride; }
  BasicTensor<T> forward(const BasicTensor<T>& x, bool training);
};

/// Per attention layer: current spans, max_size and extent = 2 max_size + 1,
/// plus the extent actually evaluated (capped at 2S-1 embedding rows).
struct LayerSpanReport {
  std::size_t block = 0;
  std::size_t input_size = 0;
  std::vector<double> spans;
  int max_size = 0;
  int extent = 0;
  std::size_t computed_extent = 0;
};

/// ResNet-style classifier: stem conv, one bottleneck per plan entry, global
/// average pool, linear head.
template <typename T>
class BasicModel {
 public:
  static BasicModel build(const ModelConfig& config, Rng& rng);

  /// x: [B x 3 x S x S] -> logits [B x num_classes].
  BasicTensor<T> forward(const BasicTensor<T>& x, bool training);

  /// Learnable tensors under their canonical paths, in a fixed order.
  std::vector<NamedParam<T>> parameters();
  /// Batch-norm running statistics (state, not parameters).
  std::vector<NamedBuffer<T>> buffers();

  const ModelConfig& config() const { return config_; }
  std::vector<Bottleneck<T>>& blocks() { return blocks_; }
  const std::vector<Bottleneck<T>>& blocks() const { return blocks_; }

  void zero_grad();
  /// Clamps every span into [0, input_size] of its layer.
  void project_spans();
  /// Raises NotAdaptiveModel unless the primitive is adaptive attention.
  std::vector<LayerSpanReport> learned_spans() const;
  /// Sets the spans of block `block` (all heads) to `values`.
  void set_spans(std::size_t block, const std::vector<double>& values);

  /// Copy with every parameter and buffer converted to scalar type U.
  template <typename U>
  BasicModel<U> cast() const;

 private:
  template <typename>
  friend class BasicModel;

  ModelConfig config_;
  ConvBn<T> stem_;
  std::vector<Bottleneck<T>> blocks_;
  BasicTensor<T> head_weight_;  // [features x classes]
  BasicTensor<T> head_bias_;
};

using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

/// build_model.
template <typename T = float>
BasicModel<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return BasicModel<T>::build(config, rng);
}

/// "7 7 5 5" style line of extents.
std::string format_extents(const std::vector<LayerSpanReport>& report);

}  // namespace adaspan
