#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "adaspan/rng.hpp"
#include "adaspan/tensor.hpp"

namespace adaspan {

enum class AttentionVariant { Adaptive, Fixed };

struct AttentionLayerConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t heads = 4;
  std::size_t stride = 1;
  AttentionVariant variant = AttentionVariant::Adaptive;
  std::size_t fixed_extent = 5;
  int ramp = 2;
  /// Spatial side S of the (square) layer input.
  std::size_t input_size = 32;
  double init_span = 2.0;

  std::size_t head_dim() const { return out_channels / heads; }
  /// Rows of each relative embedding table: every offset in [-(S-1), S-1].
  std::size_t table_rows() const { return 2 * input_size - 1; }
  void validate() const;
};

/// Learnable state of one multi-head local attention layer.
///
/// `query`, `key` and `value` are [out x in]; rows [h*d_head, (h+1)*d_head)
/// form head h's projection. The two relative embedding tables are shared by
/// all heads. Width embeddings feed the first d_head/2 key dimensions, height
/// embeddings the last d_head/2. `spans` holds one z per head (adaptive only).
template <typename T>
struct AttentionLayerParams {
  BasicTensor<T> query;
  BasicTensor<T> key;
  BasicTensor<T> value;
  BasicTensor<T> rel_height;
  BasicTensor<T> rel_width;
  BasicTensor<T> spans;

  static AttentionLayerParams init(const AttentionLayerConfig& config, Rng& rng);
};

/// Neighbourhood side actually evaluated this pass. Adaptive layers use
/// kernel_extent() over the heads' spans, capped at the embedding table length
/// 2S-1 (offsets of magnitude S can never reach a pixel); fixed layers use
/// `fixed_extent`.
template <typename T>
std::size_t attention_extent(const AttentionLayerParams<T>& params,
                             const AttentionLayerConfig& config);

/// Clamps every span into [0, input_size] in place (no gradient).
template <typename T>
void project_spans(AttentionLayerParams<T>& params, const AttentionLayerConfig& config);

/// Centre `extent` rows of each table; the middle row of each slice is the
/// zero-offset embedding. Returns (rel_h, rel_w).
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> slice_relative_embeddings(
    const BasicTensor<T>& height_table, const BasicTensor<T>& width_table, std::size_t extent);

/// keys: [... x extent*extent x d_head]. Cell (r, s) gets rel_w[s] added to its
/// first d_head/2 entries and rel_h[r] to the rest.
template <typename T>
BasicTensor<T> add_relative_embeddings(const BasicTensor<T>& keys, const BasicTensor<T>& rel_h,
                                       const BasicTensor<T>& rel_w);

/// Masks the layer applies this pass, [heads x extent*extent].
template <typename T>
BasicTensor<T> attention_masks(const AttentionLayerParams<T>& params,
                               const AttentionLayerConfig& config, std::size_t extent);

/// Vectorised multi-head local attention, x: [B x Cin x S x S] ->
/// [B x Cout x S' x S']. Differentiable in x and every parameter.
template <typename T>
BasicTensor<T> attention_forward(const BasicTensor<T>& x, AttentionLayerParams<T>& params,
                                 const AttentionLayerConfig& config);

/// Literal per-pixel loop evaluation of the same layer. Correctness oracle
/// only: no gradient, O(B S^2 extent^2 Cin Cout).
template <typename T>
BasicTensor<T> attention_forward_naive(const BasicTensor<T>& x,
                                       const AttentionLayerParams<T>& params,
                                       const AttentionLayerConfig& config);

namespace detail {

/// logits[h, b*S*S + p, cell] = q_h(p) . (k_h(p + offset(cell)) + rel(cell)),
/// zero-padded keys outside the image.
template <typename T>
BasicTensor<T> local_logits(const BasicTensor<T>& q, const BasicTensor<T>& k,
                            const BasicTensor<T>& rel_h, const BasicTensor<T>& rel_w,
                            std::size_t heads, std::size_t extent);

/// y_h(p) = sum_cell weights[h, b*S*S + p, cell] v_h(p + offset(cell)).
template <typename T>
BasicTensor<T> local_weighted_sum(const BasicTensor<T>& weights, const BasicTensor<T>& v,
                                  std::size_t heads, std::size_t extent);

}  // namespace detail

}  // namespace adaspan
