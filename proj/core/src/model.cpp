#include "adaspan/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "adaspan/adaptive_mask.hpp"

namespace adaspan {

std::string_view to_string(Primitive p) {
  switch (p) {
    case Primitive::Conv: return "conv";
    case Primitive::FixedAttention: return "fixed";
    case Primitive::AdaptiveAttention: return "adaptive";
  }
  return "?";
}

std::string_view to_string(SizeClass s) {
  switch (s) {
    case SizeClass::Small: return "small";
    case SizeClass::Medium: return "medium";
    case SizeClass::Large: return "large";
  }
  return "?";
}

Primitive parse_primitive(std::string_view text) {
  if (text == "conv" || text == "convolution") return Primitive::Conv;
  if (text == "fixed" || text == "fixed_attention") return Primitive::FixedAttention;
  if (text == "adaptive" || text == "adaptive_attention") return Primitive::AdaptiveAttention;
  throw Error(ErrorCode::InvalidArgument, "unknown primitive '" + std::string(text) + "'");
}

SizeClass parse_size_class(std::string_view text) {
  if (text == "small") return SizeClass::Small;
  if (text == "medium") return SizeClass::Medium;
  if (text == "large") return SizeClass::Large;
  throw Error(ErrorCode::InvalidArgument, "unknown size class '" + std::string(text) + "'");
}

std::vector<std::size_t> channel_plan(SizeClass size) {
  switch (size) {
    case SizeClass::Small: return {32, 64, 128};
    case SizeClass::Medium: return {32, 64, 128, 256};
    case SizeClass::Large: return {32, 64, 64, 64, 128, 128, 128, 128, 256};
  }
  return {};
}

std::vector<std::size_t> stride_plan(SizeClass size) {
  switch (size) {
    case SizeClass::Small: return {2, 2, 1};
    case SizeClass::Medium: return {1, 2, 2, 1};
    case SizeClass::Large: return {1, 1, 1, 2, 2, 2, 1, 1, 1};
  }
  return {};
}

std::vector<BlockPlan> ModelConfig::resolved_blocks() const {
  if (!blocks.empty()) return blocks;
  const auto widths = channel_plan(size);
  const auto strides = stride_plan(size);
  std::vector<BlockPlan> out;
  for (std::size_t i = 0; i < widths.size(); ++i) out.push_back({widths[i], strides[i]});
  return out;
}

void ModelConfig::validate() const {
  if (num_classes == 0 || in_channels == 0 || stem_channels == 0 || expansion == 0) {
    throw Error(ErrorCode::InvalidChannelPlan, "class, stem and expansion counts must be positive");
  }
  if (conv_extent % 2 == 0) throw Error(ErrorCode::EvenKernel, "conv extent must be odd");
  std::size_t side = input_size;
  for (const auto& b : resolved_blocks()) {
    if (b.width == 0) throw Error(ErrorCode::InvalidChannelPlan, "zero-width block");
    if (b.stride != 1 && b.stride != 2) {
      throw Error(ErrorCode::InvalidChannelPlan, "block stride must be 1 or 2");
    }
    if (side % b.stride != 0 || side == 0) {
      throw Error(ErrorCode::InvalidChannelPlan, "feature map of side " + std::to_string(side) +
                                                     " cannot be downsampled");
    }
    if (is_attention() && (b.width % heads != 0 || (b.width / heads) % 2 != 0)) {
      throw Error(ErrorCode::InvalidChannelPlan,
                  "width " + std::to_string(b.width) + " does not split into " +
                      std::to_string(heads) + " even heads");
    }
    side /= b.stride;
  }
  if (resolved_blocks().empty()) throw Error(ErrorCode::InvalidChannelPlan, "no blocks");
}

template <typename T>
BatchNormLayer<T> BatchNormLayer<T>::init(std::size_t channels) {
  return {BasicTensor<T>(Shape{channels}, T(1), true), BasicTensor<T>(Shape{channels}, T(0), true),
          RunningStats<T>::init(channels)};
}

template <typename T>
BasicTensor<T> BatchNormLayer<T>::operator()(const BasicTensor<T>& x, bool training) {
  return batch_norm(x, gamma, beta, stats, training);
}

template <typename T>
ConvBn<T> ConvBn<T>::init(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          Rng& rng) {
  ConvBn c;
  c.weight = BasicTensor<T>(Shape{out, in, kernel, kernel}, T(0), true);
  const double std = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  for (auto& v : c.weight.data()) v = static_cast<T>(rng.normal() * std);
  c.bn = BatchNormLayer<T>::init(out);
  c.stride = stride;
  c.padding = (kernel - 1) / 2;
  return c;
}

template <typename T>
BasicTensor<T> ConvBn<T>::operator()(const BasicTensor<T>& x, bool training) {
  return bn(conv2d(x, weight, stride, padding), training);
}

template <typename T>
BasicTensor<T> Bottleneck<T>::forward(const BasicTensor<T>& x, bool training) {
  auto h = relu(reduce(x, training));
  if (primitive == Primitive::Conv) {
    h = conv2d(h, spatial_weight, 1, (spatial_weight.size(3) - 1) / 2);
    if (stride == 2) h = avg_pool2d(h, 2);
  } else {
    h = attention_forward(h, attention, attention_config);
  }
  h = relu(spatial_bn(h, training));
  h = expand(h, training);
  BasicTensor<T> skip = x;
  if (shortcut) {
    skip = (*shortcut)(x, training);
  } else if (stride == 2) {
    skip = avg_pool2d(x, 2);
  }
  return relu(add(h, skip));
}

template <typename T>
BasicModel<T> BasicModel<T>::build(const ModelConfig& config, Rng& rng) {
  config.validate();
  BasicModel m;
  m.config_ = config;
  m.stem_ = ConvBn<T>::init(config.in_channels, config.stem_channels, 3, 1, rng);
  std::size_t in = config.stem_channels;
  std::size_t side = config.input_size;
  for (const auto& plan : config.resolved_blocks()) {
    Bottleneck<T> b;
    b.in_channels = in;
    b.width = plan.width;
    b.out_channels = plan.width * config.expansion;
    b.stride = plan.stride;
    b.input_size = side;
    b.primitive = config.primitive;
    b.reduce = ConvBn<T>::init(in, b.width, 1, 1, rng);
    if (config.primitive == Primitive::Conv) {
      const std::size_t k = config.conv_extent;
      b.spatial_weight = BasicTensor<T>(Shape{b.width, b.width, k, k}, T(0), true);
      const double std = std::sqrt(2.0 / static_cast<double>(b.width * k * k));
      for (auto& v : b.spatial_weight.data()) v = static_cast<T>(rng.normal() * std);
    } else {
      auto& ac = b.attention_config;
      ac.in_channels = b.width;
      ac.out_channels = b.width;
      ac.heads = config.heads;
      ac.stride = plan.stride;
      ac.variant = config.primitive == Primitive::AdaptiveAttention ? AttentionVariant::Adaptive
                                                                    : AttentionVariant::Fixed;
      // Tiny maps cannot host the configured window; fall back to the widest one.
      ac.fixed_extent = std::min(config.fixed_extent, 2 * side - 1);
      ac.ramp = config.ramp;
      ac.input_size = side;
      ac.init_span = config.init_span;
      b.attention = AttentionLayerParams<T>::init(ac, rng);
    }
    b.spatial_bn = BatchNormLayer<T>::init(b.width);
    b.expand = ConvBn<T>::init(b.width, b.out_channels, 1, 1, rng);
    // Width changes get a projection; a pure stride change is pooled.
    if (in != b.out_channels) {
      b.shortcut = ConvBn<T>::init(in, b.out_channels, 1, plan.stride, rng);
    }
    in = b.out_channels;
    side /= plan.stride;
    m.blocks_.push_back(std::move(b));
  }
  m.head_weight_ = BasicTensor<T>(Shape{in, config.num_classes}, T(0), true);
  const double std = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : m.head_weight_.data()) v = static_cast<T>(rng.normal() * std);
  m.head_bias_ = BasicTensor<T>(Shape{config.num_classes}, T(0), true);
  return m;
}

template <typename T>
BasicTensor<T> BasicModel<T>::forward(const BasicTensor<T>& x, bool training) {
  if (x.dim() != 4 || x.size(1) != config_.in_channels || x.size(2) != config_.input_size ||
      x.size(3) != config_.input_size) {
    throw Error(ErrorCode::ShapeMismatch, "model expects [B x " +
                                              std::to_string(config_.in_channels) + " x " +
                                              std::to_string(config_.input_size) + " x " +
                                              std::to_string(config_.input_size) + "], got " +
                                              shape_str(x.shape()));
  }
  auto h = relu(stem_(x, training));
  for (auto& b : blocks_) h = b.forward(h, training);
  return linear(global_avg_pool(h), head_weight_, head_bias_);
}

namespace {

template <typename T>
void push_conv_bn(std::vector<NamedParam<T>>& out, const std::string& prefix, ConvBn<T>& c) {
  out.push_back({prefix + ".weight", c.weight, ParamKind::Weight});
  out.push_back({prefix + ".bn.gamma", c.bn.gamma, ParamKind::Norm});
  out.push_back({prefix + ".bn.beta", c.bn.beta, ParamKind::Norm});
}

template <typename T>
void push_stats(std::vector<NamedBuffer<T>>& out, const std::string& prefix,
                BatchNormLayer<T>& bn) {
  out.push_back({prefix + ".running_mean", bn.stats.mean});
  out.push_back({prefix + ".running_var", bn.stats.var});
}

}  // namespace

template <typename T>
std::vector<NamedParam<T>> BasicModel<T>::parameters() {
  std::vector<NamedParam<T>> out;
  push_conv_bn(out, "stem", stem_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = "blocks." + std::to_string(i);
    push_conv_bn(out, p + ".reduce", b.reduce);
    if (b.primitive == Primitive::Conv) {
      out.push_back({p + ".spatial.weight", b.spatial_weight, ParamKind::Weight});
    } else {
      out.push_back({p + ".spatial.query", b.attention.query, ParamKind::Weight});
      out.push_back({p + ".spatial.key", b.attention.key, ParamKind::Weight});
      out.push_back({p + ".spatial.value", b.attention.value, ParamKind::Weight});
      out.push_back({p + ".spatial.rel_height", b.attention.rel_height, ParamKind::Weight});
      out.push_back({p + ".spatial.rel_width", b.attention.rel_width, ParamKind::Weight});
      if (b.attention.spans.defined()) {
        out.push_back({p + ".spatial.spans", b.attention.spans, ParamKind::Span});
      }
    }
    out.push_back({p + ".spatial.bn.gamma", b.spatial_bn.gamma, ParamKind::Norm});
    out.push_back({p + ".spatial.bn.beta", b.spatial_bn.beta, ParamKind::Norm});
    push_conv_bn(out, p + ".expand", b.expand);
    if (b.shortcut) push_conv_bn(out, p + ".shortcut", *b.shortcut);
  }
  out.push_back({"head.weight", head_weight_, ParamKind::Weight});
  out.push_back({"head.bias", head_bias_, ParamKind::Weight});
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> BasicModel<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  push_stats(out, "stem.bn", stem_.bn);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = "blocks." + std::to_string(i);
    push_stats(out, p + ".reduce.bn", b.reduce.bn);
    push_stats(out, p + ".spatial.bn", b.spatial_bn);
    push_stats(out, p + ".expand.bn", b.expand.bn);
    if (b.shortcut) push_stats(out, p + ".shortcut.bn", b.shortcut->bn);
  }
  return out;
}

template <typename T>
void BasicModel<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
void BasicModel<T>::project_spans() {
  for (auto& b : blocks_) {
    if (b.primitive == Primitive::AdaptiveAttention) adaspan::project_spans(b.attention, b.attention_config);
  }
}

template <typename T>
std::vector<LayerSpanReport> BasicModel<T>::learned_spans() const {
  if (config_.primitive != Primitive::AdaptiveAttention) {
    throw Error(ErrorCode::NotAdaptiveModel,
                "model uses " + std::string(to_string(config_.primitive)) + " kernels");
  }
  std::vector<LayerSpanReport> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    LayerSpanReport r;
    r.block = i;
    r.input_size = b.input_size;
    for (T z : b.attention.spans.data()) {
      r.spans.push_back(std::clamp(static_cast<double>(z), 0.0, static_cast<double>(b.input_size)));
    }
    r.max_size = kernel_radius(r.spans, b.attention_config.ramp, b.input_size);
    r.extent = 2 * r.max_size + 1;
    r.computed_extent = attention_extent(b.attention, b.attention_config);
    out.push_back(std::move(r));
  }
  return out;
}

template <typename T>
void BasicModel<T>::set_spans(std::size_t block, const std::vector<double>& values) {
  if (config_.primitive != Primitive::AdaptiveAttention) {
    throw Error(ErrorCode::NotAdaptiveModel, "set_spans needs an adaptive model");
  }
  auto& spans = blocks_.at(block).attention.spans;
  if (values.size() != spans.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(spans.numel()) + " spans");
  }
  for (std::size_t h = 0; h < values.size(); ++h) spans[h] = static_cast<T>(values[h]);
}

namespace {

template <typename U, typename T>
BasicTensor<U> convert(const BasicTensor<T>& t) {
  if (!t.defined()) return {};
  std::vector<U> data(t.data().begin(), t.data().end());
  return BasicTensor<U>(t.shape(), std::move(data), t.requires_grad());
}

template <typename U, typename T>
BatchNormLayer<U> convert(const BatchNormLayer<T>& bn) {
  return {convert<U>(bn.gamma), convert<U>(bn.beta),
          {convert<U>(bn.stats.mean), convert<U>(bn.stats.var)}};
}

template <typename U, typename T>
ConvBn<U> convert(const ConvBn<T>& c) {
  return {convert<U>(c.weight), convert<U>(c.bn), c.stride, c.padding};
}

}  // namespace

template <typename T>
template <typename U>
BasicModel<U> BasicModel<T>::cast() const {
  BasicModel<U> m;
  m.config_ = config_;
  m.stem_ = convert<U>(stem_);
  for (const auto& b : blocks_) {
    Bottleneck<U> c;
    c.in_channels = b.in_channels;
    c.width = b.width;
    c.out_channels = b.out_channels;
    c.stride = b.stride;
    c.input_size = b.input_size;
    c.primitive = b.primitive;
    c.reduce = convert<U>(b.reduce);
    c.spatial_weight = convert<U>(b.spatial_weight);
    c.attention_config = b.attention_config;
    c.attention = {convert<U>(b.attention.query),      convert<U>(b.attention.key),
                   convert<U>(b.attention.value),      convert<U>(b.attention.rel_height),
                   convert<U>(b.attention.rel_width),  convert<U>(b.attention.spans)};
    c.spatial_bn = convert<U>(b.spatial_bn);
    c.expand = convert<U>(b.expand);
    if (b.shortcut) c.shortcut = convert<U>(*b.shortcut);
    m.blocks_.push_back(std::move(c));
  }
  m.head_weight_ = convert<U>(head_weight_);
  m.head_bias_ = convert<U>(head_bias_);
  return m;
}

std::string format_extents(const std::vector<LayerSpanReport>& report) {
  std::ostringstream os;
  for (std::size_t i = 0; i < report.size(); ++i) {
    if (i) os << ' ';
    os << report[i].extent;
  }
  return os.str();
}

template struct BatchNormLayer<float>;
template struct BatchNormLayer<double>;
template struct ConvBn<float>;
template struct ConvBn<double>;
template struct Bottleneck<float>;
template struct Bottleneck<double>;
template class BasicModel<float>;
template class BasicModel<double>;
template BasicModel<double> BasicModel<float>::cast<double>() const;
template BasicModel<float> BasicModel<double>::cast<float>() const;
template BasicModel<float> BasicModel<float>::cast<float>() const;

}  // namespace adaspan
