#include "bownet/encoder.hpp"

#include "bownet/error.hpp"

namespace bownet {

Encoder::Encoder(std::vector<int> channels, int in_channels)
    : in_channels_(in_channels), channels_(std::move(channels)) {
  if (channels_.empty()) throw ConfigError("encoder needs at least one block");
  int cin = in_channels_;
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    const int cout = channels_[i];
    if (cout <= 0) throw ConfigError("encoder channel counts must be positive");
    const std::string prefix = "block" + std::to_string(i + 1);
    weights_.emplace_back(prefix + ".w", Shape{static_cast<std::size_t>(cout), static_cast<std::size_t>(cin), 3, 3});
    biases_.emplace_back(prefix + ".b", Shape{static_cast<std::size_t>(cout)});
    cin = cout;
  }
}

void Encoder::init(Rng& rng) {
  for (auto& w : weights_) he_normal(w.value, rng);
  for (auto& b : biases_) b.value.fill(0.0f);
}

int Encoder::block_channels(int block) const {
  if (block < 1 || block > num_blocks()) throw ConfigError("block id " + std::to_string(block) + " out of range");
  return channels_[static_cast<std::size_t>(block - 1)];
}

void Encoder::check_input(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != static_cast<std::size_t>(in_channels_)) {
    throw DimensionError("encoder input " + shape_string(images.shape()));
  }
  const std::size_t div = std::size_t{1} << channels_.size();
  if (images.dim(2) % div != 0 || images.dim(3) % div != 0) {
    throw DimensionError("image size " + std::to_string(images.dim(2)) + " not divisible by " + std::to_string(div));
  }
}

namespace {

Tensor standardize_input(const Tensor& images) {
  Tensor x = images;
  for (float& v : x.values()) v = (v - Encoder::kInputMean) / Encoder::kInputStd;
  return x;
}

}  // namespace

EncoderOutput Encoder::forward(const Tensor& images, int last_block) const {
  check_input(images);
  const int stop = last_block < 0 ? num_blocks() : last_block;
  if (stop < 1 || stop > num_blocks()) throw ConfigError("block id " + std::to_string(stop) + " out of range");
  EncoderOutput out;
  Tensor x = standardize_input(images);
  for (int i = 0; i < stop; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    Tensor a = relu_forward(conv2d_forward(x, weights_[idx].value, biases_[idx].value, nullptr));
    x = avgpool2_forward(a);
    out.taps.push_back(std::move(a));
  }
  out.final_map = std::move(x);
  if (stop == num_blocks()) out.pooled = global_avg_pool_forward(out.final_map);
  return out;
}

EncoderOutput Encoder::forward_train(const Tensor& images) {
  check_input(images);
  cache_.assign(weights_.size(), {});
  EncoderOutput out;
  Tensor x = standardize_input(images);
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    Tensor a = relu_forward(conv2d_forward(x, weights_[i].value, biases_[i].value, &cache_[i].conv));
    x = avgpool2_forward(a);
    cache_[i].activation = a;
    out.taps.push_back(std::move(a));
  }
  final_shape_ = x.shape();
  out.final_map = std::move(x);
  out.pooled = global_avg_pool_forward(out.final_map);
  return out;
}

void Encoder::backward(const Tensor& grad_final_map) {
  if (cache_.size() != weights_.size()) throw DimensionError("encoder backward without forward_train");
  if (grad_final_map.shape() != final_shape_) throw DimensionError("encoder backward gradient shape mismatch");
  Tensor g = grad_final_map;
  for (std::size_t i = weights_.size(); i-- > 0;) {
    g = avgpool2_backward(cache_[i].activation.shape(), g);
    g = relu_backward(cache_[i].activation, g);
    ConvGrads cg = conv2d_backward(cache_[i].conv, weights_[i].value, g, i > 0);
    weights_[i].grad = std::move(cg.weight);
    biases_[i].grad = std::move(cg.bias);
    g = std::move(cg.input);
  }
}

void Encoder::backward_pooled(const Tensor& grad_pooled) {
  backward(global_avg_pool_backward(final_shape_, grad_pooled));
}

std::vector<Parameter*> Encoder::parameters() {
  std::vector<Parameter*> ps;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    ps.push_back(&weights_[i]);
    ps.push_back(&biases_[i]);
  }
  return ps;
}

std::vector<const Parameter*> Encoder::parameters() const {
  std::vector<const Parameter*> ps;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    ps.push_back(&weights_[i]);
    ps.push_back(&biases_[i]);
  }
  return ps;
}

Checkpoint Encoder::to_checkpoint() const {
  Checkpoint ckpt;
  for (const Parameter* p : parameters()) ckpt.put(p->name, p->value);
  return ckpt;
}

Encoder Encoder::from_checkpoint(const Checkpoint& ckpt) {
  std::vector<int> channels;
  int in_channels = -1;
  for (int i = 1; ckpt.contains("block" + std::to_string(i) + ".w"); ++i) {
    const Tensor& w = ckpt.get("block" + std::to_string(i) + ".w");
    if (w.rank() != 4) throw FormatError("encoder weight block" + std::to_string(i) + ".w is not rank 4");
    if (i == 1) in_channels = static_cast<int>(w.dim(1));
    channels.push_back(static_cast<int>(w.dim(0)));
  }
  if (channels.empty()) throw FormatError("checkpoint holds no encoder blocks");
  Encoder enc(channels, in_channels);
  for (Parameter* p : enc.parameters()) {
    const Tensor& t = ckpt.get(p->name);
    if (t.shape() != p->value.shape()) {
      throw FormatError("tensor " + p->name + " has shape " + shape_string(t.shape()) + ", expected " +
                        shape_string(p->value.shape()));
    }
    p->value = t;
  }
  return enc;
}

bool Encoder::operator==(const Encoder& other) const {
  if (channels_ != other.channels_ || in_channels_ != other.in_channels_) return false;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (!(weights_[i].value == other.weights_[i].value) || !(biases_[i].value == other.biases_[i].value)) return false;
  }
  return true;
}

RotHead::RotHead(int in_channels, int width)
    : in_channels_(in_channels),
      conv_w_("rothead.conv.w", {static_cast<std::size_t>(width), static_cast<std::size_t>(in_channels), 3, 3}),
      conv_b_("rothead.conv.b", {static_cast<std::size_t>(width)}),
      fc_w_("rothead.fc.w", {4, static_cast<std::size_t>(width)}),
      fc_b_("rothead.fc.b", {4}) {
  if (in_channels <= 0 || width <= 0) throw ConfigError("rotation head extents must be positive");
}

void RotHead::init(Rng& rng) {
  he_normal(conv_w_.value, rng);
  conv_b_.value.fill(0.0f);
  // Small output weights so the initial rotation loss sits at ln 4.
  for (float& v : fc_w_.value.values()) v = static_cast<float>(0.01 * rng.normal());
  fc_b_.value.fill(0.0f);
}

Tensor RotHead::forward(const Tensor& final_map) const {
  if (final_map.rank() != 4 || final_map.dim(1) != static_cast<std::size_t>(in_channels_)) {
    throw DimensionError("rotation head input " + shape_string(final_map.shape()));
  }
  Tensor a = relu_forward(conv2d_forward(final_map, conv_w_.value, conv_b_.value, nullptr));
  return linear_forward(global_avg_pool_forward(a), fc_w_.value, fc_b_.value);
}

Tensor RotHead::forward_train(const Tensor& final_map) {
  if (final_map.rank() != 4 || final_map.dim(1) != static_cast<std::size_t>(in_channels_)) {
    throw DimensionError("rotation head input " + shape_string(final_map.shape()));
  }
  activation_ = relu_forward(conv2d_forward(final_map, conv_w_.value, conv_b_.value, &conv_cache_));
  pooled_ = global_avg_pool_forward(activation_);
  return linear_forward(pooled_, fc_w_.value, fc_b_.value);
}

Tensor RotHead::backward(const Tensor& grad_logits) {
  LinearGrads lg = linear_backward(pooled_, fc_w_.value, grad_logits);
  fc_w_.grad = std::move(lg.weight);
  fc_b_.grad = std::move(lg.bias);
  Tensor g = global_avg_pool_backward(activation_.shape(), lg.input);
  g = relu_backward(activation_, g);
  ConvGrads cg = conv2d_backward(conv_cache_, conv_w_.value, g, true);
  conv_w_.grad = std::move(cg.weight);
  conv_b_.grad = std::move(cg.bias);
  return std::move(cg.input);
}

std::vector<Parameter*> RotHead::parameters() { return {&conv_w_, &conv_b_, &fc_w_, &fc_b_}; }

Checkpoint RotHead::to_checkpoint() const {
  Checkpoint ckpt;
  for (const Parameter* p : {&conv_w_, &conv_b_, &fc_w_, &fc_b_}) ckpt.put(p->name, p->value);
  return ckpt;
}

RotHead RotHead::from_checkpoint(const Checkpoint& ckpt) {
  const Tensor& w = ckpt.get("rothead.conv.w");
  if (w.rank() != 4) throw FormatError("rothead.conv.w is not rank 4");
  RotHead head(static_cast<int>(w.dim(1)), static_cast<int>(w.dim(0)));
  for (Parameter* p : head.parameters()) {
    const Tensor& t = ckpt.get(p->name);
    if (t.shape() != p->value.shape()) throw FormatError("tensor " + p->name + " has unexpected shape");
    p->value = t;
  }
  return head;
}

}  // namespace bownet
