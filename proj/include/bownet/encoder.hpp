#pragma once

#include <vector>

#include "bownet/checkpoint.hpp"
#include "bownet/layers.hpp"
#include "bownet/numerics.hpp"

namespace bownet {

struct EncoderOutput {
  // Post-ReLU, pre-pool map of each evaluated block (index 0 = block 1).
  std::vector<Tensor> taps;
  // Post-pool map of the last evaluated block.
  Tensor final_map;
  // Global average of final_map, [B x c]; empty when evaluation stopped early.
  Tensor pooled;
};

// Stack of {3x3 conv, ReLU, 2x2 average pool} blocks. Blocks are numbered
// from 1 in names and tap ids. Pixels are mapped to (x - 0.5) / 0.25 before
// the first block.
class Encoder {
 public:
  static constexpr float kInputMean = 0.5f;
  static constexpr float kInputStd = 0.25f;

  Encoder() = default;
  explicit Encoder(std::vector<int> channels, int in_channels = 3);

  // He-normal weights, zero biases.
  void init(Rng& rng);

  int num_blocks() const { return static_cast<int>(weights_.size()); }
  int in_channels() const { return in_channels_; }
  const std::vector<int>& channels() const { return channels_; }
  int out_dim() const { return channels_.empty() ? 0 : channels_.back(); }
  int block_channels(int block) const;

  // Inference pass. Stops after block `last_block` (1-based) when given.
  EncoderOutput forward(const Tensor& images, int last_block = -1) const;
  // Training pass; keeps activations for backward().
  EncoderOutput forward_train(const Tensor& images);
  // Gradient with respect to the final (post-pool) map of the last
  // forward_train; overwrites parameter gradients.
  void backward(const Tensor& grad_final_map);
  // Same, starting from the pooled [B x c] output.
  void backward_pooled(const Tensor& grad_pooled);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Checkpoint to_checkpoint() const;
  static Encoder from_checkpoint(const Checkpoint& ckpt);

  bool operator==(const Encoder& other) const;

 private:
  struct BlockCache {
    ConvCache conv;
    Tensor activation;  // post-ReLU
  };

  void check_input(const Tensor& images) const;

  int in_channels_ = 3;
  std::vector<int> channels_;
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;
  std::vector<BlockCache> cache_;
  Shape final_shape_;
};

// Rotation classifier on the encoder's final map: 3x3 conv + ReLU, global
// average pool, linear layer to 4 logits.
class RotHead {
 public:
  RotHead() = default;
  RotHead(int in_channels, int width);

  void init(Rng& rng);
  int in_channels() const { return in_channels_; }

  Tensor forward(const Tensor& final_map) const;
  Tensor forward_train(const Tensor& final_map);
  // Returns the gradient with respect to the final map; overwrites parameter grads.
  Tensor backward(const Tensor& grad_logits);

  std::vector<Parameter*> parameters();

  Checkpoint to_checkpoint() const;
  static RotHead from_checkpoint(const Checkpoint& ckpt);

 private:
  int in_channels_ = 0;
  Parameter conv_w_, conv_b_, fc_w_, fc_b_;
  ConvCache conv_cache_;
  Tensor activation_;
  Tensor pooled_;
};

}  // namespace bownet
