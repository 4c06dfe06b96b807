#pragma once

#include <torch/torch.h>

#include <string>

namespace ph {

struct NetConfig {
  int levels = 3;
  int base_channels = 32;
  int critic_base_channels = 32;
  bool instance_norm = true;
  double leaky_slope = 0.2;

  void validate() const;  // throws config_error
};

// Residual encoder-decoder with additive long skip connections and a sigmoid
// head. Houses both the Generator (1 input channel) and the Reconstructor
// (2 input channels: image and mask).
class GeneratorNetImpl : public torch::nn::Module {
 public:
  GeneratorNetImpl(const NetConfig& cfg, int in_channels);
  torch::Tensor forward(const torch::Tensor& x);
  int in_channels() const { return in_channels_; }
  const NetConfig& config() const { return cfg_; }

 private:
  NetConfig cfg_;
  int in_channels_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::InstanceNorm2d stem_norm_{nullptr};
  torch::nn::ModuleList downs_, down_norms_, blocks_, ups_, up_norms_, merges_, merge_norms_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(GeneratorNet);

class ReconstructorNetImpl : public GeneratorNetImpl {
 public:
  explicit ReconstructorNetImpl(const NetConfig& cfg) : GeneratorNetImpl(cfg, 2) {}
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& m);
};
TORCH_MODULE(ReconstructorNet);

// U-net with concatenated skip connections and a sigmoid head.
class SegmentorNetImpl : public torch::nn::Module {
 public:
  explicit SegmentorNetImpl(const NetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  NetConfig cfg_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::InstanceNorm2d stem_norm_{nullptr};
  torch::nn::ModuleList downs_, down_norms_, ups_, merges_, merge_norms_;
  torch::nn::Conv2d mid1_{nullptr}, mid2_{nullptr}, head_{nullptr};
  torch::nn::InstanceNorm2d mid1_norm_{nullptr}, mid2_norm_{nullptr};
};
TORCH_MODULE(SegmentorNet);

// Strided-convolution critic with a linear scalar head (no sigmoid, no
// normalization layers; gradient penalty dislikes batch statistics).
class CriticNetImpl : public torch::nn::Module {
 public:
  explicit CriticNetImpl(const NetConfig& cfg, int in_channels = 1);
  // Returns one unbounded scalar per sample, shape [N].
  torch::Tensor forward(const torch::Tensor& x);

 private:
  NetConfig cfg_;
  int in_channels_;
  torch::nn::ModuleList convs_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(CriticNet);

torch::Tensor forward_g(GeneratorNet& g, const torch::Tensor& x);
torch::Tensor forward_s(SegmentorNet& s, const torch::Tensor& x);
torch::Tensor forward_r(ReconstructorNet& r, const torch::Tensor& x, const torch::Tensor& m);
torch::Tensor forward_critic(CriticNet& c, const torch::Tensor& x);

// Deterministic weight init (Kaiming-style normal for convolutions) drawing
// only from the passed generator.
void init_weights(torch::nn::Module& m, torch::Generator& gen);

// Throws config_error naming expected vs actual dims.
void check_batch_shape(const torch::Tensor& x, int channels, int divisor, const std::string& who);

}  // namespace ph
