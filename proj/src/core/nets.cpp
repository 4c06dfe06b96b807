#include "nets.hpp"

#include <cmath>

#include "errors.hpp"

namespace ph {
namespace {

std::string dims(const torch::Tensor& t) {
  std::string s = "(";
  for (int64_t i = 0; i < t.dim(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.size(i));
  }
  return s + ")";
}

torch::nn::Conv2d conv3(int in, int out, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Conv2d conv4s2(int in, int out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
}

torch::nn::ConvTranspose2d up4s2(int in, int out) {
  return torch::nn::ConvTranspose2d(
      torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1));
}

torch::nn::InstanceNorm2d inorm(int ch) {
  return torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(ch).affine(true));
}

// Two 3x3 convolutions with an additive shortcut.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int ch, bool use_norm, double slope) : use_norm_(use_norm), slope_(slope) {
    c1_ = register_module("c1", conv3(ch, ch));
    c2_ = register_module("c2", conv3(ch, ch));
    if (use_norm_) {
      n1_ = register_module("n1", inorm(ch));
      n2_ = register_module("n2", inorm(ch));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = c1_->forward(x);
    if (use_norm_) y = n1_->forward(y);
    y = torch::leaky_relu(y, slope_);
    y = c2_->forward(y);
    if (use_norm_) y = n2_->forward(y);
    return torch::leaky_relu(x + y, slope_);
  }

 private:
  bool use_norm_;
  double slope_;
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr};
  torch::nn::InstanceNorm2d n1_{nullptr}, n2_{nullptr};
};
TORCH_MODULE(ResBlock);

}  // namespace

void NetConfig::validate() const {
  if (levels < 1 || levels > 6) throw config_error("nets: levels must be in [1,6]");
  if (base_channels < 1 || critic_base_channels < 1)
    throw config_error("nets: channel counts must be positive");
  if (leaky_slope < 0.0 || leaky_slope >= 1.0)
    throw config_error("nets: leaky_slope must be in [0,1)");
}

void check_batch_shape(const torch::Tensor& x, int channels, int divisor,
                       const std::string& who) {
  bool ok = x.dim() == 4 && x.size(1) == channels && x.size(2) >= divisor &&
            x.size(3) >= divisor && x.size(2) % divisor == 0 && x.size(3) % divisor == 0;
  if (!ok)
    throw config_error(who + ": expected input (N," + std::to_string(channels) +
                       ",H,W) with H and W multiples of " + std::to_string(divisor) + ", got " +
                       dims(x));
}

GeneratorNetImpl::GeneratorNetImpl(const NetConfig& cfg, int in_channels)
    : cfg_(cfg), in_channels_(in_channels) {
  cfg.validate();
  int b = cfg.base_channels;
  stem_ = register_module("stem", conv3(in_channels, b));
  if (cfg.instance_norm) stem_norm_ = register_module("stem_norm", inorm(b));
  downs_ = register_module("downs", torch::nn::ModuleList());
  down_norms_ = register_module("down_norms", torch::nn::ModuleList());
  ups_ = register_module("ups", torch::nn::ModuleList());
  up_norms_ = register_module("up_norms", torch::nn::ModuleList());
  merges_ = register_module("merges", torch::nn::ModuleList());
  merge_norms_ = register_module("merge_norms", torch::nn::ModuleList());
  blocks_ = register_module("blocks", torch::nn::ModuleList());

  int ch = b;
  for (int i = 0; i < cfg.levels; ++i) {
    downs_->push_back(conv4s2(ch, ch * 2));
    if (cfg.instance_norm) down_norms_->push_back(inorm(ch * 2));
    ch *= 2;
  }
  blocks_->push_back(ResBlock(ch, cfg.instance_norm, cfg.leaky_slope));
  blocks_->push_back(ResBlock(ch, cfg.instance_norm, cfg.leaky_slope));
  for (int i = 0; i < cfg.levels; ++i) {
    ups_->push_back(up4s2(ch, ch / 2));
    if (cfg.instance_norm) up_norms_->push_back(inorm(ch / 2));
    merges_->push_back(conv3(ch / 2, ch / 2));
    if (cfg.instance_norm) merge_norms_->push_back(inorm(ch / 2));
    ch /= 2;
  }
  head_ = register_module("head", conv3(b, 1));
}

torch::Tensor GeneratorNetImpl::forward(const torch::Tensor& x) {
  check_batch_shape(x, in_channels_, 1 << cfg_.levels,
                    in_channels_ == 2 ? "reconstructor" : "generator");
  const double slope = cfg_.leaky_slope;
  auto h = stem_->forward(x);
  if (cfg_.instance_norm) h = stem_norm_->forward(h);
  h = torch::leaky_relu(h, slope);

  std::vector<torch::Tensor> skips;
  for (int i = 0; i < cfg_.levels; ++i) {
    skips.push_back(h);
    h = downs_[static_cast<size_t>(i)]->as<torch::nn::Conv2d>()->forward(h);
    if (cfg_.instance_norm)
      h = down_norms_[static_cast<size_t>(i)]->as<torch::nn::InstanceNorm2d>()->forward(h);
    h = torch::leaky_relu(h, slope);
  }
  for (const auto& blk : *blocks_) h = blk->as<ResBlockImpl>()->forward(h);
  for (int i = 0; i < cfg_.levels; ++i) {
    h = ups_[static_cast<size_t>(i)]->as<torch::nn::ConvTranspose2d>()->forward(h);
    if (cfg_.instance_norm)
      h = up_norms_[static_cast<size_t>(i)]->as<torch::nn::InstanceNorm2d>()->forward(h);
    h = torch::leaky_relu(h, slope);
    // Additive long skip from the encoder at the matching resolution.
    h = h + skips[static_cast<size_t>(cfg_.levels - 1 - i)];
    h = merges_[static_cast<size_t>(i)]->as<torch::nn::Conv2d>()->forward(h);
    if (cfg_.instance_norm)
      h = merge_norms_[static_cast<size_t>(i)]->as<torch::nn::InstanceNorm2d>()->forward(h);
    h = torch::leaky_relu(h, slope);
  }
  return torch::sigmoid(head_->forward(h));
}

torch::Tensor ReconstructorNetImpl::forward(const torch::Tensor& x, const torch::Tensor& m) {
  if (x.sizes() != m.sizes())
    throw config_error("reconstructor: image dims " + dims(x) + " != mask dims " + dims(m));
  return GeneratorNetImpl::forward(torch::cat({x, m}, 1));
}

SegmentorNetImpl::SegmentorNetImpl(const NetConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  int b = cfg.base_channels;
  stem_ = register_module("stem", conv3(1, b));
  if (cfg.instance_norm) stem_norm_ = register_module("stem_norm", inorm(b));
  downs_ = register_module("downs", torch::nn::ModuleList());
  down_norms_ = register_module("down_norms", torch::nn::ModuleList());
  ups_ = register_module("ups", torch::nn::ModuleList());
  merges_ = register_module("merges", torch::nn::ModuleList());
  merge_norms_ = register_module("merge_norms", torch::nn::ModuleList());

  int ch = b;
  for (int i = 0; i < cfg.levels; ++i) {
    downs_->push_back(conv4s2(ch, ch * 2));
    if (cfg.instance_norm) down_norms_->push_back(inorm(ch * 2));
    ch *= 2;
  }
  mid1_ = register_module("mid1", conv3(ch, ch));
  mid2_ = register_module("mid2", conv3(ch, ch));
  if (cfg.instance_norm) {
    mid1_norm_ = register_module("mid1_norm", inorm(ch));
    mid2_norm_ = register_module("mid2_norm", inorm(ch));
  }
  for (int i = 0; i < cfg.levels; ++i) {
    ups_->push_back(up4s2(ch, ch / 2));
    // Concatenated skip doubles the channels before the merge.
    merges_->push_back(conv3(ch, ch / 2));
    if (cfg.instance_norm) merge_norms_->push_back(inorm(ch / 2));
    ch /= 2;
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(b, 1, 1)));
}

torch::Tensor SegmentorNetImpl::forward(const torch::Tensor& x) {
  check_batch_shape(x, 1, 1 << cfg_.levels, "segmentor");
  const double slope = cfg_.leaky_slope;
  auto h = stem_->forward(x);
  if (cfg_.instance_norm) h = stem_norm_->forward(h);
  h = torch::leaky_relu(h, slope);

  std::vector<torch::Tensor> skips;
  for (int i = 0; i < cfg_.levels; ++i) {
    skips.push_back(h);
    h = downs_[static_cast<size_t>(i)]->as<torch::nn::Conv2d>()->forward(h);
    if (cfg_.instance_norm)
      h = down_norms_[static_cast<size_t>(i)]->as<torch::nn::InstanceNorm2d>()->forward(h);
    h = torch::leaky_relu(h, slope);
  }
  h = mid1_->forward(h);
  if (cfg_.instance_norm) h = mid1_norm_->forward(h);
  h = torch::leaky_relu(h, slope);
  h = mid2_->forward(h);
  if (cfg_.instance_norm) h = mid2_norm_->forward(h);
  h = torch::leaky_relu(h, slope);
  for (int i = 0; i < cfg_.levels; ++i) {
    h = ups_[static_cast<size_t>(i)]->as<torch::nn::ConvTranspose2d>()->forward(h);
    h = torch::leaky_relu(h, slope);
    h = torch::cat({h, skips[static_cast<size_t>(cfg_.levels - 1 - i)]}, 1);
    h = merges_[static_cast<size_t>(i)]->as<torch::nn::Conv2d>()->forward(h);
    if (cfg_.instance_norm)
      h = merge_norms_[static_cast<size_t>(i)]->as<torch::nn::InstanceNorm2d>()->forward(h);
    h = torch::leaky_relu(h, slope);
  }
  return torch::sigmoid(head_->forward(h));
}

CriticNetImpl::CriticNetImpl(const NetConfig& cfg, int in_channels)
    : cfg_(cfg), in_channels_(in_channels) {
  cfg.validate();
  convs_ = register_module("convs", torch::nn::ModuleList());
  int ch = in_channels;
  int next = cfg.critic_base_channels;
  for (int i = 0; i < cfg.levels; ++i) {
    convs_->push_back(conv4s2(ch, next));
    ch = next;
    next *= 2;
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 1, 1)));
}

torch::Tensor CriticNetImpl::forward(const torch::Tensor& x) {
  check_batch_shape(x, in_channels_, 1 << cfg_.levels, "critic");
  auto h = x;
  for (const auto& c : *convs_)
    h = torch::leaky_relu(c->as<torch::nn::Conv2d>()->forward(h), cfg_.leaky_slope);
  return head_->forward(h).mean({1, 2, 3});
}

torch::Tensor forward_g(GeneratorNet& g, const torch::Tensor& x) { return g->forward(x); }
torch::Tensor forward_s(SegmentorNet& s, const torch::Tensor& x) { return s->forward(x); }
torch::Tensor forward_r(ReconstructorNet& r, const torch::Tensor& x, const torch::Tensor& m) {
  return r->forward(x, m);
}
torch::Tensor forward_critic(CriticNet& c, const torch::Tensor& x) { return c->forward(x); }

void init_weights(torch::nn::Module& m, torch::Generator& gen) {
  torch::NoGradGuard ng;
  for (const auto& mod : m.modules(/*include_self=*/false)) {
    if (auto* c = mod->as<torch::nn::Conv2d>()) {
      auto w = c->weight;
      double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
      w.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
      if (c->options.bias()) c->bias.zero_();
    } else if (auto* t = mod->as<torch::nn::ConvTranspose2d>()) {
      auto w = t->weight;  // shape [in, out, kh, kw]
      double fan_in = static_cast<double>(w.size(0) * w.size(2) * w.size(3));
      w.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
      if (t->options.bias()) t->bias.zero_();
    } else if (auto* l = mod->as<torch::nn::Linear>()) {
      auto w = l->weight;
      double fan_in = static_cast<double>(w.size(1));
      w.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
      if (l->bias.defined()) l->bias.zero_();
    } else if (auto* n = mod->as<torch::nn::InstanceNorm2d>()) {
      if (n->weight.defined()) n->weight.fill_(1.0);
      if (n->bias.defined()) n->bias.zero_();
    }
  }
}

}  // namespace ph
