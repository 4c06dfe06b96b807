#pragma once

#include <torch/torch.h>

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nets.hpp"

namespace ph {
namespace losses {

struct LossWeights {
  double l1 = 2.0;    // image GAN, pathological-to-healthy direction
  double l2 = 1.0;    // image GAN, healthy reconstruction direction
  double l3 = 20.0;   // Cycle P-H consistency
  double l4 = 10.0;   // Cycle H-H consistency
  double l5_paired = 10.0;   // supervised Dice
  double l5_unpaired = 1.0;  // adversarial mask supervision
  double gp = 10.0;   // gradient penalty

  void validate() const;  // throws config_error (all weights >= 0)
};

enum class Setting { paired, unpaired };

// Both adversarial players' minimization targets. The critic descends
// mean[D(fake)] - mean[D(real)] + penalty, which is gradient ascent on the
// usual Wasserstein expectation gap; the generator descends -mean[D(fake)].
struct AdvPair {
  torch::Tensor critic_loss;
  torch::Tensor gen_loss;
};

// lambda_gp * mean[(||grad_xhat D(xhat)||_2 - 1)^2], xhat = eps*real +
// (1-eps)*fake with per-sample eps ~ U[0,1] drawn from `gen`. Pass
// `eps_override` (shape [N,1,1,1], values in [0,1]) to pin the interpolation
// point, e.g. for finite-difference checks.
torch::Tensor gradient_penalty(CriticNet& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, double lambda_gp,
                               torch::Generator& gen,
                               c10::optional<torch::Tensor> eps_override = c10::nullopt);

// Same penalty for an arbitrary differentiable critic function mapping a
// batch to per-sample scalars.
torch::Tensor gradient_penalty_fn(const std::function<torch::Tensor(const torch::Tensor&)>& critic,
                                  const torch::Tensor& real, const torch::Tensor& fake,
                                  double lambda_gp, torch::Generator& gen,
                                  c10::optional<torch::Tensor> eps_override = c10::nullopt);

// Building blocks on precomputed fakes, used by the training loop so critic
// updates skip the generator-side graph and vice versa.
torch::Tensor wgan_critic_loss(CriticNet& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, double lambda_gp, torch::Generator& gen,
                               c10::optional<torch::Tensor> eps_override = c10::nullopt);
torch::Tensor wgan_gen_loss(CriticNet& critic, const torch::Tensor& fake);

AdvPair wgan_image_losses(CriticNet& d_x, GeneratorNet& g, const torch::Tensor& x_p,
                          const torch::Tensor& x_h, double lambda_gp, torch::Generator& gen,
                          c10::optional<torch::Tensor> eps_override = c10::nullopt);

// Same structure with the Reconstructor on a zero mask as the faker; m_h2
// must be all-zero in this pathway.
AdvPair wgan_reconstructor_losses(CriticNet& d_x, ReconstructorNet& r, const torch::Tensor& x_h1,
                                  const torch::Tensor& x_h2, const torch::Tensor& m_h2,
                                  double lambda_gp, torch::Generator& gen,
                                  c10::optional<torch::Tensor> eps_override = c10::nullopt);

// Least-squares alternative used by the lsgan ablation, no gradient penalty.
// Critic descends 0.5*(mean[(D(real)-1)^2] + mean[D(fake)^2]); at perfect
// separation (real scored 1, fake scored 0) the loss is exactly 0. The
// generator descends 0.5*mean[(D(fake)-1)^2].
torch::Tensor lsgan_critic_loss(CriticNet& critic, const torch::Tensor& real,
                                const torch::Tensor& fake);
torch::Tensor lsgan_gen_loss(CriticNet& critic, const torch::Tensor& fake);

// Score-space forms of the same, for callers that already have critic outputs.
torch::Tensor lsgan_critic_loss(const torch::Tensor& real_scores,
                                const torch::Tensor& fake_scores);
torch::Tensor lsgan_gen_loss(const torch::Tensor& fake_scores);

// mean l1 of R(G(x_p), S(x_p)) - x_p.
torch::Tensor cycle_ph_loss(ReconstructorNet& r, GeneratorNet& g, SegmentorNet& s,
                            const torch::Tensor& x_p);

// mean l1 of G(R(x_h,m_h)) - x_h plus mean l1 of S(R(x_h,m_h)) - m_h.
torch::Tensor cycle_hh_loss(GeneratorNet& g, SegmentorNet& s, ReconstructorNet& r,
                            const torch::Tensor& x_h, const torch::Tensor& m_h);

// 1 - 2*sum(pred*target) / (sum(pred) + sum(target) + 1e-6); target binary.
torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& target);

// WGAN-GP on masks: fake = S(x_p1), real masks drawn from other subjects.
AdvPair mask_adversarial_losses(CriticNet& d_m, SegmentorNet& s, const torch::Tensor& x_p1,
                                const torch::Tensor& m_p2, double lambda_gp,
                                torch::Generator& gen,
                                c10::optional<torch::Tensor> eps_override = c10::nullopt);

struct LossBreakdown {
  torch::Tensor total;
  std::vector<std::pair<std::string, double>> terms;  // unweighted component values
};

// Weighted combination of the generator-side components. `seg` is the Dice
// term when paired, the adversarial segmentation term when unpaired.
LossBreakdown total_loss(Setting setting, const LossWeights& w, const torch::Tensor& gan1,
                         const torch::Tensor& gan2, const torch::Tensor& cc1,
                         const torch::Tensor& cc2, const torch::Tensor& seg);

}  // namespace losses
}  // namespace ph
