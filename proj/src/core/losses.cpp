#include "losses.hpp"

#include "errors.hpp"

namespace ph {
namespace losses {
namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
  if (a.sizes() != b.sizes())
    throw config_error(std::string(who) + ": tensor shapes differ, " + c10::str(a.sizes()) +
                       " vs " + c10::str(b.sizes()));
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {l1, l2, l3, l4, l5_paired, l5_unpaired, gp})
    if (v < 0.0) throw config_error("loss weights must be >= 0");
}

torch::Tensor gradient_penalty_fn(const std::function<torch::Tensor(const torch::Tensor&)>& critic,
                                  const torch::Tensor& real, const torch::Tensor& fake,
                                  double lambda_gp, torch::Generator& gen,
                                  c10::optional<torch::Tensor> eps_override) {
  check_same_shape(real, fake, "gradient_penalty");
  int64_t n = real.size(0);
  torch::Tensor eps;
  if (eps_override.has_value()) {
    eps = *eps_override;
    if (eps.dim() != 4 || eps.size(0) != n)
      throw config_error("gradient_penalty: eps override must have shape [N,1,1,1]");
    if ((eps < 0).any().item<bool>() || (eps > 1).any().item<bool>())
      throw config_error("gradient_penalty: eps must lie in [0,1]");
  } else {
    eps = torch::rand({n, 1, 1, 1}, gen, real.options());
  }

  // Keep the interpolation inside the graph when the inputs require grad, so
  // the penalty is differentiable w.r.t. real and fake as well.
  auto interp = eps * real + (1.0 - eps) * fake;
  auto xhat = interp.requires_grad() ? interp : interp.detach().requires_grad_(true);
  auto out = critic(xhat);
  torch::Tensor grad;
  try {
    grad = torch::autograd::grad({out.sum()}, {xhat}, /*grad_outputs=*/{},
                                 /*retain_graph=*/true, /*create_graph=*/true)[0];
  } catch (const c10::Error& e) {
    throw numeric_error(std::string("gradient_penalty: critic graph is not differentiable "
                                    "w.r.t. its input: ") +
                        e.what_without_backtrace());
  }
  auto norm = grad.reshape({n, -1}).norm(2, 1);
  return lambda_gp * (norm - 1.0).pow(2).mean();
}

torch::Tensor gradient_penalty(CriticNet& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, double lambda_gp, torch::Generator& gen,
                               c10::optional<torch::Tensor> eps_override) {
  return gradient_penalty_fn([&critic](const torch::Tensor& x) { return critic->forward(x); },
                             real, fake, lambda_gp, gen, std::move(eps_override));
}

torch::Tensor wgan_critic_loss(CriticNet& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, double lambda_gp, torch::Generator& gen,
                               c10::optional<torch::Tensor> eps_override) {
  check_same_shape(real, fake, "wgan_critic_loss");
  auto f = fake.detach();
  return critic->forward(f).mean() - critic->forward(real).mean() +
         gradient_penalty(critic, real, f, lambda_gp, gen, std::move(eps_override));
}

torch::Tensor wgan_gen_loss(CriticNet& critic, const torch::Tensor& fake) {
  return -critic->forward(fake).mean();
}

AdvPair wgan_image_losses(CriticNet& d_x, GeneratorNet& g, const torch::Tensor& x_p,
                          const torch::Tensor& x_h, double lambda_gp, torch::Generator& gen,
                          c10::optional<torch::Tensor> eps_override) {
  if (x_p.size(0) < 1 || x_h.size(0) < 1)
    throw config_error("wgan_image_losses: batches must be nonempty");
  auto fake = g->forward(x_p);
  return {wgan_critic_loss(d_x, x_h, fake, lambda_gp, gen, std::move(eps_override)),
          wgan_gen_loss(d_x, fake)};
}

AdvPair wgan_reconstructor_losses(CriticNet& d_x, ReconstructorNet& r, const torch::Tensor& x_h1,
                                  const torch::Tensor& x_h2, const torch::Tensor& m_h2,
                                  double lambda_gp, torch::Generator& gen,
                                  c10::optional<torch::Tensor> eps_override) {
  if ((m_h2 != 0).any().item<bool>())
    throw config_error("wgan_reconstructor_losses: mask must be all-zero in this pathway");
  auto fake = r->forward(x_h2, m_h2);
  return {wgan_critic_loss(d_x, x_h1, fake, lambda_gp, gen, std::move(eps_override)),
          wgan_gen_loss(d_x, fake)};
}

torch::Tensor lsgan_critic_loss(CriticNet& critic, const torch::Tensor& real,
                                const torch::Tensor& fake) {
  return lsgan_critic_loss(critic->forward(real), critic->forward(fake));
}

torch::Tensor lsgan_gen_loss(CriticNet& critic, const torch::Tensor& fake) {
  return lsgan_gen_loss(critic->forward(fake));
}

torch::Tensor lsgan_critic_loss(const torch::Tensor& real_scores,
                                const torch::Tensor& fake_scores) {
  return 0.5 * ((real_scores - 1).pow(2).mean() + fake_scores.pow(2).mean());
}

torch::Tensor lsgan_gen_loss(const torch::Tensor& fake_scores) {
  return 0.5 * (fake_scores - 1).pow(2).mean();
}

torch::Tensor cycle_ph_loss(ReconstructorNet& r, GeneratorNet& g, SegmentorNet& s,
                            const torch::Tensor& x_p) {
  auto rec = r->forward(g->forward(x_p), s->forward(x_p));
  return (rec - x_p).abs().mean();
}

torch::Tensor cycle_hh_loss(GeneratorNet& g, SegmentorNet& s, ReconstructorNet& r,
                            const torch::Tensor& x_h, const torch::Tensor& m_h) {
  auto xbar = r->forward(x_h, m_h);
  return (g->forward(xbar) - x_h).abs().mean() + (s->forward(xbar) - m_h).abs().mean();
}

torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  check_same_shape(pred, target, "dice_loss");
  if (!((target == 0) | (target == 1)).all().item<bool>())
    throw config_error("dice_loss: target mask must be binary");
  auto inter = (pred * target).sum();
  return 1.0 - 2.0 * inter / (pred.sum() + target.sum() + 1e-6);
}

AdvPair mask_adversarial_losses(CriticNet& d_m, SegmentorNet& s, const torch::Tensor& x_p1,
                                const torch::Tensor& m_p2, double lambda_gp,
                                torch::Generator& gen,
                                c10::optional<torch::Tensor> eps_override) {
  if (m_p2.size(0) < 1) throw config_error("mask_adversarial_losses: mask pool batch is empty");
  auto fake = s->forward(x_p1);
  return {wgan_critic_loss(d_m, m_p2, fake, lambda_gp, gen, std::move(eps_override)),
          wgan_gen_loss(d_m, fake)};
}

LossBreakdown total_loss(Setting setting, const LossWeights& w, const torch::Tensor& gan1,
                         const torch::Tensor& gan2, const torch::Tensor& cc1,
                         const torch::Tensor& cc2, const torch::Tensor& seg) {
  w.validate();
  double l5 = setting == Setting::paired ? w.l5_paired : w.l5_unpaired;
  LossBreakdown out;
  out.total = w.l1 * gan1 + w.l2 * gan2 + w.l3 * cc1 + w.l4 * cc2 + l5 * seg;
  out.terms = {{"gan1", gan1.item<double>()},
               {"gan2", gan2.item<double>()},
               {"cc1", cc1.item<double>()},
               {"cc2", cc2.item<double>()},
               {"seg", seg.item<double>()},
               {"total", out.total.item<double>()}};
  return out;
}

}  // namespace losses
}  // namespace ph
