#include "torch_doctest.hpp"

#include "core/errors.hpp"
#include "core/losses.hpp"
#include "core/nets.hpp"
#include "core/rng.hpp"

using namespace ph;

namespace {

NetConfig tiny_cfg() {
  NetConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 4;
  cfg.critic_base_channels = 4;
  return cfg;
}

torch::Generator gen_for(uint64_t seed) {
  auto g = at::detail::createCPUGenerator(seed);
  return g;
}

}  // namespace

TEST_CASE("generator forward keeps shape and lands in (0,1)") {
  torch::NoGradGuard ng;
  NetConfig cfg;
  cfg.base_channels = 8;
  cfg.critic_base_channels = 8;
  GeneratorNet g(cfg, 1);
  auto gen = gen_for(1);
  init_weights(*g, gen);
  auto x = torch::rand({4, 1, 64, 64}, gen);
  auto y = forward_g(g, x);
  CHECK(y.sizes() == x.sizes());
  CHECK((y > 0).all().item<bool>());
  CHECK((y < 1).all().item<bool>());
}

TEST_CASE("reconstructor with a zero mask matches the generator's output shape") {
  torch::NoGradGuard ng;
  auto cfg = tiny_cfg();
  GeneratorNet g(cfg, 1);
  ReconstructorNet r(cfg);
  auto gen = gen_for(2);
  init_weights(*g, gen);
  init_weights(*r, gen);
  auto x = torch::rand({3, 1, 16, 16}, gen);
  auto m = torch::zeros_like(x);
  CHECK(forward_r(r, x, m).sizes() == forward_g(g, x).sizes());
}

TEST_CASE("segmentor and critic respect their output contracts") {
  torch::NoGradGuard ng;
  auto cfg = tiny_cfg();
  SegmentorNet s(cfg);
  CriticNet d(cfg);
  auto gen = gen_for(3);
  init_weights(*s, gen);
  init_weights(*d, gen);
  auto x = torch::rand({5, 1, 16, 16}, gen);
  auto m = forward_s(s, x);
  CHECK(m.sizes() == x.sizes());
  CHECK((m > 0).all().item<bool>());
  CHECK((m < 1).all().item<bool>());
  auto c = forward_critic(d, x);
  CHECK(c.dim() == 1);
  CHECK(c.size(0) == 5);
}

TEST_CASE("autodiff input gradients match central finite differences") {
  auto cfg = tiny_cfg();
  GeneratorNet g(cfg, 1);
  auto gen = gen_for(4);
  init_weights(*g, gen);
  g->to(torch::kDouble);
  g->eval();

  auto x = torch::rand({1, 1, 16, 16}, gen).to(torch::kDouble).requires_grad_(true);
  auto y = g->forward(x).sum();
  auto grad = torch::autograd::grad({y}, {x})[0];

  Rng rng(5);
  const double step = 1e-3;
  for (int k = 0; k < 3; ++k) {
    int iy = rng.uniform_int(0, 15);
    int ix = rng.uniform_int(0, 15);
    torch::NoGradGuard ng;
    auto xp = x.detach().clone();
    auto xm = x.detach().clone();
    xp[0][0][iy][ix] += step;
    xm[0][0][iy][ix] -= step;
    double fd = (g->forward(xp).sum() - g->forward(xm).sum()).item<double>() / (2 * step);
    double ad = grad[0][0][iy][ix].item<double>();
    double denom = std::max({std::abs(fd), std::abs(ad), 1e-8});
    CHECK(std::abs(fd - ad) / denom < 1e-3);
  }
}

TEST_CASE("shape mismatches raise errors that name the dims") {
  auto cfg = tiny_cfg();
  GeneratorNet g(cfg, 1);
  SegmentorNet s(cfg);
  CriticNet d(cfg);
  ReconstructorNet r(cfg);
  auto bad_ch = torch::rand({2, 3, 16, 16});
  auto bad_sz = torch::rand({2, 1, 15, 16});
  for (auto* t : {&bad_ch, &bad_sz}) {
    CHECK_THROWS_AS(g->forward(*t), Error);
    CHECK_THROWS_AS(s->forward(*t), Error);
    CHECK_THROWS_AS(d->forward(*t), Error);
  }
  try {
    g->forward(bad_ch);
    FAIL("expected an error");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(msg.find("expected input") != std::string::npos);
    CHECK(msg.find("(2,3,16,16)") != std::string::npos);
    CHECK(e.code() == ErrorCode::config);
  }
  auto x = torch::rand({2, 1, 16, 16});
  auto m = torch::rand({2, 1, 8, 8});
  CHECK_THROWS_AS(r->forward(x, m), Error);
}

TEST_CASE("forwards are deterministic for fixed parameters and input") {
  torch::NoGradGuard ng;
  auto cfg = tiny_cfg();
  SegmentorNet s(cfg);
  auto gen = gen_for(6);
  init_weights(*s, gen);
  s->eval();
  auto x = torch::rand({2, 1, 16, 16}, gen);
  auto a = s->forward(x);
  auto b = s->forward(x);
  CHECK(torch::equal(a, b));
}

TEST_CASE("weight init is deterministic under a fixed generator seed") {
  auto cfg = tiny_cfg();
  GeneratorNet a(cfg, 1), b(cfg, 1);
  auto g1 = gen_for(7);
  auto g2 = gen_for(7);
  init_weights(*a, g1);
  init_weights(*b, g2);
  auto pa = a->named_parameters();
  auto pb = b->named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (const auto& p : pa) CHECK(torch::equal(p.value(), *pb.find(p.key())));
}

TEST_CASE("every trainable parameter of G, S, R receives gradient") {
  auto cfg = tiny_cfg();
  GeneratorNet g(cfg, 1);
  SegmentorNet s(cfg);
  ReconstructorNet r(cfg);
  CriticNet dx(cfg), dm(cfg);
  auto gen = gen_for(8);
  for (torch::nn::Module* m :
       std::initializer_list<torch::nn::Module*>{g.get(), s.get(), r.get(), dx.get(), dm.get()})
    init_weights(*m, gen);

  auto x_p = torch::rand({2, 1, 16, 16}, gen);
  auto x_h = torch::rand({2, 1, 16, 16}, gen);
  auto m_p = (torch::rand({2, 1, 16, 16}, gen) > 0.8).to(torch::kFloat);
  auto zero = torch::zeros_like(x_h);

  auto x_th = g->forward(x_p);
  auto m_tp = s->forward(x_p);
  auto gan1 = losses::wgan_gen_loss(dx, x_th);
  auto cc1 = (r->forward(x_th, m_tp) - x_p).abs().mean();
  auto x_bh = r->forward(x_h, zero);
  auto gan2 = losses::wgan_gen_loss(dx, x_bh);
  auto cc2 = (g->forward(x_bh) - x_h).abs().mean() + (s->forward(x_bh) - zero).abs().mean();
  auto seg = losses::dice_loss(m_tp, m_p);
  auto total =
      losses::total_loss(losses::Setting::paired, losses::LossWeights{}, gan1, gan2, cc1, cc2, seg);
  total.total.backward();

  for (auto* net : std::initializer_list<torch::nn::Module*>{g.get(), s.get(), r.get()}) {
    for (const auto& p : net->named_parameters()) {
      REQUIRE(p.value().grad().defined());
      CHECK(p.value().grad().abs().sum().item<double>() > 0.0);
    }
  }
}
