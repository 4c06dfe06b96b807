#include "eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <numeric>

#include "csv.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "rng.hpp"

namespace ph {
namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
const double kMsWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed ^ (salt + 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

torch::Tensor gaussian_window() {
  auto k = torch::empty({kWindow}, torch::kDouble);
  double c = (kWindow - 1) / 2.0;
  for (int i = 0; i < kWindow; ++i)
    k[i] = std::exp(-(i - c) * (i - c) / (2.0 * kWindowSigma * kWindowSigma));
  k /= k.sum();
  return torch::outer(k, k).view({1, 1, kWindow, kWindow});
}

void check_pair(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
  if (a.dim() != 4 || b.dim() != 4 || a.size(1) != 1 || b.size(1) != 1)
    throw config_error(std::string(who) + " expects [N,1,H,W] inputs");
  if (a.sizes() != b.sizes()) throw config_error(std::string(who) + " inputs differ in shape");
}

// Per-sample luminance*cs mean and cs mean over valid window positions.
std::pair<torch::Tensor, torch::Tensor> ssim_cs(const torch::Tensor& a, const torch::Tensor& b,
                                                const torch::Tensor& win) {
  auto mu_a = torch::conv2d(a, win);
  auto mu_b = torch::conv2d(b, win);
  auto mu_aa = mu_a * mu_a;
  auto mu_bb = mu_b * mu_b;
  auto mu_ab = mu_a * mu_b;
  auto s_aa = torch::conv2d(a * a, win) - mu_aa;
  auto s_bb = torch::conv2d(b * b, win) - mu_bb;
  auto s_ab = torch::conv2d(a * b, win) - mu_ab;
  auto lum = (2.0 * mu_ab + kC1) / (mu_aa + mu_bb + kC1);
  auto cs = (2.0 * s_ab + kC2) / (s_aa + s_bb + kC2);
  return {(lum * cs).mean({1, 2, 3}), cs.mean({1, 2, 3})};
}

std::vector<double> ms_ssim_per_sample(const torch::Tensor& a, const torch::Tensor& b) {
  check_pair(a, b, "ms_ssim");
  int64_t side = std::min(a.size(2), a.size(3));
  if (side < kWindow) throw config_error("ms_ssim needs images of at least 11 pixels per side");
  int scales = 1;
  while (scales < 5 && side / (1LL << scales) >= kWindow) ++scales;
  double wsum = 0.0;
  for (int i = 0; i < scales; ++i) wsum += kMsWeights[i];

  torch::NoGradGuard ng;
  auto win = gaussian_window();
  auto xa = a.to(torch::kDouble);
  auto xb = b.to(torch::kDouble);
  auto prod = torch::ones({a.size(0)}, torch::kDouble);
  for (int lvl = 0; lvl < scales; ++lvl) {
    auto [ssim, cs] = ssim_cs(xa, xb, win);
    auto factor = (lvl == scales - 1) ? ssim : cs;
    prod = prod * factor.clamp_min(0.0).pow(kMsWeights[lvl] / wsum);
    if (lvl != scales - 1) {
      xa = torch::avg_pool2d(xa, 2);
      xb = torch::avg_pool2d(xb, 2);
    }
  }
  std::vector<double> out(static_cast<size_t>(prod.size(0)));
  for (int64_t i = 0; i < prod.size(0); ++i) out[static_cast<size_t>(i)] = prod[i].item<double>();
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

torch::Tensor stack_images(const std::vector<const ImageSlice*>& xs, size_t lo, size_t n) {
  int h = xs[lo]->h, w = xs[lo]->w;
  auto t = torch::empty({static_cast<int64_t>(n), 1, h, w}, torch::kFloat);
  float* p = t.data_ptr<float>();
  for (size_t i = 0; i < n; ++i) {
    const auto& img = *xs[lo + i];
    if (img.h != h || img.w != w) throw data_error("mixed image sizes in one batch");
    std::memcpy(p + i * img.size(), img.v.data(), img.size() * sizeof(float));
  }
  return t;
}

torch::Tensor stack_masks(const std::vector<const PathologyMask*>& ms, size_t lo, size_t n) {
  int h = ms[lo]->h, w = ms[lo]->w;
  auto t = torch::zeros({static_cast<int64_t>(n), 1, h, w}, torch::kFloat);
  float* p = t.data_ptr<float>();
  for (size_t i = 0; i < n; ++i) {
    const auto& m = *ms[lo + i];
    if (m.h != h || m.w != w) throw data_error("mixed mask sizes in one batch");
    for (size_t j = 0; j < m.size(); ++j) p[i * m.size() + j] = static_cast<float>(m.v[j]);
  }
  return t;
}

ImageSlice slice_from(const torch::Tensor& batch, int64_t i) {
  auto row = batch[i][0].contiguous().to(torch::kFloat);
  ImageSlice out(static_cast<int>(row.size(0)), static_cast<int>(row.size(1)));
  std::memcpy(out.v.data(), row.data_ptr<float>(), out.size() * sizeof(float));
  return out;
}

PathologyMask binarize(const torch::Tensor& batch, int64_t i, double thr = 0.5) {
  auto row = batch[i][0].contiguous().to(torch::kFloat);
  PathologyMask out(static_cast<int>(row.size(0)), static_cast<int>(row.size(1)));
  const float* p = row.data_ptr<float>();
  for (size_t j = 0; j < out.size(); ++j) out.v[j] = p[j] > thr ? 1 : 0;
  return out;
}

std::vector<double> count_over_half(const torch::Tensor& probs) {
  auto n = probs.gt(0.5).sum({1, 2, 3}).to(torch::kDouble);
  std::vector<double> out(static_cast<size_t>(n.size(0)));
  for (int64_t i = 0; i < n.size(0); ++i) out[static_cast<size_t>(i)] = n[i].item<double>();
  return out;
}

struct SplitView {
  std::vector<const ImageSlice*> path_images;
  std::vector<const PathologyMask*> path_masks;
  std::vector<const ImageSlice*> healthy_images;
  std::vector<bool> healthy_deformed;
};

SplitView view_of(const Dataset& ds, Split split) {
  SplitView v;
  for (const auto& s : ds.samples) {
    if (s.split != split) continue;
    if (s.label == SliceLabel::pathological) {
      v.path_images.push_back(&s.image);
      v.path_masks.push_back(&s.mask);
    } else {
      v.healthy_images.push_back(&s.image);
      v.healthy_deformed.push_back(s.deformed);
    }
  }
  return v;
}

// Wrapping cursor over a shuffled index order.
class Wrap {
 public:
  Wrap(size_t n, Rng rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), size_t{0});
    rng_.shuffle(order_);
  }
  size_t next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<size_t> order_;
  size_t pos_ = 0;
  Rng rng_;
};

std::string cell_or_empty(double v, bool present) { return present ? fmt_f(v) : std::string(); }

}  // namespace

double ssim_single(const torch::Tensor& a, const torch::Tensor& b) {
  check_pair(a, b, "ssim");
  if (a.size(2) < kWindow || a.size(3) < kWindow)
    throw config_error("ssim needs images of at least 11 pixels per side");
  torch::NoGradGuard ng;
  auto win = gaussian_window();
  auto [ssim, cs] = ssim_cs(a.to(torch::kDouble), b.to(torch::kDouble), win);
  (void)cs;
  return ssim.mean().item<double>();
}

double ms_ssim(const torch::Tensor& a, const torch::Tensor& b) {
  return mean_of(ms_ssim_per_sample(a, b));
}

std::vector<double> identity_per_sample(const torch::Tensor& x_p, const torch::Tensor& x_th,
                                        const torch::Tensor& m_p) {
  check_pair(x_p, x_th, "identity");
  check_pair(x_p, m_p, "identity");
  auto keep = 1.0 - m_p;
  return ms_ssim_per_sample(x_p * keep, x_th * keep);
}

double identity_score(const torch::Tensor& x_p, const torch::Tensor& x_th,
                      const torch::Tensor& m_p) {
  return mean_of(identity_per_sample(x_p, x_th, m_p));
}

JudgeFn judge_from_net(SegmentorNet net) {
  if (!net) throw config_error("judge segmentor is null");
  return [net](const torch::Tensor& x) mutable {
    torch::NoGradGuard ng;
    net->eval();
    return net->forward(x);
  };
}

HealthinessResult healthiness(const torch::Tensor& synth, const torch::Tensor& input,
                              const JudgeFn& judge) {
  check_pair(synth, input, "healthiness");
  torch::NoGradGuard ng;
  HealthinessResult r;
  r.n_synth = count_over_half(judge(synth));
  r.n_input = count_over_half(judge(input));
  r.mean_n_synth = mean_of(r.n_synth);
  r.mean_n_input = mean_of(r.n_input);
  if (r.mean_n_input <= 0.0)
    throw numeric_error("healthiness undefined: the judge finds no pathology in the inputs");
  r.h = 1.0 - r.mean_n_synth / r.mean_n_input;
  return r;
}

void JudgeConfig::validate() const {
  if (epochs < 1 || finetune_epochs < 0) throw config_error("judge epochs must be positive");
  if (batch_size < 1) throw config_error("judge batch_size must be positive");
  if (lr <= 0.0) throw config_error("judge lr must be positive");
  net.validate();
}

Judge train_judge(const Dataset& ds, const JudgeConfig& cfg) {
  cfg.validate();
  auto train = view_of(ds, Split::train);
  if (train.path_images.empty()) throw data_error("judge training needs pathological train slices");

  Judge judge;
  judge.net = SegmentorNet(cfg.net);
  {
    auto g = at::detail::createCPUGenerator(mix(cfg.seed, 21));
    init_weights(*judge.net, g);
  }
  torch::optim::Adam opt(judge.net->parameters(), torch::optim::AdamOptions(cfg.lr));

  Rng master(cfg.seed);
  // The dice gradient vanishes on all-zero targets, so healthy slices enter
  // through an l1 pull toward the empty map instead.
  auto run_epochs = [&](const SplitView& v, int epochs, uint64_t stream) {
    if (v.path_images.empty()) return;
    for (int e = 0; e < epochs; ++e) {
      Rng er = master.fork(stream + static_cast<uint64_t>(e));
      std::vector<size_t> order(v.path_images.size());
      std::iota(order.begin(), order.end(), size_t{0});
      er.shuffle(order);
      Wrap healthy(std::max<size_t>(v.healthy_images.size(), 1), er.fork(2));
      judge.net->train();
      for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(cfg.batch_size)) {
        size_t n = std::min(order.size() - lo, static_cast<size_t>(cfg.batch_size));
        std::vector<const ImageSlice*> imgs(n);
        std::vector<const PathologyMask*> masks(n);
        for (size_t i = 0; i < n; ++i) {
          imgs[i] = v.path_images[order[lo + i]];
          masks[i] = v.path_masks[order[lo + i]];
        }
        auto x = stack_images(imgs, 0, n);
        auto m = stack_masks(masks, 0, n);
        auto loss = losses::dice_loss(judge.net->forward(x), m);
        if (!v.healthy_images.empty()) {
          std::vector<const ImageSlice*> hs(n);
          for (size_t i = 0; i < n; ++i) hs[i] = v.healthy_images[healthy.next()];
          loss = loss + judge.net->forward(stack_images(hs, 0, n)).abs().mean();
        }
        opt.zero_grad();
        loss.backward();
        opt.step();
      }
    }
  };

  run_epochs(train, cfg.epochs, 100);
  for (auto& group : opt.param_groups())
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(cfg.lr / 10.0);
  run_epochs(view_of(ds, Split::val), cfg.finetune_epochs, 500);

  auto test = view_of(ds, Split::test);
  if (!test.path_images.empty())
    judge.heldout_dice = segmentor_dice(judge.net, test.path_images, test.path_masks);
  return judge;
}

ImageSlice canny_edges(const ImageSlice& img, double sigma, double low, double high) {
  if (sigma <= 0.0) throw config_error("canny sigma must be positive");
  if (low < 0.0 || high < low) throw config_error("canny thresholds must satisfy 0 <= low <= high");
  const int h = img.h, w = img.w;
  ImageSlice out(h, w);
  if (h < 3 || w < 3) return out;

  auto clampi = [](int v, int lim) { return std::max(0, std::min(v, lim - 1)); };

  int rad = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * rad + 1));
  double ksum = 0.0;
  for (int i = -rad; i <= rad; ++i) {
    k[static_cast<size_t>(i + rad)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    ksum += k[static_cast<size_t>(i + rad)];
  }
  for (auto& v : k) v /= ksum;

  std::vector<double> tmp(img.size()), smooth(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i)
        acc += k[static_cast<size_t>(i + rad)] * img.at(y, clampi(x + i, w));
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i)
        acc += k[static_cast<size_t>(i + rad)] * tmp[static_cast<size_t>(clampi(y + i, h)) * w + x];
      smooth[static_cast<size_t>(y) * w + x] = acc;
    }

  auto sm = [&](int y, int x) { return smooth[static_cast<size_t>(clampi(y, h)) * w + clampi(x, w)]; };
  std::vector<double> mag(img.size()), gx(img.size()), gy(img.size());
  double max_mag = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double dx = sm(y - 1, x + 1) + 2.0 * sm(y, x + 1) + sm(y + 1, x + 1) -
                  sm(y - 1, x - 1) - 2.0 * sm(y, x - 1) - sm(y + 1, x - 1);
      double dy = sm(y + 1, x - 1) + 2.0 * sm(y + 1, x) + sm(y + 1, x + 1) -
                  sm(y - 1, x - 1) - 2.0 * sm(y - 1, x) - sm(y - 1, x + 1);
      size_t i = static_cast<size_t>(y) * w + x;
      gx[i] = dx;
      gy[i] = dy;
      mag[i] = std::hypot(dx, dy);
      max_mag = std::max(max_mag, mag[i]);
    }
  if (max_mag <= 0.0) return out;  // constant image
  for (auto& v : mag) v /= max_mag;

  auto mag_at = [&](int y, int x) {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return mag[static_cast<size_t>(y) * w + x];
  };
  std::vector<double> nms(img.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t i = static_cast<size_t>(y) * w + x;
      if (mag[i] <= 0.0) continue;
      double ang = std::atan2(gy[i], gx[i]) * 180.0 / 3.14159265358979323846;
      if (ang < 0.0) ang += 180.0;
      double n1, n2;
      if (ang < 22.5 || ang >= 157.5) {
        n1 = mag_at(y, x - 1), n2 = mag_at(y, x + 1);
      } else if (ang < 67.5) {
        n1 = mag_at(y - 1, x + 1), n2 = mag_at(y + 1, x - 1);
      } else if (ang < 112.5) {
        n1 = mag_at(y - 1, x), n2 = mag_at(y + 1, x);
      } else {
        n1 = mag_at(y - 1, x - 1), n2 = mag_at(y + 1, x + 1);
      }
      if (mag[i] >= n1 && mag[i] >= n2) nms[i] = mag[i];
    }

  std::vector<uint8_t> state(img.size(), 0);  // 0 none, 1 weak, 2 edge
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t i = static_cast<size_t>(y) * w + x;
      if (nms[i] >= high) {
        state[i] = 2;
        queue.emplace_back(y, x);
      } else if (nms[i] >= low) {
        state[i] = 1;
      }
    }
  while (!queue.empty()) {
    auto [y, x] = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        size_t j = static_cast<size_t>(ny) * w + nx;
        if (state[j] == 1) {
          state[j] = 2;
          queue.emplace_back(ny, nx);
        }
      }
  }
  for (size_t i = 0; i < img.size(); ++i) out.v[i] = state[i] == 2 ? 1.0f : 0.0f;
  return out;
}

DecNetImpl::DecNetImpl(int base_channels) {
  auto conv = [](int in, int outc) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, outc, 3).stride(2).padding(1));
  };
  c1 = register_module("c1", conv(1, base_channels));
  c2 = register_module("c2", conv(base_channels, base_channels * 2));
  c3 = register_module("c3", conv(base_channels * 2, base_channels * 4));
  head = register_module("head", torch::nn::Linear(base_channels * 4, 1));
}

torch::Tensor DecNetImpl::forward(const torch::Tensor& x) {
  check_batch_shape(x, 1, 1, "dec classifier");
  auto h = torch::leaky_relu(c1->forward(x), 0.2);
  h = torch::leaky_relu(c2->forward(h), 0.2);
  h = torch::leaky_relu(c3->forward(h), 0.2);
  h = torch::adaptive_avg_pool2d(h, {1, 1}).flatten(1);
  return head->forward(h).squeeze(1);
}

void DecConfig::validate() const {
  if (epochs < 1) throw config_error("dec epochs must be positive");
  if (batch_size < 1) throw config_error("dec batch_size must be positive");
  if (lr <= 0.0) throw config_error("dec lr must be positive");
}

DecClassifier train_dec_classifier(const Dataset& ds, const DecConfig& cfg) {
  cfg.validate();
  auto train = view_of(ds, Split::train);
  size_t n_deformed = static_cast<size_t>(
      std::count(train.healthy_deformed.begin(), train.healthy_deformed.end(), true));
  if (n_deformed == 0 || n_deformed == train.healthy_deformed.size())
    throw data_error(
        "deformation classifier needs both deformed and undeformed healthy slices; regenerate the "
        "dataset with deformation enabled");

  std::vector<ImageSlice> edges(train.healthy_images.size());
  for (size_t i = 0; i < edges.size(); ++i) edges[i] = canny_edges(*train.healthy_images[i]);
  std::vector<const ImageSlice*> edge_ptrs(edges.size());
  for (size_t i = 0; i < edges.size(); ++i) edge_ptrs[i] = &edges[i];
  auto x_all = stack_images(edge_ptrs, 0, edge_ptrs.size());
  auto y_all = torch::empty({static_cast<int64_t>(edges.size())}, torch::kFloat);
  for (size_t i = 0; i < edges.size(); ++i)
    y_all[static_cast<int64_t>(i)] = train.healthy_deformed[i] ? 0.0f : 1.0f;

  DecClassifier clf;
  clf.net = DecNet(8);
  {
    auto g = at::detail::createCPUGenerator(mix(cfg.seed, 22));
    init_weights(*clf.net, g);
  }
  torch::optim::Adam opt(clf.net->parameters(), torch::optim::AdamOptions(cfg.lr));

  Rng master(cfg.seed);
  for (int e = 0; e < cfg.epochs; ++e) {
    Rng er = master.fork(300 + static_cast<uint64_t>(e));
    std::vector<int64_t> order(edges.size());
    std::iota(order.begin(), order.end(), int64_t{0});
    er.shuffle(order);
    clf.net->train();
    for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(cfg.batch_size)) {
      size_t n = std::min(order.size() - lo, static_cast<size_t>(cfg.batch_size));
      auto idx = torch::from_blob(order.data() + lo, {static_cast<int64_t>(n)}, torch::kLong).clone();
      auto logits = clf.net->forward(x_all.index_select(0, idx));
      auto loss = torch::binary_cross_entropy_with_logits(logits, y_all.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }

  auto val = view_of(ds, Split::val);
  if (!val.healthy_images.empty()) {
    torch::NoGradGuard ng;
    clf.net->eval();
    size_t correct = 0;
    for (size_t i = 0; i < val.healthy_images.size(); ++i) {
      auto edge = canny_edges(*val.healthy_images[i]);
      std::vector<const ImageSlice*> one{&edge};
      bool says_free = clf.net->forward(stack_images(one, 0, 1)).item<float>() > 0.0f;
      if (says_free == !val.healthy_deformed[i]) ++correct;
    }
    clf.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(val.healthy_images.size());
  }
  return clf;
}

std::pair<double, std::vector<double>> dec_score(const DecClassifier& clf,
                                                 const std::vector<ImageSlice>& synth) {
  if (!clf.net) throw config_error("dec classifier is null");
  if (synth.empty()) throw data_error("dec score needs at least one image");
  torch::NoGradGuard ng;
  auto net = clf.net;
  net->eval();
  std::vector<double> per(synth.size());
  for (size_t lo = 0; lo < synth.size(); lo += 32) {
    size_t n = std::min(synth.size() - lo, size_t{32});
    std::vector<ImageSlice> edges(n);
    std::vector<const ImageSlice*> ptrs(n);
    for (size_t i = 0; i < n; ++i) {
      edges[i] = canny_edges(synth[lo + i]);
      ptrs[i] = &edges[i];
    }
    auto p = torch::sigmoid(net->forward(stack_images(ptrs, 0, n)));
    for (size_t i = 0; i < n; ++i) per[lo + i] = p[static_cast<int64_t>(i)].item<double>();
  }
  return {mean_of(per), per};
}

PathologyMask diff_map_segmentation(const ImageSlice& x_p, const ImageSlice& x_th,
                                    double threshold) {
  if (x_p.h != x_th.h || x_p.w != x_th.w)
    throw config_error("diff map inputs differ in shape");
  PathologyMask m(x_p.h, x_p.w);
  for (size_t i = 0; i < m.size(); ++i)
    m.v[i] = std::fabs(static_cast<double>(x_p.v[i]) - x_th.v[i]) > threshold ? 1 : 0;
  return m;
}

double dice_of_masks(const PathologyMask& a, const PathologyMask& b) {
  if (a.h != b.h || a.w != b.w) throw config_error("dice inputs differ in shape");
  uint64_t inter = 0;
  for (size_t i = 0; i < a.size(); ++i) inter += (a.v[i] != 0 && b.v[i] != 0) ? 1 : 0;
  return 2.0 * static_cast<double>(inter) /
         (static_cast<double>(a.sum() + b.sum()) + 1e-6);
}

double mask_iou(const PathologyMask& a, const PathologyMask& b) {
  if (a.h != b.h || a.w != b.w) throw config_error("iou inputs differ in shape");
  uint64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    bool pa = a.v[i] != 0, pb = b.v[i] != 0;
    inter += (pa && pb) ? 1 : 0;
    uni += (pa || pb) ? 1 : 0;
  }
  if (uni == 0) return 1.0;  // two empty masks agree
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double segmentor_dice(SegmentorNet s, const std::vector<const ImageSlice*>& images,
                      const std::vector<const PathologyMask*>& masks,
                      std::vector<double>* per_sample) {
  if (!s) throw config_error("segmentor is null");
  if (images.empty() || images.size() != masks.size())
    throw data_error("segmentor dice needs matching image and mask lists");
  torch::NoGradGuard ng;
  s->eval();
  std::vector<double> per(images.size());
  for (size_t lo = 0; lo < images.size(); lo += 16) {
    size_t n = std::min(images.size() - lo, size_t{16});
    auto pred = s->forward(stack_images(images, lo, n));
    for (size_t i = 0; i < n; ++i)
      per[lo + i] = dice_of_masks(binarize(pred, static_cast<int64_t>(i)), *masks[lo + i]);
  }
  if (per_sample) *per_sample = per;
  return mean_of(per);
}

ImageSlice pseudo_disease(ReconstructorNet r, const ImageSlice& x_h, const PathologyMask& m) {
  if (!r) throw config_error("reconstructor is null");
  if (x_h.h != m.h || x_h.w != m.w) throw config_error("pseudo disease inputs differ in shape");
  torch::NoGradGuard ng;
  r->eval();
  std::vector<const ImageSlice*> xs{&x_h};
  std::vector<const PathologyMask*> ms{&m};
  auto y = r->forward(stack_images(xs, 0, 1), stack_masks(ms, 0, 1));
  return slice_from(y, 0);
}

std::vector<IterPoint> iterate_generator(GeneratorNet g, const torch::Tensor& x_p,
                                         const torch::Tensor& m_p, const JudgeFn& judge, int k) {
  if (!g) throw config_error("generator is null");
  if (k < 1) throw config_error("iterate_generator needs k >= 1");
  torch::NoGradGuard ng;
  g->eval();
  std::vector<IterPoint> pts;
  auto cur = x_p;
  for (int i = 0; i < k; ++i) {
    cur = g->forward(cur);
    IterPoint p;
    p.id = identity_score(x_p, cur, m_p);
    p.h = healthiness(cur, x_p, judge).h;
    pts.push_back(p);
  }
  return pts;
}

MaskShiftOutcome mask_shift_diagnostic(const ModelBundle& b, const ImageSlice& x_p, int shift_px) {
  if (!b.g || !b.s || !b.r)
    throw config_error("mask shift diagnostic needs generator, segmentor and reconstructor");
  if (shift_px < 1) throw config_error("shift_px must be positive");
  torch::NoGradGuard ng;
  auto g = b.g;
  auto s = b.s;
  auto r = b.r;
  g->eval();
  s->eval();
  r->eval();

  MaskShiftOutcome out;
  std::vector<const ImageSlice*> xs{&x_p};
  auto x = stack_images(xs, 0, 1);
  auto m_soft = s->forward(x);
  auto m_bin = binarize(m_soft, 0);
  if (m_bin.sum() == 0) return out;

  const int h = x_p.h, w = x_p.w;
  auto on_brain = [&](int y, int xx) { return x_p.at(y, xx) > 0.1f; };
  const int dirs[4][2] = {{0, shift_px}, {0, -shift_px}, {shift_px, 0}, {-shift_px, 0}};
  int dy = 0, dx = 0;
  bool found = false;
  for (const auto& d : dirs) {
    uint64_t tot = 0, on = 0;
    bool inside = true;
    for (int y = 0; y < h && inside; ++y)
      for (int xx = 0; xx < w; ++xx) {
        if (!m_bin.at(y, xx)) continue;
        int ny = y + d[0], nx = xx + d[1];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) {
          inside = false;
          break;
        }
        ++tot;
        if (on_brain(ny, nx)) ++on;
      }
    if (inside && tot > 0 && on * 10 >= tot * 9) {
      dy = d[0];
      dx = d[1];
      found = true;
      break;
    }
  }
  if (!found) return out;  // lesion too close to the boundary for any shift

  auto acc = m_soft.accessor<float, 4>();
  auto shifted = torch::zeros_like(m_soft);
  auto sacc = shifted.accessor<float, 4>();
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      int ny = y + dy, nx = xx + dx;
      if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
      sacc[0][0][ny][nx] = acc[0][0][y][xx];
    }

  auto x_th = g->forward(x);
  auto recon = r->forward(x_th, shifted);
  auto m_re = binarize(s->forward(recon), 0);

  out.valid = true;
  out.iou_shifted = mask_iou(m_re, binarize(shifted, 0));
  out.iou_original = mask_iou(m_re, m_bin);
  return out;
}

MetricReport evaluate_bundle(const ModelBundle& b, const Dataset& ds, const Judge& judge,
                             const DecClassifier& clf) {
  if (!b.g) throw config_error("bundle has no generator");
  if (!judge.net) throw config_error("judge is null");
  auto test = view_of(ds, Split::test);
  if (test.path_images.empty()) throw data_error("evaluation needs pathological test slices");

  torch::NoGradGuard ng;
  auto g = b.g;
  g->eval();
  auto jf = judge_from_net(judge.net);

  MetricReport r;
  r.n_samples = static_cast<int>(test.path_images.size());
  r.has_segmentor = static_cast<bool>(b.s);
  std::vector<ImageSlice> synth_slices;
  synth_slices.reserve(test.path_images.size());

  for (size_t lo = 0; lo < test.path_images.size(); lo += 8) {
    size_t n = std::min(test.path_images.size() - lo, size_t{8});
    auto x = stack_images(test.path_images, lo, n);
    auto m = stack_masks(test.path_masks, lo, n);
    auto synth = g->forward(x);

    for (double v : identity_per_sample(x, synth, m)) r.id_per_sample.push_back(v);
    for (double v : count_over_half(jf(synth))) r.judge_n_synth.push_back(v);
    for (double v : count_over_half(jf(x))) r.judge_n_input.push_back(v);
    for (size_t i = 0; i < n; ++i) {
      auto s = slice_from(synth, static_cast<int64_t>(i));
      r.diffmap_dice_per_sample.push_back(
          dice_of_masks(diff_map_segmentation(*test.path_images[lo + i], s), *test.path_masks[lo + i]));
      synth_slices.push_back(std::move(s));
    }
  }

  double mean_in = mean_of(r.judge_n_input);
  if (mean_in <= 0.0)
    throw numeric_error("healthiness undefined: the judge finds no pathology in the inputs");
  r.h = 1.0 - mean_of(r.judge_n_synth) / mean_in;
  r.id = mean_of(r.id_per_sample);
  r.dice_diffmap = mean_of(r.diffmap_dice_per_sample);
  if (b.s) r.dice_segmentor = segmentor_dice(b.s, test.path_images, test.path_masks, &r.seg_dice_per_sample);
  auto [dec_mean, dec_per] = dec_score(clf, synth_slices);
  r.dec = dec_mean;
  r.dec_per_sample = dec_per;
  r.judge_dice = judge.heldout_dice;
  r.dec_accuracy = clf.heldout_accuracy;
  return r;
}

double cycle_hh_residual(const ModelBundle& b, const Dataset& ds, Split split) {
  if (!b.r) throw config_error("bundle has no reconstructor");
  auto v = view_of(ds, split);
  if (v.healthy_images.empty()) throw data_error("residual needs healthy slices in the split");
  torch::NoGradGuard ng;
  auto recon = b.r;
  recon->eval();
  double acc = 0.0;
  for (size_t lo = 0; lo < v.healthy_images.size(); lo += 8) {
    size_t n = std::min(v.healthy_images.size() - lo, size_t{8});
    auto x = stack_images(v.healthy_images, lo, n);
    auto rec = recon->forward(x, torch::zeros_like(x));
    auto per = (rec - x).abs().mean({1, 2, 3});
    for (size_t i = 0; i < n; ++i) acc += per[static_cast<int64_t>(i)].item<double>();
  }
  return acc / static_cast<double>(v.healthy_images.size());
}

void write_report_csv(const MetricReport& r, const std::filesystem::path& path) {
  CsvWriter csv(path.string());
  csv.row({"row_type", "index", "h", "id", "dec", "diffmap_dice", "seg_dice", "judge_dice",
           "dec_accuracy", "n_samples", "judge_n_synth", "judge_n_input"});
  csv.row({"aggregate", "", fmt_f(r.h), fmt_f(r.id), fmt_f(r.dec), fmt_f(r.dice_diffmap),
           cell_or_empty(r.dice_segmentor, r.has_segmentor), fmt_f(r.judge_dice),
           fmt_f(r.dec_accuracy), std::to_string(r.n_samples), "", ""});
  for (size_t i = 0; i < r.id_per_sample.size(); ++i)
    csv.row({"sample", std::to_string(i), "", fmt_f(r.id_per_sample[i]),
             fmt_f(r.dec_per_sample[i]), fmt_f(r.diffmap_dice_per_sample[i]),
             cell_or_empty(r.has_segmentor ? r.seg_dice_per_sample[i] : 0.0, r.has_segmentor),
             "", "", "", fmt_f(r.judge_n_synth[i], 1), fmt_f(r.judge_n_input[i], 1)});
  csv.flush();
}

MetricReport read_report_csv(const std::filesystem::path& path) {
  auto rows = read_csv(path.string());
  if (rows.empty()) throw data_error("empty report: " + path.string());
  const std::vector<std::string> expect{"row_type",   "index",        "h",
                                        "id",         "dec",          "diffmap_dice",
                                        "seg_dice",   "judge_dice",   "dec_accuracy",
                                        "n_samples",  "judge_n_synth", "judge_n_input"};
  if (rows[0] != expect) throw data_error("unrecognized report header: " + path.string());
  MetricReport r;
  bool saw_aggregate = false;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& c = rows[i];
    if (c.size() != expect.size())
      throw data_error("malformed report row in " + path.string());
    if (c[0] == "aggregate") {
      r.h = std::stod(c[2]);
      r.id = std::stod(c[3]);
      r.dec = std::stod(c[4]);
      r.dice_diffmap = std::stod(c[5]);
      r.has_segmentor = !c[6].empty();
      if (r.has_segmentor) r.dice_segmentor = std::stod(c[6]);
      r.judge_dice = std::stod(c[7]);
      r.dec_accuracy = std::stod(c[8]);
      r.n_samples = std::stoi(c[9]);
      saw_aggregate = true;
    } else if (c[0] == "sample") {
      r.id_per_sample.push_back(std::stod(c[3]));
      r.dec_per_sample.push_back(std::stod(c[4]));
      r.diffmap_dice_per_sample.push_back(std::stod(c[5]));
      if (!c[6].empty()) r.seg_dice_per_sample.push_back(std::stod(c[6]));
      r.judge_n_synth.push_back(std::stod(c[10]));
      r.judge_n_input.push_back(std::stod(c[11]));
    } else {
      throw data_error("unknown row type '" + c[0] + "' in " + path.string());
    }
  }
  if (!saw_aggregate) throw data_error("report has no aggregate row: " + path.string());
  return r;
}

}  // namespace ph
