#include "train.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "checkpoint.hpp"
#include "csv.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace ph {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed ^ (salt * 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct Cursor {
  std::vector<int> order;
  std::size_t pos = 0;

  explicit Cursor(int n) {
    order.resize(static_cast<std::size_t>(std::max(n, 0)));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    pos = order.size();  // force a shuffle on first take
  }

  std::vector<int> take(int k, Rng& rng) {
    if (order.empty()) throw internal_error("batch cursor over an empty pool");
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      if (pos >= order.size()) {
        rng.shuffle(order);
        pos = 0;
      }
      out.push_back(order[pos++]);
    }
    return out;
  }
};

torch::Tensor images_at(const std::vector<TrainItem>& items, const std::vector<int>& idx, int h,
                        int w) {
  auto t = torch::empty({static_cast<long>(idx.size()), 1, h, w});
  float* dst = t.data_ptr<float>();
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::memcpy(dst + i * plane, items[static_cast<std::size_t>(idx[i])].image->v.data(),
                plane * sizeof(float));
  return t;
}

void mask_to_row(const PathologyMask& m, float* dst) {
  for (std::size_t i = 0; i < m.v.size(); ++i) dst[i] = static_cast<float>(m.v[i]);
}

torch::Tensor masks_at(const std::vector<TrainItem>& items, const std::vector<int>& idx, int h,
                       int w, TrainStats& stats) {
  auto t = torch::empty({static_cast<long>(idx.size()), 1, h, w});
  float* dst = t.data_ptr<float>();
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (std::size_t i = 0; i < idx.size(); ++i)
    mask_to_row(*items[static_cast<std::size_t>(idx[i])].mask, dst + i * plane);
  stats.mask_batches_built += 1;
  return t;
}

torch::Tensor pool_masks_at(const std::vector<const PathologyMask*>& pool,
                            const std::vector<int>& idx, int h, int w, TrainStats& stats) {
  auto t = torch::empty({static_cast<long>(idx.size()), 1, h, w});
  float* dst = t.data_ptr<float>();
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (std::size_t i = 0; i < idx.size(); ++i)
    mask_to_row(*pool[static_cast<std::size_t>(idx[i])], dst + i * plane);
  stats.mask_batches_built += 1;
  return t;
}

// Translates each pool mask so its bounding box lands on the brain region of
// the matching healthy image. Tries random in-brain centers and keeps the
// first placement with at least 90% of lesion pixels on brain; falls back to
// the original position when nothing fits.
torch::Tensor place_pool_masks(const std::vector<const PathologyMask*>& pool,
                               const std::vector<int>& idx,
                               const std::vector<TrainItem>& healthy,
                               const std::vector<int>& hidx, int h, int w, Rng& rng,
                               TrainStats& stats) {
  auto t = torch::zeros({static_cast<long>(idx.size()), 1, h, w});
  float* dst = t.data_ptr<float>();
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const PathologyMask& m = *pool[static_cast<std::size_t>(idx[i])];
    const ImageSlice& img = *healthy[static_cast<std::size_t>(hidx[i])].image;
    int y0 = h, y1 = -1, x0 = w, x1 = -1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (m.v[static_cast<std::size_t>(y) * w + x]) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
    float* out = dst + i * plane;
    if (y1 < 0) continue;  // empty mask stays empty
    std::vector<std::pair<int, int>> brain;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (img.v[static_cast<std::size_t>(y) * w + x] > 0.1f) brain.emplace_back(y, x);
    const int cy = (y0 + y1) / 2, cx = (x0 + x1) / 2;
    int best_dy = 0, best_dx = 0;
    bool found = false;
    for (int attempt = 0; attempt < 30 && !found && !brain.empty(); ++attempt) {
      auto [ty, tx] = brain[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(brain.size()) - 1))];
      const int dy = ty - cy, dx = tx - cx;
      if (y0 + dy < 0 || y1 + dy >= h || x0 + dx < 0 || x1 + dx >= w) continue;
      int on = 0, tot = 0;
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          if (m.v[static_cast<std::size_t>(y) * w + x]) {
            ++tot;
            if (img.v[static_cast<std::size_t>(y + dy) * w + (x + dx)] > 0.1f) ++on;
          }
      if (on * 10 >= tot * 9) {
        best_dy = dy;
        best_dx = dx;
        found = true;
      }
    }
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (m.v[static_cast<std::size_t>(y) * w + x])
          out[static_cast<std::size_t>(y + best_dy) * w + (x + best_dx)] = 1.0f;
  }
  stats.mask_batches_built += 1;
  return t;
}

const char* kRunFormat = "pseudoheal-run-v1";

std::vector<std::string> net_prefixes(const ModelBundle& b) {
  std::vector<std::string> out;
  if (b.g) out.push_back("g");
  if (b.s) out.push_back("s");
  if (b.r) out.push_back("r");
  if (b.d_x) out.push_back("d_x");
  if (b.d_m) out.push_back("d_m");
  if (b.d_p) out.push_back("d_p");
  if (b.g_hp) out.push_back("g_hp");
  return out;
}

torch::nn::Module& net_by_prefix(ModelBundle& b, const std::string& p) {
  if (p == "g") return *b.g;
  if (p == "s") return *b.s;
  if (p == "r") return *b.r;
  if (p == "d_x") return *b.d_x;
  if (p == "d_m") return *b.d_m;
  if (p == "d_p") return *b.d_p;
  if (p == "g_hp") return *b.g_hp;
  throw internal_error("unknown net prefix " + p);
}

struct Optims {
  std::unique_ptr<torch::optim::Adam> gen, d_x, d_m, d_p;
};

void save_run_ckpt(ModelBundle& b, const Optims& o, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.meta["format"] = kRunFormat;
  ck.meta["config"] = b.cfg.to_json();
  ck.meta["epoch"] = b.epoch;
  ck.meta["step"] = b.step;
  ck.meta["nets"] = net_prefixes(b);
  for (const auto& p : net_prefixes(b)) put_module(ck, p, net_by_prefix(b, p));
  if (o.gen) put_adam(ck, "adam.gen", *o.gen);
  if (o.d_x) put_adam(ck, "adam.d_x", *o.d_x);
  if (o.d_m) put_adam(ck, "adam.d_m", *o.d_m);
  if (o.d_p) put_adam(ck, "adam.d_p", *o.d_p);
  save_checkpoint(path.string(), ck);
}

ModelBundle bundle_from_ckpt(const Checkpoint& ck) {
  if (!ck.meta.contains("format") || ck.meta["format"] != kRunFormat)
    throw data_error("not a training checkpoint");
  ModelBundle b;
  b.cfg = TrainConfig::from_json(ck.meta["config"]);
  b.epoch = ck.meta["epoch"].get<int>();
  b.step = ck.meta["step"].get<std::int64_t>();
  auto gen = at::detail::createCPUGenerator(0);
  for (const auto& pj : ck.meta["nets"]) {
    const std::string p = pj.get<std::string>();
    if (p == "g") b.g = GeneratorNet(b.cfg.net, 1);
    else if (p == "s") b.s = SegmentorNet(b.cfg.net);
    else if (p == "r") b.r = ReconstructorNet(b.cfg.net);
    else if (p == "d_x") b.d_x = CriticNet(b.cfg.net);
    else if (p == "d_m") b.d_m = CriticNet(b.cfg.net);
    else if (p == "d_p") b.d_p = CriticNet(b.cfg.net);
    else if (p == "g_hp") b.g_hp = GeneratorNet(b.cfg.net, 1);
    else throw data_error("unknown net prefix in checkpoint: " + p);
    get_module(ck, p, net_by_prefix(b, p));
  }
  return b;
}

bool row_finite(const std::vector<double>& vals) {
  for (double v : vals)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

std::string to_string(TrainSetting s) {
  switch (s) {
    case TrainSetting::paired: return "paired";
    case TrainSetting::unpaired: return "unpaired";
    case TrainSetting::semi: return "semi";
  }
  throw internal_error("bad TrainSetting");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::no_cycle_hh: return "no_cycle_hh";
    case Ablation::cycle_hp: return "cycle_hp";
    case Ablation::lsgan: return "lsgan";
  }
  throw internal_error("bad Ablation");
}

std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::none: return "none";
    case Baseline::conditional_gan: return "conditional_gan";
    case Baseline::cyclegan: return "cyclegan";
  }
  throw internal_error("bad Baseline");
}

TrainSetting train_setting_from_string(const std::string& s) {
  if (s == "paired") return TrainSetting::paired;
  if (s == "unpaired") return TrainSetting::unpaired;
  if (s == "semi") return TrainSetting::semi;
  throw config_error("unknown training setting: " + s);
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "none") return Ablation::none;
  if (s == "no_cycle_hh") return Ablation::no_cycle_hh;
  if (s == "cycle_hp") return Ablation::cycle_hp;
  if (s == "lsgan") return Ablation::lsgan;
  throw config_error("unknown ablation: " + s);
}

Baseline baseline_from_string(const std::string& s) {
  if (s == "none") return Baseline::none;
  if (s == "conditional_gan") return Baseline::conditional_gan;
  if (s == "cyclegan") return Baseline::cyclegan;
  throw config_error("unknown baseline: " + s);
}

void TrainConfig::validate() const {
  if (semi_ratio < 0.0 || semi_ratio > 1.0)
    throw config_error("semi_ratio must be in [0,1]");
  if (epochs < 1) throw config_error("epochs must be >= 1");
  if (batch_size < 1) throw config_error("batch_size must be >= 1");
  if (critic_iters < 1 || critic_iters_warm < 1)
    throw config_error("critic iteration counts must be >= 1");
  if (warm_epochs < 0) throw config_error("warm_epochs must be >= 0");
  if (lr <= 0.0) throw config_error("lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0) throw config_error("beta1 must be in [0,1)");
  if (checkpoint_every < 0) throw config_error("checkpoint_every must be >= 0");
  if (baseline != Baseline::none && ablation != Ablation::none)
    throw config_error("baseline and ablation are mutually exclusive");
  net.validate();
  weights.validate();
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["setting"] = ph::to_string(setting);
  j["semi_ratio"] = semi_ratio;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["critic_iters_warm"] = critic_iters_warm;
  j["warm_epochs"] = warm_epochs;
  j["critic_iters"] = critic_iters;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["seed"] = seed;
  j["ablation"] = ph::to_string(ablation);
  j["baseline"] = ph::to_string(baseline);
  j["checkpoint_every"] = checkpoint_every;
  j["net"] = {{"levels", net.levels},
              {"base_channels", net.base_channels},
              {"critic_base_channels", net.critic_base_channels},
              {"instance_norm", net.instance_norm},
              {"leaky_slope", net.leaky_slope}};
  j["weights"] = {{"l1", weights.l1},           {"l2", weights.l2},
                  {"l3", weights.l3},           {"l4", weights.l4},
                  {"l5_paired", weights.l5_paired}, {"l5_unpaired", weights.l5_unpaired},
                  {"gp", weights.gp}};
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.setting = train_setting_from_string(j.at("setting").get<std::string>());
  c.semi_ratio = j.at("semi_ratio").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.critic_iters_warm = j.at("critic_iters_warm").get<int>();
  c.warm_epochs = j.at("warm_epochs").get<int>();
  c.critic_iters = j.at("critic_iters").get<int>();
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
  c.baseline = baseline_from_string(j.at("baseline").get<std::string>());
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  const auto& n = j.at("net");
  c.net.levels = n.at("levels").get<int>();
  c.net.base_channels = n.at("base_channels").get<int>();
  c.net.critic_base_channels = n.at("critic_base_channels").get<int>();
  c.net.instance_norm = n.at("instance_norm").get<bool>();
  c.net.leaky_slope = n.at("leaky_slope").get<double>();
  const auto& w = j.at("weights");
  c.weights.l1 = w.at("l1").get<double>();
  c.weights.l2 = w.at("l2").get<double>();
  c.weights.l3 = w.at("l3").get<double>();
  c.weights.l4 = w.at("l4").get<double>();
  c.weights.l5_paired = w.at("l5_paired").get<double>();
  c.weights.l5_unpaired = w.at("l5_unpaired").get<double>();
  c.weights.gp = w.at("gp").get<double>();
  return c;
}

TrainData make_train_data(const Dataset& ds) {
  TrainData d;
  d.height = ds.height;
  d.width = ds.width;
  for (const auto& s : ds.samples) {
    if (s.split != Split::train) continue;
    TrainItem item{&s.image, &s.mask};
    if (s.label == SliceLabel::pathological) d.pathological.push_back(item);
    else d.healthy.push_back(item);
  }
  d.mask_pool = ds.masks_of(Split::maskpool);
  return d;
}

std::vector<std::string> loss_csv_columns(const TrainConfig& cfg) {
  if (cfg.baseline == Baseline::cyclegan)
    return {"step",   "epoch",  "l_gan_ph", "l_gan_hp", "l_cc_p",
            "l_cc_h", "total",  "critic_h", "critic_p"};
  if (cfg.baseline == Baseline::conditional_gan)
    return {"step", "epoch", "l_gan1", "total", "critic_x"};
  std::vector<std::string> cols{"step", "epoch", "l_gan1"};
  const bool cycle2 = cfg.ablation != Ablation::no_cycle_hh;
  if (cycle2) cols.push_back("l_gan2");
  cols.push_back("l_cc1");
  if (cycle2) cols.push_back("l_cc2");
  if (cfg.setting != TrainSetting::unpaired) cols.push_back("l_seg_dice");
  if (cfg.setting != TrainSetting::paired) cols.push_back("l_seg_adv");
  cols.push_back("total");
  cols.push_back("critic_x");
  if (cfg.setting != TrainSetting::paired) cols.push_back("critic_m");
  if (cfg.ablation == Ablation::cycle_hp) cols.push_back("critic_p");
  return cols;
}

ModelBundle train_model(const TrainData& data, const TrainConfig& cfg,
                        const std::filesystem::path& out_dir, TrainStats* stats_out) {
  cfg.validate();
  if (data.pathological.empty()) throw data_error("training needs pathological slices");
  if (data.healthy.empty()) throw data_error("training needs healthy slices");
  if (data.height < 1 || data.width < 1) throw data_error("training data has no shape");

  const bool proposed = cfg.baseline == Baseline::none;
  const bool ls = cfg.ablation == Ablation::lsgan;
  const bool cycle2 = proposed && cfg.ablation != Ablation::no_cycle_hh;
  const bool hp = cfg.ablation == Ablation::cycle_hp;
  const bool need_dm = proposed && cfg.setting != TrainSetting::paired;
  if (need_dm && data.mask_pool.empty())
    throw data_error("unpaired and semi settings need a mask pool from held-out subjects");
  if (hp && data.mask_pool.empty())
    throw data_error("cycle_hp needs a mask pool to synthesize diseased images from");

  const int n_p = static_cast<int>(data.pathological.size());
  const int n_h = static_cast<int>(data.healthy.size());
  const int h = data.height, w = data.width;

  Rng master(cfg.seed);

  // Which pathological samples carry their ground-truth mask into training.
  std::vector<char> has_gt(static_cast<std::size_t>(n_p), 0);
  if (cfg.setting == TrainSetting::paired) {
    std::fill(has_gt.begin(), has_gt.end(), 1);
  } else if (cfg.setting == TrainSetting::semi) {
    std::vector<int> order(static_cast<std::size_t>(n_p));
    for (int i = 0; i < n_p; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng desig = master.fork(7);
    desig.shuffle(order);
    const int k = static_cast<int>(std::lround(cfg.semi_ratio * n_p));
    for (int i = 0; i < k; ++i) has_gt[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  }
  std::vector<int> unsup_idx;
  for (int i = 0; i < n_p; ++i)
    if (!has_gt[static_cast<std::size_t>(i)]) unsup_idx.push_back(i);

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream cf(out_dir / "config.json");
    cf << cfg.to_json().dump(2) << "\n";
  }

  ModelBundle b;
  b.cfg = cfg;
  auto init_net = [&](torch::nn::Module& m, std::uint64_t salt) {
    auto g = at::detail::createCPUGenerator(mix(cfg.seed, salt));
    init_weights(m, g);
  };
  if (cfg.baseline == Baseline::cyclegan) {
    b.g = GeneratorNet(cfg.net, 1);
    b.g_hp = GeneratorNet(cfg.net, 1);
    b.d_x = CriticNet(cfg.net);
    b.d_p = CriticNet(cfg.net);
    init_net(*b.g, 1);
    init_net(*b.g_hp, 2);
    init_net(*b.d_x, 3);
    init_net(*b.d_p, 4);
  } else if (cfg.baseline == Baseline::conditional_gan) {
    b.g = GeneratorNet(cfg.net, 1);
    b.d_x = CriticNet(cfg.net);
    init_net(*b.g, 1);
    init_net(*b.d_x, 3);
  } else {
    b.g = GeneratorNet(cfg.net, 1);
    b.s = SegmentorNet(cfg.net);
    b.r = ReconstructorNet(cfg.net);
    b.d_x = CriticNet(cfg.net);
    init_net(*b.g, 1);
    init_net(*b.s, 5);
    init_net(*b.r, 6);
    init_net(*b.d_x, 3);
    if (need_dm) {
      b.d_m = CriticNet(cfg.net);
      init_net(*b.d_m, 7);
    }
    if (hp) {
      b.d_p = CriticNet(cfg.net);
      init_net(*b.d_p, 4);
    }
  }

  Optims opt;
  {
    std::vector<torch::Tensor> gen_params = b.g->parameters();
    if (b.s)
      for (auto& p : b.s->parameters()) gen_params.push_back(p);
    if (b.r)
      for (auto& p : b.r->parameters()) gen_params.push_back(p);
    if (b.g_hp)
      for (auto& p : b.g_hp->parameters()) gen_params.push_back(p);
    auto adam = [&](const std::vector<torch::Tensor>& ps) {
      return std::make_unique<torch::optim::Adam>(
          ps, torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, 0.999}));
    };
    opt.gen = adam(gen_params);
    opt.d_x = adam(b.d_x->parameters());
    if (b.d_m) opt.d_m = adam(b.d_m->parameters());
    if (b.d_p) opt.d_p = adam(b.d_p->parameters());
  }

  TrainStats stats;
  int start_epoch = 0;
  const auto last_path = out_dir / "last.ckpt";
  if (std::filesystem::exists(last_path)) {
    auto ck = load_checkpoint(last_path.string());
    // Resume tolerates a changed epoch budget so interrupted or extended runs
    // continue; everything else must match exactly.
    auto stored = ck.meta.value("config", nlohmann::json());
    auto wanted = cfg.to_json();
    stored.erase("epochs");
    wanted.erase("epochs");
    if (stored != wanted)
      throw config_error("existing checkpoint in " + out_dir.string() +
                         " was trained with a different config");
    for (const auto& p : net_prefixes(b)) get_module(ck, p, net_by_prefix(b, p));
    b.epoch = ck.meta["epoch"].get<int>();
    b.step = ck.meta["step"].get<std::int64_t>();
    get_adam(ck, "adam.gen", *opt.gen);
    get_adam(ck, "adam.d_x", *opt.d_x);
    if (opt.d_m) get_adam(ck, "adam.d_m", *opt.d_m);
    if (opt.d_p) get_adam(ck, "adam.d_p", *opt.d_p);
    start_epoch = b.epoch;
    stats.resumed = true;
  }

  const auto cols = loss_csv_columns(cfg);
  const auto csv_path = out_dir / "losses.csv";
  std::vector<std::vector<std::string>> kept_rows;
  if (stats.resumed && std::filesystem::exists(csv_path)) {
    auto rows = read_csv(csv_path.string());
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].size() >= 2 && std::stoi(rows[i][1]) < start_epoch) kept_rows.push_back(rows[i]);
  }
  CsvWriter csv(csv_path.string());
  csv.row(cols);
  for (const auto& r : kept_rows) csv.row(r);
  csv.flush();

  const auto& lw = cfg.weights;

  auto critic_step = [&](CriticNet& d, torch::optim::Adam& o, const torch::Tensor& loss) {
    (void)d;
    o.zero_grad();
    loss.backward();
    o.step();
  };
  auto adv_critic = [&](CriticNet& d, const torch::Tensor& real, const torch::Tensor& fake,
                        torch::Generator& tgen) {
    return ls ? losses::lsgan_critic_loss(d, real, fake)
              : losses::wgan_critic_loss(d, real, fake, lw.gp, tgen);
  };
  auto adv_gen = [&](CriticNet& d, const torch::Tensor& fake) {
    return ls ? losses::lsgan_gen_loss(d, fake) : losses::wgan_gen_loss(d, fake);
  };

  const int steps_per_epoch = (n_p + cfg.batch_size - 1) / cfg.batch_size;

  int cur_epoch = start_epoch;
  auto fail_nan = [&](double v) {
    if (std::isfinite(v)) return;
    save_run_ckpt(b, opt, out_dir / "diagnostic.ckpt");
    throw numeric_error("non-finite loss at step " + std::to_string(b.step + 1) + " (epoch " +
                        std::to_string(cur_epoch) + "); diagnostic checkpoint written");
  };

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    cur_epoch = epoch;
    auto tgen = at::detail::createCPUGenerator(mix(cfg.seed, 0x5DEECE66Dull + epoch));
    Rng er = master.fork(1000 + static_cast<std::uint64_t>(epoch));
    Cursor cur_p(n_p), cur_h(n_h), cur_unsup(static_cast<int>(unsup_idx.size())),
        cur_pool(static_cast<int>(data.mask_pool.size()));

    std::int64_t gen_updates = 0, dx_updates = 0, dm_updates = 0;
    const int k_critic = epoch < cfg.warm_epochs ? cfg.critic_iters_warm : cfg.critic_iters;

    for (int step = 0; step < steps_per_epoch; ++step) {
      double last_dx = 0.0, last_dm = 0.0, last_dp = 0.0;

      for (int it = 0; it < k_critic; ++it) {
        if (cfg.baseline == Baseline::cyclegan) {
          auto xp = images_at(data.pathological, cur_p.take(cfg.batch_size, er), h, w);
          auto xh = images_at(data.healthy, cur_h.take(cfg.batch_size, er), h, w);
          torch::Tensor fake_h, fake_p;
          {
            torch::NoGradGuard ng;
            fake_h = b.g->forward(xp);
            fake_p = b.g_hp->forward(xh);
          }
          auto ldx = adv_critic(b.d_x, xh, fake_h, tgen);
          critic_step(b.d_x, *opt.d_x, ldx);
          auto ldp = adv_critic(b.d_p, xp, fake_p, tgen);
          critic_step(b.d_p, *opt.d_p, ldp);
          last_dx = ldx.item<double>();
          last_dp = ldp.item<double>();
          fail_nan(last_dx);
          fail_nan(last_dp);
          ++dx_updates;
        } else if (cfg.baseline == Baseline::conditional_gan) {
          auto xp = images_at(data.pathological, cur_p.take(cfg.batch_size, er), h, w);
          auto xh = images_at(data.healthy, cur_h.take(cfg.batch_size, er), h, w);
          torch::Tensor fake;
          {
            torch::NoGradGuard ng;
            fake = b.g->forward(xp);
          }
          auto ldx = lw.l1 * adv_critic(b.d_x, xh, fake, tgen);
          critic_step(b.d_x, *opt.d_x, ldx);
          last_dx = ldx.item<double>();
          fail_nan(last_dx);
          ++dx_updates;
        } else {
          auto xp = images_at(data.pathological, cur_p.take(cfg.batch_size, er), h, w);
          auto xh_real = images_at(data.healthy, cur_h.take(cfg.batch_size, er), h, w);
          torch::Tensor fake1;
          {
            torch::NoGradGuard ng;
            fake1 = b.g->forward(xp);
          }
          auto ldx = lw.l1 * adv_critic(b.d_x, xh_real, fake1, tgen);
          if (cycle2) {
            auto xh_in = images_at(data.healthy, cur_h.take(cfg.batch_size, er), h, w);
            auto xh_real2 = images_at(data.healthy, cur_h.take(cfg.batch_size, er), h, w);
            torch::Tensor fake2;
            {
              torch::NoGradGuard ng;
              fake2 = b.r->forward(xh_in, torch::zeros_like(xh_in));
            }
            ldx = ldx + lw.l2 * adv_critic(b.d_x, xh_real2, fake2, tgen);
          }
          critic_step(b.d_x, *opt.d_x, ldx);
          last_dx = ldx.item<double>();
          fail_nan(last_dx);
          ++dx_updates;

          if (hp) {
            auto hidx = cur_h.take(cfg.batch_size, er);
            auto xh_in = images_at(data.healthy, hidx, h, w);
            auto m_in = place_pool_masks(data.mask_pool, cur_pool.take(cfg.batch_size, er),
                                         data.healthy, hidx, h, w, er, stats);
            auto xp_real = images_at(data.pathological, cur_p.take(cfg.batch_size, er), h, w);
            torch::Tensor fake_p;
            {
              torch::NoGradGuard ng;
              fake_p = b.r->forward(xh_in, m_in);
            }
            auto ldp = lw.l2 * adv_critic(b.d_p, xp_real, fake_p, tgen);
            critic_step(b.d_p, *opt.d_p, ldp);
            last_dp = ldp.item<double>();
            fail_nan(last_dp);
          }

          if (b.d_m && !unsup_idx.empty()) {
            std::vector<int> uid;
            for (int j : cur_unsup.take(cfg.batch_size, er))
              uid.push_back(unsup_idx[static_cast<std::size_t>(j)]);
            auto xu = images_at(data.pathological, uid, h, w);
            auto m_real = pool_masks_at(data.mask_pool, cur_pool.take(cfg.batch_size, er), h, w,
                                        stats);
            torch::Tensor fake_m;
            {
              torch::NoGradGuard ng;
              fake_m = b.s->forward(xu);
            }
            auto ldm = adv_critic(b.d_m, m_real, fake_m, tgen);
            critic_step(b.d_m, *opt.d_m, ldm);
            last_dm = ldm.item<double>();
            fail_nan(last_dm);
            ++dm_updates;
          }
        }
      }

      std::vector<double> vals;
      double total_val = 0.0;
      torch::Tensor total;

      if (cfg.baseline == Baseline::cyclegan) {
        auto xp = images_at(data.pathological, cur_p.take(cfg.batch_size, er), h, w);
        auto xh = images_at(data.healthy, cur_h.take(cfg.batch_size, er), h, w);
        auto fake_h = b.g->forward(xp);
        auto fake_p = b.g_hp->forward(xh);
        auto gan_ph = adv_gen(b.d_x, fake_h);
        auto gan_hp = adv_gen(b.d_p, fake_p);
        auto cc_p = (b.g_hp->forward(fake_h) - xp).abs().mean();
        auto cc_h = (b.g->forward(fake_p) - xh).abs().mean();
        total = lw.l1 * (gan_ph + gan_hp) + lw.l3 * (cc_p + cc_h);
        total_val = total.item<double>();
        vals = {gan_ph.item<double>(), gan_hp.item<double>(), cc_p.item<double>(),
                cc_h.item<double>(),   total_val,             last_dx,
                last_dp};
      } else if (cfg.baseline == Baseline::conditional_gan) {
        auto xp = images_at(data.pathological, cur_p.take(cfg.batch_size, er), h, w);
        auto gan1 = adv_gen(b.d_x, b.g->forward(xp));
        total = lw.l1 * gan1;
        total_val = total.item<double>();
        vals = {gan1.item<double>(), total_val, last_dx};
      } else {
        auto pidx = cur_p.take(cfg.batch_size, er);
        auto xp = images_at(data.pathological, pidx, h, w);
        auto xt_h = b.g->forward(xp);
        auto mt_p = b.s->forward(xp);
        auto xhat_p = b.r->forward(xt_h, mt_p);
        auto gan1 = adv_gen(b.d_x, xt_h);
        auto cc1 = (xhat_p - xp).abs().mean();
        total = lw.l1 * gan1 + lw.l3 * cc1;

        double gan2_val = 0.0, cc2_val = 0.0;
        if (cycle2 && !hp) {
          auto xh = images_at(data.healthy, cur_h.take(cfg.batch_size, er), h, w);
          auto xbar = b.r->forward(xh, torch::zeros_like(xh));
          auto gan2 = adv_gen(b.d_x, xbar);
          auto cc2 = (b.g->forward(xbar) - xh).abs().mean() + b.s->forward(xbar).abs().mean();
          total = total + lw.l2 * gan2 + lw.l4 * cc2;
          gan2_val = gan2.item<double>();
          cc2_val = cc2.item<double>();
        } else if (hp) {
          auto hidx = cur_h.take(cfg.batch_size, er);
          auto xh = images_at(data.healthy, hidx, h, w);
          auto m_in = place_pool_masks(data.mask_pool, cur_pool.take(cfg.batch_size, er),
                                       data.healthy, hidx, h, w, er, stats);
          auto xbar_p = b.r->forward(xh, m_in);
          auto gan2 = adv_gen(b.d_p, xbar_p);
          auto cc2 =
              (b.g->forward(xbar_p) - xh).abs().mean() + (b.s->forward(xbar_p) - m_in).abs().mean();
          total = total + lw.l2 * gan2 + lw.l4 * cc2;
          gan2_val = gan2.item<double>();
          cc2_val = cc2.item<double>();
        }

        double dice_val = 0.0, adv_val = 0.0;
        std::vector<long> sup_rows, unsup_rows;
        std::vector<int> sup_ids;
        for (std::size_t j = 0; j < pidx.size(); ++j) {
          if (has_gt[static_cast<std::size_t>(pidx[j])]) {
            sup_rows.push_back(static_cast<long>(j));
            sup_ids.push_back(pidx[j]);
          } else {
            unsup_rows.push_back(static_cast<long>(j));
          }
        }
        if (!sup_rows.empty()) {
          auto rows = torch::tensor(sup_rows);
          auto gt = masks_at(data.pathological, sup_ids, h, w, stats);
          auto dice = losses::dice_loss(mt_p.index_select(0, rows), gt);
          total = total + lw.l5_paired * dice;
          dice_val = dice.item<double>();
          ++stats.dice_terms;
        }
        if (!unsup_rows.empty() && b.d_m) {
          auto rows = torch::tensor(unsup_rows);
          auto adv = adv_gen(b.d_m, mt_p.index_select(0, rows));
          total = total + lw.l5_unpaired * adv;
          adv_val = adv.item<double>();
          ++stats.adv_seg_terms;
        }

        total_val = total.item<double>();
        vals = {gan1.item<double>()};
        if (cycle2) vals.push_back(gan2_val);
        vals.push_back(cc1.item<double>());
        if (cycle2) vals.push_back(cc2_val);
        if (cfg.setting != TrainSetting::unpaired) vals.push_back(dice_val);
        if (cfg.setting != TrainSetting::paired) vals.push_back(adv_val);
        vals.push_back(total_val);
        vals.push_back(last_dx);
        if (cfg.setting != TrainSetting::paired) vals.push_back(last_dm);
        if (hp) vals.push_back(last_dp);
      }

      if (!row_finite(vals) || !std::isfinite(total_val)) fail_nan(std::nan(""));

      opt.gen->zero_grad();
      total.backward();
      opt.gen->step();
      ++gen_updates;
      b.step += 1;

      std::vector<std::string> row{std::to_string(b.step), std::to_string(epoch)};
      for (double v : vals) row.push_back(fmt_f(v));
      csv.row(row);
      csv.flush();
    }

    stats.gen_updates_per_epoch.push_back(gen_updates);
    stats.critic_x_updates_per_epoch.push_back(dx_updates);
    stats.critic_m_updates_per_epoch.push_back(dm_updates);
    b.epoch = epoch + 1;
    save_run_ckpt(b, opt, last_path);
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch + 1);
      save_run_ckpt(b, opt, out_dir / name);
    }
  }

  save_run_ckpt(b, opt, out_dir / "final.ckpt");
  if (stats_out) *stats_out = stats;
  return b;
}

ModelBundle load_bundle(const std::filesystem::path& ckpt_path) {
  return bundle_from_ckpt(load_checkpoint(ckpt_path.string()));
}

}  // namespace ph
