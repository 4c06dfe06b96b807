#include "torch_doctest.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "core/checkpoint.hpp"
#include "core/csv.hpp"
#include "core/errors.hpp"
#include "core/phantom.hpp"
#include "core/train.hpp"

using namespace ph;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("ph_train_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct SmokeData {
  std::vector<PhantomSample> samples;
  TrainData data;
};

SmokeData make_data(int n_p, int n_h, int n_pool, std::uint64_t seed) {
  PhantomSpec spec;
  spec.seed = seed;
  spec.height = 32;
  spec.width = 32;
  spec.lesion_probability = 0.5;
  SmokeData out;
  out.samples = generate_phantom(spec, 4 * (n_p + n_h + n_pool) + 16);
  out.data.height = 32;
  out.data.width = 32;
  int got_p = 0, got_h = 0, got_pool = 0;
  for (const auto& s : out.samples) {
    if (s.label == SliceLabel::pathological) {
      if (got_pool < n_pool) {
        out.data.mask_pool.push_back(&s.mask);
        ++got_pool;
      } else if (got_p < n_p) {
        out.data.pathological.push_back({&s.image, &s.mask});
        ++got_p;
      }
    } else if (got_h < n_h) {
      out.data.healthy.push_back({&s.image, &s.mask});
      ++got_h;
    }
  }
  REQUIRE(got_p == n_p);
  REQUIRE(got_h == n_h);
  REQUIRE(got_pool == n_pool);
  return out;
}

TrainConfig base_cfg() {
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 2;
  c.warm_epochs = 0;
  c.critic_iters = 2;
  c.critic_iters_warm = 3;
  c.seed = 11;
  c.net.levels = 2;
  c.net.base_channels = 8;
  c.net.critic_base_channels = 8;
  return c;
}

std::map<std::string, std::vector<std::string>> csv_columns_by_name(const fs::path& p) {
  auto rows = read_csv(p.string());
  REQUIRE(rows.size() >= 2);
  std::map<std::string, std::vector<std::string>> out;
  for (std::size_t c = 0; c < rows[0].size(); ++c) {
    auto& col = out[rows[0][c]];
    for (std::size_t r = 1; r < rows.size(); ++r) col.push_back(rows[r].at(c));
  }
  return out;
}

bool all_finite(const std::vector<std::string>& col) {
  for (const auto& v : col)
    if (!std::isfinite(std::stod(v))) return false;
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("paired smoke run writes losses, config snapshot and checkpoints") {
  auto d = make_data(6, 6, 0, 100);
  auto cfg = base_cfg();
  auto dir = temp_dir("paired");
  TrainStats stats;
  auto b = train_model(d.data, cfg, dir, &stats);

  CHECK(b.epoch == 1);
  CHECK(b.step == 3);
  CHECK_FALSE(b.d_m);
  CHECK_FALSE(b.d_p);
  CHECK_FALSE(b.g_hp);

  auto rows = read_csv((dir / "losses.csv").string());
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == loss_csv_columns(cfg));
  CHECK(rows[0] == std::vector<std::string>{"step", "epoch", "l_gan1", "l_gan2", "l_cc1", "l_cc2",
                                            "l_seg_dice", "total", "critic_x"});
  auto cols = csv_columns_by_name(dir / "losses.csv");
  for (const auto& [name, col] : cols) CHECK(all_finite(col));
  CHECK(cols["step"] == std::vector<std::string>{"1", "2", "3"});

  CHECK(fs::exists(dir / "final.ckpt"));
  CHECK(fs::exists(dir / "last.ckpt"));
  auto snap = nlohmann::json::parse(slurp(dir / "config.json"));
  CHECK(snap == cfg.to_json());

  CHECK(stats.gen_updates_per_epoch == std::vector<std::int64_t>{3});
  CHECK(stats.critic_x_updates_per_epoch == std::vector<std::int64_t>{6});
  CHECK(stats.critic_m_updates_per_epoch == std::vector<std::int64_t>{0});
  CHECK(stats.dice_terms == 3);
  CHECK(stats.adv_seg_terms == 0);
  CHECK(stats.mask_batches_built > 0);
  fs::remove_all(dir);
}

TEST_CASE("critic schedule follows warm and steady iteration counts") {
  auto d = make_data(4, 4, 0, 101);
  auto cfg = base_cfg();
  cfg.epochs = 2;
  cfg.warm_epochs = 1;
  auto dir = temp_dir("schedule");
  TrainStats stats;
  train_model(d.data, cfg, dir, &stats);
  // 2 steps per epoch; 3 critic iterations while warm, then 2
  CHECK(stats.gen_updates_per_epoch == std::vector<std::int64_t>{2, 2});
  CHECK(stats.critic_x_updates_per_epoch == std::vector<std::int64_t>{6, 4});
  fs::remove_all(dir);
}

TEST_CASE("unpaired run trains the mask critic and never the dice term") {
  auto d = make_data(6, 6, 3, 102);
  auto cfg = base_cfg();
  cfg.setting = TrainSetting::unpaired;
  auto dir = temp_dir("unpaired");
  TrainStats stats;
  auto b = train_model(d.data, cfg, dir, &stats);

  CHECK(b.d_m);
  CHECK(stats.dice_terms == 0);
  CHECK(stats.adv_seg_terms == 3);
  CHECK(stats.critic_m_updates_per_epoch == std::vector<std::int64_t>{6});

  auto cols = csv_columns_by_name(dir / "losses.csv");
  CHECK(cols.count("l_seg_adv") == 1);
  CHECK(cols.count("critic_m") == 1);
  CHECK(cols.count("l_seg_dice") == 0);
  fs::remove_all(dir);

  SUBCASE("missing mask pool is a data error") {
    auto d2 = make_data(4, 4, 0, 103);
    auto dir2 = temp_dir("unpaired_nopool");
    try {
      train_model(d2.data, cfg, dir2, nullptr);
      FAIL("expected a data error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::data);
    }
    fs::remove_all(dir2);
  }
}

TEST_CASE("semi boundary ratios reproduce the paired and unpaired streams") {
  auto d = make_data(6, 6, 3, 104);

  auto run = [&](TrainSetting s, double ratio, const std::string& tag) {
    auto cfg = base_cfg();
    cfg.setting = s;
    cfg.semi_ratio = ratio;
    cfg.epochs = 2;
    auto dir = temp_dir(tag);
    train_model(d.data, cfg, dir, nullptr);
    auto cols = csv_columns_by_name(dir / "losses.csv");
    fs::remove_all(dir);
    return cols;
  };

  auto unp = run(TrainSetting::unpaired, 1.0, "bnd_unp");
  auto semi0 = run(TrainSetting::semi, 0.0, "bnd_semi0");
  for (const auto& [name, col] : unp) {
    REQUIRE(semi0.count(name) == 1);
    CHECK_MESSAGE(semi0[name] == col, "column " << name);
  }
  for (const auto& v : semi0["l_seg_dice"]) CHECK(std::stod(v) == 0.0);

  auto par = run(TrainSetting::paired, 1.0, "bnd_par");
  auto semi1 = run(TrainSetting::semi, 1.0, "bnd_semi1");
  for (const auto& [name, col] : par) {
    REQUIRE(semi1.count(name) == 1);
    CHECK_MESSAGE(semi1[name] == col, "column " << name);
  }
  for (const auto& v : semi1["l_seg_adv"]) CHECK(std::stod(v) == 0.0);
  for (const auto& v : semi1["critic_m"]) CHECK(std::stod(v) == 0.0);
}

TEST_CASE("intermediate semi ratio routes samples both ways") {
  auto d = make_data(6, 6, 3, 105);
  auto cfg = base_cfg();
  cfg.setting = TrainSetting::semi;
  cfg.semi_ratio = 0.5;
  cfg.epochs = 2;
  auto dir = temp_dir("semi_half");
  TrainStats stats;
  auto b = train_model(d.data, cfg, dir, &stats);
  CHECK(b.d_m);
  CHECK(stats.dice_terms + stats.adv_seg_terms >= 6);
  CHECK(stats.dice_terms > 0);
  CHECK(stats.adv_seg_terms > 0);
  CHECK(stats.critic_m_updates_per_epoch == std::vector<std::int64_t>{6, 6});
  fs::remove_all(dir);
}

TEST_CASE("no_cycle_hh drops the second cycle from the loss log") {
  auto d = make_data(4, 4, 0, 106);
  auto cfg = base_cfg();
  cfg.ablation = Ablation::no_cycle_hh;
  auto dir = temp_dir("nohh");
  train_model(d.data, cfg, dir, nullptr);
  auto rows = read_csv((dir / "losses.csv").string());
  CHECK(rows[0] == std::vector<std::string>{"step", "epoch", "l_gan1", "l_cc1", "l_seg_dice",
                                            "total", "critic_x"});
  fs::remove_all(dir);
}

TEST_CASE("cycle_hp trains an extra pathological critic on synthetic diseased images") {
  auto d = make_data(4, 4, 3, 107);
  auto cfg = base_cfg();
  cfg.ablation = Ablation::cycle_hp;
  auto dir = temp_dir("hp");
  TrainStats stats;
  auto b = train_model(d.data, cfg, dir, &stats);
  CHECK(b.d_p);
  CHECK_FALSE(b.d_m);
  auto cols = csv_columns_by_name(dir / "losses.csv");
  CHECK(cols.count("critic_p") == 1);
  CHECK(cols.count("l_gan2") == 1);
  CHECK(cols.count("l_cc2") == 1);
  for (const auto& [name, col] : cols) CHECK(all_finite(col));
  CHECK(stats.mask_batches_built > 0);
  fs::remove_all(dir);
}

TEST_CASE("cyclegan baseline logs two finite cycle losses and no masks") {
  auto d = make_data(4, 4, 0, 108);
  auto cfg = base_cfg();
  cfg.baseline = Baseline::cyclegan;
  auto dir = temp_dir("cyclegan");
  TrainStats stats;
  auto b = train_model(d.data, cfg, dir, &stats);
  CHECK(b.g_hp);
  CHECK(b.d_p);
  CHECK_FALSE(b.s);
  CHECK_FALSE(b.r);
  auto rows = read_csv((dir / "losses.csv").string());
  CHECK(rows[0] == std::vector<std::string>{"step", "epoch", "l_gan_ph", "l_gan_hp", "l_cc_p",
                                            "l_cc_h", "total", "critic_h", "critic_p"});
  auto cols = csv_columns_by_name(dir / "losses.csv");
  CHECK(all_finite(cols["l_cc_p"]));
  CHECK(all_finite(cols["l_cc_h"]));
  CHECK(stats.mask_batches_built == 0);
  fs::remove_all(dir);
}

TEST_CASE("conditional generator baseline never builds a mask tensor") {
  auto d = make_data(4, 4, 0, 109);
  auto cfg = base_cfg();
  cfg.baseline = Baseline::conditional_gan;
  auto dir = temp_dir("cgan");
  TrainStats stats;
  auto b = train_model(d.data, cfg, dir, &stats);
  CHECK_FALSE(b.s);
  CHECK_FALSE(b.r);
  CHECK_FALSE(b.d_m);
  CHECK_FALSE(b.g_hp);
  auto rows = read_csv((dir / "losses.csv").string());
  CHECK(rows[0] == std::vector<std::string>{"step", "epoch", "l_gan1", "total", "critic_x"});
  CHECK(stats.mask_batches_built == 0);
  CHECK(stats.dice_terms == 0);
  CHECK(stats.adv_seg_terms == 0);
  fs::remove_all(dir);
}

TEST_CASE("least squares losses sit at zero for perfectly separated scores") {
  auto ones = torch::ones({5});
  auto zeros = torch::zeros({5});
  CHECK(losses::lsgan_critic_loss(ones, zeros).item<double>() == 0.0);
  CHECK(losses::lsgan_gen_loss(ones).item<double>() == 0.0);
  CHECK(losses::lsgan_critic_loss(zeros, ones).item<double>() == doctest::Approx(1.0));

  SUBCASE("lsgan ablation trains end to end") {
    auto d = make_data(4, 4, 0, 110);
    auto cfg = base_cfg();
    cfg.ablation = Ablation::lsgan;
    auto dir = temp_dir("lsgan");
    train_model(d.data, cfg, dir, nullptr);
    auto cols = csv_columns_by_name(dir / "losses.csv");
    for (const auto& [name, col] : cols) CHECK(all_finite(col));
    fs::remove_all(dir);
  }
}

TEST_CASE("exploding optimizer aborts with a diagnostic checkpoint") {
  auto d = make_data(4, 4, 0, 111);
  auto cfg = base_cfg();
  cfg.lr = 1e30;
  auto dir = temp_dir("nan");
  try {
    train_model(d.data, cfg, dir, nullptr);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numeric);
    CHECK(std::string(e.what()).find("diagnostic") != std::string::npos);
  }
  CHECK(fs::exists(dir / "diagnostic.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("identical config and seed reproduce the loss log and final checkpoint") {
  auto d = make_data(4, 4, 0, 112);
  auto cfg = base_cfg();
  cfg.epochs = 2;
  auto dir1 = temp_dir("repro1");
  auto dir2 = temp_dir("repro2");
  train_model(d.data, cfg, dir1, nullptr);
  train_model(d.data, cfg, dir2, nullptr);
  CHECK(slurp(dir1 / "losses.csv") == slurp(dir2 / "losses.csv"));
  CHECK(file_hash((dir1 / "final.ckpt").string()) == file_hash((dir2 / "final.ckpt").string()));
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("an interrupted run resumes to the same result") {
  auto d = make_data(4, 4, 0, 113);
  auto cfg3 = base_cfg();
  cfg3.epochs = 3;
  auto dir_a = temp_dir("resume_a");
  train_model(d.data, cfg3, dir_a, nullptr);

  auto dir_b = temp_dir("resume_b");
  auto cfg2 = cfg3;
  cfg2.epochs = 2;
  train_model(d.data, cfg2, dir_b, nullptr);
  TrainStats stats;
  train_model(d.data, cfg3, dir_b, &stats);
  CHECK(stats.resumed);
  CHECK(stats.gen_updates_per_epoch.size() == 1);  // only the third epoch ran

  CHECK(slurp(dir_a / "losses.csv") == slurp(dir_b / "losses.csv"));
  CHECK(file_hash((dir_a / "final.ckpt").string()) ==
        file_hash((dir_b / "final.ckpt").string()));

  SUBCASE("a changed config refuses to resume") {
    auto cfg_bad = cfg3;
    cfg_bad.lr = 2e-4;
    try {
      train_model(d.data, cfg_bad, dir_b, nullptr);
      FAIL("expected a config error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::config);
    }
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("a trained bundle reloads with identical parameters") {
  auto d = make_data(4, 4, 0, 114);
  auto cfg = base_cfg();
  auto dir = temp_dir("reload");
  auto b = train_model(d.data, cfg, dir, nullptr);
  auto re = load_bundle(dir / "final.ckpt");
  CHECK(re.step == b.step);
  CHECK(re.epoch == 1);
  CHECK(re.cfg.to_json() == cfg.to_json());
  REQUIRE(re.g);
  REQUIRE(re.s);
  REQUIRE(re.r);
  auto a_params = b.g->named_parameters();
  auto r_params = re.g->named_parameters();
  for (const auto& item : a_params)
    CHECK(torch::equal(item.value(), *r_params.find(item.key())));
  torch::NoGradGuard ng;
  auto x = torch::rand({1, 1, 32, 32});
  CHECK(torch::equal(b.g->forward(x), re.g->forward(x)));
  fs::remove_all(dir);
}

TEST_CASE("train config validation rejects out-of-range fields") {
  auto ok = base_cfg();
  CHECK_NOTHROW(ok.validate());
  auto bad = ok;
  bad.semi_ratio = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ok;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ok;
  bad.baseline = Baseline::cyclegan;
  bad.ablation = Ablation::lsgan;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ok;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);

  auto j = ok.to_json();
  auto round = TrainConfig::from_json(j);
  CHECK(round.to_json() == j);
}
