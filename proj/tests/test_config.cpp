#include "torch_doctest.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "core/config.hpp"
#include "core/errors.hpp"

using namespace ph;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto d = fs::temp_directory_path() / ("ph_cfg_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("empty config document yields the defaults") {
  auto c = ExperimentConfig::from_json(json::object());
  ExperimentConfig d;
  CHECK(c.to_json() == d.to_json());
  CHECK(c.phantom_count == 400);
  CHECK(c.train.setting == TrainSetting::paired);
  CHECK(c.semi_ratios == std::vector<double>{0.0, 0.2, 0.4, 0.6, 0.8, 1.0});
}

TEST_CASE("unknown fields are rejected with their full path") {
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(json::parse(R"({"phanton": {}})")),
                       doctest::Contains("phanton: unknown field"), Error);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(json::parse(R"({"train": {"lrx": 1}})")),
                       doctest::Contains("train.lrx: unknown field"), Error);
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_json(json::parse(R"({"train": {"net": {"levelz": 2}}})")),
      doctest::Contains("train.net.levelz: unknown field"), Error);
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_json(
          json::parse(R"({"eval": {"judge": {"net": {"depth": 2}}}})")),
      doctest::Contains("eval.judge.net.depth: unknown field"), Error);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(json::parse(R"({"paths": {"data": "x"}})")),
                       doctest::Contains("paths.data: unknown field"), Error);
}

TEST_CASE("type mismatches name the field and the expected type") {
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(json::parse(R"({"train": {"epochs": 2.5}})")),
                       doctest::Contains("train.epochs: expected an integer"), Error);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(json::parse(R"({"train": {"lr": "fast"}})")),
                       doctest::Contains("train.lr: expected a number"), Error);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(json::parse(R"({"split_seed": -1})")),
                       doctest::Contains("split_seed: expected a nonnegative integer"), Error);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(json::parse(R"({"train": 3})")),
                       doctest::Contains("train: expected an object"), Error);
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_json(json::parse(R"({"phantom": {"deform": "yes"}})")),
      doctest::Contains("phantom.deform: expected a boolean"), Error);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(json::parse(R"({"semi_ratios": [0.2, "x"]})")),
                       doctest::Contains("semi_ratios: expected an array of numbers"), Error);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(json::parse(R"({"ablations": 7})")),
                       doctest::Contains("ablations: expected an array of strings"), Error);
}

TEST_CASE("enum fields report the path and the bad value") {
  try {
    ExperimentConfig::from_json(json::parse(R"({"train": {"setting": "pairedx"}})"));
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::config);
    CHECK(std::string(e.what()).find("train.setting") != std::string::npos);
    CHECK(std::string(e.what()).find("pairedx") != std::string::npos);
  }
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_json(json::parse(R"({"train": {"ablation": "nope"}})")),
      doctest::Contains("train.ablation"), Error);
}

TEST_CASE("parsed values land in the right fields") {
  auto c = ExperimentConfig::from_json(json::parse(R"({
    "phantom": {"seed": 9, "height": 32, "width": 48, "deform": true},
    "phantom_count": 50,
    "train": {"setting": "unpaired", "epochs": 7, "lr": 0.002,
              "net": {"levels": 2, "base_channels": 8},
              "weights": {"l3": 12.5}},
    "eval": {"judge": {"epochs": 3}, "dec": {"seed": 77}, "mask_shift": false},
    "paths": {"run_dir": "out/x"},
    "semi_ratios": [0.0, 1.0],
    "study_bootstrap": 99
  })"));
  CHECK(c.phantom.seed == 9);
  CHECK(c.phantom.height == 32);
  CHECK(c.phantom.width == 48);
  CHECK(c.phantom.deform);
  CHECK(c.phantom_count == 50);
  CHECK(c.train.setting == TrainSetting::unpaired);
  CHECK(c.train.epochs == 7);
  CHECK(c.train.lr == 0.002);
  CHECK(c.train.net.levels == 2);
  CHECK(c.train.net.base_channels == 8);
  CHECK(c.train.net.critic_base_channels == NetConfig{}.critic_base_channels);
  CHECK(c.train.weights.l3 == 12.5);
  CHECK(c.train.weights.l1 == losses::LossWeights{}.l1);
  CHECK(c.eval.judge.epochs == 3);
  CHECK(c.eval.dec.seed == 77);
  CHECK_FALSE(c.eval.mask_shift);
  CHECK(c.paths.run_dir == "out/x");
  CHECK(c.paths.data_dir == "data");
  CHECK(c.semi_ratios == std::vector<double>{0.0, 1.0});
  CHECK(c.study_bootstrap == 99);
}

TEST_CASE("to_json and from_json round-trip exactly") {
  ExperimentConfig c;
  c.phantom.seed = 123;
  c.phantom.height = 32;
  c.phantom.deform = true;
  c.phantom_count = 77;
  c.train.setting = TrainSetting::semi;
  c.train.semi_ratio = 0.4;
  c.train.epochs = 11;
  c.train.ablation = Ablation::no_cycle_hh;
  c.eval.judge.lr = 5e-4;
  c.eval.iterate_k = 3;
  c.paths.scores_csv = "s.csv";
  c.semi_ratios = {0.25, 0.75};
  c.ablations = {"none", "lsgan"};
  c.study_seed = 42;
  auto back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("the pure-setting ratio endpoints are normalized at parse") {
  auto base = json::parse(R"({"train": {"setting": "semi", "semi_ratio": 1.0}})");
  CHECK(ExperimentConfig::from_json(base).train.setting == TrainSetting::paired);
  base["train"]["semi_ratio"] = 0.0;
  CHECK(ExperimentConfig::from_json(base).train.setting == TrainSetting::unpaired);
  base["train"]["semi_ratio"] = 0.5;
  CHECK(ExperimentConfig::from_json(base).train.setting == TrainSetting::semi);
}

TEST_CASE("validate gates the cross-field rules") {
  ExperimentConfig c;
  c.validate();

  ExperimentConfig bad = c;
  bad.phantom_count = 0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("phantom_count"), Error);

  bad = c;
  bad.maskpool_frac = 1.0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("maskpool_frac"), Error);

  bad = c;
  bad.test_frac = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = c;
  bad.semi_ratios = {0.5, 1.5};
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("semi_ratios"), Error);

  bad = c;
  bad.ablations = {"none", "bogus"};
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("bogus"), Error);

  bad = c;
  bad.eval.mask_shift_px = 0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("mask_shift_px"), Error);

  bad = c;
  bad.study_bootstrap = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("file load validates and reports parse failures") {
  auto dir = temp_dir("load");

  SUBCASE("missing file is a data error") {
    try {
      ExperimentConfig::load(dir / "nope.json");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::data);
    }
  }

  SUBCASE("malformed json names the file") {
    auto p = dir / "broken.json";
    std::ofstream(p) << "{ not json";
    try {
      ExperimentConfig::load(p);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::config);
      CHECK(std::string(e.what()).find("broken.json") != std::string::npos);
    }
  }

  SUBCASE("invalid values fail validation on load") {
    auto p = dir / "bad.json";
    std::ofstream(p) << R"({"phantom_count": -3})";
    CHECK_THROWS_WITH_AS(ExperimentConfig::load(p), doctest::Contains("phantom_count"), Error);
  }

  SUBCASE("save then load round-trips") {
    ExperimentConfig c;
    c.phantom.seed = 5;
    c.train.epochs = 3;
    auto p = dir / "ok.json";
    c.save(p);
    auto back = ExperimentConfig::load(p);
    CHECK(back.to_json() == c.to_json());
  }

  fs::remove_all(dir);
}
