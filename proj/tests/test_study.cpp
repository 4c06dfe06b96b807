#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "core/csv.hpp"
#include "core/errors.hpp"
#include "core/rng.hpp"
#include "core/study.hpp"

using namespace ph;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("ph_study_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ImageSlice constant_tile(int h, int w, float v) { return ImageSlice(h, w, v); }

void append_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream f(p, std::ios::app);
  for (const auto& l : lines) f << l << "\n";
}

// A small filled-in study: 2 raters, 3 panels, 2 methods, all criteria.
// method "a" is rated 1 on everything, "b" gets mixed scores.
fs::path write_demo_scores(const fs::path& dir, const PanelSet& ps, bool shuffle_rows) {
  auto blind = read_csv((ps.blind_dir / "blinding_map.csv").string());
  // position of each method per panel
  std::map<std::pair<int, std::string>, int> pos_of;
  for (size_t i = 1; i < blind.size(); ++i)
    pos_of[{std::stoi(blind[i][0]), blind[i][2]}] = std::stoi(blind[i][1]);

  std::vector<std::string> rows;
  for (const std::string rater : {"r1", "r2"}) {
    for (int p = 0; p < ps.n_panels; ++p) {
      for (const char* crit : kCriteria) {
        int b_score = (p == 0) ? 1 : 0;  // "b" wins only panel 0
        rows.push_back(rater + "," + std::to_string(p) + "," +
                       std::to_string(pos_of[{p, "a"}]) + "," + crit + ",1");
        rows.push_back(rater + "," + std::to_string(p) + "," +
                       std::to_string(pos_of[{p, "b"}]) + "," + crit + "," +
                       std::to_string(b_score));
      }
    }
  }
  if (shuffle_rows) {
    Rng rng(99);
    rng.shuffle(rows);
  }
  auto path = dir / (shuffle_rows ? "scores_shuffled.csv" : "scores.csv");
  {
    std::ofstream f(path);
    f << "rater_id,panel_id,position,criterion,score\n";
    for (const auto& r : rows) f << r << "\n";
  }
  return path;
}

PanelSet demo_panels(const fs::path& root, std::uint64_t seed = 5) {
  std::vector<MethodImages> methods;
  methods.push_back({"a", {constant_tile(16, 16, 0.1f), constant_tile(16, 16, 0.1f),
                           constant_tile(16, 16, 0.1f)}});
  methods.push_back({"b", {constant_tile(16, 16, 0.6f), constant_tile(16, 16, 0.6f),
                           constant_tile(16, 16, 0.6f)}});
  std::vector<ImageSlice> inputs(3, constant_tile(16, 16, 0.3f));
  std::vector<PathologyMask> masks(3, PathologyMask(16, 16));
  for (auto& m : masks) m.at(8, 8) = 1;
  return build_panels(methods, inputs, masks, seed, root / "panels", root / "blind");
}

}  // namespace

TEST_CASE("pgm files round trip") {
  auto dir = temp_dir("pgm");
  ImageSlice img(9, 13);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 13; ++x) img.at(y, x) = static_cast<float>((y * 13 + x) % 256) / 255.0f;
  write_pgm(img, dir / "t.pgm");
  auto back = read_pgm(dir / "t.pgm");
  REQUIRE(back.h == 9);
  REQUIRE(back.w == 13);
  for (size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.v[i] - img.v[i]) <= 0.5f / 255.0f);
  CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), Error);
  fs::remove_all(dir);
}

TEST_CASE("panel permutations are uniform over positions") {
  const int n_methods = 6, draws = 10000;
  std::vector<std::vector<int>> counts(static_cast<size_t>(n_methods),
                                       std::vector<int>(static_cast<size_t>(n_methods), 0));
  for (int p = 0; p < draws; ++p) {
    auto order = panel_permutation(31337, p, n_methods);
    for (int pos = 0; pos < n_methods; ++pos)
      counts[static_cast<size_t>(order[static_cast<size_t>(pos)])][static_cast<size_t>(pos)]++;
  }
  for (int m = 0; m < n_methods; ++m)
    for (int pos = 0; pos < n_methods; ++pos) {
      double freq = static_cast<double>(counts[static_cast<size_t>(m)][static_cast<size_t>(pos)]) / draws;
      CHECK(std::abs(freq - 1.0 / n_methods) < 0.02);
    }
  // deterministic per (seed, panel)
  CHECK(panel_permutation(7, 3, 4) == panel_permutation(7, 3, 4));
}

TEST_CASE("panels place methods exactly where the blinding map says") {
  auto root = temp_dir("panels");
  auto ps = demo_panels(root);
  CHECK(ps.n_panels == 3);
  CHECK(ps.n_methods == 2);
  CHECK(fs::exists(ps.panel_dir / "scores_template.csv"));
  CHECK(fs::exists(ps.panel_dir / "instructions.txt"));
  CHECK(fs::exists(ps.blind_dir / "blinding_map.csv"));
  // nothing in the rater-facing directory names a method
  for (const auto& e : fs::directory_iterator(ps.panel_dir)) {
    std::ifstream f(e.path(), std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(content.find("method") == std::string::npos);
  }

  auto blind = read_csv((ps.blind_dir / "blinding_map.csv").string());
  REQUIRE(blind.size() == 1 + 3 * 2);
  const int w = 16, gap = 3;
  for (size_t i = 1; i < blind.size(); ++i) {
    int panel = std::stoi(blind[i][0]);
    int pos = std::stoi(blind[i][1]);
    float expect = blind[i][2] == "a" ? 0.1f : 0.6f;
    char name[32];
    std::snprintf(name, sizeof(name), "panel_%03d.pgm", panel);
    auto montage = read_pgm(ps.panel_dir / name);
    REQUIRE(montage.w == 4 * w + 3 * gap);
    int x0 = (1 + pos) * (w + gap);  // tile slots: input, mask, then positions 1..m
    double mean = 0;
    for (int y = 0; y < w; ++y)
      for (int x = 0; x < w; ++x) mean += montage.at(y, x0 + x);
    mean /= w * w;
    CHECK(std::abs(mean - expect) < 0.01);
  }

  SUBCASE("same seed reproduces the identical map, a different seed does not") {
    auto again = demo_panels(temp_dir("panels_again"), 5);
    auto other = demo_panels(temp_dir("panels_other"), 6);
    auto bytes = [](const fs::path& p) {
      std::ifstream f(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    CHECK(bytes(again.blind_dir / "blinding_map.csv") == bytes(ps.blind_dir / "blinding_map.csv"));
    CHECK(bytes(other.blind_dir / "blinding_map.csv") != bytes(ps.blind_dir / "blinding_map.csv"));
    CHECK(bytes(again.panel_dir / "panel_000.pgm") == bytes(ps.panel_dir / "panel_000.pgm"));
  }
  SUBCASE("mismatched image counts are rejected") {
    std::vector<MethodImages> bad{{"a", {constant_tile(16, 16, 0.1f)}}};
    std::vector<ImageSlice> inputs(2, constant_tile(16, 16, 0.3f));
    std::vector<PathologyMask> masks(2, PathologyMask(16, 16));
    CHECK_THROWS_AS(build_panels(bad, inputs, masks, 1, root / "x", root / "y"), Error);
  }
  fs::remove_all(root);
}

TEST_CASE("score ingestion validates and joins against the blinding map") {
  auto root = temp_dir("ingest");
  auto ps = demo_panels(root);
  auto scores_path = write_demo_scores(root, ps, false);
  auto blind_path = ps.blind_dir / "blinding_map.csv";

  auto scores = ingest_scores(scores_path, blind_path);
  CHECK(scores.size() == 2u * 3u * 3u * 2u);
  size_t n_a = 0;
  for (const auto& s : scores) {
    CHECK((s.score == 0 || s.score == 1));
    if (s.method_id == "a") {
      ++n_a;
      CHECK(s.score == 1);
    }
  }
  CHECK(n_a == scores.size() / 2);

  SUBCASE("non-binary scores are rejected") {
    append_lines(scores_path, {"r3,0,1,healthiness,3"});
    CHECK_THROWS_WITH_AS(ingest_scores(scores_path, blind_path),
                         doctest::Contains("score must be 0 or 1"), Error);
  }
  SUBCASE("unknown panel or position is rejected") {
    append_lines(scores_path, {"r3,9,1,healthiness,1"});
    CHECK_THROWS_WITH_AS(ingest_scores(scores_path, blind_path),
                         doctest::Contains("not in the blinding map"), Error);
  }
  SUBCASE("unknown criterion is rejected") {
    append_lines(scores_path, {"r3,0,1,prettiness,1"});
    CHECK_THROWS_WITH_AS(ingest_scores(scores_path, blind_path),
                         doctest::Contains("unknown criterion"), Error);
  }
  SUBCASE("duplicate judgement is rejected") {
    append_lines(scores_path, {"r1,0,1,healthiness,1"});
    CHECK_THROWS_WITH_AS(ingest_scores(scores_path, blind_path), doctest::Contains("duplicate"),
                         Error);
  }
  fs::remove_all(root);
}

TEST_CASE("aggregation is order and rater-label invariant and flags clear wins") {
  auto root = temp_dir("agg");
  auto ps = demo_panels(root);
  auto blind_path = ps.blind_dir / "blinding_map.csv";
  auto scores = ingest_scores(write_demo_scores(root, ps, false), blind_path);
  auto shuffled = ingest_scores(write_demo_scores(root, ps, true), blind_path);

  auto sum = aggregate_scores(scores, 2000, 42);
  auto sum_shuffled = aggregate_scores(shuffled, 2000, 42);
  REQUIRE(sum.rows.size() == 6);  // 3 criteria x 2 methods
  REQUIRE(sum_shuffled.rows.size() == 6);
  for (size_t i = 0; i < sum.rows.size(); ++i) {
    CHECK(sum.rows[i].method_id == sum_shuffled.rows[i].method_id);
    CHECK(sum.rows[i].mean == doctest::Approx(sum_shuffled.rows[i].mean).epsilon(1e-12));
    CHECK(sum.rows[i].p_vs_best == doctest::Approx(sum_shuffled.rows[i].p_vs_best).epsilon(1e-12));
  }

  for (const auto& r : sum.rows) {
    CHECK(r.n_panels == 3);
    if (r.method_id == "a") {
      // every rater gave 1 on every panel
      CHECK(r.mean == doctest::Approx(1.0));
      CHECK(r.std_dev == doctest::Approx(0.0));
      CHECK(r.comparator == "b");
    } else {
      // consensus 1, 0, 0 over the three panels
      CHECK(r.mean == doctest::Approx(1.0 / 3.0));
      CHECK(r.comparator == "a");
    }
  }

  SUBCASE("relabeling raters changes nothing") {
    auto relabeled = scores;
    for (auto& s : relabeled) s.rater_id = (s.rater_id == "r1") ? "alpha" : "beta";
    auto sum2 = aggregate_scores(relabeled, 2000, 42);
    for (size_t i = 0; i < sum.rows.size(); ++i)
      CHECK(sum.rows[i].p_vs_best == doctest::Approx(sum2.rows[i].p_vs_best).epsilon(1e-12));
  }
  SUBCASE("summary csv round trips") {
    write_study_csv(sum, root / "study.csv");
    auto back = read_study_csv(root / "study.csv");
    REQUIRE(back.rows.size() == sum.rows.size());
    for (size_t i = 0; i < sum.rows.size(); ++i) {
      CHECK(back.rows[i].method_id == sum.rows[i].method_id);
      CHECK(back.rows[i].criterion == sum.rows[i].criterion);
      CHECK(back.rows[i].mean == doctest::Approx(sum.rows[i].mean).epsilon(1e-5));
      CHECK(back.rows[i].comparator == sum.rows[i].comparator);
    }
  }
  fs::remove_all(root);
}

TEST_CASE("bootstrap paired t-test behaves at the extremes") {
  SUBCASE("identical score vectors give p near 1") {
    std::vector<double> d(20, 0.0);
    CHECK(bootstrap_paired_p(d, 10000, 1) >= 0.9);
  }
  SUBCASE("a large consistent difference gives a small p") {
    std::vector<double> d(24);
    Rng rng(3);
    for (auto& x : d) x = 1.0 + 0.05 * rng.normal();
    CHECK(bootstrap_paired_p(d, 10000, 1) < 0.01);
  }
  SUBCASE("deterministic under a fixed seed") {
    std::vector<double> d{0.4, -0.2, 0.1, 0.3, -0.1, 0.25, 0.0, 0.15};
    CHECK(bootstrap_paired_p(d, 5000, 7) == bootstrap_paired_p(d, 5000, 7));
  }
  SUBCASE("all-equal nonzero differences count as significant") {
    std::vector<double> d(10, 0.5);
    CHECK(bootstrap_paired_p(d, 1000, 1) == doctest::Approx(1.0 / 1001.0));
  }
}

TEST_CASE("point biserial equals Pearson on the same pairs") {
  Rng rng(11);
  std::vector<int> binary;
  std::vector<double> metric;
  for (int i = 0; i < 60; ++i) {
    int b = rng.bernoulli(0.5) ? 1 : 0;
    binary.push_back(b);
    metric.push_back(0.3 * b + rng.normal() * 0.4);
  }

  double n = static_cast<double>(binary.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < binary.size(); ++i) {
    mx += binary[i];
    my += metric[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < binary.size(); ++i) {
    sxy += (binary[i] - mx) * (metric[i] - my);
    sxx += (binary[i] - mx) * (binary[i] - mx);
    syy += (metric[i] - my) * (metric[i] - my);
  }
  double pearson = sxy / std::sqrt(sxx * syy);

  CHECK(point_biserial(binary, metric) == doctest::Approx(pearson).epsilon(1e-10));
  CHECK_THROWS_AS(point_biserial(std::vector<int>(5, 1), std::vector<double>(5, 0.3)), Error);
  CHECK_THROWS_AS(point_biserial({0, 1, 2}, {0.1, 0.2, 0.3}), Error);
}

TEST_CASE("realness summary reproduces hand-counted ratios") {
  std::vector<std::pair<std::string, std::string>> truth{
      {"i1", "real"}, {"i2", "real"}, {"i3", "gen"}, {"i4", "gen"}};
  std::vector<RealnessCall> calls{
      {"r1", "i1", 1}, {"r2", "i1", 1},   // i1: 1.0
      {"r1", "i2", 1}, {"r2", "i2", 0},   // i2: 0.5
      {"r1", "i3", 0}, {"r2", "i3", 0},   // i3: 0.0
      {"r1", "i4", 1}, {"r2", "i4", 0},   // i4: 0.5
  };
  auto rows = realness_summary(calls, truth);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].source == "gen");
  CHECK(rows[0].realness == doctest::Approx(0.25));
  CHECK(rows[0].n_images == 2);
  CHECK(rows[1].source == "real");
  CHECK(rows[1].realness == doctest::Approx(0.75));
  CHECK(rows[1].std_dev == doctest::Approx(std::sqrt(2 * 0.25 * 0.25 / 1.0)));

  SUBCASE("all real and all fake hit the endpoints") {
    std::vector<RealnessCall> ones{{"r1", "i1", 1}, {"r1", "i2", 1}};
    auto r1 = realness_summary(ones, truth);
    CHECK(r1[0].realness == doctest::Approx(1.0));
    std::vector<RealnessCall> zeros{{"r1", "i3", 0}, {"r1", "i4", 0}};
    auto r0 = realness_summary(zeros, truth);
    CHECK(r0[0].realness == doctest::Approx(0.0));
  }
  SUBCASE("unknown image and duplicates are rejected") {
    CHECK_THROWS_AS(realness_summary({{"r1", "nope", 1}}, truth), Error);
    CHECK_THROWS_AS(realness_summary({{"r1", "i1", 1}, {"r1", "i1", 0}}, truth), Error);
  }
}
