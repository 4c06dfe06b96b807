#include "study.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include "csv.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace ph {
namespace {

constexpr int kGap = 3;           // separator pixels between tiles
constexpr float kGapValue = 1.0f; // white separators

std::string panel_name(int panel_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "panel_%03d.pgm", panel_id);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v), acc = 0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

const char* const kCriteria[3] = {"healthiness", "identity", "deformation_correction"};

void write_pgm(const ImageSlice& img, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open for writing: " + path.string());
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.w));
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      float v = std::clamp(img.at(y, x), 0.0f, 1.0f);
      row[static_cast<size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(row.data()), img.w);
  }
  if (!f) throw data_error("pgm write failed: " + path.string());
}

ImageSlice read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("missing file: " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || w < 1 || h < 1 || maxval != 255)
    throw data_error("unsupported pgm: " + path.string());
  f.get();  // single whitespace after the header
  ImageSlice img(h, w);
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), w);
    if (!f) throw data_error("truncated pgm: " + path.string());
    for (int x = 0; x < w; ++x) img.at(y, x) = static_cast<float>(row[static_cast<size_t>(x)]) / 255.0f;
  }
  return img;
}

std::vector<int> panel_permutation(std::uint64_t seed, int panel_id, int n_methods) {
  if (n_methods < 1) throw config_error("panel needs at least one method");
  std::vector<int> order(static_cast<size_t>(n_methods));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).fork(0xBA5E + static_cast<uint64_t>(panel_id));
  rng.shuffle(order);
  return order;
}

PanelSet build_panels(const std::vector<MethodImages>& methods,
                      const std::vector<ImageSlice>& inputs,
                      const std::vector<PathologyMask>& masks, std::uint64_t seed,
                      const std::filesystem::path& panel_dir,
                      const std::filesystem::path& blind_dir) {
  if (methods.empty()) throw config_error("panels need at least one method");
  if (inputs.empty()) throw data_error("panels need at least one input image");
  if (inputs.size() != masks.size())
    throw data_error("panel inputs and masks differ in count");
  std::set<std::string> ids;
  for (const auto& m : methods) {
    if (m.images.size() != inputs.size())
      throw data_error("method '" + m.method_id + "' image count does not match the inputs");
    if (!ids.insert(m.method_id).second)
      throw config_error("duplicate method id '" + m.method_id + "'");
  }

  std::filesystem::create_directories(panel_dir);
  std::filesystem::create_directories(blind_dir);

  CsvWriter blind((blind_dir / "blinding_map.csv").string());
  blind.row({"panel_id", "position", "method_id"});

  const int n = static_cast<int>(inputs.size());
  const int m = static_cast<int>(methods.size());
  for (int p = 0; p < n; ++p) {
    const auto& input = inputs[static_cast<size_t>(p)];
    const int h = input.h, w = input.w;
    auto order = panel_permutation(seed, p, m);

    ImageSlice montage(h, (m + 2) * w + (m + 1) * kGap, kGapValue);
    auto blit = [&](const ImageSlice& tile, int slot) {
      if (tile.h != h || tile.w != w)
        throw data_error("panel tiles must share the input size");
      int x0 = slot * (w + kGap);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) montage.at(y, x0 + x) = tile.at(y, x);
    };

    blit(input, 0);
    ImageSlice mask_img(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        mask_img.at(y, x) = masks[static_cast<size_t>(p)].at(y, x) ? 1.0f : 0.0f;
    blit(mask_img, 1);

    for (int pos = 0; pos < m; ++pos) {
      int method_idx = order[static_cast<size_t>(pos)];
      blit(methods[static_cast<size_t>(method_idx)].images[static_cast<size_t>(p)], 2 + pos);
      blind.row({std::to_string(p), std::to_string(pos + 1),
                 methods[static_cast<size_t>(method_idx)].method_id});
    }
    write_pgm(montage, panel_dir / panel_name(p));
  }
  blind.flush();

  {
    CsvWriter tmpl((panel_dir / "scores_template.csv").string());
    tmpl.row({"rater_id", "panel_id", "position", "criterion", "score"});
    tmpl.flush();
  }
  {
    std::ofstream inst(panel_dir / "instructions.txt");
    inst << "Each panel shows, left to right: the input image, the ground-truth pathology\n"
            "mask, and " << m << " synthetic pseudo-healthy images in positions 1.." << m << ".\n"
            "Score every synthetic image on each criterion with 0 or 1:\n"
            "  healthiness: does the synthetic image appear healthy (1) or not (0)?\n"
            "  identity: does it belong to the same subject as the input (1) or not (0)?\n"
            "  deformation_correction: has the mass-induced deformation been corrected\n"
            "    outside the mass region (1) or not (0)?\n"
            "Append one row per judgement to scores_template.csv. Spend at most three\n"
            "minutes per panel.\n";
  }

  PanelSet out;
  out.panel_dir = panel_dir;
  out.blind_dir = blind_dir;
  out.n_panels = n;
  out.n_methods = m;
  return out;
}

std::vector<RaterScore> ingest_scores(const std::filesystem::path& scores_csv,
                                      const std::filesystem::path& blinding_map_csv) {
  auto blind_rows = read_csv(blinding_map_csv.string());
  if (blind_rows.empty() ||
      blind_rows[0] != std::vector<std::string>{"panel_id", "position", "method_id"})
    throw data_error("unrecognized blinding map header: " + blinding_map_csv.string());
  std::map<std::pair<int, int>, std::string> method_at;
  for (size_t i = 1; i < blind_rows.size(); ++i) {
    const auto& c = blind_rows[i];
    if (c.size() != 3) throw data_error("malformed blinding map row");
    method_at[{std::stoi(c[0]), std::stoi(c[1])}] = c[2];
  }

  auto rows = read_csv(scores_csv.string());
  if (rows.empty() ||
      rows[0] != std::vector<std::string>{"rater_id", "panel_id", "position", "criterion", "score"})
    throw data_error("unrecognized scores header: " + scores_csv.string());

  std::vector<RaterScore> out;
  std::set<std::tuple<std::string, int, int, std::string>> seen;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& c = rows[i];
    if (c.size() != 5) throw data_error("malformed scores row " + std::to_string(i + 1));
    RaterScore s;
    s.rater_id = c[0];
    if (s.rater_id.empty()) throw data_error("empty rater_id in row " + std::to_string(i + 1));
    try {
      s.panel_id = std::stoi(c[1]);
      s.position = std::stoi(c[2]);
      s.score = std::stoi(c[4]);
    } catch (const std::exception&) {
      throw data_error("non-numeric field in scores row " + std::to_string(i + 1));
    }
    s.criterion = c[3];
    if (std::find(std::begin(kCriteria), std::end(kCriteria), s.criterion) == std::end(kCriteria))
      throw data_error("unknown criterion '" + s.criterion + "' in row " + std::to_string(i + 1));
    if (s.score != 0 && s.score != 1)
      throw data_error("score must be 0 or 1, got " + c[4] + " in row " + std::to_string(i + 1));
    auto it = method_at.find({s.panel_id, s.position});
    if (it == method_at.end())
      throw data_error("panel " + c[1] + " position " + c[2] + " is not in the blinding map");
    s.method_id = it->second;
    if (!seen.insert({s.rater_id, s.panel_id, s.position, s.criterion}).second)
      throw data_error("duplicate score for rater " + s.rater_id + " panel " + c[1] +
                       " position " + c[2] + " criterion " + s.criterion);
    out.push_back(std::move(s));
  }
  return out;
}

double bootstrap_paired_p(const std::vector<double>& diffs, int resamples, std::uint64_t seed) {
  if (diffs.empty()) throw data_error("paired test needs at least one difference");
  if (resamples < 1) throw config_error("bootstrap needs at least one resample");
  const auto n = diffs.size();
  double m = mean_of(diffs);
  double sd = sample_std(diffs);
  double t_obs = sd > 0 ? m / (sd / std::sqrt(static_cast<double>(n))) : (m == 0.0 ? 0.0 : HUGE_VAL);

  std::vector<double> centered(n);
  for (size_t i = 0; i < n; ++i) centered[i] = diffs[i] - m;

  Rng rng(seed);
  int exceed = 0;
  std::vector<double> draw(n);
  for (int b = 0; b < resamples; ++b) {
    for (size_t i = 0; i < n; ++i)
      draw[i] = centered[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(n) - 1))];
    double bm = mean_of(draw);
    double bsd = sample_std(draw);
    double t = bsd > 0 ? bm / (bsd / std::sqrt(static_cast<double>(n))) : 0.0;
    if (std::abs(t) >= std::abs(t_obs)) ++exceed;
  }
  return (1.0 + exceed) / (resamples + 1.0);
}

StudySummary aggregate_scores(const std::vector<RaterScore>& scores, int bootstrap_resamples,
                              std::uint64_t seed) {
  if (scores.empty()) throw data_error("no scores to aggregate");

  // consensus[criterion][method][panel] = mean score across raters
  std::map<std::string, std::map<std::string, std::map<int, std::pair<double, int>>>> acc;
  for (const auto& s : scores) {
    auto& cell = acc[s.criterion][s.method_id][s.panel_id];
    cell.first += s.score;
    cell.second += 1;
  }

  StudySummary out;
  for (const auto& [criterion, by_method] : acc) {
    // methods must cover the same panels for paired differences
    std::set<int> panels;
    for (const auto& [mid, by_panel] : by_method)
      for (const auto& [pid, cell] : by_panel) panels.insert(pid);
    std::map<std::string, std::vector<double>> consensus;
    for (const auto& [mid, by_panel] : by_method) {
      for (int pid : panels)
        if (!by_panel.count(pid))
          throw data_error("method " + mid + " has no " + criterion + " score for panel " +
                           std::to_string(pid));
      for (const auto& [pid, cell] : by_panel)
        consensus[mid].push_back(cell.first / cell.second);
    }

    std::map<std::string, double> means;
    for (const auto& [mid, v] : consensus) means[mid] = mean_of(v);

    for (const auto& [mid, v] : consensus) {
      MethodCriterionStat row;
      row.method_id = mid;
      row.criterion = criterion;
      row.mean = means[mid];
      row.std_dev = sample_std(v);
      row.n_panels = static_cast<int>(v.size());
      if (consensus.size() > 1) {
        std::string best;
        for (const auto& [other, om] : means) {
          if (other == mid) continue;
          if (best.empty() || om > means[best]) best = other;
        }
        row.comparator = best;
        std::vector<double> d(v.size());
        for (size_t i = 0; i < v.size(); ++i) d[i] = v[i] - consensus[best][i];
        row.p_vs_best = bootstrap_paired_p(
            d, bootstrap_resamples, Rng(seed).fork(fnv1a(criterion + "\x1f" + mid)).next_u64());
      }
      out.rows.push_back(std::move(row));
    }
  }
  std::sort(out.rows.begin(), out.rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.criterion, a.method_id) < std::tie(b.criterion, b.method_id);
  });
  return out;
}

double point_biserial(const std::vector<int>& binary, const std::vector<double>& metric) {
  if (binary.size() != metric.size() || binary.empty())
    throw data_error("point biserial needs matching nonempty vectors");
  size_t n1 = 0;
  for (int b : binary) {
    if (b != 0 && b != 1) throw data_error("point biserial needs binary scores");
    n1 += static_cast<size_t>(b);
  }
  size_t n0 = binary.size() - n1;
  if (n0 == 0 || n1 == 0)
    throw numeric_error("point biserial undefined with a single class");

  double m1 = 0, m0 = 0, mean = 0;
  for (size_t i = 0; i < binary.size(); ++i) {
    (binary[i] ? m1 : m0) += metric[i];
    mean += metric[i];
  }
  m1 /= static_cast<double>(n1);
  m0 /= static_cast<double>(n0);
  mean /= static_cast<double>(binary.size());
  double var = 0;
  for (double v : metric) var += (v - mean) * (v - mean);
  var /= static_cast<double>(binary.size());  // population variance
  if (var <= 0) throw numeric_error("point biserial undefined for a constant metric");
  double n = static_cast<double>(binary.size());
  return (m1 - m0) / std::sqrt(var) *
         std::sqrt(static_cast<double>(n1) * static_cast<double>(n0) / (n * n));
}

std::vector<RealnessRow> realness_summary(
    const std::vector<RealnessCall>& calls,
    const std::vector<std::pair<std::string, std::string>>& truth) {
  if (calls.empty()) throw data_error("no realness calls");
  std::map<std::string, std::string> source_of(truth.begin(), truth.end());
  std::map<std::string, std::pair<double, int>> per_image;  // image -> (sum, n)
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& c : calls) {
    if (c.says_real != 0 && c.says_real != 1) throw data_error("realness call must be 0 or 1");
    if (!source_of.count(c.image_id))
      throw data_error("image '" + c.image_id + "' is not in the truth map");
    if (!seen.insert({c.rater_id, c.image_id}).second)
      throw data_error("duplicate realness call for rater " + c.rater_id + " image " + c.image_id);
    auto& cell = per_image[c.image_id];
    cell.first += c.says_real;
    cell.second += 1;
  }

  std::map<std::string, std::vector<double>> by_source;
  for (const auto& [img, cell] : per_image)
    by_source[source_of[img]].push_back(cell.first / cell.second);

  std::vector<RealnessRow> rows;
  for (const auto& [src, v] : by_source) {
    RealnessRow r;
    r.source = src;
    r.realness = mean_of(v);
    r.std_dev = sample_std(v);
    r.n_images = static_cast<int>(v.size());
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_study_csv(const StudySummary& s, const std::filesystem::path& path) {
  CsvWriter csv(path.string());
  csv.row({"criterion", "method", "mean", "std", "p_vs_best", "comparator", "n_panels"});
  for (const auto& r : s.rows)
    csv.row({r.criterion, r.method_id, fmt_f(r.mean), fmt_f(r.std_dev), fmt_f(r.p_vs_best),
             r.comparator, std::to_string(r.n_panels)});
  csv.flush();
}

StudySummary read_study_csv(const std::filesystem::path& path) {
  auto rows = read_csv(path.string());
  if (rows.empty() || rows[0] != std::vector<std::string>{"criterion", "method", "mean", "std",
                                                          "p_vs_best", "comparator", "n_panels"})
    throw data_error("unrecognized study summary header: " + path.string());
  StudySummary s;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& c = rows[i];
    if (c.size() != 7) throw data_error("malformed study summary row");
    MethodCriterionStat r;
    r.criterion = c[0];
    r.method_id = c[1];
    r.mean = std::stod(c[2]);
    r.std_dev = std::stod(c[3]);
    r.p_vs_best = std::stod(c[4]);
    r.comparator = c[5];
    r.n_panels = std::stoi(c[6]);
    s.rows.push_back(std::move(r));
  }
  return s;
}

void write_realness_csv(const std::vector<RealnessRow>& rows, const std::filesystem::path& path) {
  CsvWriter csv(path.string());
  csv.row({"source", "realness", "std", "n_images"});
  for (const auto& r : rows)
    csv.row({r.source, fmt_f(r.realness), fmt_f(r.std_dev), std::to_string(r.n_images)});
  csv.flush();
}

}  // namespace ph
