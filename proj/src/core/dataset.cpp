#include "dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw tensor files are little-endian; byte swapping is not implemented");

namespace fs = std::filesystem;
using nlohmann::json;

namespace ph {

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::maskpool: return "maskpool";
  }
  return "?";
}

const char* to_string(SliceLabel l) {
  return l == SliceLabel::healthy ? "healthy" : "pathological";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "maskpool") return Split::maskpool;
  throw data_error("unknown split '" + s + "'");
}

SliceLabel label_from_string(const std::string& s) {
  if (s == "healthy") return SliceLabel::healthy;
  if (s == "pathological") return SliceLabel::pathological;
  throw data_error("unknown label '" + s + "'");
}

void Dataset::validate() const {
  std::map<int, Split> subject_split;
  for (const auto& s : samples) {
    if (s.image.h != height || s.image.w != width || s.mask.h != height || s.mask.w != width)
      throw data_error("sample " + s.id + ": shape mismatch with dataset " +
                       std::to_string(height) + "x" + std::to_string(width));
    auto it = subject_split.find(s.subject_id);
    if (it == subject_split.end()) {
      subject_split.emplace(s.subject_id, s.split);
    } else if (it->second != s.split) {
      throw data_error("subject " + std::to_string(s.subject_id) +
                       " appears in more than one split");
    }
    if (label_slice(s.mask) != s.label)
      throw data_error("sample " + s.id + ": label disagrees with its mask");
    for (float x : s.image.v)
      if (!(x >= 0.0f && x <= 1.0f))
        throw data_error("sample " + s.id + ": image values outside [0,1]");
  }
}

Dataset Dataset::filter(SliceLabel label, Split split) const {
  Dataset out;
  out.height = height;
  out.width = width;
  for (const auto& s : samples)
    if (s.label == label && s.split == split) out.samples.push_back(s);
  return out;
}

std::vector<const PathologyMask*> Dataset::masks_of(Split split) const {
  std::vector<const PathologyMask*> out;
  for (const auto& s : samples)
    if (s.split == split && s.label == SliceLabel::pathological) out.push_back(&s.mask);
  return out;
}

size_t Dataset::count(SliceLabel label, Split split) const {
  size_t n = 0;
  for (const auto& s : samples)
    if (s.label == label && s.split == split) ++n;
  return n;
}

void PreprocessConfig::validate() const {
  if (!(clip_percentile > 0.0 && clip_percentile <= 1.0))
    throw config_error("preprocess: clip_percentile must be in (0,1]");
  if (slice_window < 1) throw config_error("preprocess: slice_window must be >= 1");
  if (crop_h < 1 || crop_w < 1) throw config_error("preprocess: crop must be positive");
}

std::vector<ImageSlice> preprocess_volume(const Volume& volume, const PreprocessConfig& cfg) {
  cfg.validate();
  if (volume.v.empty() || volume.d < 1) throw data_error("preprocess: empty volume");
  for (float x : volume.v)
    if (!(x >= 0.0f) || !std::isfinite(x))
      throw data_error("preprocess: volume intensities must be finite and nonnegative");

  // Percentile as the order statistic at index ceil(p*n)-1 of the sorted
  // flattened volume.
  std::vector<float> sorted(volume.v);
  std::sort(sorted.begin(), sorted.end());
  size_t n = sorted.size();
  size_t idx = static_cast<size_t>(std::ceil(cfg.clip_percentile * static_cast<double>(n))) - 1;
  idx = std::min(idx, n - 1);
  float vmax = sorted[idx];
  if (vmax <= 0.0f) throw data_error("preprocess: degenerate volume (percentile intensity is 0)");

  int z0 = 0, z1 = volume.d;
  if (volume.d > cfg.slice_window) {
    z0 = (volume.d - cfg.slice_window) / 2;
    z1 = z0 + cfg.slice_window;
  }

  std::vector<ImageSlice> out;
  out.reserve(static_cast<size_t>(z1 - z0));
  for (int z = z0; z < z1; ++z) {
    ImageSlice s(cfg.crop_h, cfg.crop_w, 0.0f);
    // Center crop; source offsets may be negative, which zero-pads.
    int oy = (volume.h - cfg.crop_h) / 2;
    int ox = (volume.w - cfg.crop_w) / 2;
    for (int y = 0; y < cfg.crop_h; ++y) {
      int sy = y + oy;
      if (sy < 0 || sy >= volume.h) continue;
      for (int x = 0; x < cfg.crop_w; ++x) {
        int sx = x + ox;
        if (sx < 0 || sx >= volume.w) continue;
        s.at(y, x) = std::min(volume.at(z, sy, sx), vmax) / vmax;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

SliceLabel label_slice(const PathologyMask& mask) {
  uint64_t sum = 0;
  for (uint8_t b : mask.v) {
    if (b > 1) throw data_error("label_slice: mask is not binary");
    sum += b;
  }
  return sum == 0 ? SliceLabel::healthy : SliceLabel::pathological;
}

double js_divergence(const std::vector<double>& hist_a, const std::vector<double>& hist_b) {
  if (hist_a.size() != hist_b.size() || hist_a.empty())
    throw data_error("js_divergence: histograms must have the same nonzero bin count");
  double ma = 0.0, mb = 0.0;
  for (double x : hist_a) {
    if (x < 0.0) throw data_error("js_divergence: negative bin count");
    ma += x;
  }
  for (double x : hist_b) {
    if (x < 0.0) throw data_error("js_divergence: negative bin count");
    mb += x;
  }
  if (ma <= 0.0 || mb <= 0.0) throw data_error("js_divergence: zero-mass histogram");

  double d = 0.0;
  for (size_t i = 0; i < hist_a.size(); ++i) {
    double p = hist_a[i] / ma;
    double q = hist_b[i] / mb;
    double m = 0.5 * (p + q);
    if (p > 0.0) d += 0.5 * p * std::log2(p / m);
    if (q > 0.0) d += 0.5 * q * std::log2(q / m);
  }
  return d;
}

std::vector<double> intensity_histogram(const std::vector<const ImageSlice*>& images, int bins) {
  if (bins < 1) throw config_error("intensity_histogram: bins must be >= 1");
  std::vector<double> h(static_cast<size_t>(bins), 0.0);
  for (const ImageSlice* img : images) {
    for (float x : img->v) {
      int b = std::min(bins - 1, static_cast<int>(x * bins));
      h[static_cast<size_t>(std::max(0, b))] += 1.0;
    }
  }
  return h;
}

void assign_splits(std::vector<DataSample>& samples, double train_frac, double val_frac,
                   double test_frac, double maskpool_frac, Rng& rng) {
  double total = train_frac + val_frac + test_frac;
  if (train_frac <= 0 || val_frac < 0 || test_frac < 0 || maskpool_frac < 0 ||
      maskpool_frac >= 1 || total <= 0)
    throw config_error("assign_splits: invalid split fractions");

  std::set<int> path_subjects, heal_subjects;
  for (const auto& s : samples)
    (s.label == SliceLabel::pathological ? path_subjects : heal_subjects).insert(s.subject_id);

  std::vector<int> path(path_subjects.begin(), path_subjects.end());
  rng.shuffle(path);
  size_t n_pool = static_cast<size_t>(std::lround(maskpool_frac * static_cast<double>(path.size())));
  std::map<int, Split> assignment;
  for (size_t i = 0; i < n_pool; ++i) assignment[path[i]] = Split::maskpool;

  std::vector<int> rest(path.begin() + static_cast<long>(n_pool), path.end());
  rest.insert(rest.end(), heal_subjects.begin(), heal_subjects.end());
  rng.shuffle(rest);
  size_t n = rest.size();
  size_t n_train = static_cast<size_t>(std::lround(train_frac / total * static_cast<double>(n)));
  size_t n_val = static_cast<size_t>(std::lround(val_frac / total * static_cast<double>(n)));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);
  for (size_t i = 0; i < n; ++i) {
    Split sp = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    assignment[rest[i]] = sp;
  }
  for (auto& s : samples) s.split = assignment.at(s.subject_id);
}

namespace {

void write_bytes(const fs::path& p, const void* data, size_t bytes) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw data_error("cannot open for writing: " + p.string());
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw data_error("short write: " + p.string());
}

void read_bytes(const fs::path& p, void* data, size_t bytes) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw data_error("missing file: " + p.string());
  auto actual = static_cast<size_t>(f.tellg());
  if (actual != bytes)
    throw data_error("corrupt payload " + p.string() + ": expected " + std::to_string(bytes) +
                     " bytes, found " + std::to_string(actual));
  f.seekg(0);
  f.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw data_error("short read: " + p.string());
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  ds.validate();
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "pseudoheal-dataset-v1";
  manifest["height"] = ds.height;
  manifest["width"] = ds.width;
  json list = json::array();
  for (const auto& s : ds.samples) {
    json e;
    e["id"] = s.id;
    e["subject_id"] = s.subject_id;
    e["shape"] = {s.image.h, s.image.w};
    e["label"] = to_string(s.label);
    e["deformed"] = s.deformed;
    e["split"] = to_string(s.split);
    e["image"] = s.id + ".img.f32";
    e["mask"] = s.id + ".msk.u8";
    list.push_back(e);
    write_bytes(fs::path(dir) / (s.id + ".img.f32"), s.image.v.data(),
                s.image.size() * sizeof(float));
    write_bytes(fs::path(dir) / (s.id + ".msk.u8"), s.mask.v.data(), s.mask.size());
  }
  manifest["samples"] = std::move(list);
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw data_error("cannot write manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  fs::path root(dir);
  std::ifstream f(root / "manifest.json");
  if (!f) throw data_error("missing manifest.json in " + dir);
  json manifest;
  try {
    f >> manifest;
  } catch (const json::exception& e) {
    throw data_error("corrupt manifest.json in " + dir + ": " + e.what());
  }
  if (!manifest.contains("format") || manifest["format"] != "pseudoheal-dataset-v1")
    throw data_error("manifest format is not pseudoheal-dataset-v1 in " + dir);

  Dataset ds;
  try {
    ds.height = manifest.at("height").get<int>();
    ds.width = manifest.at("width").get<int>();
    size_t files_present = 0;
    for (const auto& e : fs::directory_iterator(root))
      if (e.path().extension() == ".f32") ++files_present;
    const auto& list = manifest.at("samples");
    if (files_present != list.size())
      throw data_error("manifest lists " + std::to_string(list.size()) + " samples but " +
                       std::to_string(files_present) + " image files are present in " + dir);
    for (const auto& e : list) {
      DataSample s;
      s.id = e.at("id").get<std::string>();
      s.subject_id = e.at("subject_id").get<int>();
      int h = e.at("shape").at(0).get<int>();
      int w = e.at("shape").at(1).get<int>();
      if (h != ds.height || w != ds.width)
        throw data_error("sample " + s.id + ": manifest shape disagrees with dataset shape");
      s.label = label_from_string(e.at("label").get<std::string>());
      s.deformed = e.at("deformed").get<bool>();
      s.split = split_from_string(e.at("split").get<std::string>());
      s.image = ImageSlice(h, w);
      s.mask = PathologyMask(h, w);
      read_bytes(root / e.at("image").get<std::string>(), s.image.v.data(),
                 s.image.size() * sizeof(float));
      read_bytes(root / e.at("mask").get<std::string>(), s.mask.v.data(), s.mask.size());
      ds.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw data_error("malformed manifest in " + dir + ": " + e.what());
  }
  ds.validate();
  return ds;
}

}  // namespace ph
