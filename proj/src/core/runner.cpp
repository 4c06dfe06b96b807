#include "runner.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "checkpoint.hpp"
#include "csv.hpp"
#include "errors.hpp"

namespace ph {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

torch::Tensor stack_images(const std::vector<const ImageSlice*>& imgs) {
  if (imgs.empty()) throw data_error("no images to evaluate");
  const int h = imgs[0]->h, w = imgs[0]->w;
  auto t = torch::zeros({static_cast<long>(imgs.size()), 1, h, w}, torch::kFloat32);
  float* dst = t.data_ptr<float>();
  for (size_t i = 0; i < imgs.size(); ++i) {
    if (imgs[i]->h != h || imgs[i]->w != w) throw data_error("mixed image sizes");
    std::memcpy(dst + i * h * w, imgs[i]->v.data(), sizeof(float) * h * w);
  }
  return t;
}

torch::Tensor stack_masks(const std::vector<const PathologyMask*>& masks) {
  if (masks.empty()) throw data_error("no masks to evaluate");
  const int h = masks[0]->h, w = masks[0]->w;
  auto t = torch::zeros({static_cast<long>(masks.size()), 1, h, w}, torch::kFloat32);
  float* dst = t.data_ptr<float>();
  for (size_t i = 0; i < masks.size(); ++i) {
    if (masks[i]->h != h || masks[i]->w != w) throw data_error("mixed mask sizes");
    for (size_t p = 0; p < masks[i]->v.size(); ++p)
      dst[i * h * w + p] = static_cast<float>(masks[i]->v[p]);
  }
  return t;
}

ImageSlice slice_from_row(const torch::Tensor& t, long i) {
  auto row = t[i][0].contiguous();
  ImageSlice s(static_cast<int>(row.size(0)), static_cast<int>(row.size(1)));
  std::memcpy(s.v.data(), row.data_ptr<float>(), sizeof(float) * s.v.size());
  return s;
}

double histogram_gap(const Dataset& ds) {
  std::vector<const ImageSlice*> healthy, path;
  for (const auto& s : ds.samples) {
    if (s.split != Split::train) continue;
    (s.label == SliceLabel::healthy ? healthy : path).push_back(&s.image);
  }
  if (healthy.empty() || path.empty()) return 0.0;
  return js_divergence(intensity_histogram(healthy), intensity_histogram(path));
}

DataSummary summarize(const Dataset& ds, double js) {
  DataSummary out;
  out.n_slices = static_cast<int>(ds.samples.size());
  out.js = js;
  std::map<int, int> subjects;
  for (const auto& s : ds.samples) {
    subjects[s.subject_id]++;
    if (s.label == SliceLabel::pathological) out.n_pathological++;
    else out.n_healthy++;
    switch (s.split) {
      case Split::train: out.n_train++; break;
      case Split::val: out.n_val++; break;
      case Split::test: out.n_test++; break;
      case Split::maskpool: out.n_maskpool++; break;
    }
  }
  out.n_subjects = static_cast<int>(subjects.size());
  return out;
}

DataSummary finalize_dataset(Dataset& ds, const ExperimentConfig& cfg) {
  Rng rng(cfg.split_seed);
  assign_splits(ds.samples, cfg.train_frac, cfg.val_frac, cfg.test_frac, cfg.maskpool_frac, rng);
  ds.validate();
  double js = histogram_gap(ds);
  if (js > cfg.max_js)
    throw data_error("healthy/pathological intensity histograms diverge: js " + fmt_f(js, 4) +
                     " > max_js " + fmt_f(cfg.max_js, 4));
  fs::create_directories(cfg.paths.data_dir);
  save_dataset(ds, cfg.paths.data_dir);
  cfg.save(fs::path(cfg.paths.data_dir) / "experiment.json");
  return summarize(ds, js);
}

std::vector<float> read_f32_file(const fs::path& p, size_t n) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw data_error("cannot open volume file: " + p.string());
  std::vector<float> v(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<size_t>(f.gcount()) != n * sizeof(float))
    throw data_error("short read: " + p.string());
  return v;
}

std::vector<uint8_t> read_u8_file(const fs::path& p, size_t n) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw data_error("cannot open mask file: " + p.string());
  std::vector<uint8_t> v(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(f.gcount()) != n) throw data_error("short read: " + p.string());
  return v;
}

// The mask follows the image geometry: middle window of slices, center crop,
// no intensity handling.
PathologyMask crop_mask(const Volume& mv, int z, int crop_h, int crop_w) {
  PathologyMask m(crop_h, crop_w, 0);
  int oy = (mv.h - crop_h) / 2;
  int ox = (mv.w - crop_w) / 2;
  for (int y = 0; y < crop_h; ++y) {
    int sy = y + oy;
    if (sy < 0 || sy >= mv.h) continue;
    for (int x = 0; x < crop_w; ++x) {
      int sx = x + ox;
      if (sx < 0 || sx >= mv.w) continue;
      m.at(y, x) = mv.at(z, sy, sx) > 0.5f ? 1 : 0;
    }
  }
  return m;
}

json judge_json(const JudgeConfig& c) {
  return {{"epochs", c.epochs},
          {"finetune_epochs", c.finetune_epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"seed", c.seed},
          {"net",
           {{"levels", c.net.levels},
            {"base_channels", c.net.base_channels},
            {"critic_base_channels", c.net.critic_base_channels},
            {"instance_norm", c.net.instance_norm},
            {"leaky_slope", c.net.leaky_slope}}}};
}

json dec_json(const DecConfig& c) {
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}, {"seed", c.seed}};
}

// Ties aux caches to the dataset they were trained on.
std::string data_fingerprint(const std::string& data_dir) {
  fs::path snap = fs::path(data_dir) / "experiment.json";
  if (fs::exists(snap)) return file_hash(snap.string());
  fs::path man = fs::path(data_dir) / "manifest.json";
  if (fs::exists(man)) return file_hash(man.string());
  return "";
}

void require_same_train_config(const fs::path& ckpt, const TrainConfig& cfg) {
  auto ck = load_checkpoint(ckpt.string());
  auto stored = ck.meta.value("config", json());
  auto wanted = cfg.to_json();
  stored.erase("epochs");
  wanted.erase("epochs");
  if (stored != wanted)
    throw config_error("run directory " + ckpt.parent_path().string() +
                       " holds a model trained with a different config");
}

std::string cell_or_dash(const std::string& s) { return s.empty() ? "-" : s; }

}  // namespace

TrainConfig variant_config(const TrainConfig& base, const std::string& name) {
  TrainConfig c = base;
  c.ablation = Ablation::none;
  c.baseline = Baseline::none;
  if (name == "none") return c;
  if (name == "no_cycle_hh" || name == "cycle_hp" || name == "lsgan") {
    c.ablation = ablation_from_string(name);
    return c;
  }
  if (name == "cyclegan" || name == "conditional_gan") {
    c.baseline = baseline_from_string(name);
    return c;
  }
  throw config_error("unknown variant: " + name);
}

DataSummary cmd_phantom(const ExperimentConfig& cfg) {
  auto samples = generate_phantom(cfg.phantom, cfg.phantom_count);
  Dataset ds;
  ds.height = cfg.phantom.height;
  ds.width = cfg.phantom.width;
  ds.samples.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    DataSample d;
    char id[32];
    std::snprintf(id, sizeof(id), "ph_%05zu", i);
    d.id = id;
    d.subject_id = samples[i].subject_id;
    d.image = std::move(samples[i].image);
    d.mask = std::move(samples[i].mask);
    d.label = samples[i].label;
    d.deformed = samples[i].deformed;
    ds.samples.push_back(std::move(d));
  }
  return finalize_dataset(ds, cfg);
}

DataSummary cmd_prepare(const ExperimentConfig& cfg) {
  if (cfg.paths.input_dir.empty()) throw config_error("paths.input_dir is required for prepare");
  fs::path in(cfg.paths.input_dir);
  if (!fs::is_directory(in)) throw data_error("input_dir does not exist: " + in.string());

  std::vector<fs::path> manifests;
  for (const auto& e : fs::directory_iterator(in)) {
    auto name = e.path().filename().string();
    if (name.size() > 9 && name.substr(name.size() - 9) == ".vol.json") manifests.push_back(e.path());
  }
  std::sort(manifests.begin(), manifests.end());
  if (manifests.empty()) throw data_error("no *.vol.json manifests in " + in.string());

  Dataset ds;
  ds.height = cfg.preprocess.crop_h;
  ds.width = cfg.preprocess.crop_w;
  for (const auto& mp : manifests) {
    std::ifstream f(mp);
    json j;
    try {
      f >> j;
    } catch (const json::parse_error& e) {
      throw data_error(mp.string() + ": " + e.what());
    }
    int subject = 0, d = 0, h = 0, w = 0;
    std::string image_file, mask_file;
    try {
      subject = j.at("subject_id").get<int>();
      d = j.at("depth").get<int>();
      h = j.at("height").get<int>();
      w = j.at("width").get<int>();
      image_file = j.at("image").get<std::string>();
      if (j.contains("mask")) mask_file = j.at("mask").get<std::string>();
    } catch (const json::exception& e) {
      throw data_error(mp.string() + ": " + e.what());
    }
    if (d < 1 || h < 1 || w < 1) throw data_error(mp.string() + ": bad volume dimensions");

    Volume vol(d, h, w);
    vol.v = read_f32_file(in / image_file, vol.v.size());
    Volume mask_vol(d, h, w, 0.0f);
    if (!mask_file.empty()) {
      auto raw = read_u8_file(in / mask_file, mask_vol.v.size());
      for (size_t i = 0; i < raw.size(); ++i) mask_vol.v[i] = static_cast<float>(raw[i]);
    }

    auto slices = preprocess_volume(vol, cfg.preprocess);
    int z0 = 0;
    if (d > cfg.preprocess.slice_window) z0 = (d - cfg.preprocess.slice_window) / 2;
    std::string stem = mp.filename().string();
    stem = stem.substr(0, stem.size() - 9);
    for (size_t zi = 0; zi < slices.size(); ++zi) {
      DataSample s;
      char id[160];
      std::snprintf(id, sizeof(id), "%s_z%03zu", stem.c_str(), zi);
      s.id = id;
      s.subject_id = subject;
      s.image = std::move(slices[zi]);
      s.mask = crop_mask(mask_vol, z0 + static_cast<int>(zi), cfg.preprocess.crop_h,
                         cfg.preprocess.crop_w);
      s.label = label_slice(s.mask);
      ds.samples.push_back(std::move(s));
    }
  }
  return finalize_dataset(ds, cfg);
}

TrainOutcome cmd_train(const ExperimentConfig& cfg) {
  TrainOutcome out;
  out.run_dir = cfg.paths.run_dir;
  fs::path run_dir(cfg.paths.run_dir);
  fs::create_directories(run_dir);

  const fs::path final_path = run_dir / "final.ckpt";
  const fs::path last_path = run_dir / "last.ckpt";
  // Refuse to touch a directory trained under a different config before the
  // snapshot below can overwrite its provenance.
  if (fs::exists(final_path)) require_same_train_config(final_path, cfg.train);
  else if (fs::exists(last_path)) require_same_train_config(last_path, cfg.train);
  cfg.save(run_dir / "experiment.json");

  if (fs::exists(final_path)) {
    auto ck = load_checkpoint(final_path.string());
    int done = ck.meta.value("epoch", 0);
    if (done >= cfg.train.epochs) {
      out.skipped = true;
      out.epochs = done;
      out.steps = ck.meta.value("step", static_cast<std::int64_t>(0));
      out.final_hash = file_hash(final_path.string());
      return out;
    }
  }

  Dataset ds = load_dataset(cfg.paths.data_dir);
  TrainData td = make_train_data(ds);
  TrainStats stats;
  ModelBundle b = train_model(td, cfg.train, run_dir, &stats);
  out.epochs = b.epoch;
  out.steps = b.step;
  out.resumed = stats.resumed;
  out.final_hash = file_hash(final_path.string());
  return out;
}

Judge ensure_judge(const Dataset& ds, const ExperimentConfig& cfg) {
  fs::path aux = fs::path(cfg.paths.data_dir) / "aux";
  fs::create_directories(aux);
  fs::path path = aux / "judge.ckpt";
  json wanted = judge_json(cfg.eval.judge);
  std::string fp = data_fingerprint(cfg.paths.data_dir);
  if (fs::exists(path)) {
    auto ck = load_checkpoint(path.string());
    if (ck.meta.value("config", json()) == wanted && ck.meta.value("data", "") == fp) {
      Judge j;
      j.net = SegmentorNet(cfg.eval.judge.net);
      get_module(ck, "net", *j.net);
      j.heldout_dice = ck.meta.value("heldout_dice", 0.0);
      return j;
    }
  }
  Judge j = train_judge(ds, cfg.eval.judge);
  Checkpoint ck;
  ck.meta["kind"] = "judge";
  ck.meta["config"] = wanted;
  ck.meta["data"] = fp;
  ck.meta["heldout_dice"] = j.heldout_dice;
  put_module(ck, "net", *j.net);
  save_checkpoint(path.string(), ck);
  return j;
}

DecClassifier ensure_dec(const Dataset& ds, const ExperimentConfig& cfg) {
  fs::path aux = fs::path(cfg.paths.data_dir) / "aux";
  fs::create_directories(aux);
  fs::path path = aux / "dec.ckpt";
  json wanted = dec_json(cfg.eval.dec);
  std::string fp = data_fingerprint(cfg.paths.data_dir);
  if (fs::exists(path)) {
    auto ck = load_checkpoint(path.string());
    if (ck.meta.value("config", json()) == wanted && ck.meta.value("data", "") == fp) {
      DecClassifier c;
      c.net = DecNet(8);
      get_module(ck, "net", *c.net);
      c.heldout_accuracy = ck.meta.value("heldout_accuracy", 0.0);
      return c;
    }
  }
  DecClassifier c = train_dec_classifier(ds, cfg.eval.dec);
  Checkpoint ck;
  ck.meta["kind"] = "dec";
  ck.meta["config"] = wanted;
  ck.meta["data"] = fp;
  ck.meta["heldout_accuracy"] = c.heldout_accuracy;
  put_module(ck, "net", *c.net);
  save_checkpoint(path.string(), ck);
  return c;
}

EvalOutcome cmd_eval(const ExperimentConfig& cfg) {
  fs::path run_dir(cfg.paths.run_dir);
  fs::path ckpt = run_dir / "final.ckpt";
  if (!fs::exists(ckpt))
    throw data_error("no trained model at " + ckpt.string() + "; run train first");

  Dataset ds = load_dataset(cfg.paths.data_dir);
  ModelBundle b = load_bundle(ckpt);
  Judge judge = ensure_judge(ds, cfg);
  DecClassifier clf = ensure_dec(ds, cfg);

  EvalOutcome out;
  out.report = evaluate_bundle(b, ds, judge, clf);
  out.judge_dice = judge.heldout_dice;
  out.dec_accuracy = clf.heldout_accuracy;
  write_report_csv(out.report, run_dir / "report.csv");

  if (b.r) {
    out.residual = cycle_hh_residual(b, ds, Split::test);
    out.has_residual = true;
  }

  if (cfg.eval.mask_shift && b.s && b.r) {
    out.has_shift = true;
    for (const auto& s : ds.samples) {
      if (s.split != Split::test || s.label != SliceLabel::pathological) continue;
      out.shift.total++;
      auto res = mask_shift_diagnostic(b, s.image, cfg.eval.mask_shift_px);
      if (!res.valid) continue;
      out.shift.valid++;
      if (res.iou_shifted > res.iou_original) out.shift.wins++;
    }
  }

  if (cfg.eval.iterate_k > 0 && b.g) {
    auto test_p = ds.filter(SliceLabel::pathological, Split::test);
    std::vector<const ImageSlice*> imgs;
    std::vector<const PathologyMask*> masks;
    for (const auto& s : test_p.samples) {
      imgs.push_back(&s.image);
      masks.push_back(&s.mask);
    }
    if (!imgs.empty())
      out.iterate = iterate_generator(b.g, stack_images(imgs), stack_masks(masks),
                                      judge_from_net(judge.net), cfg.eval.iterate_k);
  }

  json j;
  j["h"] = out.report.h;
  j["id"] = out.report.id;
  j["dec"] = out.report.dec;
  j["diffmap_dice"] = out.report.dice_diffmap;
  j["seg_dice"] = out.report.has_segmentor ? json(out.report.dice_segmentor) : json();
  j["judge_dice"] = out.judge_dice;
  j["dec_accuracy"] = out.dec_accuracy;
  j["n_samples"] = out.report.n_samples;
  j["residual"] = out.has_residual ? json(out.residual) : json();
  if (out.has_shift)
    j["mask_shift"] = {{"total", out.shift.total},
                       {"valid", out.shift.valid},
                       {"wins", out.shift.wins}};
  else
    j["mask_shift"] = json();
  auto it = json::array();
  for (const auto& p : out.iterate) it.push_back({{"id", p.id}, {"h", p.h}});
  j["iterate"] = it;
  std::ofstream f(run_dir / "eval.json");
  f << j.dump(2) << "\n";
  if (!f) throw data_error("cannot write eval.json in " + run_dir.string());
  return out;
}

std::vector<SweepRow> cmd_sweep_semi(const ExperimentConfig& cfg) {
  fs::path root(cfg.paths.run_dir);
  fs::create_directories(root);
  cfg.save(root / "experiment.json");

  std::vector<SweepRow> rows;
  for (double r : cfg.semi_ratios) {
    ExperimentConfig sub = cfg;
    sub.train.semi_ratio = r;
    sub.train.setting = TrainSetting::semi;
    // The endpoints are the pure settings; keep them identical to those runs.
    if (r >= 1.0) sub.train.setting = TrainSetting::paired;
    else if (r <= 0.0) sub.train.setting = TrainSetting::unpaired;
    sub.paths.run_dir = (root / ("ratio_" + fmt_f(r, 2))).string();
    cmd_train(sub);
    SweepRow row;
    row.ratio = r;
    row.dir = sub.paths.run_dir;
    row.eval = cmd_eval(sub);
    rows.push_back(std::move(row));
  }

  CsvWriter csv((root / "sweep_semi.csv").string());
  csv.row({"ratio", "h", "id", "dec", "diffmap_dice", "seg_dice", "residual"});
  for (const auto& row : rows) {
    const auto& m = row.eval.report;
    csv.row({fmt_f(row.ratio, 2), fmt_f(m.h), fmt_f(m.id), fmt_f(m.dec), fmt_f(m.dice_diffmap),
             m.has_segmentor ? fmt_f(m.dice_segmentor) : "",
             row.eval.has_residual ? fmt_f(row.eval.residual) : ""});
  }
  return rows;
}

std::vector<VariantRow> cmd_ablate(const ExperimentConfig& cfg) {
  fs::path root(cfg.paths.run_dir);
  fs::create_directories(root);
  cfg.save(root / "experiment.json");

  std::vector<VariantRow> rows;
  for (const auto& name : cfg.ablations) {
    ExperimentConfig sub = cfg;
    sub.train = variant_config(cfg.train, name);
    sub.paths.run_dir = (root / name).string();
    cmd_train(sub);
    VariantRow row;
    row.variant = name;
    row.dir = sub.paths.run_dir;
    row.eval = cmd_eval(sub);
    rows.push_back(std::move(row));
  }

  CsvWriter csv((root / "ablation.csv").string());
  csv.row({"variant", "h", "id", "dec", "diffmap_dice", "seg_dice", "residual"});
  for (const auto& row : rows) {
    const auto& m = row.eval.report;
    csv.row({row.variant, fmt_f(m.h), fmt_f(m.id), fmt_f(m.dec), fmt_f(m.dice_diffmap),
             m.has_segmentor ? fmt_f(m.dice_segmentor) : "",
             row.eval.has_residual ? fmt_f(row.eval.residual) : ""});
  }
  return rows;
}

PanelSet cmd_panels(const ExperimentConfig& cfg) {
  Dataset ds = load_dataset(cfg.paths.data_dir);
  auto test_p = ds.filter(SliceLabel::pathological, Split::test);
  if (test_p.samples.empty()) throw data_error("no pathological test slices for panels");

  size_t limit = test_p.samples.size();
  if (cfg.panel_count > 0) limit = std::min(limit, static_cast<size_t>(cfg.panel_count));
  std::vector<ImageSlice> inputs;
  std::vector<PathologyMask> masks;
  std::vector<const ImageSlice*> input_ptrs;
  for (size_t i = 0; i < limit; ++i) {
    inputs.push_back(test_p.samples[i].image);
    masks.push_back(test_p.samples[i].mask);
    input_ptrs.push_back(&test_p.samples[i].image);
  }

  // Any directory holding a final checkpoint under run_dir is one method;
  // a checkpoint directly in run_dir stands alone.
  fs::path root(cfg.paths.run_dir);
  std::vector<std::pair<std::string, fs::path>> found;
  if (fs::exists(root / "final.ckpt"))
    found.emplace_back(root.filename().string(), root / "final.ckpt");
  if (fs::is_directory(root)) {
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory() && fs::exists(e.path() / "final.ckpt"))
        found.emplace_back(e.path().filename().string(), e.path() / "final.ckpt");
    }
  }
  std::sort(found.begin(), found.end());
  if (found.empty()) throw data_error("no trained models under " + root.string());

  auto x_p = stack_images(input_ptrs);
  std::vector<MethodImages> methods;
  torch::NoGradGuard ng;
  for (const auto& [name, ckpt] : found) {
    ModelBundle b = load_bundle(ckpt);
    if (!b.g) throw data_error("model in " + ckpt.string() + " has no generator");
    auto g = b.g;
    g->eval();
    auto synth = g->forward(x_p);
    MethodImages mi;
    mi.method_id = name;
    for (long i = 0; i < synth.size(0); ++i) mi.images.push_back(slice_from_row(synth, i));
    methods.push_back(std::move(mi));
  }

  auto set = build_panels(methods, inputs, masks, cfg.study_seed, cfg.paths.panel_dir,
                          cfg.paths.blind_dir);
  cfg.save(fs::path(cfg.paths.blind_dir) / "experiment.json");
  return set;
}

StudySummary cmd_scores(const ExperimentConfig& cfg) {
  if (cfg.paths.scores_csv.empty()) throw config_error("paths.scores_csv is required for scores");
  fs::path run_dir(cfg.paths.run_dir);
  fs::create_directories(run_dir);
  cfg.save(run_dir / "experiment.json");

  auto scores = ingest_scores(cfg.paths.scores_csv,
                              fs::path(cfg.paths.blind_dir) / "blinding_map.csv");
  StudySummary summary = aggregate_scores(scores, cfg.study_bootstrap, cfg.study_seed);
  write_study_csv(summary, run_dir / "study_summary.csv");

  if (!cfg.paths.realness_csv.empty()) {
    if (cfg.paths.realness_truth_csv.empty())
      throw config_error("paths.realness_truth_csv is required with realness_csv");
    auto rows = read_csv(cfg.paths.realness_csv);
    if (rows.empty() || rows[0] != std::vector<std::string>{"rater_id", "image_id", "says_real"})
      throw data_error("realness csv must start with rater_id,image_id,says_real");
    std::vector<RealnessCall> calls;
    for (size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() != 3) throw data_error("realness csv: bad row " + std::to_string(i));
      RealnessCall c;
      c.rater_id = rows[i][0];
      c.image_id = rows[i][1];
      try {
        c.says_real = std::stoi(rows[i][2]);
      } catch (const std::exception&) {
        throw data_error("realness csv: bad call in row " + std::to_string(i));
      }
      calls.push_back(std::move(c));
    }
    auto trows = read_csv(cfg.paths.realness_truth_csv);
    if (trows.empty() || trows[0] != std::vector<std::string>{"image_id", "source"})
      throw data_error("realness truth csv must start with image_id,source");
    std::vector<std::pair<std::string, std::string>> truth;
    for (size_t i = 1; i < trows.size(); ++i) {
      if (trows[i].size() != 2)
        throw data_error("realness truth csv: bad row " + std::to_string(i));
      truth.emplace_back(trows[i][0], trows[i][1]);
    }
    write_realness_csv(realness_summary(calls, truth), run_dir / "realness_summary.csv");
  }
  return summary;
}

std::string cmd_report(const ExperimentConfig& cfg) {
  fs::path root(cfg.paths.run_dir);
  if (!fs::is_directory(root)) throw data_error("run_dir does not exist: " + root.string());

  struct Line {
    std::string section, name, h, id, dec, diffmap, seg, mean, sd, p;
  };
  std::vector<Line> lines;

  auto from_report = [](const std::string& section, const std::string& name,
                        const MetricReport& m) {
    Line l;
    l.section = section;
    l.name = name;
    l.h = fmt_f(m.h);
    l.id = fmt_f(m.id);
    l.dec = fmt_f(m.dec);
    l.diffmap = fmt_f(m.dice_diffmap);
    l.seg = m.has_segmentor ? fmt_f(m.dice_segmentor) : "";
    return l;
  };

  if (fs::exists(root / "report.csv"))
    lines.push_back(from_report("run", root.filename().string(),
                                read_report_csv(root / "report.csv")));
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "report.csv")) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& d : subdirs) {
    std::string name = d.filename().string();
    if (name.rfind("ratio_", 0) == 0) continue;  // the sweep file carries these
    lines.push_back(from_report("run", name, read_report_csv(d / "report.csv")));
  }

  if (fs::exists(root / "sweep_semi.csv")) {
    auto rows = read_csv((root / "sweep_semi.csv").string());
    for (size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() < 7) throw data_error("sweep_semi.csv: bad row " + std::to_string(i));
      Line l;
      l.section = "semi";
      l.name = rows[i][0];
      l.h = rows[i][1];
      l.id = rows[i][2];
      l.dec = rows[i][3];
      l.diffmap = rows[i][4];
      l.seg = rows[i][5];
      lines.push_back(std::move(l));
    }
  }

  if (fs::exists(root / "study_summary.csv")) {
    StudySummary s = read_study_csv(root / "study_summary.csv");
    for (const auto& r : s.rows) {
      Line l;
      l.section = "study";
      l.name = r.criterion + ":" + r.method_id;
      l.mean = fmt_f(r.mean);
      l.sd = fmt_f(r.std_dev);
      l.p = fmt_f(r.p_vs_best);
      lines.push_back(std::move(l));
    }
  }

  if (lines.empty()) throw data_error("nothing to report under " + root.string());

  CsvWriter csv((root / "summary.csv").string());
  const std::vector<std::string> header{"section",  "name",     "h",          "id",
                                        "dec",      "diffmap_dice", "seg_dice",
                                        "study_mean", "study_std", "study_p"};
  csv.row(header);
  for (const auto& l : lines)
    csv.row({l.section, l.name, l.h, l.id, l.dec, l.diffmap, l.seg, l.mean, l.sd, l.p});

  // Fixed-width rendering of the same rows.
  std::vector<std::vector<std::string>> cells;
  cells.push_back(header);
  for (const auto& l : lines)
    cells.push_back({l.section, l.name, cell_or_dash(l.h), cell_or_dash(l.id),
                     cell_or_dash(l.dec), cell_or_dash(l.diffmap), cell_or_dash(l.seg),
                     cell_or_dash(l.mean), cell_or_dash(l.sd), cell_or_dash(l.p)});
  std::vector<size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (size_t r = 0; r < cells.size(); ++r) {
    for (size_t c = 0; c < cells[r].size(); ++c) {
      out += cells[r][c];
      if (c + 1 < cells[r].size()) out.append(width[c] - cells[r][c].size() + 2, ' ');
    }
    out += '\n';
    if (r == 0) {
      for (size_t c = 0; c < width.size(); ++c) {
        out.append(width[c], '-');
        if (c + 1 < width.size()) out.append(2, ' ');
      }
      out += '\n';
    }
  }
  return out;
}

}  // namespace ph
