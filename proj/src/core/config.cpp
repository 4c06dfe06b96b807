#include "config.hpp"

#include <fstream>
#include <set>

#include "errors.hpp"

namespace ph {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw config_error(path + ": " + what);
}

// Tracks which keys a section consumed so leftovers can be reported by path.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
  }

  std::string key_path(const std::string& k) const {
    return path_.empty() ? k : path_ + "." + k;
  }

  const json* take(const char* k) {
    seen_.insert(k);
    auto it = j_.find(k);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const char* k, bool& out) {
    if (const json* p = take(k)) {
      if (!p->is_boolean()) fail(key_path(k), "expected a boolean");
      out = p->get<bool>();
    }
  }

  void get(const char* k, int& out) {
    if (const json* p = take(k)) {
      if (!p->is_number_integer() && !p->is_number_unsigned())
        fail(key_path(k), "expected an integer");
      out = p->get<int>();
    }
  }

  void get(const char* k, std::uint64_t& out) {
    if (const json* p = take(k)) {
      if (!(p->is_number_unsigned() || (p->is_number_integer() && p->get<std::int64_t>() >= 0)))
        fail(key_path(k), "expected a nonnegative integer");
      out = p->get<std::uint64_t>();
    }
  }

  void get(const char* k, double& out) {
    if (const json* p = take(k)) {
      if (!p->is_number()) fail(key_path(k), "expected a number");
      out = p->get<double>();
    }
  }

  void get(const char* k, std::string& out) {
    if (const json* p = take(k)) {
      if (!p->is_string()) fail(key_path(k), "expected a string");
      out = p->get<std::string>();
    }
  }

  void get(const char* k, std::vector<double>& out) {
    if (const json* p = take(k)) {
      if (!p->is_array()) fail(key_path(k), "expected an array of numbers");
      std::vector<double> v;
      for (const auto& e : *p) {
        if (!e.is_number()) fail(key_path(k), "expected an array of numbers");
        v.push_back(e.get<double>());
      }
      out = std::move(v);
    }
  }

  void get(const char* k, std::vector<std::string>& out) {
    if (const json* p = take(k)) {
      if (!p->is_array()) fail(key_path(k), "expected an array of strings");
      std::vector<std::string> v;
      for (const auto& e : *p) {
        if (!e.is_string()) fail(key_path(k), "expected an array of strings");
        v.push_back(e.get<std::string>());
      }
      out = std::move(v);
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(key_path(it.key()), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Enum fields go through the shared string mappings; the path is attached here.
template <typename E, typename F>
void get_enum(Obj& o, const char* k, E& out, F&& from_string) {
  std::string s;
  bool present = false;
  if (const json* p = o.take(k)) {
    if (!p->is_string()) fail(o.key_path(k), "expected a string");
    s = p->get<std::string>();
    present = true;
  }
  if (!present) return;
  try {
    out = from_string(s);
  } catch (const Error& e) {
    fail(o.key_path(k), e.what());
  }
}

void parse_net(const json& j, const std::string& path, NetConfig& n) {
  Obj o(j, path);
  o.get("levels", n.levels);
  o.get("base_channels", n.base_channels);
  o.get("critic_base_channels", n.critic_base_channels);
  o.get("instance_norm", n.instance_norm);
  o.get("leaky_slope", n.leaky_slope);
  o.finish();
}

void parse_weights(const json& j, const std::string& path, losses::LossWeights& w) {
  Obj o(j, path);
  o.get("l1", w.l1);
  o.get("l2", w.l2);
  o.get("l3", w.l3);
  o.get("l4", w.l4);
  o.get("l5_paired", w.l5_paired);
  o.get("l5_unpaired", w.l5_unpaired);
  o.get("gp", w.gp);
  o.finish();
}

void parse_train(const json& j, const std::string& path, TrainConfig& c) {
  Obj o(j, path);
  get_enum(o, "setting", c.setting, train_setting_from_string);
  o.get("semi_ratio", c.semi_ratio);
  o.get("epochs", c.epochs);
  o.get("batch_size", c.batch_size);
  o.get("critic_iters_warm", c.critic_iters_warm);
  o.get("warm_epochs", c.warm_epochs);
  o.get("critic_iters", c.critic_iters);
  o.get("lr", c.lr);
  o.get("beta1", c.beta1);
  o.get("seed", c.seed);
  get_enum(o, "ablation", c.ablation, ablation_from_string);
  get_enum(o, "baseline", c.baseline, baseline_from_string);
  o.get("checkpoint_every", c.checkpoint_every);
  if (const json* p = o.take("net")) parse_net(*p, o.key_path("net"), c.net);
  if (const json* p = o.take("weights")) parse_weights(*p, o.key_path("weights"), c.weights);
  o.finish();
}

void parse_phantom(const json& j, const std::string& path, PhantomSpec& s) {
  Obj o(j, path);
  o.get("seed", s.seed);
  o.get("height", s.height);
  o.get("width", s.width);
  o.get("lesion_probability", s.lesion_probability);
  o.get("lesion_intensity", s.lesion_intensity);
  o.get("lesion_radius_min", s.lesion_radius_min);
  o.get("lesion_radius_max", s.lesion_radius_max);
  o.get("deform", s.deform);
  o.get("deform_magnitude", s.deform_magnitude);
  o.finish();
}

void parse_preprocess(const json& j, const std::string& path, PreprocessConfig& c) {
  Obj o(j, path);
  o.get("clip_percentile", c.clip_percentile);
  o.get("slice_window", c.slice_window);
  o.get("crop_h", c.crop_h);
  o.get("crop_w", c.crop_w);
  o.finish();
}

void parse_eval(const json& j, const std::string& path, EvalOptions& e) {
  Obj o(j, path);
  if (const json* p = o.take("judge")) {
    Obj jo(*p, o.key_path("judge"));
    jo.get("epochs", e.judge.epochs);
    jo.get("finetune_epochs", e.judge.finetune_epochs);
    jo.get("batch_size", e.judge.batch_size);
    jo.get("lr", e.judge.lr);
    jo.get("seed", e.judge.seed);
    if (const json* n = jo.take("net")) parse_net(*n, jo.key_path("net"), e.judge.net);
    jo.finish();
  }
  if (const json* p = o.take("dec")) {
    Obj dd(*p, o.key_path("dec"));
    dd.get("epochs", e.dec.epochs);
    dd.get("batch_size", e.dec.batch_size);
    dd.get("lr", e.dec.lr);
    dd.get("seed", e.dec.seed);
    dd.finish();
  }
  o.get("mask_shift_px", e.mask_shift_px);
  o.get("mask_shift", e.mask_shift);
  o.get("iterate_k", e.iterate_k);
  o.finish();
}

void parse_paths(const json& j, const std::string& path, PathConfig& p) {
  Obj o(j, path);
  o.get("data_dir", p.data_dir);
  o.get("run_dir", p.run_dir);
  o.get("input_dir", p.input_dir);
  o.get("panel_dir", p.panel_dir);
  o.get("blind_dir", p.blind_dir);
  o.get("scores_csv", p.scores_csv);
  o.get("realness_csv", p.realness_csv);
  o.get("realness_truth_csv", p.realness_truth_csv);
  o.finish();
}

}  // namespace

void EvalOptions::validate() const {
  judge.validate();
  dec.validate();
  if (mask_shift_px < 1) throw config_error("eval.mask_shift_px must be positive");
  if (iterate_k < 0) throw config_error("eval.iterate_k must be nonnegative");
}

void ExperimentConfig::validate() const {
  phantom.validate();
  preprocess.validate();
  train.validate();
  eval.validate();
  if (phantom_count < 1) throw config_error("phantom_count must be positive");
  // train/val/test are weights (normalized downstream); the mask pool is a
  // share of the pathological subjects and must leave some of them over.
  for (double f : {train_frac, val_frac, test_frac})
    if (f < 0.0 || f > 1.0) throw config_error("split fractions must lie in [0,1]");
  if (train_frac <= 0.0 || test_frac <= 0.0)
    throw config_error("train_frac and test_frac must be positive");
  if (maskpool_frac < 0.0 || maskpool_frac >= 1.0)
    throw config_error("maskpool_frac must lie in [0,1)");
  if (max_js < 0.0 || max_js > 1.0) throw config_error("max_js must lie in [0,1]");
  if (semi_ratios.empty()) throw config_error("semi_ratios must not be empty");
  for (double r : semi_ratios)
    if (r < 0.0 || r > 1.0) throw config_error("semi_ratios entries must lie in [0,1]");
  if (ablations.empty()) throw config_error("ablations must not be empty");
  for (const auto& a : ablations) {
    if (a == "none" || a == "no_cycle_hh" || a == "cycle_hp" || a == "lsgan" ||
        a == "cyclegan" || a == "conditional_gan")
      continue;
    throw config_error("ablations: unknown variant " + a);
  }
  if (study_bootstrap < 1) throw config_error("study_bootstrap must be positive");
  if (panel_count < 0) throw config_error("panel_count must be nonnegative");
}

nlohmann::json ExperimentConfig::to_json() const {
  json j;
  j["phantom"] = {{"seed", phantom.seed},
                  {"height", phantom.height},
                  {"width", phantom.width},
                  {"lesion_probability", phantom.lesion_probability},
                  {"lesion_intensity", phantom.lesion_intensity},
                  {"lesion_radius_min", phantom.lesion_radius_min},
                  {"lesion_radius_max", phantom.lesion_radius_max},
                  {"deform", phantom.deform},
                  {"deform_magnitude", phantom.deform_magnitude}};
  j["phantom_count"] = phantom_count;
  j["train_frac"] = train_frac;
  j["val_frac"] = val_frac;
  j["test_frac"] = test_frac;
  j["maskpool_frac"] = maskpool_frac;
  j["split_seed"] = split_seed;
  j["max_js"] = max_js;
  j["preprocess"] = {{"clip_percentile", preprocess.clip_percentile},
                     {"slice_window", preprocess.slice_window},
                     {"crop_h", preprocess.crop_h},
                     {"crop_w", preprocess.crop_w}};
  j["train"] = train.to_json();
  j["eval"] = {{"judge",
                {{"epochs", eval.judge.epochs},
                 {"finetune_epochs", eval.judge.finetune_epochs},
                 {"batch_size", eval.judge.batch_size},
                 {"lr", eval.judge.lr},
                 {"seed", eval.judge.seed},
                 {"net",
                  {{"levels", eval.judge.net.levels},
                   {"base_channels", eval.judge.net.base_channels},
                   {"critic_base_channels", eval.judge.net.critic_base_channels},
                   {"instance_norm", eval.judge.net.instance_norm},
                   {"leaky_slope", eval.judge.net.leaky_slope}}}}},
               {"dec",
                {{"epochs", eval.dec.epochs},
                 {"batch_size", eval.dec.batch_size},
                 {"lr", eval.dec.lr},
                 {"seed", eval.dec.seed}}},
               {"mask_shift_px", eval.mask_shift_px},
               {"mask_shift", eval.mask_shift},
               {"iterate_k", eval.iterate_k}};
  j["paths"] = {{"data_dir", paths.data_dir},
                {"run_dir", paths.run_dir},
                {"input_dir", paths.input_dir},
                {"panel_dir", paths.panel_dir},
                {"blind_dir", paths.blind_dir},
                {"scores_csv", paths.scores_csv},
                {"realness_csv", paths.realness_csv},
                {"realness_truth_csv", paths.realness_truth_csv}};
  j["semi_ratios"] = semi_ratios;
  j["ablations"] = ablations;
  j["study_bootstrap"] = study_bootstrap;
  j["study_seed"] = study_seed;
  j["panel_count"] = panel_count;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  Obj o(j, "");
  if (const json* p = o.take("phantom")) parse_phantom(*p, "phantom", c.phantom);
  o.get("phantom_count", c.phantom_count);
  o.get("train_frac", c.train_frac);
  o.get("val_frac", c.val_frac);
  o.get("test_frac", c.test_frac);
  o.get("maskpool_frac", c.maskpool_frac);
  o.get("split_seed", c.split_seed);
  o.get("max_js", c.max_js);
  if (const json* p = o.take("preprocess")) parse_preprocess(*p, "preprocess", c.preprocess);
  if (const json* p = o.take("train")) parse_train(*p, "train", c.train);
  if (const json* p = o.take("eval")) parse_eval(*p, "eval", c.eval);
  if (const json* p = o.take("paths")) parse_paths(*p, "paths", c.paths);
  o.get("semi_ratios", c.semi_ratios);
  o.get("ablations", c.ablations);
  o.get("study_bootstrap", c.study_bootstrap);
  o.get("study_seed", c.study_seed);
  o.get("panel_count", c.panel_count);
  o.finish();

  // The ratio endpoints coincide with the pure settings; normalizing here
  // makes a ratio-1.0 sweep run bit-identical to the paired run it equals.
  if (c.train.setting == TrainSetting::semi) {
    if (c.train.semi_ratio >= 1.0) c.train.setting = TrainSetting::paired;
    else if (c.train.semi_ratio <= 0.0) c.train.setting = TrainSetting::unpaired;
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw data_error("cannot open config: " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw config_error(path.string() + ": " + e.what());
  }
  ExperimentConfig c = from_json(j);
  c.validate();
  return c;
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw data_error("cannot write config: " + path.string());
  f << to_json().dump(2) << "\n";
  if (!f) throw data_error("config write failed: " + path.string());
}

}  // namespace ph
