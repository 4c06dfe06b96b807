#include "pseudoheal.h"

#include <torch/torch.h>

#include <cmath>
#include <cstring>
#include <string>

#include "core/config.hpp"
#include "core/errors.hpp"
#include "core/runner.hpp"
#include "core/train.hpp"

struct ph_config {
  ph::ExperimentConfig cfg;
};

struct ph_model {
  ph::ModelBundle bundle;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
int guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return PH_OK;
  } catch (const ph::Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PH_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put_summary(char** out, const nlohmann::json& j) {
  if (out) *out = dup_string(j.dump(2));
}

nlohmann::json data_summary_json(const ph::DataSummary& s) {
  return {{"n_slices", s.n_slices},
          {"n_subjects", s.n_subjects},
          {"n_pathological", s.n_pathological},
          {"n_healthy", s.n_healthy},
          {"n_train", s.n_train},
          {"n_val", s.n_val},
          {"n_test", s.n_test},
          {"n_maskpool", s.n_maskpool},
          {"js", s.js}};
}

nlohmann::json eval_json(const ph::EvalOutcome& e) {
  nlohmann::json j;
  j["h"] = e.report.h;
  j["id"] = e.report.id;
  j["dec"] = e.report.dec;
  j["diffmap_dice"] = e.report.dice_diffmap;
  j["seg_dice"] =
      e.report.has_segmentor ? nlohmann::json(e.report.dice_segmentor) : nlohmann::json();
  j["judge_dice"] = e.judge_dice;
  j["dec_accuracy"] = e.dec_accuracy;
  j["n_samples"] = e.report.n_samples;
  j["residual"] = e.has_residual ? nlohmann::json(e.residual) : nlohmann::json();
  if (e.has_shift)
    j["mask_shift"] = {{"total", e.shift.total}, {"valid", e.shift.valid}, {"wins", e.shift.wins}};
  else
    j["mask_shift"] = nlohmann::json();
  return j;
}

const ph::ExperimentConfig& cfg_of(const ph_config* cfg) {
  if (!cfg) throw ph::config_error("null config handle");
  return cfg->cfg;
}

}  // namespace

extern "C" {

const char* ph_version(void) { return "0.1.0"; }

const char* ph_last_error(void) { return g_last_error.c_str(); }

void ph_string_free(char* s) { delete[] s; }

int ph_config_load(const char* path, ph_config** out) {
  return guarded([&] {
    if (!path || !out) throw ph::config_error("null argument");
    auto* h = new ph_config{ph::ExperimentConfig::load(path)};
    *out = h;
  });
}

int ph_config_parse(const char* json_text, ph_config** out) {
  return guarded([&] {
    if (!json_text || !out) throw ph::config_error("null argument");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ph::config_error(std::string("config: ") + e.what());
    }
    auto c = ph::ExperimentConfig::from_json(j);
    c.validate();
    *out = new ph_config{std::move(c)};
  });
}

int ph_config_default(ph_config** out) {
  return guarded([&] {
    if (!out) throw ph::config_error("null argument");
    *out = new ph_config{};
  });
}

void ph_config_free(ph_config* cfg) { delete cfg; }

int ph_config_dump(const ph_config* cfg, char** json_out) {
  return guarded([&] {
    if (!json_out) throw ph::config_error("null argument");
    *json_out = dup_string(cfg_of(cfg).to_json().dump(2));
  });
}

int ph_config_set_seed(ph_config* cfg, uint64_t seed) {
  return guarded([&] {
    if (!cfg) throw ph::config_error("null config handle");
    cfg->cfg.train.seed = seed;
  });
}

int ph_config_set_path(ph_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    if (!cfg || !key || !value) throw ph::config_error("null argument");
    auto& p = cfg->cfg.paths;
    std::string k(key);
    if (k == "data_dir") p.data_dir = value;
    else if (k == "run_dir") p.run_dir = value;
    else if (k == "input_dir") p.input_dir = value;
    else if (k == "panel_dir") p.panel_dir = value;
    else if (k == "blind_dir") p.blind_dir = value;
    else if (k == "scores_csv") p.scores_csv = value;
    else if (k == "realness_csv") p.realness_csv = value;
    else if (k == "realness_truth_csv") p.realness_truth_csv = value;
    else throw ph::config_error("unknown path key: " + k);
  });
}

int ph_run_phantom(const ph_config* cfg, char** summary_out) {
  return guarded([&] { put_summary(summary_out, data_summary_json(ph::cmd_phantom(cfg_of(cfg)))); });
}

int ph_run_prepare(const ph_config* cfg, char** summary_out) {
  return guarded([&] { put_summary(summary_out, data_summary_json(ph::cmd_prepare(cfg_of(cfg)))); });
}

int ph_run_train(const ph_config* cfg, char** summary_out) {
  return guarded([&] {
    auto out = ph::cmd_train(cfg_of(cfg));
    put_summary(summary_out, {{"run_dir", out.run_dir},
                              {"epochs", out.epochs},
                              {"steps", out.steps},
                              {"skipped", out.skipped},
                              {"resumed", out.resumed},
                              {"final_hash", out.final_hash}});
  });
}

int ph_run_eval(const ph_config* cfg, char** summary_out) {
  return guarded([&] { put_summary(summary_out, eval_json(ph::cmd_eval(cfg_of(cfg)))); });
}

int ph_run_sweep_semi(const ph_config* cfg, char** summary_out) {
  return guarded([&] {
    auto rows = ph::cmd_sweep_semi(cfg_of(cfg));
    auto arr = nlohmann::json::array();
    for (const auto& r : rows) {
      auto j = eval_json(r.eval);
      j["ratio"] = r.ratio;
      j["dir"] = r.dir;
      arr.push_back(std::move(j));
    }
    put_summary(summary_out, arr);
  });
}

int ph_run_ablate(const ph_config* cfg, char** summary_out) {
  return guarded([&] {
    auto rows = ph::cmd_ablate(cfg_of(cfg));
    auto arr = nlohmann::json::array();
    for (const auto& r : rows) {
      auto j = eval_json(r.eval);
      j["variant"] = r.variant;
      j["dir"] = r.dir;
      arr.push_back(std::move(j));
    }
    put_summary(summary_out, arr);
  });
}

int ph_run_panels(const ph_config* cfg, char** summary_out) {
  return guarded([&] {
    auto set = ph::cmd_panels(cfg_of(cfg));
    put_summary(summary_out, {{"panel_dir", set.panel_dir.string()},
                              {"blind_dir", set.blind_dir.string()},
                              {"n_panels", set.n_panels},
                              {"n_methods", set.n_methods}});
  });
}

int ph_run_scores(const ph_config* cfg, char** summary_out) {
  return guarded([&] {
    auto summary = ph::cmd_scores(cfg_of(cfg));
    auto arr = nlohmann::json::array();
    for (const auto& r : summary.rows)
      arr.push_back({{"criterion", r.criterion},
                     {"method", r.method_id},
                     {"mean", r.mean},
                     {"std", r.std_dev},
                     {"p_vs_best", r.p_vs_best},
                     {"comparator", r.comparator},
                     {"n_panels", r.n_panels}});
    put_summary(summary_out, arr);
  });
}

int ph_run_report(const ph_config* cfg, char** table_out) {
  return guarded([&] {
    std::string table = ph::cmd_report(cfg_of(cfg));
    if (table_out) *table_out = dup_string(table);
  });
}

int ph_model_open(const char* checkpoint_path, ph_model** out) {
  return guarded([&] {
    if (!checkpoint_path || !out) throw ph::config_error("null argument");
    if (!std::filesystem::exists(checkpoint_path))
      throw ph::data_error(std::string("no checkpoint at ") + checkpoint_path);
    *out = new ph_model{ph::load_bundle(checkpoint_path)};
  });
}

void ph_model_free(ph_model* m) { delete m; }

int ph_model_synthesize(ph_model* m, const float* image, int height, int width,
                        float* pseudo_healthy, float* mask) {
  return guarded([&] {
    if (!m || !image || !pseudo_healthy) throw ph::config_error("null argument");
    if (height < 1 || width < 1) throw ph::config_error("bad image size");
    if (!m->bundle.g) throw ph::data_error("model has no generator");
    if (mask && !m->bundle.s) throw ph::data_error("model has no segmentor");
    const size_t n = static_cast<size_t>(height) * width;
    for (size_t i = 0; i < n; ++i)
      if (!std::isfinite(image[i])) throw ph::data_error("image contains non-finite values");

    torch::NoGradGuard ng;
    auto x = torch::from_blob(const_cast<float*>(image), {1, 1, height, width}, torch::kFloat32)
                 .clone();
    auto g = m->bundle.g;
    g->eval();
    auto y = g->forward(x).contiguous();
    std::memcpy(pseudo_healthy, y.data_ptr<float>(), n * sizeof(float));
    if (mask) {
      auto s = m->bundle.s;
      s->eval();
      auto mm = s->forward(x).contiguous();
      std::memcpy(mask, mm.data_ptr<float>(), n * sizeof(float));
    }
  });
}

}  // extern "C"
