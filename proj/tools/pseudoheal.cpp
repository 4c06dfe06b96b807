// Command-line front end. Talks to the library exclusively through the C API.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

#include "pseudoheal.h"

namespace {

const char* kUsage =
    "usage: pseudoheal <command> [options]\n"
    "\n"
    "commands:\n"
    "  phantom      generate the synthetic brain dataset into data_dir\n"
    "  prepare      preprocess raw volumes from input_dir into data_dir\n"
    "  train        train the configured model into run_dir\n"
    "  eval         score the trained model; writes report.csv and eval.json\n"
    "  sweep-semi   train and score every configured paired-mask ratio\n"
    "  ablate       train and score every configured model variant\n"
    "  panels       render blinded rating panels from trained models\n"
    "  scores       aggregate filled-in rater scores against the blinding map\n"
    "  report       join all result CSVs under run_dir into one summary table\n"
    "\n"
    "options:\n"
    "  --config FILE   experiment JSON (defaults apply when omitted)\n"
    "  --seed N        override the training seed\n"
    "  --data DIR      override paths.data_dir\n"
    "  --run DIR       override paths.run_dir\n"
    "  --input DIR     override paths.input_dir\n"
    "  --panels DIR    override paths.panel_dir\n"
    "  --blind DIR     override paths.blind_dir\n"
    "  --scores FILE   override paths.scores_csv\n"
    "  --print-config  dump the effective config and exit\n";

int fail(int code) {
  std::fprintf(stderr, "error: %s\n", ph_last_error());
  return code == PH_OK ? PH_ERR_INTERNAL : code;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2 || std::strcmp(argv[1], "help") == 0 || std::strcmp(argv[1], "--help") == 0) {
    std::fputs(kUsage, argc < 2 ? stderr : stdout);
    return argc < 2 ? PH_ERR_CONFIG : PH_OK;
  }
  const std::string command = argv[1];

  const char* config_path = nullptr;
  bool print_config = false;
  bool have_seed = false;
  uint64_t seed = 0;
  struct Override {
    const char* key;
    const char* value;
  };
  Override overrides[8];
  int n_overrides = 0;

  for (int i = 2; i < argc; ++i) {
    auto need_value = [&](const char* flag) -> const char* {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "error: %s requires a value\n", flag);
        std::exit(PH_ERR_CONFIG);
      }
      return argv[++i];
    };
    if (std::strcmp(argv[i], "--config") == 0) config_path = need_value("--config");
    else if (std::strcmp(argv[i], "--seed") == 0) {
      const char* v = need_value("--seed");
      char* end = nullptr;
      seed = std::strtoull(v, &end, 10);
      if (!end || *end != '\0') {
        std::fprintf(stderr, "error: --seed wants an integer, got %s\n", v);
        return PH_ERR_CONFIG;
      }
      have_seed = true;
    } else if (std::strcmp(argv[i], "--data") == 0)
      overrides[n_overrides++] = {"data_dir", need_value("--data")};
    else if (std::strcmp(argv[i], "--run") == 0)
      overrides[n_overrides++] = {"run_dir", need_value("--run")};
    else if (std::strcmp(argv[i], "--input") == 0)
      overrides[n_overrides++] = {"input_dir", need_value("--input")};
    else if (std::strcmp(argv[i], "--panels") == 0)
      overrides[n_overrides++] = {"panel_dir", need_value("--panels")};
    else if (std::strcmp(argv[i], "--blind") == 0)
      overrides[n_overrides++] = {"blind_dir", need_value("--blind")};
    else if (std::strcmp(argv[i], "--scores") == 0)
      overrides[n_overrides++] = {"scores_csv", need_value("--scores")};
    else if (std::strcmp(argv[i], "--print-config") == 0)
      print_config = true;
    else {
      std::fprintf(stderr, "error: unknown option %s\n%s", argv[i], kUsage);
      return PH_ERR_CONFIG;
    }
  }

  ph_config* cfg = nullptr;
  int rc = config_path ? ph_config_load(config_path, &cfg) : ph_config_default(&cfg);
  if (rc != PH_OK) return fail(rc);
  for (int i = 0; i < n_overrides; ++i) {
    rc = ph_config_set_path(cfg, overrides[i].key, overrides[i].value);
    if (rc != PH_OK) return fail(rc);
  }
  if (have_seed) {
    rc = ph_config_set_seed(cfg, seed);
    if (rc != PH_OK) return fail(rc);
  }

  if (print_config) {
    char* text = nullptr;
    rc = ph_config_dump(cfg, &text);
    if (rc != PH_OK) return fail(rc);
    std::puts(text);
    ph_string_free(text);
    ph_config_free(cfg);
    return PH_OK;
  }

  char* summary = nullptr;
  if (command == "phantom") rc = ph_run_phantom(cfg, &summary);
  else if (command == "prepare") rc = ph_run_prepare(cfg, &summary);
  else if (command == "train") rc = ph_run_train(cfg, &summary);
  else if (command == "eval") rc = ph_run_eval(cfg, &summary);
  else if (command == "sweep-semi") rc = ph_run_sweep_semi(cfg, &summary);
  else if (command == "ablate") rc = ph_run_ablate(cfg, &summary);
  else if (command == "panels") rc = ph_run_panels(cfg, &summary);
  else if (command == "scores") rc = ph_run_scores(cfg, &summary);
  else if (command == "report") rc = ph_run_report(cfg, &summary);
  else {
    std::fprintf(stderr, "error: unknown command %s\n%s", command.c_str(), kUsage);
    ph_config_free(cfg);
    return PH_ERR_CONFIG;
  }

  if (rc != PH_OK) {
    ph_config_free(cfg);
    return fail(rc);
  }
  if (summary) {
    // report emits a preformatted table ending in a newline already.
    if (command == "report") std::fputs(summary, stdout);
    else std::puts(summary);
    ph_string_free(summary);
  }
  ph_config_free(cfg);
  return PH_OK;
}
