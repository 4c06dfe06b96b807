#ifndef PSEUDOHEAL_H
#define PSEUDOHEAL_H

/* C interface to the pseudo-healthy synthesis library.
 *
 * Every function returns one of the PH_* codes below; on failure
 * ph_last_error() holds a human-readable message for the calling thread.
 * Strings returned through out-parameters are heap copies owned by the
 * caller; release them with ph_string_free.
 */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  PH_OK = 0,
  PH_ERR_INTERNAL = 1,
  PH_ERR_CONFIG = 2,
  PH_ERR_DATA = 3,
  PH_ERR_NUMERIC = 4
};

typedef struct ph_config ph_config;
typedef struct ph_model ph_model;

const char* ph_version(void);

/* Message of the most recent failure on this thread, empty after success. */
const char* ph_last_error(void);

void ph_string_free(char* s);

/* Configs are JSON documents; parsing is strict and reports the offending
 * field path. A default config describes a small self-contained experiment. */
int ph_config_load(const char* path, ph_config** out);
int ph_config_parse(const char* json_text, ph_config** out);
int ph_config_default(ph_config** out);
void ph_config_free(ph_config* cfg);
int ph_config_dump(const ph_config* cfg, char** json_out);

/* Command-line overrides stop here: the run seed and the file locations. */
int ph_config_set_seed(ph_config* cfg, uint64_t seed);
int ph_config_set_path(ph_config* cfg, const char* key, const char* value);

/* Pipeline commands. Each writes its outputs under the configured paths and
 * leaves the exact config snapshot next to them. summary_out (optional)
 * receives a small JSON object describing the outcome. */
int ph_run_phantom(const ph_config* cfg, char** summary_out);
int ph_run_prepare(const ph_config* cfg, char** summary_out);
int ph_run_train(const ph_config* cfg, char** summary_out);
int ph_run_eval(const ph_config* cfg, char** summary_out);
int ph_run_sweep_semi(const ph_config* cfg, char** summary_out);
int ph_run_ablate(const ph_config* cfg, char** summary_out);
int ph_run_panels(const ph_config* cfg, char** summary_out);
int ph_run_scores(const ph_config* cfg, char** summary_out);

/* Joins every result CSV under run_dir into summary.csv; table_out receives
 * the rendered table. */
int ph_run_report(const ph_config* cfg, char** table_out);

/* Direct inference on a trained checkpoint. */
int ph_model_open(const char* checkpoint_path, ph_model** out);
void ph_model_free(ph_model* m);

/* image is a row-major height*width buffer in [0,1]; pseudo_healthy receives
 * the synthesis and mask (optional, may be NULL) the predicted pathology
 * probabilities, both the same size. */
int ph_model_synthesize(ph_model* m, const float* image, int height, int width,
                        float* pseudo_healthy, float* mask);

#ifdef __cplusplus
}
#endif

#endif /* PSEUDOHEAL_H */
