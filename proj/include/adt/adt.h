/* C interface to the adversarial distributional training library.
 *
 * Every call returns an adt_status. On failure adt_last_error() holds a
 * message for the calling thread until its next failing call. Strings
 * returned through char** are owned by the caller and freed with
 * adt_string_free.
 */
#ifndef ADT_ADT_H
#define ADT_ADT_H

#include <stddef.h>
#include <stdint.h>

#if defined(ADT_BUILDING)
#define ADT_API __attribute__((visibility("default")))
#else
#define ADT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum adt_status {
  ADT_OK = 0,
  ADT_ERR_FAILURE = 1,
  ADT_ERR_CONFIG = 2,
  ADT_ERR_NUMERIC = 3,
  ADT_ERR_IO = 4,
  ADT_ERR_ARGUMENT = 5
} adt_status;

typedef struct adt_config adt_config;
typedef struct adt_model adt_model;

ADT_API const char* adt_version(void);
ADT_API const char* adt_last_error(void);
ADT_API void adt_string_free(char* s);

/* Config: load, override, inspect. */
ADT_API adt_status adt_config_load(const char* path, adt_config** out);
ADT_API adt_status adt_config_parse(const char* json_text, adt_config** out);
/* "dotted.path=value"; the value is JSON if it parses, else a string. */
ADT_API adt_status adt_config_override(adt_config* cfg, const char* assignment);
ADT_API adt_status adt_config_set_seed(adt_config* cfg, uint64_t seed);
ADT_API adt_status adt_config_set_output_dir(adt_config* cfg, const char* dir);
ADT_API adt_status adt_config_to_json(const adt_config* cfg, char** out);
ADT_API adt_status adt_config_output_dir(const adt_config* cfg, char** out);
ADT_API void adt_config_free(adt_config* cfg);

/* Stages: "train", "attack", "eval", "landscape", "run". The return value is
 * also the process exit code the CLI uses. manifest.json is always written. */
ADT_API adt_status adt_run_stage(const adt_config* cfg, const char* stage);

/* Joins report.csv from run dirs into one model x attack CSV (and a
 * fixed-width text rendering when `table` is non-null). */
ADT_API adt_status adt_report(const char* const* run_dirs, size_t count, char** csv, char** table);

/* Trained classifier snapshots. */
ADT_API adt_status adt_model_load(const char* path, adt_model** out);
ADT_API size_t adt_model_input_dim(const adt_model* m);
ADT_API size_t adt_model_num_classes(const adt_model* m);
/* x is rows x input_dim, row-major. */
ADT_API adt_status adt_model_predict(const adt_model* m, const double* x, size_t rows, int* labels);
ADT_API void adt_model_free(adt_model* m);

#ifdef __cplusplus
}
#endif

#endif
