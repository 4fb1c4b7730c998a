#ifndef LOCALDOM_LOCALDOM_H
#define LOCALDOM_LOCALDOM_H

/* C interface to the local-domain translation toolkit. Every call returns an
 * ld_status; on failure ld_last_error() describes the problem (per thread). */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(LOCALDOM_BUILDING_DLL)
#define LD_API __declspec(dllexport)
#else
#define LD_API __declspec(dllimport)
#endif
#else
#define LD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  LD_OK = 0,
  LD_ERR_INVALID_ARGUMENT = 1,
  LD_ERR_UNKNOWN_CLASS = 2,
  LD_ERR_DEGENERATE_GEOMETRY = 3,
  LD_ERR_EMPTY_DOMAIN = 4,
  LD_ERR_SHAPE_MISMATCH = 5,
  LD_ERR_OUT_OF_RANGE = 6,
  LD_ERR_TOO_SMALL = 7,
  LD_ERR_DIVERGED = 8,
  LD_ERR_MISSING_VAE = 9,
  LD_ERR_BAD_OVERLAP = 10,
  LD_ERR_PLAN_MISMATCH = 11,
  LD_ERR_EMPTY_SET = 12,
  LD_ERR_BACKEND_MISSING = 13,
  LD_ERR_MISSING_FILE = 14,
  LD_ERR_CHECKSUM_MISMATCH = 15,
  LD_ERR_BAD_SCHEMA = 16,
  LD_ERR_IO = 17,
  LD_ERR_STAGE_ORDER = 18,
  LD_ERR_ACCESS_VIOLATION = 19,
  LD_ERR_BAD_CHECKPOINT = 20,
  LD_ERR_INTERNAL = 99
} ld_status;

typedef struct ld_image ld_image;
typedef struct ld_translator ld_translator;

LD_API const char* ld_version(void);
LD_API const char* ld_status_name(ld_status status);
LD_API const char* ld_last_error(void);

/* Strings returned through char** are owned by the caller. */
LD_API void ld_string_free(char* s);

/* Images: planar channel-major doubles in [0,1]. NULL data gives zeros. */
LD_API ld_status ld_image_create(int height, int width, int channels, const double* data, ld_image** out);
LD_API ld_status ld_image_load(const char* path, ld_image** out);
LD_API ld_status ld_image_save(const ld_image* image, const char* path);
LD_API void ld_image_free(ld_image* image);
LD_API int ld_image_height(const ld_image* image);
LD_API int ld_image_width(const ld_image* image);
LD_API int ld_image_channels(const ld_image* image);
LD_API const double* ld_image_data(const ld_image* image);

/* Pipeline. stage: extract | train-gan | train-vae | translate | evaluate |
 * augment | all. seed and out_dir may be NULL. skipped (optional) receives
 * the number of stages that were no-ops. */
LD_API ld_status ld_run_stage(const char* config_path, const char* stage, const uint64_t* seed, const char* out_dir,
                              int* skipped);
LD_API ld_status ld_validate_config(const char* config_path);
LD_API ld_status ld_preset_config(const char* name, char** json_out);
LD_API ld_status ld_make_synthetic(const char* kind, int n, int n_test, uint64_t seed, const char* out_dir);

/* Deployed translator from a completed run. */
LD_API ld_status ld_translator_open(const char* config_path, const char* run_dir, ld_translator** out);
LD_API void ld_translator_free(ld_translator* translator);
/* prior: height*width local-domain ids. has_z = 0 skips interpolation. */
LD_API ld_status ld_translator_apply(const ld_translator* translator, const ld_image* image, const int* prior,
                                     int has_z, double z, double gamma, ld_image** out);
/* Same, with the prior derived from a manifest entry's labels. */
LD_API ld_status ld_translator_apply_entry(const ld_translator* translator, const char* entry_id, int has_z, double z,
                                           double gamma, ld_image** out);

/* Metrics. */
LD_API ld_status ld_focus_average(const char* const* paths, size_t count, double* out);
LD_API ld_status ld_domain_gap(const char* const* paths_a, size_t count_a, const char* const* paths_b, size_t count_b,
                               int bins, double* out);

#ifdef __cplusplus
}
#endif

#endif
