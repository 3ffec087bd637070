#ifndef CVTNET_CVTNET_H
#define CVTNET_CVTNET_H

/*
 * C interface to the cvtnet place-recognition core.
 *
 * Every function returns a cvt_status. On failure the message is available from
 * cvt_last_error() on the same thread until the next failing call. Strings handed
 * out through char** parameters are owned by the caller and released with
 * cvt_string_free(). Handles are opaque and released with their *_free function;
 * passing NULL to a *_free function is a no-op.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CVT_API __declspec(dllexport)
#else
#define CVT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cvt_status {
  CVT_OK = 0,
  CVT_ERR_FORMAT = 1,
  CVT_ERR_DATA = 2,
  CVT_ERR_CONFIG = 3,
  CVT_ERR_SHAPE = 4,
  CVT_ERR_IO = 5,
  CVT_ERR_NOT_FOUND = 6,
  CVT_ERR_DUPLICATE = 7,
  CVT_ERR_TRAINING = 8,
  CVT_ERR_METRIC = 9,
  CVT_ERR_INVALID_ARGUMENT = 10,
  CVT_ERR_INTERNAL = 11,
  CVT_ERR_CHECK_FAILED = 12
} cvt_status;

typedef struct cvt_config cvt_config;
typedef struct cvt_model cvt_model;
typedef struct cvt_index cvt_index;

typedef struct cvt_hit {
  size_t row;      /* insertion order in the index */
  double distance; /* squared Euclidean */
} cvt_hit;

CVT_API const char* cvt_version(void);
CVT_API const char* cvt_last_error(void);
CVT_API const char* cvt_status_name(cvt_status status);
CVT_API void cvt_string_free(char* s);

/* ---- configuration ------------------------------------------------------ */

/* json_text may be NULL (defaults only). Overrides are "a.b.c=value" strings applied
   after the JSON; the value is parsed as JSON when possible, else taken as a string. */
CVT_API cvt_status cvt_config_create(const char* json_text, const char* const* overrides, size_t n_overrides,
                                     cvt_config** out);
CVT_API cvt_status cvt_config_from_file(const char* path, const char* const* overrides, size_t n_overrides,
                                        cvt_config** out);
/* Resolved tree as pretty-printed JSON. */
CVT_API cvt_status cvt_config_to_json(const cvt_config* config, char** out_json);
CVT_API cvt_status cvt_config_hash(const cvt_config* config, char** out_hash);
CVT_API void cvt_config_free(cvt_config* config);

/* ---- pipeline ------------------------------------------------------------ */

/* Space-separated list of command names, static storage. */
CVT_API const char* cvt_command_names(void);

typedef void (*cvt_progress_fn)(const char* line, void* user);

/* Runs one subcommand (synth, gen-views, train, describe, index, query, eval, bench,
   selftest). jobs = 0 uses every hardware thread. On success *out_manifest receives the
   run manifest as JSON; on CVT_ERR_CHECK_FAILED it still receives it. */
CVT_API cvt_status cvt_run(const cvt_config* config, const char* command, unsigned jobs, cvt_progress_fn progress,
                           void* progress_user, char** out_manifest);

/* ---- model --------------------------------------------------------------- */

/* Loads paths.checkpoint when set, else initializes from the seed. */
CVT_API cvt_status cvt_model_create(const cvt_config* config, cvt_model** out);
CVT_API cvt_status cvt_model_descriptor_dim(const cvt_model* model, size_t* out_dim);
/* xyzi: n_points * 4 floats (x, y, z, intensity). out must hold descriptor_dim floats. */
CVT_API cvt_status cvt_model_describe_points(const cvt_model* model, const float* xyzi, size_t n_points, float* out,
                                             size_t out_len);
/* Point cloud file in the float32 x,y,z,i record format. */
CVT_API cvt_status cvt_model_describe_file(const cvt_model* model, const char* path, float* out, size_t out_len);
CVT_API void cvt_model_free(cvt_model* model);

/* ---- descriptor index ---------------------------------------------------- */

CVT_API cvt_status cvt_index_create(size_t dim, cvt_index** out);
CVT_API cvt_status cvt_index_load(const char* path, cvt_index** out);
CVT_API cvt_status cvt_index_save(const cvt_index* index, const char* path);
CVT_API cvt_status cvt_index_insert(cvt_index* index, const char* scan_id, const float* descriptor, size_t len);
CVT_API cvt_status cvt_index_size(const cvt_index* index, size_t* out_size);
CVT_API cvt_status cvt_index_dim(const cvt_index* index, size_t* out_dim);
/* Copies the id of `row` into a new string. */
CVT_API cvt_status cvt_index_id(const cvt_index* index, size_t row, char** out_id);
/* Writes min(k, size) hits into `hits` (capacity entries) and their count into *n_hits. */
CVT_API cvt_status cvt_index_query(const cvt_index* index, const float* query, size_t len, size_t k, cvt_hit* hits,
                                   size_t capacity, size_t* n_hits);
CVT_API void cvt_index_free(cvt_index* index);

#ifdef __cplusplus
}
#endif

#endif /* CVTNET_CVTNET_H */
