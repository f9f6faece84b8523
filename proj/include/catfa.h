#ifndef CATFA_H
#define CATFA_H

/* C interface to the catfa segmentation library.
 *
 * Every function either succeeds or records a message retrievable through
 * catfa_last_error() (per thread). Functions returning a pointer yield NULL
 * on failure; functions returning catfa_status yield a process exit code:
 *
 *   CATFA_OK            success
 *   CATFA_CHECK_FAILED  a requested check ran and did not pass
 *   CATFA_ERR_CONFIG    bad input: config files, flags, shapes, file formats
 *   CATFA_ERR_RUNTIME   I/O failures and faults during execution
 */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum catfa_status {
    CATFA_OK = 0,
    CATFA_CHECK_FAILED = 1,
    CATFA_ERR_CONFIG = 2,
    CATFA_ERR_RUNTIME = 3
} catfa_status;

const char* catfa_version(void);

/* Message from the most recent failure on this thread ("" if none). The
 * pointer stays valid until the next failing call on the same thread. */
const char* catfa_last_error(void);

/* ---- tensors (float32, rank 1..4, row-major) ---------------------------- */

typedef struct catfa_tensor catfa_tensor;

catfa_tensor* catfa_tensor_create(const int32_t* dims, int32_t ndim);
/* Reads a single-tensor file; float64 payloads are converted to float32. */
catfa_tensor* catfa_tensor_read(const char* path);
catfa_status catfa_tensor_write(const catfa_tensor* t, const char* path);
int32_t catfa_tensor_ndim(const catfa_tensor* t);
int32_t catfa_tensor_dim(const catfa_tensor* t, int32_t axis);
int64_t catfa_tensor_size(const catfa_tensor* t);
float* catfa_tensor_data(catfa_tensor* t);
void catfa_tensor_free(catfa_tensor* t);

/* ---- models -------------------------------------------------------------- */

typedef struct catfa_model catfa_model;

/* variant: "tiny", "s", or "l". */
catfa_model* catfa_model_create(const char* variant, uint64_t seed);
catfa_model* catfa_model_load(const char* checkpoint_path);
catfa_status catfa_model_save(catfa_model* m, const char* checkpoint_path);
/* input: batch x 3 x H x W with H, W multiples of 32. Returns the
 * foreground probability map, batch x 1 x H x W in (0, 1). */
catfa_tensor* catfa_model_forward(catfa_model* m, const catfa_tensor* input);
int64_t catfa_model_param_count(const catfa_model* m);
void catfa_model_free(catfa_model* m);

/* ---- commands ------------------------------------------------------------ */

/* Trains per the run-config file; writes history.csv and checkpoint.ctfa
 * into the configured out_dir. */
catfa_status catfa_cmd_train(const char* config_path);

/* Runs a checkpoint on one input and writes <stem>_prob.ctfa plus
 * <stem>_mask.pgm (threshold 0.5) into out_dir. `input` is a .pgm image, a
 * .ctfa tensor (3xHxW or Bx3xHxW), or the literal "synth" for one generated
 * sample (whose image and mask are also written). `seed` only affects
 * "synth". */
catfa_status catfa_cmd_infer(const char* checkpoint_path, const char* input,
                             const char* out_dir, uint64_t seed);

/* Scores prediction masks against ground-truth masks (matching *.pgm names
 * in both directories) and writes per-image metric rows plus mean/sd rows to
 * out_csv. With a non-NULL compare_dir, appends one-tailed Wilcoxon
 * signed-rank rows testing pred > compare per metric. */
catfa_status catfa_cmd_eval(const char* pred_dir, const char* gt_dir,
                            const char* compare_dir, const char* out_csv);

/* Finite-difference gradient validation. scope: "primitives", "blocks",
 * "model", or "all". Prints one row per target; any failing row yields
 * CATFA_CHECK_FAILED. */
catfa_status catfa_cmd_gradcheck(const char* scope, uint64_t seed);

/* Times the attention-score kernel at the given token count/width for
 * reduction factors parsed from a comma-separated list (r = 1 is always
 * measured as the standard kernel). Writes a CSV when out_csv is non-NULL
 * and nonempty. */
catfa_status catfa_cmd_bench(int64_t tokens, int64_t channels,
                             const char* reductions_csv, int32_t reps,
                             const char* out_csv);

#ifdef __cplusplus
}
#endif

#endif /* CATFA_H */
