#ifndef NAI_H
#define NAI_H
/* C interface to the node-adaptive inference pipeline. All entry points are
 * exception-free; failures return a negative code and leave a message
 * retrievable with nai_last_error() on the calling thread. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define NAI_OK 0
/* A stage ran to completion but reported failure (verify suites). */
#define NAI_STAGE_FAILED 1
#define NAI_ERR_UNKNOWN (-1)
#define NAI_ERR_INVALID_ARGUMENT (-2)
#define NAI_ERR_IO (-3)
#define NAI_ERR_FORMAT (-4)
#define NAI_ERR_STATE (-5)
#define NAI_ERR_NUMERIC (-6)

/* Opaque run configuration. Create once, fill with set/load_file, pass to
 * nai_run any number of times. Not thread-safe per handle. */
typedef struct nai_config nai_config;

/* Returns NULL only on allocation failure. */
nai_config* nai_config_create(void);
void nai_config_free(nai_config* cfg);

/* Sets one key to a textual value, e.g. ("k", "7") or ("mode", "sign").
 * Returns NAI_OK or a negative code (unknown key, unparsable value). */
int nai_config_set(nai_config* cfg, const char* key, const char* value);

/* Reads a key=value file; '#' starts a comment line. */
int nai_config_load_file(nai_config* cfg, const char* path);

/* Writes the current value of a key into buf (NUL-terminated) when cap
 * suffices. Returns the value's length excluding the NUL regardless, or a
 * negative code for unknown keys. */
long nai_config_get(const nai_config* cfg, const char* key, char* buf, size_t cap);

/* Runs one pipeline stage: precompute, train-teacher, distill, train-gates,
 * infer, bench, or verify. Artifacts land under "<out>/<stage>/". Returns
 * NAI_OK, NAI_STAGE_FAILED (verify found a defect), or a negative code. */
int nai_run(const nai_config* cfg, const char* stage);

/* Message for the most recent failure on this thread; empty string if none. */
const char* nai_last_error(void);

const char* nai_version(void);

#ifdef __cplusplus
}
#endif

#endif
