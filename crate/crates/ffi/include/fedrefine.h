#ifndef FEDREFINE_H
#define FEDREFINE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum FrStatus {
  FR_STATUS_OK = 0,
  /*
   Null pointer, invalid UTF-8 or out-of-range argument.
   */
  FR_STATUS_INVALID_ARGUMENT = 1,
  FR_STATUS_CONFIG = 2,
  FR_STATUS_DIVERGENCE = 3,
  FR_STATUS_MISSING_ARTIFACT = 4,
  FR_STATUS_GEOMETRY = 5,
  FR_STATUS_MISSING_FUSER = 6,
  FR_STATUS_ALPHABET = 7,
  /*
   Output buffer too small; the required length was still written.
   */
  FR_STATUS_BUFFER_TOO_SMALL = 8,
  /*
   The handle has no trained artifacts yet.
   */
  FR_STATUS_NOT_TRAINED = 9,
  FR_STATUS_INTERNAL = 10,
  FR_STATUS_PANIC = 11,
} FrStatus;

/*
 Collaboration medium of every link in a decode call.
 */
typedef enum FrMedium {
  FR_MEDIUM_CACHE = 0,
  FR_MEDIUM_TOKEN = 1,
} FrMedium;

/*
 One trained language model.
 */
typedef struct FrModel FrModel;

/*
 A scenario configuration and, once trained or loaded, its artifacts.
 */
typedef struct FrScenario FrScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Valid until the
 next call on the same thread.
 */
const char *fr_last_error(void);

/*
 Static description of a status code.
 */
const char *fr_status_str(enum FrStatus status);

/*
 Bytes to ship `n_tokens` cache positions at `dtype_bytes` per element.
 */
uint64_t fr_kv_payload_bytes(uintptr_t n_layers,
                             uintptr_t n_kv_heads,
                             uintptr_t head_dim,
                             uint64_t n_tokens,
                             uint64_t dtype_bytes);

/*
 Parses a scenario file into `*out`.
 */
enum FrStatus fr_scenario_load(const char *path, struct FrScenario **out);

void fr_scenario_free(struct FrScenario *s);

/*
 Overrides the master seed.
 */
enum FrStatus fr_scenario_set_seed(struct FrScenario *s, uint64_t seed);

/*
 Trains and evaluates the scenario, writing artifacts to `out_dir`.
 */
enum FrStatus fr_scenario_run(struct FrScenario *s, const char *out_dir);

/*
 Loads checkpoints previously written for this scenario from `dir`.
 */
enum FrStatus fr_scenario_load_artifacts(struct FrScenario *s, const char *dir);

/*
 Number of configured senders, or 0 for a null handle.
 */
uintptr_t fr_scenario_sender_count(const struct FrScenario *s);

/*
 Tokenizes a space-separated query over the scenario's task vocabulary.
 */
enum FrStatus fr_scenario_tokenize(const struct FrScenario *s,
                                   const char *text,
                                   uint32_t *out,
                                   uintptr_t cap,
                                   uintptr_t *out_len);

/*
 Answers `query` at the receiver with the first `n_senders` senders on
 `medium`. Writes the generated tokens (ending with end-of-answer when
 produced) and the simulated latency in seconds.
 */
enum FrStatus fr_scenario_decode(const struct FrScenario *s,
                                 enum FrMedium medium,
                                 bool rephrased,
                                 uintptr_t n_senders,
                                 const uint32_t *query,
                                 uintptr_t query_len,
                                 uint32_t *out,
                                 uintptr_t cap,
                                 uintptr_t *out_len,
                                 double *latency_s);

/*
 Accuracy of one protocol over the scenario's eval set.
 */
enum FrStatus fr_scenario_accuracy(const struct FrScenario *s,
                                   enum FrMedium medium,
                                   bool rephrased,
                                   uintptr_t n_senders,
                                   double *accuracy);

/*
 Loads a model checkpoint into `*out`.
 */
enum FrStatus fr_model_load(const char *path, struct FrModel **out);

void fr_model_free(struct FrModel *m);

/*
 Vocabulary size of a model, or 0 for a null handle.
 */
uintptr_t fr_model_vocab_size(const struct FrModel *m);

/*
 Greedy continuation of `query` by the model alone, up to `max_new`
 tokens.
 */
enum FrStatus fr_model_generate(const struct FrModel *m,
                                const uint32_t *query,
                                uintptr_t query_len,
                                uintptr_t max_new,
                                uint32_t *out,
                                uintptr_t cap,
                                uintptr_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDREFINE_H */
