#ifndef MUFFIN_H
#define MUFFIN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MUFFIN_OK 0

// I/O or validation failure (also null or malformed arguments).
#define MUFFIN_ERR_INVALID 1

// Infeasible configuration.
#define MUFFIN_ERR_INFEASIBLE 2

// Search space exceeds the enumeration guard.
#define MUFFIN_ERR_GUARD 3

// A bug inside the library; the message carries the panic payload.
#define MUFFIN_ERR_PANIC 4

// Search output: best structure as JSON and the history as CSV.
typedef struct MuffinResult MuffinResult;

// A loaded dataset and model pool.
typedef struct MuffinWorkspace MuffinWorkspace;

// Message describing the last failure on this thread; empty after a
// success. Valid until the next library call on the same thread.
const char *muffin_last_error(void);

// Library version as a static string.
const char *muffin_version(void);

// Loads a dataset, its schema and a pool manifest.
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be a valid pointer.
int muffin_workspace_open(const char *dataset_path,
                          const char *schema_path,
                          const char *manifest_path,
                          struct MuffinWorkspace **out);

// # Safety
// `ws` must come from [`muffin_workspace_open`] (or be null) and is
// invalid afterwards.
void muffin_workspace_free(struct MuffinWorkspace *ws);

// # Safety
// `ws` must be a live workspace or null (which yields 0).
size_t muffin_workspace_num_samples(const struct MuffinWorkspace *ws);

// # Safety
// `ws` must be a live workspace or null (which yields 0).
size_t muffin_workspace_num_models(const struct MuffinWorkspace *ws);

// # Safety
// `ws` must be a live workspace or null (which yields 0).
size_t muffin_workspace_num_classes(const struct MuffinWorkspace *ws);

// # Safety
// `ws` must be a live workspace or null (which yields 0).
size_t muffin_workspace_num_attributes(const struct MuffinWorkspace *ws);

// Fraction of the `n` samples where `predicted` equals `labels`.
//
// # Safety
// Both arrays must hold `n` elements; `out` must be valid.
int muffin_accuracy(const uint32_t *predicted, const uint32_t *labels, size_t n, double *out);

// Unfairness of one attribute: the sum over non-empty groups of
// |group accuracy - overall accuracy|. `groups[i]` is sample i's group.
//
// # Safety
// All arrays must hold `n` elements; `out` must be valid.
int muffin_unfairness(const uint32_t *predicted,
                      const uint32_t *labels,
                      const uint32_t *groups,
                      size_t n,
                      double *out);

// Reward: the sum over `k` attributes of accuracy / max(U, epsilon).
//
// # Safety
// `unfairness` must hold `k` elements; `out` must be valid.
int muffin_reward(double accuracy, const double *unfairness, size_t k, double epsilon, double *out);

// Fractions of samples where both models are wrong, only `a` is right,
// only `b` is right and both are right, written to `out[0..4]`.
//
// # Safety
// The three arrays must hold `n` elements; `out` must hold 4.
int muffin_breakdown(const uint32_t *model_a,
                     const uint32_t *model_b,
                     const uint32_t *labels,
                     size_t n,
                     double *out);

// Runs a search over the workspace. `config_json` is a run configuration
// in the CLI's JSON format (input paths in it are ignored); null uses the
// defaults.
//
// # Safety
// `ws` must be live; `config_json` null or NUL-terminated; `out` valid.
int muffin_search(const struct MuffinWorkspace *ws,
                  const char *config_json,
                  struct MuffinResult **out);

// `best.json` contents; owned by the result.
//
// # Safety
// `res` must be a live result or null (which yields null).
const char *muffin_result_best_json(const struct MuffinResult *res);

// `history.csv` contents; owned by the result.
//
// # Safety
// `res` must be a live result or null (which yields null).
const char *muffin_result_history_csv(const struct MuffinResult *res);

// `pareto.csv` contents; owned by the result.
//
// # Safety
// `res` must be a live result or null (which yields null).
const char *muffin_result_pareto_csv(const struct MuffinResult *res);

// # Safety
// `res` must come from [`muffin_search`] (or be null) and is invalid
// afterwards.
void muffin_result_free(struct MuffinResult *res);

// Writes a synthetic preset (dataset, schema, manifest, model outputs)
// into `out_dir`.
//
// # Safety
// Strings must be NUL-terminated.
int muffin_synth(const char *preset, uint64_t seed, const char *out_dir);

#endif  /* MUFFIN_H */
