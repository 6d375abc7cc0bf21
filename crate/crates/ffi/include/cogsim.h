#ifndef COGSIM_H
#define COGSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CogsimStatus {
  COGSIM_STATUS_OK = 0,
  COGSIM_STATUS_NULL_POINTER = 1,
  COGSIM_STATUS_INVALID_ARGUMENT = 2,
  COGSIM_STATUS_BUFFER_TOO_SMALL = 3,
  COGSIM_STATUS_MODEL_ERROR = 4,
  COGSIM_STATUS_IO_ERROR = 5,
  COGSIM_STATUS_TIMEOUT = 6,
  COGSIM_STATUS_DISCONNECTED = 7,
  COGSIM_STATUS_REMOTE_ERROR = 8,
  COGSIM_STATUS_PROTOCOL_ERROR = 9,
  COGSIM_STATUS_PANIC = 10,
} CogsimStatus;

typedef enum CogsimVerdict {
  COGSIM_VERDICT_FEASIBLE = 0,
  COGSIM_VERDICT_NETWORK_BOUND = 1,
  COGSIM_VERDICT_ACCELERATOR_BOUND = 2,
} CogsimVerdict;

/**
 * A connected inference session. Opaque to C.
 */
typedef struct CogsimClient CogsimClient;

/**
 * A built model. Opaque to C.
 */
typedef struct CogsimModel CogsimModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Never null; valid until
 * the next failing call on the same thread.
 */
const char *cogsim_last_error(void);

/**
 * Static name of a status code.
 */
const char *cogsim_status_name(enum CogsimStatus status);

/**
 * Build the default dense surrogate with the given seed and precision tag
 * (0 = f32, 1 = f16, 2 = bf16).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CogsimStatus cogsim_model_hermit(uint64_t seed,
                                      uint8_t precision_tag,
                                      struct CogsimModel **out);

/**
 * Build the default convolutional autoencoder.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CogsimStatus cogsim_model_mir(uint64_t seed, uint8_t precision_tag, struct CogsimModel **out);

/**
 * Build a model from a manifest file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as above.
 */
enum CogsimStatus cogsim_model_from_manifest(const char *path, struct CogsimModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from a `cogsim_model_*` constructor and not be used
 * afterwards.
 */
void cogsim_model_free(struct CogsimModel *model);

/**
 * Number of owned parameters.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum CogsimStatus cogsim_model_param_count(const struct CogsimModel *model, uint64_t *out);

/**
 * Elements per input sample and per output sample.
 *
 * # Safety
 * `model` must be a live handle; `in_len` and `out_len` writable.
 */
enum CogsimStatus cogsim_model_sample_lens(const struct CogsimModel *model,
                                           size_t *in_len,
                                           size_t *out_len);

/**
 * Floating-point operations and wire bytes (input + output) per sample.
 *
 * # Safety
 * `model` must be a live handle; `flops` and `wire_bytes` writable.
 */
enum CogsimStatus cogsim_model_accounting(const struct CogsimModel *model,
                                          double *flops,
                                          uint64_t *wire_bytes);

/**
 * Run `batch` samples through the model locally. `input` holds
 * `batch * in_len` values; `output` must hold `batch * out_len`.
 *
 * # Safety
 * `input` must be readable and `output` writable for the given lengths.
 */
enum CogsimStatus cogsim_model_forward(const struct CogsimModel *model,
                                       const float *input,
                                       size_t batch,
                                       float *output,
                                       size_t output_capacity);

/**
 * Connect to a server at `tcp://host:port`. A `timeout_ms` of 0 keeps the
 * default of 30 s.
 *
 * # Safety
 * `endpoint` must be a NUL-terminated string; `out` writable.
 */
enum CogsimStatus cogsim_client_connect(const char *endpoint,
                                        uint64_t timeout_ms,
                                        struct CogsimClient **out);

/**
 * Close a session. Null is ignored.
 *
 * # Safety
 * `client` must come from `cogsim_client_connect` and not be used
 * afterwards.
 */
void cogsim_client_free(struct CogsimClient *client);

/**
 * Synchronous remote inference. The request tensor has shape
 * `[batch, row_shape...]`. On success `output` holds `*output_len` values
 * and `*latency_ms` the round-trip time.
 *
 * # Safety
 * All pointers must be valid for the lengths implied by the arguments.
 */
enum CogsimStatus cogsim_client_infer(struct CogsimClient *client,
                                      const char *model_id,
                                      const float *input,
                                      size_t batch,
                                      const size_t *row_shape,
                                      size_t row_rank,
                                      uint8_t precision_tag,
                                      float *output,
                                      size_t output_capacity,
                                      size_t *output_len,
                                      double *latency_ms);

/**
 * Samples per second a link can carry at the given batch size. Returns a
 * negative value when the link parameters are invalid.
 */
double cogsim_link_capacity_sps(double bandwidth_bits_per_s,
                                double overhead_bytes_per_msg,
                                double per_sample_wire_bytes,
                                size_t batch);

/**
 * Classify a workload from the two capacities and the demand.
 */
enum CogsimVerdict cogsim_verdict(double link_capacity_sps,
                                  double accelerator_capacity_sps,
                                  double demand_sps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COGSIM_H */
