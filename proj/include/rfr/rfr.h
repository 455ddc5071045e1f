#ifndef RFR_RFR_H_
#define RFR_RFR_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(RFR_BUILDING_LIBRARY)
#define RFR_API __declspec(dllexport)
#else
#define RFR_API __declspec(dllimport)
#endif
#else
#define RFR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rfr_status {
  RFR_OK = 0,
  RFR_ERR_SHAPE = 1,
  RFR_ERR_EMPTY_BATCH = 2,
  RFR_ERR_DEGENERATE_GROUP = 3,
  RFR_ERR_NUMERIC = 4,
  RFR_ERR_VALIDATION = 5,
  RFR_ERR_SCHEMA = 6,
  RFR_ERR_EMPTY_DATA = 7,
  RFR_ERR_PARTITION = 8,
  RFR_ERR_SIZE = 9,
  RFR_ERR_DEGENERATE_VARIANCE = 10,
  RFR_ERR_USAGE = 11,
  RFR_ERR_IO = 12,
  RFR_ERR_NULL_ARGUMENT = 13,
  RFR_ERR_INTERNAL = 14
} rfr_status;

typedef enum rfr_method { RFR_METHOD_MLP = 0, RFR_METHOD_REG = 1, RFR_METHOD_RFR = 2 } rfr_method;

typedef enum rfr_orientation {
  RFR_SHIFTED_SOURCE = 0,
  RFR_SHIFTED_TARGET = 1
} rfr_orientation;

typedef struct rfr_dataset rfr_dataset;
typedef struct rfr_config rfr_config;
typedef struct rfr_model rfr_model;

typedef struct rfr_fairness {
  double accuracy;
  double delta_dp;
  double delta_eo;   /* NaN when eo_defined is 0 */
  int eo_defined;    /* 0 when a group has no positive rows */
  size_t n0;
  size_t n1;
} rfr_fairness;

typedef struct rfr_bound {
  double dp_source;
  double dp_target;
  double delta0;
  double delta1;
  double bound;
  int satisfied;
} rfr_bound;

/* Message of the last failed call on this thread; empty after success. */
RFR_API const char* rfr_last_error(void);
RFR_API const char* rfr_status_name(rfr_status status);
/* 0 ok, 1 usage, 2 data, 3 numeric; other failures map to 2. */
RFR_API int rfr_exit_code(rfr_status status);
RFR_API const char* rfr_version(void);
/* Releases strings returned through char** out parameters. */
RFR_API void rfr_string_free(char* text);

/* Datasets. */
RFR_API rfr_status rfr_dataset_load_csv(const char* csv_path, const char* schema_path,
                                        rfr_dataset** out, size_t* dropped_rows);
/* x is row-major rows x cols; y and a hold 0 or 1. */
RFR_API rfr_status rfr_dataset_from_arrays(const double* x, const int* y, const int* a,
                                           size_t rows, size_t cols, rfr_dataset** out);
RFR_API rfr_status rfr_dataset_save(const rfr_dataset* data, const char* path);
RFR_API rfr_status rfr_dataset_shape(const rfr_dataset* data, size_t* rows, size_t* cols);
/* Copies into caller buffers of rows*cols, rows and rows entries; any may be NULL. */
RFR_API rfr_status rfr_dataset_copy(const rfr_dataset* data, double* x, int* y, int* a);
RFR_API void rfr_dataset_free(rfr_dataset* data);

/* Biased source/target split along the first principal component.
   n_source or n_target < 0 selects floor(N/3). */
RFR_API rfr_status rfr_shift_make(const rfr_dataset* data, double alpha, double beta,
                                  uint64_t seed, rfr_orientation orientation,
                                  int64_t n_source, int64_t n_target,
                                  rfr_dataset** source, rfr_dataset** target);

/* Experiment configuration in key = value text; overrides use the same form. */
RFR_API rfr_status rfr_config_parse(const char* text, const char* const* overrides,
                                    size_t n_overrides, rfr_config** out);
RFR_API rfr_status rfr_config_load(const char* path, const char* const* overrides,
                                   size_t n_overrides, rfr_config** out);
RFR_API rfr_status rfr_config_to_json(const rfr_config* config, char** json);
RFR_API rfr_status rfr_config_output_dir(const rfr_config* config, char** path);
RFR_API void rfr_config_free(rfr_config* config);

/* Source and target for one seed as the configuration prescribes. */
RFR_API rfr_status rfr_prepare_data(const rfr_config* config, uint64_t seed,
                                    rfr_dataset** source, rfr_dataset** target);

/* Trains with the configuration's optimizer, loss, rho and p. MLP ignores
   lambda; REG uses rho 0. */
RFR_API rfr_status rfr_train(const rfr_dataset* data, const rfr_config* config,
                             rfr_method method, double lambda, uint64_t seed,
                             rfr_model** out);
/* Writes one probability per row into out. */
RFR_API rfr_status rfr_model_predict(const rfr_model* model, const rfr_dataset* data,
                                     double* out);
RFR_API rfr_status rfr_model_parameter_count(const rfr_model* model, size_t* count);
RFR_API void rfr_model_free(rfr_model* model);

RFR_API rfr_status rfr_evaluate(const rfr_model* model, const rfr_dataset* data,
                                double threshold, rfr_fairness* out);
RFR_API rfr_status rfr_check_bound(const rfr_model* model, const rfr_dataset* source,
                                   const rfr_dataset* target, rfr_bound* out);

/* Runs every method x lambda x seed cell and writes the output files. The
   summary table is returned when summary is not NULL. */
RFR_API rfr_status rfr_run_experiment(const rfr_config* config, char** summary);

/* Runs the transport, perturbation-law and first-order checks. report is a
   JSON array of {name, passed, detail}. */
RFR_API rfr_status rfr_verify_theory(uint64_t seed, int* all_passed, char** report);

/* Aggregates records.jsonl files into a mean and std table. */
RFR_API rfr_status rfr_report(const char* const* jsonl_paths, size_t n_paths, char** table);

#ifdef __cplusplus
}
#endif

#endif /* RFR_RFR_H_ */
