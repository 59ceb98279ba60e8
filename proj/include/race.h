/* C interface to the race pipeline. All state lives behind the opaque
 * race_pipeline handle; functions return status codes that double as process
 * exit codes (0 ok, 2 input error, 3 numeric failure, 1 anything else).
 * Error text for the last failed call is kept on the handle. */

#ifndef RACE_H
#define RACE_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum race_status {
    RACE_OK = 0,
    RACE_ERROR = 1,
    RACE_INPUT_ERROR = 2,
    RACE_NUMERIC_ERROR = 3
} race_status;

typedef struct race_pipeline race_pipeline;

const char* race_version(void);

/* Returns NULL on allocation failure. */
race_pipeline* race_pipeline_new(void);
void race_pipeline_free(race_pipeline* p);

/* Merge a config file ("key = value" lines) into the handle. */
race_status race_pipeline_load_config(race_pipeline* p, const char* path);

/* Set one config key; overrides values from the file. */
race_status race_pipeline_set(race_pipeline* p, const char* key, const char* value);

/* Value for key, or NULL when unset. The pointer stays valid until the next
 * call on the handle. */
const char* race_pipeline_get(race_pipeline* p, const char* key);

/* Message from the last failed call; empty string when none. */
const char* race_pipeline_last_error(const race_pipeline* p);

/* Pipeline stages. Inputs/outputs resolve from the config keys. */
race_status race_run_preprocess(race_pipeline* p);
race_status race_run_vocab(race_pipeline* p);
race_status race_run_train_retriever(race_pipeline* p);
race_status race_run_index(race_pipeline* p);
race_status race_run_retrieve(race_pipeline* p);
race_status race_run_train_generator(race_pipeline* p);
race_status race_run_generate(race_pipeline* p);
race_status race_run_eval(race_pipeline* p);
race_status race_run_pipeline(race_pipeline* p);

#ifdef __cplusplus
}
#endif

#endif /* RACE_H */
