#ifndef COFFEE_H
#define COFFEE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define COFFEE_NUM_CLASSES 8

#define COFFEE_OK 0

// A required pointer argument was null.
#define COFFEE_ERR_NULL -1

// A string argument was not valid UTF-8.
#define COFFEE_ERR_UTF8 -2

// An index argument was out of range.
#define COFFEE_ERR_RANGE -3

// The library panicked; the handle arguments should not be reused.
#define COFFEE_ERR_PANIC -4

#define COFFEE_ERR_DIMENSION 1

#define COFFEE_ERR_NUMERIC 2

#define COFFEE_ERR_CONTRACT 3

#define COFFEE_ERR_EMPTY_INPUT 4

#define COFFEE_ERR_PARSE 5

#define COFFEE_ERR_LABEL 6

#define COFFEE_ERR_INTEGRITY 7

#define COFFEE_ERR_SELECTION 8

#define COFFEE_ERR_SERVICE 9

#define COFFEE_ERR_PROTOCOL 10

#define COFFEE_ERR_STRATEGY 11

#define COFFEE_ERR_SAMPLE 12

#define COFFEE_ERR_CHECK 13

#define COFFEE_ERR_CONFIG 14

#define COFFEE_ERR_CHECKPOINT 15

#define COFFEE_ERR_IO 16

#define COFFEE_ERR_JSON 17

// A commonsense cache.
typedef struct CoffeeCache CoffeeCache;

// Instances built from a corpus file.
typedef struct CoffeeCorpus CoffeeCorpus;

// A trained model loaded from a checkpoint.
typedef struct CoffeeModel CoffeeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next library call on the same thread.
const char *coffee_last_error(void);

// Static lowercase name of label `index`, or null when out of range.
const char *coffee_label_name(size_t index);

// Load a checkpoint written by `coffee train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
int32_t coffee_model_load(const char *path, struct CoffeeModel **out);

// # Safety
// `model` must come from [`coffee_model_load`] or be null.
void coffee_model_free(struct CoffeeModel *model);

// Static name of the model's fusion strategy, or null for a null model.
//
// # Safety
// `model` must come from [`coffee_model_load`] or be null.
const char *coffee_model_strategy(const struct CoffeeModel *model);

// Load a JSONL corpus and build one instance per utterance, each with up
// to `context_window` utterances of history.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
int32_t coffee_corpus_load(const char *path, size_t context_window, struct CoffeeCorpus **out);

// Number of instances, or 0 for a null corpus.
//
// # Safety
// `corpus` must come from [`coffee_corpus_load`] or be null.
size_t coffee_corpus_len(const struct CoffeeCorpus *corpus);

// # Safety
// `corpus` must come from [`coffee_corpus_load`] or be null.
void coffee_corpus_free(struct CoffeeCorpus *corpus);

// Load a commonsense cache written by `coffee extract`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
int32_t coffee_cache_load(const char *path, struct CoffeeCache **out);

// # Safety
// `cache` must come from [`coffee_cache_load`] or be null.
void coffee_cache_free(struct CoffeeCache *cache);

// Predict the emotion of instance `index`. `cache` may be null for
// strategies that use no commonsense. `logits`, when not null, receives
// `COFFEE_NUM_CLASSES` values.
//
// # Safety
// Handles must be live or null; `label` must be writable and `logits`
// null or writable for `COFFEE_NUM_CLASSES` doubles.
int32_t coffee_predict(const struct CoffeeModel *model,
                       const struct CoffeeCorpus *corpus,
                       const struct CoffeeCache *cache,
                       size_t index,
                       size_t *label,
                       double *logits);

// Score the model on every instance of `corpus`. `per_class_f1`, when
// not null, receives `COFFEE_NUM_CLASSES` values.
//
// # Safety
// Handles must be live or null; `weighted_f1` must be writable and
// `per_class_f1` null or writable for `COFFEE_NUM_CLASSES` doubles.
int32_t coffee_evaluate(const struct CoffeeModel *model,
                        const struct CoffeeCorpus *corpus,
                        const struct CoffeeCache *cache,
                        double *weighted_f1,
                        double *per_class_f1);

// Run the bundled extraction pipeline on `text` and return the generator
// query. Release the result with [`coffee_string_free`].
//
// # Safety
// `text` must be a NUL-terminated string and `out` a writable pointer.
int32_t coffee_topic_query(const char *text, char **out);

// # Safety
// `s` must come from this library or be null.
void coffee_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COFFEE_H */
