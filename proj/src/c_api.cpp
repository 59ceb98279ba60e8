#include "race.h"

#include <new>
#include <string>

#include "race/errors.hpp"
#include "race/pipeline.hpp"

struct race_pipeline {
    race::Config config;
    std::string last_error;
    std::string get_buffer;
};

namespace {

race_status run_guarded(race_pipeline* p, void (race::Pipeline::*stage)()) {
    if (!p) return RACE_ERROR;
    p->last_error.clear();
    try {
        race::Pipeline pipeline(p->config);
        (pipeline.*stage)();
        return RACE_OK;
    } catch (const std::exception& e) {
        p->last_error = e.what();
        return static_cast<race_status>(race::exit_code_for(e));
    } catch (...) {
        p->last_error = "unknown error";
        return RACE_ERROR;
    }
}

}  // namespace

extern "C" {

const char* race_version(void) { return "0.1.0"; }

race_pipeline* race_pipeline_new(void) { return new (std::nothrow) race_pipeline(); }

void race_pipeline_free(race_pipeline* p) { delete p; }

race_status race_pipeline_load_config(race_pipeline* p, const char* path) {
    if (!p || !path) return RACE_ERROR;
    p->last_error.clear();
    try {
        race::Config loaded = race::Config::load(path);
        for (const auto& [k, v] : loaded.entries()) p->config.set(k, v);
        return RACE_OK;
    } catch (const std::exception& e) {
        p->last_error = e.what();
        return static_cast<race_status>(race::exit_code_for(e));
    }
}

race_status race_pipeline_set(race_pipeline* p, const char* key, const char* value) {
    if (!p || !key || !value) return RACE_ERROR;
    p->config.set(key, value);
    return RACE_OK;
}

const char* race_pipeline_get(race_pipeline* p, const char* key) {
    if (!p || !key) return nullptr;
    if (!p->config.has(key)) return nullptr;
    p->get_buffer = p->config.get_str(key, "");
    return p->get_buffer.c_str();
}

const char* race_pipeline_last_error(const race_pipeline* p) { return p ? p->last_error.c_str() : ""; }

race_status race_run_preprocess(race_pipeline* p) { return run_guarded(p, &race::Pipeline::run_preprocess); }
race_status race_run_vocab(race_pipeline* p) { return run_guarded(p, &race::Pipeline::run_vocab); }
race_status race_run_train_retriever(race_pipeline* p) {
    return run_guarded(p, &race::Pipeline::run_train_retriever);
}
race_status race_run_index(race_pipeline* p) { return run_guarded(p, &race::Pipeline::run_index); }
race_status race_run_retrieve(race_pipeline* p) { return run_guarded(p, &race::Pipeline::run_retrieve); }
race_status race_run_train_generator(race_pipeline* p) {
    return run_guarded(p, &race::Pipeline::run_train_generator);
}
race_status race_run_generate(race_pipeline* p) { return run_guarded(p, &race::Pipeline::run_generate); }
race_status race_run_eval(race_pipeline* p) { return run_guarded(p, &race::Pipeline::run_eval); }
race_status race_run_pipeline(race_pipeline* p) { return run_guarded(p, &race::Pipeline::run_all); }

}  // extern "C"
