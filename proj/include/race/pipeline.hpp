#pragma once

#include <string>

#include "race/config.hpp"

namespace race {

// Pipeline stages over a shared workdir. Every stage is idempotent for the
// same inputs and seed; all outputs land in the workdir unless a path key
// overrides them. Key reference lives in the README.
class Pipeline {
  public:
    explicit Pipeline(Config cfg);

    const Config& config() const { return cfg_; }
    Config& config() { return cfg_; }

    std::string workdir() const;

    void run_preprocess();
    void run_vocab();
    void run_train_retriever();
    void run_index();
    void run_retrieve();
    void run_train_generator();
    void run_generate();
    void run_eval();
    void run_all();

    // default artifact paths (before key overrides)
    std::string pre_path(const std::string& split) const;
    std::string vocab_path() const;
    std::string retriever_ckpt_path() const;
    std::string generator_ckpt_path() const;
    std::string index_path() const;
    std::string exemplars_path(const std::string& split) const;
    std::string hyps_path(const std::string& tag) const;
    std::string provenance_path() const;
    std::string report_path(const std::string& tag) const;

  private:
    Config cfg_;
};

}  // namespace race
