#pragma once

#include <string>
#include <vector>

#include "race/corpus.hpp"

namespace race {

// Preprocessed form: rendered action sequence plus message tokens.
struct PreprocessedRecord {
    std::string id;
    std::vector<std::string> action_tokens;
    std::vector<std::string> msg_tokens;
};

PreprocessedRecord preprocess_record(const CommitRecord& record);

// JSONL with keys id, action_tokens, msg_tokens.
std::vector<PreprocessedRecord> load_preprocessed(const std::string& path);
void save_preprocessed(const std::string& path, const std::vector<PreprocessedRecord>& records);

}  // namespace race
