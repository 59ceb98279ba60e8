#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace race {

struct CommitRecord {
    std::string id;
    std::string language;
    std::string old_text;
    std::string new_text;
    std::string message;
    std::string repo;
    int64_t timestamp = 0;
};

struct CorpusSplit {
    std::vector<CommitRecord> train;
    std::vector<CommitRecord> validation;
    std::vector<CommitRecord> test;
};

// First line of the message, whitespace runs collapsed, ends trimmed.
std::string normalize_message(const std::string& message);

// Newline-delimited JSON, one commit per line. Keys id, message, old_text,
// new_text are required; language, repo, timestamp default when absent;
// unknown keys are ignored. Duplicate ids are always an error. With
// schema_check the per-record invariants (non-empty id, non-empty normalized
// message, not both texts empty) are enforced too.
std::vector<CommitRecord> load_corpus(const std::string& path, bool schema_check = true);

void save_corpus(const std::string& path, const std::vector<CommitRecord>& records);

// Keeps records that have a non-empty normalized message, differing old/new
// text, a rendered action sequence of at most max_diff_tokens tokens and a
// message of at most max_msg_tokens tokens. Order-preserving and total.
std::vector<CommitRecord> filter_records(const std::vector<CommitRecord>& records, int max_diff_tokens,
                                         int max_msg_tokens);

// Deterministic shuffle + partition. Validation/test sizes are
// floor(n * ratio); the remainder goes to train.
CorpusSplit split_corpus(const std::vector<CommitRecord>& records, double train_ratio, double valid_ratio,
                         double test_ratio, uint64_t seed);

}  // namespace race
