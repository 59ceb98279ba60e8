#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "race/model.hpp"
#include "race/prep.hpp"
#include "race/vocab.hpp"

namespace race {

struct IndexEntry {
    std::string id;
    std::vector<float> vector;  // unit L2 norm
    std::vector<std::string> msg_tokens;
    std::vector<std::string> diff_tokens;
};

// Immutable after build; entries keep input order.
struct RetrievalIndex {
    std::vector<IndexEntry> entries;
    std::string encoder_checkpoint_hash;  // hex
    uint64_t vocab_hash = 0;
    int dim = 0;
};

struct QueryHit {
    std::string id;
    double similarity = 0.0;
    size_t entry = 0;  // position in index.entries
};

double cosine(const std::vector<float>& u, const std::vector<float>& v);

// One entry per record: the encoder's pooled state, L2-normalized. The vocab
// hash of the checkpoint must match the vocabulary the records are encoded
// with. checkpoint_hash pins which encoder produced the vectors.
RetrievalIndex build_index(RaceModel<float>& encoder, const std::vector<PreprocessedRecord>& records,
                           const Vocab& vocab, uint64_t checkpoint_vocab_hash,
                           const std::string& checkpoint_hash);

std::vector<float> embed_diff(RaceModel<float>& encoder, const Vocab& vocab,
                              const std::vector<std::string>& diff_tokens);

// Descending cosine; exclude_id filtered out before ranking; ties break by
// ascending id; returns min(k, available) hits.
std::vector<QueryHit> query(const RetrievalIndex& index, const std::vector<float>& probe, int k,
                            const std::optional<std::string>& exclude_id = std::nullopt);

void save_index(const std::string& path, const RetrievalIndex& index);
RetrievalIndex load_index(const std::string& path);

// NNGen: bag-of-words cosine top-k over diff tokens, then the candidate whose
// diff scores highest B-Norm BLEU against the probe diff wins. Ties break by
// ascending id.
std::vector<std::string> nngen_retrieve(const std::vector<PreprocessedRecord>& train,
                                        const std::vector<std::string>& probe_diff_tokens, int k);

// TF-IDF: tf = raw count, idf = ln((1+N)/(1+df)) + 1, L2-normalized vectors,
// nearest by cosine, ties by ascending id.
std::vector<std::string> tfidf_retrieve(const std::vector<PreprocessedRecord>& train,
                                        const std::vector<std::string>& probe_diff_tokens);

}  // namespace race
