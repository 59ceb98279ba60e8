#include "race/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "race/checkpoint.hpp"
#include "race/errors.hpp"
#include "race/metrics.hpp"

namespace race {

namespace {

constexpr char kMagic[8] = {'R', 'A', 'C', 'E', 'I', 'D', 'X', '1'};

template <class T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError(std::string("index: truncated while reading ") + what);
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const char* what) {
    const uint32_t n = read_pod<uint32_t>(in, what);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw ParseError(std::string("index: truncated while reading ") + what);
    return s;
}

void write_tokens(std::ostream& out, const std::vector<std::string>& tokens) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(tokens.size()));
    for (const std::string& t : tokens) write_string(out, t);
}

std::vector<std::string> read_tokens(std::istream& in, const char* what) {
    const uint32_t n = read_pod<uint32_t>(in, what);
    std::vector<std::string> tokens(n);
    for (uint32_t i = 0; i < n; ++i) tokens[i] = read_string(in, what);
    return tokens;
}

}  // namespace

double cosine(const std::vector<float>& u, const std::vector<float>& v) {
    if (u.size() != v.size()) throw ShapeError("cosine: vectors of different lengths");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw ValidationError("cosine: zero vector");
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

std::vector<float> embed_diff(RaceModel<float>& encoder, const Vocab& vocab,
                              const std::vector<std::string>& diff_tokens) {
    const TokenIds ids = vocab.encode(diff_tokens, encoder.config().max_diff_len, false);
    EncoderOutput<float> out = encoder.encode(ids, 0);
    std::vector<float> vec(out.pooled.data.begin(), out.pooled.data.end());
    double norm = 0.0;
    for (float v : vec) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (float& v : vec) v = static_cast<float>(v / norm);
    return vec;
}

RetrievalIndex build_index(RaceModel<float>& encoder, const std::vector<PreprocessedRecord>& records,
                           const Vocab& vocab, uint64_t checkpoint_vocab_hash, const std::string& checkpoint_hash) {
    if (checkpoint_vocab_hash != vocab.hash())
        throw ValidationError("build_index: checkpoint was trained against a different vocabulary");
    RetrievalIndex index;
    index.encoder_checkpoint_hash = checkpoint_hash;
    index.vocab_hash = vocab.hash();
    index.dim = encoder.config().d_model;
    index.entries.reserve(records.size());
    for (const PreprocessedRecord& r : records) {
        IndexEntry e;
        e.id = r.id;
        e.vector = embed_diff(encoder, vocab, r.action_tokens);
        e.msg_tokens = r.msg_tokens;
        e.diff_tokens = r.action_tokens;
        index.entries.push_back(std::move(e));
    }
    return index;
}

std::vector<QueryHit> query(const RetrievalIndex& index, const std::vector<float>& probe, int k,
                            const std::optional<std::string>& exclude_id) {
    if (k < 1) throw ValidationError("query: k must be >= 1");
    std::vector<QueryHit> hits;
    hits.reserve(index.entries.size());
    for (size_t i = 0; i < index.entries.size(); ++i) {
        const IndexEntry& e = index.entries[i];
        if (exclude_id && e.id == *exclude_id) continue;
        double dot = 0.0;
        for (size_t j = 0; j < probe.size() && j < e.vector.size(); ++j)
            dot += static_cast<double>(probe[j]) * e.vector[j];
        hits.push_back(QueryHit{e.id, dot, i});
    }
    std::sort(hits.begin(), hits.end(), [](const QueryHit& a, const QueryHit& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.id < b.id;
    });
    if (static_cast<int>(hits.size()) > k) hits.resize(k);
    return hits;
}

void save_index(const std::string& path, const RetrievalIndex& index) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write index: " + path);
    out.write(kMagic, 8);
    write_pod<uint32_t>(out, 1);
    write_pod<uint32_t>(out, static_cast<uint32_t>(index.dim));
    write_pod<uint64_t>(out, index.entries.size());
    write_pod<uint64_t>(out, index.vocab_hash);
    write_string(out, index.encoder_checkpoint_hash);
    for (const IndexEntry& e : index.entries) {
        write_string(out, e.id);
        for (float v : e.vector) write_pod<float>(out, v);
        write_tokens(out, e.msg_tokens);
        write_tokens(out, e.diff_tokens);
    }
    if (!out) throw IoError("failed writing index: " + path);
}

RetrievalIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read index: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ParseError("index: bad magic in " + path);
    const uint32_t version = read_pod<uint32_t>(in, "version");
    if (version != 1) throw ParseError("index: unsupported version " + std::to_string(version));
    RetrievalIndex index;
    index.dim = static_cast<int>(read_pod<uint32_t>(in, "dim"));
    const uint64_t count = read_pod<uint64_t>(in, "count");
    index.vocab_hash = read_pod<uint64_t>(in, "vocab hash");
    index.encoder_checkpoint_hash = read_string(in, "checkpoint hash");
    index.entries.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        IndexEntry e;
        e.id = read_string(in, "entry id");
        e.vector.resize(index.dim);
        for (int j = 0; j < index.dim; ++j) e.vector[j] = read_pod<float>(in, "vector");
        e.msg_tokens = read_tokens(in, "msg tokens");
        e.diff_tokens = read_tokens(in, "diff tokens");
        index.entries.push_back(std::move(e));
    }
    return index;
}

namespace {

std::unordered_map<std::string, int> bow(const std::vector<std::string>& tokens) {
    std::unordered_map<std::string, int> counts;
    for (const std::string& t : tokens) ++counts[t];
    return counts;
}

double bow_cosine(const std::unordered_map<std::string, int>& a, const std::unordered_map<std::string, int>& b) {
    if (a.empty() || b.empty()) return 0.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [t, c] : a) {
        na += static_cast<double>(c) * c;
        auto it = b.find(t);
        if (it != b.end()) dot += static_cast<double>(c) * it->second;
    }
    for (const auto& [t, c] : b) nb += static_cast<double>(c) * c;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::vector<std::string> nngen_retrieve(const std::vector<PreprocessedRecord>& train,
                                        const std::vector<std::string>& probe_diff_tokens, int k) {
    if (train.empty()) throw ValidationError("nngen: empty training set");
    if (k < 1) throw ValidationError("nngen: k must be >= 1");
    const auto probe = bow(probe_diff_tokens);
    struct Scored {
        double sim;
        size_t idx;
    };
    std::vector<Scored> scored;
    scored.reserve(train.size());
    for (size_t i = 0; i < train.size(); ++i) scored.push_back({bow_cosine(probe, bow(train[i].action_tokens)), i});
    std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return train[a.idx].id < train[b.idx].id;
    });
    if (static_cast<int>(scored.size()) > k) scored.resize(k);
    size_t best = 0;
    double best_bleu = -1.0;
    for (size_t i = 0; i < scored.size(); ++i) {
        const double b = bnorm_sentence(train[scored[i].idx].action_tokens, probe_diff_tokens);
        const bool better = b > best_bleu || (b == best_bleu && train[scored[i].idx].id < train[scored[best].idx].id);
        if (i == 0 || better) {
            best = i;
            best_bleu = b;
        }
    }
    return train[scored[best].idx].msg_tokens;
}

std::vector<std::string> tfidf_retrieve(const std::vector<PreprocessedRecord>& train,
                                        const std::vector<std::string>& probe_diff_tokens) {
    if (train.empty()) throw ValidationError("tfidf: empty training set");
    const double n_docs = static_cast<double>(train.size());
    std::unordered_map<std::string, int> df;
    std::vector<std::unordered_map<std::string, int>> doc_bows;
    doc_bows.reserve(train.size());
    for (const PreprocessedRecord& r : train) {
        doc_bows.push_back(bow(r.action_tokens));
        for (const auto& [t, c] : doc_bows.back()) ++df[t];
    }
    auto idf = [&](const std::string& t) {
        auto it = df.find(t);
        const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
        return std::log((1.0 + n_docs) / (1.0 + d)) + 1.0;
    };
    auto weigh = [&](const std::unordered_map<std::string, int>& counts) {
        std::unordered_map<std::string, double> w;
        double norm = 0.0;
        for (const auto& [t, c] : counts) {
            const double x = c * idf(t);
            w[t] = x;
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (auto& [t, x] : w) x /= norm;
        return w;
    };
    const auto probe_w = weigh(bow(probe_diff_tokens));
    size_t best = 0;
    double best_sim = -1.0;
    for (size_t i = 0; i < train.size(); ++i) {
        const auto doc_w = weigh(doc_bows[i]);
        double sim = 0.0;
        for (const auto& [t, x] : probe_w) {
            auto it = doc_w.find(t);
            if (it != doc_w.end()) sim += x * it->second;
        }
        const bool better = sim > best_sim || (sim == best_sim && train[i].id < train[best].id);
        if (i == 0 || better) {
            best = i;
            best_sim = sim;
        }
    }
    return train[best].msg_tokens;
}

}  // namespace race
