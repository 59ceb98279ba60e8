#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "race/corpus.hpp"
#include "race/rng.hpp"

namespace testutil {

// Scratch directory removed on scope exit.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto p = base / ("race_test_" + tag + "_" + std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directory(p, ec)) {
                path_ = p;
                return;
            }
        }
        throw std::runtime_error("cannot create temp dir");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string str() const { return path_.string(); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

  private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

inline std::vector<std::string> random_tokens(race::Rng& rng, size_t n, int alphabet) {
    std::vector<std::string> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) out.push_back("t" + std::to_string(rng.below(alphabet)));
    return out;
}

// Random single-token edits (replace/insert/delete) applied to a base sequence.
inline std::vector<std::string> mutate_tokens(race::Rng& rng, std::vector<std::string> tokens, int edits,
                                              int alphabet) {
    for (int e = 0; e < edits; ++e) {
        const int op = static_cast<int>(rng.below(3));
        if (tokens.empty() || op == 0) {
            const size_t pos = tokens.empty() ? 0 : rng.below(tokens.size() + 1);
            tokens.insert(tokens.begin() + pos, "t" + std::to_string(rng.below(alphabet)));
        } else if (op == 1) {
            const size_t pos = rng.below(tokens.size());
            tokens[pos] = "t" + std::to_string(rng.below(alphabet));
        } else {
            tokens.erase(tokens.begin() + rng.below(tokens.size()));
        }
    }
    return tokens;
}

// A tiny synthetic commit corpus: clustered single-token perturbations of a
// shared base file, cluster-specific messages.
struct SynthOptions {
    int clusters = 8;
    int per_cluster = 4;
    int base_len = 16;
    int msg_len = 4;
    uint64_t seed = 7;
    int singleton_noise = 0;  // extra one-off records whose nearest exemplar is unrelated
};

inline std::vector<race::CommitRecord> make_synthetic_corpus(const SynthOptions& opt) {
    race::Rng rng(opt.seed);
    race::Rng base_rng = rng.substream("base");
    std::vector<std::string> base;
    for (int i = 0; i < opt.base_len; ++i) base.push_back("sym" + std::to_string(i));

    auto join = [](const std::vector<std::string>& tokens) {
        std::string s;
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (i) s += " ";
            s += tokens[i];
        }
        return s;
    };

    std::vector<race::CommitRecord> records;
    int uid = 0;
    race::Rng msg_rng = rng.substream("msg");
    for (int c = 0; c < opt.clusters; ++c) {
        // cluster identity: which base position changes and into what
        race::Rng crng = rng.substream("cluster:" + std::to_string(c));
        const size_t pos = crng.below(opt.base_len);
        const std::string marker = "chg" + std::to_string(c);
        std::string message = "verb" + std::to_string(msg_rng.below(1000));
        for (int w = 1; w < opt.msg_len; ++w) message += " word" + std::to_string(msg_rng.below(1000));
        for (int m = 0; m < opt.per_cluster; ++m) {
            std::vector<std::string> old_tokens = base;
            // member-specific perturbation elsewhere in the file
            const size_t noise_pos = crng.below(opt.base_len);
            old_tokens[noise_pos] = "var" + std::to_string(crng.below(50));
            std::vector<std::string> new_tokens = old_tokens;
            new_tokens[pos] = marker + "_" + std::to_string(m % 2);
            race::CommitRecord r;
            r.id = "c" + std::to_string(c) + "m" + std::to_string(m) + "_" + std::to_string(uid++);
            r.language = "java";
            r.old_text = join(old_tokens);
            r.new_text = join(new_tokens);
            r.message = message;
            r.repo = "synthetic/repo";
            r.timestamp = 1600000000 + uid;
            records.push_back(std::move(r));
        }
    }
    for (int s = 0; s < opt.singleton_noise; ++s) {
        race::Rng srng = rng.substream("noise:" + std::to_string(s));
        std::vector<std::string> old_tokens = base;
        old_tokens[srng.below(opt.base_len)] = "nz" + std::to_string(s);
        std::vector<std::string> new_tokens = old_tokens;
        new_tokens[srng.below(opt.base_len)] = "nzv" + std::to_string(s);
        race::CommitRecord r;
        r.id = "noise" + std::to_string(s) + "_" + std::to_string(uid++);
        r.language = "java";
        r.old_text = join(old_tokens);
        r.new_text = join(new_tokens);
        r.message = "noise" + std::to_string(srng.below(100000)) + " edit";
        r.repo = "synthetic/repo";
        r.timestamp = 1600000000 + uid;
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace testutil
