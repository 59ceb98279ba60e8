#include "race/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "race/diffscript.hpp"
#include "race/errors.hpp"
#include "race/rng.hpp"

namespace race {

const std::vector<std::string>& Vocab::special_tokens() {
    static const std::vector<std::string> specials = [] {
        std::vector<std::string> s = {"<pad>", "<unk>", "<bos>", "<eos>"};
        const auto& markers = action_marker_tokens();
        s.insert(s.end(), markers.begin(), markers.end());
        return s;
    }();
    return specials;
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& corpora, int min_freq, int max_size) {
    if (min_freq < 1) throw ValidationError("build_vocab: min_freq must be >= 1");
    if (max_size < kNumSpecials) throw ValidationError("build_vocab: max_size must be >= 13");
    std::map<std::string, int64_t> freq;  // ordered map gives the lexicographic tie-break for free
    for (const auto& seq : corpora)
        for (const std::string& t : seq) ++freq[t];

    Vocab v;
    for (const std::string& s : special_tokens()) {
        v.token_to_id_.emplace(s, static_cast<int>(v.id_to_token_.size()));
        v.id_to_token_.push_back(s);
    }
    std::vector<std::pair<std::string, int64_t>> ranked;
    ranked.reserve(freq.size());
    for (auto& [tok, n] : freq)
        if (n >= min_freq && !v.token_to_id_.count(tok)) ranked.emplace_back(tok, n);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [tok, n] : ranked) {
        if (v.size() >= max_size) break;
        v.token_to_id_.emplace(tok, static_cast<int>(v.id_to_token_.size()));
        v.id_to_token_.push_back(tok);
    }
    return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
    const auto& specials = special_tokens();
    if (tokens.size() < specials.size()) throw ValidationError("vocab: fewer tokens than the 13 specials");
    for (size_t i = 0; i < specials.size(); ++i)
        if (tokens[i] != specials[i])
            throw ValidationError("vocab: token " + std::to_string(i) + " must be " + specials[i]);
    Vocab v;
    for (const std::string& t : tokens) {
        if (!v.token_to_id_.emplace(t, static_cast<int>(v.id_to_token_.size())).second)
            throw ValidationError("vocab: duplicate token \"" + t + "\"");
        v.id_to_token_.push_back(t);
    }
    return v;
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read vocab file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
    return from_tokens(tokens);
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocab file: " + path);
    for (const std::string& t : id_to_token_) out << t << '\n';
    if (!out) throw IoError("failed writing vocab file: " + path);
}

int Vocab::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size()) throw ValidationError("vocab: id " + std::to_string(id) + " out of range");
    return id_to_token_[id];
}

uint64_t Vocab::hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const std::string& t : id_to_token_) {
        h = fnv1a64(t, h);
        h = fnv1a64("\n", h);
    }
    return h;
}

TokenIds Vocab::encode(const std::vector<std::string>& tokens, int max_len, bool add_bos_eos) const {
    if (max_len < 1 || (add_bos_eos && max_len < 2))
        throw ValidationError("encode: max_len too small");
    std::vector<int> ids;
    ids.reserve(tokens.size() + 2);
    if (add_bos_eos) ids.push_back(kBos);
    for (const std::string& t : tokens) ids.push_back(id_of(t));
    if (add_bos_eos) ids.push_back(kEos);
    if (static_cast<int>(ids.size()) > max_len) {
        ids.resize(max_len);
        if (add_bos_eos) ids[max_len - 1] = kEos;  // tail truncation keeps the head
    }
    TokenIds out;
    out.ids = std::move(ids);
    out.mask.assign(out.ids.size(), 1);
    while (static_cast<int>(out.ids.size()) < max_len) {
        out.ids.push_back(kPad);
        out.mask.push_back(0);
    }
    return out;
}

std::vector<std::string> Vocab::decode(const TokenIds& ids) const { return decode_ids(ids.ids); }

std::vector<std::string> Vocab::decode_ids(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int id : ids) {
        if (id < 0 || id >= size()) throw ValidationError("decode: id " + std::to_string(id) + " out of range");
        if (id == kEos) break;
        if (id == kPad || id == kBos) continue;
        out.push_back(id_to_token_[id]);
    }
    return out;
}

}  // namespace race
