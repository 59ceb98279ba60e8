#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace race {

// Padded id sequence; mask is 1 on real tokens (incl. bos/eos), 0 on padding.
struct TokenIds {
    std::vector<int> ids;
    std::vector<uint8_t> mask;
};

// Word-level vocabulary. The 13 control/special tokens hold the lowest ids in
// a fixed order: <pad> <unk> <bos> <eos> then the nine action markers.
class Vocab {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kNumSpecials = 13;

    static const std::vector<std::string>& special_tokens();

    // Most frequent tokens with frequency >= min_freq, ranked by frequency
    // then lexicographically, truncated to max_size entries overall.
    static Vocab build(const std::vector<std::vector<std::string>>& corpora, int min_freq, int max_size);

    static Vocab from_tokens(const std::vector<std::string>& tokens);  // file order, specials first
    static Vocab load(const std::string& path);
    void save(const std::string& path) const;

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int id_of(const std::string& token) const;  // <unk> id when absent
    const std::string& token_of(int id) const;  // throws ValidationError when out of range
    bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

    // FNV-1a over the token list; pairs checkpoints and indexes with the
    // vocabulary they were built against.
    uint64_t hash() const;

    TokenIds encode(const std::vector<std::string>& tokens, int max_len, bool add_bos_eos) const;
    std::vector<std::string> decode(const TokenIds& ids) const;
    std::vector<std::string> decode_ids(const std::vector<int>& ids) const;

  private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

}  // namespace race
