#include "race/corpus.hpp"

#include <cmath>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "race/diffscript.hpp"
#include "race/errors.hpp"
#include "race/rng.hpp"

namespace race {

using nlohmann::json;

std::string normalize_message(const std::string& message) {
    auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; };
    size_t b = 0, e = message.size();
    while (b < e && is_ws(message[b])) ++b;
    size_t nl = message.find('\n', b);
    if (nl != std::string::npos && nl < e) e = nl;
    while (e > b && is_ws(message[e - 1])) --e;
    std::string out;
    out.reserve(e - b);
    bool in_ws = false;
    for (size_t i = b; i < e; ++i) {
        if (is_ws(message[i])) {
            in_ws = true;
            continue;
        }
        if (in_ws && !out.empty()) out.push_back(' ');
        in_ws = false;
        out.push_back(message[i]);
    }
    return out;
}

std::vector<CommitRecord> load_corpus(const std::string& path, bool schema_check) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read corpus file: " + path);
    std::vector<CommitRecord> records;
    std::unordered_set<std::string> seen;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw ParseError(path + ":" + std::to_string(line_no) + ": malformed JSON object");
        CommitRecord r;
        auto need_string = [&](const char* key) -> std::string {
            auto it = j.find(key);
            if (it == j.end() || !it->is_string())
                throw ParseError(path + ":" + std::to_string(line_no) + ": missing or non-string field \"" +
                                 key + "\"");
            return it->get<std::string>();
        };
        r.id = need_string("id");
        r.message = need_string("message");
        r.old_text = need_string("old_text");
        r.new_text = need_string("new_text");
        if (auto it = j.find("language"); it != j.end() && it->is_string()) r.language = it->get<std::string>();
        if (auto it = j.find("repo"); it != j.end() && it->is_string()) r.repo = it->get<std::string>();
        if (auto it = j.find("timestamp"); it != j.end() && it->is_number()) r.timestamp = it->get<int64_t>();
        if (!seen.insert(r.id).second)
            throw ValidationError(path + ":" + std::to_string(line_no) + ": duplicate id \"" + r.id + "\"");
        if (schema_check) {
            if (r.id.empty()) throw ValidationError(path + ":" + std::to_string(line_no) + ": empty id");
            if (normalize_message(r.message).empty())
                throw ValidationError(path + ":" + std::to_string(line_no) + ": empty message");
            if (r.old_text.empty() && r.new_text.empty())
                throw ValidationError(path + ":" + std::to_string(line_no) + ": both texts empty");
        }
        records.push_back(std::move(r));
    }
    return records;
}

void save_corpus(const std::string& path, const std::vector<CommitRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write corpus file: " + path);
    for (const CommitRecord& r : records) {
        json j{{"id", r.id},           {"language", r.language}, {"old_text", r.old_text},
               {"new_text", r.new_text}, {"message", r.message},   {"repo", r.repo},
               {"timestamp", r.timestamp}};
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("failed writing corpus file: " + path);
}

std::vector<CommitRecord> filter_records(const std::vector<CommitRecord>& records, int max_diff_tokens,
                                         int max_msg_tokens) {
    if (max_diff_tokens <= 0 || max_msg_tokens <= 0) throw ValidationError("filter_records: limits must be positive");
    std::vector<CommitRecord> kept;
    for (const CommitRecord& r : records) {
        if (normalize_message(r.message).empty()) continue;
        if (r.old_text == r.new_text) continue;
        const auto msg_tokens = tokenize_code(normalize_message(r.message));
        if (static_cast<int>(msg_tokens.size()) > max_msg_tokens) continue;
        const auto script = compute_edit_script(tokenize_code(r.old_text), tokenize_code(r.new_text));
        const auto rendered = render_action_sequence(script);
        if (static_cast<int>(rendered.size()) > max_diff_tokens) continue;
        kept.push_back(r);
    }
    return kept;
}

CorpusSplit split_corpus(const std::vector<CommitRecord>& records, double train_ratio, double valid_ratio,
                         double test_ratio, uint64_t seed) {
    if (train_ratio < 0 || valid_ratio < 0 || test_ratio < 0)
        throw ValidationError("split_corpus: ratios must be non-negative");
    if (std::fabs(train_ratio + valid_ratio + test_ratio - 1.0) > 1e-9)
        throw ValidationError("split_corpus: ratios must sum to 1");
    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng(seed).substream("split");
    rng.shuffle(order);
    const size_t n = records.size();
    const size_t n_valid = static_cast<size_t>(std::floor(static_cast<double>(n) * valid_ratio));
    const size_t n_test = static_cast<size_t>(std::floor(static_cast<double>(n) * test_ratio));
    const size_t n_train = n - n_valid - n_test;
    CorpusSplit split;
    for (size_t i = 0; i < n; ++i) {
        const CommitRecord& r = records[order[i]];
        if (i < n_train)
            split.train.push_back(r);
        else if (i < n_train + n_valid)
            split.validation.push_back(r);
        else
            split.test.push_back(r);
    }
    return split;
}

}  // namespace race
