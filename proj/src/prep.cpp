#include "race/prep.hpp"

#include <fstream>

#include <json.hpp>

#include "race/diffscript.hpp"
#include "race/errors.hpp"

namespace race {

using nlohmann::json;

PreprocessedRecord preprocess_record(const CommitRecord& record) {
    PreprocessedRecord out;
    out.id = record.id;
    const EditScript script = compute_edit_script(tokenize_code(record.old_text), tokenize_code(record.new_text));
    out.action_tokens = render_action_sequence(script);
    out.msg_tokens = tokenize_code(normalize_message(record.message));
    return out;
}

std::vector<PreprocessedRecord> load_preprocessed(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read preprocessed file: " + path);
    std::vector<PreprocessedRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw ParseError(path + ":" + std::to_string(line_no) + ": malformed JSON object");
        PreprocessedRecord r;
        try {
            r.id = j.at("id").get<std::string>();
            r.action_tokens = j.at("action_tokens").get<std::vector<std::string>>();
            r.msg_tokens = j.at("msg_tokens").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        records.push_back(std::move(r));
    }
    return records;
}

void save_preprocessed(const std::string& path, const std::vector<PreprocessedRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write preprocessed file: " + path);
    for (const PreprocessedRecord& r : records) {
        json j{{"id", r.id}, {"action_tokens", r.action_tokens}, {"msg_tokens", r.msg_tokens}};
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("failed writing preprocessed file: " + path);
}

}  // namespace race
