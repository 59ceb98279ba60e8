#include "race/diffscript.hpp"

#include <algorithm>
#include <unordered_map>

#include "race/errors.hpp"

namespace race {

const char* action_name(Action a) {
    switch (a) {
        case Action::Keep: return "keep";
        case Action::Insert: return "insert";
        case Action::Delete: return "delete";
        case Action::Replace: return "replace";
    }
    return "?";
}

namespace {

bool is_word_byte(unsigned char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c >= 0x80;
}

bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
}

struct Match {
    int a = 0, b = 0, size = 0;
};

// Longest contiguous common block of a[alo,ahi) and b[blo,bhi); earliest a
// start wins ties, then earliest b start. Same recurrence difflib uses.
Match longest_match(const std::vector<std::string>& a, const std::vector<std::string>&,
                    const std::unordered_map<std::string, std::vector<int>>& b_index, int alo, int ahi, int blo,
                    int bhi) {
    Match best{alo, blo, 0};
    std::unordered_map<int, int> run;  // j -> length of common run ending at (i, j)
    for (int i = alo; i < ahi; ++i) {
        std::unordered_map<int, int> next;
        auto it = b_index.find(a[i]);
        if (it != b_index.end()) {
            for (int j : it->second) {
                if (j < blo) continue;
                if (j >= bhi) break;
                auto prev = run.find(j - 1);
                const int k = (prev == run.end() ? 0 : prev->second) + 1;
                next[j] = k;
                if (k > best.size) {
                    best = Match{i - k + 1, j - k + 1, k};
                }
            }
        }
        run.swap(next);
    }
    return best;
}

void matching_blocks_rec(const std::vector<std::string>& a, const std::vector<std::string>& b,
                         const std::unordered_map<std::string, std::vector<int>>& b_index, int alo, int ahi, int blo,
                         int bhi, std::vector<Match>& out) {
    Match m = longest_match(a, b, b_index, alo, ahi, blo, bhi);
    if (m.size == 0) return;
    matching_blocks_rec(a, b, b_index, alo, m.a, blo, m.b, out);
    out.push_back(m);
    matching_blocks_rec(a, b, b_index, m.a + m.size, ahi, m.b + m.size, bhi, out);
}

std::vector<std::string> slice(const std::vector<std::string>& v, int lo, int hi) {
    return {v.begin() + lo, v.begin() + hi};
}

void push_span(EditScript& s, Action act, std::vector<std::string> olds, std::vector<std::string> news) {
    if (!s.spans.empty()) {
        ActionSpan& last = s.spans.back();
        // delete followed by insert (either order) folds into replace
        const bool fold_di = (last.action == Action::Delete && act == Action::Insert) ||
                             (last.action == Action::Insert && act == Action::Delete);
        if (last.action == act) {
            last.old_span.insert(last.old_span.end(), olds.begin(), olds.end());
            last.new_span.insert(last.new_span.end(), news.begin(), news.end());
            return;
        }
        if (fold_di || (last.action == Action::Replace && (act == Action::Delete || act == Action::Insert))) {
            last.action = Action::Replace;
            last.old_span.insert(last.old_span.end(), olds.begin(), olds.end());
            last.new_span.insert(last.new_span.end(), news.begin(), news.end());
            return;
        }
    }
    s.spans.push_back(ActionSpan{act, std::move(olds), std::move(news)});
}

}  // namespace

std::vector<std::string> tokenize_code(const std::string& text) {
    std::vector<std::string> tokens;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space_byte(c)) {
            ++i;
            continue;
        }
        if (is_word_byte(c)) {
            size_t j = i + 1;
            while (j < n && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
            tokens.emplace_back(text, i, j - i);
            i = j;
        } else {
            tokens.emplace_back(1, text[i]);
            ++i;
        }
    }
    return tokens;
}

EditScript compute_edit_script(const std::vector<std::string>& old_tokens,
                               const std::vector<std::string>& new_tokens) {
    std::unordered_map<std::string, std::vector<int>> b_index;
    for (int j = 0; j < static_cast<int>(new_tokens.size()); ++j) b_index[new_tokens[j]].push_back(j);

    std::vector<Match> blocks;
    matching_blocks_rec(old_tokens, new_tokens, b_index, 0, static_cast<int>(old_tokens.size()), 0,
                        static_cast<int>(new_tokens.size()), blocks);

    EditScript script;
    int ai = 0, bj = 0;
    for (const Match& m : blocks) {
        if (ai < m.a && bj < m.b)
            push_span(script, Action::Replace, slice(old_tokens, ai, m.a), slice(new_tokens, bj, m.b));
        else if (ai < m.a)
            push_span(script, Action::Delete, slice(old_tokens, ai, m.a), {});
        else if (bj < m.b)
            push_span(script, Action::Insert, {}, slice(new_tokens, bj, m.b));
        push_span(script, Action::Keep, slice(old_tokens, m.a, m.a + m.size), slice(new_tokens, m.b, m.b + m.size));
        ai = m.a + m.size;
        bj = m.b + m.size;
    }
    const int an = static_cast<int>(old_tokens.size());
    const int bn = static_cast<int>(new_tokens.size());
    if (ai < an && bj < bn)
        push_span(script, Action::Replace, slice(old_tokens, ai, an), slice(new_tokens, bj, bn));
    else if (ai < an)
        push_span(script, Action::Delete, slice(old_tokens, ai, an), {});
    else if (bj < bn)
        push_span(script, Action::Insert, {}, slice(new_tokens, bj, bn));
    return script;
}

std::pair<std::vector<std::string>, std::vector<std::string>> apply_edit_script(const EditScript& script) {
    std::vector<std::string> olds, news;
    for (const ActionSpan& sp : script.spans) {
        olds.insert(olds.end(), sp.old_span.begin(), sp.old_span.end());
        news.insert(news.end(), sp.new_span.begin(), sp.new_span.end());
    }
    return {olds, news};
}

void validate_script(const EditScript& script) {
    for (size_t i = 0; i < script.spans.size(); ++i) {
        const ActionSpan& sp = script.spans[i];
        switch (sp.action) {
            case Action::Keep:
                if (sp.old_span.empty() || sp.old_span != sp.new_span)
                    throw ValidationError("edit script: keep span must have equal non-empty sides");
                break;
            case Action::Insert:
                if (!sp.old_span.empty() || sp.new_span.empty())
                    throw ValidationError("edit script: insert span must be (empty, non-empty)");
                break;
            case Action::Delete:
                if (sp.old_span.empty() || !sp.new_span.empty())
                    throw ValidationError("edit script: delete span must be (non-empty, empty)");
                break;
            case Action::Replace:
                if (sp.old_span.empty() || sp.new_span.empty() || sp.old_span == sp.new_span)
                    throw ValidationError("edit script: replace span must have differing non-empty sides");
                break;
        }
        if (i > 0 && script.spans[i - 1].action == sp.action)
            throw ValidationError("edit script: adjacent spans share an action");
        if (i > 0 && script.spans[i - 1].action == Action::Delete && sp.action == Action::Insert)
            throw ValidationError("edit script: adjacent delete+insert must be a replace");
    }
}

const std::vector<std::string>& action_marker_tokens() {
    static const std::vector<std::string> markers = {"<keep>",        "<keep_end>",   "<insert>",
                                                     "<insert_end>",  "<delete>",     "<delete_end>",
                                                     "<replace_old>", "<replace_new>", "<replace_end>"};
    return markers;
}

std::vector<std::string> render_action_sequence(const EditScript& script) {
    validate_script(script);
    std::vector<std::string> out;
    for (const ActionSpan& sp : script.spans) {
        switch (sp.action) {
            case Action::Keep:
                out.push_back("<keep>");
                out.insert(out.end(), sp.old_span.begin(), sp.old_span.end());
                out.push_back("<keep_end>");
                break;
            case Action::Insert:
                out.push_back("<insert>");
                out.insert(out.end(), sp.new_span.begin(), sp.new_span.end());
                out.push_back("<insert_end>");
                break;
            case Action::Delete:
                out.push_back("<delete>");
                out.insert(out.end(), sp.old_span.begin(), sp.old_span.end());
                out.push_back("<delete_end>");
                break;
            case Action::Replace:
                out.push_back("<replace_old>");
                out.insert(out.end(), sp.old_span.begin(), sp.old_span.end());
                out.push_back("<replace_new>");
                out.insert(out.end(), sp.new_span.begin(), sp.new_span.end());
                out.push_back("<replace_end>");
                break;
        }
    }
    return out;
}

EditScript parse_action_sequence(const std::vector<std::string>& tokens) {
    EditScript script;
    size_t i = 0;
    auto collect_until = [&](const std::string& stop) {
        std::vector<std::string> span;
        while (i < tokens.size() && tokens[i] != stop) span.push_back(tokens[i++]);
        if (i == tokens.size()) throw ParseError("action sequence: missing " + stop);
        ++i;  // consume stop marker
        return span;
    };
    while (i < tokens.size()) {
        const std::string& t = tokens[i++];
        if (t == "<keep>") {
            auto span = collect_until("<keep_end>");
            script.spans.push_back(ActionSpan{Action::Keep, span, span});
        } else if (t == "<insert>") {
            auto span = collect_until("<insert_end>");
            script.spans.push_back(ActionSpan{Action::Insert, {}, span});
        } else if (t == "<delete>") {
            auto span = collect_until("<delete_end>");
            script.spans.push_back(ActionSpan{Action::Delete, span, {}});
        } else if (t == "<replace_old>") {
            auto olds = collect_until("<replace_new>");
            auto news = collect_until("<replace_end>");
            script.spans.push_back(ActionSpan{Action::Replace, olds, news});
        } else {
            throw ParseError("action sequence: unexpected token '" + t + "'");
        }
    }
    validate_script(script);
    return script;
}

}  // namespace race
