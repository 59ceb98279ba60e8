#pragma once

#include <string>
#include <vector>

namespace race {

enum class Action { Keep, Insert, Delete, Replace };

const char* action_name(Action a);

// One span of the token-level edit script.
//   keep:    old_span == new_span, non-empty
//   insert:  old empty, new non-empty
//   delete:  old non-empty, new empty
//   replace: both non-empty, old != new
struct ActionSpan {
    Action action;
    std::vector<std::string> old_span;
    std::vector<std::string> new_span;
};

struct EditScript {
    std::vector<ActionSpan> spans;
};

// Whitespace separates; [A-Za-z0-9_] and non-ASCII bytes form runs; every
// other character is its own token. Idempotent under join-with-space.
std::vector<std::string> tokenize_code(const std::string& text);

// Ratcliff-Obershelp: recursively take the longest contiguous common block
// (earliest old-position on ties, then earliest new-position), classify the
// gaps, and canonicalize (merge same-action neighbors, fold delete+insert
// pairs into replace).
EditScript compute_edit_script(const std::vector<std::string>& old_tokens,
                               const std::vector<std::string>& new_tokens);

// (old token sequence, new token sequence) recovered from the spans.
std::pair<std::vector<std::string>, std::vector<std::string>> apply_edit_script(const EditScript& script);

// Marker rendering:
//   <keep> t... <keep_end>
//   <insert> t... <insert_end>
//   <delete> t... <delete_end>
//   <replace_old> t... <replace_new> t... <replace_end>
// Throws ValidationError on an invariant-violating script.
std::vector<std::string> render_action_sequence(const EditScript& script);

// Inverse of render_action_sequence; throws ParseError on malformed input.
EditScript parse_action_sequence(const std::vector<std::string>& tokens);

void validate_script(const EditScript& script);  // throws ValidationError

// The nine marker tokens, in vocabulary order.
const std::vector<std::string>& action_marker_tokens();

}  // namespace race
