// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

namespace memwalker {

/// One contiguous token-budgeted slice of the source document.
struct Segment {
    int index = 0;             // 0-based position in document order
    std::string text;
    int token_count = 0;
    std::size_t char_begin = 0; // half-open offsets into the source document
    std::size_t char_end = 0;

    friend bool operator==(const Segment&, const Segment&) = default;
};

/// A labeled multiple-choice option, e.g. {"A", "He realized ..."}.
struct AnswerOption {
    std::string label;
    std::string text;

    friend bool operator==(const AnswerOption&, const AnswerOption&) = default;
};

using Options = std::vector<AnswerOption>;

/// Builds options from bare texts, labeling them "A", "B", ...
inline Options label_options(const std::vector<std::string>& texts) {
    Options out;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i)
        out.push_back({std::string(1, static_cast<char>('A' + i)), texts[i]});
    return out;
}

/// A navigation decision. Numeric wire encoding: the child ordinal for
/// descend, -1 for revert, -2 for commit.
struct Action {
    enum class Kind { descend, revert, commit };

    Kind kind = Kind::revert;
    int child = -1;        // descend only: 0-based ordinal among displayed children
    std::string answer;    // commit only

    static Action descend(int child_ordinal) {
        return {Kind::descend, child_ordinal, {}};
    }
    static Action revert() { return {Kind::revert, -1, {}}; }
    static Action commit(std::string answer_text) {
        return {Kind::commit, -1, std::move(answer_text)};
    }

    int code() const {
        switch (kind) {
            case Kind::descend: return child;
            case Kind::revert: return -1;
            case Kind::commit: return -2;
        }
        return -1;
    }

    friend bool operator==(const Action&, const Action&) = default;
};

} // namespace memwalker
