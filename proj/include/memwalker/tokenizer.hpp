// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "memwalker/errors.hpp"
#include "memwalker/types.hpp"
#include "memwalker/util.hpp"

namespace memwalker {

/// Half-open character range of one token within the tokenized text.
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Counting scheme interface. Counts must be deterministic per scheme and
/// subadditive under concatenation (at most one token of boundary slack).
class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual std::string scheme() const = 0;

    /// Token spans in text order. Whitespace belongs to no token.
    virtual std::vector<TokenSpan> tokenize(std::string_view text) const = 0;

    int count(std::string_view text) const {
        return static_cast<int>(tokenize(text).size());
    }
};

/// Default scheme "whitespace/4": whitespace-delimited words, where a word
/// longer than four characters counts as ceil(len/4) tokens (one per
/// four-character chunk). Unbroken runs with no whitespace therefore fall
/// back to four characters per token.
class WhitespaceTokenizer final : public Tokenizer {
public:
    static constexpr std::size_t kCharsPerToken = 4;

    std::string scheme() const override { return "whitespace/4"; }

    std::vector<TokenSpan> tokenize(std::string_view text) const override {
        std::vector<TokenSpan> spans;
        spans.reserve(text.size() / 5 + 1);
        std::size_t i = 0;
        while (i < text.size()) {
            if (is_space(text[i])) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < text.size() && !is_space(text[j])) ++j;
            for (std::size_t p = i; p < j; p += kCharsPerToken)
                spans.push_back({p, std::min(p + kCharsPerToken, j)});
            i = j;
        }
        return spans;
    }
};

inline std::unique_ptr<Tokenizer> make_tokenizer(const std::string& scheme) {
    if (scheme == "whitespace/4") return std::make_unique<WhitespaceTokenizer>();
    throw InvalidInput("unknown tokenizer scheme: " + scheme);
}

inline int count_tokens(std::string_view text, const Tokenizer& tok) {
    return tok.count(text);
}

enum class TruncateSide { keep_left, keep_right };

/// Trims text to at most `budget` tokens. keep_left retains the earliest
/// tokens, keep_right the latest. Text already within budget is returned
/// unchanged; idempotent for a fixed (budget, side).
inline std::string truncate(std::string_view text, int budget, TruncateSide side,
                            const Tokenizer& tok) {
    if (budget < 0) throw InvalidInput("truncate: budget must be >= 0");
    auto spans = tok.tokenize(text);
    if (static_cast<int>(spans.size()) <= budget) return std::string(text);
    if (budget == 0) return std::string();
    auto b = static_cast<std::size_t>(budget);
    if (side == TruncateSide::keep_left)
        return std::string(text.substr(0, spans[b - 1].end));
    return std::string(text.substr(spans[spans.size() - b].begin));
}

/// Greedy left-to-right split into token-budgeted segments. Cut points are
/// snapped backward to the nearest whitespace so words stay intact (a word
/// longer than the whole budget is cut mid-word as a last resort). The
/// segments' char_spans tile the input exactly.
inline std::vector<Segment> split_into_segments(std::string_view text, int segment_size,
                                                const Tokenizer& tok) {
    if (text.empty()) throw InvalidInput("split_into_segments: empty text");
    if (segment_size < 1) throw InvalidInput("split_into_segments: segment_size must be >= 1");

    auto spans = tok.tokenize(text);
    std::vector<Segment> segments;
    if (spans.empty()) {
        // all-whitespace input: a single zero-token segment covering it
        segments.push_back({0, std::string(text), 0, 0, text.size()});
        return segments;
    }

    const auto size = static_cast<std::size_t>(segment_size);
    std::size_t start_tok = 0;
    std::size_t start_char = 0;
    int index = 0;
    while (start_tok < spans.size()) {
        std::size_t end_tok = std::min(start_tok + size, spans.size());
        std::size_t cut_char = text.size();
        if (end_tok < spans.size()) {
            // snap back to the start of the word straddling the cut
            std::size_t w = end_tok;
            while (w > start_tok && spans[w].begin == spans[w - 1].end) --w;
            if (w > start_tok) end_tok = w;
            cut_char = spans[end_tok].begin;
        }
        Segment seg;
        seg.index = index++;
        seg.text = std::string(text.substr(start_char, cut_char - start_char));
        seg.token_count = static_cast<int>(end_tok - start_tok);
        seg.char_begin = start_char;
        seg.char_end = cut_char;
        segments.push_back(std::move(seg));
        start_tok = end_tok;
        start_char = cut_char;
    }
    return segments;
}

} // namespace memwalker
