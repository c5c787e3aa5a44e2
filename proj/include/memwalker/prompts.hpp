// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "memwalker/config.hpp"
#include "memwalker/errors.hpp"
#include "memwalker/types.hpp"
#include "memwalker/util.hpp"

namespace memwalker {

enum class PromptKind { construction_leaf, construction_nonleaf, triage, leaf };

enum class NodeKind { leaf, non_leaf };

/// Structured decode of a raw model response.
struct ParsedResponse {
    std::optional<std::string> reasoning;
    Action action;
    std::optional<std::string> answer; // present iff action is commit
};

namespace prompt_text {

// Default templates, byte-identical to the shipped assets under prompts/.
// The "Relpy" / "Your should" spellings are deliberate and preserved when
// faithful_prompts is on.

inline constexpr std::string_view kConstructionLeaf =
    "[TEXT_OF_SEGMENT]. Summarize the above text comprehensively into a fluent passage.";

inline constexpr std::string_view kConstructionNonLeaf =
    "[SUMMARIES]. Compress each summary into a much shorter summary.";

inline constexpr std::string_view kTriage =
    "The following passage(s) are the summaries of the different parts of a story.\n"
    "To answer the question: [QUERY]\n"
    "Which of the following summary is MOST LIKELY to contain information about the answer?\n"
    "First provide reasoning to compare the summaries before you make the decision.\n"
    "\n"
    "Summary 0: [CHILD_SUMM_NODE_0]\n"
    "Summary 1: [CHILD_SUMM_NODE_1]\n"
    "...\n"
    "Summary N: [CHILD_SUMM_NODE_N]\n"
    "\n"
    "Relpy with the passage number as your action.\n"
    "You MUST choose one summary number and you should reply with the following format:\n"
    "###################################\n"
    "Reasoning: ...\n"
    "Action: 0 / 1 / 2, ...\n"
    "###################################";

inline constexpr std::string_view kLeaf =
    "Read the text in triple quotes and answer a question:\n"
    "Story background information: [WORKING_MEMORY]\n"
    "Main text: [TEXT_OF_SEGMENT]\n"
    "\n"
    "[QUERY]\n"
    "[OPTIONS]\n"
    "If the answer CANNOT be inferred from the text above, reply with action -1.\n"
    "If the answer CAN be inferred from the text above, reply with action -2, and also provide "
    "your reasoning, and the final answer.\n"
    "You are ONLY allowed to reply with action -2 or -1.\n"
    "Your should reply with the following format:\n"
    "###################################\n"
    "Reasoning: ...\n"
    "Action: -2 or -1\n"
    "Answer: ...\n"
    "###################################";

inline constexpr std::string_view kEmptyWorkingMemory = "None.";

inline const char* asset_name(PromptKind kind) {
    switch (kind) {
        case PromptKind::construction_leaf: return "construction_leaf.txt";
        case PromptKind::construction_nonleaf: return "construction_nonleaf.txt";
        case PromptKind::triage: return "triage.txt";
        case PromptKind::leaf: return "leaf.txt";
    }
    return "";
}

} // namespace prompt_text

namespace detail {

/// Removes a whole line (with its newline) whose content equals `line`.
inline void drop_line(std::string& text, std::string_view line) {
    std::string needle = std::string(line) + "\n";
    std::size_t pos = text.find(needle);
    if (pos != std::string::npos && (pos == 0 || text[pos - 1] == '\n')) {
        text.erase(pos, needle.size());
        return;
    }
    // line may sit at the very end without a trailing newline
    if (text.size() >= line.size() &&
        std::string_view(text).substr(text.size() - line.size()) == line) {
        std::size_t start = text.size() - line.size();
        if (start > 0 && text[start - 1] == '\n') --start;
        text.erase(start);
    }
}

inline bool is_delimiter_line(std::string_view line) {
    auto t = trim(line);
    if (t.size() < 3) return false;
    for (char c : t)
        if (c != '#') return false;
    return true;
}

} // namespace detail

/// Renders the shipped (or overridden) prompt templates and decodes
/// responses. Pure and safe for concurrent use after construction.
class PromptLibrary {
public:
    PromptLibrary() { load_defaults(); }

    /// faithful: keep the templates' original spellings.
    /// override_dir: optional directory whose construction_leaf.txt,
    /// construction_nonleaf.txt, triage.txt, leaf.txt replace the built-ins.
    explicit PromptLibrary(bool faithful, const std::string& override_dir = {})
        : faithful_(faithful) {
        load_defaults();
        if (!override_dir.empty()) load_overrides(override_dir);
    }

    explicit PromptLibrary(const Config& config)
        : PromptLibrary(config.faithful_prompts, config.prompt_dir) {}

    /// The template text as shipped (placeholders unexpanded).
    const std::string& template_text(PromptKind kind) const {
        switch (kind) {
            case PromptKind::construction_leaf: return construction_leaf_;
            case PromptKind::construction_nonleaf: return construction_nonleaf_;
            case PromptKind::triage: return triage_;
            case PromptKind::leaf: return leaf_;
        }
        throw InvalidInput("bad prompt kind");
    }

    std::string render_construction_leaf(std::string_view segment_text) const {
        if (trim(segment_text).empty())
            throw InvalidInput("render_construction_leaf: empty segment text");
        std::string out = construction_leaf_;
        replace_all(out, "[TEXT_OF_SEGMENT]", segment_text);
        return out;
    }

    std::string render_construction_nonleaf(const std::vector<std::string>& summaries) const {
        if (summaries.empty())
            throw InvalidInput("render_construction_nonleaf: no summaries");
        std::string joined;
        for (std::size_t i = 0; i < summaries.size(); ++i) {
            if (i) joined += '\n';
            joined += summaries[i];
        }
        std::string out = construction_nonleaf_;
        replace_all(out, "[SUMMARIES]", joined);
        return out;
    }

    std::string render_triage(std::string_view query,
                              const std::vector<std::string>& child_summaries,
                              bool reasoning_enabled) const {
        if (child_summaries.size() < 2)
            throw InvalidInput("render_triage: need at least 2 child summaries");
        std::string out = expand_children(triage_, child_summaries);
        if (!reasoning_enabled) {
            detail::drop_line(
                out, "First provide reasoning to compare the summaries before you make the decision.");
            detail::drop_line(out, "Reasoning: ...");
        }
        replace_all(out, "[QUERY]", query);
        return out;
    }

    /// options == nullptr renders the free-form variant (no options block,
    /// bare "Answer: ..." format line). An empty working memory renders the
    /// fixed "None." placeholder so the prompt shape stays stable.
    std::string render_leaf(std::string_view query, const Options* options,
                            std::string_view segment_text, std::string_view working_memory,
                            bool reasoning_enabled) const {
        if (segment_text.empty())
            throw InvalidInput("render_leaf: empty segment text");
        std::string out = leaf_;
        if (options && !options->empty()) {
            std::string block;
            for (std::size_t i = 0; i < options->size(); ++i) {
                if (i) block += '\n';
                block += "(" + (*options)[i].label + ") " + (*options)[i].text;
            }
            replace_all(out, "[OPTIONS]", block);
            // multiple choice shows the example letter in the format line
            replace_all(out, "\nAnswer: ...", "\nAnswer: (A) ...");
        } else {
            detail::drop_line(out, "[OPTIONS]");
        }
        if (!reasoning_enabled) detail::drop_line(out, "Reasoning: ...");
        replace_all(out, "[QUERY]", query);
        replace_all(out, "[WORKING_MEMORY]",
                    trim(working_memory).empty() ? prompt_text::kEmptyWorkingMemory
                                                 : working_memory);
        replace_all(out, "[TEXT_OF_SEGMENT]", segment_text);
        return out;
    }

private:
    void load_defaults() {
        construction_leaf_ = std::string(prompt_text::kConstructionLeaf);
        construction_nonleaf_ = std::string(prompt_text::kConstructionNonLeaf);
        triage_ = std::string(prompt_text::kTriage);
        leaf_ = std::string(prompt_text::kLeaf);
        if (!faithful_) {
            replace_all(triage_, "Relpy with the passage number", "Reply with the passage number");
            replace_all(leaf_, "Your should reply", "You should reply");
        }
    }

    void load_overrides(const std::string& dir) {
        auto maybe_load = [&dir](PromptKind kind, std::string& slot) {
            auto path = std::filesystem::path(dir) / prompt_text::asset_name(kind);
            std::ifstream in(path, std::ios::binary);
            if (!in) return;
            std::ostringstream buf;
            buf << in.rdbuf();
            std::string text = buf.str();
            if (!text.empty() && text.back() == '\n') text.pop_back();
            slot = std::move(text);
        };
        maybe_load(PromptKind::construction_leaf, construction_leaf_);
        maybe_load(PromptKind::construction_nonleaf, construction_nonleaf_);
        maybe_load(PromptKind::triage, triage_);
        maybe_load(PromptKind::leaf, leaf_);
    }

    /// Replaces the template's exemplar child block (the lines from
    /// [CHILD_SUMM_NODE_0] through [CHILD_SUMM_NODE_N]) with one line per
    /// actual child, instantiated from the first exemplar line's pattern.
    static std::string expand_children(const std::string& tmpl,
                                       const std::vector<std::string>& summaries) {
        auto lines = split_lines(tmpl);
        std::size_t first = lines.size(), last = lines.size();
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (lines[i].find("[CHILD_SUMM_NODE_0]") != std::string_view::npos && first == lines.size())
                first = i;
            if (lines[i].find("[CHILD_SUMM_NODE_") != std::string_view::npos) last = i;
        }
        if (first == lines.size())
            throw InvalidInput("triage template lacks a [CHILD_SUMM_NODE_0] line");

        std::string_view pattern = lines[first];
        std::size_t ph = pattern.find("[CHILD_SUMM_NODE_0]");
        std::string label(pattern.substr(0, ph));
        std::string tail(pattern.substr(ph + std::string_view("[CHILD_SUMM_NODE_0]").size()));
        std::size_t digit = label.rfind('0');

        std::string out;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (i == first) {
                for (std::size_t k = 0; k < summaries.size(); ++k) {
                    std::string line = label;
                    if (digit != std::string::npos)
                        line = label.substr(0, digit) + std::to_string(k) +
                               label.substr(digit + 1);
                    out += line + summaries[k] + tail;
                    out += '\n';
                }
                continue;
            }
            if (i > first && i <= last) continue; // remaining exemplar lines
            out += std::string(lines[i]);
            out += '\n';
        }
        if (!out.empty() && (tmpl.empty() || tmpl.back() != '\n')) out.pop_back();
        return out;
    }

    bool faithful_ = true;
    std::string construction_leaf_;
    std::string construction_nonleaf_;
    std::string triage_;
    std::string leaf_;
};

namespace detail {

inline std::optional<long> integer_after(std::string_view s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        bool neg = s[i] == '-' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1]));
        if (neg || std::isdigit(static_cast<unsigned char>(s[i]))) {
            std::size_t j = i + (neg ? 1 : 0);
            long v = 0;
            while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) {
                v = v * 10 + (s[j] - '0');
                ++j;
            }
            return neg ? -v : v;
        }
    }
    return std::nullopt;
}

} // namespace detail

/// Decodes a raw completion into (reasoning, action, answer).
///
/// Anchors on the LAST "Action:" line so a restated format block never
/// shadows the real decision; tolerates '#' delimiter lines and
/// surrounding prose. Throws ParseError on anything that is not a legal
/// action for the node kind.
inline ParsedResponse parse_response(std::string_view raw, NodeKind kind, int num_children) {
    if (num_children < 0) throw InvalidInput("parse_response: negative child count");
    auto lines = split_lines(raw);

    std::size_t action_idx = lines.size();
    for (std::size_t i = 0; i < lines.size(); ++i)
        if (starts_with(trim(lines[i]), "Action:")) action_idx = i;
    if (action_idx == lines.size()) throw ParseError("no Action line in response");

    auto action_rest = trim(lines[action_idx]);
    action_rest.remove_prefix(std::string_view("Action:").size());
    auto value = detail::integer_after(action_rest);
    if (!value) throw ParseError("Action line has no parsable integer");

    ParsedResponse out;

    // reasoning: content after the last "Reasoning:" preceding the action line
    std::size_t reasoning_idx = lines.size();
    for (std::size_t i = 0; i < action_idx; ++i)
        if (starts_with(trim(lines[i]), "Reasoning:")) reasoning_idx = i;
    if (reasoning_idx != lines.size()) {
        std::string text;
        auto first = trim(lines[reasoning_idx]);
        first.remove_prefix(std::string_view("Reasoning:").size());
        text = std::string(trim(first));
        for (std::size_t i = reasoning_idx + 1; i < action_idx; ++i) {
            if (detail::is_delimiter_line(lines[i])) continue;
            if (!text.empty()) text += '\n';
            text += std::string(lines[i]);
        }
        auto trimmed = trim(text);
        if (!trimmed.empty()) out.reasoning = std::string(trimmed);
    }

    if (kind == NodeKind::non_leaf) {
        if (*value >= 0 && *value < num_children) {
            out.action = Action::descend(static_cast<int>(*value));
            return out;
        }
        if (*value == -1) {
            out.action = Action::revert();
            return out;
        }
        throw ParseError("action " + std::to_string(*value) + " out of range for a node with " +
                         std::to_string(num_children) + " children");
    }

    // leaf
    if (*value == -1) {
        out.action = Action::revert();
        return out;
    }
    if (*value != -2)
        throw ParseError("action " + std::to_string(*value) + " is not legal at a leaf");

    // commit: capture the last "Answer:" line plus following lines until a
    // delimiter or end of text
    std::size_t answer_idx = lines.size();
    for (std::size_t i = 0; i < lines.size(); ++i)
        if (starts_with(trim(lines[i]), "Answer:")) answer_idx = i;
    if (answer_idx == lines.size()) throw ParseError("commit (action -2) without an Answer line");

    auto rest = trim(lines[answer_idx]);
    rest.remove_prefix(std::string_view("Answer:").size());
    std::string answer{trim(rest)};
    for (std::size_t i = answer_idx + 1; i < lines.size(); ++i) {
        if (detail::is_delimiter_line(lines[i])) break;
        answer += '\n';
        answer += std::string(lines[i]);
    }
    answer = std::string(trim(answer));
    if (answer.empty()) throw ParseError("commit (action -2) with an empty Answer");

    out.action = Action::commit(answer);
    out.answer = answer;
    return out;
}

} // namespace memwalker
