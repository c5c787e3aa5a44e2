// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "memwalker/errors.hpp"
#include "memwalker/util.hpp"

namespace memwalker {

struct Sampling {
    double temperature = 0.7;
    double top_p = 0.9;
    int max_new_tokens = 512;
};

/// Run-wide knobs. Everything an evaluation depends on lives here so a
/// serialized snapshot fully describes how an artifact was produced.
struct Config {
    // memory tree construction
    int segment_size = 1000;     // tokens per leaf segment
    int max_fanout = 8;          // children per parent node
    int summary_budget = 0;      // 0 = derived, see effective_summary_budget()
    bool balanced_grouping = false;

    // model interface
    int context_window = 4096;
    int generation_reserve = 512; // tokens held back for the completion
    Sampling sampling;
    std::string tokenizer_scheme = "whitespace/4";

    // navigation
    int working_memory_budget = 1000;
    int max_invalid_streak = 3;
    int max_steps = 0;           // 0 = derived, 3 x node count
    bool reasoning_enabled = true;
    bool faithful_prompts = true;
    std::string prompt_dir;      // optional template override directory

    // baselines
    int recurrence_segment_size = 2500;
    int recurrence_summary_budget = 500;
    bool retrieval_document_order = false;

    // evaluation harness
    int long_threshold = 8000;   // tokens; splits the length buckets
    int parallelism = 1;
    unsigned seed = 0;

    /// Summary budget sized so a triage prompt with max_fanout children is
    /// guaranteed to fit the context window: an equal share of the window
    /// minus per-child overhead (labels, query, instructions, amortized).
    int effective_summary_budget() const {
        if (summary_budget > 0) return summary_budget;
        return std::max(64, context_window / std::max(1, max_fanout) - 112);
    }

    int effective_max_steps(std::size_t node_count) const {
        if (max_steps > 0) return max_steps;
        return 3 * static_cast<int>(node_count);
    }
};

/// Rejects configurations that cannot assemble an in-budget prompt.
inline void validate_config(const Config& c) {
    if (c.segment_size < 1) throw InvalidInput("segment_size must be >= 1");
    if (c.max_fanout < 2) throw InvalidInput("max_fanout must be >= 2");
    if (c.max_invalid_streak < 1) throw InvalidInput("max_invalid_streak must be >= 1");
    if (c.generation_reserve < 0) throw InvalidInput("generation_reserve must be >= 0");
    if (c.sampling.max_new_tokens > c.generation_reserve)
        throw InvalidInput("max_new_tokens must not exceed generation_reserve");
    // 128 tokens covers the fixed instruction text of every shipped template
    if (c.segment_size + c.generation_reserve + 128 >= c.context_window)
        throw InvalidInput("segment_size + generation_reserve leaves no room in context_window");
}

inline void to_json(nlohmann::json& j, const Sampling& s) {
    j = {{"temperature", s.temperature}, {"top_p", s.top_p}, {"max_new_tokens", s.max_new_tokens}};
}

inline void from_json(const nlohmann::json& j, Sampling& s) {
    j.at("temperature").get_to(s.temperature);
    j.at("top_p").get_to(s.top_p);
    j.at("max_new_tokens").get_to(s.max_new_tokens);
}

inline void to_json(nlohmann::json& j, const Config& c) {
    j = {{"segment_size", c.segment_size},
         {"max_fanout", c.max_fanout},
         {"summary_budget", c.summary_budget},
         {"balanced_grouping", c.balanced_grouping},
         {"context_window", c.context_window},
         {"generation_reserve", c.generation_reserve},
         {"sampling", c.sampling},
         {"tokenizer_scheme", c.tokenizer_scheme},
         {"working_memory_budget", c.working_memory_budget},
         {"max_invalid_streak", c.max_invalid_streak},
         {"max_steps", c.max_steps},
         {"reasoning_enabled", c.reasoning_enabled},
         {"faithful_prompts", c.faithful_prompts},
         {"prompt_dir", c.prompt_dir},
         {"recurrence_segment_size", c.recurrence_segment_size},
         {"recurrence_summary_budget", c.recurrence_summary_budget},
         {"retrieval_document_order", c.retrieval_document_order},
         {"long_threshold", c.long_threshold},
         {"parallelism", c.parallelism},
         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, Config& c) {
    j.at("segment_size").get_to(c.segment_size);
    j.at("max_fanout").get_to(c.max_fanout);
    j.at("summary_budget").get_to(c.summary_budget);
    j.at("balanced_grouping").get_to(c.balanced_grouping);
    j.at("context_window").get_to(c.context_window);
    j.at("generation_reserve").get_to(c.generation_reserve);
    j.at("sampling").get_to(c.sampling);
    j.at("tokenizer_scheme").get_to(c.tokenizer_scheme);
    j.at("working_memory_budget").get_to(c.working_memory_budget);
    j.at("max_invalid_streak").get_to(c.max_invalid_streak);
    j.at("max_steps").get_to(c.max_steps);
    j.at("reasoning_enabled").get_to(c.reasoning_enabled);
    j.at("faithful_prompts").get_to(c.faithful_prompts);
    j.at("prompt_dir").get_to(c.prompt_dir);
    j.at("recurrence_segment_size").get_to(c.recurrence_segment_size);
    j.at("recurrence_summary_budget").get_to(c.recurrence_summary_budget);
    j.at("retrieval_document_order").get_to(c.retrieval_document_order);
    j.at("long_threshold").get_to(c.long_threshold);
    j.at("parallelism").get_to(c.parallelism);
    j.at("seed").get_to(c.seed);
}

namespace detail {

inline bool parse_bool(std::string_view key, std::string_view value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw InvalidInput("config key '" + std::string(key) + "': expected boolean, got '" +
                       std::string(value) + "'");
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
    std::istringstream in{std::string(value)};
    T out;
    std::string rest;
    in >> out;
    if (in.fail() || (in >> rest, !rest.empty()))
        throw InvalidInput("config key '" + std::string(key) + "': bad number '" +
                           std::string(value) + "'");
    return out;
}

} // namespace detail

/// Applies one `key = value` assignment. Keys mirror the Config field names;
/// sampling fields are flattened (temperature, top_p, max_new_tokens).
inline void apply_config_entry(Config& c, std::string_view key, std::string_view value) {
    using detail::parse_bool;
    using detail::parse_number;
    if (key == "segment_size") c.segment_size = parse_number<int>(key, value);
    else if (key == "max_fanout") c.max_fanout = parse_number<int>(key, value);
    else if (key == "summary_budget") c.summary_budget = parse_number<int>(key, value);
    else if (key == "balanced_grouping") c.balanced_grouping = parse_bool(key, value);
    else if (key == "context_window") c.context_window = parse_number<int>(key, value);
    else if (key == "generation_reserve") c.generation_reserve = parse_number<int>(key, value);
    else if (key == "temperature") c.sampling.temperature = parse_number<double>(key, value);
    else if (key == "top_p") c.sampling.top_p = parse_number<double>(key, value);
    else if (key == "max_new_tokens") c.sampling.max_new_tokens = parse_number<int>(key, value);
    else if (key == "tokenizer_scheme") c.tokenizer_scheme = std::string(value);
    else if (key == "working_memory_budget") c.working_memory_budget = parse_number<int>(key, value);
    else if (key == "max_invalid_streak") c.max_invalid_streak = parse_number<int>(key, value);
    else if (key == "max_steps") c.max_steps = parse_number<int>(key, value);
    else if (key == "reasoning_enabled") c.reasoning_enabled = parse_bool(key, value);
    else if (key == "faithful_prompts") c.faithful_prompts = parse_bool(key, value);
    else if (key == "prompt_dir") c.prompt_dir = std::string(value);
    else if (key == "recurrence_segment_size") c.recurrence_segment_size = parse_number<int>(key, value);
    else if (key == "recurrence_summary_budget") c.recurrence_summary_budget = parse_number<int>(key, value);
    else if (key == "retrieval_document_order") c.retrieval_document_order = parse_bool(key, value);
    else if (key == "long_threshold") c.long_threshold = parse_number<int>(key, value);
    else if (key == "parallelism") c.parallelism = parse_number<int>(key, value);
    else if (key == "seed") c.seed = parse_number<unsigned>(key, value);
    else throw InvalidInput("unknown config key '" + std::string(key) + "'");
}

/// Loads a flat `key = value` config file over the built-in defaults.
/// Blank lines and lines starting with '#' are ignored.
inline Config load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    Config c;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view s = trim(line);
        if (s.empty() || s.front() == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string_view::npos)
            throw InvalidInput(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
        std::string_view key = trim(s.substr(0, eq));
        std::string_view value = trim(s.substr(eq + 1));
        apply_config_entry(c, key, value);
    }
    return c;
}

/// Digest over every construction-relevant field. Two configs with the
/// same hash build identical trees from identical documents.
inline std::string config_tree_hash(const Config& c) {
    std::ostringstream key;
    key << c.segment_size << '|' << c.max_fanout << '|' << c.effective_summary_budget() << '|'
        << c.balanced_grouping << '|' << c.tokenizer_scheme;
    return fnv1a64_hex(key.str());
}

} // namespace memwalker
