// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "memwalker/backend.hpp"
#include "memwalker/config.hpp"
#include "memwalker/errors.hpp"
#include "memwalker/prompts.hpp"
#include "memwalker/tokenizer.hpp"
#include "memwalker/tree.hpp"
#include "memwalker/types.hpp"

namespace memwalker {

/// One carried summary: the node it came from and its text.
struct WorkingMemoryEntry {
    std::string node_id;
    std::string text;
    int tokens = 0;

    friend bool operator==(const WorkingMemoryEntry&, const WorkingMemoryEntry&) = default;
};

using WorkingMemory = std::vector<WorkingMemoryEntry>;

/// Appends an entry, then evicts oldest entries while the token total
/// exceeds the budget.
inline WorkingMemory update_working_memory(WorkingMemory memory, WorkingMemoryEntry entry,
                                           int budget, const Tokenizer& tok) {
    if (budget < 0) throw InvalidInput("update_working_memory: budget must be >= 0");
    if (entry.tokens == 0) entry.tokens = tok.count(entry.text);
    memory.push_back(std::move(entry));
    long long total = 0;
    for (const auto& e : memory) total += e.tokens;
    std::size_t drop = 0;
    while (total > budget && drop < memory.size()) {
        total -= memory[drop].tokens;
        ++drop;
    }
    memory.erase(memory.begin(), memory.begin() + static_cast<std::ptrdiff_t>(drop));
    return memory;
}

/// Reverting removes the contribution of the abandoned node (the most
/// recent entry it added, if still present).
inline void remove_working_memory_entry(WorkingMemory& memory, const std::string& node_id) {
    for (auto it = memory.rbegin(); it != memory.rend(); ++it) {
        if (it->node_id == node_id) {
            memory.erase(std::next(it).base());
            return;
        }
    }
}

inline std::string render_working_memory(const WorkingMemory& memory) {
    std::string out;
    for (std::size_t i = 0; i < memory.size(); ++i) {
        if (i) out += '\n';
        out += memory[i].text;
    }
    return out;
}

/// One prompted exchange during navigation. Steps are append-only and
/// totally ordered; dynamic_tokens counts only the content that varies per
/// step (summaries, segment text, working memory), not instruction
/// boilerplate.
struct TrajectoryStep {
    int step = 0; // 1-based
    std::string node_id;
    std::string node_kind; // "triage" | "leaf"
    std::string prompt;
    int prompt_tokens = 0;
    int dynamic_tokens = 0;
    std::string response;
    bool valid = false;
    int action_code = 0;  // numeric encoding; meaningful when valid
    std::string answer;   // commit only
    std::string error;    // parse-error / invalid-action marker when !valid
    std::string timestamp;
};

inline void to_json(nlohmann::json& j, const TrajectoryStep& s) {
    j = {{"step", s.step},
         {"node_id", s.node_id},
         {"node_kind", s.node_kind},
         {"prompt", s.prompt},
         {"prompt_tokens", s.prompt_tokens},
         {"dynamic_tokens", s.dynamic_tokens},
         {"response", s.response},
         {"valid", s.valid},
         {"action_code", s.action_code},
         {"answer", s.answer},
         {"error", s.error},
         {"timestamp", s.timestamp}};
}

inline void from_json(const nlohmann::json& j, TrajectoryStep& s) {
    j.at("step").get_to(s.step);
    j.at("node_id").get_to(s.node_id);
    j.at("node_kind").get_to(s.node_kind);
    j.at("prompt").get_to(s.prompt);
    j.at("prompt_tokens").get_to(s.prompt_tokens);
    j.at("dynamic_tokens").get_to(s.dynamic_tokens);
    j.at("response").get_to(s.response);
    j.at("valid").get_to(s.valid);
    j.at("action_code").get_to(s.action_code);
    j.at("answer").get_to(s.answer);
    j.at("error").get_to(s.error);
    j.at("timestamp").get_to(s.timestamp);
}

/// Streams steps to a line-delimited JSON file as they happen, so an
/// aborted run still leaves its partial trajectory behind.
class TrajectoryWriter {
public:
    explicit TrajectoryWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot write trajectory file: " + path);
    }

    void write(const TrajectoryStep& step) {
        out_ << nlohmann::json(step).dump() << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

inline std::vector<TrajectoryStep> load_trajectory(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open trajectory file: " + path);
    std::vector<TrajectoryStep> steps;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            steps.push_back(nlohmann::json::parse(line).get<TrajectoryStep>());
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return steps;
}

struct TraceMetrics {
    bool strayed = false;               // any executed revert
    std::optional<bool> recovered;      // strayed and graded correct; set by the harness
    long long tokens_processed = 0;     // dynamic tokens, re-reads counted again
    long long tokens_processed_unique = 0; // each node's presentation counted once
    double fraction_of_original = 0.0;
    int steps = 0;
};

/// Folds the metrics out of a stored trajectory. The same fold is the
/// oracle for values reported during a live run.
inline TraceMetrics compute_trace_metrics(const std::vector<TrajectoryStep>& trajectory,
                                          int original_tokens) {
    TraceMetrics m;
    std::unordered_set<std::string> seen;
    for (const auto& s : trajectory) {
        m.tokens_processed += s.dynamic_tokens;
        if (seen.insert(s.node_id).second) m.tokens_processed_unique += s.dynamic_tokens;
        if (s.valid && s.action_code == -1) m.strayed = true;
    }
    m.steps = static_cast<int>(trajectory.size());
    m.fraction_of_original =
        original_tokens > 0 ? static_cast<double>(m.tokens_processed) / original_tokens : 0.0;
    return m;
}

struct NavigationResult {
    enum class Outcome { answered, no_answer_invalid_streak, no_answer_step_limit };

    Outcome outcome = Outcome::no_answer_step_limit;
    std::string answer; // set iff answered
    std::vector<TrajectoryStep> trajectory;
    TraceMetrics metrics;

    bool answered() const { return outcome == Outcome::answered; }

    static const char* outcome_name(Outcome o) {
        switch (o) {
            case Outcome::answered: return "answered";
            case Outcome::no_answer_invalid_streak: return "no_answer_invalid_streak";
            case Outcome::no_answer_step_limit: return "no_answer_step_limit";
        }
        return "?";
    }
};

/// Stage 2: walks one query through the tree. At non-leaf nodes a triage
/// prompt chooses among the children (a single child is entered without a
/// prompt); at leaves the segment plus working memory either yields a
/// committed answer or a revert. Unparsable or illegal outputs re-issue the
/// same prompt; max_invalid_streak consecutive failures at one decision
/// point end the run with no answer. One navigation is strictly sequential;
/// distinct queries over the same tree may run concurrently with separate
/// Navigators.
class Navigator {
public:
    Navigator(const MemoryTree& tree, CompletionClient& client, const PromptLibrary& prompts,
              const Config& config, const Tokenizer& tokenizer)
        : tree_(tree), client_(client), prompts_(prompts), config_(config), tokenizer_(tokenizer) {
        for (const auto& n : tree.nodes())
            for (const auto& c : n.children) parent_[c] = n.id;
    }

    void set_trajectory_writer(TrajectoryWriter* writer) { writer_ = writer; }
    void set_clock(Clock clock) { clock_ = std::move(clock); }

    NavigationResult navigate(const std::string& query, const Options* options = nullptr) {
        if (trim(query).empty()) throw InvalidInput("navigate: empty query");
        if (tree_.nodes().empty() || !tree_.contains(tree_.root_id))
            throw InvalidInput("navigate: tree has no usable root");

        const int max_steps = config_.effective_max_steps(tree_.nodes().size());
        const int original_tokens = tree_.total_document_tokens();

        std::string current = tree_.root_id;
        std::vector<std::string> path{current};
        WorkingMemory memory;
        int invalid_streak = 0;
        std::vector<TrajectoryStep> trajectory;

        auto finish = [&](NavigationResult::Outcome outcome, std::string answer) {
            NavigationResult result;
            result.outcome = outcome;
            result.answer = std::move(answer);
            result.metrics = compute_trace_metrics(trajectory, original_tokens);
            result.trajectory = std::move(trajectory);
            return result;
        };

        while (true) {
            if (static_cast<int>(trajectory.size()) >= max_steps)
                return finish(NavigationResult::Outcome::no_answer_step_limit, {});

            const TreeNode& node = tree_.at(current);

            // a lone child offers no choice; enter it without spending a prompt
            if (!node.is_leaf() && node.children.size() == 1) {
                descend(node.children.front(), path, memory);
                current = node.children.front();
                continue;
            }

            TrajectoryStep step;
            step.step = static_cast<int>(trajectory.size()) + 1;
            step.node_id = current;
            step.node_kind = node.is_leaf() ? "leaf" : "triage";

            int num_children = static_cast<int>(node.children.size());
            if (node.is_leaf())
                build_leaf_prompt(node, query, options, memory, step);
            else
                build_triage_prompt(node, query, step);

            step.response = client_.complete(step.prompt, step.node_kind);
            step.timestamp = format_timestamp(clock_());

            std::string failure;
            std::optional<ParsedResponse> parsed;
            try {
                parsed = parse_response(step.response,
                                        node.is_leaf() ? NodeKind::leaf : NodeKind::non_leaf,
                                        num_children);
            } catch (const ParseError& e) {
                failure = e.what();
            }
            if (parsed && parsed->action.kind == Action::Kind::revert && current == tree_.root_id)
                failure = "revert at the root is not a legal action";

            if (!failure.empty()) {
                step.valid = false;
                step.error = failure;
                record(trajectory, step);
                if (++invalid_streak >= config_.max_invalid_streak)
                    return finish(NavigationResult::Outcome::no_answer_invalid_streak, {});
                continue; // regenerate: same node, same prompt
            }

            invalid_streak = 0;
            step.valid = true;
            step.action_code = parsed->action.code();

            switch (parsed->action.kind) {
                case Action::Kind::descend: {
                    const std::string& child = node.children[static_cast<std::size_t>(
                        parsed->action.child)];
                    record(trajectory, step);
                    descend(child, path, memory);
                    current = child;
                    break;
                }
                case Action::Kind::revert: {
                    record(trajectory, step);
                    remove_working_memory_entry(memory, current);
                    path.pop_back();
                    current = path.back();
                    break;
                }
                case Action::Kind::commit: {
                    step.answer = parsed->action.answer;
                    record(trajectory, step);
                    return finish(NavigationResult::Outcome::answered, parsed->action.answer);
                }
            }
        }
    }

private:
    void descend(const std::string& child, std::vector<std::string>& path, WorkingMemory& memory) {
        path.push_back(child);
        const TreeNode& node = tree_.at(child);
        memory = update_working_memory(std::move(memory),
                                       {child, node.summary, node.summary_token_count},
                                       config_.working_memory_budget, tokenizer_);
    }

    void record(std::vector<TrajectoryStep>& trajectory, const TrajectoryStep& step) {
        trajectory.push_back(step);
        if (writer_) writer_->write(step);
    }

    int prompt_limit() const { return config_.context_window - config_.generation_reserve; }

    void check_budget(const std::string& prompt, TrajectoryStep& step) const {
        step.prompt_tokens = tokenizer_.count(prompt);
        if (step.prompt_tokens > prompt_limit())
            throw BudgetError("internal: assembled prompt of " +
                              std::to_string(step.prompt_tokens) +
                              " tokens exceeds the window at node " + step.node_id);
    }

    /// Child summaries are the dynamic content. They are sized to fit by
    /// construction; if an oversized tree shows up anyway, each child is
    /// truncated to an equal share of the available budget.
    void build_triage_prompt(const TreeNode& node, const std::string& query,
                             TrajectoryStep& step) const {
        std::vector<std::string> summaries;
        summaries.reserve(node.children.size());
        for (const auto& id : node.children) summaries.push_back(tree_.at(id).summary);

        std::string prompt = prompts_.render_triage(query, summaries, config_.reasoning_enabled);
        if (tokenizer_.count(prompt) > prompt_limit()) {
            int n = static_cast<int>(summaries.size());
            std::vector<std::string> placeholders(summaries.size(), "x");
            int fixed =
                tokenizer_.count(prompts_.render_triage(query, placeholders,
                                                        config_.reasoning_enabled)) - n;
            int share = (prompt_limit() - fixed) / n;
            if (share < 1)
                throw BudgetError("context window cannot fit a triage prompt at node " + node.id);
            for (auto& s : summaries) s = truncate(s, share, TruncateSide::keep_left, tokenizer_);
            prompt = prompts_.render_triage(query, summaries, config_.reasoning_enabled);
        }
        int dyn = 0;
        for (const auto& s : summaries) dyn += tokenizer_.count(s);
        step.dynamic_tokens = dyn;
        step.prompt = std::move(prompt);
        check_budget(step.prompt, step);
    }

    /// Dynamic content is the working memory plus the segment. When over
    /// budget the memory is cut first (keeping the newest tokens), then the
    /// segment (keeping the earliest).
    void build_leaf_prompt(const TreeNode& node, const std::string& query, const Options* options,
                           const WorkingMemory& memory, TrajectoryStep& step) const {
        const Segment& segment = tree_.segment_of(node);
        std::string wm_text = render_working_memory(memory);
        std::string seg_text = segment.text;

        const int none_cost = tokenizer_.count(prompt_text::kEmptyWorkingMemory);
        int fixed = tokenizer_.count(
                        prompts_.render_leaf(query, options, "x", "x", config_.reasoning_enabled)) -
                    2;
        int avail = prompt_limit() - fixed;

        int wm_cost = wm_text.empty() ? none_cost : tokenizer_.count(wm_text);
        int seg_cost = tokenizer_.count(seg_text);
        if (wm_cost + seg_cost > avail) {
            if (!wm_text.empty()) {
                int wm_allow = std::max(0, avail - seg_cost);
                wm_text = truncate(wm_text, wm_allow, TruncateSide::keep_right, tokenizer_);
                wm_cost = wm_text.empty() ? none_cost : tokenizer_.count(wm_text);
            }
            if (wm_cost + seg_cost > avail) {
                int seg_allow = avail - wm_cost;
                if (seg_allow < 1)
                    throw BudgetError("context window cannot fit a leaf prompt at node " +
                                      node.id);
                seg_text = truncate(seg_text, seg_allow, TruncateSide::keep_left, tokenizer_);
                seg_cost = tokenizer_.count(seg_text);
            }
        }

        step.dynamic_tokens = seg_cost + (wm_text.empty() ? 0 : tokenizer_.count(wm_text));
        step.prompt = prompts_.render_leaf(query, options, seg_text, wm_text,
                                           config_.reasoning_enabled);
        check_budget(step.prompt, step);
    }

    const MemoryTree& tree_;
    CompletionClient& client_;
    const PromptLibrary& prompts_;
    const Config& config_;
    const Tokenizer& tokenizer_;
    std::unordered_map<std::string, std::string> parent_;
    TrajectoryWriter* writer_ = nullptr;
    Clock clock_ = system_clock();
};

/// Table-style transcript of a stored trajectory: every prompt and raw
/// response in order, followed by a short outcome footer. Timestamps are
/// omitted so identical runs render identically.
inline std::string render_trace(const std::vector<TrajectoryStep>& steps) {
    std::ostringstream out;
    const char* rule = "===================================================================";
    out << rule << "\nNavigation Trajectory\n" << rule << "\n";
    for (const auto& s : steps) {
        out << "\n--- Step " << s.step << " | " << s.node_id << " | " << s.node_kind << " ---\n\n";
        out << s.prompt << "\n";
        if (s.valid)
            out << "\n--- Response ---\n\n";
        else
            out << "\n--- Response (invalid: " << s.error << ") ---\n\n";
        out << s.response << "\n";
    }
    out << "\n" << rule << "\n";
    long long dyn = 0;
    bool strayed = false;
    for (const auto& s : steps) {
        dyn += s.dynamic_tokens;
        if (s.valid && s.action_code == -1) strayed = true;
    }
    if (!steps.empty() && steps.back().valid && steps.back().action_code == -2)
        out << "Outcome: answered \"" << steps.back().answer << "\"\n";
    else
        out << "Outcome: no answer\n";
    out << "Prompted steps: " << steps.size() << " | strayed: " << (strayed ? "yes" : "no")
        << " | dynamic tokens presented: " << dyn << "\n";
    out << rule << "\n";
    return out.str();
}

} // namespace memwalker
