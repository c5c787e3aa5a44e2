// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <future>
#include <string>
#include <vector>

#include "memwalker/backend.hpp"
#include "memwalker/config.hpp"
#include "memwalker/errors.hpp"
#include "memwalker/prompts.hpp"
#include "memwalker/tokenizer.hpp"
#include "memwalker/tree.hpp"

namespace memwalker {

/// Greedy left-to-right packing: every group has exactly max_fanout members
/// except the last, which takes the remainder.
inline std::vector<std::vector<std::string>> group_nodes(const std::vector<std::string>& ids,
                                                         int max_fanout) {
    if (max_fanout < 2) throw InvalidInput("group_nodes: max_fanout must be >= 2");
    if (ids.empty()) throw InvalidInput("group_nodes: no nodes");
    std::vector<std::vector<std::string>> groups;
    for (std::size_t i = 0; i < ids.size(); i += static_cast<std::size_t>(max_fanout)) {
        auto end = std::min(ids.size(), i + static_cast<std::size_t>(max_fanout));
        groups.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                            ids.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return groups;
}

/// Alternative packing for the construction trade-off sweep: same group
/// count as greedy, but sizes as even as possible (they differ by at most
/// one). Order is preserved.
inline std::vector<std::vector<std::string>> group_nodes_balanced(
    const std::vector<std::string>& ids, int max_fanout) {
    if (max_fanout < 2) throw InvalidInput("group_nodes: max_fanout must be >= 2");
    if (ids.empty()) throw InvalidInput("group_nodes: no nodes");
    std::size_t n = ids.size();
    std::size_t groups_n = (n + static_cast<std::size_t>(max_fanout) - 1) /
                           static_cast<std::size_t>(max_fanout);
    std::vector<std::vector<std::string>> groups;
    std::size_t base = n / groups_n, extra = n % groups_n, at = 0;
    for (std::size_t g = 0; g < groups_n; ++g) {
        std::size_t take = base + (g < extra ? 1 : 0);
        groups.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(at),
                            ids.begin() + static_cast<std::ptrdiff_t>(at + take));
        at += take;
    }
    return groups;
}

struct BuildStats {
    int llm_calls = 0;
    int compression_calls = 0; // over-budget groups/summaries that needed the LLM
    int levels = 0;
    int nodes = 0;
};

/// Stage 1: builds the memory tree bottom-up. Each segment is summarized
/// into a leaf node; summaries are then grouped and merged level by level
/// until a single root remains. Construction never sees the query.
class TreeBuilder {
public:
    TreeBuilder(CompletionClient& client, const PromptLibrary& prompts, const Config& config,
                const Tokenizer& tokenizer)
        : client_(client), prompts_(prompts), config_(config), tokenizer_(tokenizer) {}

    /// checkpoint_path, when non-empty, receives the partial tree after
    /// every completed level (and on endpoint failure, before rethrowing).
    MemoryTree build(std::string_view document, const std::string& checkpoint_path = {}) {
        if (trim(document).empty()) throw InvalidInput("build: empty document");
        llm_calls_ = 0;
        compression_calls_ = 0;
        stats_ = {};

        MemoryTree tree;
        tree.source_hash = fnv1a64_hex(document);
        tree.config = config_;
        tree.config.summary_budget = config_.effective_summary_budget();
        tree.set_segments(split_into_segments(document, config_.segment_size, tokenizer_));

        try {
            build_levels(tree, checkpoint_path);
        } catch (const EndpointError&) {
            if (!checkpoint_path.empty()) checkpoint(tree, checkpoint_path);
            throw;
        }

        stats_.nodes = static_cast<int>(tree.nodes().size());
        stats_.levels = tree.height();
        stats_.llm_calls = llm_calls_.load();
        stats_.compression_calls = compression_calls_.load();
        return tree;
    }

    std::string summarize_leaf(const Segment& segment) {
        std::string text =
            complete(prompts_.render_construction_leaf(segment.text), "summarize-leaf");
        return compress_to_budget(std::move(text));
    }

    /// When the concatenated child summaries already fit the budget, they
    /// become the parent summary directly, with no LLM call.
    std::string summarize_group(const std::vector<std::string>& child_summaries) {
        if (child_summaries.empty()) throw InvalidInput("summarize_group: no summaries");
        std::string concat;
        for (std::size_t i = 0; i < child_summaries.size(); ++i) {
            if (i) concat += '\n';
            concat += child_summaries[i];
        }
        if (tokenizer_.count(concat) <= budget()) return concat;
        ++compression_calls_;
        std::string text =
            complete(prompts_.render_construction_nonleaf(child_summaries), "compress");
        return compress_to_budget(std::move(text));
    }

    BuildStats stats() const {
        BuildStats s = stats_;
        s.llm_calls = llm_calls_.load();
        s.compression_calls = compression_calls_.load();
        return s;
    }

private:
    int budget() const { return config_.effective_summary_budget(); }

    std::string complete(std::string prompt, const char* tag) {
        ++llm_calls_;
        return client_.complete(std::move(prompt), tag);
    }

    /// Re-compresses an over-budget summary up to three times, then hard
    /// truncates as a last resort so the budget is a hard invariant.
    std::string compress_to_budget(std::string text) {
        for (int attempt = 0; attempt < 3; ++attempt) {
            if (tokenizer_.count(text) <= budget()) return text;
            text = complete(prompts_.render_construction_nonleaf({text}), "compress");
        }
        if (tokenizer_.count(text) <= budget()) return text;
        return truncate(text, budget(), TruncateSide::keep_left, tokenizer_);
    }

    void build_levels(MemoryTree& tree, const std::string& checkpoint_path) {
        std::vector<std::string> current;
        current.reserve(tree.segments().size());

        // level 1: one leaf per segment
        std::vector<std::string> summaries = summarize_leaves(tree.segments());
        for (std::size_t i = 0; i < tree.segments().size(); ++i) {
            TreeNode node;
            node.id = node_id(1, static_cast<int>(i));
            node.level = 1;
            node.summary = summaries[i];
            node.segment_index = static_cast<int>(i);
            node.summary_token_count = tokenizer_.count(node.summary);
            current.push_back(node.id);
            tree.add_node(std::move(node));
        }
        if (!checkpoint_path.empty()) checkpoint(tree, checkpoint_path);

        int level = 1;
        while (current.size() > 1) {
            ++level;
            auto groups = config_.balanced_grouping ? group_nodes_balanced(current, config_.max_fanout)
                                                    : group_nodes(current, config_.max_fanout);
            std::vector<std::string> next;
            next.reserve(groups.size());
            for (std::size_t g = 0; g < groups.size(); ++g) {
                std::vector<std::string> child_summaries;
                child_summaries.reserve(groups[g].size());
                for (const auto& id : groups[g]) child_summaries.push_back(tree.at(id).summary);
                TreeNode node;
                node.id = node_id(level, static_cast<int>(g));
                node.level = level;
                node.summary = summarize_group(child_summaries);
                node.children = groups[g];
                node.summary_token_count = tokenizer_.count(node.summary);
                next.push_back(node.id);
                tree.add_node(std::move(node));
            }
            current = std::move(next);
            if (!checkpoint_path.empty()) checkpoint(tree, checkpoint_path);
        }
        tree.root_id = current.front();
    }

    /// Leaf summaries are independent requests; run them concurrently when
    /// both the config and the backend allow it. Results keep segment order.
    std::vector<std::string> summarize_leaves(const std::vector<Segment>& segments) {
        std::vector<std::string> out(segments.size());
        bool parallel = config_.parallelism > 1 && client_.backend().supports_concurrency();
        if (!parallel) {
            for (std::size_t i = 0; i < segments.size(); ++i) out[i] = summarize_leaf(segments[i]);
            return out;
        }
        std::size_t window = static_cast<std::size_t>(config_.parallelism);
        for (std::size_t at = 0; at < segments.size(); at += window) {
            std::size_t end = std::min(segments.size(), at + window);
            std::vector<std::future<std::string>> batch;
            for (std::size_t i = at; i < end; ++i)
                batch.push_back(std::async(std::launch::async,
                                           [this, &segments, i] { return summarize_leaf(segments[i]); }));
            for (std::size_t i = at; i < end; ++i) out[i] = batch[i - at].get();
        }
        return out;
    }

    /// Flushes the in-progress tree. A checkpoint has root_id "" until the
    /// final level completes.
    static void checkpoint(const MemoryTree& tree, const std::string& path) {
        save_tree(tree, path);
    }

    CompletionClient& client_;
    const PromptLibrary& prompts_;
    const Config& config_;
    const Tokenizer& tokenizer_;
    BuildStats stats_;
    std::atomic<int> llm_calls_{0};
    std::atomic<int> compression_calls_{0};
};

/// Convenience wrapper matching the common call shape.
inline MemoryTree build_tree(std::string_view document, const Config& config,
                             CompletionClient& client, const PromptLibrary& prompts,
                             const Tokenizer& tokenizer, const std::string& checkpoint_path = {}) {
    TreeBuilder builder(client, prompts, config, tokenizer);
    return builder.build(document, checkpoint_path);
}

} // namespace memwalker
