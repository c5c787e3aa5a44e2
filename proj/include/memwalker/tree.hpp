// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "memwalker/config.hpp"
#include "memwalker/errors.hpp"
#include "memwalker/tokenizer.hpp"
#include "memwalker/types.hpp"
#include "memwalker/util.hpp"

namespace memwalker {

/// One summary node. Leaves (level 1) carry a segment_index; inner nodes
/// carry the ordered ids of the children they summarize.
struct TreeNode {
    std::string id;
    int level = 1;
    std::string summary;
    std::vector<std::string> children;
    std::optional<int> segment_index;
    int summary_token_count = 0;

    bool is_leaf() const { return segment_index.has_value(); }

    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Deterministic node id from (level, position within level).
inline std::string node_id(int level, int position) {
    return "s" + std::to_string(level) + "_" + std::to_string(position);
}

/// The query-independent index over one document: ordered segments at the
/// bottom, recursive summaries above them. Immutable once built; safe to
/// share across concurrent readers.
class MemoryTree {
public:
    std::string root_id;
    std::string source_hash;
    Config config;

    const std::vector<TreeNode>& nodes() const { return nodes_; }
    const std::vector<Segment>& segments() const { return segments_; }

    void set_segments(std::vector<Segment> segments) { segments_ = std::move(segments); }

    void add_node(TreeNode node) {
        index_[node.id] = nodes_.size();
        nodes_.push_back(std::move(node));
    }

    bool contains(const std::string& id) const { return index_.count(id) != 0; }

    const TreeNode& at(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw InvalidInput("unknown node id: " + id);
        return nodes_[it->second];
    }

    const Segment& segment_of(const TreeNode& leaf) const {
        if (!leaf.is_leaf()) throw InvalidInput("node has no segment: " + leaf.id);
        auto idx = static_cast<std::size_t>(*leaf.segment_index);
        if (idx >= segments_.size()) throw InvalidInput("segment index out of range: " + leaf.id);
        return segments_[idx];
    }

    /// Parent id, or empty for the root / unknown nodes.
    std::string parent_of(const std::string& id) const {
        for (const auto& n : nodes_)
            for (const auto& c : n.children)
                if (c == id) return n.id;
        return {};
    }

    int total_document_tokens() const {
        int total = 0;
        for (const auto& s : segments_) total += s.token_count;
        return total;
    }

    int height() const {
        return nodes_.empty() ? 0 : at(root_id).level;
    }

    friend bool operator==(const MemoryTree& a, const MemoryTree& b) {
        return a.root_id == b.root_id && a.source_hash == b.source_hash &&
               a.nodes_ == b.nodes_ && a.segments_ == b.segments_;
    }

private:
    std::vector<TreeNode> nodes_; // construction order: leaves first, then level by level
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<Segment> segments_;
};

struct Violation {
    std::string node_id; // empty for tree-wide violations
    std::string message;
};

using ValidationReport = std::vector<Violation>;

/// Checks every structural invariant. A broken tree yields violations,
/// never an exception; an empty report means the tree is valid.
inline ValidationReport validate_tree(const MemoryTree& tree) {
    ValidationReport report;
    auto flag = [&report](const std::string& id, std::string msg) {
        report.push_back({id, std::move(msg)});
    };

    if (tree.nodes().empty()) {
        flag("", "tree has no nodes");
        return report;
    }
    if (!tree.contains(tree.root_id)) {
        flag("", "root_id '" + tree.root_id + "' not present in nodes");
        return report;
    }

    const int max_fanout = tree.config.max_fanout;
    const int summary_budget = tree.config.effective_summary_budget();
    std::unique_ptr<Tokenizer> tok;
    try {
        tok = make_tokenizer(tree.config.tokenizer_scheme);
    } catch (const InvalidInput& e) {
        flag("", e.what());
    }

    // parent structure
    std::unordered_map<std::string, int> parent_count;
    for (const auto& n : tree.nodes()) {
        for (const auto& c : n.children) {
            if (!tree.contains(c)) {
                flag(n.id, "child '" + c + "' does not exist");
                continue;
            }
            parent_count[c]++;
        }
    }
    for (const auto& n : tree.nodes()) {
        int parents = parent_count.count(n.id) ? parent_count[n.id] : 0;
        if (n.id == tree.root_id) {
            if (parents != 0) flag(n.id, "root has a parent");
        } else if (parents == 0) {
            flag(n.id, "node unreachable: no parent and not the root");
        } else if (parents > 1) {
            flag(n.id, "node has " + std::to_string(parents) + " parents");
        }
    }

    // per-node invariants
    for (const auto& n : tree.nodes()) {
        bool leaf_by_segment = n.segment_index.has_value();
        bool leaf_by_children = n.children.empty();
        if (leaf_by_segment != leaf_by_children)
            flag(n.id, "leaf marker mismatch: segment_index and children disagree");
        if (leaf_by_segment && n.level != 1)
            flag(n.id, "leaf has level " + std::to_string(n.level) + ", expected 1");
        if (!leaf_by_children) {
            if (static_cast<int>(n.children.size()) > max_fanout)
                flag(n.id, "fanout " + std::to_string(n.children.size()) + " exceeds max_fanout " +
                               std::to_string(max_fanout));
            int max_child_level = 0;
            for (const auto& c : n.children)
                if (tree.contains(c)) max_child_level = std::max(max_child_level, tree.at(c).level);
            if (max_child_level > 0 && n.level != max_child_level + 1)
                flag(n.id, "level " + std::to_string(n.level) + " != 1 + max child level " +
                               std::to_string(max_child_level));
        }
        if (n.summary_token_count > summary_budget)
            flag(n.id, "summary_token_count " + std::to_string(n.summary_token_count) +
                           " exceeds summary_budget " + std::to_string(summary_budget));
        if (tok && tok->count(n.summary) != n.summary_token_count)
            flag(n.id, "summary_token_count " + std::to_string(n.summary_token_count) +
                           " != recount " + std::to_string(tok->count(n.summary)));
    }

    // reachability and acyclicity from the root
    std::unordered_set<std::string> visited;
    std::vector<int> leaf_order;
    {
        std::vector<std::string> stack{tree.root_id};
        bool cycle = false;
        while (!stack.empty() && !cycle) {
            std::string id = stack.back();
            stack.pop_back();
            if (!tree.contains(id)) continue;
            if (!visited.insert(id).second) {
                flag(id, "node reachable twice from root (cycle or shared child)");
                cycle = true;
                break;
            }
            const auto& n = tree.at(id);
            if (n.is_leaf()) leaf_order.push_back(*n.segment_index);
            // push children in reverse so in-order traversal sees them left to right
            for (auto it = n.children.rbegin(); it != n.children.rend(); ++it)
                stack.push_back(*it);
        }
        if (!cycle && visited.size() != tree.nodes().size())
            flag("", "only " + std::to_string(visited.size()) + " of " +
                         std::to_string(tree.nodes().size()) + " nodes reachable from root");
    }

    // leaves must enumerate the segments in order
    bool order_ok = leaf_order.size() == tree.segments().size();
    if (order_ok)
        for (std::size_t i = 0; i < leaf_order.size(); ++i)
            if (leaf_order[i] != static_cast<int>(i)) order_ok = false;
    if (!order_ok)
        flag("", "in-order leaf traversal does not yield segments 0.." +
                     std::to_string(tree.segments().size() ? tree.segments().size() - 1 : 0));

    // segment invariants
    std::size_t expect_begin = 0;
    for (const auto& s : tree.segments()) {
        if (s.char_begin != expect_begin)
            flag("", "segment " + std::to_string(s.index) + " char_span not contiguous");
        expect_begin = s.char_end;
        if (s.token_count > tree.config.segment_size)
            flag("", "segment " + std::to_string(s.index) + " exceeds segment_size");
        if (tok && tok->count(s.text) != s.token_count)
            flag("", "segment " + std::to_string(s.index) + " token_count mismatch");
    }

    return report;
}

inline void to_json(nlohmann::json& j, const Segment& s) {
    j = {{"index", s.index},
         {"text", s.text},
         {"token_count", s.token_count},
         {"char_span", {s.char_begin, s.char_end}}};
}

inline void from_json(const nlohmann::json& j, Segment& s) {
    j.at("index").get_to(s.index);
    j.at("text").get_to(s.text);
    j.at("token_count").get_to(s.token_count);
    s.char_begin = j.at("char_span").at(0).get<std::size_t>();
    s.char_end = j.at("char_span").at(1).get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const TreeNode& n) {
    j = {{"id", n.id},
         {"level", n.level},
         {"summary", n.summary},
         {"children", n.children},
         {"summary_token_count", n.summary_token_count}};
    if (n.segment_index)
        j["segment_index"] = *n.segment_index;
    else
        j["segment_index"] = nullptr;
}

inline void from_json(const nlohmann::json& j, TreeNode& n) {
    j.at("id").get_to(n.id);
    j.at("level").get_to(n.level);
    j.at("summary").get_to(n.summary);
    j.at("children").get_to(n.children);
    j.at("summary_token_count").get_to(n.summary_token_count);
    if (j.at("segment_index").is_null())
        n.segment_index.reset();
    else
        n.segment_index = j.at("segment_index").get<int>();
}

inline nlohmann::json tree_to_json(const MemoryTree& tree) {
    return {{"source_hash", tree.source_hash},
            {"config_snapshot", tree.config},
            {"segments", tree.segments()},
            {"nodes", tree.nodes()},
            {"root_id", tree.root_id}};
}

inline MemoryTree tree_from_json(const nlohmann::json& j) {
    MemoryTree tree;
    j.at("source_hash").get_to(tree.source_hash);
    j.at("config_snapshot").get_to(tree.config);
    tree.set_segments(j.at("segments").get<std::vector<Segment>>());
    for (const auto& jn : j.at("nodes")) tree.add_node(jn.get<TreeNode>());
    j.at("root_id").get_to(tree.root_id);
    return tree;
}

inline std::string serialize_tree(const MemoryTree& tree) {
    return tree_to_json(tree).dump(2);
}

inline void save_tree(const MemoryTree& tree, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write tree cache: " + path);
    out << serialize_tree(tree) << '\n';
}

inline MemoryTree load_tree(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tree cache: " + path);
    nlohmann::json j;
    try {
        in >> j;
        return tree_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed tree cache " + path + ": " + e.what());
    }
}

/// A cached tree answers for exactly one document. Mismatch means the
/// cache is stale and must not be used.
inline void verify_tree_source(const MemoryTree& tree, std::string_view document) {
    if (tree.source_hash != fnv1a64_hex(document))
        throw InvalidInput("tree cache does not match this document (source_hash mismatch)");
}

} // namespace memwalker
