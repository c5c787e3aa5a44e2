// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "memwalker/config.hpp"
#include "memwalker/errors.hpp"
#include "memwalker/tokenizer.hpp"
#include "memwalker/util.hpp"

namespace memwalker {

struct CompletionRequest {
    std::string prompt;
    Sampling sampling;
    std::string tag; // e.g. "triage", "leaf", "summarize-leaf"; tracing only
};

/// Transport-level completion interface. Implementations report whether
/// they tolerate concurrent callers.
class Backend {
public:
    virtual ~Backend() = default;

    virtual std::string complete(const CompletionRequest& request) = 0;

    virtual bool supports_concurrency() const { return false; }
};

/// Wall-clock source, injectable so scripted runs can be reproduced
/// timestamp-for-timestamp.
using Clock = std::function<std::chrono::system_clock::time_point()>;

inline Clock system_clock() {
    return [] { return std::chrono::system_clock::now(); };
}

inline Clock fixed_clock(std::chrono::system_clock::time_point at = {}) {
    return [at] { return at; };
}

inline std::string format_timestamp(std::chrono::system_clock::time_point tp) {
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(tp.time_since_epoch());
    std::time_t secs = static_cast<std::time_t>(ms.count() / 1000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[40];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                  static_cast<int>(ms.count() % 1000));
    return buf;
}

struct ScriptEntry {
    std::optional<std::string> matcher; // substring the prompt must contain
    std::string response;
};

/// Deterministic backend for tests: replays a fixed response sequence.
/// Responses are consumed strictly in order; a matcher mismatch, an
/// exhausted script, or concurrent use is a hard test failure.
class ScriptedBackend final : public Backend {
public:
    ScriptedBackend() = default;
    explicit ScriptedBackend(std::vector<ScriptEntry> script) : script_(std::move(script)) {}

    ScriptedBackend& add(std::string response) {
        script_.push_back({std::nullopt, std::move(response)});
        return *this;
    }

    ScriptedBackend& add(std::string matcher, std::string response) {
        script_.push_back({std::move(matcher), std::move(response)});
        return *this;
    }

    std::string complete(const CompletionRequest& request) override {
        std::unique_lock<std::mutex> lock(mutex_, std::try_to_lock);
        if (!lock) throw ScriptError("ScriptedBackend used concurrently");
        if (cursor_ >= script_.size())
            throw ScriptError("script exhausted at call " + std::to_string(cursor_ + 1) +
                              " (tag '" + request.tag + "')");
        const ScriptEntry& entry = script_[cursor_++];
        if (entry.matcher && request.prompt.find(*entry.matcher) == std::string::npos)
            throw ScriptError("script entry " + std::to_string(cursor_) + " expects '" +
                              *entry.matcher + "' in the prompt (tag '" + request.tag + "')");
        return entry.response;
    }

    std::size_t calls() const { return cursor_; }
    std::size_t remaining() const { return script_.size() - cursor_; }

    /// Loads a script from line-delimited JSON records carrying at least a
    /// "response" field; "matcher" is honored when present. Trace log files
    /// satisfy this shape, so a recorded run can be replayed directly.
    static ScriptedBackend from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open script file: " + path);
        std::vector<ScriptEntry> script;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
            }
            ScriptEntry entry;
            if (!j.contains("response") || !j["response"].is_string())
                throw IoError(path + ":" + std::to_string(line_no) + ": missing 'response'");
            entry.response = j["response"].get<std::string>();
            if (j.contains("matcher") && j["matcher"].is_string())
                entry.matcher = j["matcher"].get<std::string>();
            script.push_back(std::move(entry));
        }
        return ScriptedBackend(std::move(script));
    }

private:
    std::vector<ScriptEntry> script_;
    std::size_t cursor_ = 0;
    std::mutex mutex_;
};

struct TraceRecord {
    std::string tag;
    std::string prompt;
    std::string response;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    std::string timestamp;
};

inline void to_json(nlohmann::json& j, const TraceRecord& r) {
    j = {{"tag", r.tag},
         {"prompt", r.prompt},
         {"response", r.response},
         {"prompt_tokens", r.prompt_tokens},
         {"completion_tokens", r.completion_tokens},
         {"timestamp", r.timestamp}};
}

/// Append-only completion log; one record per request, in issue order.
/// Optionally mirrored to a line-delimited JSON file as it grows.
class TraceLog {
public:
    TraceLog() = default;

    void open_file(const std::string& path) {
        std::lock_guard<std::mutex> lock(mutex_);
        file_.open(path, std::ios::binary | std::ios::app);
        if (!file_) throw IoError("cannot open trace log: " + path);
    }

    void append(TraceRecord record) {
        std::lock_guard<std::mutex> lock(mutex_);
        if (file_.is_open()) {
            file_ << nlohmann::json(record).dump() << '\n';
            file_.flush();
        }
        records_.push_back(std::move(record));
    }

    std::vector<TraceRecord> records() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return records_;
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return records_.size();
    }

private:
    mutable std::mutex mutex_;
    std::vector<TraceRecord> records_;
    std::ofstream file_;
};

/// context_window - prompt tokens - generation_reserve, floored at zero.
inline int remaining_budget(std::string_view prompt, const Config& config, const Tokenizer& tok) {
    return std::max(0, config.context_window - tok.count(prompt) - config.generation_reserve);
}

/// Issues completions on behalf of the walker: enforces the window
/// precondition, stamps requests with the run's sampling parameters, and
/// records every exchange in the trace log.
class CompletionClient {
public:
    CompletionClient(Backend& backend, const Config& config, const Tokenizer& tokenizer,
                     TraceLog* trace = nullptr, Clock clock = system_clock())
        : backend_(backend), config_(config), tokenizer_(tokenizer), trace_(trace),
          clock_(std::move(clock)) {}

    std::string complete(const CompletionRequest& request) {
        int prompt_tokens = tokenizer_.count(request.prompt);
        if (prompt_tokens + request.sampling.max_new_tokens > config_.context_window)
            throw BudgetError("prompt (" + std::to_string(prompt_tokens) + " tokens) + " +
                              std::to_string(request.sampling.max_new_tokens) +
                              " new tokens exceeds context window " +
                              std::to_string(config_.context_window));
        std::string response = backend_.complete(request);
        if (trace_)
            trace_->append({request.tag, request.prompt, response, prompt_tokens,
                            tokenizer_.count(response), format_timestamp(clock_())});
        return response;
    }

    std::string complete(std::string prompt, std::string tag) {
        return complete(CompletionRequest{std::move(prompt), config_.sampling, std::move(tag)});
    }

    int remaining_budget(std::string_view prompt) const {
        return memwalker::remaining_budget(prompt, config_, tokenizer_);
    }

    const Config& config() const { return config_; }
    const Tokenizer& tokenizer() const { return tokenizer_; }
    Backend& backend() { return backend_; }
    const Clock& clock() const { return clock_; }

private:
    Backend& backend_;
    const Config& config_;
    const Tokenizer& tokenizer_;
    TraceLog* trace_;
    Clock clock_;
};

} // namespace memwalker
