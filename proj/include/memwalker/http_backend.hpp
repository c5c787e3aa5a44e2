// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "memwalker/backend.hpp"
#include "memwalker/errors.hpp"

namespace memwalker {

namespace detail {

struct SplitUrl {
    std::string origin; // scheme://host[:port]
    std::string path_prefix;
};

inline SplitUrl split_url(const std::string& base) {
    auto scheme_end = base.find("://");
    if (scheme_end == std::string::npos)
        throw InvalidInput("endpoint base must start with http:// or https://: " + base);
    auto path_start = base.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {base, ""};
    std::string prefix = base.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {base.substr(0, path_start), prefix};
}

} // namespace detail

/// Chat-completion client for any OpenAI-style HTTP endpoint. The full
/// prompt is sent as the user message of a single system+user pair.
/// Transport failures and 5xx/429 responses are retried up to three times
/// with exponential backoff; response-format problems are not.
class HttpBackend final : public Backend {
public:
    HttpBackend(std::string base_url, std::string api_key = {}, std::string model = {})
        : url_(detail::split_url(base_url)), api_key_(std::move(api_key)),
          model_(std::move(model)) {}

    /// Reads MEMWALKER_API_BASE (required), MEMWALKER_API_KEY and
    /// MEMWALKER_MODEL.
    static HttpBackend from_env() {
        const char* base = std::getenv("MEMWALKER_API_BASE");
        if (!base || !*base)
            throw InvalidInput("MEMWALKER_API_BASE is not set; required for the http backend");
        const char* key = std::getenv("MEMWALKER_API_KEY");
        const char* model = std::getenv("MEMWALKER_MODEL");
        return HttpBackend(base, key ? key : "", model ? model : "");
    }

    std::string complete(const CompletionRequest& request) override {
        nlohmann::json body = {
            {"messages",
             {{{"role", "system"}, {"content", "You are a helpful assistant."}},
              {{"role", "user"}, {"content", request.prompt}}}},
            {"temperature", request.sampling.temperature},
            {"top_p", request.sampling.top_p},
            {"max_tokens", request.sampling.max_new_tokens},
        };
        if (!model_.empty()) body["model"] = model_;

        const std::string payload = body.dump();
        const std::string path = url_.path_prefix + "/v1/chat/completions";

        std::string last_error;
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(250 << attempt));
            httplib::Client client(url_.origin);
            client.set_connection_timeout(10, 0);
            client.set_read_timeout(300, 0);
            httplib::Headers headers;
            if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
            auto res = client.Post(path, headers, payload, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw EndpointError("HTTP " + std::to_string(res->status) + " from " + path +
                                    ": " + res->body.substr(0, 200));
            return extract_content(res->body, path);
        }
        throw EndpointError("endpoint failed after " + std::to_string(kMaxAttempts) +
                            " attempts (" + last_error + "): " + url_.origin + path);
    }

    bool supports_concurrency() const override { return true; }

private:
    static constexpr int kMaxAttempts = 3;

    static std::string extract_content(const std::string& body, const std::string& path) {
        try {
            auto j = nlohmann::json::parse(body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw EndpointError("unexpected response shape from " + path + ": " + e.what());
        }
    }

    detail::SplitUrl url_;
    std::string api_key_;
    std::string model_;
};

/// Embedding endpoint client for the dense retrieval scorer. Returns one
/// vector per input; similarity is computed locally by the caller.
class EmbeddingClient {
public:
    explicit EmbeddingClient(std::string base_url, std::string api_key = {},
                             std::string model = {})
        : url_(detail::split_url(base_url)), api_key_(std::move(api_key)),
          model_(std::move(model)) {}

    std::vector<std::vector<double>> embed(const std::vector<std::string>& inputs) {
        nlohmann::json body = {{"input", inputs}};
        if (!model_.empty()) body["model"] = model_;
        const std::string path = url_.path_prefix + "/v1/embeddings";

        httplib::Client client(url_.origin);
        client.set_connection_timeout(10, 0);
        client.set_read_timeout(300, 0);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client.Post(path, headers, body.dump(), "application/json");
        if (!res) throw EndpointError("transport error: " + httplib::to_string(res.error()));
        if (res->status != 200)
            throw EndpointError("HTTP " + std::to_string(res->status) + " from " + path);
        try {
            auto j = nlohmann::json::parse(res->body);
            std::vector<std::vector<double>> out;
            for (const auto& item : j.at("data"))
                out.push_back(item.at("embedding").get<std::vector<double>>());
            if (out.size() != inputs.size())
                throw EndpointError("embedding endpoint returned " + std::to_string(out.size()) +
                                    " vectors for " + std::to_string(inputs.size()) + " inputs");
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw EndpointError("unexpected embedding response shape: " + std::string(e.what()));
        }
    }

private:
    detail::SplitUrl url_;
    std::string api_key_;
    std::string model_;
};

} // namespace memwalker
