#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tardis/embedding.hpp"
#include "tardis/llm_gateway.hpp"

namespace tardis {

inline std::string api_key_from_env() {
    const char* key = std::getenv("TARDIS_API_KEY");
    return key ? key : "";
}

struct HttpEndpoint {
    std::string base_url;           // e.g. http://localhost:8000
    std::string path;               // e.g. /v1/chat/completions
    std::string model;              // server-side model name
    int timeout_sec = 120;
};

namespace detail {

inline httplib::Headers auth_headers() {
    httplib::Headers headers;
    std::string key = api_key_from_env();
    if (!key.empty()) headers.insert({"Authorization", "Bearer " + key});
    return headers;
}

} // namespace detail

// Request body for an OpenAI-compatible chat completion. Kept separate so
// the wire format is testable without a server.
inline nlohmann::ordered_json build_chat_request(const GenerationRequest& req,
                                                 const std::string& model,
                                                 bool include_repetition_penalty) {
    nlohmann::ordered_json body;
    body["model"] = model;
    body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}});
    body["temperature"] = req.temperature;
    body["max_tokens"] = req.max_tokens;
    if (!req.stop.empty()) body["stop"] = req.stop;
    // extension field; not all servers accept it
    if (include_repetition_penalty) body["repetition_penalty"] = req.repetition_penalty;
    return body;
}

/// OpenAI-compatible chat backend. A 400 response to a request that carried
/// repetition_penalty triggers one retry without the field (some servers
/// reject unknown parameters); other 4xx are non-retryable, 5xx and
/// transport failures are retryable by the gateway.
class OpenAiChatBackend : public TextBackend {
public:
    explicit OpenAiChatBackend(HttpEndpoint endpoint, warning_sink warnings = stderr_warnings())
        : endpoint_(std::move(endpoint)), warnings_(std::move(warnings)) {}

    std::string id() const override { return "openai-chat:" + endpoint_.model; }

    GenerationResponse complete(const GenerationRequest& req) override {
        auto started = std::chrono::steady_clock::now();
        auto result = post_once(req, /*include_penalty=*/true);
        if (result.status == 400) {
            warn(warnings_, "backend rejected request with repetition_penalty; retrying without it (" +
                                req.request_tag + ")");
            result = post_once(req, /*include_penalty=*/false);
        }
        auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - started)
                           .count();

        if (result.status == 0)
            throw backend_error("transport failure: " + result.body, /*retryable=*/true);
        if (result.status >= 500 || result.status == 429)
            throw backend_error("HTTP " + std::to_string(result.status) + ": " + result.body,
                                /*retryable=*/true);
        if (result.status >= 400)
            throw backend_error("HTTP " + std::to_string(result.status) + ": " + result.body,
                                /*retryable=*/false);

        nlohmann::json j = nlohmann::json::parse(result.body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || j["choices"].empty())
            throw backend_error("malformed completion response", /*retryable=*/false);
        const auto& choice = j["choices"][0];
        std::string text;
        if (choice.contains("message") && choice["message"].contains("content") &&
            choice["message"]["content"].is_string())
            text = choice["message"]["content"].get<std::string>();
        else if (choice.contains("text") && choice["text"].is_string())
            text = choice["text"].get<std::string>();
        return {text, id(), latency, req.request_tag};
    }

private:
    struct PostResult {
        int status = 0;
        std::string body;
    };

    PostResult post_once(const GenerationRequest& req, bool include_penalty) {
        httplib::Client client(endpoint_.base_url);
        client.set_connection_timeout(endpoint_.timeout_sec);
        client.set_read_timeout(endpoint_.timeout_sec);
        auto body = build_chat_request(req, endpoint_.model, include_penalty);
        auto res = client.Post(endpoint_.path, detail::auth_headers(), body.dump(), "application/json");
        if (!res) return {0, httplib::to_string(res.error())};
        return {res->status, res->body};
    }

    HttpEndpoint endpoint_;
    warning_sink warnings_;
};

/// OpenAI-compatible embeddings provider: POST {model, input:[...]} and read
/// data[i].embedding, reassembled in input order via the index field.
class OpenAiEmbeddingProvider : public EmbeddingProvider {
public:
    explicit OpenAiEmbeddingProvider(HttpEndpoint endpoint, size_t batch_size = 128)
        : endpoint_(std::move(endpoint)), batch_size_(std::max<size_t>(1, batch_size)) {}

    std::string provider_id() const override { return "openai"; }
    std::string model_id() const override { return endpoint_.model; }

    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override {
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        for (size_t start = 0; start < texts.size(); start += batch_size_) {
            size_t end = std::min(texts.size(), start + batch_size_);
            auto part = fetch(std::vector<std::string>(texts.begin() + start, texts.begin() + end));
            for (auto& v : part) out.push_back(std::move(v));
        }
        return out;
    }

private:
    std::vector<std::vector<double>> fetch(const std::vector<std::string>& texts) {
        httplib::Client client(endpoint_.base_url);
        client.set_connection_timeout(endpoint_.timeout_sec);
        client.set_read_timeout(endpoint_.timeout_sec);
        nlohmann::ordered_json body;
        body["model"] = endpoint_.model;
        body["input"] = texts;
        auto res = client.Post(endpoint_.path, detail::auth_headers(), body.dump(), "application/json");
        if (!res) fail(errc::embedding, "embedding transport failure: " + httplib::to_string(res.error()));
        if (res->status != 200)
            fail(errc::embedding, "embedding HTTP " + std::to_string(res->status) + ": " + res->body);
        nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("data") || !j["data"].is_array())
            fail(errc::embedding, "malformed embeddings response");
        std::vector<std::vector<double>> out(texts.size());
        size_t fallback_index = 0;
        for (const auto& item : j["data"]) {
            size_t idx = item.contains("index") ? item["index"].get<size_t>() : fallback_index;
            ++fallback_index;
            if (idx >= out.size()) fail(errc::embedding, "embeddings response index out of range");
            out[idx] = item["embedding"].get<std::vector<double>>();
        }
        for (const auto& v : out)
            if (v.empty()) fail(errc::embedding, "embeddings response missing an input");
        return out;
    }

    HttpEndpoint endpoint_;
    size_t batch_size_;
};

} // namespace tardis
