#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>

#include "kbvqa/error.hpp"
#include "kbvqa/jsonl.hpp"
#include "kbvqa/llm_backend.hpp"

namespace kbvqa {

struct BackendConfig {
    enum class Kind { http, mock };

    Kind kind = Kind::mock;
    std::optional<std::string> endpoint_url;
    std::optional<std::string> auth_token;
    std::string model_name = "llama-13b";
    std::chrono::milliseconds timeout{30000};
    std::size_t retry_count = 2;
    std::chrono::milliseconds retry_backoff{500};
    std::size_t max_concurrency = 4;

    void validate() const {
        if (kind == Kind::http && (!endpoint_url || endpoint_url->empty())) {
            throw InputError("http backend requires an endpoint_url");
        }
        if (max_concurrency == 0) throw InputError("backend max_concurrency must be positive");
    }

    /// KBVQA_ENDPOINT_URL and KBVQA_AUTH_TOKEN override the configured values.
    void apply_env() {
        if (const char* url = std::getenv("KBVQA_ENDPOINT_URL"); url != nullptr && *url != '\0') endpoint_url = url;
        if (const char* tok = std::getenv("KBVQA_AUTH_TOKEN"); tok != nullptr && *tok != '\0') auth_token = tok;
    }

    /// Config echo for manifests; the auth token is never written out.
    json to_json() const {
        return json{{"kind", kind == Kind::http ? "http" : "mock"},
                    {"endpoint_url", endpoint_url ? json(*endpoint_url) : json(nullptr)},
                    {"model_name", model_name},
                    {"timeout_ms", timeout.count()},
                    {"retry_count", retry_count},
                    {"retry_backoff_ms", retry_backoff.count()},
                    {"max_concurrency", max_concurrency}};
    }
};

/// JSON-over-HTTP completion client:
///   POST {model, prompt, max_tokens, num_beams, stop, ...passthrough} -> {text}
/// Timeouts, connection errors and 5xx replies are retried up to retry_count times with
/// exponential backoff. An endpoint that rejects num_beams (4xx naming it) switches the
/// client to greedy decoding for the rest of its lifetime.
class HttpBackend final : public CompletionBackend {
public:
    explicit HttpBackend(BackendConfig config) : config_(std::move(config)), limiter_(config_.max_concurrency) {
        config_.validate();
        const std::string& url = *config_.endpoint_url;
        const auto scheme_end = url.find("://");
        const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
        base_ = url.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    }

    CompletionResponse complete(const CompletionRequest& request) override {
        validate(request);
        ConcurrencyLimiter::Slot slot(limiter_);
        const auto start = std::chrono::steady_clock::now();
        std::string last_error;
        const std::size_t max_attempts = config_.retry_count + 1;
        for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(config_.retry_backoff * (1LL << std::min<std::size_t>(attempt - 1, 20)));
            }
            attempts_.fetch_add(1);
            const Outcome o = post_once(request);
            if (o.text) {
                return CompletionResponse{request.correlation_id, *o.text, tag(),
                                          std::chrono::duration_cast<std::chrono::milliseconds>(
                                              std::chrono::steady_clock::now() - start)};
            }
            last_error = o.error;
            if (!o.retryable) break;
        }
        throw BackendError("request '" + request.correlation_id + "' failed: " + last_error);
    }

    std::string tag() const override { return "http:" + config_.model_name; }

    std::vector<std::string> degradations() const override {
        if (greedy_fallback_.load()) return {"endpoint rejected num_beams; fell back to greedy decoding"};
        return {};
    }

    /// Total HTTP requests sent, including retries.
    std::size_t attempts() const { return attempts_.load(); }

private:
    struct Outcome {
        std::optional<std::string> text;
        std::string error;
        bool retryable = false;
    };

    json body_for(const CompletionRequest& request, std::size_t beams) const {
        json body = request.params.passthrough;
        body["model"] = config_.model_name;
        body["prompt"] = request.prompt;
        body["max_tokens"] = request.params.max_new_tokens;
        body["num_beams"] = beams;
        body["stop"] = request.params.stop_sequences;
        return body;
    }

    Outcome post_once(const CompletionRequest& request) {
        httplib::Client client(base_);
        const auto secs = config_.timeout.count() / 1000;
        const auto usecs = (config_.timeout.count() % 1000) * 1000;
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);
        httplib::Headers headers;
        if (config_.auth_token) headers.emplace("Authorization", "Bearer " + *config_.auth_token);

        const std::size_t beams = greedy_fallback_.load() ? 1 : request.params.beam_size;
        auto res = client.Post(path_, headers, body_for(request, beams).dump(), "application/json");
        if (!res) {
            return {std::nullopt, "transport error: " + httplib::to_string(res.error()), true};
        }
        if (res->status >= 500) {
            return {std::nullopt, "HTTP " + std::to_string(res->status), true};
        }
        if (res->status >= 400) {
            if (beams > 1 && res->body.find("num_beams") != std::string::npos) {
                greedy_fallback_.store(true);
                return post_once(request);
            }
            return {std::nullopt, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200), false};
        }
        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::parse_error&) {
            return {std::nullopt, "malformed reply (not JSON)", false};
        }
        if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string()) {
            return {std::nullopt, "malformed reply (no string 'text')", false};
        }
        return {reply["text"].get<std::string>(), {}, false};
    }

    BackendConfig config_;
    ConcurrencyLimiter limiter_;
    std::string base_;
    std::string path_;
    std::atomic<bool> greedy_fallback_{false};
    std::atomic<std::size_t> attempts_{0};
};

}  // namespace kbvqa
