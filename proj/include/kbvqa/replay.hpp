#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include "kbvqa/error.hpp"
#include "kbvqa/hashing.hpp"
#include "kbvqa/jsonl.hpp"
#include "kbvqa/llm_backend.hpp"

namespace kbvqa {

/// Replay key: digest of the prompt and the decode parameters that shape the reply.
inline std::string replay_key(const CompletionRequest& request) {
    return sha256_hex(request.prompt + '\0' + request.params.to_json().dump());
}

/// Wraps a backend and keeps every successful request/response pair for the replay log.
class RecordingBackend final : public CompletionBackend {
public:
    explicit RecordingBackend(std::shared_ptr<CompletionBackend> inner) : inner_(std::move(inner)) {}

    CompletionResponse complete(const CompletionRequest& request) override {
        CompletionResponse r = inner_->complete(request);
        std::lock_guard lock(mutex_);
        entries_[request.correlation_id] = json{{"correlation_id", request.correlation_id},
                                                {"key", replay_key(request)},
                                                {"prompt", request.prompt},
                                                {"params", request.params.to_json()},
                                                {"text", r.text},
                                                {"backend_tag", r.backend_tag}};
        return r;
    }

    std::string tag() const override { return inner_->tag(); }
    bool requires_ordered_dispatch() const override { return inner_->requires_ordered_dispatch(); }
    std::optional<TokenCounter> token_counter() const override { return inner_->token_counter(); }
    std::vector<std::string> degradations() const override { return inner_->degradations(); }

    /// JSONL ordered by correlation id, independent of completion order.
    std::string log() const {
        std::lock_guard lock(mutex_);
        std::string out;
        for (const auto& [id, e] : entries_) out += e.dump() + "\n";
        return out;
    }

private:
    std::shared_ptr<CompletionBackend> inner_;
    mutable std::mutex mutex_;
    std::map<std::string, json> entries_;
};

/// Serves completions from a replay log; unrecorded requests fail like a dead endpoint.
class ReplayBackend final : public CompletionBackend {
public:
    static ReplayBackend load(const std::filesystem::path& path) {
        ReplayBackend b;
        for_each_jsonl(path, [&](const json& r, std::size_t line) {
            const std::string where = path.string() + ":" + std::to_string(line);
            b.answers_[require_field<std::string>(r, "key", where)] = require_field<std::string>(r, "text", where);
            if (b.tag_.empty()) b.tag_ = optional_field<std::string>(r, "backend_tag", where).value_or("");
        });
        return b;
    }

    CompletionResponse complete(const CompletionRequest& request) override {
        validate(request);
        auto it = answers_.find(replay_key(request));
        if (it == answers_.end()) {
            throw BackendError("replay log has no response for '" + request.correlation_id + "'");
        }
        return CompletionResponse{request.correlation_id, it->second, tag(), std::chrono::milliseconds{0}};
    }

    std::string tag() const override { return "replay:" + tag_; }
    std::size_t size() const { return answers_.size(); }

private:
    std::unordered_map<std::string, std::string> answers_;
    std::string tag_;
};

}  // namespace kbvqa
