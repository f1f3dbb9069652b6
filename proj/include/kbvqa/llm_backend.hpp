#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "kbvqa/error.hpp"
#include "kbvqa/hashing.hpp"
#include "kbvqa/jsonl.hpp"
#include "kbvqa/prompt_builder.hpp"

namespace kbvqa {

struct DecodeParams {
    std::size_t beam_size = 2;
    std::size_t max_new_tokens = 5;
    std::vector<std::string> stop_sequences{"\n", "Q:", "==="};
    /// Extra generation keys forwarded verbatim to the endpoint (e.g. length_penalty).
    json passthrough = json::object();

    void validate() const {
        if (beam_size == 0) throw InputError("decode: beam_size must be positive");
        if (max_new_tokens == 0) throw InputError("decode: max_new_tokens must be positive");
        if (!passthrough.is_object()) throw InputError("decode: passthrough must be an object");
    }

    json to_json() const {
        return json{{"beam_size", beam_size},
                    {"max_new_tokens", max_new_tokens},
                    {"stop_sequences", stop_sequences},
                    {"passthrough", passthrough}};
    }
};

struct CompletionRequest {
    std::string correlation_id;
    std::string prompt;
    DecodeParams params;
};

struct CompletionResponse {
    std::string correlation_id;
    std::string text;
    std::string backend_tag;
    std::chrono::milliseconds latency{0};
};

/// A text-completion service. Implementations must be safe to call from many threads.
class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;

    virtual CompletionResponse complete(const CompletionRequest& request) = 0;
    virtual std::string tag() const = 0;

    /// True when responses depend on call order (scripted mocks); callers then dispatch
    /// one request at a time.
    virtual bool requires_ordered_dispatch() const { return false; }
    /// An exact tokenizer, when the backend can provide one.
    virtual std::optional<TokenCounter> token_counter() const { return std::nullopt; }
    /// Human-readable notes on behavior that deviated from the requested decode setup.
    virtual std::vector<std::string> degradations() const { return {}; }

protected:
    static void validate(const CompletionRequest& request) {
        if (request.prompt.empty()) throw InputError("completion request '" + request.correlation_id + "' has an empty prompt");
        request.params.validate();
    }
};

/// Caps the number of in-flight requests across threads.
class ConcurrencyLimiter {
public:
    explicit ConcurrencyLimiter(std::size_t limit) : available_(limit == 0 ? 1 : limit) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return available_ > 0; });
        --available_;
    }
    void release() {
        {
            std::lock_guard lock(mutex_);
            ++available_;
        }
        cv_.notify_one();
    }

    class Slot {
    public:
        explicit Slot(ConcurrencyLimiter& l) : limiter_(l) { limiter_.acquire(); }
        ~Slot() { limiter_.release(); }
        Slot(const Slot&) = delete;
        Slot& operator=(const Slot&) = delete;

    private:
        ConcurrencyLimiter& limiter_;
    };

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::size_t available_;
};

/// Returns the text after the last line starting with `label`, trimmed.
inline std::string last_question(std::string_view prompt, std::string_view label = "Q:") {
    std::optional<std::string_view> found;
    std::size_t pos = 0;
    while (pos <= prompt.size()) {
        const std::size_t end = std::min(prompt.find('\n', pos), prompt.size());
        const std::string_view line = prompt.substr(pos, end - pos);
        if (line.substr(0, label.size()) == label) found = line.substr(label.size());
        pos = end + 1;
    }
    if (!found) return {};
    std::string_view q = *found;
    const auto b = q.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = q.find_last_not_of(" \t\r");
    return std::string(q.substr(b, e - b + 1));
}

/// Deterministic stand-in for a completion endpoint.
class MockBackend final : public CompletionBackend {
public:
    enum class Mode { scripted, lookup, echo_hash };
    using DelayFn = std::function<std::chrono::milliseconds(const CompletionRequest&)>;

    /// Pops answers in call order; exhausting the queue is a test bug and throws logic_error.
    static MockBackend scripted(std::deque<std::string> answers) {
        MockBackend b(Mode::scripted);
        b.queue_ = std::move(answers);
        return b;
    }
    /// Answers by looking up the prompt's last question line; unmapped questions get "unknown".
    static MockBackend lookup(std::map<std::string, std::string> table, std::string question_label = "Q:") {
        MockBackend b(Mode::lookup);
        b.table_ = std::move(table);
        b.question_label_ = std::move(question_label);
        return b;
    }
    /// Answers with a 16-hex-digit FNV-1a hash of the prompt.
    static MockBackend echo_hash() { return MockBackend(Mode::echo_hash); }

    MockBackend(MockBackend&& other) noexcept
        : mode_(other.mode_), queue_(std::move(other.queue_)), table_(std::move(other.table_)),
          question_label_(std::move(other.question_label_)), failing_(std::move(other.failing_)),
          delay_(std::move(other.delay_)), calls_(other.calls_) {}

    /// Requests with these correlation ids fail with BackendError.
    MockBackend& fail_on(std::set<std::string> correlation_ids) {
        failing_ = std::move(correlation_ids);
        return *this;
    }
    /// Sleeps before answering; used to shuffle response arrival order.
    MockBackend& with_delay(DelayFn delay) {
        delay_ = std::move(delay);
        return *this;
    }

    CompletionResponse complete(const CompletionRequest& request) override {
        validate(request);
        const auto start = std::chrono::steady_clock::now();
        if (delay_) std::this_thread::sleep_for(delay_(request));
        std::string text;
        {
            std::lock_guard lock(mutex_);
            ++calls_;
            if (failing_.count(request.correlation_id) != 0) {
                throw BackendError("mock failure for '" + request.correlation_id + "'");
            }
            switch (mode_) {
                case Mode::scripted:
                    if (queue_.empty()) throw std::logic_error("mock backend: scripted queue exhausted");
                    text = std::move(queue_.front());
                    queue_.pop_front();
                    break;
                case Mode::lookup: {
                    auto it = table_.find(last_question(request.prompt, question_label_));
                    text = it == table_.end() ? "unknown" : it->second;
                    break;
                }
                case Mode::echo_hash:
                    text = hex64(fnv1a64(request.prompt));
                    break;
            }
        }
        return CompletionResponse{request.correlation_id, std::move(text), tag(),
                                  std::chrono::duration_cast<std::chrono::milliseconds>(
                                      std::chrono::steady_clock::now() - start)};
    }

    std::string tag() const override {
        switch (mode_) {
            case Mode::scripted: return "mock:scripted";
            case Mode::lookup: return "mock:lookup";
            case Mode::echo_hash: return "mock:echo_hash";
        }
        return "mock";
    }

    bool requires_ordered_dispatch() const override { return mode_ == Mode::scripted; }

    std::size_t calls() const {
        std::lock_guard lock(mutex_);
        return calls_;
    }

private:
    explicit MockBackend(Mode mode) : mode_(mode) {}

    Mode mode_;
    std::deque<std::string> queue_;
    std::map<std::string, std::string> table_;
    std::string question_label_ = "Q:";
    std::set<std::string> failing_;
    DelayFn delay_;
    mutable std::mutex mutex_;
    std::size_t calls_ = 0;
};

}  // namespace kbvqa
