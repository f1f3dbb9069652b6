#pragma once

#include <future>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kbvqa/error.hpp"
#include "kbvqa/jsonl.hpp"
#include "kbvqa/llm_backend.hpp"
#include "kbvqa/prompt_builder.hpp"
#include "kbvqa/vqa_eval.hpp"

namespace kbvqa {

/// Cuts a continuation at the first stop marker and trims whitespace.
inline std::string extract_answer(std::string_view generation) {
    static constexpr std::string_view markers[] = {"\n", "Q:", "==="};
    std::size_t cut = generation.size();
    for (auto m : markers) cut = std::min(cut, generation.find(m));
    std::string_view s = generation.substr(0, cut);
    const auto b = s.find_first_not_of(" \t\r\n\f\v");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n\f\v");
    return std::string(s.substr(b, e - b + 1));
}

/// Most frequent answer; ties go to the answer that first appears at the lowest index.
inline std::string majority_vote(std::span<const std::string> answers) {
    if (answers.empty()) throw InputError("majority_vote: no answers");
    std::unordered_map<std::string_view, std::size_t> counts;
    for (const auto& a : answers) ++counts[a];
    const std::string* best = &answers.front();
    std::size_t best_count = 0;
    for (const auto& a : answers) {
        const std::size_t c = counts[a];
        if (c > best_count) {
            best = &a;
            best_count = c;
        }
    }
    return *best;
}

using Normalizer = std::function<std::string(std::string_view)>;

struct PredictionRecord {
    std::string test_id;
    /// One slot per prompt; empty for failed queries.
    std::vector<std::optional<std::string>> raw_generations;
    std::vector<std::optional<std::string>> extracted;
    std::vector<std::optional<std::string>> normalized;
    std::optional<std::string> voted_answer;
    std::map<std::string, std::size_t> vote_counts;
    std::size_t failed_queries = 0;
    std::vector<std::size_t> effective_n;

    bool failed() const { return !voted_answer.has_value(); }
    std::size_t empty_votes() const {
        auto it = vote_counts.find("");
        return it == vote_counts.end() ? 0 : it->second;
    }

    json to_json() const {
        auto opt_list = [](const std::vector<std::optional<std::string>>& v) {
            json a = json::array();
            for (const auto& x : v) a.push_back(x ? json(*x) : json(nullptr));
            return a;
        };
        return json{{"test_id", test_id},
                    {"status", failed() ? "failed" : "ok"},
                    {"raw_generations", opt_list(raw_generations)},
                    {"extracted", opt_list(extracted)},
                    {"normalized", opt_list(normalized)},
                    {"voted_answer", voted_answer ? json(*voted_answer) : json(nullptr)},
                    {"vote_counts", vote_counts},
                    {"failed_queries", failed_queries},
                    {"effective_n", effective_n}};
    }

    static PredictionRecord from_json(const json& r, const std::string& where) {
        PredictionRecord p;
        p.test_id = require_field<std::string>(r, "test_id", where);
        p.voted_answer = optional_field<std::string>(r, "voted_answer", where);
        p.failed_queries = optional_field<std::size_t>(r, "failed_queries", where).value_or(0);
        return p;
    }
};

inline std::string correlation_id(const std::string& test_id, std::size_t prompt_index) {
    return test_id + "#" + std::to_string(prompt_index);
}

/// Sends the bundle's k prompts, extracts and normalizes each answer, and votes over the
/// queries that succeeded. Responses are matched to prompts by correlation id.
inline PredictionRecord run_sample(const PromptBundle& bundle, CompletionBackend& backend, const DecodeParams& params,
                                   const Normalizer& normalizer = normalize) {
    const std::size_t k = bundle.prompts.size();
    if (k == 0) throw InputError("run_sample: bundle for '" + bundle.test_id + "' has no prompts");

    std::vector<CompletionRequest> requests;
    std::unordered_map<std::string, std::size_t> slot_of;
    for (std::size_t j = 0; j < k; ++j) {
        requests.push_back({correlation_id(bundle.test_id, j), bundle.prompts[j], params});
        slot_of.emplace(requests.back().correlation_id, j);
    }

    std::vector<std::optional<CompletionResponse>> responses(k);
    auto store = [&](CompletionResponse r) {
        auto it = slot_of.find(r.correlation_id);
        if (it == slot_of.end()) throw BackendError("response with unknown correlation id '" + r.correlation_id + "'");
        responses[it->second] = std::move(r);
    };
    if (backend.requires_ordered_dispatch() || k == 1) {
        for (const auto& req : requests) {
            try {
                store(backend.complete(req));
            } catch (const BackendError&) {
            }
        }
    } else {
        std::vector<std::future<CompletionResponse>> inflight;
        inflight.reserve(k);
        for (const auto& req : requests) {
            inflight.push_back(std::async(std::launch::async, [&backend, &req] { return backend.complete(req); }));
        }
        for (auto& f : inflight) {
            try {
                store(f.get());
            } catch (const BackendError&) {
            }
        }
    }

    PredictionRecord rec;
    rec.test_id = bundle.test_id;
    rec.effective_n = bundle.effective_n();
    std::vector<std::string> votes;
    for (std::size_t j = 0; j < k; ++j) {
        if (!responses[j]) {
            rec.raw_generations.emplace_back();
            rec.extracted.emplace_back();
            rec.normalized.emplace_back();
            ++rec.failed_queries;
            continue;
        }
        std::string extracted = extract_answer(responses[j]->text);
        std::string norm = normalizer(extracted);
        rec.raw_generations.emplace_back(responses[j]->text);
        rec.extracted.emplace_back(extracted);
        rec.normalized.emplace_back(norm);
        ++rec.vote_counts[norm];
        votes.push_back(std::move(norm));
    }
    if (!votes.empty()) rec.voted_answer = majority_vote(votes);
    return rec;
}

}  // namespace kbvqa
