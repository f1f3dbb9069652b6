#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "kbvqa/caption_ranker.hpp"
#include "kbvqa/ensemble.hpp"
#include "kbvqa/error.hpp"
#include "kbvqa/llm_backend.hpp"
#include "kbvqa/prompt_builder.hpp"
#include "kbvqa/shot_selector.hpp"
#include "kbvqa/store.hpp"
#include "kbvqa/vqa_eval.hpp"

namespace kbvqa {

enum class CaptionType { question_informative, generic };

inline std::string to_string(CaptionType c) {
    return c == CaptionType::generic ? "generic" : "question_informative";
}

inline CaptionType parse_caption_type(const std::string& s) {
    if (s == "question_informative") return CaptionType::question_informative;
    if (s == "generic") return CaptionType::generic;
    throw InputError("unknown caption type '" + s + "' (expected question_informative or generic)");
}

/// Every knob that shapes predictions.
struct PipelineConfig {
    ShotStrategy strategy = ShotStrategy::avg_sim;
    std::size_t n = 10;  // shots per prompt
    std::size_t m = 9;   // captions per shot and per test input
    std::size_t k = 5;   // prompts per test sample
    std::uint64_t seed = 0;
    CaptionType caption_type = CaptionType::question_informative;
    std::size_t max_tokens = 2048;
    PromptTemplate prompt_template;
    DecodeParams decode;
    MetricVariant metric = MetricVariant::leave_one_out;
    std::size_t jobs = 1;

    void validate() const {
        if (n == 0 || m == 0 || k == 0) throw InputError("n, m and k must be positive");
        if (jobs == 0) throw InputError("jobs must be positive");
        prompt_template.validate();
        decode.validate();
    }

    /// Everything except `jobs`, which cannot change results.
    json to_json() const {
        return json{{"strategy", to_string(strategy)},
                    {"n", n},
                    {"m", m},
                    {"k", k},
                    {"seed", seed},
                    {"caption_type", to_string(caption_type)},
                    {"max_tokens", max_tokens},
                    {"template", prompt_template.to_json()},
                    {"decode", decode.to_json()},
                    {"metric_variant", to_string(metric)}};
    }
};

struct SkippedSample {
    std::string test_id;
    std::string reason;
    std::string message;
};

struct RunResult {
    std::vector<PredictionRecord> predictions;  // sorted by test id
    std::vector<PromptBundle> bundles;          // sorted by test id
    std::vector<SkippedSample> skipped;         // sorted by test id
    std::vector<std::string> degradations;

    std::map<std::string, std::string> voted() const {
        std::map<std::string, std::string> out;
        for (const auto& p : predictions) {
            if (p.voted_answer) out.emplace(p.test_id, *p.voted_answer);
        }
        return out;
    }

    double effective_n_mean() const {
        std::size_t total = 0;
        std::size_t count = 0;
        for (const auto& b : bundles) {
            for (std::size_t e : b.effective_n()) {
                total += e;
                ++count;
            }
        }
        return count == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(count);
    }

    std::string predictions_jsonl() const {
        std::string out;
        for (const auto& p : predictions) out += p.to_json().dump() + "\n";
        return out;
    }

    std::string bundles_jsonl() const {
        std::string out;
        for (const auto& b : bundles) out += b.to_json().dump() + "\n";
        return out;
    }

    json summary() const {
        std::size_t failed = 0, failed_queries = 0, total_queries = 0, empty_votes = 0;
        for (const auto& p : predictions) {
            failed += p.failed() ? 1 : 0;
            failed_queries += p.failed_queries;
            total_queries += p.raw_generations.size();
            empty_votes += p.empty_votes();
        }
        json skipped_list = json::array();
        for (const auto& s : skipped) skipped_list.push_back({{"test_id", s.test_id}, {"reason", s.reason}});
        return json{{"n_predicted", predictions.size() - failed},
                    {"n_failed", failed},
                    {"n_skipped", skipped.size()},
                    {"skipped", skipped_list},
                    {"queries_total", total_queries},
                    {"queries_failed", failed_queries},
                    {"query_failure_rate",
                     total_queries == 0 ? 0.0 : static_cast<double>(failed_queries) / static_cast<double>(total_queries)},
                    {"empty_answer_votes", empty_votes},
                    {"effective_n_mean", effective_n_mean()},
                    {"degradations", degradations}};
    }
};

/// Runs the few-shot ensemble over a store. Caption and shot rankings are memoized so a
/// sweep can reuse them across configurations; memoized values are exactly what a fresh
/// computation returns.
class Pipeline {
public:
    Pipeline(std::shared_ptr<const Store> store, std::optional<NeighborFile> neighbors = std::nullopt,
             bool use_caches = true)
        : store_(std::move(store)), neighbors_(std::move(neighbors)), use_caches_(use_caches) {}

    const Store& store() const { return *store_; }

    RankedCaptions test_captions(const TestSample& s, std::size_t m, CaptionType type) const {
        if (type == CaptionType::generic) {
            if (!s.generic_captions || s.generic_captions->empty()) {
                throw InputError("test record '" + s.id + "' lacks the 'generic_captions' field");
            }
            return caption_prefix(*s.generic_captions, m, s.id);
        }
        if (!use_caches_) return rank_captions(s, m);
        const auto key = std::make_pair(s.id, m);
        {
            std::shared_lock lock(cache_mutex_);
            if (auto it = caption_cache_.find(key); it != caption_cache_.end()) return it->second;
        }
        RankedCaptions r = rank_captions(s, m);
        std::unique_lock lock(cache_mutex_);
        caption_cache_.emplace(key, r);
        return r;
    }

    RankedCaptions train_captions(const TrainExample& t, std::size_t m, CaptionType type) const {
        if (type == CaptionType::generic) {
            if (!t.generic_captions || t.generic_captions->empty()) {
                throw InputError("train record '" + t.id + "' lacks the 'generic_captions' field");
            }
            return caption_prefix(*t.generic_captions, m, t.id);
        }
        return caption_prefix(t.captions, m, t.id);
    }

    /// At least `needed` ranks (or the whole train store when smaller).
    ShotRanking shot_ranking(const TestSample& s, ShotStrategy strategy, std::uint64_t seed, std::size_t needed) const {
        if (strategy == ShotStrategy::precomputed) {
            if (!neighbors_) throw InputError("precomputed strategy requires a neighbor file");
            return rank_precomputed(s.id, *neighbors_);
        }
        const auto key = std::make_tuple(s.id, strategy, strategy == ShotStrategy::random ? seed : 0);
        if (use_caches_) {
            std::shared_lock lock(cache_mutex_);
            if (auto it = shot_cache_.find(key); it != shot_cache_.end()) {
                const auto& r = it->second;
                if (r.ranked_train_ids.size() >= needed || r.ranked_train_ids.size() == store_->train().size()) {
                    return truncated(r, needed);
                }
            }
        }
        ShotRanking r = strategy == ShotStrategy::random ? rank_random(s.id, *store_, seed)
                                                         : rank_avg_sim(s, *store_, needed);
        if (use_caches_) {
            std::unique_lock lock(cache_mutex_);
            shot_cache_.insert_or_assign(key, r);
        }
        return truncated(r, needed);
    }

    PromptBundle build_bundle(const TestSample& s, const PipelineConfig& cfg, const TokenCounter& counter) const {
        const RankedCaptions test_caps = test_captions(s, cfg.m, cfg.caption_type);
        const ShotRanking ranking = shot_ranking(s, cfg.strategy, cfg.seed, cfg.n * cfg.k);
        PromptBundle bundle{s.id, {}, assign_shots(ranking, cfg.n, cfg.k), {}};
        for (const auto& ids : bundle.assignment.prompts) {
            std::vector<const TrainExample*> shots;
            std::vector<RankedCaptions> caps;
            for (const auto& id : ids) {
                const TrainExample* t = store_->find_train(id);
                if (t == nullptr) throw InputError("unknown train id '" + id + "'");
                shots.push_back(t);
                caps.push_back(train_captions(*t, cfg.m, cfg.caption_type));
            }
            PromptParts parts = make_parts(cfg.prompt_template, shots, caps, s.question, test_caps);
            BudgetResult fitted = enforce_budget(std::move(parts), cfg.prompt_template, cfg.max_tokens, counter, s.id);
            bundle.prompts.push_back(assemble(fitted.parts, cfg.prompt_template));
            bundle.dropped_shots.push_back(fitted.dropped);
        }
        return bundle;
    }

    /// Builds prompts (and, unless `dry_run`, queries the backend) for the selected test
    /// samples, or for all of them when `only` is empty. Per-sample errors are collected;
    /// input errors abort the run.
    RunResult run(const PipelineConfig& cfg, CompletionBackend* backend, bool dry_run = false,
                  const std::vector<std::string>& only = {}) const {
        cfg.validate();
        if (!dry_run && backend == nullptr) throw InputError("run: no backend configured");
        std::vector<const TestSample*> samples;
        if (only.empty()) {
            for (const auto& s : store_->test()) samples.push_back(&s);
        } else {
            for (const auto& id : only) {
                const TestSample* s = store_->find_test(id);
                if (s == nullptr) throw InputError("unknown test id '" + id + "'");
                samples.push_back(s);
            }
        }
        TokenCounter counter = estimate_tokens;
        if (backend != nullptr) {
            if (auto exact = backend->token_counter()) counter = *exact;
        }

        struct Slot {
            std::optional<PromptBundle> bundle;
            std::optional<PredictionRecord> record;
            std::optional<SkippedSample> skipped;
        };
        std::vector<Slot> slots(samples.size());
        std::atomic<std::size_t> next{0};
        std::exception_ptr fatal;
        std::mutex fatal_mutex;
        auto work = [&] {
            for (std::size_t i = next.fetch_add(1); i < samples.size(); i = next.fetch_add(1)) {
                {
                    std::lock_guard lock(fatal_mutex);
                    if (fatal) return;
                }
                const TestSample& s = *samples[i];
                try {
                    PromptBundle bundle = build_bundle(s, cfg, counter);
                    if (!dry_run) slots[i].record = run_sample(bundle, *backend, cfg.decode);
                    slots[i].bundle = std::move(bundle);
                } catch (const SampleError& e) {
                    slots[i].skipped = SkippedSample{s.id, e.reason(), e.what()};
                } catch (...) {
                    std::lock_guard lock(fatal_mutex);
                    if (!fatal) fatal = std::current_exception();
                }
            }
        };
        const std::size_t workers = std::min(cfg.jobs, std::max<std::size_t>(samples.size(), 1));
        if (workers <= 1) {
            work();
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        }
        if (fatal) std::rethrow_exception(fatal);

        RunResult result;
        for (auto& slot : slots) {
            if (slot.skipped) result.skipped.push_back(std::move(*slot.skipped));
            if (slot.bundle) result.bundles.push_back(std::move(*slot.bundle));
            if (slot.record) result.predictions.push_back(std::move(*slot.record));
        }
        auto by_id = [](const auto& a, const auto& b) { return a.test_id < b.test_id; };
        std::sort(result.predictions.begin(), result.predictions.end(), by_id);
        std::sort(result.bundles.begin(), result.bundles.end(), by_id);
        std::sort(result.skipped.begin(), result.skipped.end(), by_id);
        if (backend != nullptr) result.degradations = backend->degradations();
        return result;
    }

private:
    static ShotRanking truncated(const ShotRanking& r, std::size_t needed) {
        if (r.ranked_train_ids.size() <= needed) return r;
        ShotRanking out{r.test_id,
                        {r.ranked_train_ids.begin(), r.ranked_train_ids.begin() + static_cast<std::ptrdiff_t>(needed)},
                        r.strategy,
                        std::nullopt};
        if (r.scores) out.scores = std::vector<double>(r.scores->begin(), r.scores->begin() + static_cast<std::ptrdiff_t>(needed));
        return out;
    }

    std::shared_ptr<const Store> store_;
    std::optional<NeighborFile> neighbors_;
    bool use_caches_;
    mutable std::shared_mutex cache_mutex_;
    mutable std::map<std::pair<std::string, std::size_t>, RankedCaptions> caption_cache_;
    mutable std::map<std::tuple<std::string, ShotStrategy, std::uint64_t>, ShotRanking> shot_cache_;
};

}  // namespace kbvqa
