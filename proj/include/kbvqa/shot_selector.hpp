#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kbvqa/embedding.hpp"
#include "kbvqa/error.hpp"
#include "kbvqa/hashing.hpp"
#include "kbvqa/jsonl.hpp"
#include "kbvqa/store.hpp"

namespace kbvqa {

enum class ShotStrategy { avg_sim, random, precomputed };

inline std::string to_string(ShotStrategy s) {
    switch (s) {
        case ShotStrategy::avg_sim: return "avg_sim";
        case ShotStrategy::random: return "random";
        case ShotStrategy::precomputed: return "precomputed";
    }
    return "?";
}

inline ShotStrategy parse_strategy(const std::string& s) {
    if (s == "avg_sim") return ShotStrategy::avg_sim;
    if (s == "random") return ShotStrategy::random;
    if (s == "precomputed") return ShotStrategy::precomputed;
    throw InputError("unknown shot strategy '" + s + "' (expected avg_sim, random or precomputed)");
}

struct ShotRanking {
    std::string test_id;
    std::vector<std::string> ranked_train_ids;  // best first
    ShotStrategy strategy = ShotStrategy::avg_sim;
    std::optional<std::vector<double>> scores;

    friend bool operator==(const ShotRanking&, const ShotRanking&) = default;
};

struct ShotAssignment {
    std::string test_id;
    /// k lists of n train ids, each ordered least similar first, most similar last.
    std::vector<std::vector<std::string>> prompts;

    json to_json() const { return json{{"test_id", test_id}, {"prompts", prompts}}; }
    friend bool operator==(const ShotAssignment&, const ShotAssignment&) = default;
};

/// Orders `ids` by score descending, ties by id ascending, keeping the best `limit`.
/// Returns positions into `ids`.
template <typename Score>
std::vector<std::size_t> rank_by_score(const std::vector<std::string>& ids, const std::vector<Score>& scores,
                                       std::size_t limit) {
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    };
    const std::size_t keep = std::min(limit, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
    order.resize(keep);
    return order;
}

/// Ranks every train example by the mean of question-question and image-image cosine
/// similarity to the test sample. `limit` truncates the ranking (0 keeps all).
inline ShotRanking rank_avg_sim(const TestSample& test, const EmbeddingVector& test_question_emb, const Store& store,
                                std::size_t limit = 0) {
    const auto& train = store.train();
    if (train.empty()) throw InputError("rank_avg_sim: train store is empty");
    std::vector<std::string> ids;
    std::vector<double> scores;
    ids.reserve(train.size());
    scores.reserve(train.size());
    for (const auto& t : train) {
        ids.push_back(t.id);
        scores.push_back((cosine(test_question_emb, t.question_emb) + cosine(test.image_emb, t.image_emb)) / 2.0);
    }
    const auto order = rank_by_score(ids, scores, limit == 0 ? ids.size() : limit);
    ShotRanking out{test.id, {}, ShotStrategy::avg_sim, std::vector<double>{}};
    out.ranked_train_ids.reserve(order.size());
    out.scores->reserve(order.size());
    for (std::size_t i : order) {
        out.ranked_train_ids.push_back(ids[i]);
        out.scores->push_back(scores[i]);
    }
    return out;
}

inline ShotRanking rank_avg_sim(const TestSample& test, const Store& store, std::size_t limit = 0) {
    if (!test.question_emb) {
        throw InputError("rank_avg_sim: test record '" + test.id + "' has no question embedding");
    }
    return rank_avg_sim(test, *test.question_emb, store, limit);
}

namespace detail {

/// Unbiased draw in [0, bound) from a 64-bit engine; portable unlike std distributions.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;  // 2^64 mod bound
    for (;;) {
        const std::uint64_t r = rng();
        if (r >= threshold) return r % bound;
    }
}

}  // namespace detail

/// Seeded permutation of all train ids; a pure function of (seed, test id, store checksum).
inline ShotRanking rank_random(const std::string& test_id, const Store& store, std::uint64_t seed) {
    if (store.train().empty()) throw InputError("rank_random: train store is empty");
    std::vector<std::string> ids;
    ids.reserve(store.train().size());
    for (const auto& t : store.train()) ids.push_back(t.id);
    std::sort(ids.begin(), ids.end());

    std::uint64_t h = fnv1a64(std::to_string(seed));
    h = fnv1a64("\x1f" + test_id, h);
    h = fnv1a64("\x1f" + store.manifest().checksum, h);
    std::mt19937_64 rng(h);
    for (std::size_t i = ids.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(detail::bounded(rng, i));
        std::swap(ids[i - 1], ids[j]);
    }
    return ShotRanking{test_id, std::move(ids), ShotStrategy::random, std::nullopt};
}

/// Neighbor orderings produced by an external model (one JSONL line per test sample:
/// {"test_id": ..., "train_ids": [...]}), validated against the store at load time.
class NeighborFile {
public:
    static NeighborFile load(const std::filesystem::path& path, const Store& store) {
        NeighborFile nf;
        for_each_jsonl(path, [&](const json& r, std::size_t line) {
            const std::string where = path.string() + ":" + std::to_string(line);
            auto test_id = require_field<std::string>(r, "test_id", where);
            auto ids = require_field<std::vector<std::string>>(r, "train_ids", where);
            std::unordered_set<std::string> seen;
            for (const auto& id : ids) {
                if (store.find_train(id) == nullptr) {
                    throw InputError(where + ": unknown train id '" + id + "'");
                }
                if (!seen.insert(id).second) {
                    throw InputError(where + ": train id '" + id + "' listed twice");
                }
            }
            if (!nf.entries_.emplace(test_id, std::move(ids)).second) {
                throw InputError(where + ": duplicate test_id '" + test_id + "'");
            }
        });
        return nf;
    }

    static NeighborFile from_map(std::unordered_map<std::string, std::vector<std::string>> entries) {
        NeighborFile nf;
        nf.entries_ = std::move(entries);
        return nf;
    }

    const std::vector<std::string>* find(const std::string& test_id) const {
        auto it = entries_.find(test_id);
        return it == entries_.end() ? nullptr : &it->second;
    }

private:
    std::unordered_map<std::string, std::vector<std::string>> entries_;
};

inline ShotRanking rank_precomputed(const std::string& test_id, const NeighborFile& neighbors) {
    const auto* ids = neighbors.find(test_id);
    if (ids == nullptr) {
        throw SampleError(test_id, "no_neighbors", "neighbor file has no entry for test id '" + test_id + "'");
    }
    return ShotRanking{test_id, *ids, ShotStrategy::precomputed, std::nullopt};
}

/// Strided split of the top k*n ranks: prompt j gets ranks j, j+k, ..., j+(n-1)k, emitted
/// worst first so the most similar shot sits next to the test input.
inline ShotAssignment assign_shots(const ShotRanking& ranking, std::size_t n, std::size_t k) {
    if (n == 0 || k == 0) throw InputError("assign_shots: n and k must be positive");
    const std::size_t need = n * k;
    const std::size_t have = ranking.ranked_train_ids.size();
    if (have < need) {
        throw InputError("assign_shots: not enough in-context examples for '" + ranking.test_id + "': need " +
                         std::to_string(need) + ", have " + std::to_string(have));
    }
    ShotAssignment out{ranking.test_id, std::vector<std::vector<std::string>>(k)};
    for (std::size_t j = 0; j < k; ++j) {
        auto& prompt = out.prompts[j];
        prompt.reserve(n);
        for (std::size_t i = n; i-- > 0;) {
            prompt.push_back(ranking.ranked_train_ids[j + i * k]);
        }
    }
    return out;
}

}  // namespace kbvqa
