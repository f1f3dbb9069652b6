#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kbvqa/embedding.hpp"
#include "kbvqa/error.hpp"
#include "kbvqa/jsonl.hpp"
#include "kbvqa/store.hpp"

namespace kbvqa {

struct ScoredCaption {
    std::string text;
    double score = 0.0;
    std::size_t source_index = 0;  // position in the candidate list

    friend bool operator==(const ScoredCaption&, const ScoredCaption&) = default;
};

struct RankedCaptions {
    std::string sample_id;
    std::vector<ScoredCaption> captions;
    std::size_t m = 0;

    std::vector<std::string> texts() const {
        std::vector<std::string> out;
        out.reserve(captions.size());
        for (const auto& c : captions) out.push_back(c.text);
        return out;
    }

    json to_json() const {
        json caps = json::array();
        for (const auto& c : captions) caps.push_back({{"text", c.text}, {"score", c.score}});
        return json{{"sample_id", sample_id}, {"m", m}, {"captions", caps}};
    }
};

/// Top-m captions by cosine similarity to the image. Byte-equal duplicates collapse to
/// their highest-scoring copy; ties order by candidate index.
inline RankedCaptions rank_captions(std::span<const CaptionEntry> candidates, const EmbeddingVector& image_emb,
                                    std::size_t m, std::string sample_id = {}) {
    if (m == 0) throw InputError("rank_captions: m must be positive");
    if (candidates.empty()) throw InputError("rank_captions: no candidate captions for '" + sample_id + "'");

    std::vector<ScoredCaption> unique;
    std::unordered_map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double s = cosine(candidates[i].emb, image_emb);
        auto [it, inserted] = slot.emplace(candidates[i].text, unique.size());
        if (inserted) {
            unique.push_back({candidates[i].text, s, i});
        } else if (s > unique[it->second].score) {
            unique[it->second].score = s;
            unique[it->second].source_index = i;
        }
    }
    auto better = [](const ScoredCaption& a, const ScoredCaption& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.source_index < b.source_index;
    };
    const std::size_t keep = std::min(m, unique.size());
    std::partial_sort(unique.begin(), unique.begin() + static_cast<std::ptrdiff_t>(keep), unique.end(), better);
    unique.resize(keep);
    return RankedCaptions{std::move(sample_id), std::move(unique), m};
}

inline RankedCaptions rank_captions(const TestSample& sample, std::size_t m) {
    return rank_captions(sample.caption_entries, sample.image_emb, m, sample.id);
}

/// Pre-ranked caption lists (train examples, generic captions) are trusted; take a prefix.
inline RankedCaptions caption_prefix(const std::vector<std::string>& ranked, std::size_t m, std::string sample_id = {}) {
    if (m == 0) throw InputError("caption_prefix: m must be positive");
    RankedCaptions out{std::move(sample_id), {}, m};
    const std::size_t keep = std::min(m, ranked.size());
    for (std::size_t i = 0; i < keep; ++i) {
        // Stored order carries no score.
        out.captions.push_back({ranked[i], 0.0, i});
    }
    return out;
}

}  // namespace kbvqa
