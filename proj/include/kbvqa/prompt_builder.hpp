#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kbvqa/caption_ranker.hpp"
#include "kbvqa/error.hpp"
#include "kbvqa/jsonl.hpp"
#include "kbvqa/shot_selector.hpp"
#include "kbvqa/store.hpp"

namespace kbvqa {

/// Prompt layout strings. Within a block, the context, question and answer lines are
/// separated by '\n'; blocks are separated by `block_separator`.
struct PromptTemplate {
    std::string head = "Please answer the question according to the context.";
    std::string context_label = "Context: ";
    std::string question_label = "Q: ";
    std::string answer_label = "A: ";
    std::string block_separator = "\n===\n";
    std::string caption_joiner = ", ";

    void validate() const {
        if (context_label.empty() || question_label.empty() || answer_label.empty()) {
            throw InputError("prompt template labels must be non-empty");
        }
    }

    json to_json() const {
        return json{{"head", head},
                    {"context_label", context_label},
                    {"question_label", question_label},
                    {"answer_label", answer_label},
                    {"block_separator", block_separator},
                    {"caption_joiner", caption_joiner}};
    }

    friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;
};

/// A prompt before joining. Shot blocks are ordered least similar first.
struct PromptParts {
    std::string head;
    std::vector<std::string> shot_blocks;
    std::string test_block;
};

namespace detail {

inline std::string join(const std::vector<std::string>& items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i != 0) out += sep;
        out += items[i];
    }
    return out;
}

inline std::string context_line(const PromptTemplate& t, const std::vector<std::string>& captions) {
    return t.context_label + join(captions, t.caption_joiner);
}

}  // namespace detail

inline std::string shot_block(const PromptTemplate& t, const std::vector<std::string>& captions,
                              const std::string& question, const std::string& answer) {
    return detail::context_line(t, captions) + "\n" + t.question_label + question + "\n" + t.answer_label + answer;
}

/// The test block ends with the bare answer cue.
inline std::string test_block(const PromptTemplate& t, const std::vector<std::string>& captions,
                              const std::string& question) {
    if (captions.empty()) throw InputError("render: test captions are empty");
    return detail::context_line(t, captions) + "\n" + t.question_label + question + "\n" + t.answer_label;
}

inline PromptParts make_parts(const PromptTemplate& t, std::span<const TrainExample* const> shots,
                              std::span<const RankedCaptions> shot_captions, const std::string& test_question,
                              const RankedCaptions& test_captions) {
    t.validate();
    if (shots.size() != shot_captions.size()) {
        throw InputError("render: " + std::to_string(shots.size()) + " shots but " +
                         std::to_string(shot_captions.size()) + " caption lists");
    }
    PromptParts parts{t.head, {}, test_block(t, test_captions.texts(), test_question)};
    parts.shot_blocks.reserve(shots.size());
    for (std::size_t i = 0; i < shots.size(); ++i) {
        if (shot_captions[i].captions.empty()) {
            throw InputError("render: shot '" + shots[i]->id + "' has no captions");
        }
        parts.shot_blocks.push_back(shot_block(t, shot_captions[i].texts(), shots[i]->question, shots[i]->answer));
    }
    return parts;
}

inline std::string assemble(const PromptParts& parts, const PromptTemplate& t) {
    std::string out = parts.head;
    for (const auto& b : parts.shot_blocks) {
        out += t.block_separator;
        out += b;
    }
    out += t.block_separator;
    out += parts.test_block;
    return out;
}

inline std::string render(const PromptTemplate& t, std::span<const TrainExample* const> shots,
                          std::span<const RankedCaptions> shot_captions, const std::string& test_question,
                          const RankedCaptions& test_captions) {
    return assemble(make_parts(t, shots, shot_captions, test_question, test_captions), t);
}

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// Whitespace word count times 1.3, rounded up.
inline std::size_t estimate_tokens(std::string_view text) {
    std::size_t words = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
        if (!space && !in_word) ++words;
        in_word = !space;
    }
    return (words * 13 + 9) / 10;
}

struct BudgetResult {
    PromptParts parts;
    std::size_t dropped = 0;
};

/// Drops the least similar shots (front of the list) until the joined prompt fits.
/// The head and the test block are never removed; if they alone overflow, the sample
/// fails with reason "budget".
inline BudgetResult enforce_budget(PromptParts parts, const PromptTemplate& t, std::size_t max_tokens,
                                   const TokenCounter& count, const std::string& sample_id = {}) {
    BudgetResult out{std::move(parts), 0};
    auto& blocks = out.parts.shot_blocks;
    std::size_t first = 0;
    for (;;) {
        PromptParts view{out.parts.head, {blocks.begin() + static_cast<std::ptrdiff_t>(first), blocks.end()},
                         out.parts.test_block};
        const std::size_t tokens = count(assemble(view, t));
        if (tokens <= max_tokens) break;
        if (first == blocks.size()) {
            throw SampleError(sample_id, "budget",
                              "prompt for '" + sample_id + "' needs " + std::to_string(tokens) +
                                  " tokens without any shots, budget is " + std::to_string(max_tokens));
        }
        ++first;
    }
    blocks.erase(blocks.begin(), blocks.begin() + static_cast<std::ptrdiff_t>(first));
    out.dropped = first;
    return out;
}

struct PromptBundle {
    std::string test_id;
    std::vector<std::string> prompts;
    ShotAssignment assignment;
    std::vector<std::size_t> dropped_shots;

    /// Shots that survived budget trimming, per prompt.
    std::vector<std::size_t> effective_n() const {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < prompts.size(); ++j) {
            out.push_back(assignment.prompts[j].size() - dropped_shots[j]);
        }
        return out;
    }

    json to_json() const {
        return json{{"test_id", test_id},
                    {"prompts", prompts},
                    {"assignment", assignment.prompts},
                    {"dropped_shots", dropped_shots}};
    }
};

}  // namespace kbvqa
