#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kbvqa/error.hpp"
#include "kbvqa/jsonl.hpp"
#include "kbvqa/store.hpp"

namespace kbvqa {

namespace detail {

inline bool ascii_space(unsigned char c) { return c == ' ' || (c >= '\t' && c <= '\r'); }

inline bool ascii_punct(unsigned char c) {
    return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') || (c >= '{' && c <= '~');
}

}  // namespace detail

/// VQA answer normalization: ASCII lowercase, punctuation to spaces, articles dropped
/// (unless nothing else remains), number words zero..ten as digits, single-space joined.
/// Idempotent; bytes outside ASCII pass through untouched.
inline std::string normalize(std::string_view answer) {
    static constexpr std::array<std::pair<std::string_view, std::string_view>, 11> numbers{{
        {"zero", "0"}, {"one", "1"}, {"two", "2"}, {"three", "3"}, {"four", "4"}, {"five", "5"},
        {"six", "6"}, {"seven", "7"}, {"eight", "8"}, {"nine", "9"}, {"ten", "10"},
    }};
    std::string cleaned;
    cleaned.reserve(answer.size());
    for (char ch : answer) {
        const auto c = static_cast<unsigned char>(ch);
        if (c >= 'A' && c <= 'Z') {
            cleaned.push_back(static_cast<char>(c - 'A' + 'a'));
        } else if (detail::ascii_punct(c)) {
            cleaned.push_back(' ');
        } else {
            cleaned.push_back(ch);
        }
    }
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < cleaned.size()) {
        while (i < cleaned.size() && detail::ascii_space(static_cast<unsigned char>(cleaned[i]))) ++i;
        const std::size_t start = i;
        while (i < cleaned.size() && !detail::ascii_space(static_cast<unsigned char>(cleaned[i]))) ++i;
        if (start != i) words.emplace_back(cleaned.data() + start, i - start);
    }
    auto article = [](std::string_view w) { return w == "a" || w == "an" || w == "the"; };
    // An answer made only of articles ("a") is kept rather than erased.
    const bool keep_articles = std::all_of(words.begin(), words.end(), article);
    std::string out;
    for (std::string_view word : words) {
        if (!keep_articles && article(word)) continue;
        for (const auto& [name, digit] : numbers) {
            if (word == name) {
                word = digit;
                break;
            }
        }
        if (!out.empty()) out.push_back(' ');
        out.append(word);
    }
    return out;
}

enum class MetricVariant { leave_one_out, direct };

inline std::string to_string(MetricVariant v) { return v == MetricVariant::direct ? "direct" : "leave_one_out"; }

struct SampleScore {
    std::string test_id;
    double accuracy = 0.0;
    int matched_humans = 0;
    std::optional<std::string> question_type;
};

/// Soft VQA accuracy against 10 human answers. The leave-one-out variant averages
/// min(matches/3, 1) over the ten 9-answer subsets; the direct variant is min(matches/3, 1).
inline SampleScore soft_accuracy(std::string_view prediction, std::span<const std::string> humans,
                                 MetricVariant variant = MetricVariant::leave_one_out, std::string test_id = {}) {
    if (humans.size() != 10) {
        throw InputError("soft_accuracy: expected 10 human answers, got " + std::to_string(humans.size()));
    }
    const std::string pred = normalize(prediction);
    int matches = 0;
    for (const auto& h : humans) matches += normalize(h) == pred ? 1 : 0;

    double accuracy = 0.0;
    if (variant == MetricVariant::direct) {
        accuracy = std::min(matches, 3) / 3.0;
    } else {
        // Dropping a matching answer leaves matches-1; dropping another leaves matches.
        // Sum over subsets in thirds, then divide once.
        const int thirds = matches * std::min(matches - 1, 3) + (10 - matches) * std::min(matches, 3);
        accuracy = thirds / 30.0;
    }
    return SampleScore{std::move(test_id), accuracy, matches, std::nullopt};
}

struct TypeBreakdown {
    double accuracy_pct = 0.0;
    std::size_t n = 0;
};

struct AggregateResult {
    double accuracy_pct = 0.0;
    std::size_t n = 0;
    std::map<std::string, TypeBreakdown> per_type;
};

/// Mean accuracy in percent, with a per-question-type breakdown when types are present.
inline AggregateResult aggregate(std::span<const SampleScore> scores) {
    if (scores.empty()) throw InputError("aggregate: no scores");
    AggregateResult out;
    double total = 0.0;
    std::map<std::string, std::pair<double, std::size_t>> by_type;
    for (const auto& s : scores) {
        total += s.accuracy;
        if (s.question_type) {
            auto& [sum, n] = by_type[*s.question_type];
            sum += s.accuracy;
            ++n;
        }
    }
    out.n = scores.size();
    out.accuracy_pct = total * 100.0 / static_cast<double>(scores.size());
    for (const auto& [type, acc] : by_type) {
        out.per_type[type] = TypeBreakdown{acc.first * 100.0 / static_cast<double>(acc.second), acc.second};
    }
    return out;
}

struct EvalReport {
    MetricVariant variant = MetricVariant::leave_one_out;
    std::vector<SampleScore> scores;  // sorted by test id
    std::map<std::string, std::string> predictions;
    std::optional<AggregateResult> overall;
    std::size_t n_skipped = 0;
    std::size_t n_no_prediction = 0;
    std::size_t n_no_human_answers = 0;

    std::string scores_jsonl() const {
        std::string out;
        for (const auto& s : scores) {
            json r{{"test_id", s.test_id},
                   {"prediction", predictions.at(s.test_id)},
                   {"accuracy", s.accuracy},
                   {"matched_humans", s.matched_humans}};
            if (s.question_type) r["question_type"] = *s.question_type;
            out += r.dump() + "\n";
        }
        return out;
    }

    json summary() const {
        json per_type = json::object();
        if (overall) {
            for (const auto& [t, b] : overall->per_type) per_type[t] = {{"accuracy_pct", b.accuracy_pct}, {"n", b.n}};
        }
        return json{{"accuracy_pct", overall ? json(overall->accuracy_pct) : json(nullptr)},
                    {"n_scored", scores.size()},
                    {"n_skipped", n_skipped},
                    {"n_no_prediction", n_no_prediction},
                    {"n_no_human_answers", n_no_human_answers},
                    {"metric_variant", to_string(variant)},
                    {"per_question_type", per_type}};
    }
};

/// Scores voted answers against the answer key. Dataset samples without a voted answer
/// or without human answers are skipped and counted.
inline EvalReport evaluate(const std::map<std::string, std::string>& voted, std::span<const AnswerKeyEntry> key,
                           MetricVariant variant) {
    EvalReport report;
    report.variant = variant;
    std::vector<const AnswerKeyEntry*> sorted;
    for (const auto& e : key) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
    for (const auto* e : sorted) {
        auto it = voted.find(e->id);
        if (it == voted.end()) {
            ++report.n_no_prediction;
            ++report.n_skipped;
            continue;
        }
        if (e->human_answers.empty()) {
            ++report.n_no_human_answers;
            ++report.n_skipped;
            continue;
        }
        SampleScore s = soft_accuracy(it->second, e->human_answers, variant, e->id);
        s.question_type = e->question_type;
        report.predictions[e->id] = it->second;
        report.scores.push_back(std::move(s));
    }
    if (!report.scores.empty()) report.overall = aggregate(report.scores);
    return report;
}

}  // namespace kbvqa
