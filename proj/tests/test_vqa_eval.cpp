#include <gtest/gtest.h>

#include <random>

#include "kbvqa/vqa_eval.hpp"
#include "oracles.hpp"

namespace {

using kbvqa::MetricVariant;

std::vector<std::string> humans(std::size_t matching, const std::string& answer = "red") {
    std::vector<std::string> h(10, "other");
    for (std::size_t i = 0; i < matching; ++i) h[i] = answer;
    return h;
}

TEST(Normalize, Examples) {
    EXPECT_EQ(kbvqa::normalize("The Red Car."), "red car");
    EXPECT_EQ(kbvqa::normalize("  Two   dogs!"), "2 dogs");
    EXPECT_EQ(kbvqa::normalize("an apple"), "apple");
    EXPECT_EQ(kbvqa::normalize("ten"), "10");
    EXPECT_EQ(kbvqa::normalize("eleven"), "eleven");
    EXPECT_EQ(kbvqa::normalize("t-shirt"), "t shirt");
    EXPECT_EQ(kbvqa::normalize("café"), "café");
    EXPECT_EQ(kbvqa::normalize(""), "");
    EXPECT_EQ(kbvqa::normalize("The Dog."), "dog");
    EXPECT_EQ(kbvqa::normalize("two"), "2");
    EXPECT_EQ(kbvqa::normalize("dog"), "dog");
    EXPECT_EQ(kbvqa::normalize("A"), "a");
    EXPECT_EQ(kbvqa::normalize("the a"), "the a");
}

void append_utf8(std::string& s, char32_t cp) {
    if (cp < 0x80) {
        s += static_cast<char>(cp);
    } else if (cp < 0x800) {
        s += static_cast<char>(0xC0 | (cp >> 6));
        s += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        s += static_cast<char>(0xE0 | (cp >> 12));
        s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        s += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        s += static_cast<char>(0xF0 | (cp >> 18));
        s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        s += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

TEST(NormalizeProperty, IdempotentOnRandomUnicode) {
    std::mt19937_64 rng(81);
    const std::vector<std::string> words{"the", "a", "an", "One", "TEN", "zero", "dog", "Cat", "x", " ", ",", "\t"};
    std::uniform_int_distribution<std::uint32_t> ascii(0x09, 0x7E), bmp(0xA0, 0xD7FF), astral(0x10000, 0x10FFFF);
    for (int trial = 0; trial < 10000; ++trial) {
        std::string s;
        const std::size_t len = rng() % 25;
        for (std::size_t i = 0; i < len; ++i) {
            switch (rng() % 5) {
                case 0: s += words[rng() % words.size()]; break;
                case 1: append_utf8(s, bmp(rng)); break;
                case 2: append_utf8(s, astral(rng)); break;
                default: append_utf8(s, ascii(rng)); break;
            }
        }
        const auto once = kbvqa::normalize(s);
        ASSERT_EQ(kbvqa::normalize(once), once) << s;
    }
}

TEST(SoftAccuracy, Examples) {
    EXPECT_EQ(kbvqa::soft_accuracy("red", humans(0)).accuracy, 0.0);
    EXPECT_EQ(kbvqa::soft_accuracy("red", humans(10)).accuracy, 1.0);
    EXPECT_DOUBLE_EQ(kbvqa::soft_accuracy("red", humans(3)).accuracy, 0.9);
    EXPECT_DOUBLE_EQ(kbvqa::soft_accuracy("Red.", humans(4, "the red")).accuracy, 1.0);
    EXPECT_EQ(kbvqa::soft_accuracy("red", humans(3)).matched_humans, 3);
    EXPECT_THROW(kbvqa::soft_accuracy("red", std::vector<std::string>(9, "red")), kbvqa::InputError);
}

TEST(SoftAccuracy, EveryMatchCountAgreesWithSubsetOracle) {
    for (std::size_t c = 0; c <= 10; ++c) {
        const auto h = humans(c);
        const auto expected = oracle::soft_accuracy("red", h);
        EXPECT_DOUBLE_EQ(kbvqa::soft_accuracy("red", h).accuracy, expected.value()) << c;
        EXPECT_DOUBLE_EQ(kbvqa::soft_accuracy("red", h, MetricVariant::direct).accuracy, std::min<double>(c, 3) / 3.0);
    }
}

TEST(SoftAccuracyProperty, PermutationInvariantAndMatchesOracle) {
    std::mt19937_64 rng(82);
    const std::vector<std::string> pool{"red", "blue", "green", "2"};
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<std::string> h(10);
        for (auto& a : h) a = pool[rng() % pool.size()];
        const std::string pred = pool[rng() % pool.size()];
        const double acc = kbvqa::soft_accuracy(pred, h).accuracy;
        ASSERT_DOUBLE_EQ(acc, oracle::soft_accuracy(pred, h).value());
        std::shuffle(h.begin(), h.end(), rng);
        ASSERT_EQ(kbvqa::soft_accuracy(pred, h).accuracy, acc);
    }
}

TEST(Aggregate, MeanInPercent) {
    std::vector<kbvqa::SampleScore> s{{"a", 1.0, 10, {}}, {"b", 0.0, 0, {}}};
    EXPECT_DOUBLE_EQ(kbvqa::aggregate(s).accuracy_pct, 50.0);
    s = {{"a", 0.9, 3, {}}};
    EXPECT_DOUBLE_EQ(kbvqa::aggregate(s).accuracy_pct, 90.0);
    s = {{"a", 0.9, 3, {}}, {"b", 0.6, 2, {}}, {"c", 0.3, 1, {}}};
    EXPECT_DOUBLE_EQ(kbvqa::aggregate(s).accuracy_pct, 60.0);
    s = {{"a", 1.0, 10, "color"}, {"b", 0.8, 0, "color"}, {"c", 0.0, 0, "count"}};
    const auto agg = kbvqa::aggregate(s);
    EXPECT_DOUBLE_EQ(agg.accuracy_pct, 60.0);
    EXPECT_DOUBLE_EQ(agg.per_type.at("color").accuracy_pct, 90.0);
    EXPECT_EQ(agg.per_type.at("count").n, 1u);
    EXPECT_THROW(kbvqa::aggregate(std::vector<kbvqa::SampleScore>{}), kbvqa::InputError);
}

TEST(AggregateProperty, PermutationInvariant) {
    std::mt19937_64 rng(83);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<kbvqa::SampleScore> s(1 + rng() % 30);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = {"v" + std::to_string(i), (rng() % 31) / 30.0, 0, {}};
        const double base = kbvqa::aggregate(s).accuracy_pct;
        std::shuffle(s.begin(), s.end(), rng);
        ASSERT_NEAR(kbvqa::aggregate(s).accuracy_pct, base, 1e-9);
    }
}

TEST(Evaluate, SkipsMissingPredictionsAndAnswers) {
    std::vector<kbvqa::AnswerKeyEntry> key{{"v2", humans(10), "color"}, {"v1", humans(3), "color"}, {"v3", {}, {}},
                                           {"v4", humans(1), {}}};
    const std::map<std::string, std::string> voted{{"v1", "red"}, {"v2", "blue"}, {"v3", "red"}};
    const auto r = kbvqa::evaluate(voted, key, MetricVariant::leave_one_out);
    ASSERT_EQ(r.scores.size(), 2u);
    EXPECT_EQ(r.scores[0].test_id, "v1");
    EXPECT_EQ(r.n_no_prediction, 1u);
    EXPECT_EQ(r.n_no_human_answers, 1u);
    EXPECT_EQ(r.n_skipped, 2u);
    EXPECT_DOUBLE_EQ(r.overall->accuracy_pct, 45.0);
    const auto summary = r.summary();
    EXPECT_EQ(summary["n_scored"], 2);
    EXPECT_EQ(summary["metric_variant"], "leave_one_out");
    EXPECT_NE(r.scores_jsonl().find("\"question_type\":\"color\""), std::string::npos);
}

TEST(Evaluate, NothingScoredGivesNullAccuracy) {
    std::vector<kbvqa::AnswerKeyEntry> key{{"v1", humans(3), {}}};
    const auto r = kbvqa::evaluate({}, key, MetricVariant::direct);
    EXPECT_TRUE(r.summary()["accuracy_pct"].is_null());
    EXPECT_EQ(r.summary()["metric_variant"], "direct");
}

}  // namespace
