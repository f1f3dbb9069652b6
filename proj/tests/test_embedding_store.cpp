#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "kbvqa/embedding.hpp"
#include "kbvqa/store.hpp"
#include "test_support.hpp"

namespace {

using kbvqa::cosine;
using kbvqa::EmbeddingVector;
using kbvqa::InputError;
using testing_support::vec;

TEST(Cosine, SelfSimilarityIsOne) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        const auto v = testing_support::random_unit(rng, 32);
        EXPECT_NEAR(cosine(v, v), 1.0, 1e-6);
    }
}

TEST(Cosine, OrthogonalIsZero) { EXPECT_EQ(cosine(vec({1, 0}), vec({0, 1})), 0.0); }

TEST(Cosine, HandComputedDotProduct) {
    // 0.6*0.8 + 0.8*0.6
    EXPECT_NEAR(cosine(vec({0.6f, 0.8f}), vec({0.8f, 0.6f})), 0.96, 1e-6);
}

TEST(Cosine, DimensionMismatchIsInputError) { EXPECT_THROW(cosine(vec({1, 0}), vec({1, 0, 0})), InputError); }

TEST(Cosine, SymmetricAndBounded) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 500; ++i) {
        const auto a = testing_support::random_unit(rng, 7);
        const auto b = testing_support::random_unit(rng, 7);
        EXPECT_EQ(cosine(a, b), cosine(b, a));
        EXPECT_LE(std::abs(cosine(a, b)), 1.0);
    }
    // Clamped even when rounding pushes a self-dot product past one.
    const auto v = vec({1.0f, 1.0f, 1.0f});
    EXPECT_LE(cosine(v, v), 1.0);
}

TEST(EmbeddingVector, RenormalizesToUnitLength) {
    const auto v = EmbeddingVector::normalized({1.2f, 1.6f});  // norm 2.0
    EXPECT_NEAR(v.norm(), 1.0, 1e-6);
    EXPECT_NEAR(v.values()[0], 0.6, 1e-6);
    EXPECT_NEAR(v.values()[1], 0.8, 1e-6);
}

TEST(EmbeddingVector, RejectsZeroNormAndNonFinite) {
    EXPECT_THROW(EmbeddingVector::normalized({0.0f, 0.0f}), InputError);
    EXPECT_THROW(EmbeddingVector::normalized({NAN, 1.0f}), InputError);
    EXPECT_THROW(EmbeddingVector::normalized({INFINITY, 1.0f}), InputError);
    EXPECT_THROW(EmbeddingVector::normalized({}), InputError);
}

TEST(EmbeddingVector, NormalizationIsIdempotentBitwise) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        auto raw = testing_support::random_raw(rng, 24);
        for (auto& x : raw) x *= 3.7f;
        const auto once = EmbeddingVector::normalized(raw);
        const auto twice = EmbeddingVector::normalized(testing_support::raw(once));
        EXPECT_EQ(once, twice);
    }
}

class FixtureIngest : public ::testing::Test {
protected:
    std::filesystem::path dir = testing_support::fixture_dir();
};

TEST_F(FixtureIngest, LoadsCountsAndDimension) {
    const auto store = kbvqa::ingest(dir / "train.jsonl", dir / "test.jsonl", dir / "embeddings.json");
    EXPECT_EQ(store.train().size(), 40u);
    EXPECT_EQ(store.test().size(), 10u);
    EXPECT_EQ(store.dim(), 16u);
    EXPECT_EQ(store.manifest().model_tag, "synthetic-fixture-v1");
    EXPECT_EQ(store.manifest().train_sha256, kbvqa::sha256_file(dir / "train.jsonl"));
    for (const auto& t : store.train()) {
        EXPECT_NEAR(t.question_emb.norm(), 1.0, 1e-6);
        EXPECT_NEAR(t.image_emb.norm(), 1.0, 1e-6);
    }
    // Odd-indexed samples omit question_emb_id and resolve through the q:<id>:0 convention.
    ASSERT_TRUE(store.find_test("v01")->question_emb.has_value());
    EXPECT_EQ(*store.find_test("v01")->question_emb_id, "q:v01:0");
}

TEST_F(FixtureIngest, ExportThenIngestRoundTrips) {
    const auto store = kbvqa::ingest(dir / "train.jsonl", dir / "test.jsonl", dir / "embeddings.json");
    const auto out = testing_support::scratch_dir("roundtrip");
    const auto paths = kbvqa::export_store(store, out);
    const auto again = kbvqa::ingest(paths.train, paths.test, paths.embeddings);
    ASSERT_EQ(again.train().size(), store.train().size());
    ASSERT_EQ(again.test().size(), store.test().size());
    for (std::size_t i = 0; i < store.train().size(); ++i) {
        const auto& a = store.train()[i];
        const auto& b = again.train()[i];
        EXPECT_EQ(a.id, b.id);
        EXPECT_EQ(a.question, b.question);
        EXPECT_EQ(a.answer, b.answer);
        EXPECT_EQ(a.captions, b.captions);
        EXPECT_EQ(a.question_emb, b.question_emb);
        EXPECT_EQ(a.image_emb, b.image_emb);
    }
    for (std::size_t i = 0; i < store.test().size(); ++i) {
        const auto& a = store.test()[i];
        const auto& b = again.test()[i];
        EXPECT_EQ(a.id, b.id);
        EXPECT_EQ(a.human_answers, b.human_answers);
        EXPECT_EQ(a.question_emb, b.question_emb);
        ASSERT_EQ(a.caption_entries.size(), b.caption_entries.size());
        for (std::size_t j = 0; j < a.caption_entries.size(); ++j) {
            EXPECT_EQ(a.caption_entries[j].text, b.caption_entries[j].text);
            EXPECT_EQ(a.caption_entries[j].emb, b.caption_entries[j].emb);
        }
    }
    // A second export of the re-ingested store is byte-identical (normalization idempotence).
    const auto out2 = testing_support::scratch_dir("roundtrip2");
    kbvqa::export_store(again, out2);
    EXPECT_EQ(kbvqa::read_text(out / "embeddings.bin"), kbvqa::read_text(out2 / "embeddings.bin"));
}

/// Writes a tiny dataset by hand: two train records, one test record.
struct TinyDataset {
    std::filesystem::path dir = testing_support::scratch_dir("tiny");
    std::vector<std::pair<std::string, std::vector<float>>> vectors{
        {"q:a", {1, 0}}, {"img:a", {0, 1}}, {"q:b", {2, 0}}, {"img:b", {0, 2}},
        {"cap:x:0", {1, 1}}, {"img:x", {1, 0}}, {"q:x", {0, 1}}};
    std::string train =
        R"({"id":"a","question":"qa?","answer":"yes","captions":["c1"],"question_emb_id":"q:a","image_emb_id":"img:a"})"
        "\n"
        R"({"id":"b","question":"qb?","answer":"no","captions":["c2"],"question_emb_id":"q:b","image_emb_id":"img:b"})"
        "\n";
    std::string test =
        R"({"id":"x","question":"qx?","caption_entries":[{"text":"t","emb_id":"cap:x:0"}],"image_emb_id":"img:x","question_emb_id":"q:x"})"
        "\n";

    void write(bool tamper = false) {
        kbvqa::write_text(dir / "train.jsonl", train);
        kbvqa::write_text(dir / "test.jsonl", test);
        std::string raw;
        kbvqa::json index = kbvqa::json::object();
        for (std::size_t r = 0; r < vectors.size(); ++r) {
            index[vectors[r].first] = r;
            for (float f : vectors[r].second) raw.append(reinterpret_cast<const char*>(&f), 4);
        }
        const std::string checksum = kbvqa::sha256_hex(raw);
        if (tamper) raw[5] = static_cast<char>(raw[5] ^ 0x01);
        kbvqa::write_text(dir / "emb.bin", raw);
        kbvqa::write_text(dir / "emb.ids.json", index.dump());
        kbvqa::write_text(dir / "emb.json", kbvqa::json{{"dim", 2}, {"count", vectors.size()}, {"model_tag", "t"}, {"checksum", checksum}}.dump());
    }
    kbvqa::Store load() { return kbvqa::ingest(dir / "train.jsonl", dir / "test.jsonl", dir / "emb.json"); }
};

TEST(Ingest, WellFormedInputRoundTripsCounts) {
    TinyDataset d;
    d.write();
    const auto store = d.load();
    EXPECT_EQ(store.train().size(), 2u);
    EXPECT_EQ(store.test().size(), 1u);
}

TEST(Ingest, NormTwoVectorIsRescaled) {
    TinyDataset d;
    d.write();
    const auto store = d.load();
    const auto& b = *store.find_train("b");
    EXPECT_NEAR(b.question_emb.norm(), 1.0, 1e-6);
    EXPECT_FLOAT_EQ(b.question_emb.values()[0], 1.0f);
    EXPECT_FLOAT_EQ(b.question_emb.values()[1], 0.0f);
}

TEST(Ingest, MissingEmbeddingNamesTheId) {
    TinyDataset d;
    d.train = R"({"id":"a","question":"qa?","answer":"yes","captions":["c1"],"question_emb_id":"q_99","image_emb_id":"img:a"})"
              "\n";
    d.write();
    try {
        d.load();
        FAIL() << "expected InputError";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("q_99"), std::string::npos) << e.what();
    }
}

TEST(Ingest, ZeroNormVectorIsFatal) {
    TinyDataset d;
    d.vectors[0].second = {0, 0};
    d.write();
    EXPECT_THROW(d.load(), InputError);
}

TEST(Ingest, DuplicateIdsRejected) {
    TinyDataset d;
    d.train += R"({"id":"a","question":"again?","answer":"x","captions":["c"],"question_emb_id":"q:a","image_emb_id":"img:a"})"
               "\n";
    d.write();
    EXPECT_THROW(d.load(), InputError);
}

TEST(Ingest, ChecksumTamperDetected) {
    TinyDataset d;
    d.write(/*tamper=*/true);
    try {
        d.load();
        FAIL() << "expected checksum failure";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
    }
}

TEST(Ingest, HumanAnswersMustBeZeroOrTen) {
    TinyDataset d;
    d.test = R"({"id":"x","question":"qx?","caption_entries":[{"text":"t","emb_id":"cap:x:0"}],"image_emb_id":"img:x","human_answers":["a","b"]})"
             "\n";
    d.write();
    EXPECT_THROW(d.load(), InputError);
}

TEST(Ingest, EmptyCaptionsOrAnswerRejected) {
    TinyDataset d;
    d.train = R"({"id":"a","question":"qa?","answer":"","captions":["c1"],"question_emb_id":"q:a","image_emb_id":"img:a"})"
              "\n";
    d.write();
    EXPECT_THROW(d.load(), InputError);
    TinyDataset e;
    e.test = R"({"id":"x","question":"qx?","caption_entries":[],"image_emb_id":"img:x"})"
             "\n";
    e.write();
    EXPECT_THROW(e.load(), InputError);
}

TEST(Store, DimensionInconsistencyIsFatal) {
    std::mt19937_64 rng(4);
    auto store = testing_support::random_store(rng, 2, 1, 4);
    auto train = store.train();
    train[1].image_emb = testing_support::random_unit(rng, 5);
    kbvqa::StoreManifest m;
    EXPECT_THROW(kbvqa::Store(train, store.test(), m), InputError);
}

}  // namespace
