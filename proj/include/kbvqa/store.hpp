#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kbvqa/embedding.hpp"
#include "kbvqa/error.hpp"
#include "kbvqa/hashing.hpp"
#include "kbvqa/jsonl.hpp"

namespace kbvqa {

struct CaptionEntry {
    std::string text;
    std::string emb_id;
    EmbeddingVector emb;
};

/// One in-context candidate drawn from the training split. `captions` are stored pre-ranked.
struct TrainExample {
    std::string id;
    std::string question;
    std::string answer;
    std::vector<std::string> captions;
    std::optional<std::vector<std::string>> generic_captions;
    std::string question_emb_id;
    std::string image_emb_id;
    EmbeddingVector question_emb;
    EmbeddingVector image_emb;
};

/// Inference-time input with its unranked caption candidates.
struct TestSample {
    std::string id;
    std::string question;
    std::vector<CaptionEntry> caption_entries;
    std::string image_emb_id;
    EmbeddingVector image_emb;
    std::optional<std::string> question_emb_id;
    std::optional<EmbeddingVector> question_emb;
    std::vector<std::string> human_answers;  // empty or exactly 10
    std::optional<std::vector<std::string>> generic_captions;
    std::optional<std::string> question_type;
};

struct StoreManifest {
    std::string train_path;
    std::string test_path;
    std::string embeddings_path;
    std::string train_sha256;
    std::string test_sha256;
    std::string embeddings_checksum;
    std::string model_tag;
    std::size_t dim = 0;
    /// Digest over all input checksums; identifies the store for seeded randomness.
    std::string checksum;

    json to_json() const {
        return json{{"train_path", train_path},
                    {"test_path", test_path},
                    {"embeddings_path", embeddings_path},
                    {"train_sha256", train_sha256},
                    {"test_sha256", test_sha256},
                    {"embeddings_checksum", embeddings_checksum},
                    {"model_tag", model_tag},
                    {"dim", dim},
                    {"checksum", checksum}};
    }
};

/// Immutable after construction; safe for concurrent readers.
class Store {
public:
    Store() = default;

    /// Validates dimensions, unit norms, id uniqueness and record invariants.
    Store(std::vector<TrainExample> train, std::vector<TestSample> test, StoreManifest manifest)
        : train_(std::move(train)), test_(std::move(test)), manifest_(std::move(manifest)) {
        validate();
    }

    const std::vector<TrainExample>& train() const noexcept { return train_; }
    const std::vector<TestSample>& test() const noexcept { return test_; }
    std::size_t dim() const noexcept { return manifest_.dim; }
    const StoreManifest& manifest() const noexcept { return manifest_; }

    const TrainExample* find_train(const std::string& id) const {
        auto it = train_index_.find(id);
        return it == train_index_.end() ? nullptr : &train_[it->second];
    }
    const TestSample* find_test(const std::string& id) const {
        auto it = test_index_.find(id);
        return it == test_index_.end() ? nullptr : &test_[it->second];
    }

private:
    void check_vector(const EmbeddingVector& v, const std::string& label) {
        if (manifest_.dim == 0) manifest_.dim = v.dim();
        if (v.dim() != manifest_.dim) {
            throw InputError("embedding '" + label + "' has dimension " + std::to_string(v.dim()) +
                             ", store dimension is " + std::to_string(manifest_.dim));
        }
        if (std::abs(v.norm() - 1.0) > 1e-6) {
            throw InputError("embedding '" + label + "' is not unit-norm");
        }
    }

    void validate() {
        for (std::size_t i = 0; i < train_.size(); ++i) {
            const auto& t = train_[i];
            if (!train_index_.emplace(t.id, i).second) {
                throw InputError("duplicate train id '" + t.id + "'");
            }
            if (t.captions.empty()) throw InputError("train record '" + t.id + "' has no captions");
            if (t.answer.empty()) throw InputError("train record '" + t.id + "' has an empty answer");
            check_vector(t.question_emb, t.question_emb_id);
            check_vector(t.image_emb, t.image_emb_id);
        }
        for (std::size_t i = 0; i < test_.size(); ++i) {
            const auto& s = test_[i];
            if (!test_index_.emplace(s.id, i).second) {
                throw InputError("duplicate test id '" + s.id + "'");
            }
            if (s.caption_entries.empty()) {
                throw InputError("test record '" + s.id + "' has no caption entries");
            }
            if (!s.human_answers.empty() && s.human_answers.size() != 10) {
                throw InputError("test record '" + s.id + "' must have 0 or 10 human answers, has " +
                                 std::to_string(s.human_answers.size()));
            }
            check_vector(s.image_emb, s.image_emb_id);
            if (s.question_emb) check_vector(*s.question_emb, s.question_emb_id.value_or(s.id));
            for (const auto& c : s.caption_entries) check_vector(c.emb, c.emb_id);
        }
    }

    std::vector<TrainExample> train_;
    std::vector<TestSample> test_;
    StoreManifest manifest_;
    std::unordered_map<std::string, std::size_t> train_index_;
    std::unordered_map<std::string, std::size_t> test_index_;
};

/// The binary embedding table: a JSON manifest {dim, count, model_tag, checksum}, a raw
/// little-endian float32 row-major file, and a sidecar JSON object mapping emb_id to row.
/// The binary and sidecar default to `<stem>.bin` and `<stem>.ids.json` next to the
/// manifest and may be overridden by the manifest keys `binary` and `index`.
class EmbeddingTable {
public:
    static EmbeddingTable load(const std::filesystem::path& manifest_path) {
        const json m = read_json(manifest_path);
        const std::string where = manifest_path.string();
        EmbeddingTable t;
        const auto dim = require_field<std::int64_t>(m, "dim", where);
        const auto count = require_field<std::int64_t>(m, "count", where);
        if (dim <= 0) throw InputError(where + ": dim must be positive");
        if (count < 0) throw InputError(where + ": count must be non-negative");
        t.dim_ = static_cast<std::size_t>(dim);
        t.model_tag_ = require_field<std::string>(m, "model_tag", where);
        t.checksum_ = require_field<std::string>(m, "checksum", where);

        const auto dir = manifest_path.parent_path();
        const auto stem = manifest_path.stem().string();
        const auto bin_path = dir / optional_field<std::string>(m, "binary", where).value_or(stem + ".bin");
        const auto idx_path = dir / optional_field<std::string>(m, "index", where).value_or(stem + ".ids.json");

        const std::string actual = sha256_file(bin_path);
        if (actual != t.checksum_) {
            throw InputError(bin_path.string() + ": checksum mismatch (manifest " + t.checksum_ +
                             ", file " + actual + ")");
        }
        const std::string raw = read_text(bin_path);
        const std::size_t rows = static_cast<std::size_t>(count);
        if (raw.size() != rows * t.dim_ * sizeof(float)) {
            throw InputError(bin_path.string() + ": size " + std::to_string(raw.size()) +
                             " does not match count*dim*4 = " + std::to_string(rows * t.dim_ * 4));
        }
        t.data_.resize(rows * t.dim_);
        for (std::size_t i = 0; i < t.data_.size(); ++i) {
            std::uint32_t bits = 0;
            std::memcpy(&bits, raw.data() + i * 4, 4);
            if constexpr (std::endian::native == std::endian::big) {
                bits = __builtin_bswap32(bits);
            }
            t.data_[i] = std::bit_cast<float>(bits);
        }

        const json idx = read_json(idx_path);
        if (!idx.is_object()) throw InputError(idx_path.string() + ": expected an object of emb_id -> row");
        if (idx.size() != rows) {
            throw InputError(idx_path.string() + ": " + std::to_string(idx.size()) +
                             " ids for " + std::to_string(rows) + " rows");
        }
        for (const auto& [id, row] : idx.items()) {
            if (!row.is_number_integer() || row.get<std::int64_t>() < 0 ||
                row.get<std::int64_t>() >= count) {
                throw InputError(idx_path.string() + ": bad row for '" + id + "'");
            }
            t.rows_.emplace(id, row.get<std::size_t>());
        }
        return t;
    }

    std::size_t dim() const noexcept { return dim_; }
    const std::string& model_tag() const noexcept { return model_tag_; }
    const std::string& checksum() const noexcept { return checksum_; }
    bool contains(const std::string& id) const { return rows_.count(id) != 0; }

    /// Resolves and normalizes one vector; throws naming the id when absent.
    EmbeddingVector get(const std::string& id, const std::string& referrer) const {
        auto it = rows_.find(id);
        if (it == rows_.end()) {
            throw InputError("missing embedding '" + id + "' referenced by " + referrer);
        }
        const float* begin = data_.data() + it->second * dim_;
        return EmbeddingVector::normalized(std::vector<float>(begin, begin + dim_), id);
    }

private:
    std::size_t dim_ = 0;
    std::string model_tag_;
    std::string checksum_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> rows_;
};

namespace detail {

inline std::optional<std::vector<std::string>> string_list(const json& r, const char* key, const std::string& where) {
    return optional_field<std::vector<std::string>>(r, key, where);
}

}  // namespace detail

/// Loads train/test JSONL and the embedding table into a validated Store.
inline Store ingest(const std::filesystem::path& train_path, const std::filesystem::path& test_path,
                    const std::filesystem::path& embeddings_path) {
    const EmbeddingTable table = EmbeddingTable::load(embeddings_path);

    std::vector<TrainExample> train;
    for_each_jsonl(train_path, [&](const json& r, std::size_t line) {
        const std::string where = train_path.string() + ":" + std::to_string(line);
        TrainExample t;
        t.id = require_field<std::string>(r, "id", where);
        const std::string ref = "train record '" + t.id + "'";
        t.question = require_field<std::string>(r, "question", where);
        t.answer = require_field<std::string>(r, "answer", where);
        t.captions = require_field<std::vector<std::string>>(r, "captions", where);
        t.generic_captions = detail::string_list(r, "generic_captions", where);
        t.question_emb_id = require_field<std::string>(r, "question_emb_id", where);
        t.image_emb_id = require_field<std::string>(r, "image_emb_id", where);
        t.question_emb = table.get(t.question_emb_id, ref);
        t.image_emb = table.get(t.image_emb_id, ref);
        train.push_back(std::move(t));
    });

    std::vector<TestSample> test;
    for_each_jsonl(test_path, [&](const json& r, std::size_t line) {
        const std::string where = test_path.string() + ":" + std::to_string(line);
        TestSample s;
        s.id = require_field<std::string>(r, "id", where);
        const std::string ref = "test record '" + s.id + "'";
        s.question = require_field<std::string>(r, "question", where);
        const auto entries = require_field<json>(r, "caption_entries", where);
        if (!entries.is_array()) throw InputError(where + ": 'caption_entries' must be an array");
        for (const auto& e : entries) {
            CaptionEntry c;
            c.text = require_field<std::string>(e, "text", where);
            c.emb_id = require_field<std::string>(e, "emb_id", where);
            c.emb = table.get(c.emb_id, ref);
            s.caption_entries.push_back(std::move(c));
        }
        s.image_emb_id = require_field<std::string>(r, "image_emb_id", where);
        s.image_emb = table.get(s.image_emb_id, ref);
        // Question embeddings follow the exporter's "q:<sample_id>:0" convention unless named.
        if (auto qid = optional_field<std::string>(r, "question_emb_id", where)) {
            s.question_emb_id = *qid;
            s.question_emb = table.get(*qid, ref);
        } else if (const std::string conv = "q:" + s.id + ":0"; table.contains(conv)) {
            s.question_emb_id = conv;
            s.question_emb = table.get(conv, ref);
        }
        s.human_answers = optional_field<std::vector<std::string>>(r, "human_answers", where)
                              .value_or(std::vector<std::string>{});
        s.generic_captions = detail::string_list(r, "generic_captions", where);
        s.question_type = optional_field<std::string>(r, "question_type", where);
        test.push_back(std::move(s));
    });

    StoreManifest m;
    m.train_path = train_path.string();
    m.test_path = test_path.string();
    m.embeddings_path = embeddings_path.string();
    m.train_sha256 = sha256_file(train_path);
    m.test_sha256 = sha256_file(test_path);
    m.embeddings_checksum = table.checksum();
    m.model_tag = table.model_tag();
    m.dim = table.dim();
    m.checksum = sha256_hex(m.train_sha256 + "\n" + m.test_sha256 + "\n" + m.embeddings_checksum);
    return Store(std::move(train), std::move(test), std::move(m));
}

/// Paths written by export_store.
struct ExportPaths {
    std::filesystem::path train;
    std::filesystem::path test;
    std::filesystem::path embeddings;
};

/// Writes the store back out in the ingestion formats. Each emb_id is written once, in
/// first-reference order (train records, then test records).
inline ExportPaths export_store(const Store& store, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    ExportPaths paths{dir / "train.jsonl", dir / "test.jsonl", dir / "embeddings.json"};

    std::vector<std::pair<std::string, const EmbeddingVector*>> rows;
    std::unordered_set<std::string> seen;
    auto add = [&](const std::string& id, const EmbeddingVector& v) {
        if (seen.insert(id).second) rows.emplace_back(id, &v);
    };

    std::vector<json> train_records;
    for (const auto& t : store.train()) {
        json r{{"id", t.id},
               {"question", t.question},
               {"answer", t.answer},
               {"captions", t.captions},
               {"question_emb_id", t.question_emb_id},
               {"image_emb_id", t.image_emb_id}};
        if (t.generic_captions) r["generic_captions"] = *t.generic_captions;
        train_records.push_back(std::move(r));
        add(t.question_emb_id, t.question_emb);
        add(t.image_emb_id, t.image_emb);
    }
    std::vector<json> test_records;
    for (const auto& s : store.test()) {
        json entries = json::array();
        for (const auto& c : s.caption_entries) {
            entries.push_back({{"text", c.text}, {"emb_id", c.emb_id}});
            add(c.emb_id, c.emb);
        }
        json r{{"id", s.id}, {"question", s.question}, {"caption_entries", entries}, {"image_emb_id", s.image_emb_id}};
        add(s.image_emb_id, s.image_emb);
        if (s.question_emb) {
            const std::string qid = s.question_emb_id.value_or("q:" + s.id + ":0");
            r["question_emb_id"] = qid;
            add(qid, *s.question_emb);
        }
        if (!s.human_answers.empty()) r["human_answers"] = s.human_answers;
        if (s.generic_captions) r["generic_captions"] = *s.generic_captions;
        if (s.question_type) r["question_type"] = *s.question_type;
        test_records.push_back(std::move(r));
    }
    write_text(paths.train, to_jsonl(train_records));
    write_text(paths.test, to_jsonl(test_records));

    std::string raw;
    raw.reserve(rows.size() * store.dim() * 4);
    json index = json::object();
    for (std::size_t row = 0; row < rows.size(); ++row) {
        index[rows[row].first] = row;
        for (float v : rows[row].second->values()) {
            std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
            if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
            char le[4];
            std::memcpy(le, &bits, 4);
            raw.append(le, 4);
        }
    }
    write_text(dir / "embeddings.bin", raw);
    write_text(dir / "embeddings.ids.json", index.dump());
    const json manifest{{"dim", store.dim()},
                        {"count", rows.size()},
                        {"model_tag", store.manifest().model_tag},
                        {"checksum", sha256_hex(raw)}};
    write_text(paths.embeddings, manifest.dump(2) + "\n");
    return paths;
}

/// Scoring-side view of a test record: only what the evaluator needs, no embeddings.
struct AnswerKeyEntry {
    std::string id;
    std::vector<std::string> human_answers;
    std::optional<std::string> question_type;
};

inline std::vector<AnswerKeyEntry> read_answer_key(const std::filesystem::path& dataset_path) {
    std::vector<AnswerKeyEntry> out;
    std::unordered_set<std::string> ids;
    for_each_jsonl(dataset_path, [&](const json& r, std::size_t line) {
        const std::string where = dataset_path.string() + ":" + std::to_string(line);
        AnswerKeyEntry e;
        e.id = require_field<std::string>(r, "id", where);
        if (!ids.insert(e.id).second) throw InputError(where + ": duplicate id '" + e.id + "'");
        e.human_answers = optional_field<std::vector<std::string>>(r, "human_answers", where)
                              .value_or(std::vector<std::string>{});
        if (!e.human_answers.empty() && e.human_answers.size() != 10) {
            throw InputError(where + ": human_answers must have 0 or 10 entries");
        }
        e.question_type = optional_field<std::string>(r, "question_type", where);
        out.push_back(std::move(e));
    });
    return out;
}

}  // namespace kbvqa
