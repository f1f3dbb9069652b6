#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "kbvqa/error.hpp"
#include "kbvqa/http_backend.hpp"
#include "kbvqa/jsonl.hpp"
#include "kbvqa/pipeline.hpp"

namespace kbvqa {

enum class MockMode { lookup, echo_hash };

/// Everything a run needs; serialized verbatim into manifest.json.
struct RunConfig {
    std::filesystem::path train_path;
    std::filesystem::path test_path;
    std::filesystem::path embeddings_path;
    std::optional<std::filesystem::path> neighbors_path;
    PipelineConfig pipeline;
    BackendConfig backend;
    MockMode mock_mode = MockMode::lookup;
    std::optional<std::filesystem::path> mock_table_path;
    std::filesystem::path output_dir = "out";

    json to_json() const {
        json b = backend.to_json();
        b["mock_mode"] = mock_mode == MockMode::lookup ? "lookup" : "echo_hash";
        b["mock_table"] = mock_table_path ? json(mock_table_path->string()) : json(nullptr);
        return json{{"data",
                     {{"train", train_path.string()},
                      {"test", test_path.string()},
                      {"embeddings", embeddings_path.string()},
                      {"neighbors", neighbors_path ? json(neighbors_path->string()) : json(nullptr)}}},
                    {"pipeline", pipeline.to_json()},
                    {"backend", b}};
    }
};

namespace detail {

/// Double-quoted INI values keep surrounding spaces and understand \n, \t, \" and \\.
inline std::string ini_string(std::string raw) {
    if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"') return raw;
    std::string out;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
        if (raw[i] == '\\' && i + 2 < raw.size()) {
            const char e = raw[++i];
            switch (e) {
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                default: out += '\\'; out += e;
            }
        } else {
            out += raw[i];
        }
    }
    return out;
}

template <typename T>
T ini_number(const std::string& section, const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        if constexpr (std::is_unsigned_v<T>) {
            if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
            const auto v = std::stoull(value, &pos);
            if (pos != value.size()) throw std::invalid_argument("trailing");
            return static_cast<T>(v);
        } else {
            const auto v = std::stoll(value, &pos);
            if (pos != value.size()) throw std::invalid_argument("trailing");
            return static_cast<T>(v);
        }
    } catch (const std::exception&) {
        throw InputError("config [" + section + "] " + key + ": expected a number, got '" + value + "'");
    }
}

}  // namespace detail

/// Reads an INI config with sections [data], [pipeline], [template], [backend], [decode]
/// and [generation]. Keys in [generation] pass through to the completion endpoint (values
/// that parse as JSON are sent typed). Relative data paths resolve against the config
/// file's directory. Unknown sections or keys are errors.
inline void load_config_file(const std::filesystem::path& path, RunConfig& cfg) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw InputError("config " + path.string() + ": " + e.what());
    }
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    for (const auto& [section, entries] : tree) {
        if (!entries.data().empty()) throw InputError("config " + path.string() + ": key '" + section + "' outside a section");
        for (const auto& [key, node] : entries) {
            const std::string value = detail::ini_string(node.data());
            auto unknown = [&] { throw InputError("config " + path.string() + ": unknown key [" + section + "] " + key); };
            auto count = [&] { return detail::ini_number<std::size_t>(section, key, value); };
            auto millis = [&] { return std::chrono::milliseconds(detail::ini_number<std::int64_t>(section, key, value)); };
            if (section == "data") {
                if (key == "train") cfg.train_path = resolve(value);
                else if (key == "test") cfg.test_path = resolve(value);
                else if (key == "embeddings") cfg.embeddings_path = resolve(value);
                else if (key == "neighbors") cfg.neighbors_path = resolve(value);
                else unknown();
            } else if (section == "pipeline") {
                auto& p = cfg.pipeline;
                if (key == "strategy") p.strategy = parse_strategy(value);
                else if (key == "n") p.n = count();
                else if (key == "m") p.m = count();
                else if (key == "k") p.k = count();
                else if (key == "seed") p.seed = detail::ini_number<std::uint64_t>(section, key, value);
                else if (key == "caption_type") p.caption_type = parse_caption_type(value);
                else if (key == "max_tokens") p.max_tokens = count();
                else if (key == "jobs") p.jobs = count();
                else if (key == "metric") {
                    if (value == "leave_one_out") p.metric = MetricVariant::leave_one_out;
                    else if (value == "direct") p.metric = MetricVariant::direct;
                    else throw InputError("config [pipeline] metric: expected leave_one_out or direct");
                } else unknown();
            } else if (section == "template") {
                auto& t = cfg.pipeline.prompt_template;
                if (key == "head") t.head = value;
                else if (key == "context_label") t.context_label = value;
                else if (key == "question_label") t.question_label = value;
                else if (key == "answer_label") t.answer_label = value;
                else if (key == "block_separator") t.block_separator = value;
                else if (key == "caption_joiner") t.caption_joiner = value;
                else unknown();
            } else if (section == "backend") {
                auto& b = cfg.backend;
                if (key == "kind") {
                    if (value == "http") b.kind = BackendConfig::Kind::http;
                    else if (value == "mock") b.kind = BackendConfig::Kind::mock;
                    else throw InputError("config [backend] kind: expected http or mock");
                } else if (key == "endpoint_url") b.endpoint_url = value;
                else if (key == "model_name") b.model_name = value;
                else if (key == "timeout_ms") b.timeout = millis();
                else if (key == "retry_count") b.retry_count = count();
                else if (key == "retry_backoff_ms") b.retry_backoff = millis();
                else if (key == "max_concurrency") b.max_concurrency = count();
                else if (key == "mock_mode") {
                    if (value == "lookup") cfg.mock_mode = MockMode::lookup;
                    else if (value == "echo_hash") cfg.mock_mode = MockMode::echo_hash;
                    else throw InputError("config [backend] mock_mode: expected lookup or echo_hash");
                } else if (key == "mock_table") cfg.mock_table_path = resolve(value);
                else unknown();
            } else if (section == "decode") {
                auto& d = cfg.pipeline.decode;
                if (key == "beam_size") d.beam_size = count();
                else if (key == "max_new_tokens") d.max_new_tokens = count();
                else if (key == "stop_sequences") {
                    try {
                        d.stop_sequences = json::parse(value).get<std::vector<std::string>>();
                    } catch (const json::exception&) {
                        throw InputError("config [decode] stop_sequences: expected a JSON array of strings");
                    }
                } else unknown();
            } else if (section == "generation") {
                const json parsed = json::parse(value, nullptr, false);
                cfg.pipeline.decode.passthrough[key] = parsed.is_discarded() ? json(value) : parsed;
            } else {
                throw InputError("config " + path.string() + ": unknown section [" + section + "]");
            }
        }
    }
}

/// Lookup-mock table: a JSON object mapping question text to answer.
inline std::map<std::string, std::string> load_mock_table(const std::filesystem::path& path) {
    const json j = read_json(path);
    try {
        return j.get<std::map<std::string, std::string>>();
    } catch (const json::exception&) {
        throw InputError(path.string() + ": expected an object of question -> answer");
    }
}

}  // namespace kbvqa
