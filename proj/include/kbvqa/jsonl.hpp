#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kbvqa/error.hpp"

namespace kbvqa {

using json = nlohmann::json;

/// Calls `fn(record, line_number)` for every non-blank line of a JSONL file.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const json&, std::size_t)>& fn) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!record.is_object()) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected a JSON object");
        }
        fn(record, line_no);
    }
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::vector<json> out;
    for_each_jsonl(path, [&](const json& r, std::size_t) { out.push_back(r); });
    return out;
}

inline std::string to_jsonl(const std::vector<json>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline json read_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

/// Typed field access with input errors that name the record and key.
template <typename T>
T require_field(const json& record, const char* key, const std::string& where) {
    auto it = record.find(key);
    if (it == record.end()) {
        throw InputError(where + ": missing key '" + key + "'");
    }
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw InputError(where + ": key '" + key + "' has the wrong type");
    }
}

template <typename T>
std::optional<T> optional_field(const json& record, const char* key, const std::string& where) {
    auto it = record.find(key);
    if (it == record.end() || it->is_null()) return std::nullopt;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw InputError(where + ": key '" + key + "' has the wrong type");
    }
}

}  // namespace kbvqa
