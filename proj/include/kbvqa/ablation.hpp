#pragma once

#include <chrono>
#include <cstdio>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "kbvqa/error.hpp"
#include "kbvqa/pipeline.hpp"
#include "kbvqa/vqa_eval.hpp"

namespace kbvqa {

enum class SweepAxis { m, n, k, strategy, caption_type };

inline SweepAxis parse_axis(const std::string& s) {
    if (s == "m") return SweepAxis::m;
    if (s == "n") return SweepAxis::n;
    if (s == "k") return SweepAxis::k;
    if (s == "strategy") return SweepAxis::strategy;
    if (s == "caption_type") return SweepAxis::caption_type;
    throw InputError("unknown sweep axis '" + s + "' (expected m, n, k, strategy or caption_type)");
}

inline std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::m: return "m";
        case SweepAxis::n: return "n";
        case SweepAxis::k: return "k";
        case SweepAxis::strategy: return "strategy";
        case SweepAxis::caption_type: return "caption_type";
    }
    return "?";
}

struct SweepSpec {
    SweepAxis axis = SweepAxis::k;
    std::vector<std::string> values;
    PipelineConfig fixed;
};

/// The configuration for one sweep point. Strategy values are avg_sim, precomputed,
/// random (uses the fixed seed), or random:<seed> / random(seed=<seed>).
inline PipelineConfig config_for(const SweepSpec& spec, const std::string& value) {
    PipelineConfig cfg = spec.fixed;
    auto positive = [&](const std::string& v) {
        std::size_t pos = 0;
        unsigned long long x = 0;
        try {
            x = std::stoull(v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != v.size() || x == 0 || v.empty() || v[0] == '-') {
            throw InputError("sweep value '" + v + "' for axis " + to_string(spec.axis) + " must be a positive integer");
        }
        return static_cast<std::size_t>(x);
    };
    switch (spec.axis) {
        case SweepAxis::m: cfg.m = positive(value); break;
        case SweepAxis::n: cfg.n = positive(value); break;
        case SweepAxis::k: cfg.k = positive(value); break;
        case SweepAxis::caption_type: cfg.caption_type = parse_caption_type(value); break;
        case SweepAxis::strategy: {
            static const std::regex seeded(R"(random(?::(\d+)|\(seed=(\d+)\)))");
            std::smatch match;
            if (std::regex_match(value, match, seeded)) {
                cfg.strategy = ShotStrategy::random;
                cfg.seed = std::stoull(match[1].matched ? match[1].str() : match[2].str());
            } else {
                cfg.strategy = parse_strategy(value);
            }
            break;
        }
    }
    return cfg;
}

struct SweepRow {
    std::string axis_value;
    std::optional<double> accuracy_pct;
    std::size_t n_scored = 0;
    std::size_t n_failed = 0;  // samples with no voted answer, including skipped ones
    double effective_n_mean = 0.0;
    double wall_time_s = 0.0;
    std::optional<std::string> error;  // set when the whole point failed
};

struct SweepResult {
    SweepAxis axis = SweepAxis::k;
    std::vector<SweepRow> rows;

    std::string csv() const {
        std::string out = "axis_value,accuracy_pct,n_scored,n_failed,effective_n_mean,wall_time_s\n";
        char buf[64];
        for (const auto& r : rows) {
            out += r.axis_value;
            out += ',';
            if (r.accuracy_pct) {
                std::snprintf(buf, sizeof buf, "%.6f", *r.accuracy_pct);
                out += buf;
            }
            std::snprintf(buf, sizeof buf, ",%zu,%zu,%.4f,%.3f\n", r.n_scored, r.n_failed, r.effective_n_mean,
                          r.wall_time_s);
            out += buf;
        }
        return out;
    }

    /// Accuracy-vs-value line chart; categorical axes are spaced evenly.
    std::string svg() const {
        const double w = 480, h = 320, pad = 48;
        double lo = 100.0, hi = 0.0;
        for (const auto& r : rows) {
            if (!r.accuracy_pct) continue;
            lo = std::min(lo, *r.accuracy_pct);
            hi = std::max(hi, *r.accuracy_pct);
        }
        if (lo > hi) lo = 0.0, hi = 100.0;
        if (hi - lo < 1e-9) lo -= 1.0, hi += 1.0;
        const std::size_t count = rows.size();
        auto x_at = [&](std::size_t i) { return pad + (count <= 1 ? 0.5 : double(i) / double(count - 1)) * (w - 2 * pad); };
        auto y_at = [&](double acc) { return h - pad - (acc - lo) / (hi - lo) * (h - 2 * pad); };
        std::ostringstream svg;
        svg.setf(std::ios::fixed);
        svg.precision(2);
        svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
        svg << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
            << "\" stroke=\"black\"/>\n";
        svg << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
            << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\">" << to_string(axis)
            << "</text>\n";
        svg << "<text x=\"12\" y=\"" << h / 2 << "\" transform=\"rotate(-90 12," << h / 2
            << ")\" text-anchor=\"middle\">accuracy (%)</text>\n";
        svg << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < count; ++i) {
            if (rows[i].accuracy_pct) svg << x_at(i) << ',' << y_at(*rows[i].accuracy_pct) << ' ';
        }
        svg << "\"/>\n";
        for (std::size_t i = 0; i < count; ++i) {
            svg << "<text x=\"" << x_at(i) << "\" y=\"" << h - pad + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
                << rows[i].axis_value << "</text>\n";
            if (rows[i].accuracy_pct) {
                svg << "<circle cx=\"" << x_at(i) << "\" cy=\"" << y_at(*rows[i].accuracy_pct)
                    << "\" r=\"3\" fill=\"steelblue\"/>\n";
            }
        }
        svg << "</svg>\n";
        return svg.str();
    }
};

inline std::vector<AnswerKeyEntry> answer_key(const Store& store) {
    std::vector<AnswerKeyEntry> key;
    key.reserve(store.test().size());
    for (const auto& s : store.test()) key.push_back({s.id, s.human_answers, s.question_type});
    return key;
}

/// One full pipeline run plus scoring; shared by sweeps and standalone runs.
inline SweepRow run_point(const Pipeline& pipeline, const PipelineConfig& cfg, CompletionBackend& backend,
                          const std::vector<AnswerKeyEntry>& key, std::string label) {
    SweepRow row;
    row.axis_value = std::move(label);
    const auto start = std::chrono::steady_clock::now();
    try {
        const RunResult run = pipeline.run(cfg, &backend);
        const EvalReport report = evaluate(run.voted(), key, cfg.metric);
        if (report.overall) row.accuracy_pct = report.overall->accuracy_pct;
        row.n_scored = report.scores.size();
        for (const auto& p : run.predictions) row.n_failed += p.failed() ? 1 : 0;
        row.n_failed += run.skipped.size();
        row.effective_n_mean = run.effective_n_mean();
    } catch (const std::logic_error&) {
        throw;
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return row;
}

/// Runs every sweep point in order. A point that fails as a whole is recorded with its
/// error and the sweep moves on.
inline SweepResult run_sweep(const SweepSpec& spec, const Pipeline& pipeline, CompletionBackend& backend) {
    if (spec.values.empty()) throw InputError("sweep: no values given");
    std::vector<PipelineConfig> configs;
    for (const auto& v : spec.values) configs.push_back(config_for(spec, v));
    const auto key = answer_key(pipeline.store());
    SweepResult result{spec.axis, {}};
    for (std::size_t i = 0; i < configs.size(); ++i) {
        result.rows.push_back(run_point(pipeline, configs[i], backend, key, spec.values[i]));
    }
    return result;
}

}  // namespace kbvqa
