#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kbvqa/ablation.hpp"
#include "kbvqa/config.hpp"
#include "kbvqa/error.hpp"
#include "kbvqa/http_backend.hpp"
#include "kbvqa/jsonl.hpp"
#include "kbvqa/llm_backend.hpp"
#include "kbvqa/pipeline.hpp"
#include "kbvqa/replay.hpp"
#include "kbvqa/store.hpp"
#include "kbvqa/version.hpp"

namespace kbvqa::cli {

namespace fs = std::filesystem;

/// Command-line values; unset ones fall back to the config file, then to defaults.
struct Flags {
    std::optional<std::string> config, train, test, embeddings, neighbors;
    std::optional<std::string> strategy, caption_type, metric;
    std::optional<std::size_t> n, m, k, max_tokens, jobs;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> backend, mock_mode, mock_table, endpoint, model;
    std::optional<std::int64_t> timeout_ms, retry_backoff_ms;
    std::optional<std::size_t> retry_count, max_concurrency, beam_size, max_new_tokens;
    std::optional<std::string> out;
    bool direct_metric = false;
};

inline void add_data_flags(CLI::App* app, Flags& f) {
    app->add_option("--config", f.config, "INI config file");
    app->add_option("--train", f.train, "train JSONL");
    app->add_option("--test", f.test, "test JSONL");
    app->add_option("--embeddings", f.embeddings, "embedding manifest JSON");
}

inline void add_pipeline_flags(CLI::App* app, Flags& f) {
    app->add_option("--neighbors", f.neighbors, "precomputed neighbor JSONL");
    app->add_option("--strategy", f.strategy, "avg_sim | random | precomputed");
    app->add_option("--n", f.n, "shots per prompt");
    app->add_option("--m", f.m, "captions per shot and per test input");
    app->add_option("--k", f.k, "prompts per sample (ensemble size)");
    app->add_option("--seed", f.seed, "seed for the random strategy");
    app->add_option("--caption-type", f.caption_type, "question_informative | generic");
    app->add_option("--max-tokens", f.max_tokens, "prompt token budget");
    app->add_option("--jobs", f.jobs, "worker threads");
    app->add_flag("--direct-metric", f.direct_metric, "score with min(matches/3, 1) instead of leave-one-out");
}

inline void add_backend_flags(CLI::App* app, Flags& f) {
    app->add_option("--backend", f.backend, "http | mock");
    app->add_option("--mock-mode", f.mock_mode, "lookup | echo_hash");
    app->add_option("--mock-table", f.mock_table, "lookup table JSON (question -> answer)");
    app->add_option("--endpoint", f.endpoint, "completion endpoint URL");
    app->add_option("--model", f.model, "model name sent to the endpoint");
    app->add_option("--timeout-ms", f.timeout_ms, "per-attempt timeout");
    app->add_option("--retry-count", f.retry_count, "retries after the first attempt");
    app->add_option("--retry-backoff-ms", f.retry_backoff_ms, "initial retry backoff");
    app->add_option("--max-concurrency", f.max_concurrency, "in-flight request cap");
    app->add_option("--beam-size", f.beam_size, "beam width");
    app->add_option("--max-new-tokens", f.max_new_tokens, "generation length cap");
}

/// defaults < config file < environment < flags
inline RunConfig resolve(const Flags& f) {
    RunConfig cfg;
    if (f.config) load_config_file(*f.config, cfg);
    cfg.backend.apply_env();
    if (f.train) cfg.train_path = *f.train;
    if (f.test) cfg.test_path = *f.test;
    if (f.embeddings) cfg.embeddings_path = *f.embeddings;
    if (f.neighbors) cfg.neighbors_path = *f.neighbors;
    auto& p = cfg.pipeline;
    if (f.strategy) p.strategy = parse_strategy(*f.strategy);
    if (f.n) p.n = *f.n;
    if (f.m) p.m = *f.m;
    if (f.k) p.k = *f.k;
    if (f.seed) p.seed = *f.seed;
    if (f.caption_type) p.caption_type = parse_caption_type(*f.caption_type);
    if (f.max_tokens) p.max_tokens = *f.max_tokens;
    if (f.jobs) p.jobs = *f.jobs;
    if (f.direct_metric) p.metric = MetricVariant::direct;
    auto& b = cfg.backend;
    if (f.backend) {
        if (*f.backend == "http") b.kind = BackendConfig::Kind::http;
        else if (*f.backend == "mock") b.kind = BackendConfig::Kind::mock;
        else throw InputError("--backend: expected http or mock");
    }
    if (f.mock_mode) {
        if (*f.mock_mode == "lookup") cfg.mock_mode = MockMode::lookup;
        else if (*f.mock_mode == "echo_hash") cfg.mock_mode = MockMode::echo_hash;
        else throw InputError("--mock-mode: expected lookup or echo_hash");
    }
    if (f.mock_table) cfg.mock_table_path = *f.mock_table;
    if (f.endpoint) b.endpoint_url = *f.endpoint;
    if (f.model) b.model_name = *f.model;
    if (f.timeout_ms) b.timeout = std::chrono::milliseconds(*f.timeout_ms);
    if (f.retry_count) b.retry_count = *f.retry_count;
    if (f.retry_backoff_ms) b.retry_backoff = std::chrono::milliseconds(*f.retry_backoff_ms);
    if (f.max_concurrency) b.max_concurrency = *f.max_concurrency;
    if (f.beam_size) p.decode.beam_size = *f.beam_size;
    if (f.max_new_tokens) p.decode.max_new_tokens = *f.max_new_tokens;
    if (f.out) cfg.output_dir = *f.out;
    p.validate();
    b.validate();
    return cfg;
}

inline std::shared_ptr<CompletionBackend> make_backend(const RunConfig& cfg) {
    if (cfg.backend.kind == BackendConfig::Kind::http) return std::make_shared<HttpBackend>(cfg.backend);
    if (cfg.mock_mode == MockMode::echo_hash) return std::make_shared<MockBackend>(MockBackend::echo_hash());
    std::map<std::string, std::string> table;
    if (cfg.mock_table_path) table = load_mock_table(*cfg.mock_table_path);
    return std::make_shared<MockBackend>(MockBackend::lookup(std::move(table), cfg.pipeline.prompt_template.question_label));
}

inline std::shared_ptr<const Store> load_store(const RunConfig& cfg) {
    if (cfg.train_path.empty() || cfg.test_path.empty() || cfg.embeddings_path.empty()) {
        throw InputError("--train, --test and --embeddings (or a [data] config section) are required");
    }
    return std::make_shared<const Store>(ingest(cfg.train_path, cfg.test_path, cfg.embeddings_path));
}

inline Pipeline make_pipeline(const RunConfig& cfg, std::shared_ptr<const Store> store, bool use_caches = true) {
    std::optional<NeighborFile> neighbors;
    if (cfg.neighbors_path) neighbors = NeighborFile::load(*cfg.neighbors_path, *store);
    return Pipeline(std::move(store), std::move(neighbors), use_caches);
}

inline json manifest(const std::string& command, const RunConfig& cfg, const Store& store, const std::string& backend_tag) {
    json m{{"tool", "kbvqa"},
           {"version", std::string(kVersion)},
           {"command", command},
           {"config", cfg.to_json()},
           {"store", store.manifest().to_json()},
           {"backend_tag", backend_tag}};
    if (cfg.neighbors_path) m["neighbors_sha256"] = sha256_file(*cfg.neighbors_path);
    return m;
}

inline std::string file_safe(const std::string& id) {
    std::string out;
    for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
    return out;
}

inline void write_prompt_dump(const RunResult& run, const fs::path& dir) {
    write_text(dir / "prompts.jsonl", run.bundles_jsonl());
    for (const auto& b : run.bundles) {
        for (std::size_t j = 0; j < b.prompts.size(); ++j) {
            write_text(dir / (file_safe(b.test_id) + "." + std::to_string(j) + ".txt"), b.prompts[j]);
        }
    }
}

inline void log_skips(const RunResult& run, std::ostream& err) {
    for (const auto& s : run.skipped) err << "skipped " << s.test_id << " (" << s.reason << "): " << s.message << "\n";
}

/// Shared body of `run`, `build-prompts` and `replay`. Every output file is written here,
/// from the calling thread, after the workers finish.
inline void execute_run(const std::string& command, const RunConfig& cfg, std::shared_ptr<CompletionBackend> backend,
                        bool dry_run, bool score, std::ostream& out, std::ostream& err) {
    const auto start = std::chrono::steady_clock::now();
    auto store = load_store(cfg);
    const Pipeline pipeline = make_pipeline(cfg, store);
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);

    std::shared_ptr<RecordingBackend> recorder;
    if (!dry_run) recorder = std::make_shared<RecordingBackend>(backend);
    const RunResult run = pipeline.run(cfg.pipeline, recorder.get(), dry_run);
    log_skips(run, err);

    write_text(dir / "manifest.json", manifest(command, cfg, *store, backend ? backend->tag() : "none").dump(2) + "\n");
    json summary{{"run", run.summary()}};
    if (dry_run) {
        write_prompt_dump(run, dir / "prompts");
    } else {
        write_text(dir / "predictions.jsonl", run.predictions_jsonl());
        write_text(dir / "replay.log", recorder->log());
        if (score) {
            const auto key = answer_key(*store);
            const EvalReport report = evaluate(run.voted(), key, cfg.pipeline.metric);
            write_text(dir / "scores.jsonl", report.scores_jsonl());
            summary["eval"] = report.summary();
        }
    }
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text(dir / "timing.json", json{{"wall_time_s", secs}}.dump() + "\n");
    out << summary.dump(2) << "\n";
}

inline constexpr const char* kPrecedence =
    "Settings resolve as: built-in defaults < --config file < KBVQA_ENDPOINT_URL / KBVQA_AUTH_TOKEN < flags.\n"
    "Exit codes: 0 success, 1 input error, 2 runtime failure.";

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Few-shot in-context knowledge-based VQA engine", "kbvqa"};
    app.footer(kPrecedence);
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));
    Flags f;

    auto* ingest_cmd = app.add_subcommand("ingest", "validate inputs; with --out, export a normalized store");
    add_data_flags(ingest_cmd, f);
    ingest_cmd->add_option("--out", f.out, "export directory");

    auto* rank_cmd = app.add_subcommand("rank-captions", "emit the top-m captions per test sample as JSONL");
    add_data_flags(rank_cmd, f);
    rank_cmd->add_option("--m", f.m, "captions to keep");
    rank_cmd->add_option("--out", f.out, "output JSONL (default stdout)");

    auto* shots_cmd = app.add_subcommand("select-shots", "emit per-sample shot assignments as JSONL");
    add_data_flags(shots_cmd, f);
    add_pipeline_flags(shots_cmd, f);
    shots_cmd->add_option("--out", f.out, "output JSONL (default stdout)");

    auto* prompts_cmd = app.add_subcommand("build-prompts", "render prompts without querying a backend");
    add_data_flags(prompts_cmd, f);
    add_pipeline_flags(prompts_cmd, f);
    prompts_cmd->add_option("--out", f.out, "output directory");

    bool score = false;
    bool dry_run = false;
    auto* run_cmd = app.add_subcommand("run", "run the ensemble and write predictions");
    add_data_flags(run_cmd, f);
    add_pipeline_flags(run_cmd, f);
    add_backend_flags(run_cmd, f);
    run_cmd->add_option("--out", f.out, "output directory");
    run_cmd->add_flag("--score", score, "also score predictions against the test set's human answers");
    run_cmd->add_flag("--dry-run", dry_run, "write prompts only");

    std::string predictions_path, dataset_path;
    auto* eval_cmd = app.add_subcommand("eval", "score a predictions file");
    eval_cmd->add_option("--predictions", predictions_path, "predictions JSONL")->required();
    eval_cmd->add_option("--dataset", dataset_path, "test JSONL with human_answers")->required();
    eval_cmd->add_option("--out", f.out, "output directory for scores.jsonl and summary.json");
    eval_cmd->add_flag("--direct-metric", f.direct_metric, "score with min(matches/3, 1)");

    std::string axis, values_csv, plot_path;
    bool no_cache = false;
    auto* ablate_cmd = app.add_subcommand("ablate", "sweep one axis and write a CSV of accuracies");
    add_data_flags(ablate_cmd, f);
    add_pipeline_flags(ablate_cmd, f);
    add_backend_flags(ablate_cmd, f);
    ablate_cmd->add_option("--axis", axis, "m | n | k | strategy | caption_type")->required();
    ablate_cmd->add_option("--values", values_csv, "comma-separated values")->required();
    ablate_cmd->add_option("--out", f.out, "output CSV")->required();
    ablate_cmd->add_option("--plot", plot_path, "also write an SVG line chart");
    ablate_cmd->add_flag("--no-cache", no_cache, "recompute rankings for every point");

    std::string log_path;
    auto* replay_cmd = app.add_subcommand("replay", "re-run from a recorded replay.log without a network");
    add_data_flags(replay_cmd, f);
    add_pipeline_flags(replay_cmd, f);
    replay_cmd->add_option("--log", log_path, "replay.log from an earlier run")->required();
    replay_cmd->add_option("--out", f.out, "output directory");
    replay_cmd->add_flag("--score", score, "also score predictions");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion& e) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (*ingest_cmd) {
            RunConfig cfg = resolve(f);
            auto store = load_store(cfg);
            json report{{"train", store->train().size()},
                        {"test", store->test().size()},
                        {"dim", store->dim()},
                        {"model_tag", store->manifest().model_tag},
                        {"checksum", store->manifest().checksum}};
            if (f.out) {
                export_store(*store, *f.out);
                write_text(fs::path(*f.out) / "manifest.json", json{{"tool", "kbvqa"},
                                                                     {"version", std::string(kVersion)},
                                                                     {"command", "ingest"},
                                                                     {"store", store->manifest().to_json()}}
                                                                    .dump(2) + "\n");
            }
            out << report.dump(2) << "\n";
        } else if (*rank_cmd) {
            RunConfig cfg = resolve(f);
            auto store = load_store(cfg);
            std::string lines;
            for (const auto& s : store->test()) lines += rank_captions(s, cfg.pipeline.m).to_json().dump() + "\n";
            if (f.out) write_text(*f.out, lines);
            else out << lines;
        } else if (*shots_cmd) {
            RunConfig cfg = resolve(f);
            auto store = load_store(cfg);
            const Pipeline pipeline = make_pipeline(cfg, store);
            const auto& p = cfg.pipeline;
            std::string lines;
            for (const auto& s : store->test()) {
                try {
                    lines += assign_shots(pipeline.shot_ranking(s, p.strategy, p.seed, p.n * p.k), p.n, p.k).to_json().dump() + "\n";
                } catch (const SampleError& e) {
                    err << "skipped " << e.sample_id() << " (" << e.reason() << "): " << e.what() << "\n";
                }
            }
            if (f.out) write_text(*f.out, lines);
            else out << lines;
        } else if (*prompts_cmd) {
            execute_run("build-prompts", resolve(f), nullptr, true, false, out, err);
        } else if (*run_cmd) {
            RunConfig cfg = resolve(f);
            execute_run("run", cfg, dry_run ? nullptr : make_backend(cfg), dry_run, score, out, err);
        } else if (*replay_cmd) {
            RunConfig cfg = resolve(f);
            auto backend = std::make_shared<ReplayBackend>(ReplayBackend::load(log_path));
            execute_run("replay", cfg, backend, false, score, out, err);
        } else if (*eval_cmd) {
            std::map<std::string, std::string> voted;
            std::set<std::string> seen;
            for_each_jsonl(predictions_path, [&](const json& r, std::size_t line) {
                const auto p = PredictionRecord::from_json(r, predictions_path + ":" + std::to_string(line));
                if (!seen.insert(p.test_id).second) throw InputError(predictions_path + ": duplicate test_id '" + p.test_id + "'");
                if (p.voted_answer) voted.emplace(p.test_id, *p.voted_answer);
            });
            const auto key = read_answer_key(dataset_path);
            const EvalReport report = evaluate(voted, key, f.direct_metric ? MetricVariant::direct : MetricVariant::leave_one_out);
            if (f.out) {
                write_text(fs::path(*f.out) / "scores.jsonl", report.scores_jsonl());
                write_text(fs::path(*f.out) / "summary.json", report.summary().dump(2) + "\n");
            }
            out << report.summary().dump(2) << "\n";
        } else if (*ablate_cmd) {
            const fs::path csv_path = *f.out;
            f.out.reset();
            RunConfig cfg = resolve(f);
            SweepSpec spec{parse_axis(axis), {}, cfg.pipeline};
            std::stringstream ss(values_csv);
            for (std::string v; std::getline(ss, v, ',');) {
                if (!v.empty()) spec.values.push_back(v);
            }
            auto store = load_store(cfg);
            const Pipeline pipeline = make_pipeline(cfg, store, !no_cache);
            auto backend = make_backend(cfg);
            const SweepResult result = run_sweep(spec, pipeline, *backend);
            for (const auto& r : result.rows) {
                if (r.error) err << "point " << r.axis_value << " failed: " << *r.error << "\n";
            }
            write_text(csv_path, result.csv());
            if (!plot_path.empty()) write_text(plot_path, result.svg());
            out << result.csv();
        }
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "fatal: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace kbvqa::cli
