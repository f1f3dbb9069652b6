#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "kbvqa/cli.hpp"
#include "test_support.hpp"

namespace {

namespace fs = std::filesystem;
using kbvqa::json;

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result cli(std::vector<std::string> args) {
    args.insert(args.begin(), "kbvqa");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = kbvqa::cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string fixture(const std::string& name) { return (testing_support::fixture_dir() / name).string(); }
std::string config() { return fixture("config.ini"); }

std::vector<json> jsonl(const fs::path& p) { return kbvqa::read_jsonl(p); }

TEST(Cli, RunOnThreeSampleFixture) {
    const auto dir = testing_support::scratch_dir("cli_run3");
    const auto r = cli({"run", "--config", config(), "--test", fixture("test3.jsonl"), "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto preds = jsonl(dir / "predictions.jsonl");
    ASSERT_EQ(preds.size(), 3u);
    EXPECT_EQ(preds[0]["test_id"], "v00");
    EXPECT_EQ(preds[0]["voted_answer"], "dog");
    for (const auto* f : {"manifest.json", "summary.json", "replay.log", "timing.json"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    EXPECT_FALSE(fs::exists(dir / "prompts"));
    const auto manifest = kbvqa::read_json(dir / "manifest.json");
    EXPECT_EQ(manifest["backend_tag"], "mock:lookup");
    EXPECT_EQ(manifest["config"]["pipeline"]["n"], 3);
    EXPECT_EQ(manifest["store"]["model_tag"], "synthetic-fixture-v1");
    EXPECT_FALSE(manifest["store"]["checksum"].get<std::string>().empty());
}

TEST(Cli, EvalCountsMissingSampleAsSkipped) {
    const auto dir = testing_support::scratch_dir("cli_eval");
    ASSERT_EQ(cli({"run", "--config", config(), "--test", fixture("test3.jsonl"), "--out", dir.string()}).code, 0);
    auto lines = kbvqa::read_text(dir / "predictions.jsonl");
    lines = lines.substr(0, lines.rfind('\n', lines.size() - 2) + 1);  // drop the last record
    kbvqa::write_text(dir / "partial.jsonl", lines);
    const auto r = cli({"eval", "--predictions", (dir / "partial.jsonl").string(), "--dataset", fixture("test3.jsonl"),
                        "--out", (dir / "eval").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto summary = json::parse(r.out);
    EXPECT_EQ(summary["n_skipped"], 1);
    EXPECT_EQ(summary["n_scored"], 2);
    EXPECT_EQ(summary["metric_variant"], "leave_one_out");
    EXPECT_EQ(kbvqa::read_json(dir / "eval" / "summary.json"), summary);
}

TEST(Cli, RunThenEvalEqualsScoredRun) {
    const auto a = testing_support::scratch_dir("cli_fused_a");
    const auto b = testing_support::scratch_dir("cli_fused_b");
    ASSERT_EQ(cli({"run", "--config", config(), "--out", a.string()}).code, 0);
    const auto e = cli({"eval", "--predictions", (a / "predictions.jsonl").string(), "--dataset", fixture("test.jsonl"),
                        "--out", (a / "eval").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    ASSERT_EQ(cli({"run", "--config", config(), "--score", "--out", b.string()}).code, 0);
    EXPECT_EQ(kbvqa::read_text(a / "eval" / "scores.jsonl"), kbvqa::read_text(b / "scores.jsonl"));
    EXPECT_EQ(kbvqa::read_json(a / "eval" / "summary.json"), kbvqa::read_json(b / "summary.json")["eval"]);
    EXPECT_EQ(kbvqa::read_text(a / "predictions.jsonl"), kbvqa::read_text(b / "predictions.jsonl"));
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
    const auto a = testing_support::scratch_dir("cli_det_a");
    const auto b = testing_support::scratch_dir("cli_det_b");
    ASSERT_EQ(cli({"run", "--config", config(), "--score", "--mock-mode", "echo_hash", "--out", a.string()}).code, 0);
    ASSERT_EQ(cli({"run", "--config", config(), "--score", "--mock-mode", "echo_hash", "--jobs", "1", "--out", b.string()}).code, 0);
    for (const auto* f : {"manifest.json", "predictions.jsonl", "scores.jsonl", "summary.json", "replay.log"}) {
        EXPECT_EQ(kbvqa::read_text(a / f), kbvqa::read_text(b / f)) << f;
    }
}

TEST(Cli, ReplayReproducesRecordedHttpRun) {
    testing_support::StubServer stub;
    const auto table = kbvqa::load_mock_table(fixture("lookup.json"));
    stub.server().Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
        const auto prompt = json::parse(req.body)["prompt"].get<std::string>();
        auto it = table.find(kbvqa::last_question(prompt));
        res.set_content(json{{"text", " " + (it == table.end() ? std::string("no idea") : it->second) + "\nQ:"}}.dump(),
                        "application/json");
    });
    stub.start();
    const auto rec = testing_support::scratch_dir("cli_record");
    const auto rep = testing_support::scratch_dir("cli_replay");
    const auto r1 = cli({"run", "--config", config(), "--backend", "http", "--endpoint", stub.url("/generate"), "--score",
                        "--out", rec.string()});
    ASSERT_EQ(r1.code, 0) << r1.err;
    stub.stop();
    const auto r2 = cli({"replay", "--config", config(), "--log", (rec / "replay.log").string(), "--score", "--out",
                         rep.string()});
    ASSERT_EQ(r2.code, 0) << r2.err;
    EXPECT_EQ(kbvqa::read_text(rec / "predictions.jsonl"), kbvqa::read_text(rep / "predictions.jsonl"));
    EXPECT_EQ(kbvqa::read_text(rec / "scores.jsonl"), kbvqa::read_text(rep / "scores.jsonl"));
    EXPECT_EQ(kbvqa::read_json(rep / "manifest.json")["backend_tag"], "replay:http:llama-13b");
    EXPECT_GT(kbvqa::read_json(rep / "summary.json")["eval"]["accuracy_pct"].get<double>(), 0.0);
}

TEST(Cli, ReplayWithChangedConfigFailsQueries) {
    const auto rec = testing_support::scratch_dir("cli_record2");
    ASSERT_EQ(cli({"run", "--config", config(), "--test", fixture("test3.jsonl"), "--out", rec.string()}).code, 0);
    const auto rep = testing_support::scratch_dir("cli_replay2");
    const auto r = cli({"replay", "--config", config(), "--test", fixture("test3.jsonl"), "--m", "1", "--log",
                        (rec / "replay.log").string(), "--out", rep.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto& p : jsonl(rep / "predictions.jsonl")) EXPECT_EQ(p["status"], "failed");
}

TEST(Cli, DryRunWritesPrompts) {
    const auto dir = testing_support::scratch_dir("cli_dry");
    const auto r = cli({"run", "--config", config(), "--dry-run", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "prompts" / "prompts.jsonl"));
    const auto p = kbvqa::read_text(dir / "prompts" / "v00.0.txt");
    EXPECT_TRUE(p.starts_with("Please answer the question according to the context.\n===\nContext: "));
    EXPECT_TRUE(p.ends_with("\nQ: what animal is shown?\nA: "));
    EXPECT_FALSE(fs::exists(dir / "predictions.jsonl"));
    const auto b = testing_support::scratch_dir("cli_build");
    ASSERT_EQ(cli({"build-prompts", "--config", config(), "--out", b.string()}).code, 0);
    EXPECT_EQ(kbvqa::read_text(b / "prompts" / "prompts.jsonl"), kbvqa::read_text(dir / "prompts" / "prompts.jsonl"));
}

TEST(Cli, IngestExportRoundTrip) {
    const auto dir = testing_support::scratch_dir("cli_ingest");
    const auto r = cli({"ingest", "--config", config(), "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = json::parse(r.out);
    EXPECT_EQ(report["train"], 40);
    EXPECT_EQ(report["test"], 10);
    EXPECT_EQ(report["dim"], 16);
    const auto again = cli({"ingest", "--train", (dir / "train.jsonl").string(), "--test", (dir / "test.jsonl").string(),
                            "--embeddings", (dir / "embeddings.json").string()});
    ASSERT_EQ(again.code, 0) << again.err;
    EXPECT_EQ(json::parse(again.out)["dim"], 16);
}

TEST(Cli, RankCaptionsAndSelectShots) {
    const auto r = cli({"rank-captions", "--config", config(), "--m", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream lines(r.out);
    std::string first;
    std::getline(lines, first);
    EXPECT_EQ(json::parse(first)["captions"].size(), 3u);

    const auto s = cli({"select-shots", "--config", config(), "--strategy", "precomputed", "--n", "2", "--k", "2"});
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_NE(s.err.find("skipped v04 (no_neighbors)"), std::string::npos);
    EXPECT_EQ(std::count(s.out.begin(), s.out.end(), '\n'), 9);
}

TEST(Cli, AblateWritesCsvAndPlot) {
    const auto dir = testing_support::scratch_dir("cli_ablate");
    const auto r = cli({"ablate", "--config", config(), "--axis", "k", "--values", "1,3", "--out", (dir / "k.csv").string(),
                        "--plot", (dir / "k.svg").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = kbvqa::read_text(dir / "k.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    EXPECT_TRUE(fs::exists(dir / "k.svg"));
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(cli({"run", "--config", config(), "--bogus-flag"}).code, 1);
    EXPECT_EQ(cli({}).code, 1);
    EXPECT_EQ(cli({"frobnicate"}).code, 1);
    EXPECT_EQ(cli({"run", "--config", fixture("missing.ini")}).code, 1);
    EXPECT_EQ(cli({"run", "--config", config(), "--strategy", "nearest"}).code, 1);
    EXPECT_EQ(cli({"run", "--config", config(), "--n", "0"}).code, 1);
    EXPECT_EQ(cli({"run", "--train", fixture("train.jsonl")}).code, 1);
    EXPECT_EQ(cli({"--help"}).code, 0);

    const auto dir = testing_support::scratch_dir("cli_badcfg");
    kbvqa::write_text(dir / "bad.ini", "[pipeline]\nshots = 3\n");
    const auto r = cli({"run", "--config", (dir / "bad.ini").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("shots"), std::string::npos);

    // An endpoint that never answers is a runtime failure for queries, not for the run.
    const auto out = testing_support::scratch_dir("cli_dead");
    const auto dead = cli({"run", "--config", config(), "--test", fixture("test3.jsonl"), "--backend", "http", "--endpoint",
                           "http://127.0.0.1:1/x", "--retry-count", "0", "--out", out.string()});
    EXPECT_EQ(dead.code, 0) << dead.err;
    EXPECT_EQ(kbvqa::read_json(out / "summary.json")["run"]["n_failed"], 3);
}

TEST(Cli, HelpDocumentsPrecedence) {
    const auto r = cli({"--help"});
    EXPECT_NE(r.out.find("defaults < --config file"), std::string::npos);
}

class EnvGuard {
public:
    EnvGuard(const char* name, const char* value) : name_(name) { ::setenv(name, value, 1); }
    ~EnvGuard() { ::unsetenv(name_); }

private:
    const char* name_;
};

TEST(Config, PrecedenceDefaultsConfigEnvFlags) {
    const auto dir = testing_support::scratch_dir("cli_prec");
    kbvqa::write_text(dir / "c.ini",
                      "[pipeline]\nn = 4\nk = 2\n[backend]\nkind = http\nendpoint_url = http://config/x\n"
                      "[template]\nblock_separator = \"\\n###\\n\"\n[generation]\nlength_penalty = -1\ntag = abc\n");
    kbvqa::cli::Flags f;
    f.config = (dir / "c.ini").string();
    auto cfg = kbvqa::cli::resolve(f);
    EXPECT_EQ(cfg.pipeline.n, 4u);
    EXPECT_EQ(cfg.pipeline.m, 9u);  // default
    EXPECT_EQ(*cfg.backend.endpoint_url, "http://config/x");
    EXPECT_EQ(cfg.pipeline.prompt_template.block_separator, "\n###\n");
    EXPECT_EQ(cfg.pipeline.decode.passthrough["length_penalty"], -1);
    EXPECT_EQ(cfg.pipeline.decode.passthrough["tag"], "abc");

    EnvGuard env("KBVQA_ENDPOINT_URL", "http://env/x");
    cfg = kbvqa::cli::resolve(f);
    EXPECT_EQ(*cfg.backend.endpoint_url, "http://env/x");

    f.endpoint = "http://flag/x";
    f.n = 2;
    cfg = kbvqa::cli::resolve(f);
    EXPECT_EQ(*cfg.backend.endpoint_url, "http://flag/x");
    EXPECT_EQ(cfg.pipeline.n, 2u);
    EXPECT_EQ(cfg.pipeline.k, 2u);
}

TEST(Config, AuthTokenNeverReachesManifest) {
    EnvGuard env("KBVQA_AUTH_TOKEN", "topsecret");
    kbvqa::cli::Flags f;
    f.config = config();
    const auto cfg = kbvqa::cli::resolve(f);
    EXPECT_EQ(cfg.backend.auth_token, "topsecret");
    EXPECT_EQ(cfg.to_json().dump().find("topsecret"), std::string::npos);
}

}  // namespace
