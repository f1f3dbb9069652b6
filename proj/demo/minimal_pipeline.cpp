// Runs the few-shot ensemble on a dataset with the lookup mock and prints accuracy.
//
//   minimal_pipeline <dataset_dir>
//
// The directory must hold train.jsonl, test.jsonl, embeddings.json and lookup.json
// (tests/fixtures/okvqa10 does).

#include <iostream>

#include "kbvqa/kbvqa.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: " << argv[0] << " <dataset_dir>\n";
        return 1;
    }
    const std::filesystem::path dir = argv[1];
    try {
        auto store = std::make_shared<const kbvqa::Store>(
            kbvqa::ingest(dir / "train.jsonl", dir / "test.jsonl", dir / "embeddings.json"));
        auto backend = kbvqa::MockBackend::lookup(kbvqa::load_mock_table(dir / "lookup.json"));

        kbvqa::PipelineConfig cfg;
        cfg.n = 3;
        cfg.m = 2;
        cfg.k = 3;

        const kbvqa::Pipeline pipeline(store);
        const auto run = pipeline.run(cfg, &backend);
        for (const auto& p : run.predictions) {
            std::cout << p.test_id << "\t" << p.voted_answer.value_or("<failed>") << "\n";
        }
        const auto report = kbvqa::evaluate(run.voted(), kbvqa::answer_key(*store), cfg.metric);
        std::cout << report.summary().dump(2) << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
