#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include "ser/config.hpp"
#include "ser/pipeline.hpp"

using namespace ser;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("ser_pipe_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Small hermetic experiment: synthetic tones, synthetic extractor, reduced
// model, few epochs.
ExperimentConfig tiny_config(const fs::path& out, const std::string& family = "proposed-cnn") {
    ExperimentConfig cfg;
    cfg.corpus.synthetic = true;
    cfg.corpus.synth_n_per_class = 4;
    cfg.corpus.synth_seed = 7;
    cfg.model.family = family;
    cfg.model.input_size = 24;
    cfg.model.width_divisor = 32;
    cfg.training.max_epochs = 4;
    cfg.training.batch_size = 4;
    cfg.training.seed = 42;
    cfg.training.early_stop_patience = 0;
    cfg.split.ratios = {0.5, 0.25, 0.25};
    cfg.split.seed = 42;
    cfg.output_dir = out.string();
    cfg.workers = 1;
    return cfg;
}

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    const char* cli = std::getenv("SER_CLI");
    REQUIRE(cli != nullptr);
    const std::string cmd = std::string(cli) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult result;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) result.output += buf;
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    out << j.dump(2);
}

} // namespace

TEST_CASE("prepare builds the synthetic corpus and normalized cache") {
    const auto dir = temp_dir("prepare");
    auto cfg = tiny_config(dir);
    const auto result = run_prepare(cfg);
    REQUIRE(result.manifest.entries.size() == 20);
    REQUIRE(result.fear_removed == 0);
    REQUIRE(fs::exists(PipelinePaths(cfg).manifest_file()));
    REQUIRE(fs::exists(dir / "config.snapshot"));
    REQUIRE(fs::exists(dir / "run_meta.json"));

    // One normalized cache file per entry, all exactly 112000 samples.
    std::size_t raw_files = 0;
    for (const auto& de : fs::directory_iterator(PipelinePaths(cfg).normalized_dir()))
        if (de.path().extension() == ".f32") {
            REQUIRE(fs::file_size(de.path()) == 112000 * sizeof(float));
            ++raw_files;
        }
    REQUIRE(raw_files == 20);

    const auto meta = nlohmann::json::parse(read_file_bytes(dir / "run_meta.json"));
    REQUIRE(meta.at("resampler") == SincResampler::kIdentity);
    fs::remove_all(dir);
}

TEST_CASE("extract populates the cache once and then hits it") {
    const auto dir = temp_dir("extract");
    auto cfg = tiny_config(dir);
    run_prepare(cfg);

    const auto first = run_extract(cfg);
    REQUIRE(first.total == 20);
    REQUIRE(first.extracted == 20);
    REQUIRE(first.cache_hits == 0);

    const auto second = run_extract(cfg);
    REQUIRE(second.extracted == 0);
    REQUIRE(second.cache_hits == 20);

    std::size_t serf_files = 0;
    for (const auto& de : fs::directory_iterator(PipelinePaths(cfg).cache))
        if (de.path().extension() == ".serf") ++serf_files;
    REQUIRE(serf_files == 20);
    fs::remove_all(dir);
}

TEST_CASE("extract before prepare is a data error") {
    const auto dir = temp_dir("extract_early");
    auto cfg = tiny_config(dir);
    REQUIRE_THROWS_WITH(run_extract(cfg), Catch::Matchers::ContainsSubstring("run prepare"));
    fs::remove_all(dir);
}

TEST_CASE("train writes the documented checkpoint layout") {
    const auto dir = temp_dir("train");
    auto cfg = tiny_config(dir);
    run_prepare(cfg);
    run_extract(cfg);
    const auto summary = run_train(cfg);
    for (const char* name : {"best.ckpt", "last.ckpt", "history.jsonl", "config.snapshot"})
        REQUIRE(fs::exists(summary.checkpoint_dir / name));
    REQUIRE(summary.history.records.size() == 4);
    REQUIRE(summary.train_size == 10);
    REQUIRE(summary.val_size == 5);

    // Best checkpoint's recorded metric matches the history maximum.
    double max_val = 0;
    for (const auto& r : summary.history.records) max_val = std::max(max_val, r.val_acc);
    REQUIRE(summary.best_val_acc == Catch::Approx(max_val));
    fs::remove_all(dir);
}

TEST_CASE("svm family trains and evaluates through the same pipeline") {
    const auto dir = temp_dir("svm");
    auto cfg = tiny_config(dir, "svm");
    run_prepare(cfg);
    run_extract(cfg);
    const auto summary = run_train(cfg);
    REQUIRE(summary.history.records.empty());
    REQUIRE(fs::exists(summary.checkpoint_dir / "best.ckpt"));

    const auto eval = run_evaluate(cfg, summary.checkpoint_dir / "best.ckpt", "test");
    REQUIRE(eval.report.n_samples == 5);
    REQUIRE(fs::exists(PipelinePaths(cfg).report_dir() / "metrics.json"));
    // Tones are trivially separable for the SVM on pooled spectra.
    REQUIRE(eval.report.accuracy >= 0.8);
    fs::remove_all(dir);
}

TEST_CASE("evaluate writes report artifacts and honors split selection") {
    const auto dir = temp_dir("evaluate");
    auto cfg = tiny_config(dir);
    run_prepare(cfg);
    run_extract(cfg);
    const auto summary = run_train(cfg);

    const auto eval = run_evaluate(cfg, summary.checkpoint_dir / "best.ckpt", "val");
    REQUIRE(eval.report.split_tag == "val");
    REQUIRE(eval.report.n_samples == 5);
    for (const char* name : {"metrics.json", "metrics.txt", "confusion.csv", "curves.csv",
                             "curves.svg"})
        REQUIRE(fs::exists(PipelinePaths(cfg).report_dir() / name));

    REQUIRE_THROWS_AS(run_evaluate(cfg, summary.checkpoint_dir / "best.ckpt", "bogus"),
                      ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("snapshot alone reproduces the run byte for byte") {
    const auto dir = temp_dir("snapshot");
    auto cfg = tiny_config(dir);
    run_prepare(cfg);
    run_extract(cfg);
    auto summary = run_train(cfg);
    run_evaluate(cfg, summary.checkpoint_dir / "best.ckpt", "test");
    const std::string metrics_a =
        read_file_bytes(PipelinePaths(cfg).report_dir() / "metrics.json");

    // Stash the snapshot, wipe everything, replay from the snapshot only.
    const fs::path stash = temp_dir("snapshot_stash") / "config.snapshot";
    fs::copy_file(summary.checkpoint_dir / "config.snapshot", stash);
    fs::remove_all(dir);

    const ExperimentConfig replay = load_config(stash);
    run_prepare(replay);
    run_extract(replay);
    const auto summary2 = run_train(replay);
    run_evaluate(replay, summary2.checkpoint_dir / "best.ckpt", "test");
    const std::string metrics_b =
        read_file_bytes(PipelinePaths(replay).report_dir() / "metrics.json");
    REQUIRE(metrics_a == metrics_b);
    fs::remove_all(dir);
    fs::remove_all(stash.parent_path());
}

TEST_CASE("predict classifies a synthetic tone after a real training run") {
    const auto dir = temp_dir("predict");
    auto cfg = tiny_config(dir);
    cfg.corpus.synth_n_per_class = 6;
    cfg.training.max_epochs = 25;
    cfg.model.input_size = 32;
    cfg.model.width_divisor = 16;
    cfg.split.ratios = {0.67, 0.33, 0.0};
    run_prepare(cfg);
    run_extract(cfg);
    const auto summary = run_train(cfg);

    // Class-2 fixture tone (sadness code) through the trained model.
    const auto manifest = load_manifest(PipelinePaths(cfg).manifest_file());
    std::string sadness_path;
    for (const auto& e : manifest.entries)
        if (e.label == "sadness") sadness_path = e.path;
    REQUIRE_FALSE(sadness_path.empty());

    const auto result = run_predict(summary.checkpoint_dir, sadness_path);
    double total = 0;
    for (double v : result.probs) total += v;
    REQUIRE(total == Catch::Approx(1.0).margin(1e-5));
    REQUIRE(result.label == "sadness");
    REQUIRE(result.code == 2);

    REQUIRE_THROWS_AS(run_predict(summary.checkpoint_dir, dir / "missing.wav"), DataError);
    fs::remove_all(dir);
}

TEST_CASE("report command regenerates artifacts from stored files") {
    const auto dir = temp_dir("report");
    auto cfg = tiny_config(dir);
    run_prepare(cfg);
    run_extract(cfg);
    const auto summary = run_train(cfg);
    run_evaluate(cfg, summary.checkpoint_dir / "best.ckpt", "test");

    fs::remove(PipelinePaths(cfg).report_dir() / "curves.svg");
    const auto emitted = run_report(cfg);
    REQUIRE(fs::exists(PipelinePaths(cfg).report_dir() / "curves.svg"));
    REQUIRE_FALSE(emitted.files.empty());
    fs::remove_all(dir);
}

TEST_CASE("config validation rejects unknown keys and bad values") {
    const auto dir = temp_dir("config");
    write_json(dir / "bad_key.json",
               {{"corpus", {{"synthetic", true}}}, {"outputs", "typo"}});
    REQUIRE_THROWS_AS(load_config(dir / "bad_key.json"), ConfigError);

    write_json(dir / "bad_layer.json",
               {{"corpus", {{"synthetic", true}}},
                {"extractor", {{"kind", "synthetic"}, {"layer_index", 99}}},
                {"output_dir", (dir / "o").string()}});
    REQUIRE_THROWS_WITH(load_config(dir / "bad_layer.json"),
                        Catch::Matchers::ContainsSubstring("out of range"));

    write_json(dir / "bad_ratios.json",
               {{"corpus", {{"synthetic", true}}},
                {"split", {{"ratios", {1.0, 0.0, 0.0}}}},
                {"output_dir", (dir / "o").string()}});
    REQUIRE_THROWS_AS(load_config(dir / "bad_ratios.json"), ConfigError);

    REQUIRE_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("cli exit codes follow the documented contract") {
    const auto dir = temp_dir("cli");

    // Missing corpus root: data error -> 2 with the documented message.
    nlohmann::json missing_root = {{"corpus", {{"root", (dir / "no_audio").string()}}},
                                   {"output_dir", (dir / "out").string()}};
    write_json(dir / "missing_root.json", missing_root);
    auto r = run_cli("prepare --config " + (dir / "missing_root.json").string());
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.output.find("no audio found") != std::string::npos);

    // Config error -> 1, naming the bound.
    nlohmann::json bad_layer = {{"corpus", {{"synthetic", true}}},
                                {"extractor", {{"layer_index", 99}}},
                                {"output_dir", (dir / "out").string()}};
    write_json(dir / "bad_layer.json", bad_layer);
    r = run_cli("extract --config " + (dir / "bad_layer.json").string());
    REQUIRE(r.exit_code == 1);
    REQUIRE(r.output.find("out of range") != std::string::npos);

    // Unknown flag -> usage error.
    r = run_cli("prepare --bogus-flag");
    REQUIRE(r.exit_code == 1);

    // Happy path end to end through the binary, workers > 1 exercised.
    auto cfg = tiny_config(dir / "run");
    write_json(dir / "ok.json", nlohmann::json(cfg));
    r = run_cli("prepare --config " + (dir / "ok.json").string() + " --workers 2");
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("prepared 20 entries") != std::string::npos);
    r = run_cli("extract --config " + (dir / "ok.json").string() + " --workers 2");
    REQUIRE(r.exit_code == 0);
    r = run_cli("train --config " + (dir / "ok.json").string());
    REQUIRE(r.exit_code == 0);
    r = run_cli("evaluate --config " + (dir / "ok.json").string() + " --split val");
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("metrics.json") != std::string::npos);

    // Predict prints a label line and a 5-way distribution.
    const auto manifest = load_manifest(fs::path(cfg.output_dir) / "manifest.tsv");
    r = run_cli("predict --checkpoint " + (fs::path(cfg.output_dir) / "checkpoint").string() +
                " " + manifest.entries[0].path);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("label: ") != std::string::npos);
    REQUIRE(r.output.find("probabilities:") != std::string::npos);

    r = run_cli("predict --checkpoint " + (fs::path(cfg.output_dir) / "checkpoint").string() +
                " /definitely/not/there.wav");
    REQUIRE(r.exit_code == 2);
    fs::remove_all(dir);
}

TEST_CASE("workers produce the same extraction results as a single thread") {
    const auto dir_a = temp_dir("workers_a");
    const auto dir_b = temp_dir("workers_b");
    auto cfg_a = tiny_config(dir_a);
    auto cfg_b = tiny_config(dir_b);
    cfg_b.workers = 4;
    run_prepare(cfg_a);
    run_prepare(cfg_b);
    run_extract(cfg_a);
    run_extract(cfg_b);

    // Same synthetic corpus seed: per-entry features agree bit for bit.
    const auto ma = load_manifest(PipelinePaths(cfg_a).manifest_file());
    const auto mb = load_manifest(PipelinePaths(cfg_b).manifest_file());
    FeatureCache ca(PipelinePaths(cfg_a).cache), cb(PipelinePaths(cfg_b).cache);
    SyntheticExtractor ex(42);
    for (std::size_t i = 0; i < ma.entries.size(); ++i) {
        const auto ka = FeatureCache::key_for({ma.entries[i].path, ex.extractor_id(), 0, "raw"});
        const auto kb = FeatureCache::key_for({mb.entries[i].path, ex.extractor_id(), 0, "raw"});
        REQUIRE(ca.get_map(ka).values == cb.get_map(kb).values);
    }
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}
