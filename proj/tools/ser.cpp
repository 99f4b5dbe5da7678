// Command-line entry point: config-driven prepare/extract/train/evaluate/
// predict/report pipeline. Exit codes: 0 success, 1 user/config error,
// 2 data error, 3 internal error.

#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "ser/config.hpp"
#include "ser/pipeline.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
    auto* c = cmd->add_option("--config", opts.config_path, "experiment config JSON");
    if (config_required) c->required();
    cmd->add_option("--seed", opts.seed, "override training and split seeds");
    cmd->add_option("--workers", opts.workers, "parallel workers for per-clip stages");
    cmd->add_option("--out", opts.out, "override output directory");
}

ser::ExperimentConfig resolve_config(const CommonOpts& opts) {
    ser::ExperimentConfig cfg = ser::load_config(opts.config_path);
    if (opts.seed) {
        cfg.training.seed = *opts.seed;
        cfg.split.seed = *opts.seed;
    }
    if (opts.workers) cfg.workers = *opts.workers;
    if (opts.out) cfg.output_dir = *opts.out;
    cfg.validate();
    return cfg;
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"speech emotion recognition experiment toolkit"};
    app.require_subcommand(1);

    CommonOpts prepare_opts, extract_opts, train_opts, evaluate_opts, report_opts;
    std::string eval_checkpoint, eval_split = "test";
    std::string predict_checkpoint_dir, predict_audio;

    auto* cmd_prepare =
        app.add_subcommand("prepare", "scan or synthesize the corpus, filter fear, normalize");
    add_common(cmd_prepare, prepare_opts);

    auto* cmd_extract = app.add_subcommand("extract", "populate the feature cache");
    add_common(cmd_extract, extract_opts);

    auto* cmd_train = app.add_subcommand("train", "train the configured model");
    add_common(cmd_train, train_opts);

    auto* cmd_evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
    add_common(cmd_evaluate, evaluate_opts);
    cmd_evaluate->add_option("--checkpoint", eval_checkpoint,
                             "checkpoint file (default <out>/checkpoint/best.ckpt)");
    cmd_evaluate->add_option("--split", eval_split, "split to evaluate: train|val|test");

    auto* cmd_predict = app.add_subcommand("predict", "classify one audio file");
    cmd_predict->add_option("--checkpoint", predict_checkpoint_dir,
                            "checkpoint directory containing best.ckpt and config.snapshot")
        ->required();
    cmd_predict->add_option("audio", predict_audio, "input audio file")->required();

    auto* cmd_report = app.add_subcommand("report", "re-emit report artifacts from stored files");
    add_common(cmd_report, report_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (cmd_prepare->parsed()) {
            const auto cfg = resolve_config(prepare_opts);
            const auto result = ser::run_prepare(cfg);
            print_warnings(result.warnings);
            std::printf("prepared %zu entries (%zu fear entries removed) -> %s\n",
                        result.manifest.entries.size(), result.fear_removed,
                        (ser::PipelinePaths(cfg).manifest_file()).string().c_str());
        } else if (cmd_extract->parsed()) {
            const auto cfg = resolve_config(extract_opts);
            const auto result = ser::run_extract(cfg);
            std::printf("extracted %zu feature maps (%zu cache hits, %zu total)\n",
                        result.extracted, result.cache_hits, result.total);
        } else if (cmd_train->parsed()) {
            const auto cfg = resolve_config(train_opts);
            const auto summary = ser::run_train(cfg);
            if (summary.history.records.empty()) {
                std::printf("trained %s on %zu clips -> %s\n", cfg.model.family.c_str(),
                            summary.train_size, summary.checkpoint_dir.string().c_str());
            } else {
                std::printf("trained %s for %zu epochs (best epoch %d, val acc %.4f) -> %s\n",
                            cfg.model.family.c_str(), summary.history.records.size(),
                            summary.best_epoch, summary.best_val_acc,
                            summary.checkpoint_dir.string().c_str());
            }
        } else if (cmd_evaluate->parsed()) {
            const auto cfg = resolve_config(evaluate_opts);
            const ser::fs::path checkpoint =
                eval_checkpoint.empty()
                    ? ser::PipelinePaths(cfg).checkpoint_dir() / "best.ckpt"
                    : ser::fs::path(eval_checkpoint);
            const auto summary = ser::run_evaluate(cfg, checkpoint, eval_split);
            std::fputs(ser::report_to_text(summary.report).c_str(), stdout);
            for (const auto& n : summary.emitted.notices)
                std::fprintf(stderr, "notice: %s\n", n.c_str());
            for (const auto& f : summary.emitted.files)
                std::printf("wrote %s\n", f.string().c_str());
        } else if (cmd_predict->parsed()) {
            const auto result = ser::run_predict(predict_checkpoint_dir, predict_audio);
            std::printf("label: %s\n", result.label.c_str());
            std::printf("probabilities:");
            for (int c = 0; c < ser::kNumClasses; ++c)
                std::printf(" %s=%.6f", ser::class_names()[static_cast<std::size_t>(c)].c_str(),
                            result.probs[static_cast<std::size_t>(c)]);
            std::printf("\n");
        } else if (cmd_report->parsed()) {
            const auto cfg = resolve_config(report_opts);
            const auto emitted = ser::run_report(cfg);
            for (const auto& f : emitted.files) std::printf("wrote %s\n", f.string().c_str());
        }
    } catch (const ser::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const ser::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 3;
    }
    return 0;
}
