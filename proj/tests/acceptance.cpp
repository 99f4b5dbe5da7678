// Acceptance suite. Each criterion prints one PASS/FAIL line; the process
// exits nonzero if any requested criterion fails. Run with no arguments for
// all criteria or with a list of criterion numbers.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "ser/config.hpp"
#include "ser/evaluation.hpp"
#include "ser/models.hpp"
#include "ser/pipeline.hpp"
#include "ser/training.hpp"

using namespace ser;

namespace {

struct CheckFailure {
    std::string message;
};

void check(bool ok, const std::string& what) {
    if (!ok) throw CheckFailure{what};
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("ser_acceptance_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// ---------------------------------------------------------------------------
// 1. Shape ladder: the reference-scale build walks every stage size.

void criterion1() {
    auto model = build_proposed_cnn<float>(CnnSpec{}, 1); // asserts internally
    const auto walk = model.net.shape_walk({1, 1, 300, 300});
    const std::vector<Shape> ladder = {
        {1, 64, 300, 300}, {1, 128, 150, 150}, {1, 256, 75, 75}, {1, 512, 37, 37},
        {1, 512, 18, 18},  {1, 1024, 1, 1},    {1, 64, 1, 1},    {1, 5, 1, 1}};
    std::size_t next = 0;
    for (const auto& s : walk)
        if (next < ladder.size() && s.c == ladder[next].c && s.h == ladder[next].h &&
            s.w == ladder[next].w)
            ++next;
    check(next == ladder.size(), "ladder missing step " + std::to_string(next));

    // Degenerate geometry must fail as a build error.
    bool threw = false;
    try {
        CnnSpec bad;
        bad.input_size = 2;
        build_proposed_cnn<float>(bad, 1);
    } catch (const Error&) {
        threw = true;
    }
    check(threw, "invalid geometry did not fail the build");
}

// ---------------------------------------------------------------------------
// 2. Hermetic end-to-end training run.

ExperimentConfig hermetic_config(const fs::path& out) {
    ExperimentConfig cfg;
    cfg.corpus.synthetic = true;
    cfg.corpus.synth_n_per_class = 10; // 50 clips
    cfg.corpus.synth_seed = 7;
    cfg.extractor.kind = "synthetic";
    cfg.model.family = "proposed-cnn";
    // Width/input-reduced variant of the same architecture; the full-scale
    // network does not fit a CPU time budget (see README).
    cfg.model.input_size = 75;
    cfg.model.width_divisor = 8;
    cfg.training.max_epochs = 60;
    cfg.training.batch_size = 4;
    cfg.training.lr = 1e-3;
    cfg.training.optimizer = "adam";
    cfg.training.seed = 42;
    cfg.training.early_stop_patience = 0;
    cfg.split.ratios = {0.8, 0.2, 0.0}; // 40/10
    cfg.split.seed = 42;
    cfg.output_dir = out.string();
    return cfg;
}

void criterion2() {
    const auto dir = fresh_dir("c2");
    auto cfg = hermetic_config(dir);
    run_prepare(cfg);
    run_extract(cfg);
    const auto summary = run_train(cfg);
    check(summary.train_size == 40, "expected a 40-clip training split");
    check(summary.val_size == 10, "expected a 10-clip validation split");
    check(summary.history.records.size() <= 60, "epoch budget exceeded");

    bool satisfied = false;
    double best_train = 0, best_val = 0;
    for (const auto& r : summary.history.records) {
        best_train = std::max(best_train, r.train_acc);
        best_val = std::max(best_val, r.val_acc);
        if (r.train_acc >= 0.98 && r.val_acc >= 0.90) satisfied = true;
    }
    check(satisfied, "no epoch reached train>=0.98 and val>=0.90 (best train " +
                         std::to_string(best_train) + ", best val " + std::to_string(best_val) +
                         ")");
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// 3. Metric oracle equivalence.

void criterion3() {
    Rng rng(20240);
    std::vector<int> yt, yp;
    for (int i = 0; i < 1000; ++i) {
        yt.push_back(static_cast<int>(rng.uniform_index(5)));
        yp.push_back(static_cast<int>(rng.uniform_index(5)));
    }
    const auto r = weighted_metrics(confusion(yt, yp));

    // Definition-level oracle.
    std::size_t hits = 0;
    for (std::size_t i = 0; i < yt.size(); ++i)
        if (yt[i] == yp[i]) ++hits;
    const double accuracy = static_cast<double>(hits) / 1000.0;
    check(std::fabs(r.accuracy - accuracy) < 1e-9, "accuracy mismatch");

    double weighted_f1 = 0, weighted_recall = 0, macro_f1 = 0, macro_recall = 0;
    std::size_t supported = 0;
    for (int c = 0; c < 5; ++c) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < yt.size(); ++i) {
            if (yt[i] == c && yp[i] == c) tp += 1;
            if (yt[i] != c && yp[i] == c) fp += 1;
            if (yt[i] == c && yp[i] != c) fn += 1;
        }
        const double support = tp + fn;
        const double precision = (tp + fp) > 0 ? tp / (tp + fp) : 0.0;
        const double recall = support > 0 ? tp / support : 0.0;
        const double f1 =
            (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
        const auto& got = r.per_class[static_cast<std::size_t>(c)];
        check(std::fabs(got.precision - precision) < 1e-9, "precision mismatch");
        check(std::fabs(got.recall - recall) < 1e-9, "recall mismatch");
        check(std::fabs(got.f1 - f1) < 1e-9, "f1 mismatch");
        if (support > 0) {
            ++supported;
            weighted_f1 += support * f1;
            weighted_recall += support * recall;
            macro_f1 += f1;
            macro_recall += recall;
        }
    }
    check(std::fabs(r.weighted_f1 - weighted_f1 / 1000.0) < 1e-9, "weighted f1 mismatch");
    check(std::fabs(r.weighted_recall - weighted_recall / 1000.0) < 1e-9,
          "weighted recall mismatch");
    check(std::fabs(r.macro_f1 - macro_f1 / static_cast<double>(supported)) < 1e-9,
          "macro f1 mismatch");
    check(std::fabs(r.macro_recall - macro_recall / static_cast<double>(supported)) < 1e-9,
          "macro recall mismatch");
    check(r.weighted_recall == r.accuracy, "weighted recall != accuracy (must be exact)");
}

// ---------------------------------------------------------------------------
// 4. Loss and gradient checks.

void criterion4() {
    // Uniform prediction -> ln 5.
    const std::vector<std::vector<double>> uniform = {{0.2, 0.2, 0.2, 0.2, 0.2}};
    const std::vector<std::vector<double>> target = {{0, 0, 1, 0, 0}};
    check(std::fabs(cross_entropy(uniform, target) - std::log(5.0)) < 1e-9,
          "uniform cross-entropy != ln 5");

    const std::vector<double> no_weights;

    // Loss gradient w.r.t. logits vs central differences.
    {
        Rng rng(99);
        Tensor<double> logits(4, 5, 1, 1);
        for (auto& v : logits.data) v = rng.normal();
        const std::vector<int> targets = {3, 0, 2, 4};
        Tensor<double> grad;
        softmax_xent<double>(logits, targets, no_weights, &grad);
        for (std::size_t i = 0; i < logits.size(); ++i) {
            Tensor<double> plus = logits, minus = logits;
            plus.data[i] += 1e-6;
            minus.data[i] -= 1e-6;
            const double fd = (softmax_xent<double>(plus, targets, no_weights, nullptr) -
                               softmax_xent<double>(minus, targets, no_weights, nullptr)) /
                              2e-6;
            const double denom = std::max({1e-8, std::fabs(fd), std::fabs(grad.data[i])});
            check(std::fabs(grad.data[i] - fd) / denom < 1e-3, "logit gradient mismatch");
        }
    }

    // Tiny-CNN parameter gradients vs central differences.
    {
        CnnSpec spec = CnnSpec::scaled(16, 12);
        spec.dropout_rates = {0, 0, 0, 0, 0};
        auto model = build_proposed_cnn<double>(spec, 1234);
        Rng rng(55);
        Tensor<double> x(2, 1, 12, 12);
        for (auto& v : x.data) v = rng.normal();
        const std::vector<int> targets = {2, 4};

        auto loss_of = [&]() {
            Tensor<double> logits = model.net.forward(x, true);
            return softmax_xent<double>(logits, targets, no_weights, nullptr);
        };
        model.net.zero_grad();
        Tensor<double> logits = model.net.forward(x, true);
        Tensor<double> dlogits;
        softmax_xent<double>(logits, targets, no_weights, &dlogits);
        model.net.backward(std::move(dlogits));

        Rng pick(77);
        std::size_t checked = 0;
        for (auto& p : model.net.params()) {
            if (!p.grad) continue;
            for (std::size_t s = 0; s < std::min<std::size_t>(5, p.value->size()); ++s) {
                const std::size_t i = pick.uniform_index(p.value->size());
                const double keep = (*p.value)[i];
                const double h = 1e-5 * std::max(1.0, std::fabs(keep));
                (*p.value)[i] = keep + h;
                const double lp = loss_of();
                (*p.value)[i] = keep - h;
                const double lm = loss_of();
                (*p.value)[i] = keep;
                const double fd = (lp - lm) / (2 * h);
                const double analytic = (*p.grad)[i];
                const double denom = std::max(std::fabs(fd), std::fabs(analytic));
                if (denom < 1e-8) continue;
                check(std::fabs(analytic - fd) / denom < 1e-3,
                      "parameter gradient mismatch at " + p.tag);
                ++checked;
            }
        }
        check(checked > 80, "gradient check covered too few coordinates");
    }
}

// ---------------------------------------------------------------------------
// 5. Preprocessing laws.

void criterion5() {
    // 3 s at 16 kHz: exactly 112000 samples, last 64000 all zero.
    std::vector<float> three_sec(48000);
    Rng rng(5);
    for (auto& v : three_sec) v = static_cast<float>(0.4 * rng.normal());
    const auto clip = normalize_audio(three_sec, 16000, NormalizeParams{}, "c5");
    check(clip.samples.size() == 112000, "normalized length is not 112000");
    for (std::size_t i = 48000; i < 112000; ++i)
        check(clip.samples[i] == 0.0f, "padding is not zero at " + std::to_string(i));
    for (std::size_t i = 0; i < 48000; ++i)
        check(clip.samples[i] == three_sec[i], "leading samples were altered");

    // Idempotence, bit-exact.
    const auto again = normalize_audio(clip.samples, clip.sample_rate, NormalizeParams{}, "c5");
    check(again.samples == clip.samples, "normalization is not idempotent");

    // Fear never survives filtering (randomized manifests).
    const std::array<std::string, 6> tags = {"anger", "neutral",   "sadness",
                                             "surprise", "happiness", "fear"};
    for (int trial = 0; trial < 200; ++trial) {
        CorpusManifest m;
        const auto n = rng.uniform_index(80);
        for (std::size_t i = 0; i < n; ++i)
            m.entries.push_back({"/r/" + std::to_string(trial) + "_" + std::to_string(i),
                                 tags[rng.uniform_index(6)], "s", 1.0});
        std::size_t kept = 0;
        for (const auto& e : filter_fear(m).entries) {
            check(e.label != kFearTag, "fear survived filtering");
            ++kept;
        }
        std::size_t expected = 0;
        for (const auto& e : m.entries)
            if (e.label != kFearTag) ++expected;
        check(kept == expected, "filter dropped a non-fear entry");
    }
}

// ---------------------------------------------------------------------------
// 6. Resize correctness.

void criterion6() {
    FeatureMap ramp;
    ramp.frames = 349;
    ramp.channels = 1024;
    ramp.values.resize(349 * 1024);
    for (std::size_t i = 0; i < 349; ++i)
        for (std::size_t j = 0; j < 1024; ++j)
            ramp.at(i, j) = static_cast<float>(i) + static_cast<float>(j);
    const auto out = resize_to_square(ramp, 300);

    for (std::size_t i = 0; i < 300; ++i)
        for (std::size_t j = 0; j < 300; ++j) {
            // Independent per-pixel oracle.
            const double r = i * 348.0 / 299.0;
            const double c = j * 1023.0 / 299.0;
            std::size_t r0 = std::min<std::size_t>(static_cast<std::size_t>(r), 347);
            std::size_t c0 = std::min<std::size_t>(static_cast<std::size_t>(c), 1022);
            const double fr = r - static_cast<double>(r0), fc = c - static_cast<double>(c0);
            const double expect = (1 - fr) * (1 - fc) * ramp.at(r0, c0) +
                                  (1 - fr) * fc * ramp.at(r0, c0 + 1) +
                                  fr * (1 - fc) * ramp.at(r0 + 1, c0) +
                                  fr * fc * ramp.at(r0 + 1, c0 + 1);
            check(std::fabs(out.at(i, j) - expect) < 1e-5 * std::max(1.0, std::fabs(expect)),
                  "ramp oracle mismatch at " + std::to_string(i) + "," + std::to_string(j));
        }
    check(out.values.front() == 0.0f, "corner 0,0");
    check(out.at(299, 0) == 348.0f, "corner 299,0");
    check(out.at(0, 299) == 1023.0f, "corner 0,299");
    check(out.at(299, 299) == 1371.0f, "corner 299,299");

    // Convexity bounds on random maps.
    Rng rng(66);
    for (int trial = 0; trial < 10; ++trial) {
        FeatureMap m;
        m.frames = 5 + rng.uniform_index(120);
        m.channels = 5 + rng.uniform_index(120);
        m.values.resize(m.frames * m.channels);
        for (auto& v : m.values) v = static_cast<float>(rng.normal());
        float lo = m.values[0], hi = m.values[0];
        for (float v : m.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const auto resized = resize_to_square(m, 64);
        for (float v : resized.values)
            check(v >= lo && v <= hi, "resize output escaped the input range");
    }
}

// ---------------------------------------------------------------------------
// 7. Pipeline determinism: byte-identical metrics.json across two runs.

void criterion7() {
    auto run_once = [](const fs::path& dir) {
        ExperimentConfig cfg;
        cfg.corpus.synthetic = true;
        cfg.corpus.synth_n_per_class = 6;
        cfg.corpus.synth_seed = 7;
        cfg.model.family = "proposed-cnn";
        cfg.model.input_size = 40;
        cfg.model.width_divisor = 16;
        cfg.training.max_epochs = 8;
        cfg.training.batch_size = 4;
        cfg.training.seed = 42;
        cfg.training.early_stop_patience = 0;
        cfg.split.ratios = {0.5, 0.25, 0.25};
        cfg.split.seed = 42;
        cfg.output_dir = dir.string();
        run_prepare(cfg);
        run_extract(cfg);
        const auto summary = run_train(cfg);
        run_evaluate(cfg, summary.checkpoint_dir / "best.ckpt", "test");
        return read_file_bytes(PipelinePaths(cfg).report_dir() / "metrics.json");
    };
    const auto dir_a = fresh_dir("c7a");
    const auto dir_b = fresh_dir("c7b");
    const std::string a = run_once(dir_a);
    const std::string b = run_once(dir_b);
    check(!a.empty(), "first run produced no metrics");
    check(a == b, "metrics.json differs between identical runs");
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

// ---------------------------------------------------------------------------
// 8. Freeze law for the transfer model (stub backbone).

void criterion8() {
    TransferSpec spec;
    spec.input_size = 48;
    auto model = build_transfer<float>(spec, 2024);

    std::vector<std::vector<float>> backbone_init;
    for (auto& p : model.net.params())
        if (!p.trainable) backbone_init.push_back(*p.value);
    check(!backbone_init.empty(), "transfer model has no frozen backbone parameters");

    auto params = model.net.params();
    AdamOptimizer<float> opt;
    Rng rng(31);
    const std::vector<double> no_weights;
    for (int step = 0; step < 5; ++step) {
        Tensor<float> x(4, 1, 48, 48);
        for (auto& v : x.data) v = static_cast<float>(rng.normal());
        model.net.zero_grad();
        Tensor<float> logits = model.forward(x, true);
        Tensor<float> grad;
        softmax_xent<float>(logits, {0, 1, 2, 3}, no_weights, &grad);
        model.net.backward(std::move(grad));
        opt.step(params, 1e-3);
    }

    std::size_t i = 0;
    for (auto& p : model.net.params())
        if (!p.trainable) {
            check(*p.value == backbone_init[i],
                  "backbone parameter block " + std::to_string(i) + " changed");
            ++i;
        }
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<int, std::function<void()>>> criteria = {
        {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
        {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8}};
    const std::vector<std::string> names = {
        "shape ladder asserted at build",
        "hermetic end-to-end training reaches 0.98 train / 0.90 val",
        "metrics match the from-definition oracle within 1e-9",
        "loss values and gradients match finite differences",
        "preprocessing laws (padding, idempotence, fear filtering)",
        "bilinear resize matches the per-pixel oracle and bounds",
        "two identical pipeline runs emit byte-identical metrics.json",
        "frozen backbone is bit-identical after optimizer steps"};

    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& [num, fn] : criteria) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), num) == wanted.end())
            continue;
        const auto start = std::chrono::steady_clock::now();
        try {
            fn();
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            std::printf("PASS  criterion %d: %s (%.1fs)\n", num,
                        names[static_cast<std::size_t>(num - 1)].c_str(), secs);
        } catch (const CheckFailure& f) {
            std::printf("FAIL  criterion %d: %s -- %s\n", num,
                        names[static_cast<std::size_t>(num - 1)].c_str(), f.message.c_str());
            ++failures;
        } catch (const std::exception& e) {
            std::printf("FAIL  criterion %d: %s -- unexpected error: %s\n", num,
                        names[static_cast<std::size_t>(num - 1)].c_str(), e.what());
            ++failures;
        }
    }
    return failures == 0 ? 0 : 1;
}
