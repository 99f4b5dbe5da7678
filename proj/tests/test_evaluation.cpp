#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <vector>

#include "ser/evaluation.hpp"
#include "ser/rng.hpp"

using namespace ser;

namespace {

// From-definition oracle: per-class counts gathered with plain double loops,
// no confusion matrix, no shared code with the implementation.
struct OracleMetrics {
    double accuracy = 0.0;
    std::array<double, 5> precision{}, recall{}, f1{};
    double weighted_f1 = 0.0, weighted_recall = 0.0;
    double macro_f1 = 0.0, macro_recall = 0.0;
};

OracleMetrics naive_metrics(const std::vector<int>& yt, const std::vector<int>& yp) {
    OracleMetrics m;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < yt.size(); ++i)
        if (yt[i] == yp[i]) ++hits;
    m.accuracy = static_cast<double>(hits) / static_cast<double>(yt.size());

    std::size_t supported = 0;
    for (int c = 0; c < 5; ++c) {
        double tp = 0, fp = 0, fn = 0, support = 0;
        for (std::size_t i = 0; i < yt.size(); ++i) {
            if (yt[i] == c) {
                support += 1;
                if (yp[i] == c)
                    tp += 1;
                else
                    fn += 1;
            } else if (yp[i] == c) {
                fp += 1;
            }
        }
        const auto uc = static_cast<std::size_t>(c);
        m.precision[uc] = (tp + fp) > 0 ? tp / (tp + fp) : 0.0;
        m.recall[uc] = (tp + fn) > 0 ? tp / (tp + fn) : 0.0;
        m.f1[uc] = (m.precision[uc] + m.recall[uc]) > 0
                       ? 2 * m.precision[uc] * m.recall[uc] / (m.precision[uc] + m.recall[uc])
                       : 0.0;
        if (support > 0) {
            ++supported;
            m.weighted_f1 += support * m.f1[uc];
            m.weighted_recall += support * m.recall[uc];
            m.macro_f1 += m.f1[uc];
            m.macro_recall += m.recall[uc];
        }
    }
    m.weighted_f1 /= static_cast<double>(yt.size());
    m.weighted_recall /= static_cast<double>(yt.size());
    m.macro_f1 /= static_cast<double>(supported);
    m.macro_recall /= static_cast<double>(supported);
    return m;
}

fs::path temp_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("ser_eval_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("confusion counts pairs exactly") {
    std::vector<int> yt, yp;
    Rng rng(99);
    for (int i = 0; i < 1000; ++i) {
        yt.push_back(static_cast<int>(rng.uniform_index(5)));
        yp.push_back(static_cast<int>(rng.uniform_index(5)));
    }
    const auto m = confusion(yt, yp);

    // Naive counting oracle.
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b) {
            std::int64_t count = 0;
            for (std::size_t i = 0; i < yt.size(); ++i)
                if (yt[i] == a && yp[i] == b) ++count;
            REQUIRE(m[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] == count);
        }

    std::int64_t total = 0;
    for (const auto& row : m)
        for (auto v : row) total += v;
    REQUIRE(total == 1000);
}

TEST_CASE("confusion rejects bad input") {
    REQUIRE_THROWS_AS(confusion({0, 1}, {0}), DataError);
    REQUIRE_THROWS_AS(confusion({0, 5}, {0, 0}), DataError);
    REQUIRE_THROWS_AS(confusion({0, -1}, {0, 0}), DataError);
    const auto zero = confusion({}, {});
    REQUIRE(zero.size() == 5);
    REQUIRE_THROWS_AS(weighted_metrics(zero), DataError);
}

TEST_CASE("identical vectors give a diagonal matrix and perfect metrics") {
    const std::vector<int> y = {0, 1, 2, 3, 4, 2, 1, 0};
    const auto m = confusion(y, y);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            REQUIRE(m[i][j] == (i == j ? m[i][i] : 0));
    const auto r = weighted_metrics(m);
    REQUIRE(r.accuracy == 1.0);
    REQUIRE(r.weighted_f1 == 1.0);
    REQUIRE(r.weighted_recall == 1.0);
    REQUIRE(r.macro_f1 == 1.0);
    REQUIRE(r.macro_recall == 1.0);
}

TEST_CASE("hand-enumerated fixture") {
    // true [0,0,1,1,2], predicted [0,1,1,1,2]:
    // 4/5 correct; recalls 0.5, 1.0, 1.0 for the three supported classes.
    const auto r = weighted_metrics(confusion({0, 0, 1, 1, 2}, {0, 1, 1, 1, 2}));
    REQUIRE(r.accuracy == Catch::Approx(0.8).margin(1e-12));
    REQUIRE(r.per_class[0].recall == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(r.per_class[1].recall == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(r.per_class[2].recall == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("two-class collapse fixture") {
    // Supports 3 and 1, everything predicted class 0.
    const auto r = weighted_metrics(confusion({0, 0, 0, 1}, {0, 0, 0, 0}));
    REQUIRE(r.accuracy == Catch::Approx(0.75).margin(1e-12));
    REQUIRE(r.weighted_recall == Catch::Approx(0.75).margin(1e-12));
    REQUIRE(r.macro_recall == Catch::Approx(0.5).margin(1e-12));
    REQUIRE_FALSE(r.warnings.empty()); // class 1 never predicted
}

TEST_CASE("constant-anger predictor on the published class supports") {
    // Utterance counts per emotion with fear excluded; predicting the
    // majority class scores 1059/2962.
    const std::array<std::int64_t, 5> support = {1059, 1028, 449, 225, 201};
    std::vector<int> yt, yp;
    for (int c = 0; c < 5; ++c)
        for (std::int64_t i = 0; i < support[static_cast<std::size_t>(c)]; ++i) {
            yt.push_back(c);
            yp.push_back(0);
        }
    REQUIRE(yt.size() == 2962);
    const auto r = weighted_metrics(confusion(yt, yp));
    REQUIRE(r.accuracy == Catch::Approx(1059.0 / 2962.0).margin(1e-12));
    REQUIRE(r.accuracy == Catch::Approx(0.3575).margin(5e-4));
}

TEST_CASE("oracle equivalence on 1000 random pairs") {
    std::vector<int> yt, yp;
    Rng rng(777);
    for (int i = 0; i < 1000; ++i) {
        yt.push_back(static_cast<int>(rng.uniform_index(5)));
        yp.push_back(static_cast<int>(rng.uniform_index(5)));
    }
    const auto r = weighted_metrics(confusion(yt, yp));
    const auto o = naive_metrics(yt, yp);

    REQUIRE(std::fabs(r.accuracy - o.accuracy) < 1e-9);
    for (std::size_t c = 0; c < 5; ++c) {
        REQUIRE(std::fabs(r.per_class[c].precision - o.precision[c]) < 1e-9);
        REQUIRE(std::fabs(r.per_class[c].recall - o.recall[c]) < 1e-9);
        REQUIRE(std::fabs(r.per_class[c].f1 - o.f1[c]) < 1e-9);
    }
    REQUIRE(std::fabs(r.weighted_f1 - o.weighted_f1) < 1e-9);
    REQUIRE(std::fabs(r.weighted_recall - o.weighted_recall) < 1e-9);
    REQUIRE(std::fabs(r.macro_f1 - o.macro_f1) < 1e-9);
    REQUIRE(std::fabs(r.macro_recall - o.macro_recall) < 1e-9);

    // Single-count identity, exact.
    REQUIRE(r.weighted_recall == r.accuracy);
}

TEST_CASE("weighted recall equals accuracy exactly across random matrices") {
    Rng rng(31337);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> yt, yp;
        const int n = 1 + static_cast<int>(rng.uniform_index(200));
        for (int i = 0; i < n; ++i) {
            yt.push_back(static_cast<int>(rng.uniform_index(5)));
            yp.push_back(static_cast<int>(rng.uniform_index(5)));
        }
        const auto r = weighted_metrics(confusion(yt, yp));
        REQUIRE(r.weighted_recall == r.accuracy);
    }
}

TEST_CASE("evaluation is invariant to dataset ordering") {
    Rng rng(5);
    std::vector<int> yt;
    std::vector<std::vector<double>> probs;
    for (int i = 0; i < 200; ++i) {
        yt.push_back(static_cast<int>(rng.uniform_index(5)));
        std::vector<double> p(5);
        double total = 0;
        for (auto& v : p) {
            v = rng.uniform() + 1e-3;
            total += v;
        }
        for (auto& v : p) v /= total;
        probs.push_back(p);
    }
    const auto base = report_to_json(evaluate_predictions(yt, probs, "test"));

    std::vector<std::size_t> order(yt.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    std::vector<int> yt2;
    std::vector<std::vector<double>> probs2;
    for (auto i : order) {
        yt2.push_back(yt[i]);
        probs2.push_back(probs[i]);
    }
    const auto shuffled = report_to_json(evaluate_predictions(yt2, probs2, "test"));
    REQUIRE(base == shuffled);
}

TEST_CASE("evaluate_predictions validates input") {
    REQUIRE_THROWS_AS(evaluate_predictions({}, {}), DataError);
    REQUIRE_THROWS_AS(evaluate_predictions({0}, {{0.5, 0.5}}), DataError);
}

TEST_CASE("emit_report writes the documented artifact set") {
    const auto dir = temp_dir("emit");
    const auto report = weighted_metrics(confusion({0, 1, 2, 3, 4}, {0, 1, 2, 3, 4}), "test");

    TrainingHistory history;
    history.records.push_back({1, 1.5, 0.2, 1.4, 0.3, 1e-3});
    history.records.push_back({2, 1.0, 0.5, 1.1, 0.4, 1e-3});

    const auto emitted = emit_report(report, history, dir);
    for (const char* name :
         {"metrics.json", "metrics.txt", "confusion.csv", "curves.csv", "curves.svg"})
        REQUIRE(fs::exists(dir / name));
    REQUIRE(emitted.files.size() == 5);

    // Empty history: curves skipped with a notice, metrics still written.
    const auto dir2 = temp_dir("emit_nohist");
    const auto emitted2 = emit_report(report, TrainingHistory{}, dir2);
    REQUIRE(fs::exists(dir2 / "metrics.json"));
    REQUIRE_FALSE(fs::exists(dir2 / "curves.csv"));
    REQUIRE_FALSE(emitted2.notices.empty());

    // Re-run replaces artifacts, leaving no temp litter behind.
    const auto report2 = weighted_metrics(confusion({0, 1, 2, 3, 4}, {0, 0, 0, 0, 0}), "test");
    emit_report(report2, history, dir);
    const auto j = nlohmann::json::parse(read_file_bytes(dir / "metrics.json"));
    REQUIRE(j.at("accuracy").get<double>() == Catch::Approx(0.2));
    std::size_t n_files = 0;
    for (const auto& de : fs::directory_iterator(dir)) {
        REQUIRE(de.path().string().find(".tmp.") == std::string::npos);
        ++n_files;
    }
    REQUIRE(n_files == 5);

    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("unwritable report directory fails cleanly") {
    REQUIRE_THROWS_AS(
        emit_report(weighted_metrics(confusion({0}, {0})), TrainingHistory{},
                    "/proc/ser_no_such_dir/report"),
        Error);
}
