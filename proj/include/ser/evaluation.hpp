#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ser/corpus.hpp"
#include "ser/errors.hpp"
#include "ser/training.hpp"
#include "ser/util.hpp"

namespace ser {

using ConfusionMatrix = std::vector<std::vector<std::int64_t>>;

// M[i][j] = count of (true == i, predicted == j).
inline ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                                 int n_classes = kNumClasses) {
    if (y_true.size() != y_pred.size())
        throw DataError("confusion: length mismatch (" + std::to_string(y_true.size()) + " vs " +
                        std::to_string(y_pred.size()) + ")");
    ConfusionMatrix m(static_cast<std::size_t>(n_classes),
                      std::vector<std::int64_t>(static_cast<std::size_t>(n_classes), 0));
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i], p = y_pred[i];
        if (t < 0 || t >= n_classes || p < 0 || p >= n_classes)
            throw DataError("confusion: label code out of range at index " + std::to_string(i));
        ++m[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    }
    return m;
}

struct ClassMetrics {
    std::string name;
    std::int64_t support = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvaluationReport {
    double accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
    double weighted_f1 = 0.0;
    double weighted_recall = 0.0;
    double macro_f1 = 0.0;
    double macro_recall = 0.0;
    ConfusionMatrix confusion;
    std::int64_t n_samples = 0;
    std::string split_tag;
    std::vector<std::string> warnings;
};

// Metric conventions: recall_i = M[ii]/row_i and precision_i = M[ii]/col_i,
// both 0 (with a warning) when the denominator is empty; F1 is their harmonic
// mean. Weighted averages are support-weighted; macro averages run over
// classes with nonzero support. The support-weighted recall reduces
// algebraically to trace/total, so it is computed from those integers and is
// exactly equal to accuracy.
inline EvaluationReport weighted_metrics(const ConfusionMatrix& m,
                                         const std::string& split_tag = "") {
    const std::size_t k = m.size();
    EvaluationReport r;
    r.split_tag = split_tag;
    r.confusion = m;

    std::int64_t total = 0, trace = 0;
    std::vector<std::int64_t> row_sum(k, 0), col_sum(k, 0);
    for (std::size_t i = 0; i < k; ++i) {
        if (m[i].size() != k) throw DataError("confusion matrix is not square");
        for (std::size_t j = 0; j < k; ++j) {
            if (m[i][j] < 0) throw DataError("confusion matrix entries must be nonnegative");
            total += m[i][j];
            row_sum[i] += m[i][j];
            col_sum[j] += m[i][j];
        }
        trace += m[i][i];
    }
    if (total == 0) throw DataError("cannot compute metrics of an all-zero confusion matrix");

    r.n_samples = total;
    r.accuracy = static_cast<double>(trace) / static_cast<double>(total);
    r.weighted_recall = static_cast<double>(trace) / static_cast<double>(total);

    double weighted_f1 = 0.0, macro_f1 = 0.0, macro_recall = 0.0;
    std::size_t supported = 0;
    for (std::size_t i = 0; i < k; ++i) {
        ClassMetrics c;
        c.name = i < class_names().size() ? class_names()[i] : "class" + std::to_string(i);
        c.support = row_sum[i];
        const double diag = static_cast<double>(m[i][i]);
        if (row_sum[i] > 0) {
            c.recall = diag / static_cast<double>(row_sum[i]);
        } else {
            r.warnings.push_back("recall undefined for class '" + c.name +
                                 "' (no true samples); counted as 0");
        }
        if (col_sum[i] > 0) {
            c.precision = diag / static_cast<double>(col_sum[i]);
        } else {
            r.warnings.push_back("precision undefined for class '" + c.name +
                                 "' (never predicted); counted as 0");
        }
        c.f1 = (c.precision + c.recall) > 0.0
                   ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
                   : 0.0;
        if (row_sum[i] > 0) {
            ++supported;
            macro_f1 += c.f1;
            macro_recall += c.recall;
            weighted_f1 += static_cast<double>(row_sum[i]) * c.f1;
        }
        r.per_class.push_back(std::move(c));
    }
    r.weighted_f1 = weighted_f1 / static_cast<double>(total);
    r.macro_f1 = macro_f1 / static_cast<double>(supported);
    r.macro_recall = macro_recall / static_cast<double>(supported);
    return r;
}

// Argmax prediction per row (ties break to the lower code), then the full
// metric set. Invariant to dataset ordering by construction.
inline EvaluationReport evaluate_predictions(const std::vector<int>& y_true,
                                             const std::vector<std::vector<double>>& probs,
                                             const std::string& split_tag = "") {
    if (y_true.empty()) throw DataError("cannot evaluate an empty split");
    if (y_true.size() != probs.size())
        throw DataError("evaluate: labels and predictions differ in length");
    std::vector<int> y_pred(y_true.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto& p = probs[i];
        if (p.size() != static_cast<std::size_t>(kNumClasses))
            throw DataError("prediction row has " + std::to_string(p.size()) +
                            " entries, expected " + std::to_string(kNumClasses));
        int best = 0;
        for (int c = 1; c < kNumClasses; ++c)
            if (p[static_cast<std::size_t>(c)] > p[static_cast<std::size_t>(best)]) best = c;
        y_pred[i] = best;
    }
    return weighted_metrics(confusion(y_true, y_pred), split_tag);
}

inline nlohmann::json report_to_json(const EvaluationReport& r) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& c : r.per_class)
        per_class.push_back({{"class", c.name},
                             {"support", c.support},
                             {"precision", c.precision},
                             {"recall", c.recall},
                             {"f1", c.f1}});
    return {{"accuracy", r.accuracy},
            {"weighted_f1", r.weighted_f1},
            {"weighted_recall", r.weighted_recall},
            {"macro_f1", r.macro_f1},
            {"macro_recall", r.macro_recall},
            {"per_class", per_class},
            {"confusion", r.confusion},
            {"n_samples", r.n_samples},
            {"split", r.split_tag},
            {"warnings", r.warnings}};
}

inline std::string report_to_text(const EvaluationReport& r) {
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof(buf), "split            %s\n", r.split_tag.c_str());
    out += buf;
    std::snprintf(buf, sizeof(buf), "samples          %lld\n",
                  static_cast<long long>(r.n_samples));
    out += buf;
    std::snprintf(buf, sizeof(buf), "accuracy         %.4f\n", r.accuracy);
    out += buf;
    std::snprintf(buf, sizeof(buf), "weighted f1      %.4f\n", r.weighted_f1);
    out += buf;
    std::snprintf(buf, sizeof(buf), "weighted recall  %.4f\n", r.weighted_recall);
    out += buf;
    std::snprintf(buf, sizeof(buf), "macro f1         %.4f\n", r.macro_f1);
    out += buf;
    std::snprintf(buf, sizeof(buf), "macro recall     %.4f\n\n", r.macro_recall);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-10s %8s %10s %8s %8s\n", "class", "support", "precision",
                  "recall", "f1");
    out += buf;
    for (const auto& c : r.per_class) {
        std::snprintf(buf, sizeof(buf), "%-10s %8lld %10.4f %8.4f %8.4f\n", c.name.c_str(),
                      static_cast<long long>(c.support), c.precision, c.recall, c.f1);
        out += buf;
    }
    for (const auto& w : r.warnings) out += "warning: " + w + "\n";
    return out;
}

namespace detail {

struct Series {
    std::string label;
    std::string color;
    const std::vector<double>* values;
};

inline void svg_panel(std::string& svg, double x0, const std::string& title,
                      const std::vector<Series>& series, std::size_t n) {
    const double width = 360, height = 280, pad = 36;
    double lo = 1e300, hi = -1e300;
    for (const auto& s : series)
        for (double v : *s.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (hi <= lo) hi = lo + 1.0;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "<rect x='%.1f' y='10' width='%.1f' height='%.1f' fill='none' "
                  "stroke='#888'/>\n",
                  x0 + pad, width - pad, height);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x='%.1f' y='%.1f' font-size='13' text-anchor='middle'>%s</text>\n",
                  x0 + pad + (width - pad) / 2, height + 40.0, title.c_str());
    svg += buf;
    std::snprintf(buf, sizeof(buf), "<text x='%.1f' y='20' font-size='10'>%.4g</text>\n", x0,
                  hi);
    svg += buf;
    std::snprintf(buf, sizeof(buf), "<text x='%.1f' y='%.1f' font-size='10'>%.4g</text>\n", x0,
                  height + 10.0, lo);
    svg += buf;
    int li = 0;
    for (const auto& s : series) {
        svg += "<polyline fill='none' stroke='" + s.color + "' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < n; ++i) {
            const double px =
                x0 + pad + (n > 1 ? (width - pad - 10) * static_cast<double>(i) /
                                        static_cast<double>(n - 1)
                                  : 0.0);
            const double py = 10 + height - height * (((*s.values)[i]) - lo) / (hi - lo);
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px, py);
            svg += buf;
        }
        svg += "'/>\n";
        std::snprintf(buf, sizeof(buf),
                      "<text x='%.1f' y='%.1f' font-size='11' fill='%s'>%s</text>\n",
                      x0 + pad + 8, 24.0 + 14 * li, s.color.c_str(), s.label.c_str());
        svg += buf;
        ++li;
    }
}

} // namespace detail

inline std::string curves_to_svg(const TrainingHistory& history) {
    const std::size_t n = history.records.size();
    std::vector<double> tl(n), vl(n), ta(n), va(n);
    for (std::size_t i = 0; i < n; ++i) {
        tl[i] = history.records[i].train_loss;
        vl[i] = history.records[i].val_loss;
        ta[i] = history.records[i].train_acc;
        va[i] = history.records[i].val_acc;
    }
    std::string svg = "<svg xmlns='http://www.w3.org/2000/svg' width='840' height='360' "
                      "viewBox='0 0 840 360'>\n";
    detail::svg_panel(svg, 10, "loss per epoch",
                      {{"train", "#1f6fb2", &tl}, {"val", "#d1495b", &vl}}, n);
    detail::svg_panel(svg, 430, "accuracy per epoch",
                      {{"train", "#1f6fb2", &ta}, {"val", "#d1495b", &va}}, n);
    svg += "</svg>\n";
    return svg;
}

inline std::string curves_to_csv(const TrainingHistory& history) {
    std::string out = "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
    char buf[256];
    for (const auto& r : history.records) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss,
                      r.train_acc, r.val_loss, r.val_acc, r.lr);
        out += buf;
    }
    return out;
}

inline std::string confusion_to_csv(const EvaluationReport& r) {
    std::string out = "true\\pred";
    for (const auto& c : r.per_class) out += "," + c.name;
    out += "\n";
    for (std::size_t i = 0; i < r.confusion.size(); ++i) {
        out += r.per_class[i].name;
        for (const auto v : r.confusion[i]) out += "," + std::to_string(v);
        out += "\n";
    }
    return out;
}

// Writes the report artifact set; every file is replaced atomically. Curves
// are skipped (with a notice on the returned list) when the history is empty.
struct EmittedReport {
    std::vector<fs::path> files;
    std::vector<std::string> notices;
};

inline EmittedReport emit_report(const EvaluationReport& report, const TrainingHistory& history,
                                 const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw IoError("cannot create report directory: " + out_dir.string());

    EmittedReport out;
    const fs::path metrics_json = out_dir / "metrics.json";
    atomic_write_text(metrics_json, report_to_json(report).dump(2) + "\n");
    out.files.push_back(metrics_json);

    const fs::path metrics_txt = out_dir / "metrics.txt";
    atomic_write_text(metrics_txt, report_to_text(report));
    out.files.push_back(metrics_txt);

    const fs::path conf_csv = out_dir / "confusion.csv";
    atomic_write_text(conf_csv, confusion_to_csv(report));
    out.files.push_back(conf_csv);

    if (history.records.empty()) {
        out.notices.push_back("history empty; curve artifacts skipped");
        return out;
    }
    const fs::path curves_csv = out_dir / "curves.csv";
    atomic_write_text(curves_csv, curves_to_csv(history));
    out.files.push_back(curves_csv);

    const fs::path curves_svg = out_dir / "curves.svg";
    atomic_write_text(curves_svg, curves_to_svg(history));
    out.files.push_back(curves_svg);
    return out;
}

} // namespace ser
