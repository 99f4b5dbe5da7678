#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ser/corpus.hpp"
#include "ser/errors.hpp"

namespace ser {

struct SvmSpec {
    double c = 1.0;
    double gamma = -1.0; // < 0 means "auto" = 1 / n_features
    double tol = 1e-3;
    std::size_t max_iter = 0; // 0 -> derived from problem size

    double resolve_gamma(std::size_t n_features) const {
        return gamma > 0.0 ? gamma : 1.0 / static_cast<double>(n_features);
    }
};

inline void to_json(nlohmann::json& j, const SvmSpec& s) {
    j = {{"c", s.c}, {"gamma", s.gamma}, {"tol", s.tol}, {"max_iter", s.max_iter}};
}
inline void from_json(const nlohmann::json& j, SvmSpec& s) {
    s.c = j.value("c", s.c);
    s.gamma = j.value("gamma", s.gamma);
    s.tol = j.value("tol", s.tol);
    s.max_iter = j.value("max_iter", s.max_iter);
}

// RBF-kernel SVM: features standardized to zero mean and unit variance on the
// training set, then one-vs-one binary machines trained with SMO
// (max-violating-pair working set selection). Probabilities are vote-style
// aggregates of the sigmoid-squashed duel margins, normalized to the simplex;
// they are a deterministic ranking device, not calibrated estimates.
class SvmModel {
public:
    struct Duel {
        int a = 0, b = 0; // indices into classes_
        std::vector<double> coef; // alpha_i * y_i per support vector
        std::vector<double> svs;  // n_sv x dim, standardized space
        double offset = 0.0;
        std::size_t n_sv() const { return coef.size(); }
    };

    static SvmModel fit(const std::vector<std::vector<float>>& x, const std::vector<int>& y,
                        const SvmSpec& spec) {
        if (x.empty() || x.size() != y.size())
            throw DataError("svm training needs matching non-empty features and labels");
        const std::size_t dim = x[0].size();
        for (const auto& row : x) {
            if (row.size() != dim) throw DataError("inconsistent feature dimensions");
            for (float v : row)
                if (!std::isfinite(v)) throw DataError("non-finite feature in svm training data");
        }

        SvmModel m;
        m.spec_ = spec;
        m.dim_ = dim;
        m.gamma_ = spec.resolve_gamma(dim);

        // Class order is first appearance, so the stored label map is what
        // connects model-internal indices back to canonical codes.
        for (int code : y) {
            bool known = false;
            for (int c : m.classes_)
                if (c == code) known = true;
            if (!known) m.classes_.push_back(code);
        }
        if (m.classes_.size() < 2)
            throw DataError("svm training requires at least 2 classes, got " +
                            std::to_string(m.classes_.size()));

        // Standardization statistics from the training set only.
        m.mean_.assign(dim, 0.0);
        m.scale_.assign(dim, 1.0);
        const double n_inv = 1.0 / static_cast<double>(x.size());
        for (const auto& row : x)
            for (std::size_t d = 0; d < dim; ++d) m.mean_[d] += row[d];
        for (auto& v : m.mean_) v *= n_inv;
        std::vector<double> var(dim, 0.0);
        for (const auto& row : x)
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = row[d] - m.mean_[d];
                var[d] += diff * diff;
            }
        for (std::size_t d = 0; d < dim; ++d) {
            const double sd = std::sqrt(var[d] * n_inv);
            m.scale_[d] = sd > 1e-12 ? sd : 1.0;
        }

        std::vector<std::vector<double>> xs(x.size(), std::vector<double>(dim));
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t d = 0; d < dim; ++d)
                xs[i][d] = (x[i][d] - m.mean_[d]) / m.scale_[d];

        for (std::size_t a = 0; a < m.classes_.size(); ++a)
            for (std::size_t b = a + 1; b < m.classes_.size(); ++b)
                m.duels_.push_back(m.train_duel(xs, y, static_cast<int>(a), static_cast<int>(b)));
        return m;
    }

    std::vector<int> predict(const std::vector<std::vector<float>>& x) const {
        std::vector<int> out;
        out.reserve(x.size());
        for (const auto& probs : predict_proba(x)) {
            int best = 0;
            for (int c = 1; c < kNumClasses; ++c)
                if (probs[static_cast<std::size_t>(c)] > probs[static_cast<std::size_t>(best)])
                    best = c;
            out.push_back(best);
        }
        return out;
    }

    // Canonical 5-way distributions; classes absent from training get zero mass.
    std::vector<std::vector<double>> predict_proba(
        const std::vector<std::vector<float>>& x) const {
        std::vector<std::vector<double>> out;
        out.reserve(x.size());
        std::vector<double> xs(dim_);
        for (const auto& row : x) {
            if (row.size() != dim_)
                throw DataError("svm input has " + std::to_string(row.size()) +
                                " features, expected " + std::to_string(dim_));
            for (std::size_t d = 0; d < dim_; ++d) xs[d] = (row[d] - mean_[d]) / scale_[d];

            std::vector<double> score(classes_.size(), 0.0);
            for (const auto& duel : duels_) {
                const double f = duel_decision(duel, xs);
                const double sa = 1.0 / (1.0 + std::exp(-f));
                score[static_cast<std::size_t>(duel.a)] += sa;
                score[static_cast<std::size_t>(duel.b)] += 1.0 - sa;
            }
            double total = 0.0;
            for (double s : score) total += s;
            std::vector<double> probs(kNumClasses, 0.0);
            for (std::size_t i = 0; i < classes_.size(); ++i)
                probs[static_cast<std::size_t>(classes_[i])] = score[i] / total;
            out.push_back(std::move(probs));
        }
        return out;
    }

    const std::vector<int>& label_map() const { return classes_; }
    double gamma() const { return gamma_; }
    const std::vector<double>& standardization_mean() const { return mean_; }
    const std::vector<double>& standardization_scale() const { return scale_; }
    std::size_t dim() const { return dim_; }
    bool converged() const { return converged_; }

    // -- checkpoint plumbing ------------------------------------------------

    void to_checkpoint(nlohmann::json& manifest, std::string& blob) const {
        manifest = {{"family", "svm"},
                    {"spec", spec_},
                    {"gamma_resolved", gamma_},
                    {"label_map", classes_},
                    {"dim", dim_},
                    {"dtype", "f64"},
                    {"converged", converged_},
                    {"duels", nlohmann::json::array()}};
        append_doubles(blob, mean_);
        append_doubles(blob, scale_);
        for (const auto& d : duels_) {
            manifest["duels"].push_back(
                {{"a", d.a}, {"b", d.b}, {"n_sv", d.n_sv()}, {"offset", d.offset}});
            append_doubles(blob, d.coef);
            append_doubles(blob, d.svs);
        }
    }

    static SvmModel from_checkpoint(const nlohmann::json& manifest, const std::string& blob,
                                    const std::string& what) {
        SvmModel m;
        m.spec_ = manifest.at("spec").get<SvmSpec>();
        m.gamma_ = manifest.at("gamma_resolved").get<double>();
        m.classes_ = manifest.at("label_map").get<std::vector<int>>();
        m.dim_ = manifest.at("dim").get<std::size_t>();
        m.converged_ = manifest.value("converged", true);
        std::size_t offset = 0;
        m.mean_ = read_doubles(blob, offset, m.dim_, what);
        m.scale_ = read_doubles(blob, offset, m.dim_, what);
        for (const auto& dj : manifest.at("duels")) {
            Duel d;
            d.a = dj.at("a").get<int>();
            d.b = dj.at("b").get<int>();
            d.offset = dj.at("offset").get<double>();
            const auto n_sv = dj.at("n_sv").get<std::size_t>();
            d.coef = read_doubles(blob, offset, n_sv, what);
            d.svs = read_doubles(blob, offset, n_sv * m.dim_, what);
            m.duels_.push_back(std::move(d));
        }
        if (offset != blob.size()) throw DataError("svm blob underrun in " + what);
        return m;
    }

private:
    double kernel(const double* a, const double* b) const {
        double dist = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) {
            const double diff = a[d] - b[d];
            dist += diff * diff;
        }
        return std::exp(-gamma_ * dist);
    }

    double duel_decision(const Duel& duel, const std::vector<double>& xs) const {
        double f = duel.offset;
        for (std::size_t i = 0; i < duel.n_sv(); ++i)
            f += duel.coef[i] * kernel(duel.svs.data() + i * dim_, xs.data());
        return f;
    }

    Duel train_duel(const std::vector<std::vector<double>>& xs, const std::vector<int>& y,
                    int a, int b) {
        std::vector<std::size_t> idx;
        std::vector<double> ty;
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (y[i] == classes_[static_cast<std::size_t>(a)]) {
                idx.push_back(i);
                ty.push_back(1.0);
            } else if (y[i] == classes_[static_cast<std::size_t>(b)]) {
                idx.push_back(i);
                ty.push_back(-1.0);
            }
        }
        const std::size_t n = idx.size();

        std::vector<double> K(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) {
                const double k = kernel(xs[idx[i]].data(), xs[idx[j]].data());
                K[i * n + j] = k;
                K[j * n + i] = k;
            }

        std::vector<double> alpha(n, 0.0), u(n, 0.0);
        const double C = spec_.c;
        const std::size_t max_iter =
            spec_.max_iter ? spec_.max_iter : std::max<std::size_t>(100000, 1000 * n);

        std::size_t iter = 0;
        for (; iter < max_iter; ++iter) {
            // Max-violating pair over the KKT conditions.
            double up_best = -1e300, low_best = 1e300;
            std::ptrdiff_t i_up = -1, j_low = -1;
            for (std::size_t i = 0; i < n; ++i) {
                const double viol = ty[i] - u[i];
                const bool in_up = (ty[i] > 0 && alpha[i] < C) || (ty[i] < 0 && alpha[i] > 0);
                const bool in_low = (ty[i] < 0 && alpha[i] < C) || (ty[i] > 0 && alpha[i] > 0);
                if (in_up && viol > up_best) {
                    up_best = viol;
                    i_up = static_cast<std::ptrdiff_t>(i);
                }
                if (in_low && viol < low_best) {
                    low_best = viol;
                    j_low = static_cast<std::ptrdiff_t>(i);
                }
            }
            if (i_up < 0 || j_low < 0 || up_best - low_best < spec_.tol) break;
            const auto i = static_cast<std::size_t>(i_up);
            const auto j = static_cast<std::size_t>(j_low);

            double eta = K[i * n + i] + K[j * n + j] - 2.0 * K[i * n + j];
            if (eta < 1e-12) eta = 1e-12;
            const double ei = u[i] - ty[i];
            const double ej = u[j] - ty[j];
            double aj_new = alpha[j] + ty[j] * (ei - ej) / eta;

            double lo, hi;
            if (ty[i] != ty[j]) {
                lo = std::max(0.0, alpha[j] - alpha[i]);
                hi = std::min(C, C + alpha[j] - alpha[i]);
            } else {
                lo = std::max(0.0, alpha[i] + alpha[j] - C);
                hi = std::min(C, alpha[i] + alpha[j]);
            }
            if (aj_new < lo) aj_new = lo;
            if (aj_new > hi) aj_new = hi;
            if (std::fabs(aj_new - alpha[j]) < 1e-14) break;
            const double ai_new = alpha[i] + ty[i] * ty[j] * (alpha[j] - aj_new);

            const double di = (ai_new - alpha[i]) * ty[i];
            const double dj = (aj_new - alpha[j]) * ty[j];
            for (std::size_t k = 0; k < n; ++k) u[k] += di * K[i * n + k] + dj * K[j * n + k];
            alpha[i] = ai_new;
            alpha[j] = aj_new;
        }
        if (iter >= max_iter) converged_ = false;

        // Offset from the free support vectors, falling back to the violation
        // midpoint when every alpha sits on a bound.
        double b_sum = 0.0;
        std::size_t b_count = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (alpha[i] > 1e-9 && alpha[i] < C - 1e-9) {
                b_sum += ty[i] - u[i];
                ++b_count;
            }
        double offset;
        if (b_count > 0) {
            offset = b_sum / static_cast<double>(b_count);
        } else {
            double up_best = -1e300, low_best = 1e300;
            for (std::size_t i = 0; i < n; ++i) {
                const double viol = ty[i] - u[i];
                const bool in_up = (ty[i] > 0 && alpha[i] < C) || (ty[i] < 0 && alpha[i] > 0);
                const bool in_low = (ty[i] < 0 && alpha[i] < C) || (ty[i] > 0 && alpha[i] > 0);
                if (in_up) up_best = std::max(up_best, viol);
                if (in_low) low_best = std::min(low_best, viol);
            }
            offset = 0.5 * (up_best + low_best);
        }

        Duel duel;
        duel.a = a;
        duel.b = b;
        duel.offset = offset;
        for (std::size_t i = 0; i < n; ++i) {
            if (alpha[i] <= 1e-12) continue;
            duel.coef.push_back(alpha[i] * ty[i]);
            const auto& row = xs[idx[i]];
            duel.svs.insert(duel.svs.end(), row.begin(), row.end());
        }
        return duel;
    }

    static void append_doubles(std::string& blob, const std::vector<double>& v) {
        blob.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
    static std::vector<double> read_doubles(const std::string& blob, std::size_t& offset,
                                            std::size_t count, const std::string& what) {
        const std::size_t bytes = count * sizeof(double);
        if (offset + bytes > blob.size()) throw DataError("svm blob overrun in " + what);
        std::vector<double> v(count);
        std::memcpy(v.data(), blob.data() + offset, bytes);
        offset += bytes;
        return v;
    }

    SvmSpec spec_;
    std::size_t dim_ = 0;
    double gamma_ = 0.0;
    bool converged_ = true;
    std::vector<int> classes_; // canonical codes, first-appearance order
    std::vector<double> mean_, scale_;
    std::vector<Duel> duels_;
};

} // namespace ser
