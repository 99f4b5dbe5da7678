#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ser/errors.hpp"
#include "ser/models.hpp"
#include "ser/rng.hpp"
#include "ser/tensor.hpp"
#include "ser/util.hpp"

namespace ser {

struct SchedulerSpec {
    std::string kind = "reduce-on-plateau";
    double factor = 0.5;
    int patience = 10;
    double min_lr = 1e-6;
    double min_delta = 0.0;
};

inline void to_json(nlohmann::json& j, const SchedulerSpec& s) {
    j = {{"kind", s.kind},
         {"factor", s.factor},
         {"patience", s.patience},
         {"min_lr", s.min_lr},
         {"min_delta", s.min_delta}};
}
inline void from_json(const nlohmann::json& j, SchedulerSpec& s) {
    s.kind = j.value("kind", s.kind);
    s.factor = j.value("factor", s.factor);
    s.patience = j.value("patience", s.patience);
    s.min_lr = j.value("min_lr", s.min_lr);
    s.min_delta = j.value("min_delta", s.min_delta);
}

struct TrainConfig {
    std::string optimizer = "adam"; // adam | sgd
    double lr = 1e-3;
    double momentum = 0.9; // sgd only
    double weight_decay = 0.0;
    int batch_size = 4;
    int max_epochs = 150;
    int early_stop_patience = 30; // 0 disables early stopping
    std::string select_metric = "val_acc"; // val_acc | val_loss
    std::string loss = "categorical-cross-entropy";
    std::string class_weights = "none"; // none | inverse-frequency
    std::uint64_t seed = 42;
    SchedulerSpec scheduler;

    void validate() const {
        if (optimizer != "adam" && optimizer != "sgd")
            throw ConfigError("unknown optimizer '" + optimizer + "'");
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
        if (loss != "categorical-cross-entropy")
            throw ConfigError("unsupported loss '" + loss +
                              "' (only categorical-cross-entropy)");
        if (select_metric != "val_acc" && select_metric != "val_loss")
            throw ConfigError("unknown selection metric '" + select_metric + "'");
        if (class_weights != "none" && class_weights != "inverse-frequency")
            throw ConfigError("unknown class_weights mode '" + class_weights + "'");
        if (scheduler.kind != "reduce-on-plateau" && scheduler.kind != "none")
            throw ConfigError("unknown scheduler '" + scheduler.kind + "'");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"optimizer", c.optimizer},
         {"lr", c.lr},
         {"momentum", c.momentum},
         {"weight_decay", c.weight_decay},
         {"batch_size", c.batch_size},
         {"max_epochs", c.max_epochs},
         {"early_stop_patience", c.early_stop_patience},
         {"select_metric", c.select_metric},
         {"loss", c.loss},
         {"class_weights", c.class_weights},
         {"seed", c.seed},
         {"scheduler", c.scheduler}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.optimizer = j.value("optimizer", c.optimizer);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.select_metric = j.value("select_metric", c.select_metric);
    c.loss = j.value("loss", c.loss);
    c.class_weights = j.value("class_weights", c.class_weights);
    c.seed = j.value("seed", c.seed);
    if (j.contains("scheduler")) j.at("scheduler").get_to(c.scheduler);
}

// ---------------------------------------------------------------------------
// Losses

// Mean negative log-likelihood of one-hot targets under given probability
// rows. Zero probability at the target is clamped to 1e-12 and counted.
inline double cross_entropy(const std::vector<std::vector<double>>& probs,
                            const std::vector<std::vector<double>>& targets,
                            std::size_t* clamp_warnings = nullptr) {
    if (probs.empty() || probs.size() != targets.size())
        throw DataError("cross_entropy needs matching non-empty probs and targets");
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto& p = probs[i];
        const auto& t = targets[i];
        if (p.size() != t.size()) throw DataError("cross_entropy row size mismatch");
        double row_sum = 0.0;
        int hot = -1;
        for (std::size_t c = 0; c < p.size(); ++c) {
            row_sum += p[c];
            if (t[c] == 1.0) {
                if (hot >= 0) throw DataError("target row is not one-hot");
                hot = static_cast<int>(c);
            } else if (t[c] != 0.0) {
                throw DataError("target row is not one-hot");
            }
        }
        if (hot < 0) throw DataError("target row is not one-hot");
        if (std::fabs(row_sum - 1.0) > 1e-4)
            throw DataError("probability row does not sum to 1");
        double pv = p[static_cast<std::size_t>(hot)];
        if (pv < 1e-12) {
            pv = 1e-12;
            if (clamp_warnings) ++*clamp_warnings;
        }
        total -= std::log(pv);
    }
    return total / static_cast<double>(probs.size());
}

// Fused softmax + cross-entropy on logits. Returns the (optionally
// class-weighted) mean loss and writes d(loss)/d(logits) into `grad`.
// Log-probabilities come from a log-sum-exp, so no clamping is needed here.
template <typename T>
double softmax_xent(const Tensor<T>& logits, const std::vector<int>& targets,
                    const std::vector<double>& class_weight, Tensor<T>* grad) {
    const int n = logits.shape.n;
    const int k = logits.shape.c;
    if (static_cast<std::size_t>(n) != targets.size())
        throw DataError("softmax_xent batch size mismatch");
    if (grad) *grad = Tensor<T>(logits.shape);

    double weight_total = 0.0;
    for (int i = 0; i < n; ++i)
        weight_total += class_weight.empty()
                            ? 1.0
                            : class_weight[static_cast<std::size_t>(targets[static_cast<std::size_t>(i)])];

    double loss = 0.0;
    std::vector<double> p(static_cast<std::size_t>(k));
    for (int i = 0; i < n; ++i) {
        const T* row = logits.sample(i);
        const int y = targets[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k) throw DataError("target class out of range");
        double mx = row[0];
        for (int c = 1; c < k; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double denom = 0.0;
        for (int c = 0; c < k; ++c) {
            p[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(row[c]) - mx);
            denom += p[static_cast<std::size_t>(c)];
        }
        const double w =
            class_weight.empty() ? 1.0 : class_weight[static_cast<std::size_t>(y)];
        loss -= w * (static_cast<double>(row[y]) - mx - std::log(denom));
        if (grad) {
            T* g = grad->sample(i);
            for (int c = 0; c < k; ++c) {
                const double soft = p[static_cast<std::size_t>(c)] / denom;
                g[c] = static_cast<T>(w * (soft - (c == y ? 1.0 : 0.0)) / weight_total);
            }
        }
    }
    return loss / weight_total;
}

// ---------------------------------------------------------------------------
// Optimizers

template <typename T>
class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(std::vector<ParamRef<T>>& params, double lr) = 0;
};

template <typename T>
class AdamOptimizer : public Optimizer<T> {
public:
    explicit AdamOptimizer(double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<ParamRef<T>>& params, double lr) override {
        if (m_.empty()) {
            for (auto& p : params) {
                m_.emplace_back(p.value->size(), 0.0);
                v_.emplace_back(p.value->size(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi];
            if (!p.trainable || !p.grad) continue;
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::size_t i = 0; i < p.value->size(); ++i) {
                double g = static_cast<double>((*p.grad)[i]) + wd_ * (*p.value)[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
                (*p.value)[i] = static_cast<T>((*p.value)[i] - lr * update);
            }
        }
    }

private:
    double wd_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

template <typename T>
class SgdOptimizer : public Optimizer<T> {
public:
    explicit SgdOptimizer(double momentum = 0.9, double weight_decay = 0.0)
        : momentum_(momentum), wd_(weight_decay) {}

    void step(std::vector<ParamRef<T>>& params, double lr) override {
        if (vel_.empty())
            for (auto& p : params) vel_.emplace_back(p.value->size(), 0.0);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi];
            if (!p.trainable || !p.grad) continue;
            auto& v = vel_[pi];
            for (std::size_t i = 0; i < p.value->size(); ++i) {
                const double g = static_cast<double>((*p.grad)[i]) + wd_ * (*p.value)[i];
                v[i] = momentum_ * v[i] - lr * g;
                (*p.value)[i] = static_cast<T>((*p.value)[i] + v[i]);
            }
        }
    }

private:
    double momentum_, wd_;
    std::vector<std::vector<double>> vel_;
};

// ---------------------------------------------------------------------------
// Scheduler & history

class ReduceOnPlateau {
public:
    ReduceOnPlateau(const SchedulerSpec& spec, double initial_lr)
        : spec_(spec), lr_(initial_lr) {}

    double lr() const { return lr_; }

    // Feed the epoch's validation loss; returns the learning rate for the
    // next epoch.
    double observe(double val_loss) {
        if (spec_.kind == "none") return lr_;
        if (!have_best_ || val_loss < best_ - spec_.min_delta) {
            best_ = val_loss;
            have_best_ = true;
            bad_epochs_ = 0;
        } else {
            ++bad_epochs_;
            if (bad_epochs_ >= spec_.patience) {
                lr_ = std::max(lr_ * spec_.factor, spec_.min_lr);
                bad_epochs_ = 0;
            }
        }
        return lr_;
    }

private:
    SchedulerSpec spec_;
    double lr_;
    double best_ = 0.0;
    bool have_best_ = false;
    int bad_epochs_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;
};

struct TrainingHistory {
    std::vector<EpochRecord> records;

    void validate() const {
        int last = 0;
        for (const auto& r : records) {
            if (r.epoch <= last) throw DataError("history epochs must be strictly increasing");
            if (!std::isfinite(r.train_loss) || !std::isfinite(r.train_acc) ||
                !std::isfinite(r.val_loss) || !std::isfinite(r.val_acc) || !std::isfinite(r.lr))
                throw DataError("non-finite value in training history");
            last = r.epoch;
        }
    }

    std::string to_jsonl() const {
        std::string out;
        for (const auto& r : records) {
            nlohmann::json j = {{"epoch", r.epoch},       {"train_loss", r.train_loss},
                                {"train_acc", r.train_acc}, {"val_loss", r.val_loss},
                                {"val_acc", r.val_acc},     {"lr", r.lr}};
            out += j.dump() + "\n";
        }
        return out;
    }

    static TrainingHistory from_jsonl(const std::string& text) {
        TrainingHistory h;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            EpochRecord r;
            r.epoch = j.at("epoch").get<int>();
            r.train_loss = j.at("train_loss").get<double>();
            r.train_acc = j.at("train_acc").get<double>();
            r.val_loss = j.at("val_loss").get<double>();
            r.val_acc = j.at("val_acc").get<double>();
            r.lr = j.at("lr").get<double>();
            h.records.push_back(r);
        }
        h.validate();
        return h;
    }
};

// Replays a recorded history through the scheduler; returns the learning rate
// the next epoch would use.
inline double schedule_lr(const TrainingHistory& history, const SchedulerSpec& spec,
                          double initial_lr) {
    if (history.records.empty()) throw DataError("schedule_lr needs at least one epoch");
    ReduceOnPlateau sched(spec, initial_lr);
    double lr = initial_lr;
    for (const auto& r : history.records) lr = sched.observe(r.val_loss);
    return lr;
}

// ---------------------------------------------------------------------------
// Training loop

template <typename T>
struct NnDataset {
    std::vector<Tensor<T>> x; // each 1 x C x H x W
    std::vector<int> y;       // model-space class indices

    std::size_t size() const { return x.size(); }
};

template <typename T>
struct EvalStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Forward pass in inference mode over a dataset; loss is the unweighted mean
// cross-entropy, accuracy the argmax hit rate.
template <typename T>
EvalStats<T> evaluate_nn(NnModel<T>& model, const NnDataset<T>& data, int batch_size) {
    if (data.size() == 0) throw DataError("cannot evaluate an empty dataset");
    double loss_total = 0.0;
    std::size_t correct = 0;
    const std::vector<double> no_weights;
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t b = std::min(static_cast<std::size_t>(batch_size), data.size() - start);
        Tensor<T> batch(static_cast<int>(b), model.in_channels, model.input_size,
                        model.input_size);
        std::vector<int> targets(b);
        for (std::size_t i = 0; i < b; ++i) {
            const auto& xi = data.x[start + i];
            std::copy(xi.data.begin(), xi.data.end(), batch.sample(static_cast<int>(i)));
            targets[i] = data.y[start + i];
        }
        Tensor<T> logits = model.forward(batch, false);
        loss_total += softmax_xent<T>(logits, targets, no_weights, nullptr) *
                      static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
            const T* row = logits.sample(static_cast<int>(i));
            int best = 0;
            for (int c = 1; c < logits.shape.c; ++c)
                if (row[c] > row[best]) best = c;
            if (best == targets[i]) ++correct;
        }
    }
    EvalStats<T> out;
    out.loss = loss_total / static_cast<double>(data.size());
    out.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return out;
}

template <typename T>
struct TrainResult {
    TrainingHistory history;
    int best_epoch = 0;
    double best_val_acc = 0.0;
    double best_val_loss = 0.0;
    std::vector<std::vector<T>> best_params;
    bool early_stopped = false;
};

// Seeded single-writer training loop. Epoch metrics are measured with an
// inference-mode pass over each set after the epoch's updates; the best
// checkpoint is selected on the configured metric and returned as a parameter
// snapshot alongside the full history.
template <typename T>
TrainResult<T> train(NnModel<T>& model, const NnDataset<T>& train_set,
                     const NnDataset<T>& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0) throw DataError("training set is empty");
    if (val_set.size() == 0) throw DataError("validation set is empty");
    if (train_set.size() != train_set.y.size() || val_set.size() != val_set.y.size())
        throw DataError("dataset features and labels differ in length");

    TrainResult<T> result;
    result.best_params = model.snapshot_params();
    if (cfg.max_epochs == 0) return result;

    std::vector<double> class_weight;
    if (cfg.class_weights == "inverse-frequency") {
        std::vector<std::size_t> counts(static_cast<std::size_t>(model.n_classes), 0);
        for (int y : train_set.y) ++counts[static_cast<std::size_t>(y)];
        class_weight.resize(counts.size(), 0.0);
        for (std::size_t c = 0; c < counts.size(); ++c)
            if (counts[c] > 0)
                class_weight[c] = static_cast<double>(train_set.size()) /
                                  (static_cast<double>(counts.size()) *
                                   static_cast<double>(counts[c]));
    }

    std::unique_ptr<Optimizer<T>> opt;
    if (cfg.optimizer == "adam")
        opt = std::make_unique<AdamOptimizer<T>>(cfg.weight_decay);
    else
        opt = std::make_unique<SgdOptimizer<T>>(cfg.momentum, cfg.weight_decay);

    ReduceOnPlateau scheduler(cfg.scheduler, cfg.lr);
    double lr = cfg.lr;
    double best_metric = cfg.select_metric == "val_acc" ? -1.0 : 1e300;
    int epochs_since_best = 0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    auto params = model.net.params();

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, "epoch-" + std::to_string(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());

        for (std::size_t start = 0, batch_idx = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size), ++batch_idx) {
            const std::size_t b =
                std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
            Tensor<T> batch(static_cast<int>(b), model.in_channels, model.input_size,
                            model.input_size);
            std::vector<int> targets(b);
            for (std::size_t i = 0; i < b; ++i) {
                const auto& xi = train_set.x[order[start + i]];
                std::copy(xi.data.begin(), xi.data.end(), batch.sample(static_cast<int>(i)));
                targets[i] = train_set.y[order[start + i]];
            }
            for (const T& v : batch.data)
                if (!std::isfinite(static_cast<double>(v)))
                    throw DataError("non-finite input in epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_idx));

            model.net.zero_grad();
            Tensor<T> logits = model.forward(batch, true);
            Tensor<T> grad;
            const double loss = softmax_xent<T>(logits, targets, class_weight, &grad);
            if (!std::isfinite(loss))
                throw DataError("NaN loss in epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch_idx));
            model.net.backward(std::move(grad));
            opt->step(params, lr);
        }

        const EvalStats<T> train_stats = evaluate_nn(model, train_set, cfg.batch_size);
        const EvalStats<T> val_stats = evaluate_nn(model, val_set, cfg.batch_size);
        result.history.records.push_back({epoch, train_stats.loss, train_stats.accuracy,
                                          val_stats.loss, val_stats.accuracy, lr});

        const double metric =
            cfg.select_metric == "val_acc" ? val_stats.accuracy : val_stats.loss;
        const bool improved = cfg.select_metric == "val_acc" ? metric > best_metric
                                                             : metric < best_metric;
        if (improved) {
            best_metric = metric;
            result.best_epoch = epoch;
            result.best_val_acc = val_stats.accuracy;
            result.best_val_loss = val_stats.loss;
            result.best_params = model.snapshot_params();
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
        }

        lr = scheduler.observe(val_stats.loss);
        if (cfg.early_stop_patience > 0 && epochs_since_best >= cfg.early_stop_patience) {
            result.early_stopped = true;
            break;
        }
    }

    result.history.validate();
    return result;
}

} // namespace ser
