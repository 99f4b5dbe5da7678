#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ser/rng.hpp"
#include "ser/tensor.hpp"

namespace ser {

template <typename T>
struct ParamRef {
    std::string tag;
    std::vector<T>* value;
    std::vector<T>* grad;
    bool trainable;
};

// Plain sequential layer: forward caches whatever backward needs (training
// mode only), backward consumes the cache and fills parameter gradients.
template <typename T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string name() const = 0;
    virtual Shape out_shape(const Shape& in) const = 0;
    virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
    virtual Tensor<T> backward(const Tensor<T>& gy) = 0;
    virtual void init(Rng& rng) { (void)rng; }
    virtual std::vector<ParamRef<T>> params() { return {}; }
    // Frozen layers keep parameters fixed and run in inference behavior even
    // during training (relevant for batch norm and dropout).
    virtual void set_frozen(bool frozen) { frozen_ = frozen; }
    bool frozen() const { return frozen_; }

protected:
    bool frozen_ = false;
};

namespace nn {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

template <typename T>
class Conv2d : public Layer<T> {
public:
    Conv2d(int in_c, int out_c, int kernel, int stride = 1, int pad = -1)
        : in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride),
          pad_(pad >= 0 ? pad : (kernel - 1) / 2),
          weight_(static_cast<std::size_t>(out_c) * in_c * kernel * kernel),
          bias_(static_cast<std::size_t>(out_c)),
          dweight_(weight_.size()), dbias_(bias_.size()) {}

    std::string name() const override {
        return "conv" + std::to_string(k_) + "x" + std::to_string(k_) + "(" +
               std::to_string(in_c_) + "->" + std::to_string(out_c_) + ")";
    }

    Shape out_shape(const Shape& in) const override {
        if (in.c != in_c_) throw Error(name() + ": channel mismatch, input " + in.str());
        return {in.n, out_c_, (in.h + 2 * pad_ - k_) / stride_ + 1,
                (in.w + 2 * pad_ - k_) / stride_ + 1};
    }

    void init(Rng& rng) override {
        const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_c_) * k_ * k_));
        for (auto& v : weight_) v = static_cast<T>(rng.normal() * std_dev);
        for (auto& v : bias_) v = T(0);
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        const Shape os = out_shape(x.shape);
        Tensor<T> y(os);
        const std::size_t cols = static_cast<std::size_t>(os.h) * os.w;
        const std::size_t rows = static_cast<std::size_t>(in_c_) * k_ * k_;
        col_buf_.resize(rows * cols);
        CMapRM<T> w(weight_.data(), out_c_, static_cast<Eigen::Index>(rows));
        for (int i = 0; i < x.shape.n; ++i) {
            im2col(x.sample(i), x.shape, os);
            CMapRM<T> col(col_buf_.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
            MapRM<T> out(y.sample(i), out_c_, static_cast<Eigen::Index>(cols));
            out.noalias() = w * col;
            for (int oc = 0; oc < out_c_; ++oc)
                out.row(oc).array() += bias_[static_cast<std::size_t>(oc)];
        }
        if (training) x_ = x;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) override {
        const Shape os = gy.shape;
        Tensor<T> gx(x_.shape);
        const std::size_t cols = static_cast<std::size_t>(os.h) * os.w;
        const std::size_t rows = static_cast<std::size_t>(in_c_) * k_ * k_;
        col_buf_.resize(rows * cols);
        gcol_buf_.resize(rows * cols);
        CMapRM<T> w(weight_.data(), out_c_, static_cast<Eigen::Index>(rows));
        MapRM<T> dw(dweight_.data(), out_c_, static_cast<Eigen::Index>(rows));
        for (int i = 0; i < os.n; ++i) {
            CMapRM<T> dy(gy.sample(i), out_c_, static_cast<Eigen::Index>(cols));
            im2col(x_.sample(i), x_.shape, os);
            CMapRM<T> col(col_buf_.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
            dw.noalias() += dy * col.transpose();
            for (int oc = 0; oc < out_c_; ++oc)
                dbias_[static_cast<std::size_t>(oc)] += dy.row(oc).sum();
            MapRM<T> gcol(gcol_buf_.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
            gcol.noalias() = w.transpose() * dy;
            col2im(gx.sample(i), gx.shape, os);
        }
        x_ = Tensor<T>{};
        return gx;
    }

    std::vector<ParamRef<T>> params() override {
        return {{name() + ".weight", &weight_, &dweight_, !this->frozen_},
                {name() + ".bias", &bias_, &dbias_, !this->frozen_}};
    }

private:
    void im2col(const T* x, const Shape& xs, const Shape& os) {
        const std::size_t cols = static_cast<std::size_t>(os.h) * os.w;
        T* col = col_buf_.data();
        for (int ic = 0; ic < in_c_; ++ic) {
            const T* plane = x + static_cast<std::size_t>(ic) * xs.h * xs.w;
            for (int ky = 0; ky < k_; ++ky) {
                for (int kx = 0; kx < k_; ++kx) {
                    T* row = col + ((static_cast<std::size_t>(ic) * k_ + ky) * k_ + kx) * cols;
                    for (int oy = 0; oy < os.h; ++oy) {
                        const int iy = oy * stride_ + ky - pad_;
                        T* dst = row + static_cast<std::size_t>(oy) * os.w;
                        if (iy < 0 || iy >= xs.h) {
                            std::fill(dst, dst + os.w, T(0));
                            continue;
                        }
                        const T* src = plane + static_cast<std::size_t>(iy) * xs.w;
                        for (int ox = 0; ox < os.w; ++ox) {
                            const int ix = ox * stride_ + kx - pad_;
                            dst[ox] = (ix >= 0 && ix < xs.w) ? src[ix] : T(0);
                        }
                    }
                }
            }
        }
    }

    void col2im(T* gx, const Shape& xs, const Shape& os) {
        const std::size_t cols = static_cast<std::size_t>(os.h) * os.w;
        const T* col = gcol_buf_.data();
        for (int ic = 0; ic < in_c_; ++ic) {
            T* plane = gx + static_cast<std::size_t>(ic) * xs.h * xs.w;
            for (int ky = 0; ky < k_; ++ky) {
                for (int kx = 0; kx < k_; ++kx) {
                    const T* row = col + ((static_cast<std::size_t>(ic) * k_ + ky) * k_ + kx) * cols;
                    for (int oy = 0; oy < os.h; ++oy) {
                        const int iy = oy * stride_ + ky - pad_;
                        if (iy < 0 || iy >= xs.h) continue;
                        T* dst = plane + static_cast<std::size_t>(iy) * xs.w;
                        const T* src = row + static_cast<std::size_t>(oy) * os.w;
                        for (int ox = 0; ox < os.w; ++ox) {
                            const int ix = ox * stride_ + kx - pad_;
                            if (ix >= 0 && ix < xs.w) dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }

    int in_c_, out_c_, k_, stride_, pad_;
    std::vector<T> weight_, bias_, dweight_, dbias_;
    std::vector<T> col_buf_, gcol_buf_;
    Tensor<T> x_;
};

template <typename T>
class BatchNorm2d : public Layer<T> {
public:
    explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
        : c_(channels), momentum_(momentum), eps_(eps),
          gamma_(static_cast<std::size_t>(channels), T(1)),
          beta_(static_cast<std::size_t>(channels), T(0)),
          dgamma_(gamma_.size()), dbeta_(beta_.size()),
          running_mean_(gamma_.size(), T(0)), running_var_(gamma_.size(), T(1)) {}

    std::string name() const override { return "batchnorm(" + std::to_string(c_) + ")"; }
    Shape out_shape(const Shape& in) const override { return in; }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        const bool use_batch = training && !this->frozen_;
        const std::size_t plane = static_cast<std::size_t>(x.shape.h) * x.shape.w;
        const std::size_t m = static_cast<std::size_t>(x.shape.n) * plane;
        Tensor<T> y(x.shape);
        if (use_batch) {
            mean_.assign(static_cast<std::size_t>(c_), 0.0);
            var_.assign(static_cast<std::size_t>(c_), 0.0);
            for (int i = 0; i < x.shape.n; ++i)
                for (int c = 0; c < c_; ++c) {
                    const T* src = x.sample(i) + static_cast<std::size_t>(c) * plane;
                    double acc = 0.0;
                    for (std::size_t p = 0; p < plane; ++p) acc += src[p];
                    mean_[static_cast<std::size_t>(c)] += acc;
                }
            for (auto& v : mean_) v /= static_cast<double>(m);
            for (int i = 0; i < x.shape.n; ++i)
                for (int c = 0; c < c_; ++c) {
                    const T* src = x.sample(i) + static_cast<std::size_t>(c) * plane;
                    const double mu = mean_[static_cast<std::size_t>(c)];
                    double acc = 0.0;
                    for (std::size_t p = 0; p < plane; ++p) {
                        const double d = src[p] - mu;
                        acc += d * d;
                    }
                    var_[static_cast<std::size_t>(c)] += acc;
                }
            for (auto& v : var_) v /= static_cast<double>(m);
            inv_.resize(static_cast<std::size_t>(c_));
            for (int c = 0; c < c_; ++c)
                inv_[static_cast<std::size_t>(c)] =
                    1.0 / std::sqrt(var_[static_cast<std::size_t>(c)] + eps_);
            for (int c = 0; c < c_; ++c) {
                const auto uc = static_cast<std::size_t>(c);
                running_mean_[uc] = static_cast<T>((1.0 - momentum_) * running_mean_[uc] +
                                                   momentum_ * mean_[uc]);
                running_var_[uc] = static_cast<T>((1.0 - momentum_) * running_var_[uc] +
                                                  momentum_ * var_[uc]);
            }
            xhat_ = Tensor<T>(x.shape);
            for (int i = 0; i < x.shape.n; ++i)
                for (int c = 0; c < c_; ++c) {
                    const auto uc = static_cast<std::size_t>(c);
                    const T* src = x.sample(i) + uc * plane;
                    T* xh = xhat_.sample(i) + uc * plane;
                    T* dst = y.sample(i) + uc * plane;
                    const double mu = mean_[uc], inv = inv_[uc];
                    const double g = gamma_[uc], b = beta_[uc];
                    for (std::size_t p = 0; p < plane; ++p) {
                        const double h = (src[p] - mu) * inv;
                        xh[p] = static_cast<T>(h);
                        dst[p] = static_cast<T>(g * h + b);
                    }
                }
        } else {
            for (int i = 0; i < x.shape.n; ++i)
                for (int c = 0; c < c_; ++c) {
                    const auto uc = static_cast<std::size_t>(c);
                    const T* src = x.sample(i) + uc * plane;
                    T* dst = y.sample(i) + uc * plane;
                    const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_[uc]) + eps_);
                    const double mu = running_mean_[uc];
                    const double g = gamma_[uc], b = beta_[uc];
                    for (std::size_t p = 0; p < plane; ++p)
                        dst[p] = static_cast<T>(g * ((src[p] - mu) * inv) + b);
                }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) override {
        const std::size_t plane = static_cast<std::size_t>(gy.shape.h) * gy.shape.w;
        const std::size_t m = static_cast<std::size_t>(gy.shape.n) * plane;
        Tensor<T> gx(gy.shape);
        for (int c = 0; c < c_; ++c) {
            const auto uc = static_cast<std::size_t>(c);
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int i = 0; i < gy.shape.n; ++i) {
                const T* dy = gy.sample(i) + uc * plane;
                const T* xh = xhat_.sample(i) + uc * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    sum_dy += dy[p];
                    sum_dy_xhat += static_cast<double>(dy[p]) * xh[p];
                }
            }
            dgamma_[uc] += static_cast<T>(sum_dy_xhat);
            dbeta_[uc] += static_cast<T>(sum_dy);
            const double g_inv_m = static_cast<double>(gamma_[uc]) * inv_[uc] /
                                   static_cast<double>(m);
            for (int i = 0; i < gy.shape.n; ++i) {
                const T* dy = gy.sample(i) + uc * plane;
                const T* xh = xhat_.sample(i) + uc * plane;
                T* dx = gx.sample(i) + uc * plane;
                for (std::size_t p = 0; p < plane; ++p)
                    dx[p] = static_cast<T>(g_inv_m * (static_cast<double>(m) * dy[p] - sum_dy -
                                                      static_cast<double>(xh[p]) * sum_dy_xhat));
            }
        }
        xhat_ = Tensor<T>{};
        return gx;
    }

    std::vector<ParamRef<T>> params() override {
        return {{name() + ".gamma", &gamma_, &dgamma_, !this->frozen_},
                {name() + ".beta", &beta_, &dbeta_, !this->frozen_},
                // Running statistics ride along for serialization but never
                // receive gradient updates.
                {name() + ".running_mean", &running_mean_, nullptr, false},
                {name() + ".running_var", &running_var_, nullptr, false}};
    }

private:
    int c_;
    double momentum_, eps_;
    std::vector<T> gamma_, beta_, dgamma_, dbeta_, running_mean_, running_var_;
    std::vector<double> mean_, var_, inv_;
    Tensor<T> xhat_;
};

template <typename T>
class Relu : public Layer<T> {
public:
    std::string name() const override { return "relu"; }
    Shape out_shape(const Shape& in) const override { return in; }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        Tensor<T> y(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
        if (training) {
            mask_.assign(x.size(), 0);
            for (std::size_t i = 0; i < x.size(); ++i) mask_[i] = x.data[i] > T(0);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) override {
        Tensor<T> gx(gy.shape);
        for (std::size_t i = 0; i < gy.size(); ++i) gx.data[i] = mask_[i] ? gy.data[i] : T(0);
        return gx;
    }

private:
    std::vector<std::uint8_t> mask_;
};

// 2x2 max pool, stride 2, floor division (odd trailing rows/columns dropped).
template <typename T>
class MaxPool2 : public Layer<T> {
public:
    std::string name() const override { return "maxpool2x2"; }

    Shape out_shape(const Shape& in) const override {
        if (in.h < 2 || in.w < 2) throw Error("maxpool needs at least 2x2 input, got " + in.str());
        return {in.n, in.c, in.h / 2, in.w / 2};
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        const Shape os = out_shape(x.shape);
        Tensor<T> y(os);
        if (training) argmax_.assign(y.size(), 0);
        in_shape_ = x.shape;
        std::size_t oi = 0;
        for (int i = 0; i < x.shape.n; ++i)
            for (int c = 0; c < x.shape.c; ++c) {
                const T* plane = x.sample(i) + static_cast<std::size_t>(c) * x.shape.h * x.shape.w;
                for (int oy = 0; oy < os.h; ++oy)
                    for (int ox = 0; ox < os.w; ++ox, ++oi) {
                        std::size_t best = (static_cast<std::size_t>(2 * oy)) * x.shape.w + 2 * ox;
                        T bv = plane[best];
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::size_t idx =
                                    (static_cast<std::size_t>(2 * oy + dy)) * x.shape.w +
                                    (2 * ox + dx);
                                if (plane[idx] > bv) {
                                    bv = plane[idx];
                                    best = idx;
                                }
                            }
                        y.data[oi] = bv;
                        if (training)
                            argmax_[oi] = (static_cast<std::size_t>(i) * x.shape.c + c) *
                                              x.shape.h * x.shape.w + best;
                    }
            }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) override {
        Tensor<T> gx(in_shape_);
        for (std::size_t i = 0; i < gy.size(); ++i) gx.data[argmax_[i]] += gy.data[i];
        return gx;
    }

private:
    Shape in_shape_;
    std::vector<std::size_t> argmax_;
};

// Inverted dropout; identity in eval mode or when frozen.
template <typename T>
class Dropout : public Layer<T> {
public:
    explicit Dropout(double rate, std::uint64_t seed = 0) : rate_(rate), rng_(seed) {}

    std::string name() const override { return "dropout(" + std::to_string(rate_) + ")"; }
    Shape out_shape(const Shape& in) const override { return in; }
    void reseed(std::uint64_t seed) { rng_ = Rng(seed); }
    double rate() const { return rate_; }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        if (!training || this->frozen_ || rate_ <= 0.0) {
            mask_.clear();
            return x;
        }
        const T keep_inv = static_cast<T>(1.0 / (1.0 - rate_));
        Tensor<T> y(x.shape);
        mask_.assign(x.size(), 0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (rng_.uniform() >= rate_) {
                mask_[i] = 1;
                y.data[i] = x.data[i] * keep_inv;
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) override {
        if (mask_.empty()) return gy;
        const T keep_inv = static_cast<T>(1.0 / (1.0 - rate_));
        Tensor<T> gx(gy.shape);
        for (std::size_t i = 0; i < gy.size(); ++i)
            gx.data[i] = mask_[i] ? gy.data[i] * keep_inv : T(0);
        return gx;
    }

private:
    double rate_;
    Rng rng_;
    std::vector<std::uint8_t> mask_;
};

template <typename T>
class GlobalAvgPool : public Layer<T> {
public:
    std::string name() const override { return "global-avg-pool"; }
    Shape out_shape(const Shape& in) const override { return {in.n, in.c, 1, 1}; }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        (void)training;
        in_shape_ = x.shape;
        Tensor<T> y(out_shape(x.shape));
        const std::size_t plane = static_cast<std::size_t>(x.shape.h) * x.shape.w;
        for (int i = 0; i < x.shape.n; ++i)
            for (int c = 0; c < x.shape.c; ++c) {
                const T* src = x.sample(i) + static_cast<std::size_t>(c) * plane;
                double acc = 0.0;
                for (std::size_t p = 0; p < plane; ++p) acc += src[p];
                y.at(i, c, 0, 0) = static_cast<T>(acc / static_cast<double>(plane));
            }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) override {
        Tensor<T> gx(in_shape_);
        const std::size_t plane = static_cast<std::size_t>(in_shape_.h) * in_shape_.w;
        const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
        for (int i = 0; i < gy.shape.n; ++i)
            for (int c = 0; c < gy.shape.c; ++c) {
                T* dst = gx.sample(i) + static_cast<std::size_t>(c) * plane;
                const T g = gy.at(i, c, 0, 0) * inv;
                for (std::size_t p = 0; p < plane; ++p) dst[p] = g;
            }
        return gx;
    }

private:
    Shape in_shape_;
};

template <typename T>
class Dense : public Layer<T> {
public:
    Dense(int in_dim, int out_dim)
        : in_(in_dim), out_(out_dim),
          weight_(static_cast<std::size_t>(out_dim) * in_dim),
          bias_(static_cast<std::size_t>(out_dim)),
          dweight_(weight_.size()), dbias_(bias_.size()) {}

    std::string name() const override {
        return "dense(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
    }

    Shape out_shape(const Shape& in) const override {
        if (in.c * in.h * in.w != in_)
            throw Error(name() + ": expected " + std::to_string(in_) + " inputs, got " +
                        in.str());
        return {in.n, out_, 1, 1};
    }

    void init(Rng& rng) override {
        const double std_dev = std::sqrt(2.0 / static_cast<double>(in_));
        for (auto& v : weight_) v = static_cast<T>(rng.normal() * std_dev);
        for (auto& v : bias_) v = T(0);
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        const Shape os = out_shape(x.shape);
        Tensor<T> y(os);
        CMapRM<T> xm(x.data.data(), x.shape.n, in_);
        CMapRM<T> w(weight_.data(), out_, in_);
        MapRM<T> ym(y.data.data(), os.n, out_);
        ym.noalias() = xm * w.transpose();
        for (int j = 0; j < out_; ++j)
            ym.col(j).array() += bias_[static_cast<std::size_t>(j)];
        if (training) x_ = x;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) override {
        Tensor<T> gx(x_.shape);
        CMapRM<T> dy(gy.data.data(), gy.shape.n, out_);
        CMapRM<T> xm(x_.data.data(), x_.shape.n, in_);
        CMapRM<T> w(weight_.data(), out_, in_);
        MapRM<T> dw(dweight_.data(), out_, in_);
        MapRM<T> dxm(gx.data.data(), gx.shape.n, in_);
        dw.noalias() += dy.transpose() * xm;
        for (int j = 0; j < out_; ++j)
            dbias_[static_cast<std::size_t>(j)] += dy.col(j).sum();
        dxm.noalias() = dy * w;
        x_ = Tensor<T>{};
        return gx;
    }

    std::vector<ParamRef<T>> params() override {
        return {{name() + ".weight", &weight_, &dweight_, !this->frozen_},
                {name() + ".bias", &bias_, &dbias_, !this->frozen_}};
    }

private:
    int in_, out_;
    std::vector<T> weight_, bias_, dweight_, dbias_;
    Tensor<T> x_;
};

// Repeats a single input channel n times (grayscale map into an
// image-pretrained backbone).
template <typename T>
class ChannelReplicate : public Layer<T> {
public:
    explicit ChannelReplicate(int copies) : copies_(copies) {}

    std::string name() const override { return "replicate(x" + std::to_string(copies_) + ")"; }

    Shape out_shape(const Shape& in) const override {
        if (in.c != 1) throw Error("channel replication expects 1 input channel, got " + in.str());
        return {in.n, copies_, in.h, in.w};
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        (void)training;
        Tensor<T> y(out_shape(x.shape));
        const std::size_t plane = static_cast<std::size_t>(x.shape.h) * x.shape.w;
        for (int i = 0; i < x.shape.n; ++i)
            for (int c = 0; c < copies_; ++c)
                std::copy(x.sample(i), x.sample(i) + plane,
                          y.sample(i) + static_cast<std::size_t>(c) * plane);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) override {
        Tensor<T> gx(Shape{gy.shape.n, 1, gy.shape.h, gy.shape.w});
        const std::size_t plane = static_cast<std::size_t>(gy.shape.h) * gy.shape.w;
        for (int i = 0; i < gy.shape.n; ++i) {
            T* dst = gx.sample(i);
            for (int c = 0; c < copies_; ++c) {
                const T* src = gy.sample(i) + static_cast<std::size_t>(c) * plane;
                for (std::size_t p = 0; p < plane; ++p) dst[p] += src[p];
            }
        }
        return gx;
    }

private:
    int copies_;
};

} // namespace nn

// Ordered layer stack with a dry shape-walk used for build-time assertions.
template <typename T>
class Sequential {
public:
    Sequential() = default;
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    template <typename L, typename... Args>
    L* emplace(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L* raw = layer.get();
        layers_.push_back(std::move(layer));
        return raw;
    }

    std::size_t size() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_[i]; }
    const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

    std::vector<Shape> shape_walk(const Shape& input) const {
        std::vector<Shape> shapes{input};
        for (const auto& l : layers_) shapes.push_back(l->out_shape(shapes.back()));
        return shapes;
    }

    Tensor<T> forward(Tensor<T> x, bool training) {
        for (auto& l : layers_) x = l->forward(x, training);
        return x;
    }

    Tensor<T> backward(Tensor<T> gy) {
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) gy = (*it)->backward(gy);
        return gy;
    }

    void init(Rng& rng) {
        for (auto& l : layers_) l->init(rng);
    }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        for (auto& l : layers_)
            for (auto& p : l->params()) out.push_back(p);
        return out;
    }

    void zero_grad() {
        for (auto& p : params())
            if (p.grad) std::fill(p.grad->begin(), p.grad->end(), T(0));
    }

    void freeze() {
        for (auto& l : layers_) l->set_frozen(true);
    }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

} // namespace ser
