#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ser/errors.hpp"

namespace ser {

// Kaiser-windowed sinc resampler.
//
// The kernel is designed against the narrower of the two Nyquist bands:
// passband edge at 0.4375*min(sr_in, sr_out) (7 kHz for a 16 kHz target),
// stopband edge at 0.5*min (8 kHz), 80 dB stopband attenuation. Passband
// ripple of a Kaiser design at that attenuation is far below the 0.1 dB
// budget. Coefficients come from an oversampled kernel table with linear
// interpolation between entries.
class SincResampler {
public:
    static constexpr const char* kIdentity = "kaiser-sinc-v1";

    SincResampler(int sr_in, int sr_out) : sr_in_(sr_in), sr_out_(sr_out) {
        if (sr_in <= 0 || sr_out <= 0) throw ConfigError("sample rates must be positive");
        const double fmin = static_cast<double>(std::min(sr_in, sr_out));
        cutoff_ = 0.46875 * fmin / sr_in;          // cycles per input sample
        const double transition = 0.0625 * fmin / sr_in;
        const double atten_db = 80.0;
        beta_ = 0.1102 * (atten_db - 8.7);
        half_width_ = static_cast<int>(std::ceil((atten_db - 8.0) /
                                                 (2.285 * 2.0 * M_PI * transition)));
        build_table();
    }

    int input_rate() const { return sr_in_; }
    int output_rate() const { return sr_out_; }

    std::size_t output_length(std::size_t n_in) const {
        return static_cast<std::size_t>(static_cast<std::uint64_t>(n_in) * sr_out_ / sr_in_);
    }

    std::vector<float> process(const std::vector<float>& x) const {
        if (sr_in_ == sr_out_) return x;
        const std::size_t n_out = output_length(x.size());
        std::vector<float> y(n_out);
        const double step = static_cast<double>(sr_in_) / sr_out_;
        const auto n_in = static_cast<std::int64_t>(x.size());
        for (std::size_t n = 0; n < n_out; ++n) {
            const double t = n * step;
            std::int64_t k0 = static_cast<std::int64_t>(std::ceil(t - half_width_));
            std::int64_t k1 = static_cast<std::int64_t>(std::floor(t + half_width_));
            if (k0 < 0) k0 = 0;
            if (k1 >= n_in) k1 = n_in - 1;
            double acc = 0.0;
            for (std::int64_t k = k0; k <= k1; ++k)
                acc += static_cast<double>(x[static_cast<std::size_t>(k)]) * kernel(k - t);
            y[n] = static_cast<float>(acc);
        }
        return y;
    }

private:
    static constexpr int kOversample = 512;

    static double bessel_i0(double x) {
        double sum = 1.0, term = 1.0;
        const double q = x * x / 4.0;
        for (int k = 1; k < 64; ++k) {
            term *= q / (static_cast<double>(k) * k);
            sum += term;
            if (term < 1e-18 * sum) break;
        }
        return sum;
    }

    void build_table() {
        const std::size_t n = static_cast<std::size_t>(half_width_) * kOversample + 2;
        table_.resize(n);
        const double i0b = bessel_i0(beta_);
        for (std::size_t i = 0; i < n; ++i) {
            const double tau = static_cast<double>(i) / kOversample;
            if (tau > half_width_) {
                table_[i] = 0.0;
                continue;
            }
            const double arg = 2.0 * M_PI * cutoff_ * tau;
            const double sinc = tau == 0.0 ? 1.0 : std::sin(arg) / arg;
            const double frac = tau / half_width_;
            const double win = bessel_i0(beta_ * std::sqrt(1.0 - frac * frac)) / i0b;
            table_[i] = 2.0 * cutoff_ * sinc * win;
        }
    }

    double kernel(double tau) const {
        const double a = std::fabs(tau) * kOversample;
        const auto i = static_cast<std::size_t>(a);
        if (i + 1 >= table_.size()) return 0.0;
        const double frac = a - static_cast<double>(i);
        return table_[i] + frac * (table_[i + 1] - table_[i]);
    }

    int sr_in_;
    int sr_out_;
    double cutoff_ = 0.0;
    double beta_ = 0.0;
    int half_width_ = 0;
    std::vector<double> table_;
};

} // namespace ser
