#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "ser/resample.hpp"

using namespace ser;

namespace {

std::vector<float> tone(double freq, double seconds, int sr, double amp = 0.5) {
    std::vector<float> out(static_cast<std::size_t>(seconds * sr));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(amp * std::sin(2.0 * M_PI * freq * i / sr));
    return out;
}

// Single-bin DFT amplitude (window interior only, edges trimmed to dodge
// filter transients).
double tone_amplitude(const std::vector<float>& x, int sr, double freq) {
    const std::size_t a = x.size() / 8, b = x.size() - x.size() / 8;
    std::complex<double> acc = 0;
    for (std::size_t i = a; i < b; ++i)
        acc += static_cast<double>(x[i]) *
               std::exp(std::complex<double>(0, -2.0 * M_PI * freq * i / sr));
    return 2.0 * std::abs(acc) / static_cast<double>(b - a);
}

} // namespace

TEST_CASE("same-rate processing is the identity") {
    SincResampler r(16000, 16000);
    const auto x = tone(440, 0.3, 16000);
    REQUIRE(r.process(x) == x);
}

TEST_CASE("output length is the exact rate-scaled count") {
    SincResampler r(44100, 16000);
    REQUIRE(r.output_length(308700) == 112000); // 7.0 s
    REQUIRE(r.output_length(132300) == 48000);  // 3.0 s
    REQUIRE(r.output_length(44100) == 16000);
}

TEST_CASE("downsampling preserves passband amplitude within 0.1 dB") {
    SincResampler r(44100, 16000);
    for (double freq : {440.0, 1000.0, 3000.0, 6900.0}) {
        const auto y = r.process(tone(freq, 2.0, 44100));
        const double amp = tone_amplitude(y, 16000, freq);
        const double db = 20.0 * std::log10(amp / 0.5);
        INFO("freq " << freq << " -> " << db << " dB");
        REQUIRE(std::fabs(db) <= 0.1);
    }
}

TEST_CASE("content above the target Nyquist is strongly attenuated") {
    SincResampler r(44100, 16000);
    for (double freq : {9000.0, 12000.0, 16000.0}) {
        const auto y = r.process(tone(freq, 1.0, 44100));
        // Interior only: the truncated convolution windows at the clip edges
        // carry inherent transients.
        double peak = 0;
        for (std::size_t i = 1000; i + 1000 < y.size(); ++i)
            peak = std::max(peak, std::fabs(static_cast<double>(y[i])));
        const double db = 20.0 * std::log10(std::max(peak, 1e-12) / 0.5);
        INFO("freq " << freq << " residual " << db << " dB");
        REQUIRE(db <= -60.0);
    }
}

TEST_CASE("upsampling also preserves tones") {
    SincResampler r(8000, 16000);
    const auto y = r.process(tone(1000, 1.0, 8000));
    REQUIRE(y.size() == 16000);
    const double amp = tone_amplitude(y, 16000, 1000);
    REQUIRE(std::fabs(20.0 * std::log10(amp / 0.5)) <= 0.1);
}

TEST_CASE("invalid rates are rejected") {
    REQUIRE_THROWS_AS(SincResampler(0, 16000), ConfigError);
    REQUIRE_THROWS_AS(SincResampler(44100, -1), ConfigError);
}
