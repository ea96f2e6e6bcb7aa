#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "suds/common.hpp"

namespace suds::signal {

constexpr int kNumChannels = 9;  // accel xyz, gyro xyz, mag xyz

struct Sample {
    std::int64_t t_ns = 0;
    std::array<Real, kNumChannels> ch{};  // ax ay az gx gy gz mx my mz
};

// Timestamped 9-axis IMU stream. Timestamps must be strictly increasing and
// every sample carries all nine channels (enforced at ingest).
struct SampleSeries {
    std::vector<Sample> samples;
    Real rate_hz = 50.0;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

// Low-pass FIR, odd tap count, unit DC gain.
struct FilterSpec {
    std::vector<Real> taps;

    static FilterSpec moving_average(std::size_t n) {
        FilterSpec f;
        f.taps.assign(n, 1.0 / static_cast<Real>(n));
        return f;
    }

    void validate() const {
        if (taps.empty() || taps.size() % 2 == 0) {
            throw std::invalid_argument("FIR taps must have odd length >= 1");
        }
        Real sum = 0.0;
        for (Real t : taps) sum += t;
        if (std::abs(sum - 1.0) > 1e-9) {
            throw std::invalid_argument("FIR taps must sum to 1 (unit DC gain)");
        }
    }
};

struct Window {
    std::size_t start_index = 0;
    std::size_t length_samples = 0;
    // channels[c][i], c in [0,9), i in [0,length_samples)
    std::array<std::vector<Real>, kNumChannels> channels;
};

// Flat per-window features: for each channel, [mean, std, kurtosis, skew,
// ecdf_1..ecdf_k].
struct FeatureVector {
    std::vector<Real> values;
    int ecdf_k = 0;

    static std::size_t length_for(int k) {
        return static_cast<std::size_t>(kNumChannels) * (4 + static_cast<std::size_t>(k));
    }
};

namespace detail {

// Reflect index into [0, n): ..., x[2], x[1] | x[0..n-1] | x[n-2], x[n-3], ...
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(n) - 2;
    std::ptrdiff_t j = i % period;
    if (j < 0) j += period;
    if (j >= static_cast<std::ptrdiff_t>(n)) j = period - j;
    return static_cast<std::size_t>(j);
}

}  // namespace detail

// Convolves every channel with the taps, centered, reflect padding at the
// edges; output length equals input length and timestamps are untouched.
inline SampleSeries fir_filter(const SampleSeries& series, const FilterSpec& spec) {
    if (series.empty()) {
        throw std::invalid_argument("empty input");
    }
    spec.validate();
    const std::size_t n = series.size();
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(spec.taps.size() / 2);

    SampleSeries out = series;
    for (int c = 0; c < kNumChannels; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            Real acc = 0.0;
            for (std::size_t t = 0; t < spec.taps.size(); ++t) {
                const std::ptrdiff_t src =
                    static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(t) - half;
                acc += spec.taps[t] * series.samples[detail::reflect_index(src, n)].ch[c];
            }
            out.samples[i].ch[c] = acc;
        }
    }
    return out;
}

// Tiles the series into fixed-length windows. hop = max(1,
// round(length * (1 - overlap))); a final partial window is dropped and a
// window longer than the series yields an empty list.
inline std::vector<Window> make_windows(const SampleSeries& series, Real window_seconds,
                                        Real overlap_fraction) {
    if (overlap_fraction < 0.0 || overlap_fraction >= 1.0) {
        throw std::invalid_argument("overlap_fraction must be in [0, 1)");
    }
    const long len_l = std::lround(window_seconds * series.rate_hz);
    if (len_l < 1) {
        throw std::invalid_argument("window shorter than one sample");
    }
    const std::size_t len = static_cast<std::size_t>(len_l);
    const std::size_t hop = static_cast<std::size_t>(
        std::max<long>(1, std::lround(static_cast<Real>(len) * (1.0 - overlap_fraction))));

    std::vector<Window> windows;
    for (std::size_t start = 0; start + len <= series.size(); start += hop) {
        Window w;
        w.start_index = start;
        w.length_samples = len;
        for (int c = 0; c < kNumChannels; ++c) {
            w.channels[c].resize(len);
            for (std::size_t i = 0; i < len; ++i) {
                w.channels[c][i] = series.samples[start + i].ch[c];
            }
        }
        windows.push_back(std::move(w));
    }
    return windows;
}

struct ChannelStats {
    Real mean = 0.0;
    Real stddev = 0.0;    // population (1/n)
    Real kurtosis = 0.0;  // Fisher excess; 0 for constant channels
    Real skew = 0.0;      // Fisher-Pearson; 0 for constant channels
};

inline ChannelStats channel_stats(const std::vector<Real>& x) {
    const std::size_t n = x.size();
    if (n == 0) throw std::invalid_argument("empty channel");
    ChannelStats s;
    Real sum = 0.0;
    for (Real v : x) sum += v;
    s.mean = sum / static_cast<Real>(n);
    Real m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (Real v : x) {
        const Real d = v - s.mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= static_cast<Real>(n);
    m3 /= static_cast<Real>(n);
    m4 /= static_cast<Real>(n);
    s.stddev = std::sqrt(m2);
    // Constant channel: higher moments defined as 0 so nothing non-finite can
    // reach the model.
    if (m2 < 1e-24) {
        s.stddev = 0.0;
        return s;
    }
    s.kurtosis = m4 / (m2 * m2) - 3.0;
    s.skew = m3 / (m2 * std::sqrt(m2));
    return s;
}

// 9x4 matrix: per channel [mean, std, excess kurtosis, skew].
inline std::array<std::array<Real, 4>, kNumChannels> stat_features(const Window& w) {
    if (w.length_samples == 0) throw std::invalid_argument("degenerate window");
    std::array<std::array<Real, 4>, kNumChannels> out{};
    for (int c = 0; c < kNumChannels; ++c) {
        const ChannelStats s = channel_stats(w.channels[c]);
        out[c] = {s.mean, s.stddev, s.kurtosis, s.skew};
    }
    return out;
}

// Inverse empirical CDF of one channel sampled at p_i = (i - 0.5) / k:
// F^-1(p) = sorted[ceil(p * n) - 1].
inline std::vector<Real> ecdf_channel(std::vector<Real> x, int k) {
    if (k < 1) throw std::invalid_argument("ecdf k must be >= 1");
    std::sort(x.begin(), x.end());
    const std::size_t n = x.size();
    std::vector<Real> out(static_cast<std::size_t>(k));
    for (int i = 1; i <= k; ++i) {
        const Real p = (static_cast<Real>(i) - 0.5) / static_cast<Real>(k);
        std::size_t idx = static_cast<std::size_t>(
            std::ceil(p * static_cast<Real>(n)));
        if (idx < 1) idx = 1;
        if (idx > n) idx = n;
        out[static_cast<std::size_t>(i - 1)] = x[idx - 1];
    }
    return out;
}

// 9xk matrix of evenly spaced order-statistic quantiles.
inline std::vector<std::vector<Real>> ecdf_features(const Window& w, int k) {
    std::vector<std::vector<Real>> out(kNumChannels);
    for (int c = 0; c < kNumChannels; ++c) {
        out[c] = ecdf_channel(w.channels[c], k);
    }
    return out;
}

// Concatenation per the FeatureVector layout, channel-major.
inline FeatureVector feature_vector(const Window& w, int k) {
    const auto stats = stat_features(w);
    const auto ecdf = ecdf_features(w, k);
    FeatureVector f;
    f.ecdf_k = k;
    f.values.reserve(FeatureVector::length_for(k));
    for (int c = 0; c < kNumChannels; ++c) {
        f.values.insert(f.values.end(), stats[c].begin(), stats[c].end());
        f.values.insert(f.values.end(), ecdf[c].begin(), ecdf[c].end());
    }
    return f;
}

}  // namespace suds::signal
