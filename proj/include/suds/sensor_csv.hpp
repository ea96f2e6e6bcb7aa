#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "suds/signal.hpp"

namespace suds::signal {

// One ingested file: the series plus an optional per-sample step label
// (1..10, or 0 for "no step").
struct LabeledSeries {
    SampleSeries series;
    std::vector<int> labels;  // empty when the file has no label column
    bool has_labels() const { return !labels.empty(); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline Real parse_real(const std::string& s, std::size_t line_no) {
    Real v{};
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e) {
        throw std::runtime_error("sensor csv: bad numeric field '" + s + "' at line " +
                                 std::to_string(line_no));
    }
    return v;
}

}  // namespace detail

// Reads `t_ns,ax,ay,az,gx,gy,gz,mx,my,mz[,label]`. Rejects partial rows,
// non-increasing timestamps and (when expected_rate_hz > 0) streams whose
// mean sample interval is off the nominal rate by more than 5%.
inline LabeledSeries read_sensor_csv(const std::string& path, Real expected_rate_hz = 50.0) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open sensor csv: " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty input");
    const auto header = detail::split_csv_line(line);
    if (header.size() != 10 && header.size() != 11) {
        throw std::runtime_error("sensor csv: expected 10 or 11 columns, got " +
                                 std::to_string(header.size()));
    }
    const bool labeled = header.size() == 11;

    LabeledSeries out;
    out.series.rate_hz = expected_rate_hz > 0 ? expected_rate_hz : 50.0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cols = detail::split_csv_line(line);
        if (cols.size() != header.size()) {
            throw std::runtime_error("sensor csv: partial row at line " + std::to_string(line_no));
        }
        Sample s;
        s.t_ns = static_cast<std::int64_t>(detail::parse_real(cols[0], line_no));
        for (int c = 0; c < kNumChannels; ++c) {
            s.ch[c] = detail::parse_real(cols[static_cast<std::size_t>(c) + 1], line_no);
        }
        if (!out.series.samples.empty() && s.t_ns <= out.series.samples.back().t_ns) {
            throw std::runtime_error("sensor csv: timestamps not strictly increasing at line " +
                                     std::to_string(line_no));
        }
        out.series.samples.push_back(s);
        if (labeled) {
            out.labels.push_back(static_cast<int>(detail::parse_real(cols[10], line_no)));
        }
    }
    if (out.series.empty()) throw std::runtime_error("empty input");

    if (expected_rate_hz > 0 && out.series.size() >= 2) {
        const Real span_s = static_cast<Real>(out.series.samples.back().t_ns -
                                              out.series.samples.front().t_ns) /
                            static_cast<Real>(kNsPerSecond);
        const Real rate = static_cast<Real>(out.series.size() - 1) / span_s;
        if (std::abs(rate - expected_rate_hz) > 0.05 * expected_rate_hz) {
            throw std::runtime_error("sensor csv: stream rate " + std::to_string(rate) +
                                     " Hz does not match nominal " +
                                     std::to_string(expected_rate_hz) + " Hz (not resampled)");
        }
    }
    return out;
}

inline void write_sensor_csv(const std::string& path, const LabeledSeries& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write sensor csv: " + path);
    const bool labeled = data.has_labels();
    out << "t_ns,ax,ay,az,gx,gy,gz,mx,my,mz";
    if (labeled) out << ",label";
    out << "\n";
    char buf[64];
    for (std::size_t i = 0; i < data.series.size(); ++i) {
        const Sample& s = data.series.samples[i];
        out << s.t_ns;
        for (int c = 0; c < kNumChannels; ++c) {
            auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), s.ch[c]);
            out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
        }
        if (labeled) out << ',' << data.labels[i];
        out << "\n";
    }
}

}  // namespace suds::signal
