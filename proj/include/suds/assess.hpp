#pragma once

#include <array>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "suds/model.hpp"
#include "suds/signal.hpp"

namespace suds::assess {

// One handwashing event: the sensor stream plus the wall-clock start/end
// marked by the voice interaction (duration comes from these markers, not
// from sample timestamps).
struct HandwashEvent {
    signal::SampleSeries series;
    std::int64_t start_time_ns = 0;
    std::int64_t end_time_ns = 0;

    Real duration_s() const {
        if (end_time_ns <= start_time_ns) {
            throw std::invalid_argument("event end must be after start");
        }
        return static_cast<Real>(end_time_ns - start_time_ns) / static_cast<Real>(kNsPerSecond);
    }
};

struct TimelineEntry {
    std::size_t window_index = 0;
    int step = 0;  // 1..10
    Real probability = 0.0;
};

struct StepTimeline {
    std::vector<TimelineEntry> entries;
};

// User-facing feedback strings, one per missed step 1..10 plus the duration
// and perfect-wash messages. These are the external contract and must stay
// byte-stable.
inline const std::array<std::string, 10>& missed_step_messages() {
    static const std::array<std::string, 10> kMessages = {
        "Didn't rub both hands palm to palm",
        "Didn't rub right palm over left dorsum properly",
        "Didn't rub left palm over right dorsum properly",
        "Didn't put palm to palm with fingers interlaced properly",
        "Didn't clean right fingertips interlocked in left palm properly",
        "Didn't clean left fingertips interlocked in right palm properly",
        "Didn't rub left thumb clasped in right palm properly",
        "Didn't rub right thumb clasped in left palm properly",
        "Didn't rotationally rub right fingers on left palm properly",
        "Didn't rotationally rub left fingers on right palm properly",
    };
    return kMessages;
}

inline const std::string& duration_message() {
    static const std::string kMessage = "Didn't wash hands for enough duration";
    return kMessage;
}

inline const std::string& perfect_message() {
    static const std::string kMessage = "Great job! You washed your hands perfectly.";
    return kMessage;
}

struct QualityReport {
    std::set<int> performed;   // subset of {1..10}
    std::vector<int> missed;   // ascending, the complement
    Real duration_s = 0.0;
    bool duration_ok = false;  // duration_s >= 20
    std::vector<std::string> messages;

    // Multiple messages combine into the single final utterance.
    std::string combined() const {
        std::string out;
        for (std::size_t i = 0; i < messages.size(); ++i) {
            if (i) out += "; ";
            out += messages[i];
        }
        return out;
    }
};

struct AssessConfig {
    Real window_seconds = 0.06;
    Real overlap = 0.7;
    int ecdf_k = 5;
    std::size_t fir_taps = 5;  // moving-average length
    int min_windows = 3;       // sustained-evidence threshold per step
    Real min_duration_s = 20.0;
};

// Full pipeline for one event: FIR filter, windowing, features, then the
// classifier window by window with the activation vector threaded through.
// An event shorter than one window yields an empty timeline.
inline StepTimeline classify_event(const model::ModelParams& params, const HandwashEvent& event,
                                   const AssessConfig& cfg = {}) {
    if (event.series.empty()) throw std::invalid_argument("empty input");
    const auto filtered =
        signal::fir_filter(event.series, signal::FilterSpec::moving_average(cfg.fir_taps));
    const auto windows = signal::make_windows(filtered, cfg.window_seconds, cfg.overlap);
    StepTimeline tl;
    model::RecurrentState st = model::RecurrentState::initial(params.spec);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto fv = signal::feature_vector(windows[i], cfg.ecdf_k);
        auto [probs, next] = model::forward(params, fv, st);
        st = std::move(next);
        const int cls = probs.argmax();
        tl.entries.push_back({i, cls + 1, probs.probs[static_cast<std::size_t>(cls)]});
    }
    return tl;
}

// A step counts as performed when it is the predicted label of at least
// min_windows windows.
inline std::set<int> detect_steps(const StepTimeline& timeline, int min_windows) {
    if (min_windows < 1) throw std::invalid_argument("min_windows must be >= 1");
    std::array<int, 11> counts{};
    for (const auto& e : timeline.entries) {
        if (e.step >= 1 && e.step <= 10) counts[static_cast<std::size_t>(e.step)]++;
    }
    std::set<int> performed;
    for (int s = 1; s <= 10; ++s) {
        if (counts[static_cast<std::size_t>(s)] >= min_windows) performed.insert(s);
    }
    return performed;
}

// One verbatim message per missed step in ascending order, the duration
// message when the wash ran short, and exactly the single perfect-wash
// message when nothing was missed and the duration is at least 20 s.
inline QualityReport build_report(const std::set<int>& performed, Real duration_s,
                                  Real min_duration_s = 20.0) {
    if (duration_s < 0.0) throw std::invalid_argument("duration must be >= 0");
    for (int s : performed) {
        if (s < 1 || s > 10) throw std::invalid_argument("performed step outside 1..10");
    }
    QualityReport r;
    r.performed = performed;
    r.duration_s = duration_s;
    r.duration_ok = duration_s >= min_duration_s;
    for (int s = 1; s <= 10; ++s) {
        if (!performed.count(s)) r.missed.push_back(s);
    }
    for (int s : r.missed) {
        r.messages.push_back(missed_step_messages()[static_cast<std::size_t>(s - 1)]);
    }
    if (!r.duration_ok) r.messages.push_back(duration_message());
    if (r.messages.empty()) r.messages.push_back(perfect_message());
    return r;
}

// Structured text: one line per message plus a machine-readable trailer.
inline std::string report_text(const QualityReport& r) {
    std::string out;
    for (const auto& m : r.messages) {
        out += m;
        out += "\n";
    }
    out += "#report performed=";
    bool first = true;
    for (int s : r.performed) {
        if (!first) out += ",";
        out += std::to_string(s);
        first = false;
    }
    out += " missed=";
    first = true;
    for (int s : r.missed) {
        if (!first) out += ",";
        out += std::to_string(s);
        first = false;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), " duration_s=%.3f duration_ok=%d", r.duration_s,
                  r.duration_ok ? 1 : 0);
    out += buf;
    out += "\n";
    return out;
}

// classify + detect + report for one event.
inline QualityReport assess_event(const model::ModelParams& params, const HandwashEvent& event,
                                  const AssessConfig& cfg = {}) {
    const StepTimeline tl = classify_event(params, event, cfg);
    const std::set<int> performed = detect_steps(tl, cfg.min_windows);
    return build_report(performed, event.duration_s(), cfg.min_duration_s);
}

}  // namespace suds::assess
