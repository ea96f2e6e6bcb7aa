#pragma once

#include <cctype>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "suds/common.hpp"

namespace suds::context {

struct BeaconReading {
    std::int64_t t_ns = 0;
    std::string beacon_id;
    Real rssi = -120.0;  // decibels, in [-120, 0]
};

// Idle -> Prompted -> Collecting -> Reporting -> Idle. AwaitingStart is
// reserved for voice flows that separate the confirmation from the start of
// sensing; the default flow goes straight to Collecting.
enum class Phase { Idle, Prompted, AwaitingStart, Collecting, Reporting };

struct ContextConfig {
    std::string door_beacon_id = "door";
    Real rssi_threshold_db = -60.0;
    std::int64_t rssi_window_ns = 15 * kNsPerSecond;
    int routine_start_hour = 9;   // inclusive, local
    int routine_end_hour = 21;    // exclusive
    std::int64_t routine_interval_ns = kNsPerHour;
    int reprompt_limit = 2;
};

// All time arrives through events; the engine never reads a system clock.
// Timestamps are nanoseconds since local midnight of day zero.
struct ReminderState {
    std::optional<std::int64_t> last_handwash_time;
    std::optional<std::int64_t> snooze_until;
    std::deque<BeaconReading> rssi_window;  // trailing 15 s, newest last
    Phase phase = Phase::Idle;
    int reprompt_count = 0;

    bool snoozed_at(std::int64_t now) const { return snooze_until && now < *snooze_until; }
};

// Appends a reading and evicts everything 15 s or older relative to the
// newest reading (the window is the trailing half-open interval).
inline void ingest_rssi(ReminderState& state, const BeaconReading& reading,
                        const ContextConfig& cfg = {}) {
    if (!(reading.rssi >= -120.0 && reading.rssi <= 0.0)) {
        throw std::invalid_argument("rssi outside [-120, 0] dB");
    }
    if (!state.rssi_window.empty() && reading.t_ns < state.rssi_window.back().t_ns) {
        throw std::runtime_error("non-monotonic clock");
    }
    state.rssi_window.push_back(reading);
    const std::int64_t newest = reading.t_ns;
    while (!state.rssi_window.empty() &&
           newest - state.rssi_window.front().t_ns >= cfg.rssi_window_ns) {
        state.rssi_window.pop_front();
    }
}

// Home entry: the mean RSSI over the trailing window exceeds the threshold
// and every reading in it came from the door beacon. An empty window never
// detects entry.
inline bool entry_detected(const ReminderState& state, std::int64_t now,
                           const ContextConfig& cfg = {}) {
    Real sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : state.rssi_window) {
        if (now - r.t_ns >= cfg.rssi_window_ns) continue;
        if (r.beacon_id != cfg.door_beacon_id) return false;
        sum += r.rssi;
        ++n;
    }
    if (n == 0) return false;
    return sum / static_cast<Real>(n) > cfg.rssi_threshold_db;
}

inline int hour_of(std::int64_t t_ns) {
    return static_cast<int>((t_ns / kNsPerHour) % 24);
}

// Hourly routine reminder, active 9 AM to 9 PM, suppressed while snoozed or
// within an hour of the last recorded wash.
inline bool routine_due(const ReminderState& state, std::int64_t now,
                        const ContextConfig& cfg = {}) {
    const int hour = hour_of(now);
    if (hour < cfg.routine_start_hour || hour >= cfg.routine_end_hour) return false;
    if (state.last_handwash_time && now - *state.last_handwash_time < cfg.routine_interval_ns) {
        return false;
    }
    if (state.snoozed_at(now)) return false;
    return true;
}

struct Intent {
    enum class Kind { ConfirmStart, Done, Snooze, Decline, Unknown };
    Kind kind = Kind::Unknown;
    int snooze_minutes = 0;  // >= 1 when kind == Snooze
};

namespace detail {

inline std::vector<std::string> tokenize_lower(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (ch == '\'') continue;  // don't -> dont
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

inline bool has_any(const std::vector<std::string>& tokens,
                    std::initializer_list<const char*> words) {
    for (const auto& t : tokens) {
        for (const char* w : words) {
            if (t == w) return true;
        }
    }
    return false;
}

}  // namespace detail

// Keyword scan over whole tokens. Precedence when keywords co-occur:
// Snooze > Done > ConfirmStart > Decline > Unknown.
inline Intent parse_intent(std::string_view utterance) {
    const auto tokens = detail::tokenize_lower(utterance);

    // snooze: a reschedule keyword, an integer, and a "minute..." token
    const bool wants_later = detail::has_any(tokens, {"remind", "later", "snooze"});
    int minutes = 0;
    bool has_minutes_word = false;
    for (const auto& t : tokens) {
        if (t.rfind("minute", 0) == 0) has_minutes_word = true;
        if (minutes == 0 && !t.empty() && std::isdigit(static_cast<unsigned char>(t[0]))) {
            minutes = std::atoi(t.c_str());
        }
    }
    if (wants_later && has_minutes_word && minutes >= 1) {
        return {Intent::Kind::Snooze, minutes};
    }
    if (detail::has_any(tokens, {"done", "finished", "finish", "complete", "completed", "stop"})) {
        return {Intent::Kind::Done, 0};
    }
    if (detail::has_any(tokens, {"yes", "yeah", "yep", "ok", "okay", "sure", "start", "starting",
                                 "begin", "washing"})) {
        return {Intent::Kind::ConfirmStart, 0};
    }
    if (detail::has_any(tokens, {"no", "not", "nope", "never", "dont", "cant", "busy"})) {
        return {Intent::Kind::Decline, 0};
    }
    return {Intent::Kind::Unknown, 0};
}

enum class EventKind { EntryDetected, RoutineDue, Utterance, Tick, ReportDelivered };

struct Event {
    EventKind kind = EventKind::Tick;
    std::int64_t t_ns = 0;
    std::string text;  // utterances only
};

enum class ActionKind { Remind, Reprompt, StartSensing, StopSensing, Assess };

struct Action {
    ActionKind kind;
    std::int64_t t_ns;
};

inline const char* action_name(ActionKind k) {
    switch (k) {
        case ActionKind::Remind: return "remind";
        case ActionKind::Reprompt: return "reprompt";
        case ActionKind::StartSensing: return "start_sensing";
        case ActionKind::StopSensing: return "stop_sensing";
        case ActionKind::Assess: return "assess";
    }
    return "?";
}

// Deterministic transition step. Reminders fire only from Idle and never
// while snoozed; unknown responses re-prompt at most reprompt_limit times;
// a session in Collecting ends on Done with StopSensing + Assess, and the
// report delivery returns the machine to Idle, recording the wash time.
inline std::vector<Action> step(ReminderState& state, const Event& event,
                                const ContextConfig& cfg = {}) {
    std::vector<Action> actions;
    const std::int64_t now = event.t_ns;
    switch (event.kind) {
        case EventKind::EntryDetected:
        case EventKind::RoutineDue:
            if (state.phase == Phase::Idle && !state.snoozed_at(now)) {
                state.phase = Phase::Prompted;
                state.reprompt_count = 0;
                actions.push_back({ActionKind::Remind, now});
            }
            break;
        case EventKind::Utterance: {
            const Intent intent = parse_intent(event.text);
            if (state.phase == Phase::Prompted) {
                switch (intent.kind) {
                    case Intent::Kind::ConfirmStart:
                        state.phase = Phase::Collecting;
                        actions.push_back({ActionKind::StartSensing, now});
                        break;
                    case Intent::Kind::Snooze:
                        state.phase = Phase::Idle;
                        state.snooze_until = now + intent.snooze_minutes * kNsPerMinute;
                        break;
                    case Intent::Kind::Decline:
                        state.phase = Phase::Idle;
                        break;
                    case Intent::Kind::Done:
                    case Intent::Kind::Unknown:
                        if (++state.reprompt_count <= cfg.reprompt_limit) {
                            actions.push_back({ActionKind::Reprompt, now});
                        } else {
                            state.phase = Phase::Idle;
                        }
                        break;
                }
            } else if (state.phase == Phase::Collecting) {
                if (intent.kind == Intent::Kind::Done) {
                    state.phase = Phase::Reporting;
                    actions.push_back({ActionKind::StopSensing, now});
                    actions.push_back({ActionKind::Assess, now});
                }
            }
            break;
        }
        case EventKind::ReportDelivered:
            if (state.phase == Phase::Reporting) {
                state.phase = Phase::Idle;
                state.last_handwash_time = now;
            }
            break;
        case EventKind::Tick:
            break;
    }
    return actions;
}

}  // namespace suds::context
