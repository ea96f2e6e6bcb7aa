#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "suds/context.hpp"

namespace suds::context {

// Simulation input, one JSON object per line:
//   {"t_ns":..., "type":"rssi", "beacon_id":"door", "rssi":-55.0}
//   {"t_ns":..., "type":"utterance", "text":"yes"}
//   {"t_ns":..., "type":"tick"}
struct ScriptEvent {
    std::int64_t t_ns = 0;
    std::string type;
    std::string beacon_id;
    Real rssi = -120.0;
    std::string text;
};

inline std::vector<ScriptEvent> parse_script_jsonl(std::istream& in) {
    std::vector<ScriptEvent> events;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("script line " + std::to_string(line_no) + ": " + e.what());
        }
        ScriptEvent ev;
        if (!j.contains("t_ns") || !j.contains("type")) {
            throw std::runtime_error("script line " + std::to_string(line_no) +
                                     ": needs t_ns and type");
        }
        ev.t_ns = j.at("t_ns").get<std::int64_t>();
        ev.type = j.at("type").get<std::string>();
        if (ev.type == "rssi") {
            ev.beacon_id = j.at("beacon_id").get<std::string>();
            ev.rssi = j.at("rssi").get<Real>();
        } else if (ev.type == "utterance") {
            ev.text = j.at("text").get<std::string>();
        } else if (ev.type != "tick") {
            throw std::runtime_error("script line " + std::to_string(line_no) +
                                     ": unknown type '" + ev.type + "'");
        }
        if (!events.empty() && ev.t_ns < events.back().t_ns) {
            throw std::runtime_error("script line " + std::to_string(line_no) +
                                     ": timestamps must be non-decreasing");
        }
        events.push_back(std::move(ev));
    }
    return events;
}

inline std::vector<ScriptEvent> load_script_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open script: " + path);
    return parse_script_jsonl(in);
}

struct SimResult {
    std::vector<Action> actions;
    ReminderState final_state;
};

// Replays a script against a fresh state machine. Beacon readings feed the
// RSSI window and raise EntryDetected while idle; ticks raise RoutineDue when
// the hourly rule fires; an Assess action is answered immediately with a
// (simulated) report delivery at the same timestamp.
inline SimResult simulate(const std::vector<ScriptEvent>& events, const ContextConfig& cfg = {}) {
    SimResult result;
    ReminderState& state = result.final_state;
    auto run = [&](EventKind kind, std::int64_t t, const std::string& text = "") {
        const auto acts = step(state, Event{kind, t, text}, cfg);
        bool assess = false;
        for (const auto& a : acts) {
            result.actions.push_back(a);
            assess = assess || a.kind == ActionKind::Assess;
        }
        if (assess) step(state, Event{EventKind::ReportDelivered, t, ""}, cfg);
    };
    for (const auto& ev : events) {
        if (ev.type == "rssi") {
            ingest_rssi(state, BeaconReading{ev.t_ns, ev.beacon_id, ev.rssi}, cfg);
            if (state.phase == Phase::Idle && entry_detected(state, ev.t_ns, cfg)) {
                run(EventKind::EntryDetected, ev.t_ns);
            }
        } else if (ev.type == "utterance") {
            run(EventKind::Utterance, ev.t_ns, ev.text);
        } else {  // tick
            if (state.phase == Phase::Idle && routine_due(state, ev.t_ns, cfg)) {
                run(EventKind::RoutineDue, ev.t_ns);
            } else {
                run(EventKind::Tick, ev.t_ns);
            }
        }
    }
    return result;
}

// One JSON object per emitted action, e.g. {"action":"remind","t_ns":1200}.
inline std::string actions_to_jsonl(const std::vector<Action>& actions) {
    std::string out;
    for (const auto& a : actions) {
        nlohmann::json j;
        j["t_ns"] = a.t_ns;
        j["action"] = action_name(a.kind);
        out += j.dump();
        out += "\n";
    }
    return out;
}

}  // namespace suds::context
