#include <gtest/gtest.h>

#include <sstream>

#include "suds/script.hpp"

using namespace suds;
using namespace suds::context;

namespace {

BeaconReading door_at(std::int64_t sec, Real rssi) {
    return {sec * kNsPerSecond, "door", rssi};
}

std::int64_t at_hour(int hour, int minute = 0) {
    return hour * kNsPerHour + minute * kNsPerMinute;
}

}  // namespace

TEST(IngestRssi, EvictsReadingsAgedFifteenSeconds) {
    ReminderState st;
    ingest_rssi(st, door_at(0, -50.0));
    ingest_rssi(st, door_at(16, -50.0));
    EXPECT_EQ(st.rssi_window.size(), 1u);
    EXPECT_EQ(st.rssi_window.front().t_ns, 16 * kNsPerSecond);
}

TEST(IngestRssi, SingleReadingWindowOfOne) {
    ReminderState st;
    ingest_rssi(st, door_at(3, -61.0));
    EXPECT_EQ(st.rssi_window.size(), 1u);
}

// 30 readings at 1 Hz: the trailing window holds exactly the newest 15
// (ages 0..14; the reading aged exactly 15 s falls out).
TEST(IngestRssi, ThirtyReadingsAtOneHzKeepFifteen) {
    ReminderState st;
    for (int t = 0; t < 30; ++t) ingest_rssi(st, door_at(t, -55.0));
    EXPECT_EQ(st.rssi_window.size(), 15u);
    EXPECT_EQ(st.rssi_window.front().t_ns, 15 * kNsPerSecond);
    EXPECT_EQ(st.rssi_window.back().t_ns, 29 * kNsPerSecond);
}

TEST(IngestRssi, TimeRegressionIsError) {
    ReminderState st;
    ingest_rssi(st, door_at(10, -50.0));
    try {
        ingest_rssi(st, door_at(9, -50.0));
        FAIL() << "expected non-monotonic clock";
    } catch (const std::runtime_error& e) {
        EXPECT_STREQ(e.what(), "non-monotonic clock");
    }
}

TEST(IngestRssi, RssiRangeValidated) {
    ReminderState st;
    EXPECT_THROW(ingest_rssi(st, {0, "door", 1.0}), std::invalid_argument);
    EXPECT_THROW(ingest_rssi(st, {0, "door", -130.0}), std::invalid_argument);
}

TEST(EntryDetected, StrongDoorSignalOverWindow) {
    ReminderState st;
    for (int t = 0; t <= 14; ++t) ingest_rssi(st, door_at(t, -50.0));
    EXPECT_TRUE(entry_detected(st, 14 * kNsPerSecond));
}

TEST(EntryDetected, WeakSignalStaysOut) {
    ReminderState st;
    for (int t = 0; t <= 14; ++t) ingest_rssi(st, door_at(t, -70.0));
    EXPECT_FALSE(entry_detected(st, 14 * kNsPerSecond));
}

TEST(EntryDetected, MixedBeaconIdsNeverMatch) {
    ReminderState st;
    for (int t = 0; t <= 10; ++t) {
        ingest_rssi(st, {t * kNsPerSecond, t % 2 ? "door" : "kitchen", -50.0});
    }
    EXPECT_FALSE(entry_detected(st, 10 * kNsPerSecond));
}

TEST(EntryDetected, EmptyWindowNeverDetects) {
    ReminderState st;
    EXPECT_FALSE(entry_detected(st, 0));
}

TEST(EntryDetected, ThresholdIsStrict) {
    ReminderState st;
    for (int t = 0; t < 5; ++t) ingest_rssi(st, door_at(t, -60.0));
    EXPECT_FALSE(entry_detected(st, 4 * kNsPerSecond));
    ReminderState st2;
    for (int t = 0; t < 5; ++t) ingest_rssi(st2, door_at(t, -59.9));
    EXPECT_TRUE(entry_detected(st2, 4 * kNsPerSecond));
}

// Raising every reading can only help: the detector is monotone in RSSI.
TEST(EntryDetected, MonotoneInRssi) {
    Rng rng(12);
    for (int trial = 0; trial < 30; ++trial) {
        ReminderState weak, strong;
        for (int t = 0; t < 8; ++t) {
            const Real base = rng.uniform(-90.0, -40.0);
            const Real lift = rng.uniform(0.0, 20.0);
            ingest_rssi(weak, door_at(t, base));
            ingest_rssi(strong, door_at(t, std::min(0.0, base + lift)));
        }
        const std::int64_t now = 7 * kNsPerSecond;
        if (entry_detected(weak, now)) EXPECT_TRUE(entry_detected(strong, now));
    }
}

TEST(RoutineDue, HourSinceLastWash) {
    ReminderState st;
    st.last_handwash_time = at_hour(13);  // 1 PM
    EXPECT_TRUE(routine_due(st, at_hour(14, 1)));   // 61 minutes later
    EXPECT_FALSE(routine_due(st, at_hour(13, 10)));  // 10 minutes later
}

TEST(RoutineDue, QuietOutsideNineToNine) {
    ReminderState st;
    st.last_handwash_time = at_hour(17);
    EXPECT_FALSE(routine_due(st, at_hour(22)));  // 10 PM, 5 h since wash
    EXPECT_FALSE(routine_due(st, at_hour(8, 59)));
    ReminderState fresh;
    EXPECT_TRUE(routine_due(fresh, at_hour(9)));
    EXPECT_FALSE(routine_due(fresh, at_hour(21)));
}

TEST(RoutineDue, SnoozeSuppresses) {
    ReminderState st;
    st.snooze_until = at_hour(15);
    EXPECT_FALSE(routine_due(st, at_hour(14, 30)));
    EXPECT_TRUE(routine_due(st, at_hour(15)));
}

TEST(ParseIntent, Examples) {
    EXPECT_EQ(parse_intent("yes, washing now").kind, Intent::Kind::ConfirmStart);
    const auto snooze = parse_intent("remind me after 30 minutes");
    EXPECT_EQ(snooze.kind, Intent::Kind::Snooze);
    EXPECT_EQ(snooze.snooze_minutes, 30);
    EXPECT_EQ(parse_intent("").kind, Intent::Kind::Unknown);
    EXPECT_EQ(parse_intent("I am done").kind, Intent::Kind::Done);
    EXPECT_EQ(parse_intent("not now").kind, Intent::Kind::Decline);
    EXPECT_EQ(parse_intent("don't bother me").kind, Intent::Kind::Decline);
    EXPECT_EQ(parse_intent("maybe soon?").kind, Intent::Kind::Unknown);
    EXPECT_EQ(parse_intent("ok sure").kind, Intent::Kind::ConfirmStart);
    EXPECT_EQ(parse_intent("later, in 5 minutes please").kind, Intent::Kind::Snooze);
}

TEST(ParseIntent, PrecedenceWhenKeywordsCoOccur) {
    // Snooze > Done > ConfirmStart > Decline
    const auto i = parse_intent("done, but remind me in 10 minutes");
    EXPECT_EQ(i.kind, Intent::Kind::Snooze);
    EXPECT_EQ(i.snooze_minutes, 10);
    EXPECT_EQ(parse_intent("yes I am done").kind, Intent::Kind::Done);
    EXPECT_EQ(parse_intent("no, yes").kind, Intent::Kind::ConfirmStart);
}

TEST(Step, EntryPromptsFromIdle) {
    ReminderState st;
    const auto acts = step(st, {EventKind::EntryDetected, 1000, ""});
    ASSERT_EQ(acts.size(), 1u);
    EXPECT_EQ(acts[0].kind, ActionKind::Remind);
    EXPECT_EQ(st.phase, Phase::Prompted);
}

TEST(Step, SnoozeSetsWakeTimeAndReturnsIdle) {
    ReminderState st;
    step(st, {EventKind::EntryDetected, 0, ""});
    const auto acts = step(st, {EventKind::Utterance, 0, "remind me after 15 minutes"});
    EXPECT_TRUE(acts.empty());
    EXPECT_EQ(st.phase, Phase::Idle);
    ASSERT_TRUE(st.snooze_until.has_value());
    EXPECT_EQ(*st.snooze_until, 15 * kNsPerMinute);
    // both reminder kinds stay suppressed until snooze_until
    EXPECT_TRUE(step(st, {EventKind::EntryDetected, 5 * kNsPerMinute, ""}).empty());
    EXPECT_TRUE(step(st, {EventKind::RoutineDue, 10 * kNsPerMinute, ""}).empty());
    EXPECT_FALSE(step(st, {EventKind::EntryDetected, 15 * kNsPerMinute, ""}).empty());
}

TEST(Step, DoneWhileCollectingReports) {
    ReminderState st;
    step(st, {EventKind::EntryDetected, 0, ""});
    step(st, {EventKind::Utterance, 1, "yes"});
    EXPECT_EQ(st.phase, Phase::Collecting);
    const auto acts = step(st, {EventKind::Utterance, 2, "done"});
    ASSERT_EQ(acts.size(), 2u);
    EXPECT_EQ(acts[0].kind, ActionKind::StopSensing);
    EXPECT_EQ(acts[1].kind, ActionKind::Assess);
    EXPECT_EQ(st.phase, Phase::Reporting);
    step(st, {EventKind::ReportDelivered, 3, ""});
    EXPECT_EQ(st.phase, Phase::Idle);
    ASSERT_TRUE(st.last_handwash_time.has_value());
    EXPECT_EQ(*st.last_handwash_time, 3);
}

TEST(Step, UnknownRepromptsAtMostTwice) {
    ReminderState st;
    step(st, {EventKind::EntryDetected, 0, ""});
    EXPECT_EQ(step(st, {EventKind::Utterance, 1, "hmm"}).size(), 1u);
    EXPECT_EQ(st.phase, Phase::Prompted);
    EXPECT_EQ(step(st, {EventKind::Utterance, 2, "what"}).size(), 1u);
    EXPECT_EQ(st.phase, Phase::Prompted);
    EXPECT_TRUE(step(st, {EventKind::Utterance, 3, "???"}).empty());
    EXPECT_EQ(st.phase, Phase::Idle);
}

TEST(Step, DeclineReturnsIdleWithoutSnooze) {
    ReminderState st;
    step(st, {EventKind::EntryDetected, 0, ""});
    step(st, {EventKind::Utterance, 1, "not now"});
    EXPECT_EQ(st.phase, Phase::Idle);
    EXPECT_FALSE(st.snooze_until.has_value());
    // a later reminder may fire again
    EXPECT_FALSE(step(st, {EventKind::RoutineDue, 2, ""}).empty());
}

TEST(Step, NoRemindOutsideIdle) {
    ReminderState st;
    step(st, {EventKind::EntryDetected, 0, ""});
    EXPECT_TRUE(step(st, {EventKind::EntryDetected, 1, ""}).empty());
    step(st, {EventKind::Utterance, 2, "yes"});
    EXPECT_TRUE(step(st, {EventKind::RoutineDue, 3, ""}).empty());
}

// Scripted six-event session checked against the hand-derived action trace.
TEST(Simulate, ScriptedSessionMatchesHandTrace) {
    std::vector<ScriptEvent> script;
    for (int t = 0; t < 4; ++t) {
        script.push_back({t * kNsPerSecond, "rssi", "door", -50.0, ""});
    }
    script.push_back({5 * kNsPerSecond, "utterance", "", -120.0, "yes"});
    script.push_back({30 * kNsPerSecond, "utterance", "", -120.0, "done"});

    const auto result = simulate(script);
    ASSERT_EQ(result.actions.size(), 4u);
    EXPECT_EQ(result.actions[0].kind, ActionKind::Remind);
    EXPECT_EQ(result.actions[0].t_ns, 0);
    EXPECT_EQ(result.actions[1].kind, ActionKind::StartSensing);
    EXPECT_EQ(result.actions[1].t_ns, 5 * kNsPerSecond);
    EXPECT_EQ(result.actions[2].kind, ActionKind::StopSensing);
    EXPECT_EQ(result.actions[2].t_ns, 30 * kNsPerSecond);
    EXPECT_EQ(result.actions[3].kind, ActionKind::Assess);
    EXPECT_EQ(result.final_state.phase, Phase::Idle);
    EXPECT_TRUE(result.final_state.last_handwash_time.has_value());
}

TEST(Simulate, StartStopAlternateStrictly) {
    std::vector<ScriptEvent> script;
    std::int64_t t = at_hour(10);
    for (int session = 0; session < 3; ++session) {
        for (int i = 0; i < 3; ++i) {
            script.push_back({t, "rssi", "door", -45.0, ""});
            t += kNsPerSecond;
        }
        script.push_back({t, "utterance", "", -120.0, "sure"});
        t += 25 * kNsPerSecond;
        script.push_back({t, "utterance", "", -120.0, "finished"});
        t += 2 * kNsPerHour;
    }
    const auto result = simulate(script);
    int expect_start = 1;
    for (const auto& a : result.actions) {
        if (a.kind == ActionKind::StartSensing) {
            EXPECT_EQ(expect_start, 1);
            expect_start = 0;
        } else if (a.kind == ActionKind::StopSensing) {
            EXPECT_EQ(expect_start, 0);
            expect_start = 1;
        }
    }
    EXPECT_EQ(expect_start, 1);
}

TEST(Simulate, ReplayIsByteIdentical) {
    std::vector<ScriptEvent> script;
    std::int64_t t = at_hour(9, 30);
    for (int i = 0; i < 10; ++i) {
        script.push_back({t, "rssi", "door", -55.0 + (i % 3), ""});
        t += kNsPerSecond;
    }
    script.push_back({t, "utterance", "", -120.0, "remind me after 3 minutes"});
    t += 4 * kNsPerMinute;
    script.push_back({t, "tick", "", -120.0, ""});
    script.push_back({t + kNsPerSecond, "utterance", "", -120.0, "ok"});
    script.push_back({t + 30 * kNsPerSecond, "utterance", "", -120.0, "done now"});

    const auto a = actions_to_jsonl(simulate(script).actions);
    const auto b = actions_to_jsonl(simulate(script).actions);
    EXPECT_EQ(a, b);
    EXPECT_FALSE(a.empty());
}

TEST(Script, ParsesAndValidates) {
    std::istringstream in(
        R"({"t_ns":0,"type":"rssi","beacon_id":"door","rssi":-50.0}
{"t_ns":1000000000,"type":"utterance","text":"yes"}
{"t_ns":2000000000,"type":"tick"}
)");
    const auto events = parse_script_jsonl(in);
    ASSERT_EQ(events.size(), 3u);
    EXPECT_EQ(events[0].type, "rssi");
    EXPECT_EQ(events[1].text, "yes");

    std::istringstream bad(R"({"t_ns":5,"type":"warp"})");
    EXPECT_THROW(parse_script_jsonl(bad), std::runtime_error);
    std::istringstream regress(
        R"({"t_ns":5,"type":"tick"}
{"t_ns":4,"type":"tick"}
)");
    EXPECT_THROW(parse_script_jsonl(regress), std::runtime_error);
}

// Routine reminders fire through tick events inside the 9-to-9 window.
TEST(Simulate, RoutineReminderViaTicks) {
    std::vector<ScriptEvent> script;
    script.push_back({at_hour(10), "tick", "", -120.0, ""});       // fires (never washed)
    script.push_back({at_hour(10, 1), "utterance", "", -120.0, "yes"});
    script.push_back({at_hour(10, 2), "utterance", "", -120.0, "done"});
    script.push_back({at_hour(10, 30), "tick", "", -120.0, ""});   // too soon
    script.push_back({at_hour(11, 3), "tick", "", -120.0, ""});    // hour passed, fires
    const auto result = simulate(script);
    std::vector<ActionKind> kinds;
    for (const auto& a : result.actions) kinds.push_back(a.kind);
    const std::vector<ActionKind> expect = {ActionKind::Remind, ActionKind::StartSensing,
                                            ActionKind::StopSensing, ActionKind::Assess,
                                            ActionKind::Remind};
    EXPECT_EQ(kinds, expect);
}
