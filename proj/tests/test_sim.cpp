#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "rehabcoach/sim.hpp"
#include "sim_support.hpp"
#include "support.hpp"

using namespace rehabcoach;
using namespace rehabcoach::sim;
using rehabcoach::testing::bundled_scripts;
using rehabcoach::testing::fired_times;
using rehabcoach::testing::replay_mismatches;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

VirtualTime on(int h, int m = 0, int s = 0) { return rehabcoach::testing::on(default_date(), h, m, s); }

DayResult day(std::string_view behavior, std::uint64_t seed = 7, Rational scale = Rational{32}) {
  return run_day(preset(behavior), Config{}, bundled_scripts(), scale, seed);
}

struct TempDir {
  fs::path path;
  explicit TempDir(std::string tag) : path(fs::temp_directory_path() / ("rc-sim-" + tag + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp_dir(const fs::path& dir) {
  std::string all;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    all += f.filename().string() + '\n';
    all.append(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return all;
}

int count(const std::vector<service::ChecklistItem>& list, service::ChecklistStatus s) {
  return static_cast<int>(std::count_if(list.begin(), list.end(), [&](const auto& i) { return i.status == s; }));
}

const engine::InteractionInstance* instance_of(const DayResult& r, std::string_view script_id) {
  for (const auto& [id, inst] : r.instances) {
    if (inst.script_id == script_id) return &inst;
  }
  return nullptr;
}

// The day's plan folded from schedule_set records, which carry only the
// slots they change.
nlohmann::json last_schedule(const DayResult& r) {
  std::map<std::string, nlohmann::json> slots;
  for (const auto& e : r.events) {
    if (e.kind != EventKind::schedule_set) continue;
    for (const auto& s : e.payload.at("slots")) slots[s.at("slot").get<std::string>()] = s;
  }
  nlohmann::json out{{"slots", nlohmann::json::array()}};
  for (auto& [name, s] : slots) out["slots"].push_back(s);
  return out;
}

nlohmann::json slot_in(const nlohmann::json& schedule, std::string_view name) {
  for (const auto& s : schedule.at("slots")) {
    if (s.at("slot") == name) return s;
  }
  return nullptr;
}

}  // namespace

TEST(Presets, NamesResolveAndUnknownIsRejected) {
  for (const auto& n : preset_names()) EXPECT_EQ(preset(n).name, n);
  EXPECT_THROW(preset("sleepy"), UnknownBehavior);
  EXPECT_THROW(preset("h6"), UnknownBehavior);
  EXPECT_EQ(cohort().size(), 9u);
  EXPECT_THROW(find_task("T16"), UnknownTask);
  EXPECT_EQ(find_task("T10").task_id, "T10");
  EXPECT_EQ(default_suite().size(), 15u);
}

TEST(Latency, IsAPureFunctionOfItsKey) {
  auto b = preset("random");
  auto a = answer_latency(b, 1, "u", "i", "n", 0, 10, 0, 0.0);
  EXPECT_EQ(a, answer_latency(b, 1, "u", "i", "n", 0, 10, 0, 0.0));
  std::set<std::int64_t> seen;
  for (std::uint64_t s = 0; s < 50; ++s) seen.insert(answer_latency(b, s, "u", "i", "n", 0, 10, 0, 0.0).count());
  EXPECT_GT(seen.size(), 40u);
  for (auto v : seen) {
    EXPECT_GE(v, 1000 + 10 * 20);  // lo plus reading time
    EXPECT_LE(v, 120000 + 10 * 20);
  }
  auto fixed = preset("compliant");
  EXPECT_EQ(answer_latency(fixed, 1, "u", "i", "n", 0, 100, 10, 5.0),
            std::chrono::milliseconds(2000 + 100 * 20 + 10 * 300 + 5000));
}

TEST(RunDay, CompliantDayCompletesEverything) {
  auto r = day("compliant");
  EXPECT_EQ(count(r.checklist, service::ChecklistStatus::done), 2);
  EXPECT_EQ(count(r.checklist, service::ChecklistStatus::missed), 0);
  ASSERT_TRUE(r.summary);
  EXPECT_EQ(r.summary->trainings_done, 1);
  EXPECT_EQ(r.summary->learnings_done, 1);
  EXPECT_EQ(fired_times(r.events, "planning"), std::vector{on(8)});
  EXPECT_EQ(fired_times(r.events, "summary"), std::vector{on(19)});
  for (const auto& [id, inst] : r.instances) EXPECT_EQ(inst.status, engine::InstanceStatus::completed) << inst.script_id;
}

TEST(RunDay, NonResponderFallsBackToDefaultsAndTimesOutExactly) {
  auto r = day("non_responder");
  EXPECT_EQ(count(r.checklist, service::ChecklistStatus::done), 0);
  EXPECT_EQ(count(r.checklist, service::ChecklistStatus::missed), 2);
  const auto plan = last_schedule(r);
  EXPECT_EQ(slot_in(plan, "training#1").at("time"), "14:00");
  EXPECT_EQ(slot_in(plan, "training#1").at("source"), "default");
  EXPECT_EQ(slot_in(plan, "learning").at("time"), "16:00");
  EXPECT_EQ(slot_in(plan, "learning").at("source"), "default");
  EXPECT_TRUE(slot_in(plan, "training#2").is_null());
  // Every interaction still fired on time after the previous one timed out.
  EXPECT_EQ(fired_times(r.events, "planning"), std::vector{on(8)});
  EXPECT_EQ(fired_times(r.events, "training#1"), std::vector{on(14)});
  EXPECT_EQ(fired_times(r.events, "learning"), std::vector{on(16)});
  EXPECT_EQ(fired_times(r.events, "summary"), std::vector{on(19)});
  ASSERT_EQ(r.instances.size(), 5u);
  for (const auto& [id, inst] : r.instances) {
    EXPECT_EQ(inst.status, engine::InstanceStatus::incomplete) << inst.script_id;
    // Without answers the first wait point follows the last coach message.
    ASSERT_FALSE(inst.transcript.empty());
    EXPECT_EQ(inst.transcript.back().author, engine::Author::coach);
    EXPECT_EQ(*inst.ended_at, inst.transcript.back().at + 10min) << inst.script_id;
  }
}

TEST(RunDay, PostponerMovesSessionsAndStillCompletes) {
  auto r = day("postponer");
  EXPECT_EQ(count(r.checklist, service::ChecklistStatus::done), 2);
  auto t = fired_times(r.events, "training#1");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0], on(14));
  EXPECT_GE(t[1], on(15));
  EXPECT_LE(t[1], on(15, 10));
  auto l = fired_times(r.events, "learning");
  ASSERT_EQ(l.size(), 2u);
  EXPECT_GE(l[1], on(17));
  int postponed = 0;
  for (const auto& [id, inst] : r.instances) postponed += inst.status == engine::InstanceStatus::postponed;
  EXPECT_EQ(postponed, 2);
  EXPECT_EQ(slot_in(last_schedule(r), "training#1").at("source"), "postponed");
}

TEST(RunDay, EmptySummaryAnswerIsAnAnomaly) {
  auto r = day("empty_input");
  const auto* s = instance_of(r, "summary");
  ASSERT_NE(s, nullptr);
  EXPECT_EQ(s->status, engine::InstanceStatus::completed_with_anomaly);
  EXPECT_TRUE(s->has_anomaly());
  EXPECT_EQ(count(r.checklist, service::ChecklistStatus::done), 2);
}

TEST(RunDay, ReplayOverTheProducedLogReconstructsEveryInstance) {
  for (const auto& b : preset_names()) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      auto r = day(b, seed);
      EXPECT_EQ(replay_mismatches(r.events, r.instances, bundled_scripts()), 0) << b << " seed " << seed;
    }
  }
}

TEST(RunDay, ByteIdenticalLogsForIdenticalInputs) {
  TempDir a("a"), b("b");
  for (const auto& name : {"random", "p2", "postponer"}) {
    fs::remove_all(a.path);
    fs::remove_all(b.path);
    auto ra = run_day(preset(name), Config{}, bundled_scripts(), Rational{32}, 11, a.path);
    auto rb = run_day(preset(name), Config{}, bundled_scripts(), Rational{32}, 11, b.path);
    EXPECT_EQ(ra.events, rb.events);
    const auto bytes = slurp_dir(a.path);
    EXPECT_FALSE(bytes.empty());
    EXPECT_EQ(bytes, slurp_dir(b.path)) << name;
  }
  // The seed matters where latencies are random.
  EXPECT_NE(day("random", 1).events, day("random", 2).events);
}

TEST(RunDay, ScaleLeavesTheVirtualEventSequenceUnchanged) {
  for (const auto& name : {"compliant", "random", "postponer", "p1", "non_responder"}) {
    for (std::uint64_t seed : {3u, 4u}) {
      auto base = day(name, seed, Rational{1});
      EXPECT_EQ(day(name, seed, Rational{32}).events, base.events) << name;
      EXPECT_EQ(day(name, seed, Rational{1000}).events, base.events) << name;
      EXPECT_EQ(day(name, seed, Rational{3, 2}).events, base.events) << name;
    }
  }
  EXPECT_THROW(day("compliant", 1, Rational{0}), SimError);
}

TEST(RunDay, PacedRunMatchesTheUnpacedOne) {
  // 13 virtual hours at scale 100000 take under half a second.
  TempDir dir("paced");
  auto paced = run_day(preset("compliant"), Config{}, bundled_scripts(), Rational{100000}, 5, dir.path, true);
  EXPECT_EQ(paced.events, day("compliant", 5).events);
}

TEST(RunDay, WritesOutputs) {
  TempDir dir("out");
  auto r = day("compliant");
  write_day_outputs(r, dir.path);
  for (const char* f : {"events.jsonl", "transcripts.json", "checklist.json", "summary.json"}) {
    EXPECT_TRUE(fs::exists(dir.path / f)) << f;
  }
  std::ifstream in(dir.path / "events.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) {
    EXPECT_EQ(record_from_json(nlohmann::json::parse(line)), r.events[lines]);
    ++lines;
  }
  EXPECT_EQ(lines, r.events.size());
}

TEST(Recovery, KilledDayResumesToTheSameOutcome) {
  TempDir dir("crash");
  std::mt19937_64 rng(99);
  int mid_day = 0;
  for (const char* name : {"compliant", "postponer", "random", "empty_input"}) {
    const auto whole = day(name, 21, Rational{1});
    for (int trial = 0; trial < 3; ++trial) {
      // The paced day lasts about 1.9 s of wall time.
      const auto delay = std::chrono::milliseconds(100 + rng() % 1600);
      auto run = rehabcoach::testing::crash_and_resume(preset(name), 21, dir.path, delay, Rational{24000});
      mid_day += run.killed && run.records_at_kill > 0;
      EXPECT_EQ(run.resumed.checklist, whole.checklist) << name << " killed at " << delay.count() << " ms";
      EXPECT_EQ(run.resumed.summary, whole.summary) << name;
      EXPECT_EQ(run.resumed.events, whole.events) << name;
      EXPECT_EQ(run.resumed.instances, whole.instances) << name;
    }
  }
  EXPECT_GE(mid_day, 8);
}

TEST(Protocol, RescheduleAndEmptyMessageTasks) {
  auto r = run_task_protocol(default_suite(), {preset("h1"), preset("p2"), preset("p1")}, Config{}, bundled_scripts(), 3);
  auto outcome = [&](const std::string& who, const std::string& task) {
    for (const auto& l : r.logs) {
      if (l.respondent_id == who && l.task_id == task) return l.outcome;
    }
    ADD_FAILURE() << who << " " << task;
    return metrics::TaskOutcome::not_completed;
  };
  EXPECT_EQ(outcome("h1", "T10"), metrics::TaskOutcome::success);
  EXPECT_EQ(outcome("p2", "T10"), metrics::TaskOutcome::not_completed);
  EXPECT_EQ(outcome("p1", "T14"), metrics::TaskOutcome::completed_with_error);
  EXPECT_EQ(outcome("h1", "T14"), metrics::TaskOutcome::success);
  EXPECT_EQ(fired_times(r.events, "training#1", "h1").front(), on(15));
  EXPECT_EQ(fired_times(r.events, "training#1", "p2").front(), on(14));
  for (const auto& l : r.logs) {
    EXPECT_EQ(l.duration_seconds.has_value(), l.outcome != metrics::TaskOutcome::not_completed);
  }
}

TEST(Protocol, CohortCoversEveryEndpointAndNodeKind) {
  auto r = run_task_protocol(default_suite(), cohort(), Config{}, bundled_scripts(), 1);
  EXPECT_TRUE(r.coverage.all_endpoints());
  EXPECT_TRUE(r.coverage.all_node_kinds());
  EXPECT_EQ(r.logs.size(), 9u * 15u);
  EXPECT_EQ(r.groups.size(), 9u);
  auto stats = metrics::task_stats(r.logs, r.groups);
  int notable = 0;
  for (const auto& s : stats) notable += s.notable_gap;
  EXPECT_GE(notable, 1);
  // Assisted respondents succeed with input on their task.
  for (const auto& l : r.logs) {
    if ((l.respondent_id == "p3" && l.task_id == "T7") || (l.respondent_id == "p4" && l.task_id == "T5")) {
      EXPECT_EQ(l.outcome, metrics::TaskOutcome::success_with_input);
    }
  }
  EXPECT_EQ(r.logs, run_task_protocol(default_suite(), cohort(), Config{}, bundled_scripts(), 1, Rational{1000}).logs);
}

TEST(Protocol, RejectsDuplicateRespondentsAndTasksWithoutPredicate) {
  EXPECT_THROW(run_task_protocol(default_suite(), {preset("h1"), preset("h1")}, Config{}, bundled_scripts(), 1), SimError);
  TaskDefinition broken{"T1", "no predicate", std::nullopt, std::nullopt, {}};
  EXPECT_THROW(run_task_protocol({broken}, {preset("h1")}, Config{}, bundled_scripts(), 1), UnknownTask);
}

TEST(Responses, SyntheticAnswersAreValidAndSeeded) {
  auto a = synthetic_responses(cohort(), 4);
  ASSERT_EQ(a.size(), 9u);
  for (const auto& r : a) EXPECT_NO_THROW(metrics::mauq_scores(r));
  EXPECT_EQ(a, synthetic_responses(cohort(), 4));
  EXPECT_NE(a, synthetic_responses(cohort(), 5));
}
