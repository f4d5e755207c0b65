#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rehabcoach/config.hpp"
#include "rehabcoach/metrics.hpp"
#include "rehabcoach/scheduler.hpp"
#include "rehabcoach/service.hpp"

namespace rehabcoach::sim {

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ServiceUnreachable : public SimError {
 public:
  using SimError::SimError;
};
/// The service rejected an action the protocol expected to succeed.
class ProtocolFailure : public SimError {
 public:
  using SimError::SimError;
};
class UnknownTask : public SimError {
 public:
  explicit UnknownTask(const std::string& id) : SimError("unknown task '" + id + "'") {}
};
class UnknownBehavior : public SimError {
 public:
  explicit UnknownBehavior(const std::string& name) : SimError("unknown behavior '" + name + "'") {}
};

// ---------------------------------------------------------------------------
// Behavior

/// Uniform over [lo, hi] virtual seconds; fixed when lo == hi.
struct Latency {
  double lo = 2.0;
  double hi = 2.0;
};

struct Choose {
  std::size_t index = 0;
};
struct Type {
  std::string text;
};
struct Silent {};
/// Postpones to the session's scheduled time plus `delta`.
struct Postpone {
  std::chrono::minutes delta{60};
};
/// Uniformly random option or text; silent with the given probability.
struct RandomAnswer {
  double silence = 0.0;
};
using Action = std::variant<Choose, Type, Silent, Postpone, RandomAnswer>;

enum class Condition { always, slot_not_postponed, slot_postponed };

struct Rule {
  /// "script/node", "script/*" or "*".
  std::string pattern;
  /// Rules without an action only add latency.
  std::optional<Action> action;
  Condition when = Condition::always;
  /// Restricts the rule to instances started for this plan slot.
  std::optional<std::string> slot;
  /// Added to the answer latency of every matching wait point.
  double extra_seconds = 0.0;
};

struct Resolved {
  Action action;
  double extra_seconds = 0.0;
};

struct BehaviorModel {
  std::string name;
  metrics::Group group = metrics::Group::healthcare_professional;
  Latency latency;
  double reading_seconds_per_char = 0.0;
  double typing_seconds_per_char = 0.0;
  /// Time to find and use an app section for a user-initiated action.
  Latency navigation{3.0, 3.0};
  /// Consulted before the protocol rules; the first matching rule with an
  /// action decides. Unmatched wait points get option 0 or "Fine, thanks".
  std::vector<Rule> rules;
  /// Tasks the respondent only completes with researcher input.
  std::set<std::string> assisted_tasks;
  /// Extra time spent on a task before the researcher's input helps.
  double assistance_seconds = 30.0;
};

/// compliant, non_responder, postponer, empty_input, random, p1-p4, h1-h5.
BehaviorModel preset(std::string_view name);
std::vector<std::string> preset_names();
/// The nine study respondents p1-p4 and h1-h5.
std::vector<BehaviorModel> cohort();

// ---------------------------------------------------------------------------
// Client surface

enum class Endpoint {
  create_user,
  update_profile,
  get_messages,
  submit_answer,
  train_now,
  get_checklist,
  get_summary,
  get_learn,
  stream,
};
std::string_view to_string(Endpoint e);  // "POST /users", ...
inline constexpr std::size_t kEndpointCount = 9;

struct Coverage {
  std::map<Endpoint, int> calls;
  std::set<script::NodeKind> node_kinds;
  bool all_endpoints() const { return calls.size() == kEndpointCount; }
  bool all_node_kinds() const { return node_kinds.size() == 7; }
};

/// The operations a client performs, as the HTTP API exposes them.
/// Records which endpoints were used.
class InProcessClient {
 public:
  explicit InProcessClient(service::CoachService& svc) : svc_(svc) {}

  service::UserProfile create_user(const std::string& user_id, const service::ProfileFields& f, VirtualTime now);
  service::UserProfile update_profile(const std::string& user_id, const service::ProfileFields& f, VirtualTime now);
  service::Poll get_messages(const std::string& user_id, std::uint64_t cursor, VirtualTime now);
  service::Poll stream(const std::string& user_id, std::uint64_t cursor, VirtualTime now);
  service::AnswerAck submit_answer(const std::string& user_id, const std::string& instance_id,
                                   const service::AnswerRequest& a, VirtualTime now);
  service::AnswerAck train_now(const std::string& user_id, VirtualTime now);
  std::vector<service::ChecklistItem> get_checklist(const std::string& user_id, Date date, VirtualTime now);
  service::DailySummary get_summary(const std::string& user_id, Date date, VirtualTime now);
  std::vector<service::LearnEntry> get_learn();

  const std::map<Endpoint, int>& calls() const { return calls_; }

 private:
  void hit(Endpoint e) { ++calls_[e]; }
  service::CoachService& svc_;
  std::map<Endpoint, int> calls_;
};

// ---------------------------------------------------------------------------
// Discrete-event driver

enum class ActionKind { create_profile, update_avatar, view_checklist, train_now, open_learn, read_summary };
std::string_view to_string(ActionKind k);

struct UserAction {
  VirtualTime cue;
  ActionKind kind;
  /// Task the action belongs to, for researcher assistance.
  std::optional<std::string> task_id;
};

struct Participant {
  std::string user_id;
  BehaviorModel behavior;
  service::ProfileFields profile;
  /// Ordered by cue.
  std::vector<UserAction> actions;
  /// Receive messages over the stream instead of polling.
  bool stream = false;
};

/// Drives a service with simulated users. Every step happens at a virtual
/// time; the matching real time on a clock of the given scale is computed
/// and mapped back, so results do not depend on the scale. Answer
/// latencies are derived from (seed, user, instance, node, attempt), which
/// makes the driver restartable from the service state alone.
class Simulation {
 public:
  struct Options {
    std::uint64_t seed = 1;
    Rational scale{1};
    VirtualTime start{};
    /// Sleep so that the run proceeds at the scaled wall-clock pace.
    bool realtime = false;
  };

  Simulation(service::CoachService& svc, std::vector<Participant> participants, Options options,
             std::vector<Rule> protocol = {});

  /// Processes every event up to and including `end`.
  void run_until(VirtualTime end);
  VirtualTime now() const { return now_; }
  const std::map<Endpoint, int>& calls() const { return client_.calls(); }
  /// Wall-clock time the run would take at the configured scale.
  std::chrono::nanoseconds simulated_real_elapsed() const;

 private:
  struct Pending {
    VirtualTime at;
    std::size_t participant;
    std::optional<std::size_t> action;  // index into actions, else an answer
  };
  struct Planned {
    VirtualTime at;
    Resolved choice;
    std::string instance_id;
    std::string node_id;
  };
  std::optional<Pending> next_agent_step() const;
  std::optional<Planned> planned_answer(std::size_t participant) const;
  VirtualTime action_time(std::size_t participant, std::size_t action) const;
  void perform(const Pending& p);
  void perform_action(Participant& part, const UserAction& a, VirtualTime t);
  void answer(std::size_t participant, const Planned& plan);
  void receive(std::size_t participant);
  VirtualTime quantize(VirtualTime v) const;

  service::CoachService& svc_;
  InProcessClient client_;
  std::vector<Participant> participants_;
  Options options_;
  std::vector<Rule> protocol_;
  scheduler::VirtualClock clock_;
  VirtualTime now_;
  std::vector<std::size_t> next_action_;
  std::vector<std::uint64_t> cursors_;
  std::vector<std::vector<service::ChatMessage>> inbox_;
};

/// Action for a wait point: behavior rules first, then `protocol`, then the
/// fallback. Extra latency sums over every matching rule of both lists.
Resolved resolve_action(const BehaviorModel& b, std::span<const Rule> protocol, std::string_view script_id,
                        std::string_view node_id, const std::optional<std::string>& slot_name,
                        const std::optional<scheduler::PlanSlot>& slot);

/// Deterministic answer latency in milliseconds.
std::chrono::milliseconds answer_latency(const BehaviorModel& b, std::uint64_t seed, std::string_view user,
                                         std::string_view instance, std::string_view node, std::size_t attempt,
                                         std::size_t read_chars, std::size_t typed_chars, double extra_seconds);

// ---------------------------------------------------------------------------
// Runs

struct DayResult {
  std::vector<EventRecord> events;
  std::map<std::string, engine::InteractionInstance> instances;
  std::vector<service::ChecklistItem> checklist;
  std::optional<service::DailySummary> summary;
  Coverage coverage;
};

/// Default simulated day: profile at 07:30 on `date`, run to 20:00.
Date default_date();
service::ProfileFields default_profile(std::string_view name);

/// One user through one day. `log_dir`, when set, receives the log; a
/// directory that already holds records resumes the day after its last one.
DayResult run_day(const BehaviorModel& behavior, const Config& config, const script::ScriptLibrary& scripts,
                  Rational scale, std::uint64_t seed, const std::optional<std::filesystem::path>& log_dir = {},
                  bool realtime = false);

void write_day_outputs(const DayResult& r, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Task protocol

struct TaskResult {
  metrics::TaskOutcome outcome = metrics::TaskOutcome::not_completed;
  std::optional<double> duration_seconds;
};

struct TaskContext {
  std::span<const EventRecord> events;
  std::string user_id;
  Date date;
  /// The task's cue on `date`, for user-initiated tasks.
  std::optional<VirtualTime> cue;
};

struct TaskDefinition {
  std::string task_id;
  std::string description;
  /// Researcher cue for user-initiated tasks.
  std::optional<ClockTime> cue;
  std::optional<ActionKind> action;
  /// Pure function of the event log.
  std::function<TaskResult(const TaskContext&)> evaluate;
};

/// The fifteen protocol tasks T1-T15.
const std::vector<TaskDefinition>& default_suite();
const TaskDefinition& find_task(std::string_view task_id);  // throws UnknownTask

/// Protocol instructions given to every respondent; behavior rules take
/// precedence over them.
std::vector<Rule> protocol_rules();

struct ProtocolResult {
  std::vector<metrics::TaskLog> logs;
  metrics::GroupLabels groups;
  std::vector<EventRecord> events;
  Coverage coverage;
};

/// Runs the protocol day for each behavior (one user per behavior, all on
/// one service) and evaluates every task.
ProtocolResult run_task_protocol(const std::vector<TaskDefinition>& tasks, const std::vector<BehaviorModel>& behaviors,
                                 const Config& config, const script::ScriptLibrary& scripts, std::uint64_t seed,
                                 Rational scale = Rational{1});

/// Synthetic questionnaire answers for demonstrating the report pipeline.
/// Not study data: items are drawn around the favourable end of the scale
/// with occasional "I don't know".
std::vector<metrics::QuestionnaireResponse> synthetic_responses(const std::vector<BehaviorModel>& respondents,
                                                                std::uint64_t seed);

/// Node kinds executed by any instance.
std::set<script::NodeKind> executed_node_kinds(const service::CoachService& svc, const script::ScriptLibrary& scripts);

}  // namespace rehabcoach::sim
