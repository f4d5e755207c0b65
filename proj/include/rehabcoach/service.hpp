#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rehabcoach/config.hpp"
#include "rehabcoach/engine.hpp"
#include "rehabcoach/event_log.hpp"
#include "rehabcoach/scheduler.hpp"
#include "rehabcoach/script.hpp"

namespace rehabcoach::service {

class ServiceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ValidationError : public ServiceError {
 public:
  ValidationError(std::string field, const std::string& reason)
      : ServiceError(field + ": " + reason), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};
class UnknownUser : public ServiceError {
 public:
  explicit UnknownUser(const std::string& user) : ServiceError("unknown user '" + user + "'") {}
};
class SummaryNotDue : public ServiceError {
 public:
  SummaryNotDue() : ServiceError("the summary interaction has not fired yet") {}
};

enum class Avatar { coach_a, coach_b };
std::string_view to_string(Avatar a);
Avatar avatar_from_string(std::string_view s);  // throws ValidationError("avatar")

struct UserProfile {
  std::string user_id;
  std::string name;
  bool can_type_on_phone = true;
  bool can_walk = true;
  Avatar avatar = Avatar::coach_a;
  VirtualTime created_at{};
  friend bool operator==(const UserProfile&, const UserProfile&) = default;
};

nlohmann::json profile_to_json(const UserProfile& p);
UserProfile profile_from_json(const nlohmann::json& j);

/// Partial update; unset fields keep their value. On creation, name and the
/// two ability flags are required.
struct ProfileFields {
  std::optional<std::string> name;
  std::optional<bool> can_type_on_phone;
  std::optional<bool> can_walk;
  std::optional<std::string> avatar;
};

/// Parses request JSON; throws ValidationError on wrongly typed fields.
ProfileFields profile_fields_from_json(const nlohmann::json& j);

enum class LearnTopic { stroke, health, rehabilitation_importance };
std::string_view to_string(LearnTopic t);

struct LearnEntry {
  std::string entry_id;
  std::string title;
  LearnTopic topic;
  std::string uri;
};

/// Placeholder catalog covering the three topics.
std::vector<LearnEntry> default_learn_catalog();
nlohmann::json learn_entry_to_json(const LearnEntry& e);

enum class ChecklistStatus { open, done, missed };
std::string_view to_string(ChecklistStatus s);

struct ChecklistItem {
  std::string slot_name;
  std::string label;
  ChecklistStatus status = ChecklistStatus::open;
  friend bool operator==(const ChecklistItem&, const ChecklistItem&) = default;
};
nlohmann::json checklist_to_json(const std::vector<ChecklistItem>& items);

struct FeedbackAnswer {
  std::string slot;
  std::string variable;
  std::string value;
  friend bool operator==(const FeedbackAnswer&, const FeedbackAnswer&) = default;
};

struct DailySummary {
  Date date;
  int trainings_done = 0;
  int learnings_done = 0;
  int missed = 0;
  std::vector<FeedbackAnswer> feedback;
  friend bool operator==(const DailySummary&, const DailySummary&) = default;
};
nlohmann::json summary_to_json(const DailySummary& s);

/// Checklist for one user and day, folded from the event log alone.
std::vector<ChecklistItem> checklist_from_events(std::span<const EventRecord> events, std::string_view user_id,
                                                 Date date);
/// Daily performance folded from the event log. Throws SummaryNotDue unless
/// the day's summary slot has fired.
DailySummary summary_from_events(std::span<const EventRecord> events, std::string_view user_id, Date date);

/// A coach message as delivered to clients (poll and stream).
struct ChatMessage {
  std::uint64_t seq = 0;
  std::string instance_id;
  std::string script_id;
  std::string node_id;
  std::string text;
  engine::InputRequest input;
  VirtualTime at{};
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};
nlohmann::json message_to_json(const ChatMessage& m);
ChatMessage message_from_json(const nlohmann::json& j);

/// Engine input history of one instance, extracted from service records
/// (slot_fired, answer_in, timeout). Feeds engine::replay.
std::vector<engine::EngineEvent> engine_history(std::span<const EventRecord> events, std::string_view instance_id);

struct Poll {
  std::vector<ChatMessage> messages;
  std::uint64_t cursor = 0;
};

struct AnswerAck {
  std::string instance_id;
  engine::InstanceStatus status;
  std::vector<ChatMessage> follow_up;
};

struct AnswerRequest {
  std::variant<engine::ChoiceAnswer, engine::TextAnswer, ClockTime> body;  // ClockTime = postpone
};
nlohmann::json answer_to_json(const AnswerRequest& a);
AnswerRequest answer_from_json(const nlohmann::json& j);  // throws ValidationError

/// The coaching service. Owns per-user state (profile, plans, engine
/// session, delivered messages); every change is first appended to the
/// event log and then applied, so the state can be rebuilt from the log.
///
/// Thread-safe. Operations on one user are serialized by that user's lock;
/// distinct users proceed concurrently. Every operation takes the virtual
/// time explicitly and first catches the user up to it (day rollover,
/// timeouts, due slots, in chronological order).
class CoachService {
 public:
  /// Rebuilds state from any records already in `log`, appending the
  /// derived records of an input whose processing was cut short.
  CoachService(Config config, script::ScriptLibrary scripts, EventLog& log,
               std::vector<LearnEntry> catalog = default_learn_catalog());
  ~CoachService();

  CoachService(const CoachService&) = delete;
  CoachService& operator=(const CoachService&) = delete;

  UserProfile create_or_update_profile(const std::string& user_id, const ProfileFields& fields, VirtualTime now);
  std::optional<UserProfile> profile(const std::string& user_id) const;
  bool has_user(const std::string& user_id) const;
  std::vector<std::string> users() const;

  Poll poll_messages(const std::string& user_id, std::uint64_t cursor) const;
  /// Blocks until a message with seq > cursor exists or the timeout passes.
  Poll wait_messages(const std::string& user_id, std::uint64_t cursor, std::chrono::milliseconds timeout) const;

  AnswerAck submit_answer(const std::string& user_id, const std::string& instance_id, const AnswerRequest& answer,
                          VirtualTime now);
  AnswerAck start_spontaneous_training(const std::string& user_id, VirtualTime now);

  std::vector<ChecklistItem> get_checklist(const std::string& user_id, Date date) const;
  /// get_checklist plus a checklist_snapshot record of what was shown.
  std::vector<ChecklistItem> view_checklist(const std::string& user_id, Date date, VirtualTime now);
  DailySummary get_summary(const std::string& user_id, Date date) const;
  const std::vector<LearnEntry>& learn_catalog() const { return catalog_; }

  /// Processes everything due up to `now` for every user.
  void advance(VirtualTime now);
  /// Earliest virtual time at which advance() would do something.
  std::optional<VirtualTime> next_wakeup() const;

  std::optional<std::string> owner_of(const std::string& instance_id) const;
  std::optional<engine::InteractionInstance> instance(const std::string& user_id, const std::string& instance_id) const;
  std::optional<engine::InteractionInstance> active_instance(const std::string& user_id) const;
  std::optional<scheduler::DailyPlan> plan(const std::string& user_id, Date date) const;
  /// Plan date and slot an instance was started for, with the slot's
  /// current state. The slot is absent for the welcome interaction.
  struct InstanceSlot {
    Date date;
    std::string slot;
    std::optional<scheduler::PlanSlot> current;
  };
  std::optional<InstanceSlot> slot_for(const std::string& user_id, const std::string& instance_id) const;
  /// Every instance of the user, keyed by instance id.
  std::map<std::string, engine::InteractionInstance> instances(const std::string& user_id) const;

  const Config& config() const { return config_; }
  const script::ScriptLibrary& scripts() const { return scripts_; }
  EventLog& log() { return log_; }

 private:
  struct SlotRef {
    Date date;
    std::string slot;
  };
  struct Pending {
    EventKind kind;
    nlohmann::json payload;
    VirtualTime at;
  };
  struct UserState;

  UserState& user(const std::string& user_id) const;
  UserState* find_user(const std::string& user_id) const;

  void catch_up(UserState& u, VirtualTime now);
  std::optional<VirtualTime> next_event(const UserState& u) const;
  void roll_day(UserState& u, Date date, VirtualTime at);
  nlohmann::json fired_payload(UserState& u, Date date, const std::string& slot, const std::string& script_id) const;
  Bindings seed_for(const UserState& u, Date date, const std::string& slot, const std::string& script_id) const;

  EventRecord emit_input(UserState& u, VirtualTime at, EventKind kind, nlohmann::json payload);
  void emit_derived(UserState& u, VirtualTime at, EventKind kind, nlohmann::json payload);
  void apply(UserState& u, EventKind kind, const nlohmann::json& payload, VirtualTime at, std::uint64_t seq);
  void derive(UserState& u, const std::string& instance_id, const engine::StepOutput& out, VirtualTime at);
  void recover();

  Config config_;
  script::ScriptLibrary scripts_;
  EventLog& log_;
  std::vector<LearnEntry> catalog_;

  mutable std::shared_mutex users_mutex_;
  std::map<std::string, std::unique_ptr<UserState>> users_;
  std::map<std::string, std::string> instance_owner_;
  bool replaying_ = false;
};

}  // namespace rehabcoach::service
