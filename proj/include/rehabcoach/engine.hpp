#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rehabcoach/script.hpp"
#include "rehabcoach/time.hpp"
#include "rehabcoach/value.hpp"

namespace rehabcoach::engine {

class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ActiveInstanceExists : public EngineError {
 public:
  explicit ActiveInstanceExists(const std::string& user_id)
      : EngineError("user '" + user_id + "' already has an active interaction") {}
};
class NotAwaitingInput : public EngineError {
 public:
  NotAwaitingInput() : EngineError("interaction is not waiting for input") {}
};
class ChoiceOutOfRange : public EngineError {
 public:
  explicit ChoiceOutOfRange(std::size_t index)
      : EngineError("choice index " + std::to_string(index) + " out of range"), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};
class WrongAnswerKind : public EngineError {
 public:
  WrongAnswerKind() : EngineError("answer kind does not match the question") {}
};
class InstanceTerminal : public EngineError {
 public:
  InstanceTerminal() : EngineError("interaction has already ended") {}
};
class NotPostponable : public EngineError {
 public:
  explicit NotPostponable(const std::string& script_id)
      : EngineError("interaction '" + script_id + "' cannot be postponed here") {}
};
class InvalidTime : public EngineError {
 public:
  explicit InvalidTime(const std::string& what) : EngineError(what) {}
};
class UnknownInstance : public EngineError {
 public:
  explicit UnknownInstance(const std::string& id) : EngineError("unknown instance '" + id + "'") {}
};
class CorruptHistory : public EngineError {
 public:
  CorruptHistory(std::size_t position, const std::string& reason)
      : EngineError("corrupt history at " + std::to_string(position) + ": " + reason),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

enum class InstanceStatus { pending, active, completed, completed_with_anomaly, incomplete, postponed };
enum class Author { coach, user };
enum class InputMode { none, button, free_text };
enum class Anomaly { none, empty_input };

std::string_view to_string(InstanceStatus s);
std::string_view to_string(InputMode m);
InstanceStatus status_from_string(std::string_view s);
InputMode input_mode_from_string(std::string_view s);
bool is_terminal(InstanceStatus s);

struct TranscriptEntry {
  Author author = Author::coach;
  std::string body;
  InputMode input_mode = InputMode::none;
  Anomaly anomaly = Anomaly::none;
  VirtualTime at{};
  friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

struct InteractionInstance {
  std::string instance_id;
  std::string user_id;
  std::string script_id;
  std::optional<std::string> cursor;
  Bindings bindings;
  std::vector<TranscriptEntry> transcript;
  InstanceStatus status = InstanceStatus::pending;
  std::optional<VirtualTime> started_at;
  std::optional<VirtualTime> ended_at;
  std::optional<VirtualTime> awaiting_since;
  /// Set by a self-targeting schedule directive; the run then ends postponed.
  std::optional<ClockTime> postponed_to;
  /// Node ids in execution order.
  std::vector<std::string> trace;
  friend bool operator==(const InteractionInstance&, const InteractionInstance&) = default;

  bool awaiting_input() const { return status == InstanceStatus::active && awaiting_since.has_value(); }
  bool has_anomaly() const;
};

/// What the client needs to render a wait point.
struct InputRequest {
  InputMode mode = InputMode::none;
  std::vector<std::string> options;
  bool postponable = false;
  friend bool operator==(const InputRequest&, const InputRequest&) = default;
};

struct OutboundMessage {
  std::string instance_id;
  std::string script_id;
  std::string node_id;
  std::string text;
  InputRequest input;
  VirtualTime at{};
  friend bool operator==(const OutboundMessage&, const OutboundMessage&) = default;
};

/// A schedule change requested by a running script. Applied by the
/// scheduler, never by the engine.
struct DirectiveRequest {
  std::string target;  // slot name or script::kSelfTarget
  ClockTime time;
  bool postpone = false;
  friend bool operator==(const DirectiveRequest&, const DirectiveRequest&) = default;
};

struct StepOutput {
  std::vector<OutboundMessage> messages;
  std::vector<DirectiveRequest> directives;
  /// Set when the step moved the instance into a terminal state.
  std::optional<InstanceStatus> ended;
};

struct ChoiceAnswer {
  std::size_t index;
};
struct TextAnswer {
  std::string text;
};
using Answer = std::variant<ChoiceAnswer, TextAnswer>;

struct RunOptions {
  /// Applies to scripts that do not set timeout_minutes.
  int default_timeout_minutes = script::kDefaultTimeoutMinutes;
};

// Single-instance operations. Each validates before mutating, so a thrown
// error leaves the instance untouched.

StepOutput start(InteractionInstance& inst, const script::InteractionScript& script, VirtualTime now);
void check_answer(const InteractionInstance& inst, const script::InteractionScript& script,
                  const Answer& answer);
StepOutput submit_answer(InteractionInstance& inst, const script::InteractionScript& script,
                         const Answer& answer, VirtualTime now);
std::optional<InstanceStatus> tick(InteractionInstance& inst, const script::InteractionScript& script,
                                   VirtualTime now, const RunOptions& options = {});
void check_postpone(const InteractionInstance& inst, const script::InteractionScript& script,
                    ClockTime new_time, VirtualTime now);
StepOutput postpone(InteractionInstance& inst, const script::InteractionScript& script,
                    ClockTime new_time, VirtualTime now);

/// Deadline of the current wait point, if any.
std::optional<VirtualTime> timeout_deadline(const InteractionInstance& inst,
                                            const script::InteractionScript& script,
                                            const RunOptions& options = {});

/// True when the instance waits at a question offering a postponement.
bool at_postpone_point(const InteractionInstance& inst, const script::InteractionScript& script);

// ---------------------------------------------------------------------------
// History

struct StartEvent {
  std::string instance_id;
  std::string user_id;
  std::string script_id;
  Bindings seed;
};
struct AnswerEvent {
  Answer answer;
};
struct TimeoutEvent {};
struct PostponeEvent {
  ClockTime new_time;
};

struct EngineEvent {
  VirtualTime at{};
  std::variant<StartEvent, AnswerEvent, TimeoutEvent, PostponeEvent> body;
};

/// Rebuilds one instance from its input history. Throws CorruptHistory.
InteractionInstance replay(const script::ScriptLibrary& scripts, std::span<const EngineEvent> events,
                           const RunOptions& options = {});

// ---------------------------------------------------------------------------

/// Per-user executor: owns the user's instances and enforces at most one
/// active instance. Not thread-safe; callers serialize per user.
class Session {
 public:
  Session(std::string user_id, const script::ScriptLibrary& scripts, RunOptions options = {});

  struct Started {
    const InteractionInstance& instance;
    StepOutput output;
  };

  Started start_interaction(std::string instance_id, const script::InteractionScript& script,
                            Bindings seed, VirtualTime now);
  StepOutput submit_answer(const std::string& instance_id, const Answer& answer, VirtualTime now);
  std::optional<InstanceStatus> tick(const std::string& instance_id, VirtualTime now);
  StepOutput postpone(const std::string& instance_id, ClockTime new_time, VirtualTime now);

  void check_answer(const std::string& instance_id, const Answer& answer) const;
  void check_postpone(const std::string& instance_id, ClockTime new_time, VirtualTime now) const;

  const InteractionInstance& get(const std::string& instance_id) const;
  const InteractionInstance* find(const std::string& instance_id) const;
  /// The active instance, if any.
  const InteractionInstance* active() const;
  std::optional<VirtualTime> next_deadline() const;
  const script::InteractionScript& script_of(const InteractionInstance& inst) const;
  const std::map<std::string, InteractionInstance>& instances() const { return instances_; }
  const std::string& user_id() const { return user_id_; }

 private:
  InteractionInstance& mut(const std::string& instance_id);

  std::string user_id_;
  const script::ScriptLibrary* scripts_;
  RunOptions options_;
  std::map<std::string, InteractionInstance> instances_;
  std::optional<std::string> active_;
};

}  // namespace rehabcoach::engine
