#pragma once

#include <chrono>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rehabcoach/time.hpp"
#include "rehabcoach/value.hpp"

namespace rehabcoach::script {

// ---------------------------------------------------------------------------
// Errors

class ScriptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SyntaxError : public ScriptError {
 public:
  SyntaxError(std::size_t line, std::string reason);
  std::size_t line() const { return line_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t line_;
  std::string reason_;
};

class DanglingReference : public ScriptError {
 public:
  explicit DanglingReference(std::string node_id);
  const std::string& node_id() const { return node_id_; }

 private:
  std::string node_id_;
};

class DuplicateNodeId : public ScriptError {
 public:
  explicit DuplicateNodeId(std::string node_id);
  const std::string& node_id() const { return node_id_; }

 private:
  std::string node_id_;
};

class UnboundPlaceholder : public ScriptError {
 public:
  explicit UnboundPlaceholder(std::string name);
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

// ---------------------------------------------------------------------------
// Nodes

enum class NodeKind {
  coach_message,
  choice_question,
  free_text_prompt,
  set_variable,
  branch,
  schedule_directive,
  end_interaction,
};

std::string_view to_string(NodeKind kind);

struct CoachMessage {
  std::string text;
  std::string next;
  friend bool operator==(const CoachMessage&, const CoachMessage&) = default;
};

struct ChoiceOption {
  std::string label;
  Value value;
  std::string next;
  friend bool operator==(const ChoiceOption&, const ChoiceOption&) = default;
};

struct ChoiceQuestion {
  std::string prompt;
  std::vector<ChoiceOption> options;
  std::string variable;
  /// Answer is reported in the daily summary.
  bool feedback = false;
  friend bool operator==(const ChoiceQuestion&, const ChoiceQuestion&) = default;
};

struct FreeTextPrompt {
  std::string prompt;
  std::string variable;
  std::string next;
  bool feedback = false;
  friend bool operator==(const FreeTextPrompt&, const FreeTextPrompt&) = default;
};

struct SetVariable {
  std::string variable;
  Value value;
  std::string next;
  friend bool operator==(const SetVariable&, const SetVariable&) = default;
};

struct BranchCase {
  Value equals;
  std::string next;
  friend bool operator==(const BranchCase&, const BranchCase&) = default;
};

struct Branch {
  std::string variable;
  std::vector<BranchCase> cases;
  std::string otherwise;
  friend bool operator==(const Branch&, const Branch&) = default;
};

/// Where a schedule directive takes its time from.
struct TimeFromVariable {
  std::string variable;
  friend bool operator==(const TimeFromVariable&, const TimeFromVariable&) = default;
};
struct TimeOffset {
  std::chrono::minutes offset;
  friend bool operator==(const TimeOffset&, const TimeOffset&) = default;
};
using TimeSource = std::variant<ClockTime, TimeFromVariable, TimeOffset>;

/// Target name of a directive that reschedules the running interaction
/// itself (a postponement).
inline constexpr std::string_view kSelfTarget = "self";

struct ScheduleDirective {
  /// Plan slot name ("training#1", "learning", ...) or kSelfTarget.
  std::string target;
  TimeSource time;
  std::string next;
  bool targets_self() const { return target == kSelfTarget; }
  friend bool operator==(const ScheduleDirective&, const ScheduleDirective&) = default;
};

struct EndInteraction {
  friend bool operator==(const EndInteraction&, const EndInteraction&) = default;
};

using NodeBody = std::variant<CoachMessage, ChoiceQuestion, FreeTextPrompt, SetVariable, Branch,
                              ScheduleDirective, EndInteraction>;

struct ScriptNode {
  std::string id;
  NodeBody body;

  NodeKind kind() const { return static_cast<NodeKind>(body.index()); }
  bool is_wait_point() const {
    return kind() == NodeKind::choice_question || kind() == NodeKind::free_text_prompt;
  }
  /// Successor ids in a fixed order (options / cases first, then defaults).
  std::vector<std::string> successors() const;

  friend bool operator==(const ScriptNode&, const ScriptNode&) = default;
};

// ---------------------------------------------------------------------------
// Scripts

enum class TriggerKind { first_app_open, fixed_daily_time, planned_time, user_initiated };

struct Trigger {
  TriggerKind kind = TriggerKind::user_initiated;
  ClockTime time{};  // fixed_daily_time
  std::string slot;  // planned_time
  friend bool operator==(const Trigger&, const Trigger&) = default;
};

inline constexpr int kDefaultTimeoutMinutes = 10;

struct InteractionScript {
  std::string script_id;
  Trigger trigger;
  std::string entry;
  std::vector<ScriptNode> nodes;  // document order
  /// Variables supplied by the caller at start, beyond the profile fields.
  std::vector<std::string> inputs;
  std::optional<int> timeout_minutes;
  /// Re-prompt on empty free text instead of accepting it with an anomaly.
  bool strict_empty_input = false;

  const ScriptNode* find(std::string_view node_id) const;
  const ScriptNode& node(std::string_view node_id) const;
  int effective_timeout(int fallback = kDefaultTimeoutMinutes) const {
    return timeout_minutes.value_or(fallback);
  }

  friend bool operator==(const InteractionScript& a, const InteractionScript& b) {
    return a.script_id == b.script_id && a.trigger == b.trigger && a.entry == b.entry &&
           a.nodes == b.nodes && a.inputs == b.inputs && a.timeout_minutes == b.timeout_minutes &&
           a.strict_empty_input == b.strict_empty_input;
  }
};

/// Variables every user profile provides to every script.
const std::vector<std::string>& profile_variables();

/// Parses a JSON script document. Throws SyntaxError, DanglingReference or
/// DuplicateNodeId.
InteractionScript parse_script(std::string_view document);

/// Inverse of parse_script (pretty-printed JSON).
std::string serialize_script(const InteractionScript& script);

enum class Severity { error, warning };

struct Diagnostic {
  Severity severity;
  std::string node_id;
  std::string message;
  friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

/// Static checks. An empty result means the script is fully linked, every
/// node is reachable, the graph is acyclic (so every run ends), every
/// ChoiceQuestion has at least two options and every variable read is
/// written on all paths before the read.
std::vector<Diagnostic> validate(const InteractionScript& script);

/// Placeholders referenced by a template, in order of appearance.
std::vector<std::string> placeholders(std::string_view text);

/// Substitutes `{name}` placeholders; `{{` and `}}` produce literal braces.
std::string render_template(std::string_view text, const Bindings& bindings);

/// Scripts keyed by script_id.
using ScriptLibrary = std::map<std::string, InteractionScript, std::less<>>;

/// Loads every *.json file of a directory. Throws on any parse error.
ScriptLibrary load_library(const std::string& directory);

}  // namespace rehabcoach::script
