#pragma once

#include <chrono>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rehabcoach/config.hpp"
#include "rehabcoach/time.hpp"
#include "rehabcoach/value.hpp"

namespace rehabcoach::scheduler {

class SchedulerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class InvalidPlanTime : public SchedulerError {
 public:
  using SchedulerError::SchedulerError;
};
class UnknownSlot : public SchedulerError {
 public:
  explicit UnknownSlot(const std::string& slot) : SchedulerError("unknown or immutable slot '" + slot + "'") {}
};
class ClockRegression : public SchedulerError {
 public:
  ClockRegression() : SchedulerError("real time precedes the clock anchor") {}
};

enum class SlotSource { fixed, user_chosen, defaulted, postponed };
enum class SlotState { scheduled, fired, done, missed };

std::string_view to_string(SlotSource s);
std::string_view to_string(SlotState s);
SlotSource source_from_string(std::string_view s);
SlotState state_from_string(std::string_view s);

inline constexpr std::string_view kPlanningSlot = "planning";
inline constexpr std::string_view kSummarySlot = "summary";
inline constexpr std::string_view kLearningSlot = "learning";

std::string training_slot(int k);
/// k for "training#k", nullopt for other names.
std::optional<int> training_index(std::string_view slot);
bool is_fixed_slot(std::string_view slot);

struct PlanSlot {
  std::string name;
  ClockTime time;
  SlotSource source = SlotSource::fixed;
  SlotState state = SlotState::scheduled;
  friend bool operator==(const PlanSlot&, const PlanSlot&) = default;
};

struct DailyPlan {
  std::string user_id;
  Date date;
  /// Ordered by (time, name).
  std::vector<PlanSlot> slots;

  const PlanSlot* find(std::string_view name) const;
  PlanSlot* find(std::string_view name);
  friend bool operator==(const DailyPlan&, const DailyPlan&) = default;
};

/// Re-establishes the (time, name) ordering.
void sort_slots(DailyPlan& plan);

/// Builds the day's plan. Planning-outcome variables: n_sessions (integer),
/// training_time, training_time_2, training_time_3, learning_time (clock
/// times). Missing values fall back to the configured defaults.
DailyPlan plan_day(const std::string& user_id, Date date, const std::optional<Bindings>& planning_outcome,
                   const Config& config);

struct DueSlot {
  std::string user_id;
  Date date;
  PlanSlot slot;
  VirtualTime due_at;
  friend bool operator==(const DueSlot&, const DueSlot&) = default;
};

/// Scheduled slots with time <= now, ordered by (time, user_id, slot name).
std::vector<DueSlot> next_due(std::span<const DailyPlan> plans, VirtualTime now);

enum class DirectiveKind { set, postpone, spontaneous };

struct Directive {
  DirectiveKind kind = DirectiveKind::set;
  std::string target;  // ignored for spontaneous
  ClockTime time;      // ignored for spontaneous (uses now)
};

struct Applied {
  DailyPlan plan;
  std::string slot;  // name of the slot touched
};

/// Applies a schedule change. Throws InvalidPlanTime or UnknownSlot.
Applied apply_directive(const DailyPlan& plan, const Directive& directive, VirtualTime now, const Config& config);

// ---------------------------------------------------------------------------

/// Real timestamps, kept at nanosecond resolution so scaled conversions
/// stay exact.
using RealTime = std::chrono::sys_time<std::chrono::nanoseconds>;

struct VirtualClock {
  RealTime anchor_real;
  VirtualTime anchor_virtual;
  Rational scale{1};
};

/// anchor_virtual + (real_now - anchor_real) * scale, floored to the
/// millisecond. Throws ClockRegression.
VirtualTime clock_now(const VirtualClock& clock, RealTime real_now);

/// Earliest real time at which clock_now() reaches `target`.
RealTime real_time_for(const VirtualClock& clock, VirtualTime target);

}  // namespace rehabcoach::scheduler
