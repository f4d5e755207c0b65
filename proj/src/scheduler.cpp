#include "rehabcoach/scheduler.hpp"

#include <algorithm>
#include <charconv>
#include <tuple>

#include <fmt/format.h>

namespace rehabcoach::scheduler {

std::string_view to_string(SlotSource s) {
  switch (s) {
    case SlotSource::fixed: return "fixed";
    case SlotSource::user_chosen: return "user_chosen";
    case SlotSource::defaulted: return "default";
    case SlotSource::postponed: return "postponed";
  }
  return "unknown";
}

std::string_view to_string(SlotState s) {
  switch (s) {
    case SlotState::scheduled: return "scheduled";
    case SlotState::fired: return "fired";
    case SlotState::done: return "done";
    case SlotState::missed: return "missed";
  }
  return "unknown";
}

SlotSource source_from_string(std::string_view s) {
  for (auto v : {SlotSource::fixed, SlotSource::user_chosen, SlotSource::defaulted, SlotSource::postponed}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument(fmt::format("unknown slot source '{}'", s));
}

SlotState state_from_string(std::string_view s) {
  for (auto v : {SlotState::scheduled, SlotState::fired, SlotState::done, SlotState::missed}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument(fmt::format("unknown slot state '{}'", s));
}

std::string training_slot(int k) { return fmt::format("training#{}", k); }

std::optional<int> training_index(std::string_view slot) {
  constexpr std::string_view prefix = "training#";
  if (!slot.starts_with(prefix)) return std::nullopt;
  auto digits = slot.substr(prefix.size());
  int k = 0;
  auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
  if (ec != std::errc{} || p != digits.data() + digits.size() || k < 1) return std::nullopt;
  return k;
}

bool is_fixed_slot(std::string_view slot) { return slot == kPlanningSlot || slot == kSummarySlot; }

const PlanSlot* DailyPlan::find(std::string_view name) const {
  auto it = std::find_if(slots.begin(), slots.end(), [&](const PlanSlot& s) { return s.name == name; });
  return it == slots.end() ? nullptr : &*it;
}

PlanSlot* DailyPlan::find(std::string_view name) {
  return const_cast<PlanSlot*>(std::as_const(*this).find(name));
}

void sort_slots(DailyPlan& plan) {
  std::stable_sort(plan.slots.begin(), plan.slots.end(), [](const PlanSlot& a, const PlanSlot& b) {
    return std::tie(a.time, a.name) < std::tie(b.time, b.name);
  });
}

namespace {

void check_window(ClockTime t, const Config& config, std::string_view what) {
  if (t <= config.planning_time || t > config.last_session_start) {
    throw InvalidPlanTime(fmt::format("{} {} outside {}-{}", what, t.str(), config.planning_time.str(),
                                      config.last_session_start.str()));
  }
}

std::optional<ClockTime> chosen_time(const Bindings& b, const std::string& key) {
  auto it = b.find(key);
  if (it == b.end()) return std::nullopt;
  if (const auto* t = std::get_if<ClockTime>(&it->second)) return *t;
  throw InvalidPlanTime(fmt::format("{} is not a clock time", key));
}

}  // namespace

DailyPlan plan_day(const std::string& user_id, Date date, const std::optional<Bindings>& outcome,
                   const Config& config) {
  DailyPlan plan{user_id, date, {}};
  plan.slots.push_back({std::string(kPlanningSlot), config.planning_time, SlotSource::fixed, SlotState::scheduled});
  plan.slots.push_back({std::string(kSummarySlot), config.summary_time, SlotSource::fixed, SlotState::scheduled});

  int sessions = std::clamp(1, config.min_sessions, config.max_sessions);
  if (outcome) {
    if (auto it = outcome->find("n_sessions"); it != outcome->end()) {
      const auto* n = std::get_if<std::int64_t>(&it->second);
      if (n == nullptr || *n < config.min_sessions || *n > config.max_sessions) {
        throw InvalidPlanTime(fmt::format("n_sessions must be within {}-{}", config.min_sessions, config.max_sessions));
      }
      sessions = static_cast<int>(*n);
    }
  }
  for (int k = 1; k <= sessions; ++k) {
    std::string key = k == 1 ? "training_time" : fmt::format("training_time_{}", k);
    auto t = outcome ? chosen_time(*outcome, key) : std::nullopt;
    if (t) check_window(*t, config, key);
    plan.slots.push_back({training_slot(k), t.value_or(config.default_training_times.at(k - 1)),
                          t ? SlotSource::user_chosen : SlotSource::defaulted, SlotState::scheduled});
  }
  auto lt = outcome ? chosen_time(*outcome, "learning_time") : std::nullopt;
  if (lt) check_window(*lt, config, "learning_time");
  plan.slots.push_back({std::string(kLearningSlot), lt.value_or(config.default_learning_time),
                        lt ? SlotSource::user_chosen : SlotSource::defaulted, SlotState::scheduled});
  sort_slots(plan);
  return plan;
}

std::vector<DueSlot> next_due(std::span<const DailyPlan> plans, VirtualTime now) {
  std::vector<DueSlot> out;
  for (const auto& plan : plans) {
    for (const auto& slot : plan.slots) {
      VirtualTime due = at(plan.date, slot.time);
      if (slot.state == SlotState::scheduled && due <= now) out.push_back({plan.user_id, plan.date, slot, due});
    }
  }
  std::sort(out.begin(), out.end(), [](const DueSlot& a, const DueSlot& b) {
    return std::tie(a.due_at, a.user_id, a.slot.name) < std::tie(b.due_at, b.user_id, b.slot.name);
  });
  return out;
}

Applied apply_directive(const DailyPlan& plan, const Directive& d, VirtualTime now, const Config& config) {
  DailyPlan next = plan;
  const bool today = date_of(now) == plan.date;
  const ClockTime now_clock = today ? clock_of(now) : ClockTime{};
  if (date_of(now) > plan.date) throw InvalidPlanTime("plan date " + format_date(plan.date) + " is over");

  if (d.kind == DirectiveKind::spontaneous) {
    check_window(now_clock, config, "spontaneous session");
    int k = 1;
    for (const auto& s : next.slots) {
      if (auto idx = training_index(s.name)) k = std::max(k, *idx + 1);
    }
    std::string name = training_slot(k);
    next.slots.push_back({name, now_clock, SlotSource::user_chosen, SlotState::scheduled});
    sort_slots(next);
    return {std::move(next), name};
  }

  if (is_fixed_slot(d.target)) throw UnknownSlot(d.target);
  auto idx = training_index(d.target);
  if (d.target != kLearningSlot && !idx) throw UnknownSlot(d.target);
  check_window(d.time, config, d.target);
  if (today && d.time <= now_clock) {
    throw InvalidPlanTime(fmt::format("{} {} is not after {}", d.target, d.time.str(), now_clock.str()));
  }

  PlanSlot* slot = next.find(d.target);
  if (d.kind == DirectiveKind::postpone) {
    if (slot == nullptr) throw UnknownSlot(d.target);
    if (slot->state == SlotState::done || slot->state == SlotState::missed) {
      throw InvalidPlanTime(d.target + " has already ended");
    }
    slot->time = d.time;
    slot->source = SlotSource::postponed;
    slot->state = SlotState::scheduled;
  } else if (slot != nullptr) {
    if (slot->state != SlotState::scheduled) throw InvalidPlanTime(d.target + " has already fired");
    slot->time = d.time;
    slot->source = SlotSource::user_chosen;
  } else {
    if (idx && *idx > config.max_sessions) throw UnknownSlot(d.target);
    next.slots.push_back({d.target, d.time, SlotSource::user_chosen, SlotState::scheduled});
  }
  sort_slots(next);
  return {std::move(next), d.target};
}

// ---------------------------------------------------------------------------

VirtualTime clock_now(const VirtualClock& clock, RealTime real_now) {
  if (real_now < clock.anchor_real) throw ClockRegression();
  if (clock.scale <= 0) throw SchedulerError("clock scale must be positive");
  using i128 = __int128;
  i128 delta_ns = (real_now - clock.anchor_real).count();
  i128 num = delta_ns * clock.scale.numerator();
  i128 den = static_cast<i128>(clock.scale.denominator()) * 1'000'000;
  auto ms = static_cast<std::int64_t>(num / den);  // non-negative, so truncation floors
  return clock.anchor_virtual + std::chrono::milliseconds{ms};
}

RealTime real_time_for(const VirtualClock& clock, VirtualTime target) {
  if (target <= clock.anchor_virtual) return clock.anchor_real;
  using i128 = __int128;
  i128 delta_ms = (target - clock.anchor_virtual).count();
  i128 num = delta_ms * 1'000'000 * clock.scale.denominator();
  i128 den = clock.scale.numerator();
  auto ns = static_cast<std::int64_t>((num + den - 1) / den);
  return clock.anchor_real + std::chrono::nanoseconds{ns};
}

}  // namespace rehabcoach::scheduler
