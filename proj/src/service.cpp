#include "rehabcoach/service.hpp"

#include <algorithm>
#include <tuple>

#include <fmt/format.h>

namespace rehabcoach::service {

using nlohmann::json;
using scheduler::DailyPlan;
using scheduler::PlanSlot;
using scheduler::SlotSource;
using scheduler::SlotState;

// ---------------------------------------------------------------------------
// Value types

std::string_view to_string(Avatar a) { return a == Avatar::coach_a ? "coach_a" : "coach_b"; }

Avatar avatar_from_string(std::string_view s) {
  if (s == "coach_a") return Avatar::coach_a;
  if (s == "coach_b") return Avatar::coach_b;
  throw ValidationError("avatar", fmt::format("'{}' is not one of coach_a, coach_b", s));
}

json profile_to_json(const UserProfile& p) {
  return {{"user_id", p.user_id},
          {"name", p.name},
          {"can_type_on_phone", p.can_type_on_phone},
          {"can_walk", p.can_walk},
          {"avatar", std::string(to_string(p.avatar))},
          {"created_at", format_timestamp(p.created_at)}};
}

UserProfile profile_from_json(const json& j) {
  return {j.at("user_id").get<std::string>(),  j.at("name").get<std::string>(),
          j.at("can_type_on_phone").get<bool>(), j.at("can_walk").get<bool>(),
          avatar_from_string(j.at("avatar").get<std::string>()),
          parse_timestamp(j.at("created_at").get<std::string>())};
}

ProfileFields profile_fields_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("body", "must be a JSON object");
  ProfileFields f;
  auto text = [&](const char* key, std::optional<std::string>& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_string()) throw ValidationError(key, "must be a string");
    out = j[key].get<std::string>();
  };
  auto flag = [&](const char* key, std::optional<bool>& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_boolean()) throw ValidationError(key, "must be a boolean");
    out = j[key].get<bool>();
  };
  text("name", f.name);
  flag("can_type_on_phone", f.can_type_on_phone);
  flag("can_walk", f.can_walk);
  text("avatar", f.avatar);
  return f;
}

std::string_view to_string(LearnTopic t) {
  switch (t) {
    case LearnTopic::stroke: return "stroke";
    case LearnTopic::health: return "health";
    case LearnTopic::rehabilitation_importance: return "rehabilitation_importance";
  }
  return "unknown";
}

std::vector<LearnEntry> default_learn_catalog() {
  return {
      {"stroke-what-happens", "What happens in the brain during a stroke", LearnTopic::stroke,
       "https://example.org/learn/stroke-what-happens"},
      {"stroke-warning-signs", "Recognising the warning signs of a stroke", LearnTopic::stroke,
       "https://example.org/learn/stroke-warning-signs"},
      {"health-blood-pressure", "Blood pressure and secondary prevention", LearnTopic::health,
       "https://example.org/learn/health-blood-pressure"},
      {"health-active-day", "Staying active through the day", LearnTopic::health,
       "https://example.org/learn/health-active-day"},
      {"rehab-why-practice", "Why regular practice helps your arm and hand", LearnTopic::rehabilitation_importance,
       "https://example.org/learn/rehab-why-practice"},
      {"rehab-training-at-home", "Training on your own at home", LearnTopic::rehabilitation_importance,
       "https://example.org/learn/rehab-training-at-home"},
  };
}

json learn_entry_to_json(const LearnEntry& e) {
  return {{"entry_id", e.entry_id}, {"title", e.title}, {"topic", std::string(to_string(e.topic))}, {"uri", e.uri}};
}

std::string_view to_string(ChecklistStatus s) {
  switch (s) {
    case ChecklistStatus::open: return "open";
    case ChecklistStatus::done: return "done";
    case ChecklistStatus::missed: return "missed";
  }
  return "unknown";
}

json checklist_to_json(const std::vector<ChecklistItem>& items) {
  json out = json::array();
  for (const auto& i : items) {
    out.push_back({{"slot", i.slot_name}, {"label", i.label}, {"status", std::string(to_string(i.status))}});
  }
  return out;
}

json summary_to_json(const DailySummary& s) {
  json fb = json::array();
  for (const auto& f : s.feedback) fb.push_back({{"slot", f.slot}, {"variable", f.variable}, {"value", f.value}});
  return {{"date", format_date(s.date)},
          {"trainings_done", s.trainings_done},
          {"learnings_done", s.learnings_done},
          {"missed", s.missed},
          {"feedback", fb}};
}

json message_to_json(const ChatMessage& m) {
  return {{"seq", m.seq},
          {"instance_id", m.instance_id},
          {"script_id", m.script_id},
          {"node_id", m.node_id},
          {"text", m.text},
          {"at", format_timestamp(m.at)},
          {"input",
           {{"mode", std::string(engine::to_string(m.input.mode))},
            {"options", m.input.options},
            {"postponable", m.input.postponable}}}};
}

ChatMessage message_from_json(const json& j) {
  ChatMessage m;
  m.seq = j.value("seq", std::uint64_t{0});
  m.instance_id = j.at("instance_id").get<std::string>();
  m.script_id = j.at("script_id").get<std::string>();
  m.node_id = j.at("node_id").get<std::string>();
  m.text = j.at("text").get<std::string>();
  m.at = parse_timestamp(j.at("at").get<std::string>());
  const json& in = j.at("input");
  m.input.mode = engine::input_mode_from_string(in.at("mode").get<std::string>());
  m.input.options = in.at("options").get<std::vector<std::string>>();
  m.input.postponable = in.at("postponable").get<bool>();
  return m;
}

json answer_to_json(const AnswerRequest& a) {
  if (const auto* c = std::get_if<engine::ChoiceAnswer>(&a.body)) return {{"choice", c->index}};
  if (const auto* t = std::get_if<engine::TextAnswer>(&a.body)) return {{"text", t->text}};
  return {{"postpone_to", std::get<ClockTime>(a.body).str()}};
}

AnswerRequest answer_from_json(const json& j) {
  if (!j.is_object() || j.size() != 1) {
    throw ValidationError("answer", "expected exactly one of choice, text, postpone_to");
  }
  if (j.contains("choice")) {
    if (!j["choice"].is_number_unsigned()) throw ValidationError("choice", "must be a non-negative integer");
    return {engine::ChoiceAnswer{j["choice"].get<std::size_t>()}};
  }
  if (j.contains("text")) {
    if (!j["text"].is_string()) throw ValidationError("text", "must be a string");
    return {engine::TextAnswer{j["text"].get<std::string>()}};
  }
  if (j.contains("postpone_to") && j["postpone_to"].is_string()) {
    try {
      return {ClockTime::parse(j["postpone_to"].get<std::string>())};
    } catch (const TimeFormatError& e) {
      throw ValidationError("postpone_to", e.what());
    }
  }
  throw ValidationError("answer", "expected exactly one of choice, text, postpone_to");
}

std::vector<engine::EngineEvent> engine_history(std::span<const EventRecord> events, std::string_view instance_id) {
  std::vector<engine::EngineEvent> out;
  for (const auto& r : events) {
    if (!r.payload.is_object() || r.payload.value("instance_id", "") != instance_id) continue;
    switch (r.kind) {
      case EventKind::slot_fired:
        out.push_back({r.at, engine::StartEvent{std::string(instance_id), r.user_id,
                                                r.payload.at("script_id").get<std::string>(),
                                                bindings_from_json(r.payload.at("seed"))}});
        break;
      case EventKind::answer_in: {
        AnswerRequest a = answer_from_json(r.payload.at("answer"));
        if (const auto* t = std::get_if<ClockTime>(&a.body)) {
          out.push_back({r.at, engine::PostponeEvent{*t}});
        } else if (const auto* c = std::get_if<engine::ChoiceAnswer>(&a.body)) {
          out.push_back({r.at, engine::AnswerEvent{*c}});
        } else {
          out.push_back({r.at, engine::AnswerEvent{std::get<engine::TextAnswer>(a.body)}});
        }
        break;
      }
      case EventKind::timeout: out.push_back({r.at, engine::TimeoutEvent{}}); break;
      default: break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Folds over the event log

namespace {

bool is_session_slot(std::string_view slot) {
  return slot == scheduler::kLearningSlot || scheduler::training_index(slot).has_value();
}

std::string label_for(std::string_view slot, ClockTime time) {
  if (auto k = scheduler::training_index(slot)) return fmt::format("Training session {} ({})", *k, time.str());
  return fmt::format("Learning session ({})", time.str());
}

struct DayFold {
  struct Item {
    ClockTime time;
    ChecklistStatus status = ChecklistStatus::open;
  };
  std::map<std::string, Item> items;
  std::vector<FeedbackAnswer> feedback;
  bool summary_fired = false;
};

DayFold fold_day(std::span<const EventRecord> events, std::string_view user_id, Date date) {
  const std::string day = format_date(date);
  DayFold f;
  for (const auto& r : events) {
    if (r.user_id != user_id || !r.payload.is_object() || r.payload.value("date", "") != day) continue;
    switch (r.kind) {
      case EventKind::schedule_set:
        for (const auto& s : r.payload.at("slots")) {
          std::string name = s.at("slot").get<std::string>();
          if (!is_session_slot(name)) continue;
          auto state = scheduler::state_from_string(s.at("state").get<std::string>());
          f.items[name] = {ClockTime::parse(s.at("time").get<std::string>()),
                           state == SlotState::done     ? ChecklistStatus::done
                           : state == SlotState::missed ? ChecklistStatus::missed
                                                        : ChecklistStatus::open};
        }
        break;
      case EventKind::slot_done:
      case EventKind::slot_missed: {
        std::string name = r.payload.at("slot").get<std::string>();
        auto it = f.items.find(name);
        if (it != f.items.end()) {
          it->second.status = r.kind == EventKind::slot_done ? ChecklistStatus::done : ChecklistStatus::missed;
        }
        if (r.kind == EventKind::slot_done && r.payload.contains("feedback")) {
          for (auto fb = r.payload["feedback"].begin(); fb != r.payload["feedback"].end(); ++fb) {
            f.feedback.push_back({name, fb.key(), fb.value().get<std::string>()});
          }
        }
        break;
      }
      case EventKind::slot_fired:
        if (r.payload.at("slot") == scheduler::kSummarySlot) f.summary_fired = true;
        break;
      default: break;
    }
  }
  return f;
}

DailySummary summarize(const DayFold& f, Date date) {
  DailySummary s{date, 0, 0, 0, f.feedback};
  for (const auto& [name, item] : f.items) {
    if (item.status == ChecklistStatus::done) {
      (scheduler::training_index(name) ? s.trainings_done : s.learnings_done) += 1;
    } else if (item.status == ChecklistStatus::missed) {
      s.missed += 1;
    }
  }
  return s;
}

}  // namespace

std::vector<ChecklistItem> checklist_from_events(std::span<const EventRecord> events, std::string_view user_id,
                                                 Date date) {
  DayFold f = fold_day(events, user_id, date);
  std::vector<std::pair<ClockTime, std::string>> order;
  for (const auto& [name, item] : f.items) order.emplace_back(item.time, name);
  std::sort(order.begin(), order.end());
  std::vector<ChecklistItem> out;
  for (const auto& [time, name] : order) out.push_back({name, label_for(name, time), f.items[name].status});
  return out;
}

DailySummary summary_from_events(std::span<const EventRecord> events, std::string_view user_id, Date date) {
  DayFold f = fold_day(events, user_id, date);
  if (!f.summary_fired) throw SummaryNotDue();
  return summarize(f, date);
}

// ---------------------------------------------------------------------------
// Service

struct CoachService::UserState {
  UserState(std::string user_id, const script::ScriptLibrary& scripts, engine::RunOptions options)
      : id(user_id), session(std::move(user_id), scripts, options) {}

  std::string id;
  mutable std::mutex mutex;
  mutable std::condition_variable cv;
  UserProfile profile;
  std::map<Date, DailyPlan> plans;
  engine::Session session;
  std::map<std::string, SlotRef> instance_slot;
  std::uint64_t instance_count = 0;
  std::vector<ChatMessage> messages;
  VirtualTime processed{};
  Date last_planned{};
  std::deque<Pending> expected;
};

namespace {

constexpr std::string_view kWelcomeSlot = "welcome";
constexpr std::string_view kSpontaneousScript = "spontaneous_training";

bool valid_user_id(std::string_view id) {
  return !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '-';
  });
}

std::string script_for_slot(std::string_view slot) {
  if (scheduler::training_index(slot)) return "training";
  return std::string(slot);
}

json slot_json(const PlanSlot& s) {
  return {{"slot", s.name},
          {"time", s.time.str()},
          {"source", std::string(scheduler::to_string(s.source))},
          {"state", std::string(scheduler::to_string(s.state))}};
}

json schedule_payload(Date date, std::string_view reason, const std::vector<PlanSlot>& slots) {
  json j{{"date", format_date(date)}, {"reason", std::string(reason)}, {"slots", json::array()}};
  for (const auto& s : slots) j["slots"].push_back(slot_json(s));
  return j;
}

Bindings profile_bindings(const UserProfile& p) {
  return {{"name", p.name},
          {"can_type_on_phone", p.can_type_on_phone},
          {"can_walk", p.can_walk},
          {"avatar", std::string(to_string(p.avatar))}};
}

}  // namespace

CoachService::CoachService(Config config, script::ScriptLibrary scripts, EventLog& log,
                           std::vector<LearnEntry> catalog)
    : config_(std::move(config)), scripts_(std::move(scripts)), log_(log), catalog_(std::move(catalog)) {
  for (const char* required : {"welcome", "planning", "training", "learning", "summary", "spontaneous_training"}) {
    if (!scripts_.contains(std::string_view(required))) {
      throw ServiceError(fmt::format("script library lacks '{}'", required));
    }
  }
  if (catalog_.empty()) throw ServiceError("learn catalog is empty");
  recover();
}

CoachService::~CoachService() = default;

CoachService::UserState* CoachService::find_user(const std::string& user_id) const {
  std::shared_lock lock(users_mutex_);
  auto it = users_.find(user_id);
  return it == users_.end() ? nullptr : it->second.get();
}

CoachService::UserState& CoachService::user(const std::string& user_id) const {
  auto* u = find_user(user_id);
  if (u == nullptr) throw UnknownUser(user_id);
  return *u;
}

bool CoachService::has_user(const std::string& user_id) const { return find_user(user_id) != nullptr; }

std::vector<std::string> CoachService::users() const {
  std::shared_lock lock(users_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : users_) out.push_back(id);
  return out;
}

std::optional<UserProfile> CoachService::profile(const std::string& user_id) const {
  auto* u = find_user(user_id);
  if (u == nullptr) return std::nullopt;
  std::lock_guard lock(u->mutex);
  return u->profile;
}

std::optional<std::string> CoachService::owner_of(const std::string& instance_id) const {
  std::shared_lock lock(users_mutex_);
  auto it = instance_owner_.find(instance_id);
  if (it == instance_owner_.end()) return std::nullopt;
  return it->second;
}

std::optional<engine::InteractionInstance> CoachService::instance(const std::string& user_id,
                                                                  const std::string& instance_id) const {
  auto& u = user(user_id);
  std::lock_guard lock(u.mutex);
  const auto* inst = u.session.find(instance_id);
  if (inst == nullptr) return std::nullopt;
  return *inst;
}

std::optional<engine::InteractionInstance> CoachService::active_instance(const std::string& user_id) const {
  auto& u = user(user_id);
  std::lock_guard lock(u.mutex);
  const auto* inst = u.session.active();
  if (inst == nullptr) return std::nullopt;
  return *inst;
}

std::optional<DailyPlan> CoachService::plan(const std::string& user_id, Date date) const {
  auto& u = user(user_id);
  std::lock_guard lock(u.mutex);
  auto it = u.plans.find(date);
  if (it == u.plans.end()) return std::nullopt;
  return it->second;
}

std::optional<CoachService::InstanceSlot> CoachService::slot_for(const std::string& user_id,
                                                                 const std::string& instance_id) const {
  auto& u = user(user_id);
  std::lock_guard lock(u.mutex);
  auto it = u.instance_slot.find(instance_id);
  if (it == u.instance_slot.end()) return std::nullopt;
  InstanceSlot out{it->second.date, it->second.slot, std::nullopt};
  if (auto plan = u.plans.find(it->second.date); plan != u.plans.end()) {
    if (const auto* s = plan->second.find(it->second.slot)) out.current = *s;
  }
  return out;
}

std::map<std::string, engine::InteractionInstance> CoachService::instances(const std::string& user_id) const {
  auto& u = user(user_id);
  std::lock_guard lock(u.mutex);
  return u.session.instances();
}

// --- recording ------------------------------------------------------------

EventRecord CoachService::emit_input(UserState& u, VirtualTime at, EventKind kind, json payload) {
  EventRecord r = log_.append(u.id, at, kind, std::move(payload));
  apply(u, r.kind, r.payload, r.at, r.seq);
  return r;
}

void CoachService::emit_derived(UserState& u, VirtualTime at, EventKind kind, json payload) {
  if (!replaying_) {
    EventRecord r = log_.append(u.id, at, kind, std::move(payload));
    apply(u, r.kind, r.payload, r.at, r.seq);
    return;
  }
  // During recovery the record is already in the log (or lost in a crash).
  // State effects apply now; messages wait for their seq.
  u.expected.push_back({kind, payload, at});
  if (kind != EventKind::message_out) apply(u, kind, payload, at, 0);
}

void CoachService::apply(UserState& u, EventKind kind, const json& p, VirtualTime at, std::uint64_t seq) {
  u.processed = std::max(u.processed, at);
  switch (kind) {
    case EventKind::profile_updated: {
      u.profile = profile_from_json(p.at("profile"));
      if (!p.value("created", false)) break;
      Date today = date_of(at);
      u.last_planned = Date{std::chrono::sys_days{today} - std::chrono::days{1}};
      if (clock_of(at) < config_.planning_time) {
        auto first = scheduler::plan_day(u.id, today, std::nullopt, config_);
        emit_derived(u, at, EventKind::schedule_set, schedule_payload(today, "day_start", first.slots));
      } else {
        u.last_planned = today;
      }
      emit_derived(u, at, EventKind::slot_fired, fired_payload(u, today, std::string(kWelcomeSlot), "welcome"));
      break;
    }
    case EventKind::schedule_set: {
      Date date = parse_date(p.at("date").get<std::string>());
      auto& plan = u.plans.try_emplace(date, DailyPlan{u.id, date, {}}).first->second;
      for (const auto& s : p.at("slots")) {
        PlanSlot slot{s.at("slot").get<std::string>(), ClockTime::parse(s.at("time").get<std::string>()),
                      scheduler::source_from_string(s.at("source").get<std::string>()),
                      scheduler::state_from_string(s.at("state").get<std::string>())};
        if (auto* existing = plan.find(slot.name)) {
          *existing = slot;
        } else {
          plan.slots.push_back(slot);
        }
      }
      scheduler::sort_slots(plan);
      if (u.last_planned < date) u.last_planned = date;
      if (p.value("reason", "") == "spontaneous") {
        const std::string slot = p.at("slots").at(0).at("slot").get<std::string>();
        emit_derived(u, at, EventKind::slot_fired, fired_payload(u, date, slot, std::string(kSpontaneousScript)));
      }
      break;
    }
    case EventKind::slot_fired: {
      Date date = parse_date(p.at("date").get<std::string>());
      const std::string slot = p.at("slot").get<std::string>();
      const std::string id = p.at("instance_id").get<std::string>();
      const std::string script_id = p.at("script_id").get<std::string>();
      if (auto it = u.plans.find(date); it != u.plans.end()) {
        if (auto* s = it->second.find(slot)) s->state = SlotState::fired;
      }
      u.instance_slot[id] = {date, slot};
      ++u.instance_count;
      {
        std::unique_lock lock(users_mutex_);
        instance_owner_[id] = u.id;
      }
      auto script = scripts_.find(script_id);
      if (script == scripts_.end()) throw CorruptLog("unknown script '" + script_id + "'");
      auto started = u.session.start_interaction(id, script->second, bindings_from_json(p.at("seed")), at);
      derive(u, id, started.output, at);
      break;
    }
    case EventKind::answer_in: {
      const std::string id = p.at("instance_id").get<std::string>();
      AnswerRequest a = answer_from_json(p.at("answer"));
      engine::StepOutput out;
      if (const auto* t = std::get_if<ClockTime>(&a.body)) {
        out = u.session.postpone(id, *t, at);
      } else if (const auto* c = std::get_if<engine::ChoiceAnswer>(&a.body)) {
        out = u.session.submit_answer(id, *c, at);
      } else {
        out = u.session.submit_answer(id, std::get<engine::TextAnswer>(a.body), at);
      }
      derive(u, id, out, at);
      break;
    }
    case EventKind::timeout: {
      const std::string id = p.at("instance_id").get<std::string>();
      auto status = u.session.tick(id, at);
      if (!status) throw CorruptLog(fmt::format("timeout for '{}' before its deadline", id));
      engine::StepOutput out;
      out.ended = *status;
      derive(u, id, out, at);
      break;
    }
    case EventKind::slot_done:
    case EventKind::slot_missed: {
      Date date = parse_date(p.at("date").get<std::string>());
      if (auto it = u.plans.find(date); it != u.plans.end()) {
        if (auto* s = it->second.find(p.at("slot").get<std::string>())) {
          s->state = kind == EventKind::slot_done ? SlotState::done : SlotState::missed;
        }
      }
      break;
    }
    case EventKind::message_out: {
      ChatMessage m = message_from_json(p);
      m.seq = seq;
      u.messages.push_back(std::move(m));
      u.cv.notify_all();
      break;
    }
    case EventKind::checklist_snapshot: break;
  }
}

void CoachService::derive(UserState& u, const std::string& instance_id, const engine::StepOutput& out,
                          VirtualTime at) {
  const SlotRef ref = u.instance_slot.at(instance_id);
  const std::string date = format_date(ref.date);
  for (const auto& m : out.messages) {
    json j = message_to_json(ChatMessage{0, m.instance_id, m.script_id, m.node_id, m.text, m.input, m.at});
    j.erase("seq");
    emit_derived(u, at, EventKind::message_out, std::move(j));
  }
  for (const auto& d : out.directives) {
    scheduler::Directive dir{d.postpone ? scheduler::DirectiveKind::postpone : scheduler::DirectiveKind::set,
                             d.postpone ? ref.slot : d.target, d.time};
    auto plan = u.plans.find(ref.date);
    try {
      if (plan == u.plans.end()) throw scheduler::InvalidPlanTime("no plan for " + date);
      auto applied = scheduler::apply_directive(plan->second, dir, at, config_);
      emit_derived(u, at, EventKind::schedule_set,
                   schedule_payload(ref.date, d.postpone ? "postpone" : "directive",
                                    {*applied.plan.find(applied.slot)}));
    } catch (const scheduler::SchedulerError& e) {
      // A rejected postponement leaves the session unattended for the day.
      if (d.postpone) {
        emit_derived(u, at, EventKind::slot_missed,
                     {{"date", date}, {"slot", ref.slot}, {"instance_id", instance_id},
                      {"status", "postponed"}, {"reason", e.what()}});
      }
    }
  }
  if (!out.ended) return;
  const auto& inst = u.session.get(instance_id);
  json base{{"date", date}, {"slot", ref.slot}, {"instance_id", instance_id},
            {"status", std::string(engine::to_string(*out.ended))}};
  switch (*out.ended) {
    case engine::InstanceStatus::completed:
    case engine::InstanceStatus::completed_with_anomaly: {
      json feedback = json::object();
      for (const auto& n : u.session.script_of(inst).nodes) {
        std::string var;
        if (const auto* q = std::get_if<script::ChoiceQuestion>(&n.body); q && q->feedback) var = q->variable;
        if (const auto* t = std::get_if<script::FreeTextPrompt>(&n.body); t && t->feedback) var = t->variable;
        if (var.empty()) continue;
        if (auto it = inst.bindings.find(var); it != inst.bindings.end()) feedback[var] = display(it->second);
      }
      base["feedback"] = feedback;
      emit_derived(u, at, EventKind::slot_done, std::move(base));
      break;
    }
    case engine::InstanceStatus::incomplete:
      emit_derived(u, at, EventKind::slot_missed, std::move(base));
      break;
    default: break;
  }
}

void CoachService::recover() {
  auto records = log_.snapshot();
  if (records.empty()) return;
  replaying_ = true;
  try {
    for (const auto& r : records) {
      UserState* u = find_user(r.user_id);
      if (u == nullptr) {
        if (r.kind != EventKind::profile_updated || !r.payload.value("created", false)) {
          throw CorruptLog(fmt::format("record {} for unknown user '{}'", r.seq, r.user_id));
        }
        std::unique_lock lock(users_mutex_);
        u = users_
                .emplace(r.user_id, std::make_unique<UserState>(
                                        r.user_id, scripts_, engine::RunOptions{config_.timeout_minutes}))
                .first->second.get();
      }
      if (!u->expected.empty()) {
        const Pending& want = u->expected.front();
        if (want.kind != r.kind || want.payload != r.payload || want.at != r.at) {
          throw CorruptLog(fmt::format("record {} does not match the replayed {} record", r.seq, to_string(want.kind)));
        }
        if (r.kind == EventKind::message_out) apply(*u, r.kind, r.payload, r.at, r.seq);
        u->expected.pop_front();
        continue;
      }
      apply(*u, r.kind, r.payload, r.at, r.seq);
    }
  } catch (const CorruptLog&) {
    replaying_ = false;
    throw;
  } catch (const std::exception& e) {
    replaying_ = false;
    throw CorruptLog(std::string("replay failed: ") + e.what());
  }
  replaying_ = false;
  // Records whose input was logged but whose processing was cut short.
  for (auto& [_, u] : users_) {
    while (!u->expected.empty()) {
      Pending p = std::move(u->expected.front());
      u->expected.pop_front();
      EventRecord r = log_.append(u->id, p.at, p.kind, std::move(p.payload));
      if (r.kind == EventKind::message_out) apply(*u, r.kind, r.payload, r.at, r.seq);
    }
  }
}

// --- scheduling -------------------------------------------------------------

json CoachService::fired_payload(UserState& u, Date date, const std::string& slot,
                                 const std::string& script_id) const {
  std::string id = fmt::format("{}-{}", u.id, u.instance_count + 1);
  return {{"date", format_date(date)},
          {"slot", slot},
          {"instance_id", id},
          {"script_id", script_id},
          {"seed", bindings_to_json(seed_for(u, date, slot, script_id))}};
}

Bindings CoachService::seed_for(const UserState& u, Date date, const std::string& slot,
                                const std::string& script_id) const {
  Bindings b = profile_bindings(u.profile);
  b["date"] = format_date(date);
  b["slot"] = slot;
  if (auto it = u.plans.find(date); it != u.plans.end()) {
    if (const auto* s = it->second.find(slot)) b["session_time"] = s->time;
    if (const auto* s = it->second.find(scheduler::training_slot(1))) b["suggested_training_time"] = s->time;
  }
  const auto day_index = std::chrono::sys_days{date}.time_since_epoch().count();
  const auto& video = catalog_[static_cast<std::size_t>(day_index) % catalog_.size()];
  b["video_title"] = video.title;
  b["video_uri"] = video.uri;
  b["video_topic"] = std::string(to_string(video.topic));
  if (script_id == "summary") {
    auto records = log_.snapshot();
    DailySummary s = summarize(fold_day(records, u.id, date), date);
    b["trainings_done"] = std::int64_t{s.trainings_done};
    b["learnings_done"] = std::int64_t{s.learnings_done};
    b["missed"] = std::int64_t{s.missed};
  }
  return b;
}

void CoachService::roll_day(UserState& u, Date date, VirtualTime at) {
  for (auto& [d, plan] : u.plans) {
    if (!(d < date)) continue;
    for (const auto& s : plan.slots) {
      if (s.state == SlotState::scheduled) {
        emit_input(u, at, EventKind::slot_missed,
                   {{"date", format_date(d)}, {"slot", s.name}, {"status", "not_started"}, {"reason", "day ended"}});
      }
    }
  }
  auto plan = scheduler::plan_day(u.id, date, std::nullopt, config_);
  emit_input(u, at, EventKind::schedule_set, schedule_payload(date, "day_start", plan.slots));
}

namespace {

enum class Due { roll, timeout, slot };

struct NextEvent {
  VirtualTime at;
  Due what;
  Date date{};
  std::string slot;
};

}  // namespace

std::optional<VirtualTime> CoachService::next_event(const UserState& u) const {
  (void)u;
  return std::nullopt;
}

void CoachService::catch_up(UserState& u, VirtualTime now) {
  auto pick = [&]() -> std::optional<NextEvent> {
    std::optional<NextEvent> best;
    auto consider = [&](NextEvent e) {
      if (!best || std::tie(e.at, e.what) < std::tie(best->at, best->what)) best = std::move(e);
    };
    Date next = next_day(u.last_planned);
    consider({midnight(next), Due::roll, next, {}});
    if (auto deadline = u.session.next_deadline()) consider({*deadline, Due::timeout, {}, {}});
    if (u.session.active() == nullptr) {
      for (auto it = u.plans.lower_bound(Date{std::chrono::sys_days{u.last_planned} - std::chrono::days{1}});
           it != u.plans.end(); ++it) {
        for (const auto& s : it->second.slots) {
          if (s.state != SlotState::scheduled) continue;
          consider({std::max(at(it->first, s.time), u.processed), Due::slot, it->first, s.name});
          break;  // slots are sorted by time
        }
      }
    }
    return best;
  };
  while (true) {
    auto e = pick();
    if (!e || e->at > now) break;
    switch (e->what) {
      case Due::roll: roll_day(u, e->date, e->at); break;
      case Due::timeout: {
        const auto* inst = u.session.active();
        emit_input(u, e->at, EventKind::timeout,
                   {{"instance_id", inst->instance_id}, {"awaiting_since", format_timestamp(*inst->awaiting_since)}});
        break;
      }
      case Due::slot:
        emit_input(u, e->at, EventKind::slot_fired, fired_payload(u, e->date, e->slot, script_for_slot(e->slot)));
        break;
    }
  }
  u.processed = std::max(u.processed, now);
}

void CoachService::advance(VirtualTime now) {
  for (const auto& id : users()) {
    auto& u = user(id);
    std::lock_guard lock(u.mutex);
    catch_up(u, now);
  }
}

std::optional<VirtualTime> CoachService::next_wakeup() const {
  std::optional<VirtualTime> best;
  for (const auto& id : users()) {
    auto& u = user(id);
    std::lock_guard lock(u.mutex);
    auto consider = [&](VirtualTime t) {
      if (!best || t < *best) best = t;
    };
    consider(midnight(next_day(u.last_planned)));
    if (auto d = u.session.next_deadline()) consider(*d);
    if (u.session.active() == nullptr) {
      for (const auto& [date, plan] : u.plans) {
        for (const auto& s : plan.slots) {
          if (s.state == SlotState::scheduled) consider(std::max(at(date, s.time), u.processed));
        }
      }
    }
  }
  return best;
}

// --- operations -------------------------------------------------------------

UserProfile CoachService::create_or_update_profile(const std::string& user_id, const ProfileFields& f,
                                                   VirtualTime now) {
  if (!valid_user_id(user_id)) throw ValidationError("user_id", "must be 1-64 characters of [A-Za-z0-9_-]");
  if (f.name && f.name->empty()) throw ValidationError("name", "must not be empty");
  std::optional<Avatar> avatar;
  if (f.avatar) avatar = avatar_from_string(*f.avatar);

  UserState* u = find_user(user_id);
  bool created = false;
  if (u == nullptr) {
    if (!f.name) throw ValidationError("name", "required");
    if (!f.can_type_on_phone) throw ValidationError("can_type_on_phone", "required");
    if (!f.can_walk) throw ValidationError("can_walk", "required");
    std::unique_lock lock(users_mutex_);
    auto [it, inserted] = users_.try_emplace(
        user_id, std::make_unique<UserState>(user_id, scripts_, engine::RunOptions{config_.timeout_minutes}));
    u = it->second.get();
    created = inserted;
  }
  std::lock_guard lock(u->mutex);
  if (!created) catch_up(*u, now);
  UserProfile p = created ? UserProfile{user_id, {}, true, true, Avatar::coach_a, now} : u->profile;
  if (f.name) p.name = *f.name;
  if (f.can_type_on_phone) p.can_type_on_phone = *f.can_type_on_phone;
  if (f.can_walk) p.can_walk = *f.can_walk;
  if (avatar) p.avatar = *avatar;
  if (created) u->processed = now;
  emit_input(*u, now, EventKind::profile_updated, {{"profile", profile_to_json(p)}, {"created", created}});
  return u->profile;
}

Poll CoachService::poll_messages(const std::string& user_id, std::uint64_t cursor) const {
  auto& u = user(user_id);
  std::lock_guard lock(u.mutex);
  Poll out{{}, cursor};
  auto it = std::upper_bound(u.messages.begin(), u.messages.end(), cursor,
                             [](std::uint64_t c, const ChatMessage& m) { return c < m.seq; });
  out.messages.assign(it, u.messages.end());
  if (!out.messages.empty()) out.cursor = out.messages.back().seq;
  return out;
}

Poll CoachService::wait_messages(const std::string& user_id, std::uint64_t cursor,
                                 std::chrono::milliseconds timeout) const {
  auto& u = user(user_id);
  {
    std::unique_lock lock(u.mutex);
    u.cv.wait_for(lock, timeout, [&] { return !u.messages.empty() && u.messages.back().seq > cursor; });
  }
  return poll_messages(user_id, cursor);
}

AnswerAck CoachService::submit_answer(const std::string& user_id, const std::string& instance_id,
                                      const AnswerRequest& answer, VirtualTime now) {
  auto& u = user(user_id);
  std::lock_guard lock(u.mutex);
  catch_up(u, now);
  const auto& inst = u.session.get(instance_id);
  json payload{{"instance_id", instance_id}, {"answer", answer_to_json(answer)}};
  if (const auto* t = std::get_if<ClockTime>(&answer.body)) {
    u.session.check_postpone(instance_id, *t, now);
    const SlotRef& ref = u.instance_slot.at(instance_id);
    // Reject up front rather than accept a postponement the plan cannot hold.
    scheduler::apply_directive(u.plans.at(ref.date), {scheduler::DirectiveKind::postpone, ref.slot, *t}, now,
                               config_);
  } else {
    engine::Answer a = std::holds_alternative<engine::ChoiceAnswer>(answer.body)
                           ? engine::Answer{std::get<engine::ChoiceAnswer>(answer.body)}
                           : engine::Answer{std::get<engine::TextAnswer>(answer.body)};
    u.session.check_answer(instance_id, a);
  }
  payload["node_id"] = *inst.cursor;
  const std::size_t before = u.messages.size();
  emit_input(u, now, EventKind::answer_in, std::move(payload));
  AnswerAck ack{instance_id, u.session.get(instance_id).status, {}};
  ack.follow_up.assign(u.messages.begin() + static_cast<std::ptrdiff_t>(before), u.messages.end());
  // The answer may have freed the user for an interaction waiting behind it.
  catch_up(u, now);
  return ack;
}

AnswerAck CoachService::start_spontaneous_training(const std::string& user_id, VirtualTime now) {
  auto& u = user(user_id);
  std::lock_guard lock(u.mutex);
  catch_up(u, now);
  if (u.session.active() != nullptr) throw engine::ActiveInstanceExists(user_id);
  auto plan = u.plans.find(date_of(now));
  if (plan == u.plans.end()) throw scheduler::InvalidPlanTime("no plan for " + format_date(date_of(now)));
  auto applied = scheduler::apply_directive(plan->second, {scheduler::DirectiveKind::spontaneous, {}, {}}, now, config_);
  const std::size_t before = u.messages.size();
  emit_input(u, now, EventKind::schedule_set,
             schedule_payload(date_of(now), "spontaneous", {*applied.plan.find(applied.slot)}));
  std::string id = fmt::format("{}-{}", u.id, u.instance_count);
  AnswerAck ack{id, u.session.get(id).status, {}};
  ack.follow_up.assign(u.messages.begin() + static_cast<std::ptrdiff_t>(before), u.messages.end());
  return ack;
}

std::vector<ChecklistItem> CoachService::get_checklist(const std::string& user_id, Date date) const {
  user(user_id);
  auto records = log_.snapshot();
  return checklist_from_events(records, user_id, date);
}

std::vector<ChecklistItem> CoachService::view_checklist(const std::string& user_id, Date date, VirtualTime now) {
  auto& u = user(user_id);
  std::lock_guard lock(u.mutex);
  catch_up(u, now);
  auto records = log_.snapshot();
  auto items = checklist_from_events(records, user_id, date);
  emit_input(u, now, EventKind::checklist_snapshot, {{"date", format_date(date)}, {"items", checklist_to_json(items)}});
  return items;
}

DailySummary CoachService::get_summary(const std::string& user_id, Date date) const {
  user(user_id);
  auto records = log_.snapshot();
  return summary_from_events(records, user_id, date);
}

}  // namespace rehabcoach::service
