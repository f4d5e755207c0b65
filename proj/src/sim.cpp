#include "rehabcoach/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <thread>

#include <boost/container_hash/hash.hpp>
#include <fmt/format.h>

namespace rehabcoach::sim {

using nlohmann::json;
using namespace std::chrono_literals;

namespace {

std::uint64_t mix(std::uint64_t seed, std::initializer_list<std::string_view> parts, std::size_t attempt) {
  std::size_t h = static_cast<std::size_t>(seed);
  for (auto p : parts) boost::hash_combine(h, boost::hash_range(p.begin(), p.end()));
  boost::hash_combine(h, attempt);
  return h;
}

double sample(const Latency& l, std::uint64_t key) {
  if (l.hi <= l.lo) return l.lo;
  std::mt19937_64 rng(key);
  return std::uniform_real_distribution<double>(l.lo, l.hi)(rng);
}

bool matches(std::string_view pattern, std::string_view script_id, std::string_view node_id) {
  if (pattern == "*") return true;
  auto slash = pattern.find('/');
  if (slash == std::string_view::npos) return false;
  if (pattern.substr(0, slash) != script_id) return false;
  auto node = pattern.substr(slash + 1);
  return node == "*" || node == node_id;
}

bool applies(const Rule& r, std::string_view script_id, std::string_view node_id,
             const std::optional<std::string>& slot_name, const std::optional<scheduler::PlanSlot>& slot) {
  if (!matches(r.pattern, script_id, node_id)) return false;
  if (r.slot && r.slot != slot_name) return false;
  const bool postponed = slot && slot->source == scheduler::SlotSource::postponed;
  switch (r.when) {
    case Condition::always: return true;
    case Condition::slot_not_postponed: return !postponed;
    case Condition::slot_postponed: return postponed;
  }
  return false;
}

const std::vector<std::string>& random_texts() {
  static const std::vector<std::string> texts{"Fine, thanks", "", "Tired today", "The exercises went well",
                                              "My arm feels stiff"};
  return texts;
}

constexpr std::string_view kFallbackText = "Fine, thanks";

}  // namespace

// ---------------------------------------------------------------------------
// Behavior presets

namespace {

BehaviorModel professional(std::string name) {
  BehaviorModel b;
  b.name = std::move(name);
  b.group = metrics::Group::healthcare_professional;
  b.latency = {2.0, 2.0};
  b.reading_seconds_per_char = 0.02;
  b.typing_seconds_per_char = 0.3;
  b.navigation = {3.0, 3.0};
  return b;
}

// Slower reading and typing, plus deliberation before postponing a session
// and while handling the learning section.
BehaviorModel patient(std::string name) {
  BehaviorModel b;
  b.name = std::move(name);
  b.group = metrics::Group::primary_user;
  b.latency = {3.0, 3.0};
  b.reading_seconds_per_char = 0.05;
  b.typing_seconds_per_char = 0.9;
  b.navigation = {5.0, 5.0};
  b.rules.push_back({"training/remind", std::nullopt, Condition::slot_not_postponed, "training#1", 15.0});
  b.rules.push_back({"learning/*", std::nullopt, Condition::always, std::nullopt, 6.0});
  return b;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"compliant", "non_responder", "postponer", "empty_input", "random", "p1", "p2",
          "p3",        "p4",            "h1",        "h2",          "h3",     "h4", "h5"};
}

BehaviorModel preset(std::string_view name) {
  if (name == "compliant") return professional("compliant");
  if (name == "non_responder") {
    auto b = professional("non_responder");
    b.rules.push_back({"*", Silent{}});
    return b;
  }
  if (name == "postponer") {
    auto b = professional("postponer");
    b.rules.push_back({"training/remind", Postpone{60min}, Condition::slot_not_postponed});
    b.rules.push_back({"learning/remind", Postpone{60min}, Condition::slot_not_postponed});
    return b;
  }
  if (name == "empty_input") {
    auto b = professional("empty_input");
    b.rules.push_back({"summary/ask_day", Type{""}});
    return b;
  }
  if (name == "random") {
    auto b = professional("random");
    b.latency = {1.0, 120.0};
    b.rules.push_back({"*", RandomAnswer{0.2}});
    return b;
  }
  if (name == "p1") {
    auto b = patient("p1");
    b.rules.insert(b.rules.begin(), Rule{"summary/ask_day", Type{""}});
    return b;
  }
  if (name == "p2") {
    auto b = patient("p2");
    b.rules.insert(b.rules.begin(), Rule{"planning/ask_time_1", Choose{0}});
    return b;
  }
  if (name == "p3") {
    auto b = patient("p3");
    b.assisted_tasks.insert("T7");
    return b;
  }
  if (name == "p4") {
    auto b = patient("p4");
    b.assisted_tasks.insert("T5");
    return b;
  }
  if (name.size() == 2 && name[0] == 'h' && name[1] >= '1' && name[1] <= '5') return professional(std::string(name));
  throw UnknownBehavior(std::string(name));
}

std::vector<BehaviorModel> cohort() {
  std::vector<BehaviorModel> out;
  for (auto n : {"p1", "p2", "p3", "p4", "h1", "h2", "h3", "h4", "h5"}) out.push_back(preset(n));
  return out;
}

Resolved resolve_action(const BehaviorModel& b, std::span<const Rule> protocol, std::string_view script_id,
                        std::string_view node_id, const std::optional<std::string>& slot_name,
                        const std::optional<scheduler::PlanSlot>& slot) {
  Resolved out{Choose{0}, 0.0};
  bool decided = false;
  for (auto rules : {std::span<const Rule>(b.rules), protocol}) {
    for (const auto& r : rules) {
      if (!applies(r, script_id, node_id, slot_name, slot)) continue;
      out.extra_seconds += r.extra_seconds;
      if (!decided && r.action) {
        out.action = *r.action;
        decided = true;
      }
    }
  }
  if (!decided) out.action = Type{std::string(kFallbackText)};  // refined by the caller per input mode
  return out;
}

std::chrono::milliseconds answer_latency(const BehaviorModel& b, std::uint64_t seed, std::string_view user,
                                         std::string_view instance, std::string_view node, std::size_t attempt,
                                         std::size_t read_chars, std::size_t typed_chars, double extra_seconds) {
  const double base = sample(b.latency, mix(seed, {user, instance, node, "latency"}, attempt));
  const double total = base + b.reading_seconds_per_char * static_cast<double>(read_chars) +
                       b.typing_seconds_per_char * static_cast<double>(typed_chars) + extra_seconds;
  return std::chrono::milliseconds{std::llround(std::max(0.0, total) * 1000.0)};
}

// ---------------------------------------------------------------------------
// Client

std::string_view to_string(Endpoint e) {
  switch (e) {
    case Endpoint::create_user: return "POST /users";
    case Endpoint::update_profile: return "PUT /users/{id}/profile";
    case Endpoint::get_messages: return "GET /users/{id}/messages";
    case Endpoint::submit_answer: return "POST /instances/{id}/answer";
    case Endpoint::train_now: return "POST /users/{id}/train-now";
    case Endpoint::get_checklist: return "GET /users/{id}/checklist";
    case Endpoint::get_summary: return "GET /users/{id}/summary";
    case Endpoint::get_learn: return "GET /learn";
    case Endpoint::stream: return "GET /users/{id}/stream";
  }
  return "?";
}

std::string_view to_string(ActionKind k) {
  switch (k) {
    case ActionKind::create_profile: return "create_profile";
    case ActionKind::update_avatar: return "update_avatar";
    case ActionKind::view_checklist: return "view_checklist";
    case ActionKind::train_now: return "train_now";
    case ActionKind::open_learn: return "open_learn";
    case ActionKind::read_summary: return "read_summary";
  }
  return "?";
}

service::UserProfile InProcessClient::create_user(const std::string& user_id, const service::ProfileFields& f,
                                                  VirtualTime now) {
  hit(Endpoint::create_user);
  return svc_.create_or_update_profile(user_id, f, now);
}

service::UserProfile InProcessClient::update_profile(const std::string& user_id, const service::ProfileFields& f,
                                                     VirtualTime now) {
  hit(Endpoint::update_profile);
  if (!svc_.has_user(user_id)) throw service::UnknownUser(user_id);
  return svc_.create_or_update_profile(user_id, f, now);
}

service::Poll InProcessClient::get_messages(const std::string& user_id, std::uint64_t cursor, VirtualTime now) {
  hit(Endpoint::get_messages);
  svc_.advance(now);
  return svc_.poll_messages(user_id, cursor);
}

service::Poll InProcessClient::stream(const std::string& user_id, std::uint64_t cursor, VirtualTime now) {
  hit(Endpoint::stream);
  svc_.advance(now);
  return svc_.wait_messages(user_id, cursor, 0ms);
}

service::AnswerAck InProcessClient::submit_answer(const std::string& user_id, const std::string& instance_id,
                                                  const service::AnswerRequest& a, VirtualTime now) {
  hit(Endpoint::submit_answer);
  return svc_.submit_answer(user_id, instance_id, a, now);
}

service::AnswerAck InProcessClient::train_now(const std::string& user_id, VirtualTime now) {
  hit(Endpoint::train_now);
  return svc_.start_spontaneous_training(user_id, now);
}

std::vector<service::ChecklistItem> InProcessClient::get_checklist(const std::string& user_id, Date date,
                                                                   VirtualTime now) {
  hit(Endpoint::get_checklist);
  return svc_.view_checklist(user_id, date, now);
}

service::DailySummary InProcessClient::get_summary(const std::string& user_id, Date date, VirtualTime now) {
  hit(Endpoint::get_summary);
  svc_.advance(now);
  return svc_.get_summary(user_id, date);
}

std::vector<service::LearnEntry> InProcessClient::get_learn() {
  hit(Endpoint::get_learn);
  return svc_.learn_catalog();
}

// ---------------------------------------------------------------------------
// Driver

Simulation::Simulation(service::CoachService& svc, std::vector<Participant> participants, Options options,
                       std::vector<Rule> protocol)
    : svc_(svc),
      client_(svc),
      participants_(std::move(participants)),
      options_(options),
      protocol_(std::move(protocol)),
      now_(options.start),
      next_action_(participants_.size(), 0),
      cursors_(participants_.size(), 0),
      inbox_(participants_.size()) {
  if (options_.scale <= 0) throw SimError("scale must be positive");
  clock_.anchor_virtual = options_.start;
  clock_.scale = options_.scale;
  clock_.anchor_real = options_.realtime
                           ? std::chrono::time_point_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now())
                           : scheduler::RealTime{};
  for (auto& p : participants_) {
    std::stable_sort(p.actions.begin(), p.actions.end(),
                     [](const UserAction& a, const UserAction& b) { return a.cue < b.cue; });
  }
  // Resuming over an existing log: actions already due are taken as done,
  // except profile creation, which the service state answers directly.
  for (std::size_t i = 0; i < participants_.size(); ++i) {
    auto& n = next_action_[i];
    const auto& acts = participants_[i].actions;
    while (n < acts.size() && action_time(i, n) < now_ &&
           (acts[n].kind != ActionKind::create_profile || svc_.has_user(participants_[i].user_id))) {
      ++n;
    }
  }
}

VirtualTime Simulation::quantize(VirtualTime v) const {
  if (v < clock_.anchor_virtual) return v;
  return scheduler::clock_now(clock_, scheduler::real_time_for(clock_, v));
}

std::chrono::nanoseconds Simulation::simulated_real_elapsed() const {
  return scheduler::real_time_for(clock_, now_) - clock_.anchor_real;
}

VirtualTime Simulation::action_time(std::size_t participant, std::size_t action) const {
  const auto& p = participants_[participant];
  const auto& a = p.actions[action];
  double seconds =
      sample(p.behavior.navigation, mix(options_.seed, {p.user_id, "action", to_string(a.kind)}, action));
  if (a.task_id && p.behavior.assisted_tasks.contains(*a.task_id)) seconds += p.behavior.assistance_seconds;
  return a.cue + std::chrono::milliseconds{std::llround(seconds * 1000.0)};
}

std::optional<Simulation::Planned> Simulation::planned_answer(std::size_t participant) const {
  const auto& p = participants_[participant];
  if (!svc_.has_user(p.user_id)) return std::nullopt;
  auto inst = svc_.active_instance(p.user_id);
  if (!inst || !inst->awaiting_input()) return std::nullopt;
  const auto& script = svc_.scripts().find(inst->script_id)->second;
  const auto& node = script.node(*inst->cursor);
  auto where = svc_.slot_for(p.user_id, inst->instance_id);
  std::optional<std::string> slot_name;
  std::optional<scheduler::PlanSlot> slot;
  if (where) {
    slot_name = where->slot;
    slot = where->current;
  }
  Resolved r = resolve_action(p.behavior, protocol_, inst->script_id, node.id, slot_name, slot);
  const auto* question = std::get_if<script::ChoiceQuestion>(&node.body);
  const std::size_t attempt = inst->transcript.size();

  if (const auto* rnd = std::get_if<RandomAnswer>(&r.action)) {
    std::mt19937_64 rng(mix(options_.seed, {p.user_id, inst->instance_id, node.id, "choice"}, attempt));
    if (std::bernoulli_distribution(rnd->silence)(rng)) return std::nullopt;
    if (question) {
      r.action = Choose{std::uniform_int_distribution<std::size_t>(0, question->options.size() - 1)(rng)};
    } else {
      const auto& texts = random_texts();
      r.action = Type{texts[std::uniform_int_distribution<std::size_t>(0, texts.size() - 1)(rng)]};
    }
  }
  if (std::holds_alternative<Silent>(r.action)) return std::nullopt;
  if (std::holds_alternative<Postpone>(r.action) && (!engine::at_postpone_point(*inst, script) || !slot)) {
    r.action = Choose{0};
  }
  // The fallback is written as text; a question takes the first option.
  if (question && std::holds_alternative<Type>(r.action)) r.action = Choose{0};
  if (!question && std::holds_alternative<Choose>(r.action)) r.action = Type{std::string(kFallbackText)};

  std::size_t read = 0;
  for (const auto& m : inbox_[participant]) {
    if (m.instance_id == inst->instance_id && m.at == *inst->awaiting_since) read += m.text.size();
  }
  std::size_t typed = 0;
  if (const auto* t = std::get_if<Type>(&r.action)) typed = t->text.size();
  auto latency = answer_latency(p.behavior, options_.seed, p.user_id, inst->instance_id, node.id, attempt, read,
                                typed, r.extra_seconds);
  VirtualTime at = *inst->awaiting_since + latency;
  auto deadline = engine::timeout_deadline(*inst, script, {svc_.config().timeout_minutes});
  if (deadline && at >= *deadline) return std::nullopt;  // too slow: the timeout wins
  return Planned{std::max(at, now_), std::move(r), inst->instance_id, node.id};
}

std::optional<Simulation::Pending> Simulation::next_agent_step() const {
  std::optional<Pending> best;
  auto consider = [&](Pending c) {
    if (!best || c.at < best->at) best = c;
  };
  for (std::size_t i = 0; i < participants_.size(); ++i) {
    if (next_action_[i] < participants_[i].actions.size()) {
      consider({std::max(action_time(i, next_action_[i]), now_), i, next_action_[i]});
    }
    if (auto a = planned_answer(i)) consider({a->at, i, std::nullopt});
  }
  return best;
}

void Simulation::receive(std::size_t participant) {
  const auto& p = participants_[participant];
  if (!svc_.has_user(p.user_id)) return;
  auto poll = p.stream ? client_.stream(p.user_id, cursors_[participant], now_)
                       : client_.get_messages(p.user_id, cursors_[participant], now_);
  cursors_[participant] = poll.cursor;
  auto& box = inbox_[participant];
  box.insert(box.end(), poll.messages.begin(), poll.messages.end());
}

void Simulation::perform_action(Participant& part, const UserAction& a, VirtualTime t) {
  const Date today = date_of(t);
  switch (a.kind) {
    case ActionKind::create_profile:
      if (!svc_.has_user(part.user_id)) client_.create_user(part.user_id, part.profile, t);
      break;
    case ActionKind::update_avatar: {
      service::ProfileFields f;
      f.avatar = "coach_b";
      client_.update_profile(part.user_id, f, t);
      break;
    }
    case ActionKind::view_checklist: client_.get_checklist(part.user_id, today, t); break;
    case ActionKind::train_now: client_.train_now(part.user_id, t); break;
    case ActionKind::open_learn: client_.get_learn(); break;
    case ActionKind::read_summary: client_.get_summary(part.user_id, today, t); break;
  }
}

void Simulation::answer(std::size_t participant, const Planned& plan) {
  auto& p = participants_[participant];
  service::AnswerRequest req;
  std::visit(
      [&](const auto& a) {
        using A = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<A, Choose>) {
          req.body = engine::ChoiceAnswer{a.index};
        } else if constexpr (std::is_same_v<A, Type>) {
          req.body = engine::TextAnswer{a.text};
        } else if constexpr (std::is_same_v<A, Postpone>) {
          auto where = svc_.slot_for(p.user_id, plan.instance_id);
          auto base = std::chrono::seconds{where->current->time.seconds()} + a.delta;
          req.body = ClockTime{static_cast<std::int32_t>(base.count())};
        }
      },
      plan.choice.action);
  try {
    client_.submit_answer(p.user_id, plan.instance_id, req, now_);
  } catch (const std::exception& e) {
    if (!std::holds_alternative<ClockTime>(req.body)) {
      throw ProtocolFailure(fmt::format("{}: answer at {} rejected: {}", p.user_id, plan.node_id, e.what()));
    }
    // The plan cannot hold the postponement; the user starts instead.
    try {
      client_.submit_answer(p.user_id, plan.instance_id, {engine::ChoiceAnswer{0}}, now_);
    } catch (const std::exception& e2) {
      throw ProtocolFailure(fmt::format("{}: answer at {} rejected: {}", p.user_id, plan.node_id, e2.what()));
    }
  }
}

void Simulation::perform(const Pending& step) {
  auto& p = participants_[step.participant];
  if (step.action) {
    const auto& a = p.actions[*step.action];
    ++next_action_[step.participant];
    try {
      perform_action(p, a, now_);
    } catch (const std::exception& e) {
      throw ProtocolFailure(fmt::format("{}: {} at {} failed: {}", p.user_id, to_string(a.kind),
                                        format_timestamp(now_), e.what()));
    }
  } else if (auto plan = planned_answer(step.participant)) {
    answer(step.participant, *plan);
  }
  receive(step.participant);
}

void Simulation::run_until(VirtualTime end) {
  while (true) {
    auto agent = next_agent_step();
    auto wake = svc_.next_wakeup();
    std::optional<VirtualTime> t;
    if (agent) t = agent->at;
    if (wake && (!t || *wake < *t)) t = *wake;
    if (!t || *t > end) break;
    const VirtualTime step = std::max(quantize(*t), now_);
    if (options_.realtime) std::this_thread::sleep_until(scheduler::real_time_for(clock_, step));
    now_ = step;
    svc_.advance(now_);
    if (auto w = svc_.next_wakeup(); w && *w <= now_) {
      throw ServiceUnreachable("service left work due at " + format_timestamp(*w) + " unprocessed");
    }
    for (std::size_t i = 0; i < participants_.size(); ++i) receive(i);
    while (auto due = next_agent_step()) {
      if (due->at > now_) break;
      perform(*due);
    }
  }
  if (end > now_) {
    if (options_.realtime) std::this_thread::sleep_until(scheduler::real_time_for(clock_, end));
    now_ = end;
  }
  svc_.advance(now_);
  for (std::size_t i = 0; i < participants_.size(); ++i) receive(i);
}

std::set<script::NodeKind> executed_node_kinds(const service::CoachService& svc, const script::ScriptLibrary& scripts) {
  std::set<script::NodeKind> out;
  for (const auto& user : svc.users()) {
    for (const auto& [id, inst] : svc.instances(user)) {
      auto s = scripts.find(inst.script_id);
      if (s == scripts.end()) continue;
      for (const auto& n : inst.trace) out.insert(s->second.node(n).kind());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs

Date default_date() { return Date{std::chrono::year{2025}, std::chrono::month{3}, std::chrono::day{10}}; }

service::ProfileFields default_profile(std::string_view name) {
  service::ProfileFields f;
  f.name = std::string(name);
  f.can_type_on_phone = true;
  f.can_walk = true;
  return f;
}

namespace {

constexpr std::string_view kDayUser = "user-1";

const ClockTime kProfileCue = ClockTime::hm(7, 30);
const ClockTime kDayEnd = ClockTime::hm(20);

json instance_to_json(const engine::InteractionInstance& inst) {
  json transcript = json::array();
  for (const auto& e : inst.transcript) {
    json j{{"author", e.author == engine::Author::coach ? "coach" : "user"},
           {"body", e.body},
           {"input_mode", std::string(engine::to_string(e.input_mode))},
           {"at", format_timestamp(e.at)}};
    if (e.anomaly == engine::Anomaly::empty_input) j["anomaly"] = "empty_input";
    transcript.push_back(std::move(j));
  }
  json j{{"instance_id", inst.instance_id},
         {"user_id", inst.user_id},
         {"script_id", inst.script_id},
         {"status", std::string(engine::to_string(inst.status))},
         {"trace", inst.trace},
         {"transcript", std::move(transcript)}};
  if (inst.started_at) j["started_at"] = format_timestamp(*inst.started_at);
  if (inst.ended_at) j["ended_at"] = format_timestamp(*inst.ended_at);
  return j;
}

void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw SimError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

}  // namespace

DayResult run_day(const BehaviorModel& behavior, const Config& config, const script::ScriptLibrary& scripts,
                  Rational scale, std::uint64_t seed, const std::optional<std::filesystem::path>& log_dir,
                  bool realtime) {
  if (scale <= 0) throw SimError("scale must be positive");
  std::unique_ptr<EventLog> log = log_dir ? std::make_unique<EventLog>(*log_dir, EventLog::Durability::buffered)
                                          : std::make_unique<EventLog>();
  service::CoachService svc(config, scripts, *log);
  const Date date = default_date();
  Participant part{std::string(kDayUser), behavior, default_profile("Alex"),
                   {{at(date, kProfileCue), ActionKind::create_profile, std::nullopt}}, false};
  // Over an existing log the day resumes where the records end.
  VirtualTime start = at(date, ClockTime::hm(7));
  if (log->size() > 0) start = std::max(start, log->since(log->size() - 1).front().at);
  Simulation sim(svc, {part}, {seed, scale, start, realtime});
  sim.run_until(at(date, kDayEnd));

  DayResult r;
  r.events = log->snapshot();
  r.instances = svc.instances(std::string(kDayUser));
  r.checklist = svc.get_checklist(std::string(kDayUser), date);
  try {
    r.summary = svc.get_summary(std::string(kDayUser), date);
  } catch (const service::SummaryNotDue&) {
  }
  r.coverage.calls = sim.calls();
  r.coverage.node_kinds = executed_node_kinds(svc, scripts);
  return r;
}

void write_day_outputs(const DayResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw SimError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "events.jsonl");
    if (!out) throw SimError("cannot write events.jsonl");
    for (const auto& e : r.events) out << record_to_json(e).dump() << '\n';
  }
  json transcripts = json::array();
  for (const auto& [id, inst] : r.instances) transcripts.push_back(instance_to_json(inst));
  write_json(dir / "transcripts.json", transcripts);
  write_json(dir / "checklist.json", service::checklist_to_json(r.checklist));
  write_json(dir / "summary.json", r.summary ? service::summary_to_json(*r.summary) : json(nullptr));
}

// ---------------------------------------------------------------------------
// Task protocol

namespace {

using metrics::TaskOutcome;

std::vector<const EventRecord*> day_events(const TaskContext& ctx) {
  std::vector<const EventRecord*> out;
  for (const auto& e : ctx.events) {
    if (e.user_id == ctx.user_id && date_of(e.at) == ctx.date) out.push_back(&e);
  }
  return out;
}

double seconds_between(VirtualTime a, VirtualTime b) { return std::chrono::duration<double>(b - a).count(); }

TaskResult done(TaskOutcome o, VirtualTime from, VirtualTime to) { return {o, seconds_between(from, to)}; }

const EventRecord* first_message(const std::vector<const EventRecord*>& ev, std::string_view script_id,
                                 std::string_view node_id) {
  for (const auto* e : ev) {
    if (e->kind == EventKind::message_out && e->payload.value("script_id", "") == script_id &&
        e->payload.value("node_id", "") == node_id) {
      return e;
    }
  }
  return nullptr;
}

const EventRecord* answer_after(const std::vector<const EventRecord*>& ev, const EventRecord& prompt,
                                std::string_view node_id, bool same_instance = true) {
  const auto instance = prompt.payload.value("instance_id", "");
  for (const auto* e : ev) {
    if (e->seq <= prompt.seq || e->kind != EventKind::answer_in) continue;
    if (e->payload.value("node_id", "") != node_id) continue;
    if (same_instance && e->payload.value("instance_id", "") != instance) continue;
    return e;
  }
  return nullptr;
}

struct Exchange {
  const EventRecord* prompt = nullptr;
  const EventRecord* answer = nullptr;
};

Exchange exchange(const std::vector<const EventRecord*>& ev, std::string_view script_id, std::string_view node_id) {
  Exchange x;
  x.prompt = first_message(ev, script_id, node_id);
  if (x.prompt) x.answer = answer_after(ev, *x.prompt, node_id);
  return x;
}

TaskResult answered(const TaskContext& ctx, std::string_view script_id, std::string_view node_id) {
  auto x = exchange(day_events(ctx), script_id, node_id);
  if (!x.answer) return {};
  return done(TaskOutcome::success, x.prompt->at, x.answer->at);
}

std::optional<std::size_t> choice_of(const EventRecord& answer) {
  const auto& a = answer.payload.at("answer");
  if (!a.contains("choice")) return std::nullopt;
  return a.at("choice").get<std::size_t>();
}

std::optional<ClockTime> schedule_time(const EventRecord& e, std::string_view slot) {
  for (const auto& s : e.payload.at("slots")) {
    if (s.value("slot", "") == slot) return ClockTime::parse(s.at("time").get<std::string>());
  }
  return std::nullopt;
}

TaskResult create_profile_task(const TaskContext& ctx) {
  for (const auto* e : day_events(ctx)) {
    if (e->kind == EventKind::profile_updated && e->payload.value("created", false) && ctx.cue && e->at >= *ctx.cue) {
      return done(TaskOutcome::success, *ctx.cue, e->at);
    }
  }
  return {};
}

TaskResult change_avatar_task(const TaskContext& ctx) {
  for (const auto* e : day_events(ctx)) {
    if (e->kind == EventKind::profile_updated && !e->payload.value("created", false) && ctx.cue &&
        e->at >= *ctx.cue && e->payload.at("profile").value("avatar", "") == "coach_b") {
      return done(TaskOutcome::success, *ctx.cue, e->at);
    }
  }
  return {};
}

TaskResult checklist_task(const TaskContext& ctx) {
  for (const auto* e : day_events(ctx)) {
    if (e->kind == EventKind::checklist_snapshot && ctx.cue && e->at >= *ctx.cue && e->at < *ctx.cue + 1h) {
      return done(TaskOutcome::success, *ctx.cue, e->at);
    }
  }
  return {};
}

TaskResult type_goal_task(const TaskContext& ctx) {
  auto ev = day_events(ctx);
  auto x = exchange(ev, "welcome", "goal_typed");
  if (!x.prompt) x = exchange(ev, "welcome", "goal_choice");
  if (!x.answer) return {};
  const auto& a = x.answer->payload.at("answer");
  const bool empty = a.contains("text") && a.at("text").get<std::string>().empty();
  return done(empty ? TaskOutcome::completed_with_error : TaskOutcome::success, x.prompt->at, x.answer->at);
}

TaskResult train_now_task(const TaskContext& ctx) {
  for (const auto* e : day_events(ctx)) {
    if (e->kind == EventKind::schedule_set && e->payload.value("reason", "") == "spontaneous" && ctx.cue &&
        e->at >= *ctx.cue) {
      return done(TaskOutcome::success, *ctx.cue, e->at);
    }
  }
  return {};
}

TaskResult long_text_task(const TaskContext& ctx) {
  auto ev = day_events(ctx);
  const auto* prompt = first_message(ev, "planning", "explain");
  if (!prompt) return {};
  const auto* a = answer_after(ev, *prompt, "confirm");
  if (!a) return {};
  return done(TaskOutcome::success, prompt->at, a->at);
}

TaskResult reschedule_task(const TaskContext& ctx) {
  auto ev = day_events(ctx);
  auto x = exchange(ev, "planning", "ask_time_1");
  if (!x.answer) return {};
  for (const auto* e : ev) {
    if (e->seq <= x.answer->seq || e->kind != EventKind::schedule_set) continue;
    if (e->payload.value("reason", "") != "directive") continue;
    auto t = schedule_time(*e, scheduler::training_slot(1));
    if (!t) continue;
    if (*t != ClockTime::hm(15)) return {};
    return done(TaskOutcome::success, x.prompt->at, x.answer->at);
  }
  return {};
}

TaskResult learning_time_task(const TaskContext& ctx) {
  auto ev = day_events(ctx);
  auto x = exchange(ev, "planning", "ask_learning");
  if (!x.answer) return {};
  const bool planned = std::any_of(ev.begin(), ev.end(), [](const EventRecord* e) {
    return e->kind == EventKind::slot_done && e->payload.value("slot", "") == scheduler::kPlanningSlot &&
           e->payload.value("status", "") == "completed";
  });
  if (!planned) return {};
  return done(TaskOutcome::success, x.prompt->at, x.answer->at);
}

TaskResult postpone_task(const TaskContext& ctx) {
  auto ev = day_events(ctx);
  const auto* remind = first_message(ev, "training", "remind");
  if (!remind) return {};
  const auto instance = remind->payload.value("instance_id", "");
  std::optional<std::string> slot;
  std::optional<ClockTime> original;
  for (const auto* e : ev) {
    if (e->kind == EventKind::slot_fired && e->payload.value("instance_id", "") == instance) {
      slot = e->payload.value("slot", "");
      auto seed = bindings_from_json(e->payload.at("seed"));
      if (auto it = seed.find("session_time"); it != seed.end()) {
        if (const auto* t = std::get_if<ClockTime>(&it->second)) original = *t;
      }
    }
  }
  if (!slot || !original) return {};
  for (const auto* e : ev) {
    if (e->seq <= remind->seq || e->kind != EventKind::schedule_set) continue;
    if (e->payload.value("reason", "") != "postpone") continue;
    auto t = schedule_time(*e, *slot);
    // "Postpone by one hour" counts from the moment of answering, which lies
    // within the reminder's answer window.
    const int delta = t ? t->seconds() - original->seconds() : -1;
    if (delta < 3600 || delta > 3600 + 60 * script::kDefaultTimeoutMinutes) return {};
    return done(TaskOutcome::success, remind->at, e->at);
  }
  return {};
}

TaskResult watch_learning_task(const TaskContext& ctx) {
  auto ev = day_events(ctx);
  const auto* remind = first_message(ev, "learning", "remind");
  if (!remind) return {};
  // A postponed reminder resumes in a new instance.
  const auto* a = answer_after(ev, *remind, "confirm", false);
  if (!a || choice_of(*a) != 0) return {};
  return done(TaskOutcome::success, remind->at, a->at);
}

TaskResult summary_task(const TaskContext& ctx) {
  auto ev = day_events(ctx);
  const auto* prompt = first_message(ev, "summary", "ask_day");
  if (!prompt) return {};
  const auto instance = prompt->payload.value("instance_id", "");
  for (const auto* e : ev) {
    if (e->seq <= prompt->seq || e->payload.value("instance_id", "") != instance) continue;
    if (e->kind == EventKind::slot_missed) return {};
    if (e->kind != EventKind::slot_done) continue;
    const auto status = e->payload.value("status", "");
    return done(status == "completed" ? TaskOutcome::success : TaskOutcome::completed_with_error, prompt->at, e->at);
  }
  return {};
}

std::vector<TaskDefinition> build_suite() {
  using AK = ActionKind;
  auto at_node = [](std::string script, std::string node) {
    return [script = std::move(script), node = std::move(node)](const TaskContext& c) {
      return answered(c, script, node);
    };
  };
  return {
      {"T1", "Create the profile with name and abilities", ClockTime::hm(7, 30), AK::create_profile,
       create_profile_task},
      {"T2", "Change the coach avatar in the profile", ClockTime::hm(7, 45), AK::update_avatar, change_avatar_task},
      {"T3", "Type a personal goal in the welcome chat", std::nullopt, std::nullopt, type_goal_task},
      {"T4", "Answer the tour offer with a button", std::nullopt, std::nullopt, at_node("welcome", "offer_tour")},
      {"T5", "Open the checklist in the morning", ClockTime::hm(7, 50), AK::view_checklist, checklist_task},
      {"T6", "Choose two training sessions in the planning chat", std::nullopt, std::nullopt,
       at_node("planning", "ask_count")},
      {"T7", "Start a training with \"I want to train\"", ClockTime::hm(11), AK::train_now, train_now_task},
      {"T8", "Answer the feedback question after the spontaneous training", std::nullopt, std::nullopt,
       at_node("spontaneous_training", "feedback")},
      {"T9", "Read the planning explanation and confirm it", std::nullopt, std::nullopt, long_text_task},
      {"T10", "Change the proposed training time from 2 pm to 3 pm", std::nullopt, std::nullopt, reschedule_task},
      {"T11", "Choose the learning time and complete planning", std::nullopt, std::nullopt, learning_time_task},
      {"T12", "Postpone the first training by one hour", std::nullopt, std::nullopt, postpone_task},
      {"T13", "Watch the learning video and confirm it", std::nullopt, std::nullopt, watch_learning_task},
      {"T14", "Answer the evening summary question", std::nullopt, std::nullopt, summary_task},
      {"T15", "Open the checklist after the summary", ClockTime::hm(19, 10), AK::view_checklist, checklist_task},
  };
}

// Protocol steps that belong to no task.
std::vector<std::pair<ClockTime, ActionKind>> extra_actions() {
  return {{ClockTime::hm(7, 30), ActionKind::create_profile},
          {ClockTime::hm(12), ActionKind::open_learn},
          {ClockTime::hm(19, 5), ActionKind::read_summary}};
}

}  // namespace

const std::vector<TaskDefinition>& default_suite() {
  static const std::vector<TaskDefinition> suite = build_suite();
  return suite;
}

const TaskDefinition& find_task(std::string_view task_id) {
  for (const auto& t : default_suite()) {
    if (t.task_id == task_id) return t;
  }
  throw UnknownTask(std::string(task_id));
}

std::vector<Rule> protocol_rules() {
  return {
      {"welcome/goal_typed", Type{"Use my arm more when cooking"}},
      {"welcome/goal_choice", Choose{0}},
      {"welcome/offer_tour", Choose{0}},
      {"planning/ask_count", Choose{1}},
      {"planning/ask_time_1", Choose{1}},
      {"planning/ask_time_2", Choose{1}},
      {"planning/ask_learning", Choose{1}},
      {"planning/confirm", Choose{0}},
      {"spontaneous_training/feedback", Choose{0}},
      {"training/remind", Choose{1}, Condition::slot_not_postponed, "training#1"},
      {"training/remind", Choose{0}},
      {"training/done", Choose{0}},
      {"training/feeling", Choose{1}},
      {"learning/remind", Choose{0}},
      // Watching the video.
      {"learning/confirm", Choose{0}, Condition::always, std::nullopt, 20.0},
      {"summary/ask_day", Type{"A good day, the exercises went well"}},
  };
}

ProtocolResult run_task_protocol(const std::vector<TaskDefinition>& tasks, const std::vector<BehaviorModel>& behaviors,
                                 const Config& config, const script::ScriptLibrary& scripts, std::uint64_t seed,
                                 Rational scale) {
  for (const auto& t : tasks) {
    if (!t.evaluate) throw UnknownTask(t.task_id);
  }
  const Date date = default_date();
  EventLog log;
  service::CoachService svc(config, scripts, log);

  std::vector<Participant> participants;
  ProtocolResult result;
  for (std::size_t i = 0; i < behaviors.size(); ++i) {
    const auto& b = behaviors[i];
    if (result.groups.contains(b.name)) throw SimError("duplicate respondent '" + b.name + "'");
    result.groups.emplace(b.name, b.group);
    Participant p{b.name, b, default_profile(b.name), {}, i % 2 == 1};
    if (b.group == metrics::Group::primary_user) p.profile.can_walk = false;
    std::set<ActionKind> covered;
    for (const auto& t : tasks) {
      if (t.cue && t.action) {
        p.actions.push_back({at(date, *t.cue), *t.action, t.task_id});
        covered.insert(*t.action);
      }
    }
    for (const auto& [cue, kind] : extra_actions()) {
      if (kind == ActionKind::create_profile && covered.contains(kind)) continue;
      p.actions.push_back({at(date, cue), kind, std::nullopt});
    }
    participants.push_back(std::move(p));
  }

  Simulation sim(svc, participants, {seed, scale, at(date, ClockTime::hm(7)), false}, protocol_rules());
  sim.run_until(at(date, kDayEnd));

  result.events = log.snapshot();
  for (const auto& b : behaviors) {
    for (const auto& t : tasks) {
      TaskContext ctx{result.events, b.name, date, t.cue ? std::optional(at(date, *t.cue)) : std::nullopt};
      TaskResult r = t.evaluate(ctx);
      if (r.outcome == TaskOutcome::success && b.assisted_tasks.contains(t.task_id)) {
        r.outcome = TaskOutcome::success_with_input;
      }
      if (r.outcome == TaskOutcome::not_completed) r.duration_seconds.reset();
      result.logs.push_back({b.name, t.task_id, r.duration_seconds, r.outcome});
    }
  }
  result.coverage.calls = sim.calls();
  result.coverage.node_kinds = executed_node_kinds(svc, scripts);
  return result;
}

std::vector<metrics::QuestionnaireResponse> synthetic_responses(const std::vector<BehaviorModel>& respondents,
                                                                std::uint64_t seed) {
  std::vector<metrics::QuestionnaireResponse> out;
  for (const auto& b : respondents) {
    std::mt19937_64 rng(mix(seed, {b.name, "questionnaire"}, 0));
    std::discrete_distribution<int> likert{40, 35, 12, 6, 4, 2, 1};
    std::bernoulli_distribution unknown(0.05);
    metrics::QuestionnaireResponse r;
    r.respondent_id = b.name;
    r.group = b.group;
    auto draw = [&]() -> metrics::Likert {
      if (unknown(rng)) return std::nullopt;
      return likert(rng) + 1;
    };
    for (auto& item : r.mauq) item = draw();
    for (auto& item : r.custom) item = draw();
    if (std::all_of(r.mauq.begin(), r.mauq.end(), [](const metrics::Likert& l) { return !l; })) r.mauq[0] = 1;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace rehabcoach::sim
