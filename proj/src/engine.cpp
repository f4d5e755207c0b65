#include "rehabcoach/engine.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace rehabcoach::engine {

using script::InteractionScript;
using script::NodeKind;
using script::ScriptNode;

std::string_view to_string(InstanceStatus s) {
  switch (s) {
    case InstanceStatus::pending: return "pending";
    case InstanceStatus::active: return "active";
    case InstanceStatus::completed: return "completed";
    case InstanceStatus::completed_with_anomaly: return "completed_with_anomaly";
    case InstanceStatus::incomplete: return "incomplete";
    case InstanceStatus::postponed: return "postponed";
  }
  return "unknown";
}

std::string_view to_string(InputMode m) {
  switch (m) {
    case InputMode::none: return "none";
    case InputMode::button: return "button";
    case InputMode::free_text: return "free_text";
  }
  return "unknown";
}

InstanceStatus status_from_string(std::string_view s) {
  for (auto st : {InstanceStatus::pending, InstanceStatus::active, InstanceStatus::completed,
                  InstanceStatus::completed_with_anomaly, InstanceStatus::incomplete,
                  InstanceStatus::postponed}) {
    if (to_string(st) == s) return st;
  }
  throw std::invalid_argument(fmt::format("unknown status '{}'", s));
}

InputMode input_mode_from_string(std::string_view s) {
  for (auto m : {InputMode::none, InputMode::button, InputMode::free_text}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument(fmt::format("unknown input mode '{}'", s));
}

bool is_terminal(InstanceStatus s) {
  return s != InstanceStatus::pending && s != InstanceStatus::active;
}

bool InteractionInstance::has_anomaly() const {
  return std::any_of(transcript.begin(), transcript.end(),
                     [](const TranscriptEntry& e) { return e.anomaly != Anomaly::none; });
}

namespace {

void say(InteractionInstance& inst, StepOutput& out, const ScriptNode& node, std::string text,
         InputRequest input, VirtualTime now) {
  inst.transcript.push_back({Author::coach, text, InputMode::none, Anomaly::none, now});
  out.messages.push_back({inst.instance_id, inst.script_id, node.id, std::move(text), std::move(input), now});
}

bool leads_to_self_directive(const InteractionScript& script, const std::string& next) {
  const ScriptNode* n = script.find(next);
  if (n == nullptr) return false;
  const auto* d = std::get_if<script::ScheduleDirective>(&n->body);
  return d != nullptr && d->targets_self();
}

std::optional<ClockTime> resolve_time(const script::TimeSource& src, const Bindings& bindings,
                                      VirtualTime now) {
  if (const auto* c = std::get_if<ClockTime>(&src)) return *c;
  if (const auto* v = std::get_if<script::TimeFromVariable>(&src)) {
    auto it = bindings.find(v->variable);
    if (it == bindings.end()) return std::nullopt;
    if (const auto* t = std::get_if<ClockTime>(&it->second)) return *t;
    return std::nullopt;
  }
  const auto& off = std::get<script::TimeOffset>(src);
  auto secs = clock_of(now).seconds() + static_cast<std::int32_t>(off.offset.count() * 60);
  return ClockTime{std::clamp(secs, 0, 24 * 3600 - 1)};
}

void finish(InteractionInstance& inst, StepOutput& out, VirtualTime now) {
  if (inst.postponed_to) {
    inst.status = InstanceStatus::postponed;
  } else if (inst.has_anomaly()) {
    inst.status = InstanceStatus::completed_with_anomaly;
  } else {
    inst.status = InstanceStatus::completed;
  }
  inst.cursor.reset();
  inst.awaiting_since.reset();
  inst.ended_at = now;
  out.ended = inst.status;
}

// Advances from the cursor to the next wait point or the end.
void run(InteractionInstance& inst, const InteractionScript& script, StepOutput& out, VirtualTime now) {
  std::size_t steps = 0;
  while (inst.cursor) {
    if (++steps > script.nodes.size() + 1) {
      throw EngineError(fmt::format("script '{}' loops without a wait point", script.script_id));
    }
    const ScriptNode& node = script.node(*inst.cursor);
    inst.trace.push_back(node.id);
    switch (node.kind()) {
      case NodeKind::coach_message: {
        const auto& m = std::get<script::CoachMessage>(node.body);
        say(inst, out, node, script::render_template(m.text, inst.bindings), {}, now);
        inst.cursor = m.next;
        break;
      }
      case NodeKind::choice_question: {
        const auto& q = std::get<script::ChoiceQuestion>(node.body);
        InputRequest req{InputMode::button, {}, false};
        for (const auto& o : q.options) {
          req.options.push_back(script::render_template(o.label, inst.bindings));
          req.postponable = req.postponable || leads_to_self_directive(script, o.next);
        }
        say(inst, out, node, script::render_template(q.prompt, inst.bindings), std::move(req), now);
        inst.awaiting_since = now;
        return;
      }
      case NodeKind::free_text_prompt: {
        const auto& p = std::get<script::FreeTextPrompt>(node.body);
        say(inst, out, node, script::render_template(p.prompt, inst.bindings),
            {InputMode::free_text, {}, false}, now);
        inst.awaiting_since = now;
        return;
      }
      case NodeKind::set_variable: {
        const auto& s = std::get<script::SetVariable>(node.body);
        inst.bindings[s.variable] = s.value;
        inst.cursor = s.next;
        break;
      }
      case NodeKind::branch: {
        const auto& b = std::get<script::Branch>(node.body);
        std::string next = b.otherwise;
        if (auto it = inst.bindings.find(b.variable); it != inst.bindings.end()) {
          for (const auto& c : b.cases) {
            if (c.equals == it->second) {
              next = c.next;
              break;
            }
          }
        }
        inst.cursor = next;
        break;
      }
      case NodeKind::schedule_directive: {
        const auto& d = std::get<script::ScheduleDirective>(node.body);
        // An unresolvable time (variable unset or not a clock time) raises
        // no directive; the plan keeps its current value.
        if (auto t = resolve_time(d.time, inst.bindings, now)) {
          if (d.targets_self()) inst.postponed_to = *t;
          out.directives.push_back({d.target, *t, d.targets_self()});
        }
        inst.cursor = d.next;
        break;
      }
      case NodeKind::end_interaction:
        finish(inst, out, now);
        return;
    }
  }
}

const ScriptNode& wait_node(const InteractionInstance& inst, const InteractionScript& script) {
  if (is_terminal(inst.status)) throw InstanceTerminal();
  if (!inst.awaiting_input() || !inst.cursor) throw NotAwaitingInput();
  return script.node(*inst.cursor);
}

}  // namespace

StepOutput start(InteractionInstance& inst, const InteractionScript& script, VirtualTime now) {
  if (inst.status != InstanceStatus::pending) throw EngineError("instance already started");
  InteractionInstance next = inst;
  next.script_id = script.script_id;
  next.status = InstanceStatus::active;
  next.started_at = now;
  next.cursor = script.entry;
  StepOutput out;
  run(next, script, out, now);
  inst = std::move(next);
  return out;
}

void check_answer(const InteractionInstance& inst, const InteractionScript& script, const Answer& answer) {
  const ScriptNode& node = wait_node(inst, script);
  if (const auto* q = std::get_if<script::ChoiceQuestion>(&node.body)) {
    const auto* c = std::get_if<ChoiceAnswer>(&answer);
    if (c == nullptr) throw WrongAnswerKind();
    if (c->index >= q->options.size()) throw ChoiceOutOfRange(c->index);
  } else if (std::holds_alternative<script::FreeTextPrompt>(node.body)) {
    if (!std::holds_alternative<TextAnswer>(answer)) throw WrongAnswerKind();
  } else {
    throw NotAwaitingInput();
  }
}

StepOutput submit_answer(InteractionInstance& inst, const InteractionScript& script, const Answer& answer,
                         VirtualTime now) {
  check_answer(inst, script, answer);
  InteractionInstance next = inst;
  const ScriptNode& node = script.node(*next.cursor);
  StepOutput out;
  next.awaiting_since.reset();
  if (const auto* q = std::get_if<script::ChoiceQuestion>(&node.body)) {
    const auto& opt = q->options[std::get<ChoiceAnswer>(answer).index];
    next.transcript.push_back({Author::user, script::render_template(opt.label, next.bindings),
                               InputMode::button, Anomaly::none, now});
    next.bindings[q->variable] = opt.value;
    next.cursor = opt.next;
  } else {
    const auto& p = std::get<script::FreeTextPrompt>(node.body);
    const std::string& text = std::get<TextAnswer>(answer).text;
    if (text.empty() && script.strict_empty_input) {
      next.transcript.push_back({Author::user, text, InputMode::free_text, Anomaly::none, now});
      say(next, out, node, script::render_template(p.prompt, next.bindings),
          {InputMode::free_text, {}, false}, now);
      next.awaiting_since = now;
      inst = std::move(next);
      return out;
    }
    next.transcript.push_back({Author::user, text, InputMode::free_text,
                               text.empty() ? Anomaly::empty_input : Anomaly::none, now});
    next.bindings[p.variable] = text;
    next.cursor = p.next;
  }
  run(next, script, out, now);
  inst = std::move(next);
  return out;
}

std::optional<VirtualTime> timeout_deadline(const InteractionInstance& inst, const InteractionScript& script,
                                            const RunOptions& options) {
  if (!inst.awaiting_input()) return std::nullopt;
  return *inst.awaiting_since + std::chrono::minutes{script.effective_timeout(options.default_timeout_minutes)};
}

std::optional<InstanceStatus> tick(InteractionInstance& inst, const InteractionScript& script, VirtualTime now,
                                   const RunOptions& options) {
  auto deadline = timeout_deadline(inst, script, options);
  if (!deadline || now < *deadline) return std::nullopt;
  inst.status = InstanceStatus::incomplete;
  inst.ended_at = now;
  inst.cursor.reset();
  return inst.status;
}

bool at_postpone_point(const InteractionInstance& inst, const InteractionScript& script) {
  if (!inst.awaiting_input() || !inst.cursor) return false;
  const auto* q = std::get_if<script::ChoiceQuestion>(&script.node(*inst.cursor).body);
  if (q == nullptr) return false;
  return std::any_of(q->options.begin(), q->options.end(),
                     [&](const script::ChoiceOption& o) { return leads_to_self_directive(script, o.next); });
}

void check_postpone(const InteractionInstance& inst, const InteractionScript& script, ClockTime new_time,
                    VirtualTime now) {
  if (is_terminal(inst.status)) throw InstanceTerminal();
  if (script.trigger.kind != script::TriggerKind::planned_time) throw NotPostponable(script.script_id);
  if (!inst.awaiting_input()) throw NotAwaitingInput();
  if (!at_postpone_point(inst, script)) throw NotPostponable(script.script_id);
  if (new_time <= clock_of(now)) {
    throw InvalidTime(fmt::format("postpone time {} is not after {}", new_time.str(), clock_of(now).str()));
  }
}

StepOutput postpone(InteractionInstance& inst, const InteractionScript& script, ClockTime new_time,
                    VirtualTime now) {
  check_postpone(inst, script, new_time, now);
  StepOutput out;
  inst.transcript.push_back(
      {Author::user, "Postpone to " + new_time.str(), InputMode::button, Anomaly::none, now});
  inst.postponed_to = new_time;
  out.directives.push_back({std::string(script::kSelfTarget), new_time, true});
  finish(inst, out, now);
  return out;
}

// ---------------------------------------------------------------------------

InteractionInstance replay(const script::ScriptLibrary& scripts, std::span<const EngineEvent> events,
                           const RunOptions& options) {
  InteractionInstance inst;
  if (events.empty()) return inst;
  const InteractionScript* script = nullptr;
  std::optional<VirtualTime> last;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const EngineEvent& e = events[i];
    if (last && e.at < *last) throw CorruptHistory(i, "timestamps decrease");
    last = e.at;
    if (i == 0 && !std::holds_alternative<StartEvent>(e.body)) throw CorruptHistory(0, "history must begin with a start");
    try {
      if (const auto* s = std::get_if<StartEvent>(&e.body)) {
        if (i != 0) throw CorruptHistory(i, "second start event");
        auto it = scripts.find(s->script_id);
        if (it == scripts.end()) throw CorruptHistory(i, "unknown script '" + s->script_id + "'");
        script = &it->second;
        inst.instance_id = s->instance_id;
        inst.user_id = s->user_id;
        inst.bindings = s->seed;
        start(inst, *script, e.at);
      } else if (const auto* a = std::get_if<AnswerEvent>(&e.body)) {
        submit_answer(inst, *script, a->answer, e.at);
      } else if (std::holds_alternative<TimeoutEvent>(e.body)) {
        if (!tick(inst, *script, e.at, options)) throw CorruptHistory(i, "timeout before deadline");
      } else {
        postpone(inst, *script, std::get<PostponeEvent>(e.body).new_time, e.at);
      }
    } catch (const CorruptHistory&) {
      throw;
    } catch (const EngineError& err) {
      throw CorruptHistory(i, err.what());
    }
  }
  return inst;
}

// ---------------------------------------------------------------------------

Session::Session(std::string user_id, const script::ScriptLibrary& scripts, RunOptions options)
    : user_id_(std::move(user_id)), scripts_(&scripts), options_(options) {}

const InteractionScript& Session::script_of(const InteractionInstance& inst) const {
  auto it = scripts_->find(inst.script_id);
  if (it == scripts_->end()) throw EngineError("unknown script '" + inst.script_id + "'");
  return it->second;
}

const InteractionInstance* Session::find(const std::string& instance_id) const {
  auto it = instances_.find(instance_id);
  return it == instances_.end() ? nullptr : &it->second;
}

const InteractionInstance& Session::get(const std::string& instance_id) const {
  const auto* inst = find(instance_id);
  if (inst == nullptr) throw UnknownInstance(instance_id);
  return *inst;
}

InteractionInstance& Session::mut(const std::string& instance_id) {
  auto it = instances_.find(instance_id);
  if (it == instances_.end()) throw UnknownInstance(instance_id);
  return it->second;
}

const InteractionInstance* Session::active() const {
  if (!active_) return nullptr;
  const auto* inst = find(*active_);
  return inst != nullptr && inst->status == InstanceStatus::active ? inst : nullptr;
}

Session::Started Session::start_interaction(std::string instance_id, const InteractionScript& script,
                                            Bindings seed, VirtualTime now) {
  if (active() != nullptr) throw ActiveInstanceExists(user_id_);
  if (instances_.contains(instance_id)) throw EngineError("duplicate instance id '" + instance_id + "'");
  InteractionInstance inst;
  inst.instance_id = instance_id;
  inst.user_id = user_id_;
  inst.bindings = std::move(seed);
  StepOutput out = engine::start(inst, script, now);
  auto [it, _] = instances_.emplace(instance_id, std::move(inst));
  active_ = it->second.status == InstanceStatus::active ? std::optional(instance_id) : std::nullopt;
  return {it->second, std::move(out)};
}

void Session::check_answer(const std::string& instance_id, const Answer& answer) const {
  const auto& inst = get(instance_id);
  engine::check_answer(inst, script_of(inst), answer);
}

StepOutput Session::submit_answer(const std::string& instance_id, const Answer& answer, VirtualTime now) {
  auto& inst = mut(instance_id);
  return engine::submit_answer(inst, script_of(inst), answer, now);
}

std::optional<InstanceStatus> Session::tick(const std::string& instance_id, VirtualTime now) {
  auto& inst = mut(instance_id);
  return engine::tick(inst, script_of(inst), now, options_);
}

void Session::check_postpone(const std::string& instance_id, ClockTime new_time, VirtualTime now) const {
  const auto& inst = get(instance_id);
  engine::check_postpone(inst, script_of(inst), new_time, now);
}

StepOutput Session::postpone(const std::string& instance_id, ClockTime new_time, VirtualTime now) {
  auto& inst = mut(instance_id);
  return engine::postpone(inst, script_of(inst), new_time, now);
}

std::optional<VirtualTime> Session::next_deadline() const {
  const auto* inst = active();
  if (inst == nullptr) return std::nullopt;
  return timeout_deadline(*inst, script_of(*inst), options_);
}

}  // namespace rehabcoach::engine
