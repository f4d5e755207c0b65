#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <set>

#include "rehabcoach/engine.hpp"
#include "rehabcoach/script.hpp"
#include "support.hpp"

using namespace rehabcoach;
using namespace rehabcoach::script;
using rehabcoach::testing::bundled_scripts;

namespace {

const char* kMinimal = R"({
  "script_id": "mini",
  "trigger": {"type": "user_initiated"},
  "entry": "hello",
  "nodes": [
    {"id": "hello", "kind": "coach_message", "text": "Hello {name}!", "next": "end"},
    {"id": "end", "kind": "end_interaction", "status": "completed"}
  ]
})";

std::set<std::pair<std::string, std::string>> unbound_of(const std::vector<Diagnostic>& ds) {
  std::set<std::pair<std::string, std::string>> out;
  const std::string prefix = "unbound variable '";
  for (const auto& d : ds) {
    if (d.severity == Severity::error && d.message.rfind(prefix, 0) == 0) {
      out.emplace(d.node_id, d.message.substr(prefix.size(), d.message.size() - prefix.size() - 1));
    }
  }
  return out;
}

// Random acyclic scripts: successors always point to later nodes and only
// end nodes lack a successor, so every path terminates at an end node.
struct Gen {
  std::mt19937_64 rng;
  bool executable;  // no directive reads a variable (its type could mismatch)

  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

  std::string var() {
    static const std::vector<std::string> vs = {"a", "b", "c", "name", "input_x"};
    return vs[pick(vs.size())];
  }

  InteractionScript make() {
    InteractionScript s;
    s.script_id = "random";
    s.trigger = {TriggerKind::user_initiated, {}, {}};
    if (pick(2) == 0) s.inputs = {"input_x"};
    const std::size_t n = 2 + pick(14);
    auto id = [](std::size_t i) { return "n" + std::to_string(i); };
    auto later = [&](std::size_t i) { return id(i + 1 + pick(n - 1 - i)); };
    for (std::size_t i = 0; i + 1 < n; ++i) {
      ScriptNode node{id(i), EndInteraction{}};
      switch (pick(executable ? 6 : 7)) {
        case 0: node.body = CoachMessage{pick(2) ? "say {" + var() + "}" : "plain", later(i)}; break;
        case 1: {
          ChoiceQuestion q{pick(2) ? "pick {" + var() + "}" : "pick", {}, var(), false};
          const std::size_t k = 2 + pick(2);
          for (std::size_t o = 0; o < k; ++o) {
            q.options.push_back({"opt" + std::to_string(o), Value{std::int64_t(o)}, later(i)});
          }
          node.body = q;
          break;
        }
        case 2: node.body = FreeTextPrompt{"type", var(), later(i), false}; break;
        case 3: node.body = SetVariable{var(), Value{std::int64_t(pick(3))}, later(i)}; break;
        case 4: node.body = Branch{var(), {{Value{std::int64_t(1)}, later(i)}}, later(i)}; break;
        case 5: node.body = ScheduleDirective{"training#1", ClockTime::hm(15), later(i)}; break;
        case 6: node.body = ScheduleDirective{"training#1", TimeFromVariable{var()}, later(i)}; break;
        default: break;  // an early end node
      }
      if (i == 0 && std::holds_alternative<EndInteraction>(node.body)) node.body = CoachMessage{"hi", id(1)};
      if (pick(8) == 0 && i > 0) node.body = EndInteraction{};
      s.nodes.push_back(std::move(node));
    }
    s.nodes.push_back({id(n - 1), EndInteraction{}});
    s.entry = id(0);
    return s;
  }
};

std::vector<std::string> reads_of(const ScriptNode& n) {
  std::vector<std::string> r;
  auto add = [&](const std::string& t) {
    for (auto& p : placeholders(t)) r.push_back(p);
  };
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, CoachMessage>) add(b.text);
        if constexpr (std::is_same_v<T, ChoiceQuestion>) {
          add(b.prompt);
          for (const auto& o : b.options) add(o.label);
        }
        if constexpr (std::is_same_v<T, FreeTextPrompt>) add(b.prompt);
        if constexpr (std::is_same_v<T, Branch>) r.push_back(b.variable);
        if constexpr (std::is_same_v<T, ScheduleDirective>) {
          if (auto* v = std::get_if<TimeFromVariable>(&b.time)) r.push_back(v->variable);
        }
      },
      n.body);
  return r;
}

std::optional<std::string> write_of(const ScriptNode& n) {
  if (auto* q = std::get_if<ChoiceQuestion>(&n.body)) return q->variable;
  if (auto* p = std::get_if<FreeTextPrompt>(&n.body)) return p->variable;
  if (auto* s = std::get_if<SetVariable>(&n.body)) return s->variable;
  return std::nullopt;
}

// Exhaustive path walk: a read is unbound when at least one path from the
// entry reaches it without a prior write.
std::set<std::pair<std::string, std::string>> unbound_oracle(const InteractionScript& s) {
  std::set<std::pair<std::string, std::string>> out;
  std::set<std::string> start(profile_variables().begin(), profile_variables().end());
  start.insert(s.inputs.begin(), s.inputs.end());
  std::function<void(const std::string&, std::set<std::string>)> walk = [&](const std::string& id,
                                                                             std::set<std::string> written) {
    const ScriptNode& n = s.node(id);
    for (const auto& v : reads_of(n)) {
      if (!written.contains(v)) out.emplace(n.id, v);
    }
    if (auto w = write_of(n)) written.insert(*w);
    std::set<std::string> seen;
    for (const auto& next : n.successors()) {
      if (seen.insert(next).second) walk(next, written);
    }
  };
  walk(s.entry, start);
  return out;
}

Bindings seed_for(const InteractionScript& s) {
  Bindings b{{"name", std::string("Anna")}, {"can_type_on_phone", true}, {"can_walk", false},
             {"avatar", std::string("coach_a")}};
  for (const auto& in : s.inputs) b.emplace(in, std::string("in"));
  if (s.script_id == "planning") b["suggested_training_time"] = ClockTime::hm(14);
  if (s.script_id == "training" || s.script_id == "learning") b["session_time"] = ClockTime::hm(14);
  return b;
}

// Runs every combination of choice answers; returns the longest trace.
std::size_t longest_run(const InteractionScript& s, std::size_t& runs) {
  const VirtualTime t0 = rehabcoach::testing::on(rehabcoach::testing::day(2024, 3, 4), 9);
  std::size_t longest = 0;
  std::function<void(engine::InteractionInstance)> explore = [&](engine::InteractionInstance inst) {
    if (!inst.awaiting_input()) {
      EXPECT_TRUE(engine::is_terminal(inst.status));
      longest = std::max(longest, inst.trace.size());
      ++runs;
      return;
    }
    const ScriptNode& n = s.node(*inst.cursor);
    if (const auto* q = std::get_if<ChoiceQuestion>(&n.body)) {
      for (std::size_t k = 0; k < q->options.size(); ++k) {
        auto next = inst;
        engine::submit_answer(next, s, engine::ChoiceAnswer{k}, t0);
        explore(std::move(next));
      }
    } else {
      for (const std::string text : {"", "something"}) {
        auto next = inst;
        engine::submit_answer(next, s, engine::TextAnswer{text}, t0);
        explore(std::move(next));
      }
    }
  };
  engine::InteractionInstance inst;
  inst.instance_id = "i";
  inst.user_id = "u";
  inst.bindings = seed_for(s);
  engine::start(inst, s, t0);
  explore(std::move(inst));
  return longest;
}

std::size_t max_options(const InteractionScript& s) {
  std::size_t m = 1;
  for (const auto& n : s.nodes) {
    if (auto* q = std::get_if<ChoiceQuestion>(&n.body)) m = std::max(m, q->options.size());
  }
  return m;
}

}  // namespace

TEST(Parse, MinimalScript) {
  auto s = parse_script(kMinimal);
  EXPECT_EQ(s.nodes.size(), 2u);
  EXPECT_EQ(s.entry, "hello");
  EXPECT_EQ(s.nodes[0].kind(), NodeKind::coach_message);
  EXPECT_EQ(s.effective_timeout(), 10);
  EXPECT_TRUE(validate(s).empty());
}

TEST(Parse, DanglingReferenceNamesTheMissingNode) {
  std::string doc = R"({
    "script_id": "x", "trigger": {"type": "user_initiated"}, "entry": "b",
    "nodes": [
      {"id": "b", "kind": "branch", "variable": "name", "cases": [{"equals": "Anna", "next": "x9"}], "otherwise": "end"},
      {"id": "end", "kind": "end_interaction"}
    ]})";
  try {
    parse_script(doc);
    FAIL() << "expected DanglingReference";
  } catch (const DanglingReference& e) {
    EXPECT_EQ(e.node_id(), "x9");
  }
}

TEST(Parse, DuplicateNodeId) {
  std::string doc = R"({
    "script_id": "x", "trigger": {"type": "user_initiated"}, "entry": "a",
    "nodes": [
      {"id": "a", "kind": "coach_message", "text": "hi", "next": "a2"},
      {"id": "a", "kind": "end_interaction"}
    ]})";
  EXPECT_THROW(parse_script(doc), DuplicateNodeId);
}

TEST(Parse, SyntaxErrorsCarryALine) {
  try {
    parse_script("{\n  \"script_id\": \"x\",\n  \"entry\": ,\n}");
    FAIL();
  } catch (const SyntaxError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::string bad_kind = "{\n\"script_id\": \"x\", \"trigger\": {\"type\": \"user_initiated\"}, \"entry\": \"a\",\n"
                         "\"nodes\": [\n{\"id\": \"a\", \"kind\": \"dance\"}\n]}";
  try {
    parse_script(bad_kind);
    FAIL();
  } catch (const SyntaxError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_NE(e.reason().find("dance"), std::string::npos);
  }
}

TEST(Parse, PlanningTimeOptionsAreClockTimes) {
  const auto& planning = bundled_scripts().at("planning");
  const auto& q = std::get<ChoiceQuestion>(planning.node("ask_time_1").body);
  EXPECT_EQ(q.variable, "training_time");
  std::map<std::string, Value> by_label;
  for (const auto& o : q.options) by_label.emplace(o.label, o.value);
  EXPECT_EQ(by_label.at("2 pm"), Value{ClockTime::hm(14)});
  EXPECT_EQ(by_label.at("3 pm"), Value{ClockTime::hm(15)});
}

TEST(Parse, BundledLibraryHasTheSixInteractions) {
  std::set<std::string> ids;
  for (const auto& [id, s] : bundled_scripts()) ids.insert(id);
  EXPECT_EQ(ids, (std::set<std::string>{"learning", "planning", "spontaneous_training", "summary", "training",
                                        "welcome"}));
  EXPECT_EQ(bundled_scripts().at("planning").trigger.time, ClockTime::hm(8));
  EXPECT_EQ(bundled_scripts().at("summary").trigger.time, ClockTime::hm(19));
}

TEST(Validate, BundledScriptsAreClean) {
  for (const auto& [id, s] : bundled_scripts()) {
    auto ds = validate(s);
    EXPECT_TRUE(ds.empty()) << id << ": " << (ds.empty() ? "" : ds.front().message);
  }
}

TEST(Validate, UnreachableNodeIsAWarning) {
  auto s = parse_script(kMinimal);
  s.nodes.push_back({"orphan", CoachMessage{"lost", "end"}});
  auto ds = validate(s);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds[0].severity, Severity::warning);
  EXPECT_EQ(ds[0].node_id, "orphan");
  EXPECT_EQ(ds[0].message, "unreachable node");
}

TEST(Validate, ReadBeforeWriteIsUnbound) {
  auto s = parse_script(kMinimal);
  std::get<CoachMessage>(s.nodes[0].body).text = "Session at {training_time}";
  EXPECT_EQ(unbound_of(validate(s)), (std::set<std::pair<std::string, std::string>>{{"hello", "training_time"}}));
  s.inputs = {"training_time"};
  EXPECT_TRUE(validate(s).empty());
}

TEST(Validate, StructuralErrors) {
  auto s = parse_script(kMinimal);
  s.nodes[0].body = ChoiceQuestion{"one?", {{"only", Value{true}, "end"}}, "x", false};
  auto ds = validate(s);
  ASSERT_FALSE(ds.empty());
  EXPECT_EQ(ds[0].message, "choice question needs at least two options");

  auto loop = parse_script(kMinimal);
  loop.nodes[0].body = CoachMessage{"again", "hello"};
  auto dl = validate(loop);
  ASSERT_FALSE(dl.empty());
  EXPECT_EQ(dl[0].message, "node is its own successor");

  auto cycle = parse_script(kMinimal);
  cycle.nodes.insert(cycle.nodes.begin() + 1, ScriptNode{"back", ChoiceQuestion{"?", {{"x", Value{true}, "hello"},
                                                                                     {"y", Value{false}, "end"}},
                                                                               "v", false}});
  std::get<CoachMessage>(cycle.nodes[0].body).next = "back";
  auto dc = validate(cycle);
  ASSERT_EQ(dc.size(), 1u);
  EXPECT_EQ(dc[0].severity, Severity::error);
  EXPECT_EQ(dc[0].node_id, "back");
}

TEST(Validate, UnboundMatchesExhaustivePathWalk) {
  Gen g{std::mt19937_64{7}, false};
  std::size_t with_findings = 0;
  for (int i = 0; i < 500; ++i) {
    auto s = g.make();
    auto expected = unbound_oracle(s);
    EXPECT_EQ(unbound_of(validate(s)), expected) << serialize_script(s);
    with_findings += !expected.empty();
  }
  EXPECT_GT(with_findings, 50u);
}

TEST(Validate, DiagnosticsAreDeterministic) {
  Gen g{std::mt19937_64{11}, false};
  for (int i = 0; i < 100; ++i) {
    auto s = g.make();
    auto text = serialize_script(s);
    EXPECT_EQ(validate(parse_script(text)), validate(parse_script(text)));
  }
}

TEST(RoundTrip, ParseOfSerializeIsIdentity) {
  for (const auto& [id, s] : bundled_scripts()) {
    EXPECT_EQ(parse_script(serialize_script(s)), s) << id;
  }
  Gen g{std::mt19937_64{3}, false};
  for (int i = 0; i < 300; ++i) {
    auto s = g.make();
    if (i % 3 == 0) s.timeout_minutes = 1 + i % 30;
    if (i % 5 == 0) s.strict_empty_input = true;
    auto text = serialize_script(s);
    auto back = parse_script(text);
    EXPECT_EQ(back, s);
    EXPECT_EQ(serialize_script(back), text);
  }
}

TEST(Termination, ValidScriptsEndWithinBoundOnEveryInputSequence) {
  for (const auto& [id, s] : bundled_scripts()) {
    std::size_t runs = 0;
    EXPECT_LE(longest_run(s, runs), s.nodes.size() * max_options(s)) << id;
    EXPECT_GT(runs, 0u);
  }
  Gen g{std::mt19937_64{5}, true};
  int checked = 0;
  for (int i = 0; i < 20000 && checked < 150; ++i) {
    auto s = g.make();
    if (!validate(s).empty()) continue;
    ++checked;
    std::size_t runs = 0;
    EXPECT_LE(longest_run(s, runs), s.nodes.size() * max_options(s)) << serialize_script(s);
  }
  EXPECT_EQ(checked, 150);
}

TEST(Template, Substitution) {
  EXPECT_EQ(render_template("Hello {name}!", {{"name", std::string("Anna")}}), "Hello Anna!");
  EXPECT_EQ(render_template("Session at {training_time}", {{"training_time", ClockTime::hm(15)}}),
            "Session at 15:00");
  EXPECT_EQ(render_template("{{literal}} {n}", {{"n", std::int64_t{3}}}), "{literal} 3");
  try {
    render_template("Hi {name}", {});
    FAIL();
  } catch (const UnboundPlaceholder& e) {
    EXPECT_EQ(e.name(), "name");
  }
  EXPECT_EQ(placeholders("{a} and {b} and {a}"), (std::vector<std::string>{"a", "b", "a"}));
}

// Independent substitution oracle: a character scan over random templates.
TEST(Template, MatchesCharacterScanOracle) {
  std::mt19937_64 rng(13);
  const Bindings b{{"x", std::string("XX")}, {"yy", std::int64_t{42}}, {"t", ClockTime::hm(9, 5)}};
  const std::vector<std::string> pieces = {"a", " ", "{x}", "{yy}", "{t}", "{{", "}}", "z9"};
  for (int i = 0; i < 500; ++i) {
    std::string tpl;
    std::string want;
    const int len = std::uniform_int_distribution<int>(0, 10)(rng);
    for (int k = 0; k < len; ++k) {
      const auto& p = pieces[std::uniform_int_distribution<std::size_t>(0, pieces.size() - 1)(rng)];
      tpl += p;
      if (p == "{x}") want += "XX";
      else if (p == "{yy}") want += "42";
      else if (p == "{t}") want += "09:05";
      else if (p == "{{") want += "{";
      else if (p == "}}") want += "}";
      else want += p;
    }
    EXPECT_EQ(render_template(tpl, b), want) << tpl;
  }
}
