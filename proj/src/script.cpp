#include "rehabcoach/script.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace rehabcoach::script {

using nlohmann::json;

SyntaxError::SyntaxError(std::size_t line, std::string reason)
    : ScriptError(fmt::format("line {}: {}", line, reason)), line_(line), reason_(std::move(reason)) {}

DanglingReference::DanglingReference(std::string node_id)
    : ScriptError(fmt::format("reference to unknown node '{}'", node_id)),
      node_id_(std::move(node_id)) {}

DuplicateNodeId::DuplicateNodeId(std::string node_id)
    : ScriptError(fmt::format("duplicate node id '{}'", node_id)), node_id_(std::move(node_id)) {}

UnboundPlaceholder::UnboundPlaceholder(std::string name)
    : ScriptError(fmt::format("unbound placeholder '{{{}}}'", name)), name_(std::move(name)) {}

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::coach_message: return "coach_message";
    case NodeKind::choice_question: return "choice_question";
    case NodeKind::free_text_prompt: return "free_text_prompt";
    case NodeKind::set_variable: return "set_variable";
    case NodeKind::branch: return "branch";
    case NodeKind::schedule_directive: return "schedule_directive";
    case NodeKind::end_interaction: return "end_interaction";
  }
  return "unknown";
}

std::vector<std::string> ScriptNode::successors() const {
  struct Visitor {
    std::vector<std::string> operator()(const CoachMessage& n) const { return {n.next}; }
    std::vector<std::string> operator()(const ChoiceQuestion& n) const {
      std::vector<std::string> out;
      for (const auto& o : n.options) out.push_back(o.next);
      return out;
    }
    std::vector<std::string> operator()(const FreeTextPrompt& n) const { return {n.next}; }
    std::vector<std::string> operator()(const SetVariable& n) const { return {n.next}; }
    std::vector<std::string> operator()(const Branch& n) const {
      std::vector<std::string> out;
      for (const auto& c : n.cases) out.push_back(c.next);
      out.push_back(n.otherwise);
      return out;
    }
    std::vector<std::string> operator()(const ScheduleDirective& n) const { return {n.next}; }
    std::vector<std::string> operator()(const EndInteraction&) const { return {}; }
  };
  return std::visit(Visitor{}, body);
}

const ScriptNode* InteractionScript::find(std::string_view node_id) const {
  auto it = std::find_if(nodes.begin(), nodes.end(),
                         [&](const ScriptNode& n) { return n.id == node_id; });
  return it == nodes.end() ? nullptr : &*it;
}

const ScriptNode& InteractionScript::node(std::string_view node_id) const {
  const ScriptNode* n = find(node_id);
  if (n == nullptr) throw DanglingReference(std::string(node_id));
  return *n;
}

const std::vector<std::string>& profile_variables() {
  static const std::vector<std::string> vars = {"name", "can_type_on_phone", "can_walk", "avatar"};
  return vars;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

std::size_t line_at(std::string_view doc, std::size_t byte) {
  byte = std::min(byte, doc.size());
  return 1 + static_cast<std::size_t>(std::count(doc.begin(), doc.begin() + byte, '\n'));
}

// Line of the `"id": "<node_id>"` member, or 1 when it cannot be located.
std::size_t line_of_node(std::string_view doc, std::string_view node_id) {
  const std::string key = "\"id\"";
  const std::string quoted = json(std::string(node_id)).dump();
  for (auto pos = doc.find(key); pos != std::string_view::npos; pos = doc.find(key, pos + 1)) {
    auto p = pos + key.size();
    while (p < doc.size() && (doc[p] == ' ' || doc[p] == '\t' || doc[p] == '\n' || doc[p] == '\r')) ++p;
    if (p >= doc.size() || doc[p] != ':') continue;
    ++p;
    while (p < doc.size() && (doc[p] == ' ' || doc[p] == '\t' || doc[p] == '\n' || doc[p] == '\r')) ++p;
    if (doc.substr(p, quoted.size()) == quoted) return line_at(doc, pos);
  }
  return 1;
}

class NodeReader {
 public:
  NodeReader(std::string_view doc, const json& j, std::string where, std::size_t line)
      : doc_(doc), j_(j), where_(std::move(where)), line_(line) {}

  [[noreturn]] void fail(const std::string& reason) const {
    throw SyntaxError(line_, fmt::format("{}: {}", where_, reason));
  }

  void allow_only(std::initializer_list<std::string_view> keys) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
        fail(fmt::format("unexpected field '{}'", it.key()));
      }
    }
  }

  const json& get(std::string_view key) const {
    auto it = j_.find(key);
    if (it == j_.end()) fail(fmt::format("missing field '{}'", key));
    return *it;
  }

  std::string str(std::string_view key) const {
    const json& v = get(key);
    if (!v.is_string()) fail(fmt::format("field '{}' must be a string", key));
    return v.get<std::string>();
  }

  std::string id(std::string_view key) const {
    std::string s = str(key);
    if (s.empty()) fail(fmt::format("field '{}' must not be empty", key));
    return s;
  }

  bool flag(std::string_view key) const {
    auto it = j_.find(key);
    if (it == j_.end()) return false;
    if (!it->is_boolean()) fail(fmt::format("field '{}' must be a boolean", key));
    return it->get<bool>();
  }

  Value value(const json& v) const {
    try {
      return value_from_json(v);
    } catch (const std::exception& e) {
      fail(e.what());
    }
  }

  const json& array(std::string_view key) const {
    const json& v = get(key);
    if (!v.is_array()) fail(fmt::format("field '{}' must be an array", key));
    return v;
  }

  NodeReader child(const json& j, std::string where) const {
    if (!j.is_object()) fail(fmt::format("{} must be an object", where));
    return NodeReader(doc_, j, where_ + " " + where, line_);
  }

  const json& raw() const { return j_; }

 private:
  std::string_view doc_;
  const json& j_;
  std::string where_;
  std::size_t line_;
};

TimeSource parse_time_source(const NodeReader& r) {
  const json& t = r.get("time");
  if (!t.is_object() || t.size() != 1) r.fail("field 'time' must be one of {at|variable|offset_minutes}");
  try {
    if (t.contains("at") && t["at"].is_string()) return ClockTime::parse(t["at"].get<std::string>());
    if (t.contains("variable") && t["variable"].is_string()) {
      return TimeFromVariable{t["variable"].get<std::string>()};
    }
    if (t.contains("offset_minutes") && t["offset_minutes"].is_number_integer()) {
      return TimeOffset{std::chrono::minutes{t["offset_minutes"].get<int>()}};
    }
  } catch (const TimeFormatError& e) {
    r.fail(e.what());
  }
  r.fail("field 'time' must be one of {at|variable|offset_minutes}");
}

ScriptNode parse_node(std::string_view doc, const json& j, std::size_t index) {
  if (!j.is_object()) throw SyntaxError(1, fmt::format("nodes[{}] must be an object", index));
  std::string where = fmt::format("nodes[{}]", index);
  std::size_t line = 1;
  if (auto it = j.find("id"); it != j.end() && it->is_string()) {
    line = line_of_node(doc, it->get<std::string>());
    where = fmt::format("node '{}'", it->get<std::string>());
  }
  NodeReader r(doc, j, where, line);
  ScriptNode node;
  node.id = r.id("id");
  const std::string kind = r.str("kind");
  if (kind == "coach_message") {
    r.allow_only({"id", "kind", "text", "next"});
    node.body = CoachMessage{r.str("text"), r.id("next")};
  } else if (kind == "choice_question") {
    r.allow_only({"id", "kind", "prompt", "variable", "options", "feedback"});
    ChoiceQuestion q{r.str("prompt"), {}, r.id("variable"), r.flag("feedback")};
    const json& opts = r.array("options");
    for (std::size_t i = 0; i < opts.size(); ++i) {
      NodeReader o = r.child(opts[i], fmt::format("options[{}]", i));
      o.allow_only({"label", "value", "next"});
      std::string label = o.str("label");
      Value v = o.raw().contains("value") ? o.value(o.raw()["value"]) : Value{label};
      q.options.push_back({std::move(label), std::move(v), o.id("next")});
    }
    node.body = std::move(q);
  } else if (kind == "free_text_prompt") {
    r.allow_only({"id", "kind", "prompt", "variable", "next", "feedback"});
    node.body = FreeTextPrompt{r.str("prompt"), r.id("variable"), r.id("next"), r.flag("feedback")};
  } else if (kind == "set_variable") {
    r.allow_only({"id", "kind", "variable", "value", "next"});
    node.body = SetVariable{r.id("variable"), r.value(r.get("value")), r.id("next")};
  } else if (kind == "branch") {
    r.allow_only({"id", "kind", "variable", "cases", "otherwise"});
    Branch b{r.id("variable"), {}, r.id("otherwise")};
    const json& cases = r.array("cases");
    for (std::size_t i = 0; i < cases.size(); ++i) {
      NodeReader c = r.child(cases[i], fmt::format("cases[{}]", i));
      c.allow_only({"equals", "next"});
      b.cases.push_back({c.value(c.get("equals")), c.id("next")});
    }
    node.body = std::move(b);
  } else if (kind == "schedule_directive") {
    r.allow_only({"id", "kind", "target", "time", "next"});
    node.body = ScheduleDirective{r.id("target"), parse_time_source(r), r.id("next")};
  } else if (kind == "end_interaction") {
    r.allow_only({"id", "kind", "status"});
    if (j.contains("status") && j["status"] != "completed") {
      r.fail("end_interaction status must be 'completed'");
    }
    node.body = EndInteraction{};
  } else {
    r.fail(fmt::format("unknown node kind '{}'", kind));
  }
  return node;
}

Trigger parse_trigger(const NodeReader& top) {
  NodeReader r = top.child(top.get("trigger"), "trigger");
  const std::string type = r.str("type");
  Trigger t;
  if (type == "first_app_open") {
    r.allow_only({"type"});
    t.kind = TriggerKind::first_app_open;
  } else if (type == "fixed_daily_time") {
    r.allow_only({"type", "time"});
    t.kind = TriggerKind::fixed_daily_time;
    try {
      t.time = ClockTime::parse(r.str("time"));
    } catch (const TimeFormatError& e) {
      r.fail(e.what());
    }
  } else if (type == "planned_time") {
    r.allow_only({"type", "slot"});
    t.kind = TriggerKind::planned_time;
    t.slot = r.id("slot");
  } else if (type == "user_initiated") {
    r.allow_only({"type"});
    t.kind = TriggerKind::user_initiated;
  } else {
    r.fail(fmt::format("unknown trigger type '{}'", type));
  }
  return t;
}

json time_source_to_json(const TimeSource& t) {
  struct Visitor {
    json operator()(ClockTime c) const { return {{"at", c.str()}}; }
    json operator()(const TimeFromVariable& v) const { return {{"variable", v.variable}}; }
    json operator()(const TimeOffset& o) const { return {{"offset_minutes", o.offset.count()}}; }
  };
  return std::visit(Visitor{}, t);
}

json node_to_json(const ScriptNode& n) {
  json j;
  j["id"] = n.id;
  j["kind"] = std::string(to_string(n.kind()));
  struct Visitor {
    json& j;
    void operator()(const CoachMessage& m) const {
      j["text"] = m.text;
      j["next"] = m.next;
    }
    void operator()(const ChoiceQuestion& q) const {
      j["prompt"] = q.prompt;
      j["variable"] = q.variable;
      if (q.feedback) j["feedback"] = true;
      j["options"] = json::array();
      for (const auto& o : q.options) {
        j["options"].push_back({{"label", o.label}, {"value", value_to_json(o.value)}, {"next", o.next}});
      }
    }
    void operator()(const FreeTextPrompt& p) const {
      j["prompt"] = p.prompt;
      j["variable"] = p.variable;
      if (p.feedback) j["feedback"] = true;
      j["next"] = p.next;
    }
    void operator()(const SetVariable& s) const {
      j["variable"] = s.variable;
      j["value"] = value_to_json(s.value);
      j["next"] = s.next;
    }
    void operator()(const Branch& b) const {
      j["variable"] = b.variable;
      j["cases"] = json::array();
      for (const auto& c : b.cases) j["cases"].push_back({{"equals", value_to_json(c.equals)}, {"next", c.next}});
      j["otherwise"] = b.otherwise;
    }
    void operator()(const ScheduleDirective& d) const {
      j["target"] = d.target;
      j["time"] = time_source_to_json(d.time);
      j["next"] = d.next;
    }
    void operator()(const EndInteraction&) const { j["status"] = "completed"; }
  };
  std::visit(Visitor{j}, n.body);
  return j;
}

}  // namespace

InteractionScript parse_script(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document.begin(), document.end());
  } catch (const json::parse_error& e) {
    std::string what = e.what();
    throw SyntaxError(line_at(document, e.byte == 0 ? 0 : e.byte - 1), what);
  }
  if (!doc.is_object()) throw SyntaxError(1, "document must be a JSON object");

  NodeReader top(document, doc, "script", 1);
  top.allow_only({"script_id", "trigger", "entry", "nodes", "inputs", "timeout_minutes",
                  "strict_empty_input", "description"});
  InteractionScript s;
  s.script_id = top.id("script_id");
  s.trigger = parse_trigger(top);
  s.entry = top.id("entry");
  if (doc.contains("timeout_minutes")) {
    const json& t = doc["timeout_minutes"];
    if (!t.is_number_integer() || t.get<int>() <= 0) {
      top.fail("timeout_minutes must be a positive integer");
    }
    s.timeout_minutes = t.get<int>();
  }
  s.strict_empty_input = top.flag("strict_empty_input");
  if (doc.contains("inputs")) {
    for (const json& v : top.array("inputs")) {
      if (!v.is_string()) top.fail("inputs must be strings");
      s.inputs.push_back(v.get<std::string>());
    }
  }
  const json& nodes = top.array("nodes");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    ScriptNode n = parse_node(document, nodes[i], i);
    if (!seen.insert(n.id).second) throw DuplicateNodeId(n.id);
    s.nodes.push_back(std::move(n));
  }
  if (!seen.contains(s.entry)) throw DanglingReference(s.entry);
  for (const auto& n : s.nodes) {
    for (const auto& next : n.successors()) {
      if (!seen.contains(next)) throw DanglingReference(next);
    }
  }
  return s;
}

std::string serialize_script(const InteractionScript& s) {
  json j;
  j["script_id"] = s.script_id;
  switch (s.trigger.kind) {
    case TriggerKind::first_app_open: j["trigger"] = {{"type", "first_app_open"}}; break;
    case TriggerKind::fixed_daily_time:
      j["trigger"] = {{"type", "fixed_daily_time"}, {"time", s.trigger.time.str()}};
      break;
    case TriggerKind::planned_time:
      j["trigger"] = {{"type", "planned_time"}, {"slot", s.trigger.slot}};
      break;
    case TriggerKind::user_initiated: j["trigger"] = {{"type", "user_initiated"}}; break;
  }
  j["entry"] = s.entry;
  if (s.timeout_minutes) j["timeout_minutes"] = *s.timeout_minutes;
  if (s.strict_empty_input) j["strict_empty_input"] = true;
  if (!s.inputs.empty()) j["inputs"] = s.inputs;
  j["nodes"] = json::array();
  for (const auto& n : s.nodes) j["nodes"].push_back(node_to_json(n));
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Templates

namespace {

bool is_name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

// Walks a template, calling on_text for literal runs and on_name for
// placeholders.
template <typename OnText, typename OnName>
void scan_template(std::string_view text, OnText on_text, OnName on_name) {
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c == '{' && i + 1 < text.size() && text[i + 1] == '{') {
      on_text(std::string_view("{"));
      i += 2;
      continue;
    }
    if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
      on_text(std::string_view("}"));
      i += 2;
      continue;
    }
    if (c == '{') {
      std::size_t j = i + 1;
      while (j < text.size() && is_name_char(text[j])) ++j;
      if (j < text.size() && text[j] == '}' && j > i + 1) {
        on_name(text.substr(i + 1, j - i - 1));
        i = j + 1;
        continue;
      }
    }
    on_text(text.substr(i, 1));
    ++i;
  }
}

}  // namespace

std::vector<std::string> placeholders(std::string_view text) {
  std::vector<std::string> out;
  scan_template(text, [](std::string_view) {}, [&](std::string_view n) { out.emplace_back(n); });
  return out;
}

std::string render_template(std::string_view text, const Bindings& bindings) {
  std::string out;
  out.reserve(text.size());
  scan_template(
      text, [&](std::string_view t) { out.append(t); },
      [&](std::string_view name) {
        auto it = bindings.find(std::string(name));
        if (it == bindings.end()) throw UnboundPlaceholder(std::string(name));
        out += display(it->second);
      });
  return out;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

struct NodeDataflow {
  std::vector<std::string> reads;
  std::optional<std::string> write;
};

NodeDataflow dataflow_of(const ScriptNode& n) {
  NodeDataflow d;
  struct Visitor {
    NodeDataflow& d;
    void add(std::string_view text) const {
      for (auto& p : placeholders(text)) d.reads.push_back(std::move(p));
    }
    void operator()(const CoachMessage& m) const { add(m.text); }
    void operator()(const ChoiceQuestion& q) const {
      add(q.prompt);
      for (const auto& o : q.options) add(o.label);
      d.write = q.variable;
    }
    void operator()(const FreeTextPrompt& p) const {
      add(p.prompt);
      d.write = p.variable;
    }
    void operator()(const SetVariable& s) const { d.write = s.variable; }
    void operator()(const Branch& b) const { d.reads.push_back(b.variable); }
    void operator()(const ScheduleDirective& s) const {
      if (auto* v = std::get_if<TimeFromVariable>(&s.time)) d.reads.push_back(v->variable);
    }
    void operator()(const EndInteraction&) const {}
  };
  std::visit(Visitor{d}, n.body);
  return d;
}

}  // namespace

std::vector<Diagnostic> validate(const InteractionScript& s) {
  std::vector<Diagnostic> out;
  auto error = [&](const std::string& id, std::string msg) {
    out.push_back({Severity::error, id, std::move(msg)});
  };

  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < s.nodes.size(); ++i) index.emplace(s.nodes[i].id, i);

  if (s.timeout_minutes && *s.timeout_minutes <= 0) error("", "timeout_minutes must be positive");
  if (!index.contains(s.entry)) {
    error(s.entry, "entry node does not exist");
    return out;
  }

  // Per-node structure.
  std::vector<std::vector<std::size_t>> succ(s.nodes.size());
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    const ScriptNode& n = s.nodes[i];
    if (const auto* q = std::get_if<ChoiceQuestion>(&n.body); q && q->options.size() < 2) {
      error(n.id, "choice question needs at least two options");
    }
    for (const auto& next : n.successors()) {
      if (next == n.id) error(n.id, "node is its own successor");
      auto it = index.find(next);
      if (it == index.end()) {
        error(n.id, fmt::format("reference to unknown node '{}'", next));
      } else if (std::find(succ[i].begin(), succ[i].end(), it->second) == succ[i].end()) {
        succ[i].push_back(it->second);
      }
    }
  }

  // Reachability.
  std::vector<bool> reachable(s.nodes.size(), false);
  std::vector<std::size_t> stack{index.at(s.entry)};
  reachable[stack.back()] = true;
  while (!stack.empty()) {
    std::size_t i = stack.back();
    stack.pop_back();
    for (std::size_t j : succ[i]) {
      if (!reachable[j]) {
        reachable[j] = true;
        stack.push_back(j);
      }
    }
  }
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    if (!reachable[i]) out.push_back({Severity::warning, s.nodes[i].id, "unreachable node"});
  }

  // Cycles (self-loops are reported above).
  enum class Mark { none, open, closed };
  std::vector<Mark> mark(s.nodes.size(), Mark::none);
  std::function<void(std::size_t)> dfs = [&](std::size_t i) {
    mark[i] = Mark::open;
    for (std::size_t j : succ[i]) {
      if (mark[j] == Mark::open && j != i) {
        error(s.nodes[i].id, fmt::format("cycle back to node '{}'; runs may not terminate", s.nodes[j].id));
      } else if (mark[j] == Mark::none) {
        dfs(j);
      }
    }
    mark[i] = Mark::closed;
  };
  dfs(index.at(s.entry));

  // Every reachable node must be able to reach an end node.
  std::vector<bool> reaches_end(s.nodes.size(), false);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < s.nodes.size(); ++i) {
      if (reaches_end[i]) continue;
      bool r = s.nodes[i].kind() == NodeKind::end_interaction;
      for (std::size_t j : succ[i]) r = r || reaches_end[j];
      if (r) reaches_end[i] = changed = true;
    }
  }
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    if (reachable[i] && !reaches_end[i]) error(s.nodes[i].id, "no path to an end_interaction node");
  }

  // Must-defined variables: forward intersection dataflow to a fixpoint.
  std::set<std::string> known(profile_variables().begin(), profile_variables().end());
  known.insert(s.inputs.begin(), s.inputs.end());
  std::set<std::string> universe = known;
  std::vector<NodeDataflow> flow;
  for (const auto& n : s.nodes) {
    flow.push_back(dataflow_of(n));
    if (flow.back().write) universe.insert(*flow.back().write);
  }
  std::vector<std::vector<std::size_t>> preds(s.nodes.size());
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    if (!reachable[i]) continue;
    for (std::size_t j : succ[i]) preds[j].push_back(i);
  }
  const std::size_t entry = index.at(s.entry);
  std::vector<std::set<std::string>> defined_in(s.nodes.size(), universe);
  defined_in[entry] = known;
  auto defined_out = [&](std::size_t i) {
    auto d = defined_in[i];
    if (flow[i].write) d.insert(*flow[i].write);
    return d;
  };
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < s.nodes.size(); ++i) {
      if (!reachable[i] || i == entry) continue;
      std::set<std::string> in = universe;
      for (std::size_t p : preds[i]) {
        auto o = defined_out(p);
        std::set<std::string> meet;
        std::set_intersection(in.begin(), in.end(), o.begin(), o.end(), std::inserter(meet, meet.end()));
        in = std::move(meet);
      }
      if (in != defined_in[i]) {
        defined_in[i] = std::move(in);
        changed = true;
      }
    }
  }
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    if (!reachable[i]) continue;
    std::set<std::string> reported;
    for (const auto& v : flow[i].reads) {
      if (!defined_in[i].contains(v) && reported.insert(v).second) {
        error(s.nodes[i].id, fmt::format("unbound variable '{}'", v));
      }
    }
  }
  return out;
}

ScriptLibrary load_library(const std::string& directory) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(directory)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  ScriptLibrary lib;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream ss;
    ss << in.rdbuf();
    InteractionScript s;
    try {
      s = parse_script(ss.str());
    } catch (const ScriptError& e) {
      throw ScriptError(fmt::format("{}: {}", f.filename().string(), e.what()));
    }
    std::string id = s.script_id;
    if (!lib.emplace(id, std::move(s)).second) {
      throw ScriptError(fmt::format("{}: duplicate script_id '{}'", f.filename().string(), id));
    }
  }
  return lib;
}

}  // namespace rehabcoach::script
