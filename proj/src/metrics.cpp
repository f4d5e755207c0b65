#include "rehabcoach/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace rehabcoach::metrics {

namespace {

constexpr std::array<std::string_view, 4> kOutcomeNames = {"success", "success_with_input", "completed_with_error",
                                                           "not_completed"};
constexpr std::array<Group, 2> kGroups = {Group::primary_user, Group::healthcare_professional};

std::optional<Rational> mean_of(const std::vector<int>& xs) {
  if (xs.empty()) return std::nullopt;
  std::int64_t sum = 0;
  for (int x : xs) sum += x;
  return Rational(sum, static_cast<std::int64_t>(xs.size()));
}

std::optional<Rational> mean_of(const std::vector<Rational>& xs) {
  if (xs.empty()) return std::nullopt;
  Rational sum{0};
  for (const auto& x : xs) sum += x;
  return sum / static_cast<std::int64_t>(xs.size());
}

int task_number(std::string_view id) {
  int k = 0;
  if (id.size() < 2 || id[0] != 'T') return 0;
  auto [p, ec] = std::from_chars(id.data() + 1, id.data() + id.size(), k);
  if (ec != std::errc{} || p != id.data() + id.size() || k < 1 || k > kTaskCount) return 0;
  return k;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw MetricsError(what);
}

}  // namespace

std::string_view to_string(Group g) { return g == Group::primary_user ? "primary_user" : "healthcare_professional"; }

Group group_from_string(std::string_view s) {
  if (s == "primary_user") return Group::primary_user;
  if (s == "healthcare_professional") return Group::healthcare_professional;
  throw MetricsError(fmt::format("unknown group '{}'", s));
}

void validate(const QuestionnaireResponse& r) {
  auto check = [&](const Likert& v, std::string_view what, std::size_t i) {
    if (v && (*v < 1 || *v > 7)) {
      throw InvalidResponse(fmt::format("{} {} item {} = {} outside 1..7", r.respondent_id, what, i + 1, *v));
    }
  };
  for (std::size_t i = 0; i < r.mauq.size(); ++i) check(r.mauq[i], "MAUQ", i);
  for (std::size_t i = 0; i < r.custom.size(); ++i) check(r.custom[i], "custom", i);
}

Subscale subscale_of(std::size_t item) {
  if (item < 1 || item > kMauqItems) throw std::out_of_range("MAUQ item index");
  if (item <= 5) return Subscale::ease_of_use;
  if (item <= 12) return Subscale::interface_satisfaction;
  return Subscale::usefulness;
}

MauqScores mauq_scores(const QuestionnaireResponse& r) {
  validate(r);
  std::vector<int> all;
  std::map<Subscale, std::vector<int>> parts;
  for (std::size_t i = 0; i < kMauqItems; ++i) {
    if (!r.mauq[i]) continue;
    all.push_back(*r.mauq[i]);
    parts[subscale_of(i + 1)].push_back(*r.mauq[i]);
  }
  auto overall = mean_of(all);
  if (!overall) throw AllItemsUnknown(r.respondent_id);
  return {*overall, mean_of(parts[Subscale::ease_of_use]), mean_of(parts[Subscale::interface_satisfaction]),
          mean_of(parts[Subscale::usefulness])};
}

std::string_view to_string(TaskOutcome o) { return kOutcomeNames.at(static_cast<std::size_t>(o)); }

TaskOutcome outcome_from_string(std::string_view s) {
  auto it = std::find(kOutcomeNames.begin(), kOutcomeNames.end(), s);
  if (it == kOutcomeNames.end()) throw MetricsError(fmt::format("unknown outcome '{}'", s));
  return static_cast<TaskOutcome>(it - kOutcomeNames.begin());
}

std::string task_id(int k) { return fmt::format("T{}", k); }

double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

std::optional<FiveNumber> five_number(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  FiveNumber f;
  f.n = n;
  f.min = v.front();
  f.max = v.back();
  f.median = median(v);
  if (n == 1) {
    f.q1 = f.q3 = v[0];
  } else {
    const std::size_t half = n / 2;
    f.q1 = median({v.begin(), v.begin() + static_cast<std::ptrdiff_t>(half)});
    f.q3 = median({v.end() - static_cast<std::ptrdiff_t>(half), v.end()});
  }
  return f;
}

std::vector<TaskStats> task_stats(const std::vector<TaskLog>& logs, const GroupLabels& groups,
                                  double notable_gap_seconds) {
  std::map<int, std::map<Group, std::vector<double>>> durations;
  std::map<int, std::map<Group, std::map<TaskOutcome, int>>> outcomes;
  std::set<Group> present;
  for (const auto& l : logs) {
    auto g = groups.find(l.respondent_id);
    if (g == groups.end()) continue;
    const int k = task_number(l.task_id);
    if (k == 0) throw MetricsError(fmt::format("unknown task '{}'", l.task_id));
    present.insert(g->second);
    outcomes[k][g->second][l.outcome] += 1;
    if (l.duration_seconds) durations[k][g->second].push_back(*l.duration_seconds);
  }
  std::vector<TaskStats> out;
  if (present.empty()) return out;
  for (int k = 1; k <= kTaskCount; ++k) {
    TaskStats s;
    s.task_id = task_id(k);
    std::vector<double> medians;
    for (Group g : kGroups) {
      if (!present.contains(g)) continue;
      s.durations[g] = five_number(durations[k][g]);
      s.outcomes[g] = outcomes[k][g];
      if (s.durations[g]) medians.push_back(s.durations[g]->median);
    }
    if (medians.size() >= 2) {
      auto [lo, hi] = std::minmax_element(medians.begin(), medians.end());
      s.median_gap = *hi - *lo;
      s.notable_gap = *s.median_gap > notable_gap_seconds;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<StatementSummary> custom_summaries(const std::vector<QuestionnaireResponse>& responses) {
  std::vector<StatementSummary> out;
  for (std::size_t i = 0; i < kCustomItems; ++i) {
    for (Group g : kGroups) {
      std::vector<int> xs;
      bool any = false;
      for (const auto& r : responses) {
        if (r.group != g) continue;
        any = true;
        validate(r);
        if (r.custom[i]) xs.push_back(*r.custom[i]);
      }
      if (!any) continue;
      StatementSummary s{i + 1, g, xs.size(), mean_of(xs), std::nullopt, std::nullopt};
      if (!xs.empty()) {
        s.min = *std::min_element(xs.begin(), xs.end());
        s.max = *std::max_element(xs.begin(), xs.end());
      }
      out.push_back(s);
    }
  }
  return out;
}

std::vector<GroupMauq> group_mauq(const std::vector<QuestionnaireResponse>& responses) {
  std::vector<GroupMauq> out;
  for (Group g : kGroups) {
    std::vector<Rational> overall, e, i, u;
    for (const auto& r : responses) {
      if (r.group != g) continue;
      MauqScores s;
      try {
        s = mauq_scores(r);
      } catch (const AllItemsUnknown&) {
        continue;
      }
      overall.push_back(s.overall);
      if (s.ease_of_use) e.push_back(*s.ease_of_use);
      if (s.interface_satisfaction) i.push_back(*s.interface_satisfaction);
      if (s.usefulness) u.push_back(*s.usefulness);
    }
    if (overall.empty()) continue;
    out.push_back({g, overall.size(), *mean_of(overall), *std::min_element(overall.begin(), overall.end()),
                   *std::max_element(overall.begin(), overall.end()), mean_of(e), mean_of(i), mean_of(u)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

std::string decimal(const Rational& r, int places) {
  std::int64_t scale = 1;
  for (int k = 0; k < places; ++k) scale *= 10;
  const bool negative = r < 0;
  const Rational a = negative ? -r : r;
  // round half away from zero: floor(a * scale + 1/2)
  const __int128 num = static_cast<__int128>(a.numerator()) * scale * 2 + a.denominator();
  const __int128 den = static_cast<__int128>(a.denominator()) * 2;
  const auto scaled = static_cast<std::int64_t>(num / den);
  std::string out = fmt::format("{}{}", negative && scaled != 0 ? "-" : "", scaled / scale);
  if (places > 0) out += fmt::format(".{:0{}}", scaled % scale, places);
  return out;
}

std::string seconds(double s) { return fmt::format("{:.3f}", s); }

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, touched = false;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    touched = false;
  };
  auto end_row = [&] {
    // Blank lines carry no record.
    if (touched || !row.empty()) {
      end_field();
      rows.push_back(std::move(row));
    }
    row.clear();
  };
  char c;
  while (in.get(c)) {
    if (quoted) {
      if (c != '"') {
        field += c;
      } else if (in.peek() == '"') {
        in.get(c);
        field += '"';
      } else {
        quoted = false;
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = touched = true;
        break;
      case ',':
        end_field();
        touched = true;
        break;
      case '\r':
        if (in.peek() == '\n') in.get(c);
        end_row();
        break;
      case '\n':
        end_row();
        break;
      default:
        field += c;
        touched = true;
    }
  }
  if (quoted) throw MetricsError("csv: unterminated quoted field");
  end_row();
  return rows;
}

namespace {

Likert likert_from(const std::string& s) {
  if (s == "idk" || s.empty()) return std::nullopt;
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw InvalidResponse(fmt::format("invalid Likert value '{}'", s));
  return v;
}

std::string likert_str(const Likert& v) { return v ? std::to_string(*v) : "idk"; }

std::string opt_decimal(const std::optional<Rational>& r) { return r ? decimal(*r) : ""; }

std::vector<std::string> respondents_in_order(const GroupLabels& groups) {
  std::vector<std::string> ids;
  for (Group g : kGroups) {
    for (const auto& [id, gg] : groups) {
      if (gg == g) ids.push_back(id);
    }
  }
  return ids;
}

void expect_header(const std::vector<std::vector<std::string>>& rows, const std::vector<std::string>& header,
                   std::string_view what) {
  if (rows.empty() || rows.front() != header) throw MetricsError(fmt::format("{}: unexpected header", what));
}

}  // namespace

void write_task_logs(std::ostream& out, const std::vector<TaskLog>& logs, const GroupLabels& groups) {
  out << "respondent,group,task,duration_seconds,outcome\n";
  for (const auto& l : logs) {
    auto g = groups.find(l.respondent_id);
    out << csv_field(l.respondent_id) << ',' << (g == groups.end() ? "" : to_string(g->second)) << ','
        << l.task_id << ',' << (l.duration_seconds ? seconds(*l.duration_seconds) : "") << ','
        << to_string(l.outcome) << '\n';
  }
}

TaskLogFile read_task_logs(std::istream& in) {
  auto rows = parse_csv(in);
  expect_header(rows, {"respondent", "group", "task", "duration_seconds", "outcome"}, "task log");
  TaskLogFile f;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 5) throw MetricsError(fmt::format("task log row {}: expected 5 fields", i));
    TaskLog l{r[0], r[2], std::nullopt, outcome_from_string(r[4])};
    if (task_number(l.task_id) == 0) throw MetricsError(fmt::format("task log row {}: unknown task '{}'", i, r[2]));
    if (!r[3].empty()) {
      try {
        l.duration_seconds = std::stod(r[3]);
      } catch (const std::exception&) {
        throw MetricsError(fmt::format("task log row {}: invalid duration '{}'", i, r[3]));
      }
      if (*l.duration_seconds < 0) throw MetricsError(fmt::format("task log row {}: negative duration", i));
    }
    if (!r[1].empty()) f.groups[l.respondent_id] = group_from_string(r[1]);
    f.logs.push_back(std::move(l));
  }
  return f;
}

void write_responses(std::ostream& out, const std::vector<QuestionnaireResponse>& responses) {
  out << "respondent,group";
  for (std::size_t i = 1; i <= kMauqItems; ++i) out << ",mauq" << i;
  for (std::size_t i = 1; i <= kCustomItems; ++i) out << ",custom" << i;
  out << '\n';
  for (const auto& r : responses) {
    out << csv_field(r.respondent_id) << ',' << to_string(r.group);
    for (const auto& v : r.mauq) out << ',' << likert_str(v);
    for (const auto& v : r.custom) out << ',' << likert_str(v);
    out << '\n';
  }
}

std::vector<QuestionnaireResponse> read_responses(std::istream& in) {
  auto rows = parse_csv(in);
  std::vector<std::string> header = {"respondent", "group"};
  for (std::size_t i = 1; i <= kMauqItems; ++i) header.push_back(fmt::format("mauq{}", i));
  for (std::size_t i = 1; i <= kCustomItems; ++i) header.push_back(fmt::format("custom{}", i));
  expect_header(rows, header, "responses");
  std::vector<QuestionnaireResponse> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != header.size()) throw InvalidResponse(fmt::format("responses row {}: expected {} fields", i, header.size()));
    QuestionnaireResponse r;
    r.respondent_id = row[0];
    r.group = group_from_string(row[1]);
    for (std::size_t k = 0; k < kMauqItems; ++k) r.mauq[k] = likert_from(row[2 + k]);
    for (std::size_t k = 0; k < kCustomItems; ++k) r.custom[k] = likert_from(row[2 + kMauqItems + k]);
    validate(r);
    out.push_back(std::move(r));
  }
  return out;
}

void write_heatmap(std::ostream& out, const std::vector<TaskLog>& logs, const GroupLabels& groups) {
  out << "respondent,group";
  for (int k = 1; k <= kTaskCount; ++k) out << ',' << task_id(k);
  out << '\n';
  std::map<std::string, std::array<std::string, kTaskCount>, std::less<>> cells;
  for (const auto& l : logs) {
    if (!groups.contains(l.respondent_id)) continue;
    const int k = task_number(l.task_id);
    if (k == 0) throw MetricsError(fmt::format("unknown task '{}'", l.task_id));
    cells[l.respondent_id][static_cast<std::size_t>(k - 1)] = std::string(to_string(l.outcome));
  }
  for (const auto& id : respondents_in_order(groups)) {
    auto it = cells.find(id);
    if (it == cells.end()) continue;
    out << csv_field(id) << ',' << to_string(groups.find(id)->second);
    for (const auto& c : it->second) out << ',' << c;
    out << '\n';
  }
}

void write_boxplots(std::ostream& out, const std::vector<TaskStats>& stats) {
  out << "task,group,n,min,q1,median,q3,max\n";
  for (const auto& s : stats) {
    for (const auto& [g, f] : s.durations) {
      out << s.task_id << ',' << to_string(g) << ',';
      if (f) {
        out << f->n << ',' << seconds(f->min) << ',' << seconds(f->q1) << ',' << seconds(f->median) << ','
            << seconds(f->q3) << ',' << seconds(f->max) << '\n';
      } else {
        out << "0,,,,,\n";
      }
    }
  }
}

void write_slower_tasks(std::ostream& out, const std::vector<TaskStats>& stats) {
  out << "task,median_primary_user,median_healthcare_professional,median_gap,notable\n";
  for (const auto& s : stats) {
    auto med = [&](Group g) -> std::string {
      auto it = s.durations.find(g);
      return it != s.durations.end() && it->second ? seconds(it->second->median) : "";
    };
    out << s.task_id << ',' << med(Group::primary_user) << ',' << med(Group::healthcare_professional) << ','
        << (s.median_gap ? seconds(*s.median_gap) : "") << ',' << (s.notable_gap ? "yes" : "no") << '\n';
  }
}

void write_mauq(std::ostream& out, const std::vector<QuestionnaireResponse>& responses) {
  out << "respondent,group,overall,ease_of_use,interface_satisfaction,usefulness\n";
  for (const auto& r : responses) {
    out << csv_field(r.respondent_id) << ',' << to_string(r.group) << ',';
    try {
      auto s = mauq_scores(r);
      out << decimal(s.overall) << ',' << opt_decimal(s.ease_of_use) << ','
          << opt_decimal(s.interface_satisfaction) << ',' << opt_decimal(s.usefulness) << '\n';
    } catch (const AllItemsUnknown&) {
      out << ",,,\n";
    }
  }
}

void write_mauq_groups(std::ostream& out, const std::vector<GroupMauq>& groups) {
  out << "group,n,overall_mean,overall_min,overall_max,ease_of_use_mean,interface_satisfaction_mean,usefulness_mean\n";
  for (const auto& g : groups) {
    out << to_string(g.group) << ',' << g.n << ',' << decimal(g.overall_mean) << ',' << decimal(g.overall_min) << ','
        << decimal(g.overall_max) << ',' << opt_decimal(g.ease_of_use_mean) << ','
        << opt_decimal(g.interface_satisfaction_mean) << ',' << opt_decimal(g.usefulness_mean) << '\n';
  }
}

void write_custom(std::ostream& out, const std::vector<StatementSummary>& summaries) {
  out << "statement,group,n,mean,min,max\n";
  for (const auto& s : summaries) {
    out << s.statement << ',' << to_string(s.group) << ',' << s.n << ',' << opt_decimal(s.mean) << ','
        << (s.min ? std::to_string(*s.min) : "") << ',' << (s.max ? std::to_string(*s.max) : "") << '\n';
  }
}

void export_reports(const ReportInput& input, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IOFailure(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  auto emit = [&](const char* name, auto&& writer) {
    std::ostringstream buf;
    writer(buf);
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    f << buf.str();
    f.close();
    if (!f) throw IOFailure(fmt::format("cannot write {}", (dir / name).string()));
  };
  const auto stats = task_stats(input.logs, input.groups, input.notable_gap_seconds);
  emit("heatmap.csv", [&](std::ostream& o) { write_heatmap(o, input.logs, input.groups); });
  emit("boxplots.csv", [&](std::ostream& o) { write_boxplots(o, stats); });
  emit("slower_tasks.csv", [&](std::ostream& o) { write_slower_tasks(o, stats); });
  emit("mauq.csv", [&](std::ostream& o) { write_mauq(o, input.responses); });
  emit("mauq_groups.csv", [&](std::ostream& o) { write_mauq_groups(o, group_mauq(input.responses)); });
  emit("custom.csv", [&](std::ostream& o) { write_custom(o, custom_summaries(input.responses)); });
}

}  // namespace rehabcoach::metrics
