#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "rehabcoach/metrics.hpp"

using namespace rehabcoach;
using namespace rehabcoach::metrics;
using namespace rehabcoach::testing::oracle;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> csv_rows(const std::string& s) {
  std::istringstream in(s);
  return parse_csv(in);
}

struct TempDir {
  fs::path path = fs::temp_directory_path() / ("rc-metrics-" + std::to_string(::getpid()));
  TempDir() { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Mauq, ConstantResponse) {
  QuestionnaireResponse r;
  r.mauq.fill(1);
  auto s = mauq_scores(r);
  EXPECT_EQ(s.overall, Rational(1));
  EXPECT_EQ(s.ease_of_use, Rational(1));
  EXPECT_EQ(s.interface_satisfaction, Rational(1));
  EXPECT_EQ(s.usefulness, Rational(1));
}

TEST(Mauq, UnknownIsExcludedFromTheMean) {
  QuestionnaireResponse r;
  r.mauq.fill(4);
  r.mauq[0] = 1;
  r.mauq[1] = 2;
  r.mauq[2] = std::nullopt;
  r.mauq[3] = 1;
  r.mauq[4] = 2;
  EXPECT_EQ(mauq_scores(r).ease_of_use, Rational(3, 2));
}

TEST(Mauq, SubscalePartition) {
  for (std::size_t i = 1; i <= 5; ++i) EXPECT_EQ(subscale_of(i), Subscale::ease_of_use);
  for (std::size_t i = 6; i <= 12; ++i) EXPECT_EQ(subscale_of(i), Subscale::interface_satisfaction);
  for (std::size_t i = 13; i <= 18; ++i) EXPECT_EQ(subscale_of(i), Subscale::usefulness);
  EXPECT_THROW(subscale_of(0), std::out_of_range);
  EXPECT_THROW(subscale_of(19), std::out_of_range);
}

TEST(Mauq, MatchesBruteForceReferenceOnRandomResponses) {
  std::mt19937_64 rng(2024);
  int scored = 0;
  for (int k = 0; k < 1000; ++k) {
    // Unknown rates up to 0.9 so that empty subscales occur.
    auto r = random_response(rng, "r" + std::to_string(k), (k % 10) / 10.0);
    if (!any_numeric(r)) {
      EXPECT_THROW(mauq_scores(r), AllItemsUnknown);
      continue;
    }
    ++scored;
    auto s = mauq_scores(r);
    const auto all = ref_mean(r, 0, 18);
    EXPECT_EQ(s.overall * all.count, Rational(all.sum)) << k;
    EXPECT_TRUE(same(s.ease_of_use, ref_mean(r, 0, 5))) << k;
    EXPECT_TRUE(same(s.interface_satisfaction, ref_mean(r, 5, 12))) << k;
    EXPECT_TRUE(same(s.usefulness, ref_mean(r, 12, 18))) << k;
  }
  EXPECT_GT(scored, 900);
}

TEST(Mauq, PerturbingItemSixOnlyMovesInterfaceAndOverall) {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 1000; ++k) {
    auto r = random_response(rng, "r", 0.15);
    r.mauq[5] = static_cast<int>(rng() % 7) + 1;
    auto p = r;
    const int delta = static_cast<int>(rng() % 6) + 1;
    p.mauq[5] = (*r.mauq[5] - 1 + delta) % 7 + 1;
    auto a = mauq_scores(r), b = mauq_scores(p);
    EXPECT_EQ(a.ease_of_use, b.ease_of_use);
    EXPECT_EQ(a.usefulness, b.usefulness);
    EXPECT_NE(a.interface_satisfaction, b.interface_satisfaction);
    EXPECT_NE(a.overall, b.overall);

    // Item 6 turned unknown: still no effect outside its subscale.
    auto u = r;
    u.mauq[5] = std::nullopt;
    if (!any_numeric(u)) continue;
    auto c = mauq_scores(u);
    EXPECT_EQ(a.ease_of_use, c.ease_of_use);
    EXPECT_EQ(a.usefulness, c.usefulness);
  }
}

TEST(Mauq, PermutationWithinSubscaleAndUnknownInsertion) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 500; ++k) {
    auto r = random_response(rng, "r", 0.2);
    if (!any_numeric(r)) continue;
    auto shuffled = r;
    std::shuffle(shuffled.mauq.begin(), shuffled.mauq.begin() + 5, rng);
    std::shuffle(shuffled.mauq.begin() + 5, shuffled.mauq.begin() + 12, rng);
    std::shuffle(shuffled.mauq.begin() + 12, shuffled.mauq.end(), rng);
    EXPECT_EQ(mauq_scores(shuffled), mauq_scores(r));

    // Dropping a numeric item as unknown equals scoring without it.
    const std::size_t i = rng() % kMauqItems;
    auto dropped = r;
    dropped.mauq[i] = std::nullopt;
    if (!any_numeric(dropped)) continue;
    auto s = mauq_scores(dropped);
    EXPECT_EQ(s.overall * ref_mean(dropped, 0, 18).count, Rational(ref_mean(dropped, 0, 18).sum));
    EXPECT_TRUE(same(s.ease_of_use, ref_mean(dropped, 0, 5)));
    EXPECT_TRUE(same(s.interface_satisfaction, ref_mean(dropped, 5, 12)));
    EXPECT_TRUE(same(s.usefulness, ref_mean(dropped, 12, 18)));
  }
}

TEST(Mauq, OverallIsTheItemMeanNotTheMeanOfSubscales) {
  QuestionnaireResponse r;
  for (std::size_t i = 0; i < 5; ++i) r.mauq[i] = 1;
  r.mauq[5] = 7;  // the only numeric item of I
  for (std::size_t i = 12; i < 18; ++i) r.mauq[i] = 1;
  auto s = mauq_scores(r);
  // (5*1 + 7 + 6*1) / 12 = 3/2, while the subscale means average to 3.
  EXPECT_EQ(s.overall, Rational(3, 2));
  EXPECT_EQ((*s.ease_of_use + *s.interface_satisfaction + *s.usefulness) / 3, Rational(3));
}

TEST(Mauq, EmptySubscaleIsAbsent) {
  QuestionnaireResponse r;
  r.mauq.fill(3);
  for (std::size_t i = 12; i < 18; ++i) r.mauq[i] = std::nullopt;
  auto s = mauq_scores(r);
  EXPECT_FALSE(s.usefulness);
  EXPECT_EQ(s.overall, Rational(3));
}

TEST(Mauq, Errors) {
  QuestionnaireResponse r;
  r.respondent_id = "p9";
  EXPECT_THROW(mauq_scores(r), AllItemsUnknown);
  r.mauq.fill(4);
  r.mauq[3] = 8;
  EXPECT_THROW(mauq_scores(r), InvalidResponse);
  r.mauq[3] = 0;
  EXPECT_THROW(mauq_scores(r), InvalidResponse);
  r.mauq[3] = 4;
  r.custom[2] = 9;
  EXPECT_THROW(validate(r), InvalidResponse);
}

TEST(Summaries, GroupMeansAndCustomStatements) {
  QuestionnaireResponse a{"p1", Group::primary_user, {}, {}};
  a.mauq.fill(1);
  a.custom = {1, 2, std::nullopt, 7};
  QuestionnaireResponse b{"p2", Group::primary_user, {}, {}};
  b.mauq.fill(2);
  b.custom = {3, std::nullopt, std::nullopt, 5};
  QuestionnaireResponse c{"h1", Group::healthcare_professional, {}, {}};  // all unknown
  auto g = group_mauq({a, b, c});
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].n, 2u);
  EXPECT_EQ(g[0].overall_mean, Rational(3, 2));
  EXPECT_EQ(g[0].overall_min, Rational(1));
  EXPECT_EQ(g[0].overall_max, Rational(2));

  auto cs = custom_summaries({a, b, c});
  ASSERT_EQ(cs.size(), 8u);
  EXPECT_EQ(cs[0], (StatementSummary{1, Group::primary_user, 2, Rational(2), 1, 3}));
  EXPECT_EQ(cs[2], (StatementSummary{2, Group::primary_user, 1, Rational(2), 2, 2}));
  EXPECT_EQ(cs[4], (StatementSummary{3, Group::primary_user, 0, std::nullopt, std::nullopt, std::nullopt}));
  EXPECT_EQ(cs[7], (StatementSummary{4, Group::healthcare_professional, 0, std::nullopt, std::nullopt, std::nullopt}));
}

TEST(Stats, MedianConvention) {
  EXPECT_EQ(median({10, 20, 30}), 20);
  EXPECT_EQ(median({30, 10, 40, 20}), 25);
  EXPECT_EQ(median({5}), 5);
  EXPECT_FALSE(five_number({}));
  EXPECT_EQ(*five_number({7}), (FiveNumber{1, 7, 7, 7, 7, 7}));
  EXPECT_EQ(*five_number({1, 2, 3, 4, 5}), (FiveNumber{5, 1, 1.5, 3, 4.5, 5}));
  EXPECT_EQ(*five_number({4, 1, 3, 2}), (FiveNumber{4, 1, 1.5, 2.5, 3.5, 4}));
}

TEST(Stats, FiveNumberMatchesReference) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 500; ++k) {
    std::vector<double> v(1 + rng() % 40);
    for (auto& x : v) x = static_cast<double>(rng() % 100000) / 1000.0;
    EXPECT_EQ(*five_number(v), ref_five(v));
  }
}

TEST(Stats, TaskStatsMatchBruteForce) {
  std::mt19937_64 rng(77);
  for (int round = 0; round < 40; ++round) {
    GroupLabels groups;
    const int people = 1 + static_cast<int>(rng() % 12);
    for (int p = 0; p < people; ++p) {
      groups["r" + std::to_string(p)] = rng() % 2 ? Group::primary_user : Group::healthcare_professional;
    }
    std::vector<TaskLog> logs;
    const std::size_t n = rng() % 1001;
    for (std::size_t i = 0; i < n; ++i) {
      TaskLog l;
      l.respondent_id = "r" + std::to_string(rng() % static_cast<unsigned>(people + 2));  // some unlabelled
      l.task_id = task_id(1 + static_cast<int>(rng() % 15));
      l.outcome = static_cast<TaskOutcome>(rng() % 4);
      if (l.outcome != TaskOutcome::not_completed) l.duration_seconds = static_cast<double>(rng() % 90000) / 1000.0;
      logs.push_back(l);
    }
    auto stats = task_stats(logs, groups, 6.0);

    std::set<Group> present;
    for (const auto& l : logs) {
      if (groups.count(l.respondent_id)) present.insert(groups.at(l.respondent_id));
    }
    if (present.empty()) {
      EXPECT_TRUE(stats.empty());
      continue;
    }
    ASSERT_EQ(stats.size(), 15u);
    for (int t = 1; t <= 15; ++t) {
      const auto& s = stats[static_cast<std::size_t>(t - 1)];
      EXPECT_EQ(s.task_id, "T" + std::to_string(t));
      std::vector<double> medians;
      for (Group g : {Group::primary_user, Group::healthcare_professional}) {
        if (!present.count(g)) {
          EXPECT_FALSE(s.durations.count(g));
          continue;
        }
        std::vector<double> d;
        std::map<TaskOutcome, int> counts;
        for (const auto& l : logs) {
          auto it = groups.find(l.respondent_id);
          if (it == groups.end() || it->second != g || l.task_id != s.task_id) continue;
          counts[l.outcome]++;
          if (l.duration_seconds) d.push_back(*l.duration_seconds);
        }
        EXPECT_EQ(s.outcomes.at(g), counts);
        if (d.empty()) {
          EXPECT_FALSE(s.durations.at(g));
        } else {
          EXPECT_EQ(*s.durations.at(g), ref_five(d));
          medians.push_back(ref_median(d));
        }
      }
      if (medians.size() == 2) {
        ASSERT_TRUE(s.median_gap);
        EXPECT_EQ(*s.median_gap, std::abs(medians[0] - medians[1]));
        EXPECT_EQ(s.notable_gap, std::abs(medians[0] - medians[1]) > 6.0);
      } else {
        EXPECT_FALSE(s.median_gap);
        EXPECT_FALSE(s.notable_gap);
      }
    }
    EXPECT_EQ(task_stats(logs, groups, 6.0), stats);
  }
}

TEST(Stats, NotableGapThreshold) {
  GroupLabels groups{{"p1", Group::primary_user}, {"h1", Group::healthcare_professional}};
  std::vector<TaskLog> logs = {
      {"p1", "T3", 40.0, TaskOutcome::success}, {"h1", "T3", 8.0, TaskOutcome::success},     // 32 s
      {"p1", "T4", 12.0, TaskOutcome::success}, {"h1", "T4", 6.0, TaskOutcome::success},     // exactly 6 s
      {"p1", "T5", 5.0, TaskOutcome::success},  {"h1", "T5", 11.5, TaskOutcome::success},    // 6.5 s
  };
  auto stats = task_stats(logs, groups);
  EXPECT_TRUE(stats[2].notable_gap);
  EXPECT_EQ(*stats[2].median_gap, 32.0);
  EXPECT_FALSE(stats[3].notable_gap);
  EXPECT_TRUE(stats[4].notable_gap);
  EXPECT_FALSE(task_stats(logs, groups, 40.0)[2].notable_gap);
  std::ostringstream out;
  write_slower_tasks(out, stats);
  auto rows = csv_rows(out.str());
  ASSERT_EQ(rows.size(), 16u);
  EXPECT_EQ(rows[3], (std::vector<std::string>{"T3", "40.000", "8.000", "32.000", "yes"}));
  EXPECT_EQ(rows[4].back(), "no");
}

TEST(Stats, UnknownTaskIsRejected) {
  GroupLabels groups{{"p1", Group::primary_user}};
  EXPECT_THROW(task_stats({{"p1", "T16", 1.0, TaskOutcome::success}}, groups), MetricsError);
  EXPECT_THROW(task_stats({{"p1", "X1", 1.0, TaskOutcome::success}}, groups), MetricsError);
}

TEST(Csv, FieldQuotingRoundTrips) {
  for (std::string s : {"plain", "with,comma", "with \"quotes\"", "\"", ",", "", "a\"\"b", "two\nlines", "cr\r\nlf"}) {
    auto rows = csv_rows(csv_field(s) + "," + csv_field("x") + "\n");
    ASSERT_EQ(rows.size(), 1u) << s;
    EXPECT_EQ(rows[0], (std::vector<std::string>{s, "x"})) << s;
  }
}

TEST(Csv, RecordStructure) {
  EXPECT_EQ(csv_rows("a,b\r\n\r\nc,\n,\n"),
            (std::vector<std::vector<std::string>>{{"a", "b"}, {"c", ""}, {"", ""}}));
  EXPECT_EQ(csv_rows("x,\"y\""), (std::vector<std::vector<std::string>>{{"x", "y"}}));
  EXPECT_THROW(csv_rows("\"open"), MetricsError);
}

TEST(Csv, DecimalRendering) {
  EXPECT_EQ(decimal(Rational(1, 3)), "0.3333");
  EXPECT_EQ(decimal(Rational(2, 3)), "0.6667");
  EXPECT_EQ(decimal(Rational(1, 20000)), "0.0001");
  EXPECT_EQ(decimal(Rational(-1, 20000)), "-0.0001");
  EXPECT_EQ(decimal(Rational(-1, 30000)), "0.0000");
  EXPECT_EQ(decimal(Rational(13, 10), 1), "1.3");
  EXPECT_EQ(decimal(Rational(7), 0), "7");
}

TEST(Csv, TaskLogsAndResponsesRoundTrip) {
  std::mt19937_64 rng(3);
  GroupLabels groups;
  std::vector<TaskLog> logs;
  for (int i = 0; i < 300; ++i) {
    const std::string id = i % 7 == 0 ? "r,\"" + std::to_string(i % 5) : "r" + std::to_string(i % 5);
    groups[id] = i % 2 ? Group::primary_user : Group::healthcare_professional;
    TaskLog l{id, task_id(1 + i % 15), std::nullopt, static_cast<TaskOutcome>(rng() % 4)};
    if (l.outcome != TaskOutcome::not_completed) l.duration_seconds = static_cast<double>(rng() % 100000) / 1000.0;
    logs.push_back(l);
  }
  std::stringstream buf;
  write_task_logs(buf, logs, groups);
  auto back = read_task_logs(buf);
  EXPECT_EQ(back.logs, logs);
  EXPECT_EQ(back.groups, groups);

  std::vector<QuestionnaireResponse> rs;
  for (int i = 0; i < 50; ++i) rs.push_back(random_response(rng, "resp \"" + std::to_string(i) + "\", x", 0.2));
  std::stringstream rbuf;
  write_responses(rbuf, rs);
  EXPECT_EQ(read_responses(rbuf), rs);
}

TEST(Csv, MalformedInputIsRejected) {
  std::istringstream bad_header("who,group,task,duration_seconds,outcome\n");
  EXPECT_THROW(read_task_logs(bad_header), MetricsError);
  std::istringstream bad_outcome("respondent,group,task,duration_seconds,outcome\np1,primary_user,T1,3.0,great\n");
  EXPECT_THROW(read_task_logs(bad_outcome), MetricsError);
  std::istringstream bad_task("respondent,group,task,duration_seconds,outcome\np1,primary_user,T0,3.0,success\n");
  EXPECT_THROW(read_task_logs(bad_task), MetricsError);
  std::ostringstream out;
  QuestionnaireResponse r{"p1", Group::primary_user, {}, {}};
  r.mauq.fill(2);
  write_responses(out, {r});
  std::string s = out.str();
  s.replace(s.rfind(",2,"), 3, ",8,");
  std::istringstream in(s);
  EXPECT_THROW(read_responses(in), InvalidResponse);
}

TEST(Reports, EmptyInputGivesHeaderOnlyFiles) {
  TempDir dir;
  export_reports({}, dir.path);
  for (const char* name : {"heatmap.csv", "boxplots.csv", "slower_tasks.csv", "mauq.csv", "mauq_groups.csv", "custom.csv"}) {
    const auto rows = csv_rows(slurp(dir.path / name));
    ASSERT_EQ(rows.size(), 1u) << name;
    EXPECT_FALSE(rows[0].empty()) << name;
  }
  EXPECT_EQ(csv_rows(slurp(dir.path / "heatmap.csv"))[0].size(), 17u);
}

TEST(Reports, EmittedCsvParsesBackToTheStats) {
  std::mt19937_64 rng(9);
  ReportInput in;
  for (int p = 0; p < 9; ++p) {
    const std::string id = (p < 4 ? "p" : "h") + std::to_string(p);
    in.groups[id] = p < 4 ? Group::primary_user : Group::healthcare_professional;
    for (int t = 1; t <= 15; ++t) {
      TaskLog l{id, task_id(t), std::nullopt, static_cast<TaskOutcome>(rng() % 4)};
      if (l.outcome != TaskOutcome::not_completed) l.duration_seconds = static_cast<double>(rng() % 60000) / 1000.0;
      in.logs.push_back(l);
    }
    in.responses.push_back(random_response(rng, id, 0.1));
    in.responses.back().group = in.groups[id];
  }
  TempDir dir;
  export_reports(in, dir.path);

  auto heat = csv_rows(slurp(dir.path / "heatmap.csv"));
  ASSERT_EQ(heat.size(), 1u + 9u);
  for (std::size_t r = 1; r < heat.size(); ++r) {
    ASSERT_EQ(heat[r].size(), 2u + 15u);
    for (int t = 1; t <= 15; ++t) {
      const auto& want = *std::find_if(in.logs.begin(), in.logs.end(), [&](const TaskLog& l) {
        return l.respondent_id == heat[r][0] && l.task_id == task_id(t);
      });
      EXPECT_EQ(heat[r][static_cast<std::size_t>(t + 1)], to_string(want.outcome));
    }
  }
  // Primary users first.
  EXPECT_EQ(heat[1][1], "primary_user");
  EXPECT_EQ(heat[9][1], "healthcare_professional");

  const auto stats = task_stats(in.logs, in.groups);
  auto box = csv_rows(slurp(dir.path / "boxplots.csv"));
  std::size_t row = 1;
  for (const auto& s : stats) {
    for (const auto& [g, f] : s.durations) {
      ASSERT_LT(row, box.size());
      const auto& b = box[row++];
      EXPECT_EQ(b[0], s.task_id);
      EXPECT_EQ(group_from_string(b[1]), g);
      if (!f) {
        EXPECT_EQ(b[2], "0");
        continue;
      }
      EXPECT_EQ(std::stoul(b[2]), f->n);
      for (auto [col, v] : {std::pair{3, f->min}, {4, f->q1}, {5, f->median}, {6, f->q3}, {7, f->max}}) {
        EXPECT_EQ(b[static_cast<std::size_t>(col)], seconds(v));
      }
    }
  }
  EXPECT_EQ(row, box.size());

  auto mauq = csv_rows(slurp(dir.path / "mauq.csv"));
  ASSERT_EQ(mauq.size(), 10u);
  for (std::size_t r = 1; r < mauq.size(); ++r) {
    auto s = mauq_scores(in.responses[r - 1]);
    EXPECT_EQ(mauq[r][2], decimal(s.overall));
    EXPECT_EQ(mauq[r][3], s.ease_of_use ? decimal(*s.ease_of_use) : "");
  }
}

TEST(Reports, UniformOutcomesGiveUniformHeatmapRows) {
  GroupLabels groups{{"p1", Group::primary_user}, {"h1", Group::healthcare_professional}};
  std::vector<TaskLog> logs;
  for (const auto& [id, g] : groups) {
    for (int t = 1; t <= 15; ++t) logs.push_back({id, task_id(t), 4.0, TaskOutcome::success});
  }
  std::ostringstream out;
  write_heatmap(out, logs, groups);
  auto rows = csv_rows(out.str());
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t r = 1; r < 3; ++r) {
    for (std::size_t c = 2; c < rows[r].size(); ++c) EXPECT_EQ(rows[r][c], "success");
  }
}

TEST(Reports, UnwritableDirectoryFails) {
  TempDir dir;
  fs::create_directories(dir.path);
  std::ofstream(dir.path / "file") << "x";
  EXPECT_THROW(export_reports({}, dir.path / "file" / "sub"), IOFailure);
}
