#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rehabcoach/config.hpp"

namespace rehabcoach::metrics {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class InvalidResponse : public MetricsError {
 public:
  using MetricsError::MetricsError;
};
class AllItemsUnknown : public MetricsError {
 public:
  explicit AllItemsUnknown(const std::string& respondent)
      : MetricsError("every MAUQ item of '" + respondent + "' is 'I don't know'") {}
};
class IOFailure : public MetricsError {
 public:
  using MetricsError::MetricsError;
};

enum class Group { primary_user, healthcare_professional };
std::string_view to_string(Group g);
Group group_from_string(std::string_view s);

/// One Likert answer, 1 (positive) to 7; nullopt is "I don't know".
using Likert = std::optional<int>;

inline constexpr std::size_t kMauqItems = 18;
inline constexpr std::size_t kCustomItems = 4;

struct QuestionnaireResponse {
  std::string respondent_id;
  Group group = Group::primary_user;
  std::array<Likert, kMauqItems> mauq{};
  std::array<Likert, kCustomItems> custom{};
  friend bool operator==(const QuestionnaireResponse&, const QuestionnaireResponse&) = default;
};

/// Throws InvalidResponse when a numeric item lies outside 1..7.
void validate(const QuestionnaireResponse& r);

enum class Subscale { ease_of_use, interface_satisfaction, usefulness };
/// Items 1-5 (E), 6-12 (I), 13-18 (U); `item` is 1-based.
Subscale subscale_of(std::size_t item);

struct MauqScores {
  Rational overall;
  std::optional<Rational> ease_of_use;
  std::optional<Rational> interface_satisfaction;
  std::optional<Rational> usefulness;
  friend bool operator==(const MauqScores&, const MauqScores&) = default;
};

/// Exact means over the numeric items. The overall score averages the
/// items directly, not the subscale means. Throws AllItemsUnknown.
MauqScores mauq_scores(const QuestionnaireResponse& r);

enum class TaskOutcome { success, success_with_input, completed_with_error, not_completed };
std::string_view to_string(TaskOutcome o);
TaskOutcome outcome_from_string(std::string_view s);

inline constexpr int kTaskCount = 15;
std::string task_id(int k);  // "T1".."T15"

struct TaskLog {
  std::string respondent_id;
  std::string task_id;
  /// Absent only for not_completed.
  std::optional<double> duration_seconds;
  TaskOutcome outcome = TaskOutcome::success;
  friend bool operator==(const TaskLog&, const TaskLog&) = default;
};

struct FiveNumber {
  std::size_t n = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  friend bool operator==(const FiveNumber&, const FiveNumber&) = default;
};

/// Median of even counts is the mean of the middle two. Quartiles are the
/// medians of the lower and upper halves, the middle value excluded from
/// both halves for odd counts (a single value is its own quartiles).
/// nullopt for an empty sample.
std::optional<FiveNumber> five_number(std::vector<double> values);
double median(std::vector<double> values);

struct TaskStats {
  std::string task_id;
  std::map<Group, std::optional<FiveNumber>> durations;
  std::map<Group, std::map<TaskOutcome, int>> outcomes;
  /// max - min over the groups' medians; absent with fewer than two groups.
  std::optional<double> median_gap;
  bool notable_gap = false;
  friend bool operator==(const TaskStats&, const TaskStats&) = default;
};

using GroupLabels = std::map<std::string, Group, std::less<>>;

/// Per-task statistics, ordered by task number. Logs of respondents
/// missing from `groups` are ignored.
std::vector<TaskStats> task_stats(const std::vector<TaskLog>& logs, const GroupLabels& groups,
                                  double notable_gap_seconds = 6.0);

struct StatementSummary {
  std::size_t statement = 0;  // 1-based
  Group group = Group::primary_user;
  std::size_t n = 0;
  std::optional<Rational> mean;
  std::optional<int> min, max;
  friend bool operator==(const StatementSummary&, const StatementSummary&) = default;
};
std::vector<StatementSummary> custom_summaries(const std::vector<QuestionnaireResponse>& responses);

struct GroupMauq {
  Group group = Group::primary_user;
  std::size_t n = 0;
  Rational overall_mean;
  Rational overall_min, overall_max;
  std::optional<Rational> ease_of_use_mean, interface_satisfaction_mean, usefulness_mean;
  friend bool operator==(const GroupMauq&, const GroupMauq&) = default;
};
/// Means over respondents of each group; respondents whose items are all
/// unknown are left out. A subscale mean covers respondents for which it
/// is defined.
std::vector<GroupMauq> group_mauq(const std::vector<QuestionnaireResponse>& responses);

// ---------------------------------------------------------------------------
// CSV

/// Fixed 4-decimal rendering, rounded half away from zero.
std::string decimal(const Rational& r, int places = 4);
std::string seconds(double s);

void write_task_logs(std::ostream& out, const std::vector<TaskLog>& logs, const GroupLabels& groups);
struct TaskLogFile {
  std::vector<TaskLog> logs;
  GroupLabels groups;
};
TaskLogFile read_task_logs(std::istream& in);

void write_responses(std::ostream& out, const std::vector<QuestionnaireResponse>& responses);
std::vector<QuestionnaireResponse> read_responses(std::istream& in);

struct ReportInput {
  std::vector<TaskLog> logs;
  GroupLabels groups;
  std::vector<QuestionnaireResponse> responses;
  double notable_gap_seconds = 6.0;
};

/// Writes heatmap.csv, boxplots.csv, slower_tasks.csv, mauq.csv,
/// mauq_groups.csv and custom.csv into `dir`. Throws IOFailure.
void export_reports(const ReportInput& input, const std::filesystem::path& dir);

void write_heatmap(std::ostream& out, const std::vector<TaskLog>& logs, const GroupLabels& groups);
void write_boxplots(std::ostream& out, const std::vector<TaskStats>& stats);
void write_slower_tasks(std::ostream& out, const std::vector<TaskStats>& stats);
void write_mauq(std::ostream& out, const std::vector<QuestionnaireResponse>& responses);
void write_mauq_groups(std::ostream& out, const std::vector<GroupMauq>& groups);
void write_custom(std::ostream& out, const std::vector<StatementSummary>& summaries);

/// RFC 4180 reader: one vector of fields per record, blank lines skipped.
std::vector<std::vector<std::string>> parse_csv(std::istream& in);
std::string csv_field(std::string_view s);

}  // namespace rehabcoach::metrics
