#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "rehabcoach/config.hpp"
#include "rehabcoach/metrics.hpp"
#include "rehabcoach/script.hpp"
#include "rehabcoach/sim.hpp"

namespace fs = std::filesystem;
using namespace rehabcoach;

namespace {

constexpr int kProtocolFailure = 2;

struct Common {
  std::string scripts = REHABCOACH_DATA_DIR "/scripts";
  std::string config = REHABCOACH_DATA_DIR "/config/default.json";
  std::uint64_t seed = 1;
  std::string scale = "1";
};

Config load(const Common& c) { return fs::exists(c.config) ? load_config(c.config) : Config{}; }

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<sim::BehaviorModel> behaviors(const std::string& spec) {
  if (spec == "cohort") return sim::cohort();
  std::vector<sim::BehaviorModel> out;
  for (const auto& name : split(spec)) out.push_back(sim::preset(name));
  if (out.empty()) throw sim::UnknownBehavior(spec);
  return out;
}

void print_coverage(const sim::Coverage& c) {
  for (const auto& [e, n] : c.calls) std::cerr << fmt::format("  {:<32} {}\n", sim::to_string(e), n);
  std::cerr << fmt::format("  endpoints {}/{}  node kinds {}/7\n", c.calls.size(), sim::kEndpointCount,
                           c.node_kinds.size());
}

int run_day(const Common& c, const std::string& behavior, const std::string& out, bool realtime) {
  const auto config = load(c);
  const auto scripts = script::load_library(c.scripts);
  const fs::path dir(out);
  fs::create_directories(dir);
  // A log directory holds one file per day; start from an empty one.
  const fs::path log_dir = dir / "log";
  fs::remove_all(log_dir);
  auto r = sim::run_day(sim::preset(behavior), config, scripts, parse_rational(c.scale), c.seed, log_dir, realtime);
  sim::write_day_outputs(r, dir);
  int done = 0, missed = 0;
  for (const auto& item : r.checklist) {
    done += item.status == service::ChecklistStatus::done;
    missed += item.status == service::ChecklistStatus::missed;
  }
  std::cout << fmt::format("{} events, {} interactions, checklist {} done / {} missed\n", r.events.size(),
                           r.instances.size(), done, missed);
  return 0;
}

int run_tasks(const Common& c, const std::string& suite, const std::string& task_list, const std::string& behavior,
              const std::string& out, bool require_coverage) {
  if (suite != "default") throw sim::SimError("unknown suite '" + suite + "'");
  std::vector<sim::TaskDefinition> tasks;
  if (task_list.empty()) {
    tasks = sim::default_suite();
  } else {
    for (const auto& id : split(task_list)) tasks.push_back(sim::find_task(id));
  }
  const auto config = load(c);
  const auto scripts = script::load_library(c.scripts);
  auto r = sim::run_task_protocol(tasks, behaviors(behavior), config, scripts, c.seed, parse_rational(c.scale));
  std::ofstream file(out);
  if (!file) throw metrics::IOFailure("cannot write " + out);
  metrics::write_task_logs(file, r.logs, r.groups);
  print_coverage(r.coverage);
  if (require_coverage && !(r.coverage.all_endpoints() && r.coverage.all_node_kinds())) {
    std::cerr << "protocol coverage incomplete\n";
    return kProtocolFailure;
  }
  return 0;
}

int run_metrics(const std::string& in, const std::string& responses, const std::string& out, double gap) {
  metrics::ReportInput input;
  input.notable_gap_seconds = gap;
  {
    std::ifstream f(in);
    if (!f) throw metrics::IOFailure("cannot read " + in);
    auto logs = metrics::read_task_logs(f);
    input.logs = std::move(logs.logs);
    input.groups = std::move(logs.groups);
  }
  if (!responses.empty()) {
    std::ifstream f(responses);
    if (!f) throw metrics::IOFailure("cannot read " + responses);
    input.responses = metrics::read_responses(f);
  }
  metrics::export_reports(input, out);
  return 0;
}

int run_responses(const Common& c, const std::string& behavior, const std::string& out) {
  std::ofstream f(out);
  if (!f) throw metrics::IOFailure("cannot write " + out);
  metrics::write_responses(f, sim::synthetic_responses(behaviors(behavior), c.seed));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated users, usability tasks and reports for the coaching service"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--scripts", common.scripts, "Directory of interaction scripts");
    sub->add_option("--config", common.config, "Configuration file");
    sub->add_option("--seed", common.seed, "Random seed");
    sub->add_option("--scale", common.scale, "Virtual seconds per real second (e.g. 32, 3/2)");
  };

  std::string behavior = "compliant", out, suite = "default", task_list, in, responses;
  bool realtime = false, coverage = false;
  double gap = 0;

  auto* day = app.add_subcommand("run-day", "Run one simulated day for one user");
  add_common(day);
  day->add_option("--behavior", behavior, "Behavior preset")->check(CLI::IsMember(sim::preset_names()));
  day->add_option("--out", out, "Output directory")->required();
  day->add_flag("--realtime", realtime, "Pace the run on the wall clock at the given scale");

  auto* tasks = app.add_subcommand("tasks", "Run the usability task protocol");
  add_common(tasks);
  tasks->add_option("--suite", suite, "Task suite")->default_val("default");
  tasks->add_option("--tasks", task_list, "Comma-separated task ids (default: whole suite)");
  tasks->add_option("--behavior", behavior, "Preset names, comma-separated, or 'cohort'")->default_val("cohort");
  tasks->add_option("--out", out, "Task log CSV")->required();
  tasks->add_flag("--require-coverage", coverage, "Fail unless every endpoint and node kind was exercised");

  auto* met = app.add_subcommand("metrics", "Write CSV reports from task logs and questionnaire answers");
  met->add_option("--in", in, "Task log CSV")->required();
  met->add_option("--responses", responses, "Questionnaire CSV");
  met->add_option("--out", out, "Report directory")->required();
  met->add_option("--config", common.config, "Configuration file (supplies the default --gap)");
  auto* gap_opt = met->add_option("--gap", gap, "Notable difference of group medians, seconds");

  auto* resp = app.add_subcommand("responses", "Write synthetic questionnaire answers");
  add_common(resp);
  resp->add_option("--behavior", behavior, "Preset names, comma-separated, or 'cohort'")->default_val("cohort");
  resp->add_option("--out", out, "Questionnaire CSV")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*day) return run_day(common, behavior, out, realtime);
    if (*tasks) return run_tasks(common, suite, task_list, behavior, out, coverage);
    if (*met) return run_metrics(in, responses, out, *gap_opt ? gap : load(common).notable_gap_seconds);
    if (*resp) return run_responses(common, behavior, out);
  } catch (const sim::SimError& e) {
    std::cerr << "protocol failure: " << e.what() << '\n';
    return kProtocolFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
