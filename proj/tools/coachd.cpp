#include <CLI11.hpp>

#include <signal.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <fmt/format.h>

#include "rehabcoach/config.hpp"
#include "rehabcoach/event_log.hpp"
#include "rehabcoach/scheduler.hpp"
#include "rehabcoach/script.hpp"
#include "rehabcoach/server.hpp"
#include "rehabcoach/service.hpp"
#include "rehabcoach/tls.hpp"

using namespace rehabcoach;

int main(int argc, char** argv) {
  CLI::App app{"Coaching service: HTTPS API and message stream over TLS"};
  std::string config_file = REHABCOACH_DATA_DIR "/config/default.json";
  std::string scripts_dir = REHABCOACH_DATA_DIR "/scripts";
  std::string log_dir, address = "127.0.0.1", cert, key, secret, start, scale;
  unsigned short port = 8443;
  std::size_t threads = 2;
  app.add_option("--config", config_file, "Configuration file");
  app.add_option("--scripts", scripts_dir, "Directory of interaction scripts");
  app.add_option("--log-dir", log_dir, "Event log directory")->required();
  app.add_option("--address", address, "Listen address");
  app.add_option("--port", port, "Listen port (0 picks a free one)");
  auto* cert_opt = app.add_option("--cert", cert, "PEM certificate chain");
  auto* key_opt = app.add_option("--key", key, "PEM private key");
  cert_opt->needs(key_opt);
  key_opt->needs(cert_opt);
  app.add_option("--secret", secret, "Token signing secret (default: $REHABCOACH_SECRET)");
  app.add_option("--start", start, "Virtual start time, e.g. 2025-03-10T07:00:00.000 (default: end of the log, else now)");
  app.add_option("--scale", scale, "Virtual seconds per real second (overrides the config)");
  app.add_option("--threads", threads, "I/O threads")->check(CLI::Range(1, 64));
  CLI11_PARSE(app, argc, argv);

  try {
    Config config = std::filesystem::exists(config_file) ? load_config(config_file) : Config{};
    if (!scale.empty()) config.clock_scale = parse_rational(scale);
    if (config.clock_scale <= 0) throw ConfigError("scale must be positive");
    if (secret.empty()) {
      if (const char* env = std::getenv("REHABCOACH_SECRET")) secret = env;
    }
    if (secret.empty()) {
      secret = tls::random_secret();
      std::cerr << "warning: no secret given; tokens will not survive a restart\n";
    }

    EventLog log(log_dir, EventLog::Durability::fsync);
    service::CoachService svc(config, script::load_library(scripts_dir), log);

    // Without --start a non-empty log resumes at its last record. The
    // virtual clock never runs behind the log.
    const auto real_now = std::chrono::time_point_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now());
    std::optional<VirtualTime> last;
    if (log.size() > 0) last = log.since(log.size() - 1).front().at;
    VirtualTime anchor = !start.empty() ? parse_timestamp(start)
                         : last       ? *last
                                      : std::chrono::time_point_cast<std::chrono::milliseconds>(real_now);
    if (last) anchor = std::max(anchor, *last);
    const scheduler::VirtualClock clock{real_now, anchor, config.clock_scale};

    server::Options opts;
    opts.address = address;
    opts.port = port;
    opts.tls = cert.empty() ? tls::self_signed("localhost") : tls::load_material(cert, key);
    opts.token_secret = secret;
    opts.threads = threads;
    opts.clock = [clock] {
      return scheduler::clock_now(clock,
                                  std::chrono::time_point_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now()));
    };

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    server::Server srv(svc, opts);
    srv.start();
    std::cout << fmt::format("listening on https://{}:{} (virtual time {}, scale {}, {} records)", address, srv.port(),
                             format_timestamp(anchor), format_rational(config.clock_scale), log.size())
              << std::endl;
    int sig = 0;
    sigwait(&signals, &sig);
    srv.stop();
    std::cout << "stopped" << std::endl;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
