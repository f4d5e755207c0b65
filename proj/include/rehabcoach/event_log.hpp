#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rehabcoach/time.hpp"

namespace rehabcoach {

enum class EventKind {
  message_out,
  answer_in,
  timeout,
  schedule_set,
  slot_fired,
  slot_done,
  slot_missed,
  profile_updated,
  checklist_snapshot,
};

std::string_view to_string(EventKind k);
EventKind event_kind_from_string(std::string_view s);

struct EventRecord {
  std::uint64_t seq = 0;
  std::string user_id;
  VirtualTime at{};
  EventKind kind = EventKind::message_out;
  nlohmann::json payload;
  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

nlohmann::json record_to_json(const EventRecord& r);
EventRecord record_from_json(const nlohmann::json& j);

class CorruptLog : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Append-only, gap-free event store. Optionally backed by a directory
/// holding one file per virtual day (events-YYYY-MM-DD.log). Each record
/// on disk is:
///
///   u32 little-endian payload length
///   u32 little-endian CRC-32 of the payload
///   payload: compact JSON of the record
///
/// Thread-safe; seq numbers are assigned by append() under a single lock.
class EventLog {
 public:
  enum class Durability { fsync, buffered };

  /// Memory only.
  EventLog();
  /// Opens (creating if needed) a log directory and loads every record in
  /// it. A torn record at the end of a file is truncated away; any other
  /// damage, or a gap in seq numbers, throws CorruptLog.
  explicit EventLog(std::filesystem::path directory, Durability durability = Durability::fsync);
  ~EventLog();

  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  EventRecord append(std::string user_id, VirtualTime at, EventKind kind, nlohmann::json payload);

  std::vector<EventRecord> snapshot() const;
  std::vector<EventRecord> since(std::uint64_t seq) const;
  std::uint64_t last_seq() const;
  std::size_t size() const;
  const std::optional<std::filesystem::path>& directory() const { return directory_; }

  /// Loads a directory without opening it for writing.
  static std::vector<EventRecord> read_directory(const std::filesystem::path& directory);

  static std::string file_name(Date date);

 private:
  int file_for(Date date);

  mutable std::mutex mutex_;
  std::optional<std::filesystem::path> directory_;
  Durability durability_ = Durability::buffered;
  std::vector<EventRecord> records_;
  std::map<std::string, int> files_;
};

}  // namespace rehabcoach
