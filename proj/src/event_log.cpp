#include "rehabcoach/event_log.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace rehabcoach {

namespace {

constexpr std::array<std::string_view, 9> kKindNames = {
    "message_out", "answer_in", "timeout", "schedule_set", "slot_fired",
    "slot_done", "slot_missed", "profile_updated", "checklist_snapshot",
};

constexpr std::size_t kHeaderSize = 8;
constexpr std::uint32_t kMaxRecordSize = 64u << 20;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::uint32_t crc_of(std::string_view data) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

std::string encode(const EventRecord& r) {
  std::string payload = record_to_json(r).dump();
  std::string out;
  out.reserve(kHeaderSize + payload.size());
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  put_u32(out, crc_of(payload));
  out += payload;
  return out;
}

void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(fmt::format("event log write failed: {}", std::strerror(errno)));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

// Reads one day file. Truncates a torn tail in place when `repair` is set.
std::vector<EventRecord> read_file(const std::filesystem::path& path, bool repair) {
  std::ifstream in(path, std::ios::binary);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<EventRecord> out;
  std::size_t pos = 0;
  while (pos < data.size()) {
    bool torn = data.size() - pos < kHeaderSize;
    std::uint32_t len = torn ? 0 : get_u32(data.data() + pos);
    torn = torn || len > kMaxRecordSize || data.size() - pos - kHeaderSize < len;
    if (!torn) {
      std::string_view payload(data.data() + pos + kHeaderSize, len);
      if (crc_of(payload) != get_u32(data.data() + pos + 4)) {
        // A complete record with bytes after it was not torn by a crash.
        if (pos + kHeaderSize + len < data.size()) {
          throw CorruptLog(fmt::format("{}: checksum mismatch at byte {}", path.string(), pos));
        }
        torn = true;
      } else {
        try {
          out.push_back(record_from_json(nlohmann::json::parse(payload)));
        } catch (const std::exception& e) {
          throw CorruptLog(fmt::format("{}: undecodable record at byte {}: {}", path.string(), pos, e.what()));
        }
        pos += kHeaderSize + len;
        continue;
      }
    }
    // Torn tail: keep the valid prefix. A torn tail in an earlier day file
    // shows up as a seq gap and is rejected by the caller.
    if (repair) std::filesystem::resize_file(path, pos);
    break;
  }
  return out;
}

std::vector<EventRecord> load(const std::filesystem::path& dir, bool repair) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto name = e.path().filename().string();
    if (e.is_regular_file() && name.starts_with("events-") && name.ends_with(".log")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EventRecord> all;
  for (const auto& f : files) {
    auto recs = read_file(f, repair);
    all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  std::sort(all.begin(), all.end(), [](const EventRecord& a, const EventRecord& b) { return a.seq < b.seq; });
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].seq != i + 1) {
      throw CorruptLog(fmt::format("seq gap: expected {}, found {}", i + 1, all[i].seq));
    }
  }
  return all;
}

}  // namespace

std::string_view to_string(EventKind k) { return kKindNames.at(static_cast<std::size_t>(k)); }

EventKind event_kind_from_string(std::string_view s) {
  auto it = std::find(kKindNames.begin(), kKindNames.end(), s);
  if (it == kKindNames.end()) throw std::invalid_argument(fmt::format("unknown event kind '{}'", s));
  return static_cast<EventKind>(it - kKindNames.begin());
}

nlohmann::json record_to_json(const EventRecord& r) {
  return {{"seq", r.seq},
          {"user", r.user_id},
          {"at", format_timestamp(r.at)},
          {"kind", std::string(to_string(r.kind))},
          {"payload", r.payload}};
}

EventRecord record_from_json(const nlohmann::json& j) {
  return {j.at("seq").get<std::uint64_t>(), j.at("user").get<std::string>(),
          parse_timestamp(j.at("at").get<std::string>()), event_kind_from_string(j.at("kind").get<std::string>()),
          j.at("payload")};
}

EventLog::EventLog() = default;

EventLog::EventLog(std::filesystem::path directory, Durability durability)
    : directory_(std::move(directory)), durability_(durability) {
  std::filesystem::create_directories(*directory_);
  records_ = load(*directory_, true);
}

EventLog::~EventLog() {
  for (auto& [_, fd] : files_) ::close(fd);
}

std::string EventLog::file_name(Date date) { return fmt::format("events-{}.log", format_date(date)); }

int EventLog::file_for(Date date) {
  auto name = file_name(date);
  if (auto it = files_.find(name); it != files_.end()) return it->second;
  auto path = *directory_ / name;
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw std::runtime_error(fmt::format("cannot open {}: {}", path.string(), std::strerror(errno)));
  files_.emplace(name, fd);
  return fd;
}

EventRecord EventLog::append(std::string user_id, VirtualTime at, EventKind kind, nlohmann::json payload) {
  std::lock_guard lock(mutex_);
  EventRecord r{records_.size() + 1, std::move(user_id), at, kind, std::move(payload)};
  if (directory_) {
    int fd = file_for(date_of(at));
    write_all(fd, encode(r));
    if (durability_ == Durability::fsync && ::fsync(fd) != 0) {
      throw std::runtime_error(fmt::format("fsync failed: {}", std::strerror(errno)));
    }
  }
  records_.push_back(r);
  return r;
}

std::vector<EventRecord> EventLog::snapshot() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::vector<EventRecord> EventLog::since(std::uint64_t seq) const {
  std::lock_guard lock(mutex_);
  if (seq >= records_.size()) return {};
  return {records_.begin() + static_cast<std::ptrdiff_t>(seq), records_.end()};
}

std::uint64_t EventLog::last_seq() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

std::size_t EventLog::size() const { return last_seq(); }

std::vector<EventRecord> EventLog::read_directory(const std::filesystem::path& directory) {
  return load(directory, false);
}

}  // namespace rehabcoach
