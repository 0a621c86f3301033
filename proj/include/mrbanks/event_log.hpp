#pragma once

// Append-only JSON-lines event sink. One EventRecord per line; appends from
// different sessions may interleave but each line is written whole.

#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <mutex>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "mrbanks/session.hpp"

namespace mrbanks {

class EventLog {
 public:
  EventLog() = default;  // in-memory only

  // Opens (or creates) a log file; existing events are loaded so the caller
  // can rebuild state from snapshot().
  explicit EventLog(std::filesystem::path path) : path_(std::move(path)) {
    if (!path_.empty()) {
      if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
      if (std::filesystem::exists(path_)) memory_ = load_existing();
      file_.open(path_, std::ios::app | std::ios::binary);
      if (!file_) fail(ErrorCode::unreadable_file, "cannot open event log " + path_.string());
    }
  }

  // Durable (flushed) before returning.
  void append(std::span<const EventRecord> events) {
    if (events.empty()) return;
    std::string block;
    for (const auto& e : events) {
      block += to_json(e).dump();
      block += '\n';
    }
    std::lock_guard lock(mutex_);
    if (file_.is_open()) {
      file_ << block;
      file_.flush();
      if (!file_) fail(ErrorCode::unreadable_file, "event log write failed");
    }
    memory_.insert(memory_.end(), events.begin(), events.end());
  }

  void append(const EventRecord& e) { append(std::span<const EventRecord>(&e, 1)); }

  std::vector<EventRecord> snapshot() const {
    std::lock_guard lock(mutex_);
    return memory_;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return memory_.size();
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::vector<EventRecord> load_existing();

  std::filesystem::path path_;
  std::ofstream file_;
  mutable std::mutex mutex_;
  std::vector<EventRecord> memory_;
};

// Reads a JSONL event stream. A torn final line (crash mid-write) is
// dropped; malformed lines elsewhere are an error.
inline std::vector<EventRecord> read_events(std::istream& in) {
  std::vector<EventRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(event_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      fail(ErrorCode::malformed_row, "event line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<EventRecord> read_events_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::unreadable_file, path.string());
  return read_events(in);
}

// Drops a torn trailing line left by a crash so later appends start on a
// fresh line.
inline std::vector<EventRecord> EventLog::load_existing() {
  std::string content;
  {
    std::ifstream in(path_, std::ios::binary);
    if (!in) fail(ErrorCode::unreadable_file, path_.string());
    content.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  const auto keep = content.find_last_of('\n') == std::string::npos ? 0 : content.find_last_of('\n') + 1;
  if (keep < content.size()) {
    content.resize(keep);
    std::filesystem::resize_file(path_, keep);
  }
  std::istringstream in(content);
  return read_events(in);
}

inline void write_events(std::ostream& out, std::span<const EventRecord> events) {
  for (const auto& e : events) out << to_json(e).dump() << '\n';
}

}  // namespace mrbanks
