#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pica/core_model.hpp"
#include "pica/error.hpp"
#include "pica/gain.hpp"
#include "pica/json.hpp"
#include "pica/session.hpp"

namespace pica {

inline constexpr int kCourseSchemaVersion = 1;
inline constexpr int kStoreSchemaVersion = 1;

struct CourseConfig {
  std::string course_id;
  std::vector<QuizDyad> dyads;
  std::vector<IsomorphicLink> links;
  BonusPolicy bonus;

  const QuizDyad& dyad(int index) const {
    const QuizDyad* d = find_dyad(dyads, index);
    if (!d) throw Error(ErrorKind::NotFound, "unknown dyad " + std::to_string(index));
    return *d;
  }

  friend bool operator==(const CourseConfig&, const CourseConfig&) = default;
};

inline Json to_json(const CourseConfig& c) {
  Json j;
  j["schema_version"] = kCourseSchemaVersion;
  j["course_id"] = c.course_id;
  Json dyads = Json::array();
  for (const auto& d : c.dyads) dyads.push_back(to_json(d));
  j["dyads"] = std::move(dyads);
  Json links = Json::array();
  for (const auto& l : c.links) links.push_back(to_json(l));
  j["isomorphic_links"] = std::move(links);
  j["bonus"] = to_json(c.bonus);
  return j;
}

// Parses and validates a course definition: every dyad must be well formed
// and every isomorphic link must resolve.
inline CourseConfig course_config_from_json(const Json& j) {
  const int version = json_get_or<int>(j, "schema_version", kCourseSchemaVersion);
  if (version != kCourseSchemaVersion)
    fail(ErrorKind::Parse, "unsupported course config schema_version " + std::to_string(version));
  CourseConfig c;
  c.course_id = json_get_or<std::string>(j, "course_id", "");
  for (const auto& d : json_get<Json>(j, "dyads")) c.dyads.push_back(dyad_from_json(d));
  std::sort(c.dyads.begin(), c.dyads.end(), [](const QuizDyad& a, const QuizDyad& b) { return a.index < b.index; });
  for (std::size_t i = 0; i < c.dyads.size(); ++i) {
    if (i > 0 && c.dyads[i].index == c.dyads[i - 1].index)
      fail(ErrorKind::Parse, "dyad " + std::to_string(c.dyads[i].index) + " defined twice");
    if (auto v = validate_dyad(c.dyads[i]); !v.empty())
      fail(ErrorKind::Parse, "dyad " + std::to_string(c.dyads[i].index) + ": " + v.front().code + " (" + v.front().detail + ")");
  }
  for (const auto& l : json_get_or<Json>(j, "isomorphic_links", Json::array())) c.links.push_back(link_from_json(l));
  c.links = links_of(resolve_isomorphic_links(c.dyads, c.links));
  if (auto it = j.find("bonus"); it != j.end()) c.bonus = bonus_policy_from_json(*it);
  return c;
}

inline CourseConfig load_course_config(const std::string& path) { return course_config_from_json(read_json_file(path)); }

inline std::string utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Exclusive advisory lock on "<store>.lock" for the lifetime of the object.
class WriterLock {
 public:
  explicit WriterLock(const std::string& store_path) : path_(store_path + ".lock") {
    fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) fail(ErrorKind::Io, "cannot open lock file " + path_);
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw Error(ErrorKind::Conflict, "store " + store_path + " is held by another writer");
    }
  }
  WriterLock(const WriterLock&) = delete;
  WriterLock& operator=(const WriterLock&) = delete;
  ~WriterLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }

 private:
  std::string path_;
  int fd_ = -1;
};

// One JSON document per course plus an append-only JSONL event log beside it
// ("<store>.events.jsonl"). Not thread-safe; callers serialize writers.
class SessionStore {
 public:
  using Clock = std::function<std::string()>;

  SessionStore(std::string path, CourseConfig course, Clock clock = utc_now)
      : path_(std::move(path)), course_(std::move(course)), clock_(std::move(clock)) {}

  static SessionStore open(const std::string& path, Clock clock = utc_now) {
    Json j = read_json_file(path);
    const int version = json_get<int>(j, "schema_version");
    if (version != kStoreSchemaVersion)
      fail(ErrorKind::Parse, "unsupported store schema_version " + std::to_string(version));
    SessionStore store(path, course_config_from_json(json_get<Json>(j, "course")), std::move(clock));
    for (const auto& s : json_get_or<Json>(j, "roster", Json::array())) store.roster_.push_back(student_from_json(s));
    for (const auto& s : json_get_or<Json>(j, "sessions", Json::array())) store.sessions_.push_back(session_from_json(s));
    store.sort_sessions();
    store.event_seq_ = store.count_events();
    return store;
  }

  // Opens an existing store or starts an empty one for `course`.
  static SessionStore open_or_create(const std::string& path, const CourseConfig& course, Clock clock = utc_now) {
    if (std::filesystem::exists(path)) return open(path, std::move(clock));
    return SessionStore(path, course, std::move(clock));
  }

  const std::string& path() const { return path_; }
  const CourseConfig& course() const { return course_; }
  const std::vector<Student>& roster() const { return roster_; }
  const std::vector<SessionRecord>& sessions() const { return sessions_; }
  std::string now() const { return clock_(); }

  const Student* student(const StudentId& id) const {
    for (const auto& s : roster_)
      if (s.id == id) return &s;
    return nullptr;
  }

  const SessionRecord* find(int dyad) const {
    for (const auto& s : sessions_)
      if (s.dyad == dyad) return &s;
    return nullptr;
  }

  // The stored session, or a fresh AOpen record for a configured dyad.
  SessionRecord session_or_new(int dyad) const {
    course_.dyad(dyad);
    if (const auto* s = find(dyad)) return *s;
    SessionRecord s;
    s.dyad = dyad;
    return s;
  }

  void set_course(CourseConfig course) {
    if (course == course_) return;
    course_ = std::move(course);
    log_event("course", 0, 0, Json::object());
  }

  void set_roster(std::vector<Student> roster) {
    std::sort(roster.begin(), roster.end(), [](const Student& a, const Student& b) { return a.id < b.id; });
    if (roster == roster_) return;
    roster_ = std::move(roster);
    Json detail;
    detail["students"] = roster_.size();
    log_event("roster", 0, 0, detail);
  }

  // Replaces (or inserts) a session. Unchanged records are not logged.
  void put(const SessionRecord& updated, const std::string& event, Json detail = Json::object()) {
    course_.dyad(updated.dyad);
    auto it = std::find_if(sessions_.begin(), sessions_.end(), [&](const SessionRecord& s) { return s.dyad == updated.dyad; });
    if (it != sessions_.end() && *it == updated) return;
    if (it != sessions_.end())
      *it = updated;
    else
      sessions_.push_back(updated);
    sort_sessions();
    log_event(event, updated.dyad, updated.revision, std::move(detail));
  }

  Json to_json() const {
    Json j;
    j["schema_version"] = kStoreSchemaVersion;
    j["course"] = pica::to_json(course_);
    Json roster = Json::array();
    for (const auto& s : roster_) roster.push_back(pica::to_json(s));
    j["roster"] = std::move(roster);
    Json sessions = Json::array();
    for (const auto& s : sessions_) sessions.push_back(pica::to_json(s));
    j["sessions"] = std::move(sessions);
    return j;
  }

  std::string serialize() const { return to_json().dump(2) + "\n"; }

  void save() const {
    if (path_.empty()) return;
    write_text_file(path_, serialize());
    flush_events();
  }

  std::string events_path() const { return path_ + ".events.jsonl"; }

 private:
  void sort_sessions() {
    std::sort(sessions_.begin(), sessions_.end(), [](const SessionRecord& a, const SessionRecord& b) { return a.dyad < b.dyad; });
  }

  std::size_t count_events() const {
    std::ifstream in(events_path());
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) ++n;
    return n;
  }

  void log_event(const std::string& type, int dyad, std::uint64_t revision, Json detail) {
    Json e;
    e["seq"] = ++event_seq_;
    e["at"] = clock_();
    e["type"] = type;
    e["dyad"] = dyad;
    e["revision"] = revision;
    e["detail"] = std::move(detail);
    pending_events_.push_back(e.dump());
  }

  // Events are appended only when the document itself is saved, so the log
  // never runs ahead of the store.
  void flush_events() const {
    if (pending_events_.empty()) return;
    std::ofstream out(events_path(), std::ios::app | std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot append to " + events_path());
    for (const auto& line : pending_events_) out << line << "\n";
    pending_events_.clear();
  }

  std::string path_;
  CourseConfig course_;
  Clock clock_;
  std::vector<Student> roster_;
  std::vector<SessionRecord> sessions_;
  std::size_t event_seq_ = 0;
  mutable std::vector<std::string> pending_events_;
};

// Analysis dataset for every session whose b-quiz has closed. Reads raw
// b-quiz points only.
inline std::string export_analysis_csv(const std::vector<SessionRecord>& sessions, const std::vector<QuizDyad>& dyads) {
  bool any = std::any_of(sessions.begin(), sessions.end(), [](const SessionRecord& s) { return s.phase >= Phase::BClosed; });
  if (!any) throw Error(ErrorKind::Precondition, "no session has a closed b-quiz yet");
  return gain_records_to_csv(build_gain_records(sessions, dyads));
}

}  // namespace pica
