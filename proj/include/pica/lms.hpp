#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "pica/core_model.hpp"
#include "pica/error.hpp"
#include "pica/json.hpp"

// LMS access. Two implementations share one contract: HttpLms talks to a
// Canvas-style REST API through an HttpTransport, FixtureLms reads and writes
// a directory of JSON files holding exactly the bodies the REST API returns.
namespace pica::lms {

struct LmsConfig {
  std::string base_url;
  std::string auth_token;
  std::string course_id;
  int page_size = 50;
  std::chrono::milliseconds timeout{10000};
  // Permits plain http; only for tests and local stubs.
  bool allow_insecure = false;
  int max_attempts = 3;
  std::chrono::milliseconds backoff{200};

  void validate() const {
    if (base_url.empty()) fail(ErrorKind::InvalidArgument, "LMS base URL is not set");
    if (!allow_insecure && base_url.rfind("https://", 0) != 0)
      fail(ErrorKind::InvalidArgument, "LMS base URL must use https");
    if (course_id.empty()) fail(ErrorKind::InvalidArgument, "LMS course id is not set");
    if (page_size < 1) fail(ErrorKind::InvalidArgument, "page size must be positive");
    if (max_attempts < 1) fail(ErrorKind::InvalidArgument, "max attempts must be positive");
  }

  // The token is redacted.
  friend std::ostream& operator<<(std::ostream& os, const LmsConfig& c) {
    return os << "LmsConfig{base_url=" << c.base_url << ", course_id=" << c.course_id
              << ", page_size=" << c.page_size << ", token=" << (c.auth_token.empty() ? "<unset>" : "<redacted>")
              << "}";
  }
};

// Reads LMS_BASE_URL, LMS_TOKEN, LMS_COURSE_ID and optionally LMS_PAGE_SIZE.
inline LmsConfig config_from_env() {
  LmsConfig c;
  auto env = [](const char* name) -> std::string {
    const char* v = std::getenv(name);
    return v ? v : "";
  };
  c.base_url = env("LMS_BASE_URL");
  c.auth_token = env("LMS_TOKEN");
  c.course_id = env("LMS_COURSE_ID");
  if (auto ps = env("LMS_PAGE_SIZE"); !ps.empty()) c.page_size = std::stoi(ps);
  return c;
}

// JSON file with base_url, token, course_id and optional page_size,
// timeout_ms. Environment variables fill in anything the file leaves out.
inline LmsConfig config_from_file(const std::string& path) {
  Json j = read_json_file(path);
  LmsConfig c = config_from_env();
  if (j.contains("base_url")) c.base_url = j["base_url"].get<std::string>();
  if (j.contains("token")) c.auth_token = j["token"].get<std::string>();
  if (j.contains("course_id")) c.course_id = j["course_id"].is_string() ? j["course_id"].get<std::string>() : j["course_id"].dump();
  if (j.contains("page_size")) c.page_size = j["page_size"].get<int>();
  if (j.contains("timeout_ms")) c.timeout = std::chrono::milliseconds(j["timeout_ms"].get<int>());
  return c;
}

struct SubmissionRecord {
  std::string lms_id;
  QuizId quiz;
  std::vector<Rational> points;
  std::vector<std::optional<std::string>> answers;
  std::string submitted_at;
  int attempt = 1;
  std::optional<double> duration_seconds;

  friend bool operator==(const SubmissionRecord&, const SubmissionRecord&) = default;
};

enum class AttemptPolicy { Latest, Highest };

struct QuizInfo {
  QuizId id;
  std::string title;
  std::size_t question_count = 0;
};

struct BonusAck {
  std::string lms_id;
  QuizId quiz;
  Rational points;
  bool applied = false;  // false when the award already existed
  Rational fudge_total;  // adjustment total on the submission afterwards
};

class LmsAdapter {
 public:
  virtual ~LmsAdapter() = default;
  virtual std::vector<Student> list_students() = 0;
  virtual QuizInfo quiz_info(const QuizId& quiz) = 0;
  virtual std::vector<SubmissionRecord> fetch_submissions(const QuizId& quiz) = 0;
  // Adds `points` as an adjustment on the student's submission unless an
  // adjustment with `tag` already exists.
  virtual BonusAck award_bonus(const QuizId& quiz, const Student& student, const Rational& points,
                               const std::string& tag) = 0;
};

// ---- shared payload handling ----------------------------------------------------

namespace detail {

inline std::string id_text(const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

// A Canvas user becomes a Student keyed by login id (falling back to the LMS id).
inline Student student_from_user(const Json& u) {
  Student s;
  s.lms_id = id_text(json_get<Json>(u, "id"));
  auto login = u.find("login_id");
  s.id = login != u.end() && !login->is_null() ? id_text(*login) : *s.lms_id;
  s.display_name = json_get_or<std::string>(u, "name", s.id);
  return s;
}

inline QuizInfo quiz_from_payload(const Json& q) {
  QuizInfo info;
  info.id = id_text(json_get<Json>(q, "id"));
  info.title = json_get_or<std::string>(q, "title", info.id);
  if (auto it = q.find("questions"); it != q.end())
    info.question_count = it->size();
  else
    info.question_count = json_get<std::size_t>(q, "question_count");
  return info;
}

inline SubmissionRecord submission_from_payload(const Json& s, const QuizId& quiz) {
  SubmissionRecord r;
  r.lms_id = id_text(json_get<Json>(s, "user_id"));
  r.quiz = quiz;
  r.attempt = json_get_or<int>(s, "attempt", 1);
  r.submitted_at = json_get_or<std::string>(s, "finished_at", "");
  if (auto it = s.find("time_spent"); it != s.end() && it->is_number()) r.duration_seconds = it->get<double>();
  for (const auto& q : json_get<Json>(s, "questions")) {
    r.points.push_back(rational_from_json(json_get<Json>(q, "points")));
    auto ans = q.find("answer");
    r.answers.push_back(ans == q.end() ? std::nullopt : fingerprint_answer(*ans));
  }
  return r;
}

inline std::vector<SubmissionRecord> select_attempts(std::vector<SubmissionRecord> all, AttemptPolicy policy) {
  std::map<std::string, SubmissionRecord> best;
  for (auto& r : all) {
    auto it = best.find(r.lms_id);
    if (it == best.end()) {
      best.emplace(r.lms_id, std::move(r));
      continue;
    }
    bool replace = false;
    if (policy == AttemptPolicy::Latest) {
      replace = r.attempt > it->second.attempt;
    } else {
      Rational mine, theirs;
      for (const auto& p : r.points) mine += p;
      for (const auto& p : it->second.points) theirs += p;
      replace = mine > theirs || (mine == theirs && r.attempt > it->second.attempt);
    }
    if (replace) it->second = std::move(r);
  }
  std::vector<SubmissionRecord> out;
  for (auto& [_, r] : best) out.push_back(std::move(r));
  return out;
}

inline void check_arity(const std::vector<SubmissionRecord>& records, const QuizInfo& info) {
  for (const auto& r : records)
    if (r.points.size() != info.question_count)
      fail(ErrorKind::Parse, "submission from " + r.lms_id + " on quiz " + info.id + " has " +
                                 std::to_string(r.points.size()) + " questions, quiz has " +
                                 std::to_string(info.question_count));
}

inline std::vector<Student> sorted_roster(std::vector<Student> roster) {
  std::sort(roster.begin(), roster.end(), [](const Student& a, const Student& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < roster.size(); ++i)
    if (roster[i].id == roster[i - 1].id) fail(ErrorKind::Parse, "duplicate student id " + roster[i].id);
  return roster;
}

inline bool has_adjustment(const Json& submission, const std::string& tag) {
  auto it = submission.find("adjustments");
  if (it == submission.end()) return false;
  return std::any_of(it->begin(), it->end(), [&](const Json& a) { return a.value("tag", "") == tag; });
}

inline Rational fudge_points(const Json& submission) {
  auto it = submission.find("fudge_points");
  if (it == submission.end() || it->is_null()) return Rational(0);
  return rational_from_json(*it);
}

// Serializes award calls per (quiz, student, tag).
class KeyedLocks {
 public:
  std::shared_ptr<std::mutex> lock_for(const std::string& key) {
    std::lock_guard guard(mu_);
    auto& slot = locks_[key];
    if (!slot) slot = std::make_shared<std::mutex>();
    return slot;
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<std::mutex>> locks_;
};

}  // namespace detail

// Maps LMS submissions onto roster students. Submissions from users outside
// the roster are skipped and reported in `unknown`.
inline std::vector<ScoreVector> to_score_vectors(const std::vector<SubmissionRecord>& records,
                                                 const std::vector<Student>& roster, const Quiz& quiz,
                                                 std::vector<std::string>* unknown = nullptr) {
  std::map<std::string, const Student*> by_lms;
  for (const auto& s : roster)
    if (s.lms_id) by_lms[*s.lms_id] = &s;
  std::vector<ScoreVector> out;
  for (const auto& r : records) {
    auto it = by_lms.find(r.lms_id);
    if (it == by_lms.end()) {
      if (unknown) unknown->push_back(r.lms_id);
      continue;
    }
    ScoreVector v{it->second->id, quiz.id, r.points, r.answers};
    validate_score_vector(v, quiz);
    out.push_back(std::move(v));
  }
  std::sort(out.begin(), out.end(), [](const ScoreVector& a, const ScoreVector& b) { return a.student < b.student; });
  return out;
}

// ---- HTTP ---------------------------------------------------------------------------

struct HttpRequest {
  std::string method;
  std::string url;  // absolute
  std::map<std::string, std::string> headers;
  std::string body;
};

struct HttpResponse {
  int status = 0;
  std::map<std::string, std::string> headers;  // lower-case names
  std::string body;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  // Throws Error(Transport) when no response was received at all.
  virtual HttpResponse send(const HttpRequest& request) = 0;
};

// Extracts the rel="next" target from an RFC 8288 Link header.
inline std::optional<std::string> next_link(const std::string& link_header) {
  std::size_t pos = 0;
  while (pos < link_header.size()) {
    auto open = link_header.find('<', pos);
    if (open == std::string::npos) break;
    auto close = link_header.find('>', open);
    if (close == std::string::npos) break;
    auto end = link_header.find(',', close);
    std::string params = link_header.substr(close + 1, end == std::string::npos ? std::string::npos : end - close - 1);
    if (params.find("rel=\"next\"") != std::string::npos || params.find("rel=next") != std::string::npos)
      return link_header.substr(open + 1, close - open - 1);
    if (end == std::string::npos) break;
    pos = end + 1;
  }
  return std::nullopt;
}

class HttpLms final : public LmsAdapter {
 public:
  HttpLms(LmsConfig config, std::shared_ptr<HttpTransport> transport, AttemptPolicy policy = AttemptPolicy::Latest)
      : config_(std::move(config)), transport_(std::move(transport)), policy_(policy) {
    config_.validate();
    while (!config_.base_url.empty() && config_.base_url.back() == '/') config_.base_url.pop_back();
  }

  std::vector<Student> list_students() override {
    std::vector<Student> roster;
    for (const auto& u : get_paged(course_url() + "/users?enrollment_type[]=student", nullptr))
      roster.push_back(detail::student_from_user(u));
    return detail::sorted_roster(std::move(roster));
  }

  QuizInfo quiz_info(const QuizId& quiz) override {
    return detail::quiz_from_payload(parse(request("GET", quiz_url(quiz), "", "quiz " + quiz)));
  }

  std::vector<SubmissionRecord> fetch_submissions(const QuizId& quiz) override {
    QuizInfo info = quiz_info(quiz);
    std::vector<SubmissionRecord> all;
    for (const auto& s : get_paged(quiz_url(quiz) + "/submissions", "quiz_submissions"))
      all.push_back(detail::submission_from_payload(s, quiz));
    detail::check_arity(all, info);
    return detail::select_attempts(std::move(all), policy_);
  }

  BonusAck award_bonus(const QuizId& quiz, const Student& student, const Rational& points,
                       const std::string& tag) override {
    if (points < Rational(0)) fail(ErrorKind::InvalidArgument, "bonus points must be nonnegative");
    if (!student.lms_id) fail(ErrorKind::InvalidArgument, "student " + student.id + " has no LMS id");
    auto lock = locks_.lock_for(quiz + "/" + *student.lms_id + "/" + tag);
    std::lock_guard guard(*lock);

    const std::string url = quiz_url(quiz) + "/submissions/" + *student.lms_id;
    Json current;
    try {
      current = parse(request("GET", url, "", "submission"));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NotFound)
        throw Error(ErrorKind::Precondition, "no submission from " + student.id + " on quiz " + quiz);
      throw;
    }
    if (current.contains("quiz_submissions")) current = current["quiz_submissions"].at(0);
    BonusAck ack{*student.lms_id, quiz, points, false, detail::fudge_points(current)};
    if (detail::has_adjustment(current, tag)) return ack;

    Json adjustment;
    adjustment["tag"] = tag;
    adjustment["points"] = rational_to_json(points);
    Json entry;
    entry["attempt"] = json_get_or<int>(current, "attempt", 1);
    entry["fudge_points"] = rational_to_json(ack.fudge_total + points);
    entry["adjustment"] = std::move(adjustment);
    Json body;
    body["quiz_submissions"] = Json::array({std::move(entry)});
    Json updated = parse(request("PUT", url, body.dump(), "submission"));
    if (updated.contains("quiz_submissions")) updated = updated["quiz_submissions"].at(0);
    ack.applied = true;
    ack.fudge_total = detail::fudge_points(updated);
    return ack;
  }

  const LmsConfig& config() const { return config_; }

 private:
  std::string course_url() const { return config_.base_url + "/api/v1/courses/" + config_.course_id; }
  std::string quiz_url(const QuizId& quiz) const { return course_url() + "/quizzes/" + quiz; }

  static Json parse(const HttpResponse& r) {
    try {
      return Json::parse(r.body);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(ErrorKind::Lms, "LMS returned malformed JSON", r.body);
    }
  }

  std::string absolute(const std::string& url) const {
    if (url.rfind("http://", 0) == 0 || url.rfind("https://", 0) == 0) return url;
    // Relative next-links resolve against the base origin.
    auto scheme_end = config_.base_url.find("://");
    auto path_start = config_.base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    std::string origin = path_start == std::string::npos ? config_.base_url : config_.base_url.substr(0, path_start);
    return origin + (url.empty() || url.front() != '/' ? "/" : "") + url;
  }

  // Retries transport failures and 5xx responses with exponential backoff.
  HttpResponse request(const std::string& method, const std::string& url, const std::string& body,
                       const std::string& what) {
    HttpRequest req{method, absolute(url), {{"Authorization", "Bearer " + config_.auth_token},
                                            {"Accept", "application/json"}}, body};
    if (!body.empty()) req.headers["Content-Type"] = "application/json";
    auto delay = config_.backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
      HttpResponse resp;
      bool retryable = false;
      try {
        resp = transport_->send(req);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Transport) throw;
        retryable = true;
        last_error = e.what();
      }
      if (!retryable) {
        if (resp.status >= 200 && resp.status < 300) return resp;
        if (resp.status == 401 || resp.status == 403) throw Error(ErrorKind::Unauthorized, "unauthorized", resp.body);
        if (resp.status == 404) throw Error(ErrorKind::NotFound, "LMS has no " + what, resp.body);
        if (resp.status < 500) throw Error(ErrorKind::Lms, "LMS rejected " + method + " " + what + " (HTTP " +
                                                               std::to_string(resp.status) + ")", resp.body);
        last_error = "HTTP " + std::to_string(resp.status);
      }
      if (attempt < config_.max_attempts && delay.count() > 0) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
    }
    throw Error(ErrorKind::Transport, method + " " + what + " failed after " + std::to_string(config_.max_attempts) +
                                          " attempts: " + last_error);
  }

  // Walks Link-header pagination. `wrapper` names the array field when the
  // body is an object rather than a bare array.
  std::vector<Json> get_paged(const std::string& first, const char* wrapper) {
    std::string url = first + (first.find('?') == std::string::npos ? "?" : "&") +
                      "per_page=" + std::to_string(config_.page_size);
    std::vector<Json> items;
    std::set<std::string> visited;
    while (true) {
      if (!visited.insert(url).second) fail(ErrorKind::Lms, "LMS pagination loops at " + url);
      HttpResponse resp = request("GET", url, "", "listing");
      Json page = parse(resp);
      const Json& arr = wrapper && page.is_object() ? page.at(wrapper) : page;
      if (!arr.is_array()) throw Error(ErrorKind::Lms, "LMS listing is not an array", resp.body);
      for (const auto& e : arr) items.push_back(e);
      auto link = resp.headers.find("link");
      if (link == resp.headers.end()) break;
      auto next = next_link(link->second);
      if (!next) break;
      url = *next;
    }
    return items;
  }

  LmsConfig config_;
  std::shared_ptr<HttpTransport> transport_;
  AttemptPolicy policy_;
  detail::KeyedLocks locks_;
};

// ---- fixture -------------------------------------------------------------------------
//
// Directory layout:
//   roster.json            array of users  {id, name, login_id}
//   quiz_<id>.json         quiz object     {id, title, questions: [...]}
//   submissions_<id>.json  {"quiz_submissions": [ {user_id, attempt, finished_at,
//                           time_spent, questions: [{points, answer}],
//                           fudge_points, adjustments: [{tag, points}]} ]}
//   auth.json              optional {"token": "..."}; when present the
//                          configured token must match

class FixtureLms final : public LmsAdapter {
 public:
  explicit FixtureLms(std::filesystem::path dir, std::string token = {}, int page_size = 50,
                      AttemptPolicy policy = AttemptPolicy::Latest)
      : dir_(std::move(dir)), token_(std::move(token)), page_size_(page_size), policy_(policy) {
    if (page_size_ < 1) fail(ErrorKind::InvalidArgument, "page size must be positive");
    if (!std::filesystem::is_directory(dir_)) fail(ErrorKind::Io, "fixture directory " + dir_.string() + " not found");
  }

  std::vector<Student> list_students() override {
    check_auth();
    Json users = load("roster.json");
    std::vector<Student> roster;
    // Mirrors server paging so page_size has the same (non-)effect as over HTTP.
    for (std::size_t start = 0; start < users.size(); start += static_cast<std::size_t>(page_size_))
      for (std::size_t i = start; i < std::min(users.size(), start + static_cast<std::size_t>(page_size_)); ++i)
        roster.push_back(detail::student_from_user(users[i]));
    return detail::sorted_roster(std::move(roster));
  }

  QuizInfo quiz_info(const QuizId& quiz) override {
    check_auth();
    auto path = dir_ / ("quiz_" + quiz + ".json");
    if (!std::filesystem::exists(path)) throw Error(ErrorKind::NotFound, "LMS has no quiz " + quiz);
    return detail::quiz_from_payload(read_json_file(path.string()));
  }

  std::vector<SubmissionRecord> fetch_submissions(const QuizId& quiz) override {
    QuizInfo info = quiz_info(quiz);
    std::lock_guard guard(file_mu_);
    std::vector<SubmissionRecord> all;
    const Json doc = submissions_doc(quiz);
    for (const auto& s : doc.at("quiz_submissions")) all.push_back(detail::submission_from_payload(s, quiz));
    detail::check_arity(all, info);
    return detail::select_attempts(std::move(all), policy_);
  }

  BonusAck award_bonus(const QuizId& quiz, const Student& student, const Rational& points,
                       const std::string& tag) override {
    check_auth();
    if (points < Rational(0)) fail(ErrorKind::InvalidArgument, "bonus points must be nonnegative");
    if (!student.lms_id) fail(ErrorKind::InvalidArgument, "student " + student.id + " has no LMS id");
    std::lock_guard guard(file_mu_);
    Json doc = submissions_doc(quiz);
    Json* target = nullptr;
    for (auto& s : doc["quiz_submissions"]) {
      if (detail::id_text(s["user_id"]) != *student.lms_id) continue;
      if (!target || json_get_or<int>(s, "attempt", 1) > json_get_or<int>(*target, "attempt", 1)) target = &s;
    }
    if (!target) throw Error(ErrorKind::Precondition, "no submission from " + student.id + " on quiz " + quiz);
    BonusAck ack{*student.lms_id, quiz, points, false, detail::fudge_points(*target)};
    if (detail::has_adjustment(*target, tag)) return ack;
    Json adjustment;
    adjustment["tag"] = tag;
    adjustment["points"] = rational_to_json(points);
    if (!target->contains("adjustments")) (*target)["adjustments"] = Json::array();
    (*target)["adjustments"].push_back(std::move(adjustment));
    ack.fudge_total = ack.fudge_total + points;
    (*target)["fudge_points"] = rational_to_json(ack.fudge_total);
    ack.applied = true;
    write_json_file((dir_ / ("submissions_" + quiz + ".json")).string(), doc);
    return ack;
  }

  const std::filesystem::path& directory() const { return dir_; }

 private:
  void check_auth() const {
    auto auth = dir_ / "auth.json";
    if (!std::filesystem::exists(auth)) return;
    Json j = read_json_file(auth.string());
    if (j.value("token", "") != token_) throw Error(ErrorKind::Unauthorized, "unauthorized");
  }

  Json load(const std::string& name) const {
    auto path = dir_ / name;
    if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "fixture file " + path.string() + " missing");
    return read_json_file(path.string());
  }

  Json submissions_doc(const QuizId& quiz) const {
    auto path = dir_ / ("submissions_" + quiz + ".json");
    if (!std::filesystem::exists(path)) {
      Json empty;
      empty["quiz_submissions"] = Json::array();
      return empty;
    }
    Json doc = read_json_file(path.string());
    if (!doc.contains("quiz_submissions")) fail(ErrorKind::Parse, path.string() + " lacks quiz_submissions");
    return doc;
  }

  std::filesystem::path dir_;
  std::string token_;
  int page_size_;
  AttemptPolicy policy_;
  std::mutex file_mu_;
};

}  // namespace pica::lms
