#pragma once

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include "pica/json.hpp"
#include "pica/lms.hpp"
#include "pica/session_store.hpp"

namespace fixture {

using pica::Json;
namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("pica-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" + std::to_string(rd() % 100000));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline std::string quiz_id(int dyad, char half) { return "q" + std::to_string(dyad) + half; }

// Course JSON with `dyads` dyads of `questions` one-point questions. Question
// 1 of dyad t+1 reuses the concept of the last question of dyad t, and a link
// joins the two.
inline Json course_json(int dyads, int questions = 5) {
  Json j;
  j["schema_version"] = 1;
  j["course_id"] = "demo";
  Json ds = Json::array();
  auto concept_of = [&](int t, int q) {
    if (q == 1 && t > 1) return "c" + std::to_string(t - 1) + "_" + std::to_string(questions);
    return "c" + std::to_string(t) + "_" + std::to_string(q);
  };
  for (int t = 1; t <= dyads; ++t) {
    Json d;
    d["index"] = t;
    for (char h : {'a', 'b'}) {
      Json quiz;
      quiz["id"] = quiz_id(t, h);
      Json qs = Json::array();
      for (int q = 1; q <= questions; ++q) qs.push_back({{"index", q}, {"max_points", 1}, {"concept", concept_of(t, q)}});
      quiz["questions"] = qs;
      d[std::string(1, h) + "_quiz"] = quiz;
    }
    ds.push_back(d);
  }
  j["dyads"] = ds;
  Json links = Json::array();
  for (int t = 1; t < dyads; ++t)
    links.push_back({{"source", {{"dyad", t}, {"half", "A"}, {"question", questions}}},
                     {"target", {{"dyad", t + 1}, {"half", "A"}, {"question", 1}}},
                     {"concept", concept_of(t, questions)}});
  j["isomorphic_links"] = links;
  j["bonus"] = {{"points", 1}, {"require_all_questions", true}, {"cap_at_max", true}};
  return j;
}

inline pica::CourseConfig course(int dyads, int questions = 5) { return pica::course_config_from_json(course_json(dyads, questions)); }

inline std::string sid(int i, int width = 2) {
  std::string n = std::to_string(i);
  return "s" + std::string(n.size() < static_cast<std::size_t>(width) ? width - n.size() : 0, '0') + n;
}

inline std::string lms_of(const std::string& student) { return "9" + student.substr(1); }

inline Json user_json(const std::string& student, const std::string& name = "") {
  return {{"id", std::stoi(lms_of(student))}, {"name", name.empty() ? "Student " + student : name}, {"login_id", student}};
}

struct Submission {
  std::string student;
  std::vector<double> points;
  std::vector<std::string> answers;  // empty => no answers recorded
  int attempt = 1;
};

inline Json submission_json(const Submission& s) {
  Json j;
  j["user_id"] = std::stoi(lms_of(s.student));
  j["attempt"] = s.attempt;
  j["finished_at"] = "2024-01-0" + std::to_string(std::min(9, s.attempt)) + "T10:00:00Z";
  j["time_spent"] = 600;
  Json qs = Json::array();
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    Json q;
    q["points"] = s.points[i];
    if (i < s.answers.size()) q["answer"] = s.answers[i];
    qs.push_back(q);
  }
  j["questions"] = qs;
  j["fudge_points"] = 0;
  j["adjustments"] = Json::array();
  return j;
}

inline Json quiz_json(const std::string& id, int questions) {
  Json q;
  q["id"] = id;
  q["title"] = "Quiz " + id;
  Json qs = Json::array();
  for (int i = 1; i <= questions; ++i) qs.push_back({{"position", i}, {"points_possible", 1}});
  q["questions"] = qs;
  return q;
}

// A fixture directory in the layout FixtureLms reads.
class FixtureDir {
 public:
  explicit FixtureDir(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }
  const fs::path& path() const { return dir_; }

  void roster(const std::vector<std::string>& students) {
    Json users = Json::array();
    for (const auto& s : students) users.push_back(user_json(s));
    pica::write_json_file((dir_ / "roster.json").string(), users);
  }

  void quiz(const std::string& id, int questions) {
    pica::write_json_file((dir_ / ("quiz_" + id + ".json")).string(), quiz_json(id, questions));
  }

  void submissions(const std::string& quiz_id, const std::vector<Submission>& subs) {
    Json doc;
    doc["quiz_submissions"] = Json::array();
    for (const auto& s : subs) doc["quiz_submissions"].push_back(submission_json(s));
    pica::write_json_file((dir_ / ("submissions_" + quiz_id + ".json")).string(), doc);
  }

  void token(const std::string& t) { pica::write_json_file((dir_ / "auth.json").string(), Json{{"token", t}}); }

  Json read(const std::string& name) const { return pica::read_json_file((dir_ / name).string()); }

 private:
  fs::path dir_;
};

// ---- fake Canvas ---------------------------------------------------------------
//
// In-memory Canvas-style REST server. handle() is shared by the in-process
// transport and the socket server so both paths see identical behavior.

class FakeCanvas {
 public:
  std::string course = "77";
  std::string token = "secret";
  std::vector<Json> users;
  std::map<std::string, Json> quizzes;                   // id -> quiz
  std::map<std::string, std::vector<Json>> submissions;  // quiz id -> submission list
  int fail_next = 0;                                     // respond 503 this many times
  int reject_put_status = 0;                             // respond with this to PUTs when nonzero
  std::string origin = "https://canvas.test";

  pica::lms::HttpResponse handle(const pica::lms::HttpRequest& req) {
    std::lock_guard guard(mu_);
    log.push_back(req.method + " " + req.url);
    pica::lms::HttpResponse res;
    if (fail_next > 0) {
      --fail_next;
      res.status = 503;
      res.body = R"({"errors":[{"message":"try later"}]})";
      return res;
    }
    auto auth = req.headers.find("Authorization");
    if (auth == req.headers.end() || auth->second != "Bearer " + token) {
      res.status = 401;
      res.body = R"({"errors":[{"message":"Invalid access token."}]})";
      return res;
    }
    std::string url = req.url;
    if (url.rfind(origin, 0) == 0) url = url.substr(origin.size());
    std::string path = url, query;
    if (auto q = url.find('?'); q != std::string::npos) {
      path = url.substr(0, q);
      query = url.substr(q + 1);
    }
    const std::string base = "/api/v1/courses/" + course;
    if (path.rfind(base, 0) != 0) return not_found();
    std::string rest = path.substr(base.size());
    std::vector<std::string> parts;
    for (std::size_t i = 1; i <= rest.size();) {
      auto slash = rest.find('/', i);
      parts.push_back(rest.substr(i, slash == std::string::npos ? std::string::npos : slash - i));
      if (slash == std::string::npos) break;
      i = slash + 1;
    }
    if (parts.size() == 1 && parts[0] == "users" && req.method == "GET") return page(users, query, path, nullptr);
    if (parts.size() >= 2 && parts[0] == "quizzes") {
      auto q = quizzes.find(parts[1]);
      if (q == quizzes.end()) return not_found();
      if (parts.size() == 2 && req.method == "GET") return ok(q->second);
      if (parts.size() == 3 && parts[2] == "submissions" && req.method == "GET")
        return page(submissions[parts[1]], query, path, "quiz_submissions");
      if (parts.size() == 4 && parts[2] == "submissions") {
        auto& subs = submissions[parts[1]];
        Json* target = nullptr;
        for (auto& s : subs)
          if (pica::lms::detail::id_text(s["user_id"]) == parts[3] &&
              (!target || s.value("attempt", 1) > target->value("attempt", 1)))
            target = &s;
        if (!target) return not_found();
        if (req.method == "GET") return ok(Json{{"quiz_submissions", Json::array({*target})}});
        if (req.method == "PUT") {
          if (reject_put_status) {
            res.status = reject_put_status;
            res.body = R"({"errors":[{"message":"fudge points not allowed"}]})";
            return res;
          }
          Json body = Json::parse(req.body);
          const Json& e = body.at("quiz_submissions").at(0);
          (*target)["fudge_points"] = e.at("fudge_points");
          if (e.contains("adjustment")) (*target)["adjustments"].push_back(e.at("adjustment"));
          ++puts;
          return ok(Json{{"quiz_submissions", Json::array({*target})}});
        }
      }
    }
    return not_found();
  }

  std::vector<std::string> log;
  int puts = 0;

 private:
  static pica::lms::HttpResponse ok(const Json& body) {
    pica::lms::HttpResponse r;
    r.status = 200;
    r.body = body.dump();
    return r;
  }
  static pica::lms::HttpResponse not_found() {
    pica::lms::HttpResponse r;
    r.status = 404;
    r.body = R"({"errors":[{"message":"The specified resource does not exist."}]})";
    return r;
  }

  pica::lms::HttpResponse page(const std::vector<Json>& items, const std::string& query, const std::string& path,
                               const char* wrapper) {
    std::size_t per_page = 10, page_no = 1;
    std::string keep;
    for (std::size_t i = 0; i <= query.size();) {
      auto amp = query.find('&', i);
      std::string kv = query.substr(i, amp == std::string::npos ? std::string::npos : amp - i);
      if (kv.rfind("per_page=", 0) == 0)
        per_page = std::stoul(kv.substr(9));
      else if (kv.rfind("page=", 0) == 0)
        page_no = std::stoul(kv.substr(5));
      else if (!kv.empty())
        keep += (keep.empty() ? "" : "&") + kv;
      if (amp == std::string::npos) break;
      i = amp + 1;
    }
    Json arr = Json::array();
    for (std::size_t k = (page_no - 1) * per_page; k < std::min(items.size(), page_no * per_page); ++k) arr.push_back(items[k]);
    pica::lms::HttpResponse r = ok(wrapper ? Json{{wrapper, arr}} : arr);
    if (page_no * per_page < items.size()) {
      std::string next = origin + path + "?" + (keep.empty() ? "" : keep + "&") + "page=" + std::to_string(page_no + 1) +
                         "&per_page=" + std::to_string(per_page);
      r.headers["link"] = "<" + origin + path + "?page=1&per_page=" + std::to_string(per_page) + ">; rel=\"first\", <" +
                          next + ">; rel=\"next\"";
    }
    return r;
  }

  std::mutex mu_;
};

// In-process transport: every request goes to a FakeCanvas and the exchange
// is recorded.
class StubTransport final : public pica::lms::HttpTransport {
 public:
  explicit StubTransport(FakeCanvas& canvas) : canvas_(canvas) {}
  pica::lms::HttpResponse send(const pica::lms::HttpRequest& r) override {
    if (drop_next > 0) {
      --drop_next;
      throw pica::Error(pica::ErrorKind::Transport, "connection reset");
    }
    auto resp = canvas_.handle(r);
    std::lock_guard guard(mu_);
    recorded.emplace_back(r, resp);
    return resp;
  }
  int drop_next = 0;
  std::vector<std::pair<pica::lms::HttpRequest, pica::lms::HttpResponse>> recorded;

 private:
  FakeCanvas& canvas_;
  std::mutex mu_;
};

// Plays back recorded exchanges by (method, url); unknown requests fail.
class ReplayTransport final : public pica::lms::HttpTransport {
 public:
  explicit ReplayTransport(const std::vector<std::pair<pica::lms::HttpRequest, pica::lms::HttpResponse>>& tape) {
    for (const auto& [req, resp] : tape) tape_[req.method + " " + req.url] = resp;
  }
  pica::lms::HttpResponse send(const pica::lms::HttpRequest& r) override {
    auto it = tape_.find(r.method + " " + r.url);
    if (it == tape_.end()) throw pica::Error(pica::ErrorKind::Transport, "no recording for " + r.method + " " + r.url);
    return it->second;
  }

 private:
  std::map<std::string, pica::lms::HttpResponse> tape_;
};

// FakeCanvas served over a real socket on 127.0.0.1.
class CanvasServer {
 public:
  explicit CanvasServer(FakeCanvas& canvas) : canvas_(canvas) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      pica::lms::HttpRequest r;
      r.method = req.method;
      r.url = canvas_.origin + req.path;
      std::string q;
      for (const auto& [k, v] : req.params) q += (q.empty() ? "?" : "&") + k + "=" + v;
      r.url += q;
      for (const auto& [k, v] : req.headers) r.headers[k] = v;
      r.body = req.body;
      auto out = canvas_.handle(r);
      res.status = out.status;
      for (const auto& [k, v] : out.headers) {
        std::string val = v;
        // Links point at the socket origin.
        for (std::size_t p; (p = val.find(canvas_.origin)) != std::string::npos;) val.replace(p, canvas_.origin.size(), url());
        res.set_header(k, val);
      }
      res.set_content(out.body, "application/json");
    };
    server_.Get(".*", handler);
    server_.Put(".*", handler);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~CanvasServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  FakeCanvas& canvas_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace fixture
