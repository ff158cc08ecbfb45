#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <httplib.h>
#include "pica/error.hpp"
#include "pica/json.hpp"
#include "pica/lms.hpp"
#include "pica/session_store.hpp"
#include "pica/workflow.hpp"

// JSON-over-HTTP API backing the instructor console. All mutations go through
// one writer lock; reads take a shared lock and never touch the store.
namespace pica::console {

struct ServiceOptions {
  std::string token;           // static bearer token; empty disables auth
  std::string console_origin;  // the only origin granted CORS
  std::string static_dir;      // console assets mounted at "/"
  MissingPolicy missing_policy = MissingPolicy::Exclude;
};

inline int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Conflict: return 409;
    case ErrorKind::NotFound: return 404;
    case ErrorKind::InvalidArgument:
    case ErrorKind::Parse: return 400;
    case ErrorKind::Precondition: return 422;
    case ErrorKind::Unauthorized:
    case ErrorKind::Transport:
    case ErrorKind::Lms: return 502;
    case ErrorKind::Io: return 500;
  }
  return 500;
}

// Pure projection of store state for one dyad.
inline Json session_view(const SessionStore& store, int dyad) {
  const QuizDyad& d = store.course().dyad(dyad);
  const SessionRecord s = store.session_or_new(dyad);
  Json v;
  v["dyad"] = dyad;
  v["phase"] = to_string(s.phase);
  v["revision"] = s.revision;
  v["attendance_locked"] = s.phase >= Phase::BOpen;
  Json roster = Json::array();
  for (const auto& st : store.roster()) {
    Json e;
    e["id"] = st.id;
    e["display_name"] = st.display_name;
    e["present"] = std::binary_search(s.attendance.begin(), s.attendance.end(), st.id);
    e["has_a_quiz"] = s.a_score(st.id) != nullptr;
    roster.push_back(std::move(e));
  }
  v["roster"] = std::move(roster);

  std::optional<BonusOutcome> bonus;
  if (s.pairing && s.phase >= Phase::BClosed) bonus = apply_bonus_policy(s, store.course().bonus, d.b_quiz);

  if (s.pairing) {
    Json p;
    Json groups = Json::array();
    const auto all = s.pairing->groups();
    for (std::size_t gi = 0; gi < all.size(); ++gi) {
      const auto& members = all[gi];
      Json g;
      g["members"] = members;
      Json dists = Json::array();
      for (std::size_t i = 0; i < members.size(); ++i)
        for (std::size_t k = i + 1; k < members.size(); ++k) {
          Json e;
          e["a"] = members[i];
          e["b"] = members[k];
          e["distance"] = s.distances ? real_to_json(s.distances->distance(members[i], members[k])) : Json(nullptr);
          dists.push_back(std::move(e));
        }
      g["distances"] = std::move(dists);
      if (bonus && gi < bonus->groups.size()) {
        const auto& gb = bonus->groups[gi];
        Json b;
        b["matched"] = gb.matched;
        std::vector<bool> qm = gb.question_match;
        b["question_match"] = qm;
        b["notice"] = gb.notice ? Json(*gb.notice) : Json(nullptr);
        b["awarded"] = std::all_of(members.begin(), members.end(), [&](const StudentId& id) {
          return std::any_of(s.bonus_awards.begin(), s.bonus_awards.end(), [&](const BonusAward& a) { return a.student == id; });
        }) && gb.matched;
        g["bonus"] = std::move(b);
      } else {
        g["bonus"] = nullptr;
      }
      groups.push_back(std::move(g));
    }
    p["groups"] = std::move(groups);
    p["manual"] = s.pairing->manual;
    p["plan"] = to_json(*s.pairing);
    p["excluded"] = s.pairing_excluded;
    v["pairing"] = std::move(p);
  } else {
    v["pairing"] = nullptr;
  }

  Json awards = Json::array();
  for (const auto& a : s.bonus_awards) {
    Json e;
    e["student"] = a.student;
    e["points"] = rational_to_json(a.points);
    e["applied"] = rational_to_json(a.applied);
    awards.push_back(std::move(e));
  }
  v["bonus_awards"] = std::move(awards);

  Json summary;
  if (s.phase >= Phase::BClosed) {
    auto records = build_gain_records({s}, store.course().dyads);
    std::vector<double> t, c;
    for (const auto& r : records) (r.treatment ? t : c).push_back(r.mng);
    summary["treatment_n"] = t.size();
    summary["control_n"] = c.size();
    summary["treatment_mean_mng"] = t.empty() ? Json(nullptr) : Json(stats::mean(t));
    summary["control_mean_mng"] = c.empty() ? Json(nullptr) : Json(stats::mean(c));
  }
  v["analysis"] = summary.is_null() ? Json(nullptr) : summary;
  return v;
}

class ConsoleService {
 public:
  ConsoleService(SessionStore store, std::shared_ptr<lms::LmsAdapter> lms, ServiceOptions options = {})
      : store_(std::move(store)), lms_(std::move(lms)), options_(std::move(options)) {
    // httplib's default adds SO_REUSEPORT, which would let a second server
    // share a port that is already taken.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });
    routes();
  }

  ConsoleService(const ConsoleService&) = delete;
  ConsoleService& operator=(const ConsoleService&) = delete;

  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

  // Serialized copy of the store, for tests and diagnostics.
  std::string snapshot() const {
    std::shared_lock lock(mu_);
    return store_.serialize();
  }

 private:
  using Request = httplib::Request;
  using Response = httplib::Response;

  static void send_json(Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(2), "application/json");
  }

  static void send_error(Response& res, const Error& e) {
    Json body;
    body["error"] = to_string(e.kind());
    body["message"] = e.what();
    if (!e.payload().empty()) body["payload"] = e.payload();
    send_json(res, http_status(e.kind()), body);
  }

  static Json body_json(const Request& req) {
    if (req.body.empty()) return Json::object();
    try {
      return Json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::InvalidArgument, std::string("request body is not JSON: ") + e.what());
    }
  }

  static int dyad_param(const Request& req) { return std::stoi(req.matches[1].str()); }

  // Optimistic concurrency: a stale If-Match revision loses.
  static void check_revision(const Request& req, const SessionRecord& s) {
    if (!req.has_header("If-Match")) return;
    std::string want = req.get_header_value("If-Match");
    std::erase(want, '"');
    if (want != std::to_string(s.revision))
      throw Error(ErrorKind::Conflict, "session revision is " + std::to_string(s.revision) + ", request expected " + want);
  }

  template <typename Fn>
  httplib::Server::Handler guarded(Fn fn) {
    return [this, fn](const Request& req, Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const nlohmann::json::exception& e) {
        send_error(res, Error(ErrorKind::InvalidArgument, e.what()));
      } catch (const std::exception& e) {
        Json body;
        body["error"] = "internal";
        body["message"] = e.what();
        send_json(res, 500, body);
      }
    };
  }

  void commit(const SessionRecord& updated, const std::string& event, Json detail = Json::object()) {
    store_.put(updated, event, std::move(detail));
    store_.save();
  }

  void routes() {
    server_.set_pre_routing_handler([this](const Request& req, Response& res) {
      const std::string origin = req.get_header_value("Origin");
      if (!options_.console_origin.empty() && origin == options_.console_origin) {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Vary", "Origin");
        res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type, If-Match");
        res.set_header("Access-Control-Allow-Methods", "GET, PUT, POST, OPTIONS");
        res.set_header("Access-Control-Expose-Headers", "ETag");
      }
      if (req.method == "OPTIONS") {
        res.status = 204;
        return httplib::Server::HandlerResponse::Handled;
      }
      if (!options_.token.empty() && req.path.rfind("/api/", 0) == 0 &&
          req.get_header_value("Authorization") != "Bearer " + options_.token) {
        Json body;
        body["error"] = "unauthorized";
        body["message"] = "missing or wrong bearer token";
        send_json(res, 401, body);
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });

    server_.Get(R"(/api/session/(\d+))", guarded([this](const Request& req, Response& res) {
      std::shared_lock lock(mu_);
      const int dyad = dyad_param(req);
      Json view = session_view(store_, dyad);
      res.set_header("ETag", "\"" + std::to_string(view["revision"].get<std::uint64_t>()) + "\"");
      send_json(res, 200, view);
    }));

    server_.Put(R"(/api/session/(\d+)/attendance)", guarded([this](const Request& req, Response& res) {
      Json body = body_json(req);
      auto present = json_get<std::vector<StudentId>>(body, "present");
      std::unique_lock lock(mu_);
      const int dyad = dyad_param(req);
      SessionRecord s = store_.session_or_new(dyad);
      check_revision(req, s);
      SessionRecord updated = record_attendance(s, present, store_.roster(), store_.now());
      Json detail;
      detail["present"] = updated.attendance.size();
      commit(updated, "attendance", detail);
      send_json(res, 200, session_view(store_, dyad));
    }));

    server_.Post(R"(/api/session/(\d+)/pairing)", guarded([this](const Request& req, Response& res) {
      Json body = body_json(req);
      MissingPolicy policy = options_.missing_policy;
      if (auto mp = body.find("missing_policy"); mp != body.end()) {
        const auto name = mp->get<std::string>();
        policy = name == "fail" ? MissingPolicy::Fail : name == "zero" ? MissingPolicy::ZeroVector : MissingPolicy::Exclude;
      }
      std::unique_lock lock(mu_);
      const int dyad = dyad_param(req);
      check_revision(req, store_.session_or_new(dyad));
      auto result = workflow::run_pairing(store_, dyad, std::nullopt, policy);
      Json detail;
      detail["groups"] = result.plan.groups().size();
      commit(result.session, "pairing", detail);
      Json out;
      out["plan"] = to_json(result.plan);
      out["distances"] = to_json(result.matrix);
      out["excluded"] = result.excluded;
      Json warnings = Json::array();
      for (const auto& id : result.excluded) warnings.push_back("excluded " + id + ": no a-quiz submission");
      out["warnings"] = std::move(warnings);
      out["view"] = session_view(store_, dyad);
      send_json(res, 200, out);
    }));

    server_.Post(R"(/api/session/(\d+)/pairing/override)", guarded([this](const Request& req, Response& res) {
      Json body = body_json(req);
      auto swap = json_get<std::vector<StudentId>>(body, "swap");
      if (swap.size() != 2) fail(ErrorKind::InvalidArgument, "swap needs exactly two student ids");
      std::unique_lock lock(mu_);
      const int dyad = dyad_param(req);
      SessionRecord s = store_.session_or_new(dyad);
      check_revision(req, s);
      for (const auto& id : swap)
        if (!store_.student(id)) throw Error(ErrorKind::NotFound, "unknown student id '" + id + "'");
      SessionRecord updated = override_pairing(s, swap[0], swap[1], store_.now());
      Json detail;
      detail["swap"] = swap;
      commit(updated, "pairing-override", detail);
      Json out;
      out["plan"] = to_json(*updated.pairing);
      out["manual"] = true;
      out["view"] = session_view(store_, dyad);
      send_json(res, 200, out);
    }));

    server_.Post(R"(/api/session/(\d+)/bonus)", guarded([this](const Request& req, Response& res) {
      std::unique_lock lock(mu_);
      const int dyad = dyad_param(req);
      check_revision(req, store_.session_or_new(dyad));
      auto result = workflow::push_bonus(store_, lms_.get(), dyad, false);
      Json detail;
      detail["new_awards"] = result.new_awards;
      commit(result.session, "bonus", detail);
      Json out;
      Json awards = Json::array();
      for (std::size_t i = 0; i < result.outcome.awards.size(); ++i) {
        const auto& a = result.outcome.awards[i];
        Json e;
        e["student"] = a.student;
        e["points"] = rational_to_json(a.points);
        e["applied"] = rational_to_json(a.applied);
        e["new"] = i < result.acks.size() && result.acks[i].applied;
        awards.push_back(std::move(e));
      }
      out["awards"] = std::move(awards);
      out["new_awards"] = result.new_awards;
      out["notices"] = result.outcome.notices;
      out["view"] = session_view(store_, dyad);
      send_json(res, 200, out);
    }));

    server_.Get("/api/analysis/summary", guarded([this](const Request&, Response& res) {
      std::shared_lock lock(mu_);
      auto data = workflow::analysis_data(store_.sessions(), store_.course());
      send_json(res, 200, summarize(data.records, data.question_records));
    }));

    if (!options_.static_dir.empty()) server_.set_mount_point("/", options_.static_dir);
  }

  SessionStore store_;
  std::shared_ptr<lms::LmsAdapter> lms_;
  ServiceOptions options_;
  mutable std::shared_mutex mu_;
  httplib::Server server_;
};

}  // namespace pica::console
