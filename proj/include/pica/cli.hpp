#pragma once

#include <csignal>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include "pica/console_service.hpp"
#include "pica/error.hpp"
#include "pica/gain.hpp"
#include "pica/lms.hpp"
#include "pica/lms_http.hpp"
#include "pica/session_store.hpp"
#include "pica/workflow.hpp"

// Instructor command line: sync, pair, bonus, analyze, report, serve.
// Exit codes: 0 success, 1 user error, 2 environment or LMS error.
namespace pica::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitEnvironment = 2;

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Unauthorized:
    case ErrorKind::Transport:
    case ErrorKind::Lms:
    case ErrorKind::Io: return kExitEnvironment;
    default: return kExitUser;
  }
}

struct Options {
  std::string course_config;
  std::string store = "pica-store.json";
  int dyad = 0;
  std::string quiz = "a";
  bool open_b = false;
  std::string attendance;
  bool drop_missing = false;
  bool dry_run = false;
  std::string format = "table";
  std::string output = "reports";
  std::string dataset;
  std::string matrix_out;
  // LMS
  std::string fixture;
  std::string lms_config;
  bool insecure = false;
  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string token;
  std::string console_origin;
  std::string static_dir;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
  std::istream& in;
};

namespace detail {

inline std::unique_ptr<lms::LmsAdapter> make_lms(const Options& o) {
  if (!o.fixture.empty()) {
    lms::LmsConfig c = o.lms_config.empty() ? lms::config_from_env() : lms::config_from_file(o.lms_config);
    return std::make_unique<lms::FixtureLms>(o.fixture, c.auth_token, c.page_size);
  }
  lms::LmsConfig c = o.lms_config.empty() ? lms::config_from_env() : lms::config_from_file(o.lms_config);
  c.allow_insecure = o.insecure;
  auto transport = std::make_shared<lms::HttplibTransport>(c.timeout);
  return std::make_unique<lms::HttpLms>(c, transport);
}

inline SessionStore open_store(const Options& o) {
  if (!std::filesystem::exists(o.store))
    throw Error(ErrorKind::Precondition, "store " + o.store + " does not exist; run `pica sync --course-config <file>` first");
  SessionStore store = SessionStore::open(o.store);
  if (!o.course_config.empty()) store.set_course(load_course_config(o.course_config));
  return store;
}

inline std::string label(const SessionStore& store, const StudentId& id) {
  const Student* s = store.student(id);
  if (!s || s->display_name.empty() || s->display_name == id) return id;
  return s->display_name + " (" + id + ")";
}

// An existing file holds newline-delimited ids; "-" runs an interactive
// checklist; anything else is a comma-separated inline list.
inline std::vector<StudentId> read_attendance(const std::string& source, const SessionStore& store, Io& io) {
  std::vector<StudentId> out;
  auto trim = [](std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    return s.substr(i);
  };
  if (source == "-") {
    io.out << "Mark attendance (y = present, anything else = absent)\n";
    for (const auto& st : store.roster()) {
      io.out << "  " << label(store, st.id) << "? " << std::flush;
      std::string line;
      if (!std::getline(io.in, line)) break;
      line = trim(line);
      if (line == "y" || line == "Y" || line == "yes") out.push_back(st.id);
    }
    return out;
  }
  if (std::filesystem::is_regular_file(source)) {
    std::istringstream in(read_text_file(source));
    for (std::string line; std::getline(in, line);) {
      line = trim(line);
      if (!line.empty() && line.front() != '#') out.push_back(line);
    }
    return out;
  }
  std::stringstream ss(source);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline void print_plan(const SessionStore& store, int dyad, const workflow::PairingResult& r, const Options& o, Io& io) {
  if (o.format == "json") {
    Json j;
    j["dyad"] = dyad;
    j["plan"] = to_json(r.plan);
    j["distances"] = to_json(r.matrix);
    j["excluded"] = r.excluded;
    j["zero_filled"] = r.zero_filled;
    j["dry_run"] = o.dry_run;
    io.out << j.dump(2) << "\n";
    return;
  }
  const auto groups = r.plan.groups();
  if (o.format == "csv") {
    io.out << "group,student,display_name\n";
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (const auto& id : groups[g]) {
        const Student* s = store.student(id);
        io.out << (g + 1) << "," << id << "," << (s ? s->display_name : id) << "\n";
      }
    return;
  }
  io.out << "Dyad " << dyad << " pairing: " << r.matrix.size() << " students, " << groups.size() << " groups"
         << (o.dry_run ? " (dry run, not saved)" : "") << "\n\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    io.out << "  Group " << (g + 1) << ":  ";
    for (std::size_t k = 0; k < groups[g].size(); ++k) io.out << (k ? "  +  " : "") << label(store, groups[g][k]);
    io.out << "\n";
  }
  for (const auto& id : r.excluded) io.err << "warning: " << id << " is present but has no a-quiz submission; not paired\n";
}

}  // namespace detail

inline int cmd_sync(const Options& o, Io& io) {
  std::optional<WriterLock> lock;
  if (!o.dry_run) lock.emplace(o.store);
  SessionStore store = std::filesystem::exists(o.store)
                           ? detail::open_store(o)
                           : (o.course_config.empty()
                                  ? throw Error(ErrorKind::Precondition, "new store needs --course-config")
                                  : SessionStore(o.store, load_course_config(o.course_config)));
  auto lms = detail::make_lms(o);
  auto roster = workflow::sync_roster(store, *lms);
  Json report;
  report["roster"] = roster.size();
  if (o.dyad > 0) {
    SessionRecord session = store.session_or_new(o.dyad);
    if (o.open_b) {
      session = open_b_quiz(session, store.now());
      store.put(session, "open-b");
      report["phase"] = to_string(session.phase);
    } else {
      const Half half = half_from_string(o.quiz);
      auto r = workflow::sync_quiz(store, *lms, o.dyad, half);
      store.put(r.session, half == Half::A ? "sync-a" : "sync-b", Json{{"submissions", r.submissions}});
      report["quiz"] = store.course().dyad(o.dyad).quiz(half).id;
      report["submissions"] = r.submissions;
      report["changed"] = r.changed;
      report["phase"] = to_string(r.session.phase);
      for (const auto& u : r.unknown_users) io.err << "warning: submission from LMS user " << u << " not on roster\n";
    }
  }
  report["dry_run"] = o.dry_run;
  if (!o.dry_run) store.save();
  if (o.format == "json") {
    io.out << report.dump(2) << "\n";
  } else {
    io.out << "roster: " << roster.size() << " students\n";
    if (report.contains("submissions"))
      io.out << "quiz " << report["quiz"].get<std::string>() << ": " << report["submissions"].get<std::size_t>()
             << " submissions, dyad " << o.dyad << " now " << report["phase"].get<std::string>() << "\n";
    else if (report.contains("phase"))
      io.out << "dyad " << o.dyad << " now " << report["phase"].get<std::string>() << "\n";
    if (o.dry_run) io.out << "(dry run, store not written)\n";
  }
  return kExitOk;
}

inline int cmd_pair(const Options& o, Io& io) {
  if (o.dyad <= 0) fail(ErrorKind::InvalidArgument, "--dyad is required");
  std::optional<WriterLock> lock;
  if (!o.dry_run) lock.emplace(o.store);
  SessionStore store = detail::open_store(o);
  std::optional<std::vector<StudentId>> present;
  if (!o.attendance.empty()) present = detail::read_attendance(o.attendance, store, io);
  auto result = workflow::run_pairing(store, o.dyad, present,
                                      o.drop_missing ? MissingPolicy::Exclude : MissingPolicy::Fail);
  if (!o.matrix_out.empty()) {
    write_text_file(o.matrix_out, matrix_to_csv(result.matrix));
    write_text_file(o.matrix_out + ".long.csv", matrix_to_long_csv(result.matrix));
  }
  if (!o.dry_run) {
    store.put(result.session, "pairing", Json{{"groups", result.plan.groups().size()}});
    store.save();
  }
  detail::print_plan(store, o.dyad, result, o, io);
  return kExitOk;
}

inline int cmd_bonus(const Options& o, Io& io) {
  if (o.dyad <= 0) fail(ErrorKind::InvalidArgument, "--dyad is required");
  std::optional<WriterLock> lock;
  if (!o.dry_run) lock.emplace(o.store);
  SessionStore store = detail::open_store(o);
  std::unique_ptr<lms::LmsAdapter> lms;
  if (!o.dry_run) lms = detail::make_lms(o);
  auto result = workflow::push_bonus(store, lms.get(), o.dyad, o.dry_run);
  if (!o.dry_run) {
    store.put(result.session, "bonus", Json{{"new_awards", result.new_awards}});
    store.save();
  }
  for (const auto& n : result.outcome.notices) io.err << "notice: " << n << "\n";
  if (o.format == "json") {
    Json j;
    j["dyad"] = o.dyad;
    Json awards = Json::array();
    for (std::size_t i = 0; i < result.outcome.awards.size(); ++i) {
      const auto& a = result.outcome.awards[i];
      awards.push_back({{"student", a.student}, {"points", a.points.to_string()}, {"applied", a.applied.to_string()},
                        {"new", i < result.acks.size() && result.acks[i].applied}});
    }
    j["awards"] = std::move(awards);
    j["new_awards"] = result.new_awards;
    j["dry_run"] = o.dry_run;
    io.out << j.dump(2) << "\n";
  } else if (o.format == "csv") {
    io.out << "student,points,applied,new\n";
    for (std::size_t i = 0; i < result.outcome.awards.size(); ++i) {
      const auto& a = result.outcome.awards[i];
      io.out << a.student << "," << a.points << "," << a.applied << ","
             << (i < result.acks.size() && result.acks[i].applied ? 1 : 0) << "\n";
    }
  } else {
    io.out << "dyad " << o.dyad << ": " << result.outcome.awards.size() << " students earned the bonus, "
           << (o.dry_run ? std::string("dry run, nothing pushed") : std::to_string(result.new_awards) + " new awards pushed")
           << "\n";
    for (const auto& a : result.outcome.awards)
      io.out << "  " << detail::label(store, a.student) << "  +" << a.applied << "\n";
  }
  return kExitOk;
}

inline int cmd_analyze(const Options& o, Io& io) {
  SessionStore store = detail::open_store(o);
  auto files = workflow::analysis_reports(store.sessions(), store.course());
  if (!o.dry_run) workflow::write_files(o.output, files);
  if (o.format == "json") {
    Json j;
    Json names = Json::array();
    for (const auto& [name, _] : files) names.push_back((std::filesystem::path(o.output) / name).string());
    j["files"] = std::move(names);
    j["dry_run"] = o.dry_run;
    io.out << j.dump(2) << "\n";
    return kExitOk;
  }
  Json rq1 = Json::parse(files.at("rq1_report.json"));
  for (const char* g : {"treatment", "control"})
    if (rq1["groups"].contains(g))
      io.out << g << ": n=" << rq1["groups"][g]["n"].get<std::size_t>() << " mean MNG=" << rq1["groups"][g]["mean_mng"].dump() << "\n";
  if (rq1["tests"].contains("t_test")) io.out << "t-test p=" << rq1["tests"]["t_test"]["p_value"].dump() << "\n";
  if (rq1["tests"].contains("mann_whitney")) io.out << "Mann-Whitney p=" << rq1["tests"]["mann_whitney"]["p_value"].dump() << "\n";
  for (const auto& [name, _] : files)
    io.out << (o.dry_run ? "would write " : "wrote ") << (std::filesystem::path(o.output) / name).string() << "\n";
  return kExitOk;
}

inline int cmd_report(const Options& o, Io& io) {
  Json summary;
  std::string dataset_csv;
  if (!o.dataset.empty()) {
    auto records = gain_records_from_csv(read_text_file(o.dataset));
    summary = summarize(records, {});
    dataset_csv = gain_records_to_csv(records);
  } else {
    SessionStore store = detail::open_store(o);
    if (!workflow::has_completed_dyad(store.sessions())) throw Error(ErrorKind::Precondition, "no completed dyad to report on");
    auto data = workflow::analysis_data(store.sessions(), store.course());
    summary = summarize(data.records, data.question_records);
    dataset_csv = export_analysis_csv(store.sessions(), store.course().dyads);
  }
  auto files = workflow::report_bundle(summary);
  files["dataset.csv"] = dataset_csv;
  if (o.format == "json") {
    files = {{"summary.json", files.at("summary.json")}};
  } else if (o.format == "csv") {
    files.erase("summary.json");
  }
  if (!o.dry_run) workflow::write_files(o.output, files);
  for (const auto& [name, _] : files)
    io.out << (o.dry_run ? "would write " : "wrote ") << (std::filesystem::path(o.output) / name).string() << "\n";
  return kExitOk;
}

inline console::ConsoleService* g_service = nullptr;

inline int cmd_serve(const Options& o, Io& io) {
  if (o.dry_run) {
    io.out << "would serve store " << o.store << " on " << o.host << ":" << o.port << "\n";
    return kExitOk;
  }
  WriterLock lock(o.store);
  SessionStore store = detail::open_store(o);
  std::shared_ptr<lms::LmsAdapter> lms;
  if (!o.fixture.empty() || !o.lms_config.empty() || std::getenv("LMS_BASE_URL")) lms = detail::make_lms(o);
  console::ServiceOptions opts;
  opts.token = o.token.empty() && std::getenv("PICA_CONSOLE_TOKEN") ? std::getenv("PICA_CONSOLE_TOKEN") : o.token;
  opts.console_origin = o.console_origin;
  opts.static_dir = o.static_dir;
  console::ConsoleService service(std::move(store), lms, opts);
  if (!service.bind(o.host, o.port)) {
    io.err << "error: cannot bind " << o.host << ":" << o.port << " (port in use?)\n";
    return kExitEnvironment;
  }
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  io.out << "serving on http://" << o.host << ":" << o.port << "\n" << std::flush;
  service.listen();
  g_service = nullptr;
  return kExitOk;
}

inline int run(int argc, const char* const* argv, Io io) {
  CLI::App app{"PICA: peer-instruction pairing, bonus awards and gain analysis"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--store", o.store, "Session store JSON file")->capture_default_str();
    cmd->add_option("--course-config", o.course_config, "Course definition (dyads, concepts, links)");
    cmd->add_flag("--dry-run", o.dry_run, "Print intended changes without applying them");
    cmd->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"table", "json", "csv"}))->capture_default_str();
  };
  auto lms_opts = [&](CLI::App* cmd) {
    cmd->add_option("--fixture", o.fixture, "Use a fixture directory instead of a live LMS");
    cmd->add_option("--lms-config", o.lms_config, "LMS config JSON (defaults to LMS_* environment variables)");
    cmd->add_flag("--insecure", o.insecure, "Allow a plain-http LMS URL");
  };

  auto* sync = app.add_subcommand("sync", "Pull roster and quiz submissions into the store");
  common(sync);
  lms_opts(sync);
  sync->add_option("--dyad", o.dyad, "Dyad index");
  sync->add_option("--quiz", o.quiz, "Which half to sync")->check(CLI::IsMember({"a", "b", "A", "B"}))->capture_default_str();
  sync->add_flag("--open-b", o.open_b, "Mark the b-quiz open (locks attendance) instead of syncing");

  auto* pair = app.add_subcommand("pair", "Record attendance and pair present students");
  common(pair);
  pair->add_option("--dyad", o.dyad, "Dyad index")->required();
  pair->add_option("--attendance", o.attendance, "Id file, comma list, or - for an interactive checklist");
  pair->add_flag("--drop-missing", o.drop_missing, "Exclude present students without an a-quiz submission");
  pair->add_option("--matrix-out", o.matrix_out, "Also write the distance matrix CSV here");

  auto* bonus = app.add_subcommand("bonus", "Apply the bonus policy and push awards");
  common(bonus);
  lms_opts(bonus);
  bonus->add_option("--dyad", o.dyad, "Dyad index")->required();

  auto* analyze = app.add_subcommand("analyze", "Write RQ1, RQ2 and isomorphic-question reports");
  common(analyze);
  analyze->add_option("--output", o.output, "Report directory")->capture_default_str();

  auto* report = app.add_subcommand("report", "Write the summary JSON and long-format CSV bundle");
  common(report);
  report->add_option("--output", o.output, "Bundle directory")->capture_default_str();
  report->add_option("--dataset", o.dataset, "Summarize an analysis CSV instead of the store");

  auto* serve = app.add_subcommand("serve", "Run the instructor console API");
  common(serve);
  lms_opts(serve);
  serve->add_option("--host", o.host, "Bind address")->capture_default_str();
  serve->add_option("--port", o.port, "Port")->capture_default_str();
  serve->add_option("--token", o.token, "Bearer token required on /api (or PICA_CONSOLE_TOKEN)");
  serve->add_option("--console-origin", o.console_origin, "Origin allowed by CORS");
  serve->add_option("--static-dir", o.static_dir, "Console assets to serve at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, io.out, io.err);
    return code == 0 ? kExitOk : kExitUser;
  }

  try {
    if (*sync) return cmd_sync(o, io);
    if (*pair) return cmd_pair(o, io);
    if (*bonus) return cmd_bonus(o, io);
    if (*analyze) return cmd_analyze(o, io);
    if (*report) return cmd_report(o, io);
    if (*serve) return cmd_serve(o, io);
  } catch (const Error& e) {
    io.err << "error: " << e.what() << "\n";
    if (!e.payload().empty()) io.err << "lms response: " << e.payload() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitEnvironment;
  }
  return kExitUser;
}

}  // namespace pica::cli
