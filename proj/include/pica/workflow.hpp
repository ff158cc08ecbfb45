#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pica/gain.hpp"
#include "pica/lms.hpp"
#include "pica/pairing.hpp"
#include "pica/session.hpp"
#include "pica/session_store.hpp"

// Pipeline steps shared by the CLI and the console service. Each step reads
// the store, computes, and hands back the updated session; committing it is
// left to the caller.
namespace pica::workflow {

inline std::vector<Student> sync_roster(SessionStore& store, lms::LmsAdapter& lms) {
  auto roster = lms.list_students();
  store.set_roster(roster);
  return roster;
}

struct SyncResult {
  SessionRecord session;
  std::size_t submissions = 0;
  std::vector<std::string> unknown_users;
  bool changed = false;
};

inline SyncResult sync_quiz(const SessionStore& store, lms::LmsAdapter& lms, int dyad, Half half) {
  const QuizDyad& d = store.course().dyad(dyad);
  const Quiz& quiz = d.quiz(half);
  auto info = lms.quiz_info(quiz.id);
  if (info.question_count != quiz.questions.size())
    fail(ErrorKind::Parse, "LMS quiz " + quiz.id + " has " + std::to_string(info.question_count) +
                               " questions, the course config lists " + std::to_string(quiz.questions.size()));
  SyncResult out;
  auto records = lms.fetch_submissions(quiz.id);
  auto vectors = lms::to_score_vectors(records, store.roster(), quiz, &out.unknown_users);
  out.submissions = vectors.size();
  SessionRecord current = store.session_or_new(dyad);
  out.session = half == Half::A ? snapshot_a_scores(current, std::move(vectors), quiz, store.now())
                                : snapshot_b_scores(current, std::move(vectors), quiz, store.now());
  out.changed = !(out.session == current);
  return out;
}

struct PairingResult {
  SessionRecord session;
  DistanceMatrix matrix;
  PairingPlan plan;
  std::vector<StudentId> excluded;
  std::vector<StudentId> zero_filled;
};

// Records attendance (when given) and pairs the present students.
inline PairingResult run_pairing(const SessionStore& store, int dyad, const std::optional<std::vector<StudentId>>& present,
                                 MissingPolicy policy) {
  const QuizDyad& d = store.course().dyad(dyad);
  SessionRecord session = store.session_or_new(dyad);
  if (session.phase < Phase::AClosed)
    throw Error(ErrorKind::Precondition, "a-quiz results for dyad " + std::to_string(dyad) +
                                             " are not synced; run `pica sync --dyad " + std::to_string(dyad) +
                                             " --quiz a` first");
  if (present) session = record_attendance(session, *present, store.roster(), store.now());
  if (session.attendance.empty()) throw Error(ErrorKind::Precondition, "no attendance recorded for dyad " + std::to_string(dyad));
  auto input = prepare_pairing_input(session.a_scores, session.attendance, d.a_quiz, policy);
  if (input.roster.empty()) throw Error(ErrorKind::Precondition, "empty roster: no present student has a-quiz data");
  PairingResult out;
  out.matrix = build_distance_matrix(input.vectors, input.roster);
  out.plan = generate_pairing(out.matrix);
  out.excluded = input.excluded;
  out.zero_filled = input.zero_filled;
  out.session = store_pairing(session, out.matrix, out.plan, input.excluded, store.now());
  return out;
}

struct BonusResult {
  SessionRecord session;
  BonusOutcome outcome;
  std::vector<lms::BonusAck> acks;
  std::size_t new_awards = 0;
};

// Decides awards and, unless dry_run, pushes them. Pushing is idempotent on
// the LMS side, so a rerun reports zero new awards.
inline BonusResult push_bonus(const SessionStore& store, lms::LmsAdapter* lms, int dyad, bool dry_run) {
  const QuizDyad& d = store.course().dyad(dyad);
  BonusResult out;
  out.session = store.session_or_new(dyad);
  out.outcome = apply_bonus_policy(out.session, store.course().bonus, d.b_quiz);
  if (dry_run) return out;
  if (!lms) fail(ErrorKind::InvalidArgument, "no LMS configured for bonus push");
  for (const auto& award : out.outcome.awards) {
    const Student* st = store.student(award.student);
    if (!st) throw Error(ErrorKind::NotFound, "student " + award.student + " is not on the roster");
    auto ack = lms->award_bonus(d.b_quiz.id, *st, award.applied, award.tag);
    if (ack.applied) ++out.new_awards;
    out.acks.push_back(std::move(ack));
  }
  out.session = record_bonus_awards(out.session, out.outcome.awards, store.now());
  return out;
}

struct AnalysisData {
  std::vector<GainRecord> records;
  std::vector<QuestionGainRecord> question_records;
};

inline AnalysisData analysis_data(const std::vector<SessionRecord>& sessions, const CourseConfig& course) {
  AnalysisData data;
  data.records = build_gain_records(sessions, course.dyads);
  data.question_records =
      isomorphic_question_gains(resolve_isomorphic_links(course.dyads, course.links), sessions, course.dyads);
  return data;
}

inline bool has_completed_dyad(const std::vector<SessionRecord>& sessions) {
  return std::any_of(sessions.begin(), sessions.end(), [](const SessionRecord& s) { return s.phase >= Phase::BClosed; });
}

// The three report documents keyed by file name.
inline std::map<std::string, std::string> analysis_reports(const std::vector<SessionRecord>& sessions,
                                                           const CourseConfig& course) {
  if (!has_completed_dyad(sessions)) throw Error(ErrorKind::Precondition, "no completed dyad to analyze");
  auto data = analysis_data(sessions, course);
  std::map<std::string, std::string> files;
  files["rq1_report.json"] = rq1_report(data.records).dump(2) + "\n";
  files["rq2_report.json"] = rq2_report(data.records).dump(2) + "\n";
  Json iso = isomorphic_report(data.question_records);
  Json recs = Json::array();
  for (const auto& r : data.question_records) recs.push_back(to_json(r));
  iso["records"] = std::move(recs);
  files["isomorphic_report.json"] = iso.dump(2) + "\n";
  return files;
}

// ---- report bundle -----------------------------------------------------------------

namespace detail {

inline std::string num(const Json& v) {
  if (v.is_null()) return "";
  if (v.is_number_float()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

inline void boxplot_row(std::string& out, const std::string& report, const std::string& group, const Json& b) {
  out += report + "," + group;
  for (const char* k : {"n", "min", "whisker_low", "q1", "median", "q3", "whisker_high", "max", "mean"})
    out += "," + num(b.at(k));
  out += "\n";
}

inline void test_row(std::string& out, const std::string& report, const std::string& comparison, const Json& t) {
  out += report + "," + comparison + "," + num(t.at("method")) + "," + num(t.at("statistic")) + "," +
         num(t.at("p_value")) + "," + num(t.at("n_x")) + "," + num(t.at("n_y")) + "," + num(t.value("df", Json())) + "\n";
}

inline void regression_rows(std::string& tests, std::string& scatter, std::string& bands, const std::string& report,
                            const std::string& group, const Json& block) {
  for (const auto& p : block.at("scatter")) scatter += report + "," + group + "," + num(p.at(0)) + "," + num(p.at(1)) + "\n";
  for (const auto& p : block.at("band"))
    bands += report + "," + group + "," + num(p.at("x")) + "," + num(p.at("fit")) + "," + num(p.at("lower")) + "," +
             num(p.at("upper")) + "\n";
  const Json& r = block.at("slope_test");
  if (r.is_null()) return;
  tests += report + "," + group + ",slope_t," + num(r.at("t_statistic")) + "," + num(r.at("p_value")) + "," +
           num(r.at("n")) + ",," + num(r.at("df")) + "\n";
}

}  // namespace detail

// Long-format CSVs derived from a summarize() document, plus the document.
inline std::map<std::string, std::string> report_bundle(const Json& summary) {
  std::string histograms = "report,group,metric,bin_low,bin_high,count\n";
  std::string boxplots = "report,group,n,min,whisker_low,q1,median,q3,whisker_high,max,mean\n";
  std::string tests = "report,comparison,method,statistic,p_value,n_x,n_y,df\n";
  std::string scatter = "report,group,x,y\n";
  std::string bands = "report,group,x,fit,lower,upper\n";

  const Json& rq1 = summary.at("rq1");
  for (auto it = rq1.at("groups").begin(); it != rq1.at("groups").end(); ++it) {
    for (const char* metric : {"histogram_ng", "histogram_mng"}) {
      for (const auto& b : it.value().at(metric).at("bins"))
        histograms += "rq1," + it.key() + "," + std::string(metric + 10) + "," + detail::num(b.at("bin_low")) + "," +
                      detail::num(b.at("bin_high")) + "," + detail::num(b.at("count")) + "\n";
    }
    detail::boxplot_row(boxplots, "rq1", it.key(), it.value().at("boxplot_mng"));
  }
  for (auto it = rq1.at("tests").begin(); it != rq1.at("tests").end(); ++it)
    detail::test_row(tests, "rq1", "treatment_vs_control", it.value());

  for (const char* name : {"rq2", "isomorphic"}) {
    const Json& rep = summary.at(name);
    for (auto it = rep.at("splits").begin(); it != rep.at("splits").end(); ++it) {
      detail::regression_rows(tests, scatter, bands, name, it.key(), it.value());
      if (it.value().contains("boxplot_mng")) detail::boxplot_row(boxplots, name, it.key(), it.value().at("boxplot_mng"));
    }
  }

  std::map<std::string, std::string> files;
  files["summary.json"] = summary.dump(2) + "\n";
  files["histograms.csv"] = histograms;
  files["boxplots.csv"] = boxplots;
  files["tests.csv"] = tests;
  files["scatter.csv"] = scatter;
  files["bands.csv"] = bands;
  return files;
}

inline void write_files(const std::filesystem::path& dir, const std::map<std::string, std::string>& files) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, body] : files) write_text_file((dir / name).string(), body);
}

}  // namespace pica::workflow
