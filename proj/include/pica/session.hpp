#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pica/core_model.hpp"
#include "pica/error.hpp"
#include "pica/json.hpp"
#include "pica/pairing.hpp"

namespace pica {

// Weekly lifecycle of one quiz dyad, in order.
enum class Phase { AOpen, AClosed, Paired, BOpen, BClosed, BonusApplied };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::AOpen: return "AOpen";
    case Phase::AClosed: return "AClosed";
    case Phase::Paired: return "Paired";
    case Phase::BOpen: return "BOpen";
    case Phase::BClosed: return "BClosed";
    case Phase::BonusApplied: return "BonusApplied";
  }
  return "?";
}

inline Phase phase_from_string(const std::string& s) {
  for (Phase p : {Phase::AOpen, Phase::AClosed, Phase::Paired, Phase::BOpen, Phase::BClosed, Phase::BonusApplied})
    if (s == to_string(p)) return p;
  fail(ErrorKind::Parse, "unknown session phase '" + s + "'");
}

struct BonusPolicy {
  Rational points{1};
  bool require_all_questions = true;
  bool cap_at_max = true;

  friend bool operator==(const BonusPolicy&, const BonusPolicy&) = default;
};

struct BonusAward {
  StudentId student;
  Rational points;   // earned under the policy
  Rational applied;  // pushed to the LMS after capping
  std::string tag;   // idempotence key on the LMS side

  friend bool operator==(const BonusAward&, const BonusAward&) = default;
};

struct PhaseStamp {
  Phase phase = Phase::AOpen;
  std::string at;

  friend bool operator==(const PhaseStamp&, const PhaseStamp&) = default;
};

struct SessionRecord {
  int dyad = 0;
  Phase phase = Phase::AOpen;
  std::vector<StudentId> attendance;  // sorted, unique
  std::vector<ScoreVector> a_scores;
  std::optional<DistanceMatrix> distances;
  std::optional<PairingPlan> pairing;
  std::vector<StudentId> pairing_excluded;  // present but unpaired for lack of a-quiz data
  std::vector<ScoreVector> b_scores;        // raw, never bonus-adjusted
  std::vector<BonusAward> bonus_awards;
  std::vector<PhaseStamp> timestamps;
  std::uint64_t revision = 0;

  const ScoreVector* a_score(const StudentId& id) const {
    for (const auto& v : a_scores)
      if (v.student == id) return &v;
    return nullptr;
  }
  const ScoreVector* b_score(const StudentId& id) const {
    for (const auto& v : b_scores)
      if (v.student == id) return &v;
    return nullptr;
  }

  friend bool operator==(const SessionRecord&, const SessionRecord&) = default;
};

inline std::string bonus_tag(int dyad) { return "pica-bonus-dyad-" + std::to_string(dyad); }

namespace detail {

inline void advance(SessionRecord& s, Phase to, const std::string& now) {
  s.phase = to;
  s.timestamps.push_back({to, now});
}

inline std::vector<ScoreVector> sorted_vectors(std::vector<ScoreVector> v) {
  std::sort(v.begin(), v.end(), [](const ScoreVector& a, const ScoreVector& b) { return a.student < b.student; });
  return v;
}

}  // namespace detail

// ---- lifecycle mutations ------------------------------------------------------
// Each returns the updated session and leaves the input untouched. Every
// successful mutation bumps `revision`.

inline SessionRecord snapshot_a_scores(const SessionRecord& session, std::vector<ScoreVector> vectors,
                                       const Quiz& a_quiz, const std::string& now) {
  for (const auto& v : vectors) validate_score_vector(v, a_quiz);
  vectors = detail::sorted_vectors(std::move(vectors));
  if (session.phase >= Phase::AClosed && vectors == session.a_scores) return session;
  if (session.phase >= Phase::Paired) {
    throw Error(ErrorKind::Conflict, "a-quiz results are locked once pairing has run (dyad " +
                                         std::to_string(session.dyad) + " is " + to_string(session.phase) + ")");
  }
  SessionRecord s = session;
  s.a_scores = std::move(vectors);
  if (s.phase == Phase::AOpen) detail::advance(s, Phase::AClosed, now);
  ++s.revision;
  return s;
}

inline SessionRecord record_attendance(const SessionRecord& session, const std::vector<StudentId>& present,
                                       const std::vector<Student>& roster, const std::string& now) {
  if (session.phase >= Phase::BOpen)
    throw Error(ErrorKind::Conflict, "attendance locked: the b-quiz for dyad " + std::to_string(session.dyad) +
                                         " has opened");
  if (session.phase < Phase::AClosed)
    throw Error(ErrorKind::Conflict, "attendance opens once the a-quiz closes (dyad " +
                                         std::to_string(session.dyad) + " is " + to_string(session.phase) + ")");
  std::set<StudentId> known;
  for (const auto& st : roster) known.insert(st.id);
  for (const auto& id : present)
    if (!known.count(id)) throw Error(ErrorKind::NotFound, "unknown student id '" + id + "'");

  SessionRecord s = session;
  std::set<StudentId> uniq(present.begin(), present.end());
  s.attendance.assign(uniq.begin(), uniq.end());
  if (s.phase == Phase::Paired) {
    s.pairing.reset();
    s.distances.reset();
    s.pairing_excluded.clear();
    detail::advance(s, Phase::AClosed, now);
  }
  ++s.revision;
  return s;
}

inline SessionRecord store_pairing(const SessionRecord& session, DistanceMatrix matrix, PairingPlan plan,
                                   std::vector<StudentId> excluded, const std::string& now) {
  if (session.phase != Phase::AClosed && session.phase != Phase::Paired)
    throw Error(ErrorKind::Conflict, "pairing needs dyad " + std::to_string(session.dyad) +
                                         " in AClosed or Paired, it is " + to_string(session.phase));
  for (const auto& id : matrix.students())
    if (!std::binary_search(session.attendance.begin(), session.attendance.end(), id))
      throw Error(ErrorKind::InvalidArgument, "pairing includes absent student " + id);
  validate_plan(plan, matrix.students());
  SessionRecord s = session;
  s.distances = std::move(matrix);
  s.pairing = std::move(plan);
  s.pairing_excluded = std::move(excluded);
  if (s.phase != Phase::Paired) detail::advance(s, Phase::Paired, now);
  ++s.revision;
  return s;
}

inline SessionRecord override_pairing(const SessionRecord& session, const StudentId& first,
                                      const StudentId& second, const std::string& now) {
  (void)now;
  if (session.phase != Phase::Paired || !session.pairing)
    throw Error(ErrorKind::Conflict, "overrides need a Paired session, dyad " + std::to_string(session.dyad) +
                                         " is " + to_string(session.phase));
  SessionRecord s = session;
  s.pairing = swap_students(*session.pairing, first, second);
  ++s.revision;
  return s;
}

inline SessionRecord open_b_quiz(const SessionRecord& session, const std::string& now) {
  if (session.phase == Phase::BOpen) return session;
  if (session.phase != Phase::Paired)
    throw Error(ErrorKind::Conflict, "the b-quiz opens after pairing, dyad " + std::to_string(session.dyad) +
                                         " is " + to_string(session.phase));
  SessionRecord s = session;
  detail::advance(s, Phase::BOpen, now);
  ++s.revision;
  return s;
}

inline SessionRecord snapshot_b_scores(const SessionRecord& session, std::vector<ScoreVector> vectors,
                                       const Quiz& b_quiz, const std::string& now) {
  for (const auto& v : vectors) validate_score_vector(v, b_quiz);
  vectors = detail::sorted_vectors(std::move(vectors));
  if (session.phase < Phase::Paired)
    throw Error(ErrorKind::Conflict, "b-quiz results arrive after pairing, dyad " + std::to_string(session.dyad) +
                                         " is " + to_string(session.phase));
  if (session.phase == Phase::BonusApplied) {
    if (vectors == session.b_scores) return session;
    throw Error(ErrorKind::Conflict, "b-quiz results are locked once bonuses were applied");
  }
  if (session.phase == Phase::BClosed && vectors == session.b_scores) return session;
  SessionRecord s = session;
  s.b_scores = std::move(vectors);
  if (s.phase == Phase::Paired) detail::advance(s, Phase::BOpen, now);
  if (s.phase == Phase::BOpen) detail::advance(s, Phase::BClosed, now);
  ++s.revision;
  return s;
}

// Merges awards (one per student) and moves the session to BonusApplied.
inline SessionRecord record_bonus_awards(const SessionRecord& session, const std::vector<BonusAward>& awards,
                                         const std::string& now) {
  if (session.phase != Phase::BClosed && session.phase != Phase::BonusApplied)
    throw Error(ErrorKind::Conflict, "bonuses need a closed b-quiz, dyad " + std::to_string(session.dyad) +
                                         " is " + to_string(session.phase));
  SessionRecord s = session;
  bool changed = false;
  for (const auto& a : awards) {
    auto it = std::find_if(s.bonus_awards.begin(), s.bonus_awards.end(),
                           [&](const BonusAward& x) { return x.student == a.student && x.tag == a.tag; });
    if (it == s.bonus_awards.end()) {
      s.bonus_awards.push_back(a);
      changed = true;
    }
  }
  std::sort(s.bonus_awards.begin(), s.bonus_awards.end(),
            [](const BonusAward& x, const BonusAward& y) { return x.student < y.student; });
  if (s.phase == Phase::BClosed) {
    detail::advance(s, Phase::BonusApplied, now);
    changed = true;
  }
  if (changed) ++s.revision;
  return s;
}

// ---- bonus policy ---------------------------------------------------------------

struct GroupBonus {
  std::vector<StudentId> members;
  bool matched = false;
  std::vector<bool> question_match;  // per question, all members agree
  std::optional<std::string> notice;
};

struct BonusOutcome {
  std::vector<BonusAward> awards;
  std::vector<GroupBonus> groups;
  std::vector<std::string> notices;
};

// Decides bonus awards without mutating anything. A group earns the bonus
// when all members submitted identical answer fingerprints; correctness is
// ignored. Triples need unanimity.
inline BonusOutcome apply_bonus_policy(const SessionRecord& session, const BonusPolicy& policy, const Quiz& b_quiz) {
  if (policy.points < Rational(0)) fail(ErrorKind::InvalidArgument, "bonus points must be nonnegative");
  if (session.phase != Phase::BClosed && session.phase != Phase::BonusApplied)
    throw Error(ErrorKind::Conflict, "bonus needs dyad " + std::to_string(session.dyad) +
                                         " in BClosed, it is " + to_string(session.phase));
  if (!session.pairing) throw Error(ErrorKind::Precondition, "no pairing recorded for dyad " + std::to_string(session.dyad));

  BonusOutcome out;
  const Rational max_score = b_quiz.total_points();
  for (const auto& members : session.pairing->groups()) {
    GroupBonus g;
    g.members = members;
    if (members.size() < 2) {
      out.groups.push_back(std::move(g));
      continue;
    }
    std::vector<const ScoreVector*> vecs;
    for (const auto& id : members) {
      const ScoreVector* v = session.b_score(id);
      if (!v || v->answers.size() != b_quiz.questions.size()) {
        g.notice = "skipped group: no b-quiz answers for " + id;
        break;
      }
      if (policy.require_all_questions &&
          std::any_of(v->answers.begin(), v->answers.end(), [](const auto& a) { return !a.has_value(); })) {
        g.notice = "skipped group: " + id + " left a question unanswered";
        break;
      }
      vecs.push_back(v);
    }
    if (g.notice) {
      out.notices.push_back(*g.notice);
      out.groups.push_back(std::move(g));
      continue;
    }
    bool all = true;
    std::size_t compared = 0;
    for (std::size_t q = 0; q < b_quiz.questions.size(); ++q) {
      bool answered = std::all_of(vecs.begin(), vecs.end(), [&](const ScoreVector* v) { return v->answers[q].has_value(); });
      bool same = answered && std::all_of(vecs.begin(), vecs.end(), [&](const ScoreVector* v) {
                    return v->answers[q] == vecs.front()->answers[q];
                  });
      g.question_match.push_back(same);
      if (answered) ++compared;
      if (!same && (policy.require_all_questions || answered)) all = false;
    }
    g.matched = all && compared > 0;
    if (g.matched) {
      for (const auto* v : vecs) {
        Rational applied = policy.points;
        if (policy.cap_at_max) {
          Rational headroom = max_score - v->total();
          if (headroom < Rational(0)) headroom = Rational(0);
          applied = std::min(applied, headroom);
        }
        out.awards.push_back({v->student, policy.points, applied, bonus_tag(session.dyad)});
      }
    }
    out.groups.push_back(std::move(g));
  }
  std::sort(out.awards.begin(), out.awards.end(),
            [](const BonusAward& x, const BonusAward& y) { return x.student < y.student; });
  return out;
}

// LMS-visible total after a bonus.
inline Rational visible_total(const Rational& raw, const Rational& bonus, const Rational& max_score, bool cap_at_max) {
  Rational t = raw + bonus;
  return cap_at_max && t > max_score ? max_score : t;
}

// ---- JSON -------------------------------------------------------------------------

inline Json to_json(const BonusPolicy& p) {
  Json j;
  j["points"] = rational_to_json(p.points);
  j["require_all_questions"] = p.require_all_questions;
  j["cap_at_max"] = p.cap_at_max;
  return j;
}

inline BonusPolicy bonus_policy_from_json(const Json& j) {
  BonusPolicy p;
  if (j.contains("points")) p.points = rational_from_json(j.at("points"));
  p.require_all_questions = json_get_or<bool>(j, "require_all_questions", true);
  p.cap_at_max = json_get_or<bool>(j, "cap_at_max", true);
  if (p.points < Rational(0)) fail(ErrorKind::Parse, "bonus points must be nonnegative");
  return p;
}

inline Json to_json(const SessionRecord& s) {
  Json j;
  j["dyad"] = s.dyad;
  j["phase"] = to_string(s.phase);
  j["revision"] = s.revision;
  j["attendance"] = s.attendance;
  Json a = Json::array();
  for (const auto& v : s.a_scores) a.push_back(to_json(v));
  j["a_scores"] = std::move(a);
  j["distances"] = s.distances ? to_json(*s.distances) : Json(nullptr);
  j["pairing"] = s.pairing ? to_json(*s.pairing) : Json(nullptr);
  j["pairing_excluded"] = s.pairing_excluded;
  Json b = Json::array();
  for (const auto& v : s.b_scores) b.push_back(to_json(v));
  j["b_scores"] = std::move(b);
  Json awards = Json::array();
  for (const auto& aw : s.bonus_awards) {
    Json e;
    e["student"] = aw.student;
    e["points"] = rational_to_json(aw.points);
    e["applied"] = rational_to_json(aw.applied);
    e["tag"] = aw.tag;
    awards.push_back(std::move(e));
  }
  j["bonus_awards"] = std::move(awards);
  Json ts = Json::array();
  for (const auto& t : s.timestamps) {
    Json e;
    e["phase"] = to_string(t.phase);
    e["at"] = t.at;
    ts.push_back(std::move(e));
  }
  j["timestamps"] = std::move(ts);
  return j;
}

inline SessionRecord session_from_json(const Json& j) {
  SessionRecord s;
  s.dyad = json_get<int>(j, "dyad");
  s.phase = phase_from_string(json_get<std::string>(j, "phase"));
  s.revision = json_get_or<std::uint64_t>(j, "revision", 0);
  s.attendance = json_get_or<std::vector<StudentId>>(j, "attendance", {});
  for (const auto& v : json_get_or<Json>(j, "a_scores", Json::array())) s.a_scores.push_back(score_vector_from_json(v));
  if (auto it = j.find("distances"); it != j.end() && !it->is_null()) s.distances = distance_matrix_from_json(*it);
  if (auto it = j.find("pairing"); it != j.end() && !it->is_null()) s.pairing = pairing_plan_from_json(*it);
  s.pairing_excluded = json_get_or<std::vector<StudentId>>(j, "pairing_excluded", {});
  for (const auto& v : json_get_or<Json>(j, "b_scores", Json::array())) s.b_scores.push_back(score_vector_from_json(v));
  for (const auto& e : json_get_or<Json>(j, "bonus_awards", Json::array()))
    s.bonus_awards.push_back({json_get<std::string>(e, "student"), rational_from_json(e.at("points")),
                              rational_from_json(e.at("applied")), json_get<std::string>(e, "tag")});
  for (const auto& e : json_get_or<Json>(j, "timestamps", Json::array()))
    s.timestamps.push_back({phase_from_string(json_get<std::string>(e, "phase")), json_get<std::string>(e, "at")});
  // Light structural checks; the invariants are re-established by mutations.
  if (s.pairing && s.phase < Phase::Paired) fail(ErrorKind::Parse, "session has a pairing before phase Paired");
  if (!s.bonus_awards.empty() && s.phase != Phase::BonusApplied)
    fail(ErrorKind::Parse, "session has bonus awards outside phase BonusApplied");
  return s;
}

}  // namespace pica
