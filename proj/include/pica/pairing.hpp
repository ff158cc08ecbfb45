#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "pica/core_model.hpp"
#include "pica/error.hpp"
#include "pica/json.hpp"

namespace pica {

// Symmetric matrix of Euclidean distances between a-quiz score vectors, rows
// and columns in ascending student-id order.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  DistanceMatrix(std::vector<StudentId> students, std::vector<double> entries)
      : students_(std::move(students)), entries_(std::move(entries)) {
    if (entries_.size() != students_.size() * students_.size())
      fail(ErrorKind::InvalidArgument, "distance matrix entry count does not match roster size");
  }

  std::size_t size() const noexcept { return students_.size(); }
  const std::vector<StudentId>& students() const noexcept { return students_; }
  double at(std::size_t i, std::size_t j) const { return entries_[i * size() + j]; }

  std::optional<std::size_t> index_of(const StudentId& id) const {
    auto it = std::lower_bound(students_.begin(), students_.end(), id);
    if (it == students_.end() || *it != id) return std::nullopt;
    return static_cast<std::size_t>(it - students_.begin());
  }

  double distance(const StudentId& a, const StudentId& b) const {
    auto i = index_of(a), j = index_of(b);
    if (!i || !j) fail(ErrorKind::NotFound, "student not in distance matrix");
    return at(*i, *j);
  }

  friend bool operator==(const DistanceMatrix&, const DistanceMatrix&) = default;

 private:
  std::vector<StudentId> students_;
  std::vector<double> entries_;
};

struct CandidatePair {
  StudentId a;
  StudentId b;
  double distance = 0.0;

  friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
};

struct PairingStep {
  CandidatePair selected;
  std::size_t remaining = 0;  // roster size before this selection

  friend bool operator==(const PairingStep&, const PairingStep&) = default;
};

struct ManualSwap {
  StudentId first;
  StudentId second;

  friend bool operator==(const ManualSwap&, const ManualSwap&) = default;
};

struct PairingPlan {
  std::vector<std::pair<StudentId, StudentId>> pairs;
  std::optional<std::array<StudentId, 3>> triple;
  std::optional<StudentId> solo;
  std::vector<PairingStep> provenance;
  // Set once an instructor override touched the plan.
  bool manual = false;
  std::vector<ManualSwap> overrides;

  // Every group in output order: pairs, then the triple, then the solo.
  std::vector<std::vector<StudentId>> groups() const {
    std::vector<std::vector<StudentId>> out;
    for (const auto& [a, b] : pairs) out.push_back({a, b});
    if (triple) out.push_back({(*triple)[0], (*triple)[1], (*triple)[2]});
    if (solo) out.push_back({*solo});
    return out;
  }

  std::optional<std::vector<StudentId>> group_of(const StudentId& id) const {
    for (auto& g : groups())
      if (std::find(g.begin(), g.end(), id) != g.end()) return g;
    return std::nullopt;
  }

  std::size_t student_count() const {
    return pairs.size() * 2 + (triple ? 3 : 0) + (solo ? 1 : 0);
  }

  friend bool operator==(const PairingPlan&, const PairingPlan&) = default;
};

// ---- distances -----------------------------------------------------------

namespace detail {
inline Rational squared_distance(const ScoreVector& v1, const ScoreVector& v2) {
  if (v1.points.size() != v2.points.size())
    fail(ErrorKind::InvalidArgument, "score vector arity mismatch (" + std::to_string(v1.points.size()) +
                                         " vs " + std::to_string(v2.points.size()) + ")");
  if (!v1.quiz.empty() && !v2.quiz.empty() && v1.quiz != v2.quiz)
    fail(ErrorKind::InvalidArgument, "score vectors belong to different quizzes");
  Rational sum;
  for (std::size_t i = 0; i < v1.points.size(); ++i) {
    Rational d = v1.points[i] - v2.points[i];
    sum += d * d;
  }
  return sum;
}
}  // namespace detail

// The squared distance is accumulated exactly, so equal sums of squares give
// bit-identical distances and tie-breaking stays exact.
inline double euclidean_distance(const ScoreVector& v1, const ScoreVector& v2) {
  return std::sqrt(detail::squared_distance(v1, v2).to_double());
}

// Present students with no vector in `scores`, ascending.
inline std::vector<StudentId> students_missing_vectors(const std::vector<ScoreVector>& scores,
                                                       const std::vector<StudentId>& present) {
  std::set<StudentId> have;
  for (const auto& v : scores) have.insert(v.student);
  std::set<StudentId> missing;
  for (const auto& id : present)
    if (!have.count(id)) missing.insert(id);
  return {missing.begin(), missing.end()};
}

inline DistanceMatrix build_distance_matrix(const std::vector<ScoreVector>& scores,
                                            const std::vector<StudentId>& present) {
  std::vector<StudentId> roster(present.begin(), present.end());
  std::sort(roster.begin(), roster.end());
  roster.erase(std::unique(roster.begin(), roster.end()), roster.end());

  std::map<StudentId, const ScoreVector*> by_student;
  for (const auto& v : scores) {
    auto [it, inserted] = by_student.emplace(v.student, &v);
    if (!inserted && std::binary_search(roster.begin(), roster.end(), v.student))
      fail(ErrorKind::InvalidArgument, "duplicate a-quiz vector for " + v.student);
  }
  if (auto missing = students_missing_vectors(scores, roster); !missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw Error(ErrorKind::Precondition, "missing a-quiz vector for " + names);
  }

  const std::size_t n = roster.size();
  std::vector<double> entries(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = euclidean_distance(*by_student.at(roster[i]), *by_student.at(roster[j]));
      entries[i * n + j] = d;
      entries[j * n + i] = d;
    }
  return DistanceMatrix(std::move(roster), std::move(entries));
}

// What to do with present students that have no a-quiz submission.
enum class MissingPolicy { Fail, Exclude, ZeroVector };

struct PairingInput {
  std::vector<ScoreVector> vectors;
  std::vector<StudentId> roster;    // students that will be paired
  std::vector<StudentId> excluded;  // present but dropped for lack of data
  std::vector<StudentId> zero_filled;
};

inline PairingInput prepare_pairing_input(const std::vector<ScoreVector>& scores,
                                          const std::vector<StudentId>& present, const Quiz& a_quiz,
                                          MissingPolicy policy) {
  PairingInput in;
  std::set<StudentId> present_set(present.begin(), present.end());
  for (const auto& v : scores)
    if (present_set.count(v.student)) in.vectors.push_back(v);
  auto missing = students_missing_vectors(scores, present);
  if (!missing.empty() && policy == MissingPolicy::Fail) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw Error(ErrorKind::Precondition, "missing a-quiz vector for " + names);
  }
  for (const auto& id : present_set) {
    if (std::find(missing.begin(), missing.end(), id) == missing.end()) {
      in.roster.push_back(id);
    } else if (policy == MissingPolicy::ZeroVector) {
      in.roster.push_back(id);
      in.zero_filled.push_back(id);
      ScoreVector zero{id, a_quiz.id, std::vector<Rational>(a_quiz.questions.size()), {}};
      in.vectors.push_back(std::move(zero));
    } else {
      in.excluded.push_back(id);
    }
  }
  return in;
}

// ---- selection loop -------------------------------------------------------

namespace detail {

// Row maxima over the active subset; ties go to the lowest partner id, which
// is the lowest index because rows are id-sorted.
inline std::vector<CandidatePair> row_maxima(const DistanceMatrix& m, const std::vector<std::size_t>& active) {
  std::vector<CandidatePair> out;
  out.reserve(active.size());
  for (std::size_t i : active) {
    std::optional<std::size_t> best;
    for (std::size_t j : active) {
      if (j == i) continue;
      if (!best || m.at(i, j) > m.at(i, *best)) best = j;
    }
    out.push_back({m.students()[i], m.students()[*best], m.at(i, *best)});
  }
  return out;
}

}  // namespace detail

inline std::vector<CandidatePair> max_candidate_pairs(const DistanceMatrix& m) {
  if (m.size() < 2) fail(ErrorKind::InvalidArgument, "need at least two students for candidate pairs");
  std::vector<std::size_t> all(m.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return detail::row_maxima(m, all);
}

// Lower median of the candidate multiset ordered by (distance, lower id,
// higher id). The returned pair is normalized so that a < b.
inline CandidatePair select_median_pair(std::vector<CandidatePair> candidates) {
  if (candidates.empty()) fail(ErrorKind::InvalidArgument, "no candidate pairs to select from");
  for (auto& c : candidates)
    if (c.b < c.a) std::swap(c.a, c.b);
  std::sort(candidates.begin(), candidates.end(), [](const CandidatePair& x, const CandidatePair& y) {
    return std::tie(x.distance, x.a, x.b) < std::tie(y.distance, y.a, y.b);
  });
  return candidates[(candidates.size() - 1) / 2];
}

inline PairingPlan generate_pairing(const DistanceMatrix& m) {
  if (m.size() == 0) fail(ErrorKind::InvalidArgument, "empty roster");
  PairingPlan plan;
  std::vector<std::size_t> active(m.size());
  for (std::size_t i = 0; i < active.size(); ++i) active[i] = i;

  while (active.size() >= 4) {
    CandidatePair chosen = select_median_pair(detail::row_maxima(m, active));
    plan.provenance.push_back({chosen, active.size()});
    plan.pairs.emplace_back(chosen.a, chosen.b);
    auto ia = *m.index_of(chosen.a), ib = *m.index_of(chosen.b);
    std::erase_if(active, [&](std::size_t k) { return k == ia || k == ib; });
  }

  const auto& ids = m.students();
  if (active.size() == 3) {
    plan.triple = std::array<StudentId, 3>{ids[active[0]], ids[active[1]], ids[active[2]]};
  } else if (active.size() == 2) {
    plan.pairs.emplace_back(ids[active[0]], ids[active[1]]);
  } else if (active.size() == 1) {
    plan.solo = ids[active[0]];
  }
  return plan;
}

// Throws unless every roster member sits in exactly one group and nobody
// outside the roster appears.
inline void validate_plan(const PairingPlan& plan, const std::vector<StudentId>& roster) {
  std::map<StudentId, int> seen;
  for (const auto& g : plan.groups())
    for (const auto& id : g) ++seen[id];
  std::set<StudentId> want(roster.begin(), roster.end());
  for (const auto& [id, count] : seen) {
    if (!want.count(id)) fail(ErrorKind::InvalidArgument, "plan contains unknown student " + id);
    if (count != 1) fail(ErrorKind::InvalidArgument, "student " + id + " appears in more than one group");
  }
  for (const auto& id : want)
    if (!seen.count(id)) fail(ErrorKind::InvalidArgument, "student " + id + " is not in any group");
  if (plan.solo && want.size() != 1) fail(ErrorKind::InvalidArgument, "solo group only allowed for a single student");
}

// Exchanges two students that sit in different groups. Pair members stay
// id-ordered and the plan is flagged manual.
inline PairingPlan swap_students(const PairingPlan& plan, const StudentId& first, const StudentId& second) {
  if (!plan.group_of(first)) throw Error(ErrorKind::NotFound, "student " + first + " is not in the plan");
  if (!plan.group_of(second)) throw Error(ErrorKind::NotFound, "student " + second + " is not in the plan");
  if (*plan.group_of(first) == *plan.group_of(second))
    fail(ErrorKind::InvalidArgument, "students " + first + " and " + second + " are already in the same group");

  auto relabel = [&](const StudentId& id) -> StudentId {
    if (id == first) return second;
    if (id == second) return first;
    return id;
  };
  PairingPlan out = plan;
  for (auto& [a, b] : out.pairs) {
    a = relabel(a);
    b = relabel(b);
    if (b < a) std::swap(a, b);
  }
  if (out.triple) {
    for (auto& id : *out.triple) id = relabel(id);
    std::sort(out.triple->begin(), out.triple->end());
  }
  if (out.solo) out.solo = relabel(*out.solo);
  out.manual = true;
  out.overrides.push_back({first, second});

  std::vector<StudentId> roster;
  for (const auto& g : plan.groups()) roster.insert(roster.end(), g.begin(), g.end());
  validate_plan(out, roster);
  return out;
}

// Per-question signed gap to a partner, scaled to [-1, 1]; negative when the
// student scored below the partner.
inline double signed_question_distance(const Rational& own, const Rational& partner, const Rational& max_points) {
  if (max_points <= Rational(0)) fail(ErrorKind::InvalidArgument, "max_points must be positive");
  if (own < Rational(0) || own > max_points || partner < Rational(0) || partner > max_points)
    fail(ErrorKind::InvalidArgument, "question score outside [0, max_points]");
  return ((own - partner) / max_points).to_double();
}

// ---- export ----------------------------------------------------------------

namespace detail {
inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}
}  // namespace detail

// Square CSV with an id header row and id first column, two decimals per cell.
inline std::string matrix_to_csv(const DistanceMatrix& m) {
  std::string out = "student";
  for (const auto& id : m.students()) out += "," + id;
  out += "\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += m.students()[i];
    for (std::size_t j = 0; j < m.size(); ++j) out += "," + detail::fixed(m.at(i, j), 2);
    out += "\n";
  }
  return out;
}

// One row per ordered pair (diagonal included), for heatmap plotting.
inline std::string matrix_to_long_csv(const DistanceMatrix& m) {
  std::string out = "student_a,student_b,distance\n";
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j)
      out += m.students()[i] + "," + m.students()[j] + "," + detail::fixed(m.at(i, j), 6) + "\n";
  return out;
}

inline Json to_json(const DistanceMatrix& m) {
  Json j;
  j["students"] = m.students();
  Json rows = Json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    Json row = Json::array();
    for (std::size_t k = 0; k < m.size(); ++k) row.push_back(m.at(i, k));
    rows.push_back(std::move(row));
  }
  j["entries"] = std::move(rows);
  return j;
}

inline DistanceMatrix distance_matrix_from_json(const Json& j) {
  auto students = json_get<std::vector<StudentId>>(j, "students");
  std::vector<double> entries;
  for (const auto& row : json_get<Json>(j, "entries"))
    for (const auto& v : row) entries.push_back(v.get<double>());
  return DistanceMatrix(std::move(students), std::move(entries));
}

inline Json to_json(const CandidatePair& c) {
  Json j;
  j["a"] = c.a;
  j["b"] = c.b;
  j["distance"] = c.distance;
  return j;
}

inline Json to_json(const PairingPlan& p) {
  Json j;
  Json pairs = Json::array();
  for (const auto& [a, b] : p.pairs) pairs.push_back(Json::array({a, b}));
  j["pairs"] = std::move(pairs);
  j["triple"] = p.triple ? Json::array({(*p.triple)[0], (*p.triple)[1], (*p.triple)[2]}) : Json(nullptr);
  j["solo"] = p.solo ? Json(*p.solo) : Json(nullptr);
  Json prov = Json::array();
  for (const auto& step : p.provenance) {
    Json s = to_json(step.selected);
    s["remaining"] = step.remaining;
    prov.push_back(std::move(s));
  }
  j["provenance"] = std::move(prov);
  j["manual"] = p.manual;
  Json ov = Json::array();
  for (const auto& s : p.overrides) ov.push_back(Json::array({s.first, s.second}));
  j["overrides"] = std::move(ov);
  return j;
}

inline PairingPlan pairing_plan_from_json(const Json& j) {
  PairingPlan p;
  for (const auto& pr : json_get<Json>(j, "pairs"))
    p.pairs.emplace_back(pr.at(0).get<std::string>(), pr.at(1).get<std::string>());
  if (auto it = j.find("triple"); it != j.end() && !it->is_null())
    p.triple = std::array<StudentId, 3>{it->at(0).get<std::string>(), it->at(1).get<std::string>(),
                                        it->at(2).get<std::string>()};
  if (auto it = j.find("solo"); it != j.end() && !it->is_null()) p.solo = it->get<std::string>();
  if (auto it = j.find("provenance"); it != j.end())
    for (const auto& s : *it)
      p.provenance.push_back({{s.at("a").get<std::string>(), s.at("b").get<std::string>(), s.at("distance").get<double>()},
                              s.at("remaining").get<std::size_t>()});
  p.manual = json_get_or<bool>(j, "manual", false);
  if (auto it = j.find("overrides"); it != j.end())
    for (const auto& s : *it) p.overrides.push_back({s.at(0).get<std::string>(), s.at(1).get<std::string>()});
  return p;
}

}  // namespace pica
