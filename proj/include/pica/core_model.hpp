#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "pica/error.hpp"
#include "pica/json.hpp"
#include "pica/rational.hpp"

namespace pica {

using StudentId = std::string;
using QuizId = std::string;
using ConceptTag = std::string;

struct Student {
  StudentId id;
  std::string display_name;
  std::optional<std::string> lms_id;

  friend bool operator==(const Student&, const Student&) = default;
};

enum class Half { A, B };

inline const char* to_string(Half h) { return h == Half::A ? "A" : "B"; }

inline Half half_from_string(const std::string& s) {
  if (s == "A" || s == "a") return Half::A;
  if (s == "B" || s == "b") return Half::B;
  fail(ErrorKind::Parse, "quiz half must be A or B, got '" + s + "'");
}

struct QuizQuestion {
  int index = 0;  // 1-based
  Rational max_points{1};
  ConceptTag concept_tag;

  friend bool operator==(const QuizQuestion&, const QuizQuestion&) = default;
};

struct Quiz {
  QuizId id;
  int dyad_index = 0;
  Half half = Half::A;
  std::vector<QuizQuestion> questions;

  Rational total_points() const {
    Rational total;
    for (const auto& q : questions) total += q.max_points;
    return total;
  }

  // Looks up by 1-based question index.
  const QuizQuestion* question(int index) const {
    for (const auto& q : questions)
      if (q.index == index) return &q;
    return nullptr;
  }

  friend bool operator==(const Quiz&, const Quiz&) = default;
};

struct QuizDyad {
  int index = 0;
  Quiz a_quiz;
  Quiz b_quiz;

  const Quiz& quiz(Half h) const { return h == Half::A ? a_quiz : b_quiz; }

  friend bool operator==(const QuizDyad&, const QuizDyad&) = default;
};

struct QuestionRef {
  int dyad = 0;
  Half half = Half::A;
  int question = 0;

  friend auto operator<=>(const QuestionRef&, const QuestionRef&) = default;
  friend bool operator==(const QuestionRef&, const QuestionRef&) = default;
};

inline std::string to_string(const QuestionRef& r) {
  return "dyad " + std::to_string(r.dyad) + " " + to_string(r.half) + " q" + std::to_string(r.question);
}

struct IsomorphicLink {
  QuestionRef source;
  QuestionRef target;
  ConceptTag concept_tag;

  friend bool operator==(const IsomorphicLink&, const IsomorphicLink&) = default;
};

// A link whose endpoints were found in the course definition.
struct ResolvedLink {
  IsomorphicLink link;
  QuizId source_quiz;
  QuizId target_quiz;
  QuizQuestion source_question;
  QuizQuestion target_question;

  friend bool operator==(const ResolvedLink&, const ResolvedLink&) = default;
};

struct ScoreVector {
  StudentId student;
  QuizId quiz;
  std::vector<Rational> points;
  // One opaque, already-canonical fingerprint per question; absent when the
  // LMS supplied no answer for that question.
  std::vector<std::optional<std::string>> answers;

  Rational total() const {
    Rational t;
    for (const auto& p : points) t += p;
    return t;
  }

  friend bool operator==(const ScoreVector&, const ScoreVector&) = default;
};

struct Violation {
  std::string code;
  std::string detail;

  friend bool operator==(const Violation&, const Violation&) = default;
};

inline std::vector<Violation> validate_dyad(const QuizDyad& dyad) {
  std::vector<Violation> out;
  auto check_quiz = [&](const Quiz& quiz, Half expected) {
    const std::string name = "quiz '" + quiz.id + "'";
    if (quiz.half != expected)
      out.push_back({"half mismatch", name + " should be the " + to_string(expected) + " half"});
    if (quiz.dyad_index != dyad.index)
      out.push_back({"dyad mismatch", name + " belongs to dyad " + std::to_string(quiz.dyad_index)});
    if (quiz.questions.empty()) out.push_back({"no questions", name + " has no questions"});
    std::set<int> seen;
    for (const auto& q : quiz.questions) {
      const std::string qname = name + " question " + std::to_string(q.index);
      if (q.index < 1) out.push_back({"bad index", qname + " index must be >= 1"});
      if (!seen.insert(q.index).second) out.push_back({"duplicate index", qname});
      if (q.max_points <= Rational(0)) out.push_back({"nonpositive max", qname});
      if (q.concept_tag.empty()) out.push_back({"missing concept", qname});
    }
  };
  check_quiz(dyad.a_quiz, Half::A);
  check_quiz(dyad.b_quiz, Half::B);
  return out;
}

// Throws unless the vector fits the quiz: arity and 0 <= points <= max.
inline void validate_score_vector(const ScoreVector& v, const Quiz& quiz) {
  if (v.points.size() != quiz.questions.size())
    fail(ErrorKind::InvalidArgument, "score vector for " + v.student + " on '" + quiz.id + "' has " +
                                         std::to_string(v.points.size()) + " entries, quiz has " +
                                         std::to_string(quiz.questions.size()));
  if (!v.answers.empty() && v.answers.size() != v.points.size())
    fail(ErrorKind::InvalidArgument, "answer list arity mismatch for " + v.student);
  for (std::size_t i = 0; i < v.points.size(); ++i) {
    if (v.points[i] < Rational(0) || v.points[i] > quiz.questions[i].max_points)
      fail(ErrorKind::InvalidArgument, "score " + v.points[i].to_string() + " for " + v.student +
                                           " outside [0, " + quiz.questions[i].max_points.to_string() +
                                           "] on question " + std::to_string(quiz.questions[i].index));
  }
}

inline const QuizDyad* find_dyad(const std::vector<QuizDyad>& dyads, int index) {
  for (const auto& d : dyads)
    if (d.index == index) return &d;
  return nullptr;
}

// Binds every link to concrete questions. The result is sorted and free of
// duplicates, so resolving an already-resolved set is a no-op.
inline std::vector<ResolvedLink> resolve_isomorphic_links(const std::vector<QuizDyad>& dyads,
                                                          const std::vector<IsomorphicLink>& links) {
  auto locate = [&](const QuestionRef& ref) -> std::pair<const Quiz*, const QuizQuestion*> {
    const QuizDyad* d = find_dyad(dyads, ref.dyad);
    if (!d) fail(ErrorKind::NotFound, "unknown dyad " + std::to_string(ref.dyad));
    const Quiz& quiz = d->quiz(ref.half);
    const QuizQuestion* q = quiz.question(ref.question);
    if (!q) fail(ErrorKind::NotFound, "unknown question " + to_string(ref));
    return {&quiz, q};
  };

  std::vector<ResolvedLink> out;
  for (const auto& link : links) {
    if (link.source == link.target)
      fail(ErrorKind::InvalidArgument, "isomorphic link from " + to_string(link.source) + " to itself");
    auto [sq, sques] = locate(link.source);
    auto [tq, tques] = locate(link.target);
    if (sques->concept_tag != tques->concept_tag)
      fail(ErrorKind::InvalidArgument, "isomorphic link " + to_string(link.source) + " -> " +
                                           to_string(link.target) + " joins different concepts ('" +
                                           sques->concept_tag + "' vs '" + tques->concept_tag + "')");
    if (!link.concept_tag.empty() && link.concept_tag != sques->concept_tag)
      fail(ErrorKind::InvalidArgument, "isomorphic link concept '" + link.concept_tag +
                                           "' does not match question concept '" + sques->concept_tag + "'");
    ResolvedLink r{link, sq->id, tq->id, *sques, *tques};
    r.link.concept_tag = sques->concept_tag;
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const ResolvedLink& a, const ResolvedLink& b) {
    return std::tie(a.link.source, a.link.target) < std::tie(b.link.source, b.link.target);
  });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::vector<IsomorphicLink> links_of(const std::vector<ResolvedLink>& resolved) {
  std::vector<IsomorphicLink> out;
  out.reserve(resolved.size());
  for (const auto& r : resolved) out.push_back(r.link);
  return out;
}

// ---- answer fingerprints ----------------------------------------------------

// Trims surrounding whitespace, collapses inner runs to one space, and
// lower-cases ASCII.
inline std::string fingerprint_text(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

// Multi-select: order of selection is irrelevant.
inline std::string fingerprint_set(std::vector<std::string> parts) {
  for (auto& p : parts) p = fingerprint_text(p);
  std::sort(parts.begin(), parts.end());
  std::string out = "{";
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "|" : "") + parts[i];
  return out + "}";
}

// Matching / multi-blank: keyed parts, canonical key order.
inline std::string fingerprint_matching(const std::map<std::string, std::string>& parts) {
  std::map<std::string, std::string> canon;
  for (const auto& [k, v] : parts) canon[fingerprint_text(k)] = fingerprint_text(v);
  std::string out = "[";
  bool first = true;
  for (const auto& [k, v] : canon) {
    out += (first ? "" : ";") + k + "=" + v;
    first = false;
  }
  return out + "]";
}

// Canonicalizes an LMS answer payload regardless of question type: strings are
// text answers, numbers are formula answers, arrays are multi-select, objects
// are matching. null means no answer.
inline std::optional<std::string> fingerprint_answer(const Json& answer) {
  if (answer.is_null()) return std::nullopt;
  if (answer.is_string()) return fingerprint_text(answer.get<std::string>());
  if (answer.is_number() || answer.is_boolean()) {
    if (answer.is_number()) {
      try {
        return "#" + rational_from_json(answer).to_string();
      } catch (const Error&) {
        return "#" + answer.dump();
      }
    }
    return answer.dump();
  }
  auto scalar = [](const Json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number()) {
      try {
        return rational_from_json(v).to_string();
      } catch (const Error&) {
      }
    }
    return v.dump();
  };
  if (answer.is_array()) {
    std::vector<std::string> parts;
    for (const auto& v : answer) parts.push_back(scalar(v));
    return fingerprint_set(std::move(parts));
  }
  std::map<std::string, std::string> parts;
  for (auto it = answer.begin(); it != answer.end(); ++it) parts[it.key()] = scalar(it.value());
  return fingerprint_matching(parts);
}

// ---- JSON --------------------------------------------------------------------

inline Json to_json(const Student& s) {
  Json j;
  j["id"] = s.id;
  j["display_name"] = s.display_name;
  j["lms_id"] = s.lms_id ? Json(*s.lms_id) : Json(nullptr);
  return j;
}

inline Student student_from_json(const Json& j) {
  Student s;
  s.id = json_get<std::string>(j, "id");
  s.display_name = json_get_or<std::string>(j, "display_name", s.id);
  if (auto it = j.find("lms_id"); it != j.end() && !it->is_null())
    s.lms_id = it->is_string() ? it->get<std::string>() : it->dump();
  return s;
}

inline Json to_json(const Quiz& q) {
  Json j;
  j["id"] = q.id;
  Json qs = Json::array();
  for (const auto& qq : q.questions) {
    Json e;
    e["index"] = qq.index;
    e["max_points"] = rational_to_json(qq.max_points);
    e["concept"] = qq.concept_tag;
    qs.push_back(std::move(e));
  }
  j["questions"] = std::move(qs);
  return j;
}

inline Quiz quiz_from_json(const Json& j, int dyad_index, Half half) {
  Quiz q;
  q.id = json_get<std::string>(j, "id");
  q.dyad_index = dyad_index;
  q.half = half;
  int position = 0;
  for (const auto& e : json_get<Json>(j, "questions")) {
    ++position;
    QuizQuestion qq;
    qq.index = json_get_or<int>(e, "index", position);
    qq.max_points = e.contains("max_points") ? rational_from_json(e.at("max_points")) : Rational(1);
    qq.concept_tag = json_get_or<std::string>(e, "concept", "");
    q.questions.push_back(std::move(qq));
  }
  return q;
}

inline Json to_json(const QuizDyad& d) {
  Json j;
  j["index"] = d.index;
  j["a_quiz"] = to_json(d.a_quiz);
  j["b_quiz"] = to_json(d.b_quiz);
  return j;
}

inline QuizDyad dyad_from_json(const Json& j) {
  QuizDyad d;
  d.index = json_get<int>(j, "index");
  d.a_quiz = quiz_from_json(json_get<Json>(j, "a_quiz"), d.index, Half::A);
  d.b_quiz = quiz_from_json(json_get<Json>(j, "b_quiz"), d.index, Half::B);
  return d;
}

inline Json to_json(const QuestionRef& r) {
  Json j;
  j["dyad"] = r.dyad;
  j["half"] = to_string(r.half);
  j["question"] = r.question;
  return j;
}

inline QuestionRef question_ref_from_json(const Json& j) {
  return {json_get<int>(j, "dyad"), half_from_string(json_get<std::string>(j, "half")),
          json_get<int>(j, "question")};
}

inline Json to_json(const IsomorphicLink& l) {
  Json j;
  j["source"] = to_json(l.source);
  j["target"] = to_json(l.target);
  j["concept"] = l.concept_tag;
  return j;
}

inline IsomorphicLink link_from_json(const Json& j) {
  return {question_ref_from_json(json_get<Json>(j, "source")),
          question_ref_from_json(json_get<Json>(j, "target")), json_get_or<std::string>(j, "concept", "")};
}

inline Json to_json(const ScoreVector& v) {
  Json j;
  j["student"] = v.student;
  j["quiz"] = v.quiz;
  Json pts = Json::array();
  for (const auto& p : v.points) pts.push_back(rational_to_json(p));
  j["points"] = std::move(pts);
  Json ans = Json::array();
  for (const auto& a : v.answers) ans.push_back(a ? Json(*a) : Json(nullptr));
  j["answers"] = std::move(ans);
  return j;
}

inline ScoreVector score_vector_from_json(const Json& j) {
  ScoreVector v;
  v.student = json_get<std::string>(j, "student");
  v.quiz = json_get<std::string>(j, "quiz");
  for (const auto& p : json_get<Json>(j, "points")) v.points.push_back(rational_from_json(p));
  if (auto it = j.find("answers"); it != j.end())
    for (const auto& a : *it) v.answers.push_back(a.is_null() ? std::nullopt : std::optional(a.get<std::string>()));
  return v;
}

}  // namespace pica
