#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "pica/core_model.hpp"
#include "pica/rational.hpp"

using namespace pica;

namespace {

QuizDyad five_question_dyad() { return fixture::course(1).dyads.at(0); }

}  // namespace

TEST(Rational, ArithmeticStaysExact) {
  Rational a = Rational::parse("0.1"), b = Rational::parse("0.2");
  EXPECT_EQ(a + b, Rational::parse("0.3"));
  EXPECT_EQ(Rational(1, 3) * Rational(3), Rational(1));
  EXPECT_EQ(Rational(-2, 4), Rational(-1, 2));
  EXPECT_EQ(Rational(1, -2).den(), 2);
  EXPECT_LT(Rational(1, 3), Rational(1, 2));
  EXPECT_THROW(Rational(1) / Rational(0), Error);
}

TEST(Rational, ParsesAndPrints) {
  EXPECT_EQ(Rational::parse("9/2").to_string(), "4.5");
  EXPECT_EQ(Rational::parse("-0.25").to_string(), "-0.25");
  EXPECT_EQ(Rational(1, 3).to_string(), "1/3");
  EXPECT_EQ(Rational::parse(" 3 ").to_string(), "3");
  EXPECT_EQ(Rational::from_double(0.1), Rational(1, 10));
  EXPECT_THROW(Rational::parse("1e3"), Error);
  EXPECT_THROW(Rational::parse("abc"), Error);
  EXPECT_THROW(Rational::parse(""), Error);
}

TEST(Rational, JsonRoundTrip) {
  for (const char* s : {"0", "1", "4.5", "1/3", "-7/8"}) {
    Rational r = Rational::parse(s);
    EXPECT_EQ(rational_from_json(rational_to_json(r)), r) << s;
  }
  EXPECT_EQ(rational_from_json(Json(0.5)), Rational(1, 2));
  EXPECT_EQ(rational_from_json(Json(3)), Rational(3));
}

TEST(ValidateDyad, WellFormedDyadHasNoViolations) { EXPECT_TRUE(validate_dyad(five_question_dyad()).empty()); }

TEST(ValidateDyad, BQuizMarkedAIsHalfMismatch) {
  QuizDyad d = five_question_dyad();
  d.b_quiz.half = Half::A;
  auto v = validate_dyad(d);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].code, "half mismatch");
}

TEST(ValidateDyad, ZeroMaxPointsIsNonpositiveMax) {
  QuizDyad d = five_question_dyad();
  d.a_quiz.questions[2].max_points = Rational(0);
  auto v = validate_dyad(d);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].code, "nonpositive max");
}

TEST(ValidateDyad, EmptyReportImpliesInvariantsHold) {
  // Each mutation breaks one invariant and must be reported.
  std::vector<std::pair<std::string, std::function<void(QuizDyad&)>>> mutations = {
      {"half mismatch", [](QuizDyad& d) { d.a_quiz.half = Half::B; }},
      {"dyad mismatch", [](QuizDyad& d) { d.b_quiz.dyad_index = 9; }},
      {"no questions", [](QuizDyad& d) { d.a_quiz.questions.clear(); }},
      {"duplicate index", [](QuizDyad& d) { d.b_quiz.questions[1].index = 1; }},
      {"bad index", [](QuizDyad& d) { d.b_quiz.questions[1].index = 0; }},
      {"nonpositive max", [](QuizDyad& d) { d.b_quiz.questions[0].max_points = Rational(-1); }},
      {"missing concept", [](QuizDyad& d) { d.a_quiz.questions[4].concept_tag.clear(); }},
  };
  for (const auto& [code, mutate] : mutations) {
    QuizDyad d = five_question_dyad();
    mutate(d);
    auto v = validate_dyad(d);
    ASSERT_FALSE(v.empty()) << code;
    EXPECT_TRUE(std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.code == code; })) << code;
  }
}

TEST(ResolveLinks, BindsExistingEndpoints) {
  // Quiz 2A question 5 shares its concept with quiz 3A question 1.
  auto course = fixture::course(3);
  IsomorphicLink link{{2, Half::A, 5}, {3, Half::A, 1}, ""};
  auto resolved = resolve_isomorphic_links(course.dyads, {link});
  ASSERT_EQ(resolved.size(), 1u);
  EXPECT_EQ(resolved[0].source_quiz, "q2a");
  EXPECT_EQ(resolved[0].target_quiz, "q3a");
  EXPECT_EQ(resolved[0].source_question.index, 5);
  EXPECT_EQ(resolved[0].target_question.index, 1);
  EXPECT_EQ(resolved[0].link.concept_tag, "c2_5");
}

TEST(ResolveLinks, EmptyListGivesEmptySet) { EXPECT_TRUE(resolve_isomorphic_links(fixture::course(2).dyads, {}).empty()); }

TEST(ResolveLinks, UnknownDyadIsNamed) {
  auto course = fixture::course(2);
  try {
    resolve_isomorphic_links(course.dyads, {IsomorphicLink{{1, Half::A, 5}, {99, Half::A, 1}, ""}});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotFound);
    EXPECT_NE(std::string(e.what()).find("unknown dyad 99"), std::string::npos);
  }
}

TEST(ResolveLinks, RejectsBadLinks) {
  auto course = fixture::course(2);
  EXPECT_THROW(resolve_isomorphic_links(course.dyads, {IsomorphicLink{{1, Half::A, 9}, {2, Half::A, 1}, ""}}), Error);
  EXPECT_THROW(resolve_isomorphic_links(course.dyads, {IsomorphicLink{{1, Half::A, 5}, {1, Half::A, 5}, ""}}), Error);
  // Different concepts.
  EXPECT_THROW(resolve_isomorphic_links(course.dyads, {IsomorphicLink{{1, Half::A, 2}, {2, Half::A, 3}, ""}}), Error);
  EXPECT_THROW(resolve_isomorphic_links(course.dyads, {IsomorphicLink{{1, Half::A, 5}, {2, Half::A, 1}, "other"}}), Error);
}

TEST(ResolveLinks, Idempotent) {
  auto course = fixture::course(4);
  std::vector<IsomorphicLink> links = course.links;
  std::reverse(links.begin(), links.end());
  links.push_back(links.front());
  auto once = resolve_isomorphic_links(course.dyads, links);
  auto twice = resolve_isomorphic_links(course.dyads, links_of(once));
  EXPECT_EQ(once, twice);
  EXPECT_EQ(once.size(), 3u);
}

TEST(ScoreVector, ComponentsStayWithinQuestionMaxima) {
  auto quiz = five_question_dyad().a_quiz;
  quiz.questions[1].max_points = Rational(2);
  std::mt19937 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    ScoreVector v{"s1", quiz.id, {}, {}};
    bool valid = true;
    for (const auto& q : quiz.questions) {
      int tenths = static_cast<int>(rng() % 31) - 5;  // -0.5 .. 2.5
      Rational p(tenths, 10);
      valid = valid && p >= Rational(0) && p <= q.max_points;
      v.points.push_back(p);
    }
    if (valid)
      EXPECT_NO_THROW(validate_score_vector(v, quiz));
    else
      EXPECT_THROW(validate_score_vector(v, quiz), Error);
  }
  ScoreVector short_vec{"s1", quiz.id, {Rational(1)}, {}};
  EXPECT_THROW(validate_score_vector(short_vec, quiz), Error);
}

TEST(Fingerprint, CanonicalizesAcrossRepresentations) {
  EXPECT_EQ(fingerprint_text("  The  Answer\t"), fingerprint_text("the answer"));
  EXPECT_EQ(fingerprint_answer(Json("  X = 4 ")), fingerprint_answer(Json("x = 4")));
  EXPECT_EQ(fingerprint_answer(Json(0.5)), std::optional<std::string>("#0.5"));
  EXPECT_NE(fingerprint_answer(Json(0.5)), fingerprint_answer(Json("0.5")));
  EXPECT_EQ(fingerprint_answer(Json(2)), fingerprint_answer(Json(2.0)));
  EXPECT_EQ(fingerprint_answer(Json::array({"b", "A"})), fingerprint_answer(Json::array({"a", "B"})));
  Json m1 = {{"left", "One"}, {"right", "two"}};
  Json m2 = {{"right", "TWO"}, {"left", "one"}};
  EXPECT_EQ(fingerprint_answer(m1), fingerprint_answer(m2));
  EXPECT_NE(fingerprint_answer(Json("a")), fingerprint_answer(Json("b")));
  EXPECT_FALSE(fingerprint_answer(Json(nullptr)).has_value());
}

TEST(CoreJson, CourseObjectsRoundTrip) {
  auto d = five_question_dyad();
  EXPECT_EQ(dyad_from_json(to_json(d)), d);
  Student s{"s1", "Ada", "901"};
  EXPECT_EQ(student_from_json(to_json(s)), s);
  ScoreVector v{"s1", "q1a", {Rational(1), Rational(1, 2)}, {"x", std::nullopt}};
  EXPECT_EQ(score_vector_from_json(to_json(v)), v);
  IsomorphicLink l{{1, Half::A, 5}, {2, Half::B, 1}, "c"};
  EXPECT_EQ(link_from_json(to_json(l)), l);
}
