#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "pica/session.hpp"
#include "sessions.hpp"

using namespace pica;

namespace {

const std::string kNow = "2024-02-01T10:00:00Z";

std::vector<Student> roster(int n) {
  std::vector<Student> out;
  for (int i = 1; i <= n; ++i) out.push_back({fixture::sid(i), "Student " + std::to_string(i), fixture::lms_of(fixture::sid(i))});
  return out;
}

std::vector<ScoreVector> a_vectors(const Quiz& quiz, int n) {
  std::vector<ScoreVector> out;
  for (int i = 1; i <= n; ++i) {
    std::vector<int> pts(5);
    for (int q = 0; q < 5; ++q) pts[q] = (i * (q + 3)) % 2;
    out.push_back(fixture::score(fixture::sid(i), quiz, pts));
  }
  return out;
}

SessionRecord paired(const QuizDyad& d, int n) {
  SessionRecord s;
  s.dyad = d.index;
  s = snapshot_a_scores(s, a_vectors(d.a_quiz, n), d.a_quiz, kNow);
  std::vector<StudentId> present;
  for (int i = 1; i <= n; ++i) present.push_back(fixture::sid(i));
  s = record_attendance(s, present, roster(n), kNow);
  auto m = build_distance_matrix(s.a_scores, present);
  return store_pairing(s, m, generate_pairing(m), {}, kNow);
}

// A closed b-quiz for a fixed plan with chosen answers per student.
SessionRecord with_b_answers(const QuizDyad& d, const fixture::Groups& groups,
                             const std::map<std::string, std::pair<std::vector<int>, std::vector<std::string>>>& b) {
  fixture::Points a;
  for (const auto& [id, _] : b) a[id] = {1, 1, 0, 0, 0};
  auto s = fixture::closed_session(d, a, {}, groups);
  for (const auto& [id, pa] : b) s.b_scores.push_back(fixture::score(id, d.b_quiz, pa.first, pa.second));
  return s;
}

const std::vector<std::string> kAnswers = {"A", "B", "C", "D", "E"};

}  // namespace

TEST(Attendance, RecordsPresentSubset) {
  auto d = fixture::course(1).dyads[0];
  SessionRecord s;
  s.dyad = 1;
  s = snapshot_a_scores(s, a_vectors(d.a_quiz, 34), d.a_quiz, kNow);
  std::vector<StudentId> present;
  for (int i = 1; i <= 20; ++i) present.push_back(fixture::sid(i));
  present.push_back(fixture::sid(3));  // duplicate
  auto t = record_attendance(s, present, roster(34), kNow);
  EXPECT_EQ(t.attendance.size(), 20u);
  EXPECT_TRUE(std::is_sorted(t.attendance.begin(), t.attendance.end()));
  EXPECT_THROW(record_attendance(s, {"nobody"}, roster(34), kNow), Error);
}

TEST(Attendance, EditAfterPairingClearsPlan) {
  auto d = fixture::course(1).dyads[0];
  auto s = paired(d, 6);
  ASSERT_EQ(s.phase, Phase::Paired);
  auto t = record_attendance(s, {"s01", "s02"}, roster(6), kNow);
  EXPECT_EQ(t.phase, Phase::AClosed);
  EXPECT_FALSE(t.pairing.has_value());
  EXPECT_FALSE(t.distances.has_value());
  EXPECT_GT(t.revision, s.revision);
}

TEST(Attendance, LockedOnceBQuizOpens) {
  auto d = fixture::course(1).dyads[0];
  auto s = open_b_quiz(paired(d, 4), kNow);
  try {
    record_attendance(s, {"s01"}, roster(4), kNow);
    FAIL() << "expected a conflict";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Conflict);
  }
}

TEST(Lifecycle, AQuizLockedAfterPairingButResyncOfSameDataIsNoop) {
  auto d = fixture::course(1).dyads[0];
  auto s = paired(d, 4);
  EXPECT_EQ(snapshot_a_scores(s, a_vectors(d.a_quiz, 4), d.a_quiz, kNow), s);
  EXPECT_THROW(snapshot_a_scores(s, a_vectors(d.a_quiz, 3), d.a_quiz, kNow), Error);
}

TEST(Lifecycle, BSnapshotFromPairedClosesTheQuiz) {
  auto d = fixture::course(1).dyads[0];
  auto s = snapshot_b_scores(paired(d, 2), {fixture::score("s01", d.b_quiz, {1, 1, 1, 1, 1})}, d.b_quiz, kNow);
  EXPECT_EQ(s.phase, Phase::BClosed);
  ASSERT_GE(s.timestamps.size(), 2u);
  EXPECT_EQ(s.timestamps[s.timestamps.size() - 2].phase, Phase::BOpen);
  EXPECT_EQ(s.timestamps.back().phase, Phase::BClosed);
}

TEST(Lifecycle, OverrideSwapsAndFlagsManual) {
  auto d = fixture::course(1).dyads[0];
  auto s = paired(d, 4);
  auto groups = s.pairing->groups();
  const auto x = groups[0][0], y = groups[1][0];
  auto t = override_pairing(s, x, y, kNow);
  EXPECT_TRUE(t.pairing->manual);
  auto gx = *t.pairing->group_of(x);
  EXPECT_NE(std::find(gx.begin(), gx.end(), groups[1][1]), gx.end());
  EXPECT_THROW(override_pairing(open_b_quiz(s, kNow), x, y, kNow), Error);
}

TEST(PhaseMonotonicity, RandomOperationSequences) {
  auto d = fixture::course(1).dyads[0];
  const auto people = roster(6);
  auto allowed = [](Phase from, Phase to) {
    if (from == to) return true;
    switch (from) {
      case Phase::AOpen: return to == Phase::AClosed;
      case Phase::AClosed: return to == Phase::Paired;
      case Phase::Paired: return to == Phase::AClosed || to == Phase::BOpen || to == Phase::BClosed;
      case Phase::BOpen: return to == Phase::BClosed;
      case Phase::BClosed: return to == Phase::BonusApplied;
      case Phase::BonusApplied: return false;
    }
    return false;
  };
  std::mt19937 rng(99);
  int rejected = 0, accepted = 0;
  for (int run = 0; run < 200; ++run) {
    SessionRecord s;
    s.dyad = 1;
    for (int step = 0; step < 12; ++step) {
      SessionRecord next;
      try {
        switch (rng() % 7) {
          case 0: next = snapshot_a_scores(s, a_vectors(d.a_quiz, 3 + static_cast<int>(rng() % 3)), d.a_quiz, kNow); break;
          case 1: next = record_attendance(s, {"s01", "s02", "s03", "s04"}, people, kNow); break;
          case 2: {
            auto m = build_distance_matrix(s.a_scores, {"s01", "s02", "s03"});
            next = store_pairing(s, m, generate_pairing(m), {}, kNow);
            break;
          }
          case 3: next = open_b_quiz(s, kNow); break;
          case 4: next = snapshot_b_scores(s, {fixture::score("s01", d.b_quiz, {1, 0, 1, 0, 1})}, d.b_quiz, kNow); break;
          case 5: next = record_bonus_awards(s, {{"s01", Rational(1), Rational(1), bonus_tag(1)}}, kNow); break;
          default: next = override_pairing(s, "s01", "s03", kNow); break;
        }
      } catch (const Error&) {
        ++rejected;
        continue;
      }
      ++accepted;
      ASSERT_TRUE(allowed(s.phase, next.phase)) << to_string(s.phase) << " -> " << to_string(next.phase);
      EXPECT_GE(next.revision, s.revision);
      if (next.phase >= Phase::Paired) EXPECT_TRUE(next.pairing.has_value());
      if (!next.bonus_awards.empty()) EXPECT_EQ(next.phase, Phase::BonusApplied);
      s = next;
    }
  }
  EXPECT_GT(rejected, 0);
  EXPECT_GT(accepted, 0);
}

TEST(BonusPolicy, IdenticalAnswersWithOneWrongReachFullMarks) {
  auto d = fixture::course(1).dyads[0];
  std::vector<std::string> ans = {"A", "B", "C", "D", "wrong"};
  auto s = with_b_answers(d, {{"s1", "s2"}}, {{"s1", {{1, 1, 1, 1, 0}, ans}}, {"s2", {{1, 1, 1, 1, 0}, ans}}});
  auto out = apply_bonus_policy(s, BonusPolicy{}, d.b_quiz);
  ASSERT_EQ(out.awards.size(), 2u);
  for (const auto& a : out.awards) {
    EXPECT_EQ(a.points, Rational(1));
    EXPECT_EQ(a.applied, Rational(1));
    EXPECT_EQ(a.tag, "pica-bonus-dyad-1");
  }
  EXPECT_EQ(visible_total(Rational(4), out.awards[0].applied, Rational(5), true), Rational(5));
}

TEST(BonusPolicy, CapKeepsVisibleScoreAtMaximum) {
  auto d = fixture::course(1).dyads[0];
  auto s = with_b_answers(d, {{"s1", "s2"}}, {{"s1", {{1, 1, 1, 1, 1}, kAnswers}}, {"s2", {{1, 1, 1, 1, 1}, kAnswers}}});
  auto capped = apply_bonus_policy(s, BonusPolicy{}, d.b_quiz);
  ASSERT_EQ(capped.awards.size(), 2u);
  EXPECT_EQ(capped.awards[0].applied, Rational(0));
  BonusPolicy uncapped;
  uncapped.cap_at_max = false;
  EXPECT_EQ(apply_bonus_policy(s, uncapped, d.b_quiz).awards[0].applied, Rational(1));
  EXPECT_EQ(visible_total(Rational(5), Rational(1), Rational(5), false), Rational(6));
}

TEST(BonusPolicy, DifferingAnswerDeniesBonus) {
  auto d = fixture::course(1).dyads[0];
  auto other = kAnswers;
  other[2] = "not C";
  auto s = with_b_answers(d, {{"s1", "s2"}}, {{"s1", {{1, 1, 1, 1, 1}, kAnswers}}, {"s2", {{1, 1, 0, 1, 1}, other}}});
  auto out = apply_bonus_policy(s, BonusPolicy{}, d.b_quiz);
  EXPECT_TRUE(out.awards.empty());
  ASSERT_EQ(out.groups.size(), 1u);
  EXPECT_FALSE(out.groups[0].matched);
  EXPECT_FALSE(out.groups[0].question_match[2]);
  EXPECT_TRUE(out.groups[0].question_match[1]);
}

TEST(BonusPolicy, TripleNeedsUnanimity) {
  auto d = fixture::course(1).dyads[0];
  auto other = kAnswers;
  other[0] = "Z";
  auto split = with_b_answers(d, {{"s1", "s2", "s3"}},
                              {{"s1", {{1, 1, 1, 1, 1}, kAnswers}}, {"s2", {{1, 1, 1, 1, 1}, kAnswers}}, {"s3", {{0, 1, 1, 1, 1}, other}}});
  EXPECT_TRUE(apply_bonus_policy(split, BonusPolicy{}, d.b_quiz).awards.empty());
  auto same = with_b_answers(d, {{"s1", "s2", "s3"}},
                             {{"s1", {{0, 1, 1, 1, 1}, other}}, {"s2", {{0, 1, 1, 1, 1}, other}}, {"s3", {{0, 1, 1, 1, 1}, other}}});
  EXPECT_EQ(apply_bonus_policy(same, BonusPolicy{}, d.b_quiz).awards.size(), 3u);
}

TEST(BonusPolicy, MissingSubmissionSkipsGroupWithNotice) {
  auto d = fixture::course(1).dyads[0];
  auto s = with_b_answers(d, {{"s1", "s2"}}, {{"s1", {{1, 1, 1, 1, 1}, kAnswers}}});
  s.a_scores.push_back(fixture::score("s2", d.a_quiz, {0, 0, 0, 0, 0}));
  auto out = apply_bonus_policy(s, BonusPolicy{}, d.b_quiz);
  EXPECT_TRUE(out.awards.empty());
  EXPECT_EQ(out.notices.size(), 1u);
}

TEST(BonusPolicy, RawBScoresUnchangedByAwards) {
  auto d = fixture::course(1).dyads[0];
  auto s = with_b_answers(d, {{"s1", "s2"}}, {{"s1", {{1, 1, 1, 1, 0}, kAnswers}}, {"s2", {{1, 1, 1, 1, 0}, kAnswers}}});
  const std::string before = to_json(s)["b_scores"].dump();
  auto out = apply_bonus_policy(s, BonusPolicy{}, d.b_quiz);
  auto t = record_bonus_awards(s, out.awards, kNow);
  EXPECT_EQ(t.phase, Phase::BonusApplied);
  EXPECT_EQ(to_json(t)["b_scores"].dump(), before);
  // Re-recording the same awards adds nothing.
  auto again = record_bonus_awards(t, out.awards, kNow);
  EXPECT_EQ(again, t);
}

TEST(SessionJson, RoundTrip) {
  auto d = fixture::course(1).dyads[0];
  auto s = paired(d, 5);
  EXPECT_EQ(session_from_json(to_json(s)), s);
  Json bad = to_json(s);
  bad["phase"] = "AOpen";
  EXPECT_THROW(session_from_json(bad), Error);
}
