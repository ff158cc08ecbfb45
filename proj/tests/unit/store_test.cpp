#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "pica/session_store.hpp"
#include "sessions.hpp"

using namespace pica;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SessionStore::Clock fixed_clock() {
  return [] { return std::string("2024-03-01T09:00:00Z"); };
}

SessionStore populated(const std::string& path) {
  SessionStore store(path, fixture::course(2), fixed_clock());
  std::vector<Student> roster;
  for (int i = 1; i <= 4; ++i) roster.push_back({fixture::sid(i), "Student " + std::to_string(i), fixture::lms_of(fixture::sid(i))});
  store.set_roster(roster);
  const auto& d = store.course().dyads[0];
  store.put(fixture::closed_session(d,
                                    {{"s01", {1, 0, 0, 0, 0}}, {"s02", {1, 1, 1, 0, 0}}, {"s03", {0, 1, 0, 0, 0}}, {"s04", {1, 1, 1, 1, 0}}},
                                    {{"s01", {1, 1, 1, 0, 0}}, {"s02", {1, 1, 1, 1, 0}}, {"s04", {1, 1, 1, 1, 1}}},
                                    {{"s01", "s02"}}),
            "b-sync");
  return store;
}

}  // namespace

TEST(SessionStore, SaveLoadSaveIsByteIdentical) {
  fixture::TempDir dir;
  const auto path = dir.file("store.json");
  populated(path).save();
  const std::string first = slurp(path);
  auto reopened = SessionStore::open(path, fixed_clock());
  EXPECT_EQ(reopened.serialize(), first);
  reopened.save();
  EXPECT_EQ(slurp(path), first);
  EXPECT_EQ(reopened.sessions().size(), 1u);
  EXPECT_EQ(reopened.roster().size(), 4u);
}

TEST(SessionStore, AnalysisCsvIsDeterministicAndSkipsIncompleteDyads) {
  fixture::TempDir dir;
  auto store = populated(dir.file("store.json"));
  const auto csv = export_analysis_csv(store.sessions(), store.course().dyads);
  EXPECT_EQ(csv, export_analysis_csv(store.sessions(), store.course().dyads));
  // s03 sat no b-quiz.
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3);
  EXPECT_EQ(csv.find("\ns03,"), std::string::npos);
  EXPECT_NE(csv.find("\ns04,1,"), std::string::npos);

  store.save();
  auto reopened = SessionStore::open(dir.file("store.json"));
  EXPECT_EQ(export_analysis_csv(reopened.sessions(), reopened.course().dyads), csv);
}

TEST(SessionStore, TwoClosedSessionsGiveOneRowPerCompletedDyad) {
  fixture::TempDir dir;
  auto store = populated(dir.file("store.json"));
  const auto& d2 = store.course().dyads[1];
  store.put(fixture::closed_session(d2, {{"s01", {0, 0, 0, 0, 0}}, {"s02", {1, 0, 0, 0, 0}}},
                                    {{"s01", {1, 0, 0, 0, 0}}, {"s02", {1, 0, 0, 0, 0}}}, {{"s01", "s02"}}),
            "b-sync");
  auto recs = gain_records_from_csv(export_analysis_csv(store.sessions(), store.course().dyads));
  EXPECT_EQ(recs.size(), 5u);
  EXPECT_EQ(recs.back().dyad, 2);
}

TEST(SessionStore, ExportWithoutClosedSessionIsAnError) {
  SessionStore store("", fixture::course(1));
  SessionRecord s;
  s.dyad = 1;
  s.phase = Phase::AClosed;
  store.put(s, "a-sync");
  try {
    export_analysis_csv(store.sessions(), store.course().dyads);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Precondition);
  }
}

TEST(SessionStore, RejectsUnknownDyadAndSchema) {
  SessionStore store("", fixture::course(1));
  SessionRecord s;
  s.dyad = 7;
  EXPECT_THROW(store.put(s, "x"), Error);
  fixture::TempDir dir;
  std::ofstream(dir.file("bad.json")) << R"({"schema_version": 99, "course": {}})";
  EXPECT_THROW(SessionStore::open(dir.file("bad.json")), Error);
  EXPECT_THROW(SessionStore::open(dir.file("missing.json")), Error);
}

TEST(WriterLock, SecondWriterGetsConflict) {
  fixture::TempDir dir;
  const auto path = dir.file("store.json");
  {
    WriterLock first(path);
    try {
      WriterLock second(path);
      FAIL() << "expected a conflict";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Conflict);
    }
  }
  EXPECT_NO_THROW(WriterLock again(path));
}

TEST(EventLog, AppendsOnSaveAndContinuesSequence) {
  fixture::TempDir dir;
  const auto path = dir.file("store.json");
  auto store = populated(path);
  EXPECT_FALSE(std::filesystem::exists(store.events_path()));
  store.save();
  auto lines = [&] {
    std::vector<Json> out;
    std::ifstream in(store.events_path());
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) out.push_back(Json::parse(line));
    return out;
  };
  auto first = lines();
  ASSERT_EQ(first.size(), 2u);  // roster, b-sync
  EXPECT_EQ(first[0]["type"], "roster");
  EXPECT_EQ(first[1]["type"], "b-sync");
  EXPECT_EQ(first[1]["dyad"], 1);

  auto reopened = SessionStore::open(path, fixed_clock());
  auto s = *reopened.find(1);
  reopened.put(s, "noop");  // unchanged, not logged
  s.revision += 1;
  reopened.put(s, "touch");
  reopened.save();
  auto all = lines();
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[2]["seq"], 3);
  EXPECT_EQ(all[2]["type"], "touch");
}

TEST(CourseConfig, ParsesAndValidates) {
  auto j = fixture::course_json(3);
  auto c = course_config_from_json(j);
  EXPECT_EQ(c.dyads.size(), 3u);
  EXPECT_EQ(c.links.size(), 2u);
  EXPECT_EQ(course_config_from_json(to_json(c)), c);
  auto bad = j;
  bad["dyads"][1]["b_quiz"]["questions"][0]["max_points"] = 0;
  EXPECT_THROW(course_config_from_json(bad), Error);
  bad = j;
  bad["isomorphic_links"][0]["target"]["dyad"] = 42;
  EXPECT_THROW(course_config_from_json(bad), Error);
}
