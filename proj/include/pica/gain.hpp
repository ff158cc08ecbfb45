#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "pica/core_model.hpp"
#include "pica/error.hpp"
#include "pica/json.hpp"
#include "pica/pairing.hpp"
#include "pica/session.hpp"
#include "pica/stats.hpp"

namespace pica {

// ---- gains -----------------------------------------------------------------

namespace detail {
inline void check_gain_domain(const Rational& a, const Rational& b, const Rational& max) {
  if (max <= Rational(0)) fail(ErrorKind::InvalidArgument, "maximum score must be positive");
  if (a < Rational(0) || a > max || b < Rational(0) || b > max)
    fail(ErrorKind::InvalidArgument, "scores must lie in [0, " + max.to_string() + "], got a=" + a.to_string() +
                                         " b=" + b.to_string());
}
}  // namespace detail

// Exact normalized gain (b - a) / (max - a); absent when a == max.
inline std::optional<Rational> normalized_gain_exact(const Rational& a, const Rational& b, const Rational& max) {
  detail::check_gain_domain(a, b, max);
  if (a == max) return std::nullopt;
  return (b - a) / (max - a);
}

inline std::optional<double> normalized_gain(const Rational& a, const Rational& b, const Rational& max) {
  auto g = normalized_gain_exact(a, b, max);
  if (!g) return std::nullopt;
  return g->to_double();
}

// Exact modified normalized gain: 0 when b == a, the normalized gain when
// b > a, and (b - a) / a when b < a. Always in [-1, 1].
inline Rational modified_normalized_gain_exact(const Rational& a, const Rational& b, const Rational& max) {
  detail::check_gain_domain(a, b, max);
  if (b == a) return Rational(0);
  if (b > a) return (b - a) / (max - a);  // b > a forces a < max
  return (b - a) / a;                     // b < a forces a > 0
}

inline double modified_normalized_gain(const Rational& a, const Rational& b, const Rational& max) {
  return modified_normalized_gain_exact(a, b, max).to_double();
}

// ---- records ---------------------------------------------------------------

enum class Relative { LowerThanPartner, HigherThanPartner, Tied, NoPartner };

inline const char* to_string(Relative r) {
  switch (r) {
    case Relative::LowerThanPartner: return "lower";
    case Relative::HigherThanPartner: return "higher";
    case Relative::Tied: return "tied";
    case Relative::NoPartner: return "none";
  }
  return "?";
}

inline Relative relative_from_string(const std::string& s) {
  for (Relative r : {Relative::LowerThanPartner, Relative::HigherThanPartner, Relative::Tied, Relative::NoPartner})
    if (s == to_string(r)) return r;
  fail(ErrorKind::Parse, "unknown relative value '" + s + "'");
}

struct GainRecord {
  StudentId student;
  int dyad = 0;
  Rational a_score;
  Rational b_score;  // pre-bonus
  Rational max_score;
  std::optional<double> ng;
  double mng = 0.0;
  bool treatment = false;  // sat the b-quiz in an in-class group
  std::optional<StudentId> partner;
  std::optional<double> partner_distance;
  Relative relative = Relative::NoPartner;
  int group_size = 1;

  friend bool operator==(const GainRecord&, const GainRecord&) = default;
};

// One record per (student, dyad) with both quizzes completed, from sessions
// whose b-quiz has closed. Only raw b-quiz points are read; bonus awards
// never enter. Incomplete dyads are dropped silently.
inline std::vector<GainRecord> build_gain_records(const std::vector<SessionRecord>& sessions,
                                                  const std::vector<QuizDyad>& dyads) {
  std::vector<GainRecord> out;
  for (const auto& s : sessions) {
    if (s.phase < Phase::BClosed) continue;
    const QuizDyad* dyad = find_dyad(dyads, s.dyad);
    if (!dyad) continue;
    const Rational max_a = dyad->a_quiz.total_points();
    const Rational max_b = dyad->b_quiz.total_points();

    for (const auto& av : s.a_scores) {
      const ScoreVector* bv = s.b_score(av.student);
      if (!bv) continue;
      GainRecord r;
      r.student = av.student;
      r.dyad = s.dyad;
      r.a_score = av.total();
      // Both halves are compared on the a-quiz scale.
      r.b_score = max_b == max_a ? bv->total() : bv->total() * max_a / max_b;
      r.max_score = max_a;
      r.ng = normalized_gain(r.a_score, r.b_score, r.max_score);
      r.mng = modified_normalized_gain(r.a_score, r.b_score, r.max_score);

      if (s.pairing) {
        if (auto group = s.pairing->group_of(av.student); group && group->size() >= 2) {
          r.treatment = true;
          r.group_size = static_cast<int>(group->size());
          if (group->size() == 2) {
            const StudentId& other = (*group)[0] == av.student ? (*group)[1] : (*group)[0];
            r.partner = other;
            if (s.distances && s.distances->index_of(other) && s.distances->index_of(av.student))
              r.partner_distance = s.distances->distance(av.student, other);
            if (const ScoreVector* pv = s.a_score(other)) {
              const Rational mine = av.total(), theirs = pv->total();
              r.relative = mine < theirs   ? Relative::LowerThanPartner
                           : mine > theirs ? Relative::HigherThanPartner
                                           : Relative::Tied;
            }
          }
        }
      }
      out.push_back(std::move(r));
    }
  }
  std::sort(out.begin(), out.end(),
            [](const GainRecord& a, const GainRecord& b) { return std::tie(a.dyad, a.student) < std::tie(b.dyad, b.student); });
  return out;
}

struct Rq2Split {
  std::vector<GainRecord> lower;
  std::vector<GainRecord> higher;
};

// Treatment pairs only, ties and triples dropped. lower[i] and higher[i] are
// the two members of the same pair; a pair whose partner has no record is
// dropped entirely.
inline Rq2Split rq2_filter(const std::vector<GainRecord>& records) {
  std::map<std::pair<int, StudentId>, const GainRecord*> index;
  for (const auto& r : records) index.emplace(std::make_pair(r.dyad, r.student), &r);
  Rq2Split out;
  for (const auto& r : records) {
    if (!r.treatment || r.group_size != 2 || r.relative != Relative::LowerThanPartner || !r.partner) continue;
    auto it = index.find({r.dyad, *r.partner});
    if (it == index.end()) continue;
    const GainRecord& other = *it->second;
    if (other.relative != Relative::HigherThanPartner || other.partner != r.student) continue;
    out.lower.push_back(r);
    out.higher.push_back(other);
  }
  return out;
}

struct QuestionGainRecord {
  StudentId student;
  StudentId partner;
  IsomorphicLink link;
  Rational a_t_score;   // source question, scaled to [0, 1]
  Rational a_t1_score;  // target question, scaled to [0, 1]
  double mng = 0.0;
  double signed_distance = 0.0;

  friend bool operator==(const QuestionGainRecord&, const QuestionGainRecord&) = default;
};

namespace detail {
inline const SessionRecord* find_session(const std::vector<SessionRecord>& sessions, int dyad) {
  for (const auto& s : sessions)
    if (s.dyad == dyad) return &s;
  return nullptr;
}

inline std::optional<Rational> question_points(const SessionRecord& s, Half half, const StudentId& id,
                                               std::size_t position) {
  const ScoreVector* v = half == Half::A ? s.a_score(id) : s.b_score(id);
  if (!v || position >= v->points.size()) return std::nullopt;
  return v->points[position];
}

inline std::size_t position_of(const Quiz& quiz, int question_index) {
  for (std::size_t i = 0; i < quiz.questions.size(); ++i)
    if (quiz.questions[i].index == question_index) return i;
  fail(ErrorKind::NotFound, "question " + std::to_string(question_index) + " not in quiz " + quiz.id);
}
}  // namespace detail

// Per-question gains across an isomorphic link. A student qualifies when they
// have scores on both linked questions and sat in a pair at the source dyad's
// session (triples are left out: there is no single partner to measure
// against). Scores are rescaled to a unit maximum before the gain.
inline std::vector<QuestionGainRecord> isomorphic_question_gains(const std::vector<ResolvedLink>& links,
                                                                 const std::vector<SessionRecord>& sessions,
                                                                 const std::vector<QuizDyad>& dyads) {
  std::vector<QuestionGainRecord> out;
  for (const auto& link : links) {
    const SessionRecord* src = detail::find_session(sessions, link.link.source.dyad);
    const SessionRecord* dst = detail::find_session(sessions, link.link.target.dyad);
    const QuizDyad* src_dyad = find_dyad(dyads, link.link.source.dyad);
    const QuizDyad* dst_dyad = find_dyad(dyads, link.link.target.dyad);
    if (!src || !dst || !src_dyad || !dst_dyad || !src->pairing) continue;
    const std::size_t src_pos = detail::position_of(src_dyad->quiz(link.link.source.half), link.link.source.question);
    const std::size_t dst_pos = detail::position_of(dst_dyad->quiz(link.link.target.half), link.link.target.question);

    for (const auto& [p, q] : src->pairing->pairs) {
      for (const auto& [me, partner] : {std::pair{p, q}, std::pair{q, p}}) {
        auto own = detail::question_points(*src, link.link.source.half, me, src_pos);
        auto later = detail::question_points(*dst, link.link.target.half, me, dst_pos);
        auto theirs = detail::question_points(*src, link.link.source.half, partner, src_pos);
        if (!own || !later || !theirs) continue;
        QuestionGainRecord r;
        r.student = me;
        r.partner = partner;
        r.link = link.link;
        r.a_t_score = *own / link.source_question.max_points;
        r.a_t1_score = *later / link.target_question.max_points;
        r.mng = modified_normalized_gain(r.a_t_score, r.a_t1_score, Rational(1));
        r.signed_distance = signed_question_distance(*own, *theirs, link.source_question.max_points);
        out.push_back(std::move(r));
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const QuestionGainRecord& a, const QuestionGainRecord& b) {
    return std::tie(a.link.source, a.link.target, a.student) < std::tie(b.link.source, b.link.target, b.student);
  });
  return out;
}

// ---- reports -----------------------------------------------------------------

namespace detail {

inline Json histogram_json(const stats::Histogram& h) {
  Json j;
  j["low"] = h.low;
  j["high"] = h.high;
  j["width"] = h.width;
  Json bins = Json::array();
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    Json b;
    b["bin_low"] = std::round((h.low + h.width * static_cast<double>(k)) * 1e9) / 1e9;
    b["bin_high"] = std::round((h.low + h.width * static_cast<double>(k + 1)) * 1e9) / 1e9;
    b["count"] = h.counts[k];
    bins.push_back(std::move(b));
  }
  j["bins"] = std::move(bins);
  j["underflow"] = h.underflow;
  j["overflow"] = h.overflow;
  return j;
}

inline Json boxplot_json(const std::vector<double>& xs) {
  auto b = stats::boxplot(xs);
  Json j;
  j["n"] = b.n;
  j["min"] = b.min;
  j["whisker_low"] = b.whisker_low;
  j["q1"] = b.q1;
  j["median"] = b.median;
  j["q3"] = b.q3;
  j["whisker_high"] = b.whisker_high;
  j["max"] = b.max;
  j["mean"] = b.mean;
  j["outliers"] = b.outliers;
  return j;
}

inline Json test_json(const stats::TestResult& t) {
  Json j;
  j["method"] = stats::to_string(t.method);
  j["statistic"] = real_to_json(t.statistic);
  j["p_value"] = t.p_value;
  j["n_x"] = t.n_x;
  j["n_y"] = t.n_y;
  j["mean_x"] = t.mean_x;
  j["mean_y"] = t.mean_y;
  if (t.method == stats::Method::MannWhitneyU) {
    j["rank_sum_x"] = t.rank_sum_x;
    j["z"] = t.z;
    j["exact"] = t.exact;
  } else {
    j["df"] = t.df;
  }
  j["degenerate"] = t.degenerate;
  return j;
}

inline Json regression_json(const stats::RegressionResult& r) {
  Json j;
  j["slope"] = r.slope;
  j["intercept"] = r.intercept;
  j["slope_stderr"] = r.slope_stderr;
  j["t_statistic"] = real_to_json(r.t_statistic);
  j["p_value"] = r.p_value;
  j["ci_low"] = r.ci_low;
  j["ci_high"] = r.ci_high;
  j["n"] = r.n;
  j["df"] = r.df;
  j["degenerate"] = r.degenerate;
  return j;
}

inline Json mean_or_null(const std::vector<double>& xs) {
  if (xs.empty()) return nullptr;
  return stats::mean(xs);
}

// Slope test, pointwise band, and raw scatter for one split. Emits a notice
// instead of a fit when the data cannot support one.
inline Json regression_block(const std::string& name, const std::vector<double>& xs, const std::vector<double>& ys,
                             Json& notices) {
  Json j;
  j["n"] = xs.size();
  Json scatter = Json::array();
  for (std::size_t i = 0; i < xs.size(); ++i) scatter.push_back(Json::array({xs[i], ys[i]}));
  j["scatter"] = std::move(scatter);
  j["mean_mng"] = mean_or_null(ys);
  bool distinct = !xs.empty() && std::any_of(xs.begin(), xs.end(), [&](double x) { return x != xs.front(); });
  if (xs.size() < 3 || !distinct) {
    notices.push_back(name + ": slope test omitted (needs three points with distinct distances)");
    j["slope_test"] = nullptr;
    j["band"] = Json::array();
    return j;
  }
  auto reg = stats::slope_test(xs, ys);
  j["slope_test"] = regression_json(reg);
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  std::vector<double> grid;
  constexpr int kSteps = 20;
  for (int k = 0; k <= kSteps; ++k) grid.push_back(*lo + (*hi - *lo) * k / kSteps);
  Json band = Json::array();
  for (const auto& p : stats::mean_response_band(reg, grid)) {
    Json e;
    e["x"] = p.x;
    e["fit"] = p.fit;
    e["lower"] = p.lower;
    e["upper"] = p.upper;
    band.push_back(std::move(e));
  }
  j["band"] = std::move(band);
  return j;
}

}  // namespace detail

// Treatment-versus-control comparison of gains.
inline Json rq1_report(const std::vector<GainRecord>& records) {
  Json report;
  Json notices = Json::array();
  Json groups = Json::object();
  std::vector<double> mng[2], ng[2];
  for (const auto& r : records) {
    mng[r.treatment].push_back(r.mng);
    if (r.ng) ng[r.treatment].push_back(*r.ng);
  }
  const char* names[2] = {"control", "treatment"};
  for (int g : {1, 0}) {
    if (mng[g].empty()) {
      notices.push_back(std::string(names[g]) + " group is empty; omitted");
      continue;
    }
    Json e;
    e["n"] = mng[g].size();
    e["mean_mng"] = stats::mean(mng[g]);
    e["ng_defined"] = ng[g].size();
    e["mean_ng"] = detail::mean_or_null(ng[g]);
    e["histogram_mng"] = detail::histogram_json(stats::histogram(mng[g]));
    e["histogram_ng"] = detail::histogram_json(stats::histogram(ng[g]));
    e["boxplot_mng"] = detail::boxplot_json(mng[g]);
    groups[names[g]] = std::move(e);
  }
  report["groups"] = std::move(groups);
  Json tests = Json::object();
  if (mng[1].size() >= 2 && mng[0].size() >= 2) {
    tests["t_test"] = detail::test_json(stats::two_sample_t_test(mng[1], mng[0]));
  } else {
    notices.push_back("t-test omitted: needs two records in each group");
  }
  if (!mng[1].empty() && !mng[0].empty()) {
    tests["mann_whitney"] = detail::test_json(stats::mann_whitney_u(mng[1], mng[0]));
  } else {
    notices.push_back("Mann-Whitney omitted: needs both groups");
  }
  report["tests"] = std::move(tests);
  report["notices"] = std::move(notices);
  return report;
}

// Gain against partner distance, split by who scored lower on the a-quiz.
inline Json rq2_report(const std::vector<GainRecord>& records) {
  const Rq2Split split = rq2_filter(records);
  Json report;
  Json notices = Json::array();
  std::size_t treatment = 0, ties = 0, triples = 0;
  for (const auto& r : records) {
    if (!r.treatment) continue;
    ++treatment;
    if (r.group_size == 3) ++triples;
    if (r.relative == Relative::Tied) ++ties;
  }
  Json counts;
  counts["treatment_records"] = treatment;
  counts["tied_records"] = ties;
  counts["triple_records"] = triples;
  counts["lower"] = split.lower.size();
  counts["higher"] = split.higher.size();
  report["counts"] = std::move(counts);
  Json splits = Json::object();
  for (auto [name, list] : {std::pair{"lower", &split.lower}, std::pair{"higher", &split.higher}}) {
    std::vector<double> xs, ys;
    for (const auto& r : *list) {
      if (!r.partner_distance) continue;
      xs.push_back(*r.partner_distance);
      ys.push_back(r.mng);
    }
    Json block = detail::regression_block(name, xs, ys, notices);
    if (!ys.empty()) block["boxplot_mng"] = detail::boxplot_json(ys);
    splits[name] = std::move(block);
  }
  report["splits"] = std::move(splits);
  report["notices"] = std::move(notices);
  return report;
}

// Per-question gains split at signed distance zero; regressions use the
// absolute distance.
inline Json isomorphic_report(const std::vector<QuestionGainRecord>& records) {
  Json report;
  Json notices = Json::array();
  std::vector<double> xs[2], ys[2];
  for (const auto& r : records) {
    const int k = r.signed_distance >= 0 ? 1 : 0;
    xs[k].push_back(std::fabs(r.signed_distance));
    ys[k].push_back(r.mng);
  }
  Json counts;
  counts["negative"] = ys[0].size();
  counts["nonnegative"] = ys[1].size();
  report["counts"] = std::move(counts);
  Json splits = Json::object();
  for (auto [name, k] : {std::pair{"negative", 0}, std::pair{"nonnegative", 1}}) {
    Json block = detail::regression_block(name, xs[k], ys[k], notices);
    if (!ys[k].empty()) block["boxplot_mng"] = detail::boxplot_json(ys[k]);
    splits[name] = std::move(block);
  }
  report["splits"] = std::move(splits);
  std::map<std::string, std::size_t> by_concept;
  for (const auto& r : records) ++by_concept[r.link.concept_tag];
  Json concepts = Json::object();
  for (const auto& [c, n] : by_concept) concepts[c] = n;
  report["concepts"] = std::move(concepts);
  report["notices"] = std::move(notices);
  return report;
}

inline Json summarize(const std::vector<GainRecord>& records, const std::vector<QuestionGainRecord>& question_records) {
  Json j;
  j["rq1"] = rq1_report(records);
  j["rq2"] = rq2_report(records);
  j["isomorphic"] = isomorphic_report(question_records);
  return j;
}

// ---- dataset CSV ----------------------------------------------------------------

inline constexpr const char* kAnalysisCsvHeader =
    "student,dyad,a_score,b_score,mng,treatment,partner_distance,relative,group_size,max_score,ng,partner";

namespace detail {
inline std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace detail

inline std::string gain_records_to_csv(const std::vector<GainRecord>& records) {
  std::string out = std::string(kAnalysisCsvHeader) + "\n";
  for (const auto& r : records) {
    out += r.student + "," + std::to_string(r.dyad) + "," + r.a_score.to_string() + "," + r.b_score.to_string() + "," +
           detail::real_text(r.mng) + "," + (r.treatment ? "1" : "0") + "," +
           (r.partner_distance ? detail::real_text(*r.partner_distance) : "") + "," + to_string(r.relative) + "," +
           std::to_string(r.group_size) + "," + r.max_score.to_string() + "," + (r.ng ? detail::real_text(*r.ng) : "") +
           "," + r.partner.value_or("") + "\n";
  }
  return out;
}

inline std::vector<GainRecord> gain_records_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Parse, "empty analysis CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kAnalysisCsvHeader) fail(ErrorKind::Parse, "unexpected analysis CSV header: " + line);
  std::vector<GainRecord> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 12) fail(ErrorKind::Parse, "analysis CSV row " + std::to_string(row) + " has " +
                                                   std::to_string(f.size()) + " fields");
    try {
      GainRecord r;
      r.student = f[0];
      r.dyad = std::stoi(f[1]);
      r.a_score = Rational::parse(f[2]);
      r.b_score = Rational::parse(f[3]);
      r.mng = std::stod(f[4]);
      r.treatment = f[5] == "1";
      if (!f[6].empty()) r.partner_distance = std::stod(f[6]);
      r.relative = relative_from_string(f[7]);
      r.group_size = std::stoi(f[8]);
      r.max_score = Rational::parse(f[9]);
      if (!f[10].empty()) r.ng = std::stod(f[10]);
      if (!f[11].empty()) r.partner = f[11];
      out.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      fail(ErrorKind::Parse, "analysis CSV row " + std::to_string(row) + ": " + e.what());
    }
  }
  return out;
}

inline Json to_json(const QuestionGainRecord& r) {
  Json j;
  j["student"] = r.student;
  j["partner"] = r.partner;
  j["source"] = to_json(r.link.source);
  j["target"] = to_json(r.link.target);
  j["concept"] = r.link.concept_tag;
  j["a_t_score"] = rational_to_json(r.a_t_score);
  j["a_t1_score"] = rational_to_json(r.a_t1_score);
  j["mng"] = r.mng;
  j["signed_distance"] = r.signed_distance;
  return j;
}

}  // namespace pica
