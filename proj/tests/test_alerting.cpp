#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mild/alerting.hpp"
#include "mild/bundle.hpp"
#include "mild/synthgen.hpp"

using namespace mild;

namespace {

AlertPolicy raw_policy(std::vector<double> tau, Minute cooldown = 60) {
  AlertPolicy p = AlertPolicy::defaults(tau.size(), 1.0);  // span 1: no smoothing
  p.thresholds = std::move(tau);
  p.cooldown = cooldown;
  return p;
}

Tensor2 column(const std::vector<double>& v) { return Tensor2(v.size(), 1, v); }

struct QuietLog {
  QuietLog() { log::quiet() = true; }
  ~QuietLog() { log::quiet() = false; }
};

}  // namespace

TEST(Ewma, AlphaFromSpan) {
  EXPECT_DOUBLE_EQ(EwmaState::alpha_for_span(9), 0.2);
  EXPECT_DOUBLE_EQ(EwmaState::alpha_for_span(15), 0.125);
  EXPECT_DOUBLE_EQ(EwmaState::alpha_for_span(29), 1.0 / 15.0);
  EXPECT_DOUBLE_EQ(EwmaState::alpha_for_span(1), 1.0);
  EXPECT_THROW(EwmaState::alpha_for_span(0.5), std::invalid_argument);
  EXPECT_THROW(EwmaState::with_alpha(0.0), std::invalid_argument);
}

TEST(Ewma, HandComputedSequence) {
  auto s = EwmaState::with_alpha(0.5);
  EXPECT_EQ(s.step(0.0), 0.0);
  EXPECT_EQ(s.step(0.5), 0.25);
  EXPECT_EQ(s.step(1.0), 0.625);
  s.reset();
  EXPECT_EQ(s.step(0.8), 0.8);
}

TEST(Ewma, StaysInsideRangeOfInputs) {
  RngStream rng(1, "ewma-hull");
  for (double span : {1.0, 5.0, 15.0, 60.0}) {
    EwmaState s(span);
    double lo = 1e9, hi = -1e9;
    for (int t = 0; t < 500; ++t) {
      const double p = rng.uniform();
      lo = std::min(lo, p);
      hi = std::max(hi, p);
      const double v = s.step(p);
      EXPECT_GE(v, lo);
      EXPECT_LE(v, hi);
    }
  }
}

TEST(AlertTracker, OscillationWithinCooldownIsOneEvent) {
  std::vector<double> r;
  for (int k = 0; k < 10; ++k) {
    r.insert(r.end(), 3, 0.9);
    r.insert(r.end(), 5, 0.1);
  }
  const auto ev = run_alerts(column(r), nullptr, 1000, raw_policy({0.5}), 120);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].t, 1000);
  EXPECT_EQ(ev[0].t_end, 1000 + 9 * 8 + 2);
  EXPECT_EQ(ev[0].horizon, 120);
  EXPECT_EQ(ev[0].smoothed, 0.9);
}

TEST(AlertTracker, CrossingsBeyondCooldownAreSeparate) {
  std::vector<double> r(200, 0.1);
  r[10] = r[71] = 0.9;  // 61 minutes apart with cooldown 60
  r[150] = 0.9;
  auto ev = run_alerts(column(r), nullptr, 0, raw_policy({0.5}), 0);
  ASSERT_EQ(ev.size(), 3u);
  r[71] = 0.1;
  r[70] = 0.9;  // exactly the cooldown: merged
  ev = run_alerts(column(r), nullptr, 0, raw_policy({0.5}), 0);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].t_end, 70);
}

TEST(AlertTracker, NothingBelowThreshold) {
  RngStream rng(2, "below");
  Tensor2 r(3000, 3);
  for (double& v : r.data()) v = rng.uniform(0, 0.499);
  EXPECT_TRUE(run_alerts(r, nullptr, 0, raw_policy({0.5, 0.5, 0.5}), 0).empty());
}

TEST(AlertTracker, RootCauseFromGateOrSmoothedRisk) {
  const Tensor2 risk(2, 3, {0.9, 0.2, 0.7, 0.9, 0.2, 0.7});
  const Tensor2 gate(2, 3, {0.1, 0.2, 0.7, 0.1, 0.2, 0.7});
  auto ev = run_alerts(risk, &gate, 0, raw_policy({0.5, 0.5, 0.5}), 0);
  ASSERT_EQ(ev.size(), 2u);
  for (const auto& e : ev) {
    EXPECT_EQ(e.root_cause, 2u);
    EXPECT_EQ(e.gate, (std::vector<double>{0.1, 0.2, 0.7}));
  }
  ev = run_alerts(risk, nullptr, 0, raw_policy({0.5, 0.5, 0.5}), 0);
  for (const auto& e : ev) {
    EXPECT_EQ(e.root_cause, 0u);
    EXPECT_TRUE(e.gate.empty());
  }
}

TEST(AlertTracker, FrameGapClosesEventsAndResetsSmoothing) {
  QuietLog q;
  AlertPolicy p = AlertPolicy::defaults(1, 15.0);
  AlertTracker tr(p, 0);
  for (Minute t = 0; t < 30; ++t) EXPECT_TRUE(tr.step(t, std::vector<double>{0.95}).empty());
  EXPECT_TRUE(tr.active(0));
  const auto closed = tr.step(500, std::vector<double>{0.0});
  ASSERT_EQ(closed.size(), 1u);
  EXPECT_EQ(closed[0].t_end, 29);
  EXPECT_EQ(tr.smoothed()[0], 0.0);  // re-seeded, not blended
  EXPECT_FALSE(tr.active(0));
  EXPECT_THROW(tr.step(501, std::vector<double>{0.1, 0.2}), std::invalid_argument);
}

TEST(AlertPolicy, ValidationAndJson) {
  AlertPolicy p = AlertPolicy::defaults(3);
  p.thresholds = {0.3, 0.4, 0.5};
  const auto back = AlertPolicy::from_json(json::parse(p.to_json().dump()));
  EXPECT_EQ(back.thresholds, p.thresholds);
  EXPECT_EQ(back.spans, p.spans);
  EXPECT_EQ(back.cooldown, 60);
  p.thresholds[0] = 1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = AlertPolicy::defaults(2);
  p.spans.pop_back();
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(FalsePositives, CountedAtFirstCrossing) {
  BinaryMatrix y(100, 2);
  for (std::size_t r = 40; r < 60; ++r) y(r, 1) = 1;
  AlertEvent hit, miss, late;
  hit.t = 145;
  hit.intent = 1;
  miss.t = 145;
  miss.intent = 0;
  late.t = 139;  // opens before the window: counts as FP even if it runs into it
  late.t_end = 150;
  late.intent = 1;
  EXPECT_FALSE(is_false_positive(hit, y, 100));
  EXPECT_TRUE(is_false_positive(miss, y, 100));
  EXPECT_TRUE(is_false_positive(late, y, 100));
  EXPECT_EQ(count_false_positives({hit, miss, late}, y, 100, 2), (std::vector<std::size_t>{1, 1}));
}

TEST(TuneThresholds, SeparatedScoresGiveLowestCleanThreshold) {
  const std::size_t n = 2880;
  std::vector<double> r(n, 0.1);
  BinaryMatrix y(n, 1);
  for (std::size_t s : {500u, 1500u, 2500u})
    for (std::size_t t = s; t < s + 100; ++t) {
      r[t] = 0.9;
      y(t, 0) = 1;
    }
  AlertPolicy p = raw_policy({0.5});
  p.fp_budget_per_day = 0;
  // tau <= 0.10 opens one unlabelled event at minute 0.
  EXPECT_DOUBLE_EQ(tune_thresholds(column(r), y, p)[0], 0.11);
}

TEST(TuneThresholds, FallbackPicksFewestFalsePositivesPreferringLarger) {
  std::vector<double> r(1440, 0.99);
  const BinaryMatrix y(1440, 1);
  AlertPolicy p = raw_policy({0.5});
  p.fp_budget_per_day = 0;
  EXPECT_DOUBLE_EQ(tune_thresholds(column(r), y, p)[0], 0.95);
}

TEST(TuneThresholds, NoRiskMassKeepsDefault) {
  QuietLog q;
  const std::vector<double> r(500, 0.01);
  EXPECT_EQ(tune_thresholds(column(r), BinaryMatrix(500, 1), raw_policy({0.5}))[0], 0.5);
  EXPECT_THROW(tune_thresholds(column(r), BinaryMatrix(499, 1), raw_policy({0.5})), std::invalid_argument);
}

TEST(TuneThresholds, RaisingBudgetNeverRaisesThreshold) {
  RngStream rng(3, "budget");
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2880;
    Tensor2 r(n, 1);
    BinaryMatrix y(n, 1);
    double level = rng.uniform(0.05, 0.6);
    for (std::size_t t = 0; t < n; ++t) {
      if (t % 400 == 0) level = rng.uniform(0.05, 0.6);
      r(t, 0) = std::clamp(level + 0.1 * rng.normal(), 0.0, 1.0);
    }
    for (std::size_t s = 300; s + 60 < n; s += 700)
      for (std::size_t t = s; t < s + 60; ++t) {
        r(t, 0) = std::clamp(0.85 + 0.05 * rng.normal(), 0.0, 1.0);
        y(t, 0) = 1;
      }
    AlertPolicy p = raw_policy({0.5}, 30);
    p.spans = {5.0};
    double prev = 1.0;
    for (double budget : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 1e9}) {
      p.fp_budget_per_day = budget;
      const double tau = tune_thresholds(r, y, p)[0];
      EXPECT_LE(tau, prev) << "trial " << trial << " budget " << budget;
      prev = tau;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 280);
}

TEST(TtfBound, NestedIntervals) {
  const std::vector<Minute> H = {120, 60, 30};
  EXPECT_EQ(ttf_bound(H, {true, false, false}), (TtfBound{60, 120, true}));
  EXPECT_EQ(ttf_bound(H, {true, true, false}), (TtfBound{30, 60, true}));
  EXPECT_EQ(ttf_bound(H, {true, true, true}), (TtfBound{0, 30, true}));
  EXPECT_FALSE(ttf_bound(H, {false, false, false}).has_value());
  QuietLog q;
  const auto odd = ttf_bound(H, {false, true, false});
  ASSERT_TRUE(odd.has_value());
  EXPECT_FALSE(odd->consistent);
  EXPECT_EQ(odd->upper, 60);
  EXPECT_TRUE((TtfBound{30, 60, true}).contains(60));
  EXPECT_FALSE((TtfBound{30, 60, true}).contains(30));
  EXPECT_THROW(ttf_bound(std::vector<Minute>{30, 60}, {true, true}), std::invalid_argument);
  EXPECT_THROW(ttf_bound(H, {true}), std::invalid_argument);
}

TEST(TtfBound, AddingAShorterFiringHorizonNeverWidens) {
  const std::vector<Minute> H = {240, 120, 60, 30, 15};
  for (unsigned mask = 1; mask < 32; ++mask) {
    std::vector<bool> fired(5);
    for (std::size_t j = 0; j < 5; ++j) fired[j] = (mask >> j) & 1u;
    bool prefix = true;
    for (std::size_t j = 0; j < 5 && prefix; ++j)
      if (!fired[j])
        for (std::size_t k = j; k < 5; ++k) prefix = prefix && !fired[k];
    if (!prefix) continue;
    const auto b = ttf_bound(H, fired);
    for (std::size_t j = 0; j < 5; ++j)
      if (!fired[j]) {
        auto more = fired;
        more[j] = true;
        const auto c = ttf_bound(H, more);
        EXPECT_LE(c->width(), b->width());
        EXPECT_GE(c->lower, 0);
        EXPECT_LE(c->upper, b->upper);
        break;
      }
  }
}

namespace {

struct StreamFixture {
  Dataset data;
  Tensor2 raw;
  ModelBundle bundle;
};

const StreamFixture& stream_fixture() {
  static const StreamFixture f = [] {
    GenConfig g;
    g.total_minutes = 8000;
    g.episode_count = 14;
    StreamFixture s;
    s.data = generate(g).data;
    s.raw = featurize(s.data.frames);
    s.bundle = train_bundle(Method::LrOvr, s.data, s.raw, 120, {0, 5000}, FitConfig{}, AlertPolicy::defaults(3));
    return s;
  }();
  return f;
}

std::vector<KpiFrame> tail(const std::vector<KpiFrame>& f, std::size_t from) { return {f.begin() + from, f.end()}; }

}  // namespace

TEST(Stream, MatchesBatchScoringAndIsDeterministic) {
  const auto& s = stream_fixture();
  const auto frames = tail(s.data.frames, 5000);
  const auto a = stream(s.bundle, frames);
  const auto b = stream(s.bundle, frames);
  ASSERT_FALSE(a.empty());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].to_json(s.data.intents), b[k].to_json(s.data.intents));
  // Batch oracle: featurize the same slice at once and replay.
  const Tensor2 risk = s.bundle.scorer->score(featurize(frames), {0, frames.size()}).risk;
  const auto batch = run_alerts(risk, nullptr, frames.front().t, s.bundle.policy, s.bundle.horizon);
  ASSERT_EQ(batch.size(), a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(batch[k].t, a[k].t);
    EXPECT_EQ(batch[k].t_end, a[k].t_end);
    EXPECT_EQ(batch[k].intent, a[k].intent);
    EXPECT_NEAR(batch[k].smoothed, a[k].smoothed, 1e-9);
  }
}

TEST(Stream, GapRestartsLikeAFreshEngine) {
  QuietLog q;
  const auto& s = stream_fixture();
  std::vector<KpiFrame> first(s.data.frames.begin() + 5000, s.data.frames.begin() + 6500);
  std::vector<KpiFrame> second(s.data.frames.begin() + 6600, s.data.frames.end());
  auto joined = first;
  joined.insert(joined.end(), second.begin(), second.end());
  auto expected = stream(s.bundle, first);
  const auto rest = stream(s.bundle, second);
  expected.insert(expected.end(), rest.begin(), rest.end());
  sort_events(expected);
  const auto got = stream(s.bundle, joined);
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t k = 0; k < got.size(); ++k) EXPECT_EQ(got[k].to_json(s.data.intents), expected[k].to_json(s.data.intents));
}

TEST(Stream, OutputAtTDependsOnlyOnThePast) {
  const auto& s = stream_fixture();
  auto frames = tail(s.data.frames, 5000);
  StreamEngine a(s.bundle);
  std::vector<std::vector<double>> risk;
  for (std::size_t t = 0; t < 600; ++t) {
    a.push(frames[t]);
    risk.push_back(a.last_risk());
  }
  for (std::size_t t = 300; t < frames.size(); ++t) frames[t].values.fill(1e5);
  StreamEngine b(s.bundle);
  for (std::size_t t = 0; t < 300; ++t) {
    b.push(frames[t]);
    EXPECT_EQ(b.last_risk(), risk[t]);
  }
}

TEST(Bundle, SaveLoadReproducesEvents) {
  const auto& s = stream_fixture();
  const auto dir = std::filesystem::temp_directory_path() / "mild_test_bundle";
  std::filesystem::create_directories(dir);
  s.bundle.save(dir / "model.json");
  const auto loaded = ModelBundle::load(dir / "model.json");
  EXPECT_EQ(loaded.method, Method::LrOvr);
  EXPECT_EQ(loaded.horizon, 120);
  EXPECT_EQ(loaded.policy.thresholds, s.bundle.policy.thresholds);
  const auto frames = tail(s.data.frames, 5000);
  const auto a = stream(s.bundle, frames), b = stream(loaded, frames);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].t, b[k].t);

  {
    std::ofstream out(dir / "alerts.jsonl");
    write_alerts_jsonl(out, a, s.data.intents);
  }
  const auto back = read_alerts_jsonl(dir / "alerts.jsonl", s.data.intents);
  ASSERT_EQ(back.size(), a.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(back[k].to_json(s.data.intents), a[k].to_json(s.data.intents));

  json bad = s.bundle.to_json();
  bad["schema_version"] = 99;
  EXPECT_THROW(ModelBundle::from_json(bad), DataError);
  bad = s.bundle.to_json();
  bad["policy"]["thresholds"] = {0.5};
  EXPECT_THROW(ModelBundle::from_json(bad), DataError);
  {
    std::ofstream out(dir / "broken.jsonl");
    out << "{not json\n";
  }
  EXPECT_THROW(read_alerts_jsonl(dir / "broken.jsonl", s.data.intents), DataError);
  std::filesystem::remove_all(dir);
}
