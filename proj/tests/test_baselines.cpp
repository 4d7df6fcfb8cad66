#include <gtest/gtest.h>

#include <cmath>

#include "mild/baselines.hpp"
#include "mild/synthgen.hpp"

using namespace mild;

namespace {

struct Bench {
  Tensor2 raw;
  LabelMatrices labels;
};

const Bench& bench() {
  static const Bench b = [] {
    GenConfig g;
    g.total_minutes = 9000;
    g.episode_count = 16;
    const auto gen = generate(g);
    return Bench{featurize(gen.data.frames), gen.data.labels(120)};
  }();
  return b;
}

FitConfig quick_fit() {
  FitConfig c;
  c.train.max_epochs = 2;
  return c;
}

}  // namespace

TEST(Method, NamesRoundTrip) {
  for (auto m : {Method::Mild, Method::LrOvr, Method::Mlp, Method::Wkpi, Method::DistTarget})
    EXPECT_EQ(method_from(to_string(m)), m);
  EXPECT_THROW(method_from("lstm"), std::invalid_argument);
}

TEST(ChronologicalSplit, TailIsValidation) {
  const auto [fit, val] = chronological_split({100, 200}, 0.2);
  EXPECT_EQ(fit.begin, 100u);
  EXPECT_EQ(fit.end, 180u);
  EXPECT_EQ(val.begin, 180u);
  EXPECT_EQ(val.end, 200u);
  const auto [all, none] = chronological_split({0, 10}, 0.0);
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(none.size(), 0u);
}

TEST(Wkpi, ZeroInputScoresOneHalf) {
  RngStream rng(1, "wkpi");
  Tensor2 w(3, 40);
  for (double& v : w.data()) v = rng.normal();
  const std::vector<double> zero(40, 0.0);
  for (double s : WkpiScorer::score_row(w, zero)) EXPECT_EQ(s, 0.5);
}

TEST(Wkpi, WeightsAreL1NormalisedTeacherCoefficients) {
  TeacherModel t;
  t.weights = Tensor2(2, 3, {2, -1, 1, 0, 0, 0});
  t.bias = {5, -5};
  const auto s = WkpiScorer::from_teacher(Standardizer{{0, 0, 0}, {1, 1, 1}}, t);
  EXPECT_EQ(s->weights(), Tensor2(2, 3, {0.5, -0.25, 0.25, 0, 0, 0}));
}

TEST(Wkpi, OrderingFollowsWeightedSum) {
  RngStream rng(2, "wkpi-order");
  Tensor2 w(1, 8);
  for (double& v : w.data()) v = rng.normal();
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(8), b(8);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    double za = 0, zb = 0;
    for (std::size_t c = 0; c < 8; ++c) {
      za += w(0, c) * a[c];
      zb += w(0, c) * b[c];
    }
    if (std::abs(za - zb) < 1e-9) continue;
    EXPECT_EQ(WkpiScorer::score_row(w, a)[0] > WkpiScorer::score_row(w, b)[0], za > zb);
  }
}

TEST(DistTarget, OraclesAtTargetAndTolerance) {
  KpiVector target{}, tol{};
  for (std::size_t k = 0; k < kNumKpis; ++k) {
    target[k] = 10.0 * static_cast<double>(k + 1);
    tol[k] = 0.5 * static_cast<double>(k + 1);
  }
  const auto relevant = default_relevant_kpis();
  const DistTargetScorer s(target, tol, relevant);
  for (double v : s.score_kpis(target)) EXPECT_EQ(v, 0.0);
  // One of m relevant KPIs off by one tolerance gives 1/sqrt(m); all of them
  // off by one tolerance gives exactly 1.
  KpiVector k = target;
  k[idx(Kpi::TelemetryQueue)] += tol[idx(Kpi::TelemetryQueue)];
  EXPECT_NEAR(s.score_kpis(k)[1], 1.0 / std::sqrt(3.0), 1e-12);
  EXPECT_EQ(s.score_kpis(k)[0], 0.0);
  k = target;
  for (Kpi kp : relevant[0]) k[idx(kp)] += tol[idx(kp)];
  EXPECT_NEAR(s.score_kpis(k)[0], 1.0, 1e-12);
  k[idx(Kpi::ApiLatency)] += 100 * tol[idx(Kpi::ApiLatency)];
  EXPECT_EQ(s.score_kpis(k)[0], 1.0);
}

TEST(DistTarget, MonotoneAlongRamp) {
  KpiVector target{}, tol{};
  target.fill(50);
  tol.fill(2);
  const DistTargetScorer s(target, tol, default_relevant_kpis());
  double prev = -1;
  for (int step = 0; step <= 40; ++step) {
    KpiVector k = target;
    k[idx(Kpi::AnalyticsTput)] -= 0.25 * step;
    const double v = s.score_kpis(k)[2];
    EXPECT_GE(v, prev);
    EXPECT_LE(v, 1.0);
    prev = v;
  }
  EXPECT_EQ(prev, 1.0);
}

TEST(DistTarget, FitUsesHealthyRowsOnly) {
  const auto& b = bench();
  const RowRange rows{0, 4000};
  const auto s = DistTargetScorer::fit(b.raw, b.labels.y_bin, rows);
  // Independent healthy-mean oracle for one KPI.
  const std::size_t k = idx(Kpi::ApiLatency);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t r = rows.begin; r < rows.end; ++r) {
    bool any = false;
    for (std::size_t i = 0; i < 3; ++i) any = any || b.labels.y_bin(r, i);
    if (any) continue;
    sum += b.raw(r, FeatureSpec::column(0, k));
    ++n;
  }
  EXPECT_NEAR(s->to_json()["target"][k].get<double>(), sum / static_cast<double>(n), 1e-9);

  BinaryMatrix all_pos(10, 3);
  for (std::size_t r = 0; r < 10; ++r) all_pos(r, 0) = 1;
  EXPECT_THROW(DistTargetScorer::fit(Tensor2(10, 40), all_pos, {0, 10}), DataError);
}

TEST(Mlp, UntrainedScoresHalfAtOrigin) {
  MlpNet net(MildArch{}, 3);
  const auto P = net.predict(Tensor2(4, 40));
  for (double v : P.data()) EXPECT_EQ(v, 0.5);
}

TEST(LrOvr, ScoresEqualTheTeacher) {
  const auto& b = bench();
  const RowRange rows{0, 6000};
  const auto fit = fit_method(Method::LrOvr, b.raw, b.labels, rows, quick_fit());
  const RowRange fr = fit.fit_rows;
  const auto st = Standardizer::fit(b.raw, fr.begin, fr.end);
  BinaryMatrix y(fr.size(), 3);
  for (std::size_t r = 0; r < fr.size(); ++r)
    for (std::size_t i = 0; i < 3; ++i) y(r, i) = b.labels.y_bin(fr.begin + r, i);
  const auto teacher = train_teacher(st.apply(b.raw, fr.begin, fr.end), y);
  const RowRange probe{6000, 6500};
  EXPECT_EQ(fit.scorer->score(b.raw, probe).risk, teacher.probabilities(st.apply(b.raw, probe.begin, probe.end)));
}

TEST(FitMethod, IgnoresRowsAfterTrainingRange) {
  const auto& b = bench();
  Tensor2 mutated = b.raw;
  for (std::size_t r = 5000; r < mutated.rows(); ++r)
    for (double& v : mutated.row(r)) v = 1e4;
  const RowRange rows{0, 5000}, probe{4000, 5000};
  for (auto m : {Method::LrOvr, Method::Wkpi, Method::DistTarget, Method::Mlp}) {
    const auto a = fit_method(m, b.raw, b.labels, rows, quick_fit());
    const auto z = fit_method(m, mutated, b.labels, rows, quick_fit());
    EXPECT_EQ(a.scorer->score(b.raw, probe).risk, z.scorer->score(b.raw, probe).risk) << to_string(m);
  }
}

TEST(FitMethod, EveryScorerInUnitIntervalAndRoundTrips) {
  const auto& b = bench();
  const RowRange rows{0, 6000}, probe{6000, 7000};
  for (auto m : {Method::Mild, Method::LrOvr, Method::Mlp, Method::Wkpi, Method::DistTarget}) {
    const auto fit = fit_method(m, b.raw, b.labels, rows, quick_fit());
    EXPECT_EQ(fit.scorer->method(), to_string(m));
    EXPECT_EQ(fit.history.has_value(), m == Method::Mild || m == Method::Mlp);
    const auto tr = fit.scorer->score(b.raw, probe);
    ASSERT_EQ(tr.risk.rows(), probe.size());
    ASSERT_EQ(tr.risk.cols(), 3u);
    EXPECT_EQ(tr.gate.has_value(), m == Method::Mild);
    for (double v : tr.risk.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(fit.scorer->background().size(), FeatureSpec::kDim);
    const auto back = scorer_from_json(m, json::parse(fit.scorer->to_json().dump()));
    const auto tb = back->score(b.raw, probe);
    for (std::size_t k = 0; k < tr.risk.size(); ++k) EXPECT_NEAR(tb.risk.data()[k], tr.risk.data()[k], 1e-12);
  }
}

TEST(FitMethod, MalformedJsonIsDataError) {
  EXPECT_THROW(scorer_from_json(Method::Wkpi, json{{"rows", 1}}), DataError);
  EXPECT_THROW(scorer_from_json(Method::Mild, json::object()), DataError);
}
