#pragma once

// Blocked cross-validation: 11 contiguous blocks, fold k trains on blocks
// 1..k and tests block k+1. Per fold every method is fitted on history only,
// thresholds are tuned on the chronological validation tail, and the test
// block is replayed through the alerting layer.

#include <filesystem>
#include <fstream>
#include <functional>
#include <atomic>
#include <thread>

#include "mild/alerting.hpp"
#include "mild/baselines.hpp"

namespace mild {

struct FoldSpec {
  int fold = 0;  // 1-based
  RowRange train;
  RowRange test;
};

struct FoldPlan {
  std::size_t rows = 0;
  std::size_t blocks = 11;

  std::size_t block_begin(std::size_t b) const { return b * rows / blocks; }

  std::vector<FoldSpec> folds() const {
    if (blocks < 2 || rows < blocks) throw std::invalid_argument("fold plan: too few rows for the block count");
    std::vector<FoldSpec> out;
    for (std::size_t k = 1; k < blocks; ++k)
      out.push_back({static_cast<int>(k), {0, block_begin(k)}, {block_begin(k), block_begin(k + 1)}});
    return out;
  }
};

/// Label replay: risk = y_bin. Upper bound for tests and sanity checks.
class OracleScorer final : public RiskScorer {
 public:
  explicit OracleScorer(const BinaryMatrix& y) : y_(y) {}
  std::string method() const override { return "oracle"; }
  ScoreTrace score(const Tensor2&, RowRange rows) const override {
    Tensor2 S(rows.size(), y_.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t i = 0; i < y_.cols(); ++i) S(r, i) = y_(rows.begin + r, i);
    return {std::move(S), std::nullopt};
  }
  json to_json() const override { return json::object(); }
  std::vector<double> background() const override { return std::vector<double>(FeatureSpec::kDim, 0.0); }

 private:
  const BinaryMatrix& y_;
};

class ConstantScorer final : public RiskScorer {
 public:
  ConstantScorer(std::size_t intents, double value) : k_(intents), v_(value) {}
  std::string method() const override { return "constant"; }
  ScoreTrace score(const Tensor2&, RowRange rows) const override {
    Tensor2 S(rows.size(), k_);
    S.fill(v_);
    return {std::move(S), std::nullopt};
  }
  json to_json() const override { return {{"value", v_}}; }
  std::vector<double> background() const override { return std::vector<double>(FeatureSpec::kDim, 0.0); }

 private:
  std::size_t k_;
  double v_;
};

/// Fits one method on `train` rows; must not read rows at or after train.end.
using MethodFactory = std::function<FitResult(const Tensor2& raw, const LabelMatrices&, RowRange train)>;

struct MethodSpec {
  std::string name;
  MethodFactory fit;
};

inline MethodSpec standard_method(Method m, FitConfig cfg) {
  return {std::string(to_string(m)), [m, cfg](const Tensor2& raw, const LabelMatrices& labels, RowRange train) {
            return fit_method(m, raw, labels, train, cfg);
          }};
}

// ---------------------------------------------------------------------------
// Metrics

struct FoldMetrics {
  int fold = 0;
  std::vector<std::optional<double>> detection;  // % per intent; empty when no episode affects it
  std::vector<std::optional<double>> lead;       // mean minutes over detected, per intent
  std::vector<std::size_t> affected, detected;   // per intent counts
  double fp_per_day = 0;
  std::size_t false_positives = 0, events = 0;
  std::optional<double> disambiguation;  // % over detected episodes
  std::size_t disamb_correct = 0, disamb_total = 0;
  std::size_t codrift_correct = 0, codrift_total = 0;
  std::vector<double> thresholds;

  json to_json() const {
    auto opt = [](const std::vector<std::optional<double>>& v) {
      json a = json::array();
      for (const auto& x : v) a.push_back(x ? json(*x) : json(nullptr));
      return a;
    };
    return {{"fold", fold},
            {"detection_pct", opt(detection)},
            {"lead_time_min", opt(lead)},
            {"affected", affected},
            {"detected", detected},
            {"fp_per_day", fp_per_day},
            {"false_positives", false_positives},
            {"events", events},
            {"disambiguation_pct", disambiguation ? json(*disambiguation) : json(nullptr)},
            {"disambiguation_correct", disamb_correct},
            {"disambiguation_total", disamb_total},
            {"codrift_correct", codrift_correct},
            {"codrift_total", codrift_total},
            {"thresholds", thresholds}};
  }
};

/// Scores test-block events against the failure episodes whose intents fail
/// inside [test.begin, test.end). Minute t corresponds to row t.
inline FoldMetrics score_fold(const std::vector<AlertEvent>& events, const std::vector<EpisodeAnnotation>& episodes,
                              const BinaryMatrix& y_bin, RowRange test, Minute horizon, std::size_t K) {
  FoldMetrics m;
  m.detection.assign(K, std::nullopt);
  m.lead.assign(K, std::nullopt);
  m.affected.assign(K, 0);
  m.detected.assign(K, 0);
  std::vector<double> lead_sum(K, 0.0);
  const auto b = static_cast<Minute>(test.begin), e = static_cast<Minute>(test.end);

  for (const auto& ep : episodes) {
    if (!ep.is_failure() || ep.cause_fail() < b || ep.cause_fail() >= e) continue;
    std::optional<AlertEvent> first;
    for (const auto& [i, fail] : ep.fail_t) {
      if (fail < b || fail >= e) continue;
      ++m.affected[i];
      std::optional<AlertEvent> hit;
      for (const auto& ev : events)
        if (ev.intent == i && ev.t >= fail - horizon && ev.t < fail) {
          hit = ev;
          break;
        }
      if (!hit) continue;
      ++m.detected[i];
      lead_sum[i] += static_cast<double>(fail - hit->t);
      if (!first || hit->t < first->t || (hit->t == first->t && hit->intent == *ep.cause)) first = hit;
    }
    if (!first) continue;
    const bool ok = first->root_cause == *ep.cause;
    ++m.disamb_total;
    m.disamb_correct += ok;
    if (ep.kind == EpisodeKind::CoDrift) {
      ++m.codrift_total;
      m.codrift_correct += ok;
    }
  }
  for (std::size_t i = 0; i < K; ++i) {
    if (m.affected[i] > 0) m.detection[i] = 100.0 * static_cast<double>(m.detected[i]) / static_cast<double>(m.affected[i]);
    if (m.detected[i] > 0) m.lead[i] = lead_sum[i] / static_cast<double>(m.detected[i]);
  }
  if (m.disamb_total > 0)
    m.disambiguation = 100.0 * static_cast<double>(m.disamb_correct) / static_cast<double>(m.disamb_total);
  m.events = events.size();
  for (const auto& ev : events)
    if (is_false_positive(ev, y_bin, 0)) ++m.false_positives;
  m.fp_per_day = static_cast<double>(m.false_positives) / (static_cast<double>(test.size()) / kMinutesPerDay);
  return m;
}

struct Stat {
  double mean = 0, std = 0;
  std::size_t n = 0;
  json to_json() const { return {{"mean", mean}, {"std", std}, {"n", n}}; }
  static Stat from_json(const json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("n").get<std::size_t>()}; }
};

/// Mean and sample standard deviation (n-1); std is 0 for n < 2.
inline Stat summarize(const std::vector<double>& v) {
  Stat s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct MethodReport {
  std::string method;
  std::vector<FoldMetrics> folds;
  std::vector<Stat> detection, lead;  // per intent, over folds where defined
  Stat fp_per_day, disambiguation;
  std::size_t disamb_correct = 0, disamb_total = 0, codrift_correct = 0, codrift_total = 0;

  /// Pooled over all folds (episode-weighted).
  double pooled_disambiguation() const {
    return disamb_total ? 100.0 * static_cast<double>(disamb_correct) / static_cast<double>(disamb_total) : 0.0;
  }
  double pooled_codrift() const {
    return codrift_total ? 100.0 * static_cast<double>(codrift_correct) / static_cast<double>(codrift_total) : 0.0;
  }
  double mean_detection() const {
    double s = 0;
    for (const auto& d : detection) s += d.mean;
    return detection.empty() ? 0 : s / static_cast<double>(detection.size());
  }
  double mean_lead() const {
    double s = 0;
    for (const auto& d : lead) s += d.mean;
    return lead.empty() ? 0 : s / static_cast<double>(lead.size());
  }

  void aggregate(std::size_t K) {
    detection.assign(K, {});
    lead.assign(K, {});
    std::vector<double> fp, dis;
    for (std::size_t i = 0; i < K; ++i) {
      std::vector<double> d, l;
      for (const auto& f : folds) {
        if (f.detection[i]) d.push_back(*f.detection[i]);
        if (f.lead[i]) l.push_back(*f.lead[i]);
      }
      detection[i] = summarize(d);
      lead[i] = summarize(l);
    }
    disamb_correct = disamb_total = codrift_correct = codrift_total = 0;
    for (const auto& f : folds) {
      fp.push_back(f.fp_per_day);
      if (f.disambiguation) dis.push_back(*f.disambiguation);
      disamb_correct += f.disamb_correct;
      disamb_total += f.disamb_total;
      codrift_correct += f.codrift_correct;
      codrift_total += f.codrift_total;
    }
    fp_per_day = summarize(fp);
    disambiguation = summarize(dis);
  }

  /// Summary fields only; per-fold detail is not restored.
  static MethodReport from_json(const json& j, const IntentSet& intents) {
    MethodReport r;
    r.method = j.at("method").get<std::string>();
    for (std::size_t i = 0; i < intents.size(); ++i) {
      r.detection.push_back(Stat::from_json(j.at("detection_pct").at(intents.name(i))));
      r.lead.push_back(Stat::from_json(j.at("lead_time_min").at(intents.name(i))));
    }
    r.fp_per_day = Stat::from_json(j.at("fp_per_day"));
    r.disambiguation = Stat::from_json(j.at("disambiguation_pct"));
    return r;
  }

  json to_json(const IntentSet& intents) const {
    json det = json::object(), ld = json::object();
    for (std::size_t i = 0; i < intents.size(); ++i) {
      det[intents.name(i)] = detection.at(i).to_json();
      ld[intents.name(i)] = lead.at(i).to_json();
    }
    json fj = json::array();
    for (const auto& f : folds) fj.push_back(f.to_json());
    return {{"method", method},
            {"detection_pct", det},
            {"lead_time_min", ld},
            {"fp_per_day", fp_per_day.to_json()},
            {"disambiguation_pct", disambiguation.to_json()},
            {"disambiguation_pooled_pct", pooled_disambiguation()},
            {"codrift_accuracy_pct", pooled_codrift()},
            {"codrift_episodes", codrift_total},
            {"folds", fj}};
  }
};

struct EvalConfig {
  Minute horizon = 120;
  AlertPolicy policy = AlertPolicy::defaults(3);
  std::size_t blocks = 11;
  unsigned jobs = 1;
};

/// Fits, tunes and replays one method on one fold.
inline FoldMetrics run_fold(const MethodSpec& method, const Tensor2& raw, const LabelMatrices& labels,
                            const std::vector<EpisodeAnnotation>& episodes, const FoldSpec& fold,
                            const EvalConfig& cfg) {
  const std::size_t K = labels.y_bin.cols();
  FitResult fit = method.fit(raw, labels, fold.train);
  AlertPolicy policy = cfg.policy;
  const RowRange val = fit.validation_rows;
  if (val.size() > 0) {
    const ScoreTrace vs = fit.scorer->score(raw, val);
    BinaryMatrix yv(val.size(), K);
    for (std::size_t r = 0; r < val.size(); ++r)
      for (std::size_t i = 0; i < K; ++i) yv(r, i) = labels.y_bin(val.begin + r, i);
    policy.thresholds = tune_thresholds(vs.risk, yv, policy);
  }
  const ScoreTrace ts = fit.scorer->score(raw, fold.test);
  const auto events = run_alerts(ts.risk, ts.gate ? &*ts.gate : nullptr, static_cast<Minute>(fold.test.begin), policy,
                                 cfg.horizon);
  FoldMetrics m = score_fold(events, episodes, labels.y_bin, fold.test, cfg.horizon, K);
  m.fold = fold.fold;
  m.thresholds = policy.thresholds;
  return m;
}

struct EvalReport {
  Minute horizon = 120;
  IntentSet intents;
  std::vector<MethodReport> methods;

  const MethodReport& at(std::string_view name) const {
    for (const auto& m : methods)
      if (m.method == name) return m;
    throw std::out_of_range(fmt::format("no report for method '{}'", name));
  }

  static EvalReport from_json(const json& j) {
    EvalReport r;
    try {
      r.horizon = j.at("horizon").get<Minute>();
      r.intents = IntentSet(j.at("intents").get<std::vector<std::string>>());
      for (const auto& m : j.at("methods")) r.methods.push_back(MethodReport::from_json(m, r.intents));
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed report: ") + e.what());
    }
    return r;
  }

  json to_json() const {
    json ms = json::array();
    for (const auto& m : methods) ms.push_back(m.to_json(intents));
    return {{"horizon", horizon},
            {"intents", intents.names()},
            {"fp_counting", "deduplicated alert events (cooldown merge); FP = event starting where the intent is unlabelled"},
            {"aggregation", "mean and sample std over folds with at least one test episode"},
            {"methods", ms}};
  }
};

/// Runs every method on every fold that contains failure episodes.
inline EvalReport run_cv(const Dataset& data, const std::vector<MethodSpec>& methods, const EvalConfig& cfg) {
  const std::size_t K = data.intents.size();
  if (cfg.policy.intents() != K) throw std::invalid_argument("run_cv: policy width differs from intent count");
  const Tensor2 raw = featurize(data.frames);
  const LabelMatrices labels = data.labels(cfg.horizon);
  const FoldPlan plan{data.size(), cfg.blocks};

  std::vector<FoldSpec> folds;
  for (const auto& f : plan.folds()) {
    bool any = false;
    for (const auto& ep : data.episodes)
      if (ep.is_failure() && ep.cause_fail() >= static_cast<Minute>(f.test.begin) &&
          ep.cause_fail() < static_cast<Minute>(f.test.end))
        any = true;
    if (any)
      folds.push_back(f);
    else
      log::warn(fmt::format("fold {} has no test episodes; skipped", f.fold));
  }

  struct Job {
    std::size_t method, fold;
  };
  std::vector<Job> jobs;
  for (std::size_t m = 0; m < methods.size(); ++m)
    for (std::size_t f = 0; f < folds.size(); ++f) jobs.push_back({m, f});
  std::vector<FoldMetrics> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      try {
        results[j] = run_fold(methods[jobs[j].method], raw, labels, data.episodes, folds[jobs[j].fold], cfg);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(cfg.jobs, static_cast<unsigned>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  EvalReport report;
  report.horizon = cfg.horizon;
  report.intents = data.intents;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodReport r;
    r.method = methods[m].name;
    for (std::size_t j = 0; j < jobs.size(); ++j)
      if (jobs[j].method == m) r.folds.push_back(results[j]);
    r.aggregate(K);
    report.methods.push_back(std::move(r));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Percent-of-best normalization and writers

inline double inverted_fp(double fp_per_day) { return 1.0 / (1.0 + fp_per_day); }

struct RadarRow {
  std::string method;
  double detection = 0, lead_time = 0, reliability = 0, root_cause = 0;
};

/// Each axis divided by the best method's value on it, times 100. Detection
/// and lead time are intent-averaged first. An axis where every method
/// scores 0 maps to 100 for all.
inline std::vector<RadarRow> percent_of_best(const EvalReport& report) {
  if (report.methods.size() < 2) throw std::invalid_argument("percent_of_best needs at least two methods");
  std::vector<RadarRow> rows;
  for (const auto& m : report.methods)
    rows.push_back({m.method, m.mean_detection(), m.mean_lead(), inverted_fp(m.fp_per_day.mean), m.disambiguation.mean});
  auto normalize = [&](double RadarRow::*axis) {
    double best = 0;
    for (const auto& r : rows) best = std::max(best, r.*axis);
    for (auto& r : rows) r.*axis = best > 0 ? 100.0 * r.*axis / best : 100.0;
  };
  normalize(&RadarRow::detection);
  normalize(&RadarRow::lead_time);
  normalize(&RadarRow::reliability);
  normalize(&RadarRow::root_cause);
  return rows;
}

inline void write_table2_csv(std::ostream& os, const EvalReport& r) {
  os << "method,intent,detection_mean,detection_std,lead_time_mean,lead_time_std,fp_per_day_mean,fp_per_day_std,"
        "disambiguation_mean,disambiguation_std\n";
  for (const auto& m : r.methods)
    for (std::size_t i = 0; i < r.intents.size(); ++i)
      os << fmt::format("{},{},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f}\n", m.method, r.intents.name(i),
                        m.detection[i].mean, m.detection[i].std, m.lead[i].mean, m.lead[i].std, m.fp_per_day.mean,
                        m.fp_per_day.std, m.disambiguation.mean, m.disambiguation.std);
}

inline void write_radar_csv(std::ostream& os, const std::vector<RadarRow>& rows) {
  os << "method,detection,lead_time,reliability,root_cause_accuracy\n";
  for (const auto& r : rows)
    os << fmt::format("{},{:.4f},{:.4f},{:.4f},{:.4f}\n", r.method, r.detection, r.lead_time, r.reliability, r.root_cause);
}

}  // namespace mild
