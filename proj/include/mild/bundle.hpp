#pragma once

// Persisted model bundle (scorer + alert policy + horizon) and the online
// stream engine that replays KPI frames through it.

#include <filesystem>
#include <fstream>
#include <memory>

#include "mild/alerting.hpp"
#include "mild/baselines.hpp"

namespace mild {

/// Single JSON document: bundle metadata plus the scorer's own fields
/// (arch, loss_config, standardizer, teacher, parameters for MILD).
struct ModelBundle {
  static constexpr int kSchemaVersion = 1;

  Method method = Method::Mild;
  Minute horizon = 120;
  IntentSet intents;
  AlertPolicy policy;
  std::shared_ptr<const RiskScorer> scorer;

  json to_json() const {
    json j = scorer->to_json();
    j["schema_version"] = kSchemaVersion;
    j["method"] = std::string(to_string(method));
    j["horizon"] = horizon;
    j["intents"] = intents.names();
    j["policy"] = policy.to_json();
    return j;
  }

  static ModelBundle from_json(const json& j) {
    ModelBundle b;
    try {
      if (j.at("schema_version").get<int>() != kSchemaVersion) throw DataError("unsupported model schema version");
      b.method = method_from(j.at("method").get<std::string>());
      b.horizon = j.at("horizon").get<Minute>();
      b.intents = IntentSet(j.at("intents").get<std::vector<std::string>>());
      b.policy = AlertPolicy::from_json(j.at("policy"));
    } catch (const json::exception& ex) {
      throw DataError(std::string("malformed model bundle: ") + ex.what());
    } catch (const std::invalid_argument& ex) {
      throw DataError(std::string("malformed model bundle: ") + ex.what());
    }
    if (b.policy.intents() != b.intents.size()) throw DataError("model bundle: policy width differs from intent count");
    b.scorer = scorer_from_json(b.method, j);
    return b;
  }

  void save(const std::filesystem::path& p) const {
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    out << to_json().dump(1) << '\n';
  }
  static ModelBundle load(const std::filesystem::path& p) { return from_json(read_json_file(p)); }
};

/// Frame-at-a-time replay: trailing-window features, scorer, EWMA, dedup.
/// Deterministic; every output at minute t depends only on frames <= t.
class StreamEngine {
 public:
  explicit StreamEngine(const ModelBundle& bundle)
      : bundle_(bundle), tracker_(bundle.policy, bundle.horizon) {}

  /// Returns the events closed by this frame.
  std::vector<AlertEvent> push(const KpiFrame& frame) {
    std::vector<AlertEvent> closed;
    if (last_t_ && frame.t != *last_t_ + 1) {
      log::warn(fmt::format("stream: frame gap between t={} and t={}; resetting state", *last_t_, frame.t));
      featurizer_.reset();
      closed = tracker_.flush();
    }
    last_t_ = frame.t;
    const auto x = featurizer_.push(frame);
    const Tensor2 row(1, x.size(), std::vector<double>(x.begin(), x.end()));
    const ScoreTrace s = bundle_.scorer->score(row);
    last_risk_.assign(s.risk.row(0).begin(), s.risk.row(0).end());
    const auto gate = s.gate ? s.gate->row(0) : std::span<const double>{};
    auto more = tracker_.step(frame.t, s.risk.row(0), gate);
    closed.insert(closed.end(), more.begin(), more.end());
    return closed;
  }

  std::vector<AlertEvent> finish() {
    last_t_.reset();
    featurizer_.reset();
    return tracker_.flush();
  }

  bool active(std::size_t intent) const { return tracker_.active(intent); }
  const std::vector<double>& smoothed() const { return tracker_.smoothed(); }
  const std::vector<double>& last_risk() const { return last_risk_; }

 private:
  const ModelBundle& bundle_;
  OnlineFeaturizer featurizer_;
  AlertTracker tracker_;
  std::optional<Minute> last_t_;
  std::vector<double> last_risk_;
};

inline std::vector<AlertEvent> stream(const ModelBundle& bundle, const std::vector<KpiFrame>& frames) {
  StreamEngine engine(bundle);
  std::vector<AlertEvent> events;
  for (const auto& f : frames) {
    auto e = engine.push(f);
    events.insert(events.end(), e.begin(), e.end());
  }
  auto rest = engine.finish();
  events.insert(events.end(), rest.begin(), rest.end());
  sort_events(events);
  return events;
}

inline void write_alerts_jsonl(std::ostream& out, const std::vector<AlertEvent>& events, const IntentSet& intents) {
  for (const auto& e : events) out << e.to_json(intents).dump() << '\n';
}

inline std::vector<AlertEvent> read_alerts_jsonl(const std::filesystem::path& p, const IntentSet& intents) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  std::vector<AlertEvent> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(AlertEvent::from_json(json::parse(line), intents));
    } catch (const json::parse_error& ex) {
      throw DataError(fmt::format("{}:{}: {}", p.string(), n, ex.what()));
    }
  }
  return out;
}

/// Fits `method` on `rows`, tunes thresholds on the fit's validation tail
/// and packages everything needed for replay.
inline ModelBundle train_bundle(Method method, const Dataset& data, const Tensor2& raw, Minute horizon, RowRange rows,
                                const FitConfig& cfg, AlertPolicy policy) {
  const LabelMatrices labels = data.labels(horizon);
  FitResult fit = fit_method(method, raw, labels, rows, cfg);
  const RowRange val = fit.validation_rows;
  if (val.size() > 0) {
    const ScoreTrace vs = fit.scorer->score(raw, val);
    BinaryMatrix yv(val.size(), labels.y_bin.cols());
    for (std::size_t r = 0; r < val.size(); ++r)
      for (std::size_t i = 0; i < yv.cols(); ++i) yv(r, i) = labels.y_bin(val.begin + r, i);
    policy.thresholds = tune_thresholds(vs.risk, yv, policy);
  }
  ModelBundle b;
  b.method = method;
  b.horizon = horizon;
  b.intents = data.intents;
  b.policy = std::move(policy);
  b.scorer = std::move(fit.scorer);
  return b;
}

}  // namespace mild
