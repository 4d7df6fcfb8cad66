#pragma once

// Runtime alerting: EWMA smoothing of per-intent risk, threshold crossing
// with cooldown-based deduplication, root-cause verdicts, threshold tuning
// under a false-positive budget, and multi-horizon time-to-failure bounds.

#include <optional>
#include <span>
#include <vector>

#include "mild/core_types.hpp"
#include "mild/numerics.hpp"

namespace mild {

using nn::Tensor2;

inline constexpr double kMinutesPerDay = 1440.0;

/// p~ = a p + (1 - a) p~_prev with a = 2 / (W + 1); seeded by the first value.
class EwmaState {
 public:
  explicit EwmaState(double span = 15.0) : alpha_(alpha_for_span(span)) {}

  static double alpha_for_span(double span) {
    if (!(span >= 1.0)) throw std::invalid_argument("EWMA span must be >= 1");
    return 2.0 / (span + 1.0);
  }
  static EwmaState with_alpha(double alpha) {
    if (!(alpha > 0 && alpha <= 1)) throw std::invalid_argument("EWMA alpha must lie in (0,1]");
    EwmaState s;
    s.alpha_ = alpha;
    return s;
  }

  double step(double p) {
    value_ = initialized_ ? alpha_ * p + (1.0 - alpha_) * value_ : p;
    initialized_ = true;
    return value_;
  }
  void reset() { initialized_ = false; }

  double alpha() const { return alpha_; }
  double value() const { return value_; }
  bool initialized() const { return initialized_; }

 private:
  double alpha_;
  double value_ = 0.0;
  bool initialized_ = false;
};

struct AlertPolicy {
  std::vector<double> thresholds;  // per intent, in (0,1)
  std::vector<double> spans;       // EWMA span per intent
  Minute cooldown = 60;
  double fp_budget_per_day = 1.0;

  static AlertPolicy defaults(std::size_t intents, double span = 15.0) {
    AlertPolicy p;
    p.thresholds.assign(intents, 0.5);
    p.spans.assign(intents, span);
    return p;
  }

  std::size_t intents() const { return thresholds.size(); }

  void validate() const {
    if (thresholds.size() != spans.size()) throw std::invalid_argument("policy: thresholds/spans length mismatch");
    for (double t : thresholds)
      if (!(t > 0 && t < 1)) throw std::invalid_argument("policy: thresholds must lie in (0,1)");
    for (double s : spans) EwmaState::alpha_for_span(s);
    if (cooldown < 0) throw std::invalid_argument("policy: negative cooldown");
    if (fp_budget_per_day < 0) throw std::invalid_argument("policy: negative FP budget");
  }

  json to_json() const {
    return {{"thresholds", thresholds}, {"spans", spans}, {"cooldown", cooldown}, {"fp_budget_per_day", fp_budget_per_day}};
  }
  static AlertPolicy from_json(const json& j) {
    AlertPolicy p;
    p.thresholds = j.at("thresholds").get<std::vector<double>>();
    p.spans = j.at("spans").get<std::vector<double>>();
    p.cooldown = j.at("cooldown").get<Minute>();
    p.fp_budget_per_day = j.at("fp_budget_per_day").get<double>();
    p.validate();
    return p;
  }
};

struct AlertEvent {
  Minute t = 0;      // first crossing
  Minute t_end = 0;  // last above-threshold minute merged into this event
  std::size_t intent = 0;
  double smoothed = 0;       // smoothed risk at first crossing
  std::vector<double> gate;  // gate snapshot at first crossing (empty without a gate)
  std::size_t root_cause = 0;
  Minute horizon = 0;

  json to_json(const IntentSet& intents) const {
    return {{"t", t},
            {"t_end", t_end},
            {"intent", intents.name(intent)},
            {"smoothed_risk", smoothed},
            {"gate", gate},
            {"root_cause", intents.name(root_cause)},
            {"horizon", horizon}};
  }
  static AlertEvent from_json(const json& j, const IntentSet& intents) {
    AlertEvent e;
    try {
      e.t = j.at("t");
      e.t_end = j.at("t_end");
      e.intent = intents.index_of(j.at("intent").get<std::string>());
      e.smoothed = j.at("smoothed_risk");
      e.gate = j.at("gate").get<std::vector<double>>();
      e.root_cause = intents.index_of(j.at("root_cause").get<std::string>());
      e.horizon = j.at("horizon");
    } catch (const json::exception& ex) {
      throw DataError(std::string("malformed alert event: ") + ex.what());
    }
    return e;
  }
};

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Minute-by-minute alert state machine for K intents. An event opens at the
/// first smoothed crossing of tau_i; later crossings within `cooldown`
/// minutes of the last crossing extend it; it closes once `cooldown` minutes
/// pass without a crossing.
class AlertTracker {
 public:
  AlertTracker(AlertPolicy policy, Minute horizon) : policy_(std::move(policy)), horizon_(horizon) {
    policy_.validate();
    for (double s : policy_.spans) ewma_.emplace_back(s);
    open_.resize(policy_.intents());
    smoothed_.assign(policy_.intents(), 0.0);
  }

  /// Feeds minute t. `gate` may be empty. Returns events that closed.
  std::vector<AlertEvent> step(Minute t, std::span<const double> risk, std::span<const double> gate = {}) {
    const std::size_t K = policy_.intents();
    if (risk.size() != K) throw std::invalid_argument("risk row has wrong width");
    std::vector<AlertEvent> closed;
    if (last_t_ && t != *last_t_ + 1) {
      log::warn(fmt::format("frame gap between t={} and t={}; resetting alert state", *last_t_, t));
      closed = flush();
    }
    last_t_ = t;
    for (std::size_t i = 0; i < K; ++i) smoothed_[i] = ewma_[i].step(std::clamp(risk[i], 0.0, 1.0));
    for (std::size_t i = 0; i < K; ++i) {
      auto& o = open_[i];
      if (o && t - o->t_end > policy_.cooldown) {
        closed.push_back(*o);
        o.reset();
      }
      if (smoothed_[i] >= policy_.thresholds[i]) {
        if (o) {
          o->t_end = t;
        } else {
          AlertEvent e;
          e.t = e.t_end = t;
          e.intent = i;
          e.smoothed = smoothed_[i];
          e.horizon = horizon_;
          if (!gate.empty()) {
            e.gate.assign(gate.begin(), gate.end());
            e.root_cause = argmax(gate);
          } else {
            e.root_cause = argmax(smoothed_);
          }
          o = e;
        }
      }
    }
    return closed;
  }

  /// Closes every open event and resets smoothing.
  std::vector<AlertEvent> flush() {
    std::vector<AlertEvent> out;
    for (auto& o : open_) {
      if (o) out.push_back(*o);
      o.reset();
    }
    for (auto& e : ewma_) e.reset();
    last_t_.reset();
    return out;
  }

  /// True while intent i has an open (not yet closed) event.
  bool active(std::size_t i) const { return open_.at(i).has_value(); }
  const std::vector<double>& smoothed() const { return smoothed_; }
  const AlertPolicy& policy() const { return policy_; }

 private:
  AlertPolicy policy_;
  Minute horizon_;
  std::vector<EwmaState> ewma_;
  std::vector<std::optional<AlertEvent>> open_;
  std::vector<double> smoothed_;
  std::optional<Minute> last_t_;
};

inline void sort_events(std::vector<AlertEvent>& ev) {
  std::sort(ev.begin(), ev.end(), [](const AlertEvent& a, const AlertEvent& b) {
    return a.t != b.t ? a.t < b.t : a.intent < b.intent;
  });
}

/// Replays a contiguous risk trace whose row r is minute t0 + r.
/// When `active` is given it receives the per-minute open-event flags.
inline std::vector<AlertEvent> run_alerts(const Tensor2& risk, const Tensor2* gate, Minute t0, const AlertPolicy& policy,
                                          Minute horizon, std::vector<std::vector<std::uint8_t>>* active = nullptr) {
  AlertTracker tracker(policy, horizon);
  std::vector<AlertEvent> events;
  if (active) active->assign(risk.rows(), std::vector<std::uint8_t>(risk.cols(), 0));
  for (std::size_t r = 0; r < risk.rows(); ++r) {
    const auto g = gate ? gate->row(r) : std::span<const double>{};
    auto closed = tracker.step(t0 + static_cast<Minute>(r), risk.row(r), g);
    events.insert(events.end(), closed.begin(), closed.end());
    if (active)
      for (std::size_t i = 0; i < risk.cols(); ++i) (*active)[r][i] = tracker.active(i);
  }
  auto rest = tracker.flush();
  events.insert(events.end(), rest.begin(), rest.end());
  sort_events(events);
  return events;
}

/// Whether the event is open at minute m (a tracker keeps it open until
/// `cooldown` minutes pass after its last crossing).
inline bool event_active(const AlertEvent& e, Minute m, Minute cooldown) { return m >= e.t && m <= e.t_end + cooldown; }

/// An event is a false positive when its intent is not labelled positive at
/// the event's first crossing. Row of minute t is t - t0.
inline bool is_false_positive(const AlertEvent& e, const BinaryMatrix& y_bin, Minute t0) {
  return y_bin(static_cast<std::size_t>(e.t - t0), e.intent) == 0;
}

inline std::vector<std::size_t> count_false_positives(const std::vector<AlertEvent>& events, const BinaryMatrix& y_bin,
                                                      Minute t0, std::size_t intents) {
  std::vector<std::size_t> fp(intents, 0);
  for (const auto& e : events)
    if (is_false_positive(e, y_bin, t0)) ++fp[e.intent];
  return fp;
}

/// Candidate thresholds 0.05, 0.06, ..., 0.95.
inline std::vector<double> threshold_grid() {
  std::vector<double> g;
  for (int k = 5; k <= 95; ++k) g.push_back(k / 100.0);
  return g;
}

/// Per intent, the smallest grid threshold tau such that every grid threshold
/// >= tau keeps the deduplicated validation FP rate within budget; if 0.95
/// already exceeds it, the threshold with the fewest FPs (ties to the larger
/// one). `y_bin` rows align with `risk`.
inline std::vector<double> tune_thresholds(const Tensor2& risk, const BinaryMatrix& y_bin, const AlertPolicy& policy) {
  const std::size_t K = risk.cols();
  if (y_bin.rows() != risk.rows() || y_bin.cols() != K) throw std::invalid_argument("tune_thresholds: shape mismatch");
  if (risk.rows() == 0) throw std::invalid_argument("tune_thresholds: empty validation trace");
  const double days = static_cast<double>(risk.rows()) / kMinutesPerDay;
  const auto grid = threshold_grid();

  std::vector<std::vector<std::size_t>> fp(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    AlertPolicy p = policy;
    p.thresholds.assign(K, grid[g]);
    fp[g] = count_false_positives(run_alerts(risk, nullptr, 0, p, 0), y_bin, 0, K);
  }

  std::vector<double> tau(K, 0.5);
  for (std::size_t i = 0; i < K; ++i) {
    EwmaState ewma(policy.spans.at(i));
    double max_s = 0;
    for (std::size_t r = 0; r < risk.rows(); ++r) max_s = std::max(max_s, ewma.step(risk(r, i)));
    if (max_s < grid.front()) {
      log::warn(fmt::format("threshold tuning: no risk mass for intent {}; using 0.5", i));
      continue;
    }
    // Deduplicated FP counts are not monotone in tau: a low threshold can hold
    // one event open for the whole trace. Only the suffix of the grid where
    // every threshold meets the budget is eligible.
    std::optional<std::size_t> pick;
    for (std::size_t g = grid.size(); g-- > 0;) {
      if (static_cast<double>(fp[g][i]) / days > policy.fp_budget_per_day) break;
      pick = g;
    }
    if (!pick) {
      std::size_t best = 0;
      for (std::size_t g = 0; g < grid.size(); ++g)
        if (fp[g][i] <= fp[best][i]) best = g;
      pick = best;
    }
    tau[i] = grid[*pick];
  }
  return tau;
}

// ---------------------------------------------------------------------------
// Multi-horizon time-to-failure bounds

struct TtfBound {
  Minute lower = 0;  // exclusive
  Minute upper = 0;  // inclusive
  bool consistent = true;

  bool contains(Minute ttf) const { return ttf > lower && ttf <= upper; }
  Minute width() const { return upper - lower; }
  friend bool operator==(const TtfBound&, const TtfBound&) = default;
};

/// `horizons` sorted strictly descending; `fired[j]` is whether the model of
/// horizon j currently alerts. The tightest fired horizon H_j gives
/// TTF in (H_{j+1}, H_j] (lower 0 for the shortest). A longer horizon that
/// is silent while a shorter one fires marks the bound inconsistent.
inline std::optional<TtfBound> ttf_bound(std::span<const Minute> horizons, const std::vector<bool>& fired) {
  if (horizons.size() != fired.size()) throw std::invalid_argument("ttf_bound: size mismatch");
  for (std::size_t j = 1; j < horizons.size(); ++j)
    if (!(horizons[j] < horizons[j - 1])) throw std::invalid_argument("ttf_bound: horizons must be strictly descending");
  std::optional<std::size_t> tight;
  for (std::size_t j = 0; j < fired.size(); ++j)
    if (fired[j]) tight = j;
  if (!tight) return std::nullopt;
  TtfBound b;
  b.upper = horizons[*tight];
  b.lower = *tight + 1 < horizons.size() ? horizons[*tight + 1] : 0;
  for (std::size_t j = 0; j < *tight; ++j)
    if (!fired[j]) b.consistent = false;
  if (!b.consistent)
    log::warn(fmt::format("ttf: horizon {} fired while a longer horizon is silent", horizons[*tight]));
  return b;
}

}  // namespace mild
