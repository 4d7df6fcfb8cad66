#pragma once

// Synthetic minute-sampled multi-intent KPI benchmark: seasonal baseline with
// Gaussian noise, benign hard negatives, and three labelled failure
// categories (simple drift, non-linear multi-KPI failure, co-drift).

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mild/core_types.hpp"

namespace mild {

struct KpiProfile {
  double nominal = 0;
  double noise_sigma = 0;
  double seasonal_amplitude = 0;
  double seasonal_phase = 0;  // radians
  double fault_delta = 0;     // signed excursion at full degradation
};

struct GenConfig {
  Minute total_minutes = 30000;
  std::uint64_t seed = 42;
  double mix_non_linear = 0.6;
  double mix_co_drift = 0.2;
  double mix_simple = 0.2;
  std::size_t episode_count = 60;
  double hard_negative_rate = 5.0;  // per 10,000 minutes
  Minute seasonality_period = 1440;
  std::array<KpiProfile, kNumKpis> kpis = default_profiles();
  Minute ramp_min = 90, ramp_max = 180;
  Minute lag_min = 10, lag_max = 30;
  double attenuation_min = 0.5, attenuation_max = 0.8;
  Minute horizon_guard = 120;  // largest horizon the labels will use
  Minute recovery = 10;
  Minute spike_min = 5, spike_max = 20;
  double spike_fraction_min = 0.15, spike_fraction_max = 0.35;
  Minute warmup = 60;

  static std::array<KpiProfile, kNumKpis> default_profiles() {
    std::array<KpiProfile, kNumKpis> p{};
    p[idx(Kpi::CpuPct)] = {35.0, 2.0, 8.0, 0.0, 45.0};
    p[idx(Kpi::RamPct)] = {45.0, 2.0, 5.0, 0.5, 40.0};
    p[idx(Kpi::StoragePct)] = {50.0, 0.5, 1.0, 1.0, 30.0};
    p[idx(Kpi::Snet)] = {800.0, 20.0, 100.0, 0.2, -300.0};
    p[idx(Kpi::Sri)] = {99.0, 0.15, 0.2, 0.9, -5.0};
    p[idx(Kpi::ApiLatency)] = {50.0, 2.5, 5.0, 0.3, 100.0};
    p[idx(Kpi::TelemetryQueue)] = {100.0, 5.0, 10.0, 0.7, 300.0};
    p[idx(Kpi::AnalyticsTput)] = {1000.0, 25.0, 100.0, 0.1, -600.0};
    return p;
  }

  /// Minimum distance between consecutive episodes' cause failure times.
  Minute slot_length() const { return std::max(ramp_max, horizon_guard) + lag_max + recovery + horizon_guard; }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("GenConfig: " + m); };
    if (total_minutes < 2 * seasonality_period) fail("total_minutes must be at least two seasonal periods");
    if (seasonality_period < 1) fail("seasonality_period must be positive");
    for (double f : {mix_non_linear, mix_co_drift, mix_simple})
      if (f < 0) fail("event mix fractions must be non-negative");
    if (std::abs(mix_non_linear + mix_co_drift + mix_simple - 1.0) > 1e-9) fail("event_mix must sum to 1");
    if (ramp_min < 2 || ramp_max < ramp_min) fail("bad ramp range");
    if (lag_min < 1 || lag_max < lag_min) fail("bad victim lag range");
    if (!(0 < attenuation_min && attenuation_min <= attenuation_max && attenuation_max <= 1)) fail("bad attenuation range");
    if (horizon_guard < 1) fail("horizon_guard must be positive");
    if (recovery < 1) fail("recovery must be positive");
    if (spike_min < 5 || spike_max < spike_min) fail("bad spike duration range");
    if (!(0 < spike_fraction_min && spike_fraction_min <= spike_fraction_max)) fail("bad spike magnitude range");
    if (hard_negative_rate < 0) fail("hard_negative_rate must be non-negative");
    for (const auto& k : kpis)
      if (k.noise_sigma < 0) fail("noise sigma must be non-negative");
  }

  json to_json() const {
    json profiles = json::object();
    for (std::size_t k = 0; k < kNumKpis; ++k) {
      const auto& p = kpis[k];
      profiles[std::string(kKpiNames[k])] = {{"nominal", p.nominal},
                                             {"noise_sigma", p.noise_sigma},
                                             {"seasonal_amplitude", p.seasonal_amplitude},
                                             {"seasonal_phase", p.seasonal_phase},
                                             {"fault_delta", p.fault_delta}};
    }
    return {{"total_minutes", total_minutes},
            {"seed", seed},
            {"event_mix", {{"non_linear", mix_non_linear}, {"co_drift", mix_co_drift}, {"simple", mix_simple}}},
            {"episode_count", episode_count},
            {"hard_negative_rate", hard_negative_rate},
            {"seasonality_period", seasonality_period},
            {"kpis", profiles},
            {"ramp_range", {ramp_min, ramp_max}},
            {"victim_lag_range", {lag_min, lag_max}},
            {"victim_attenuation_range", {attenuation_min, attenuation_max}},
            {"horizon_guard", horizon_guard},
            {"recovery", recovery},
            {"spike_duration_range", {spike_min, spike_max}},
            {"spike_fraction_range", {spike_fraction_min, spike_fraction_max}},
            {"warmup", warmup}};
  }
};

// ---------------------------------------------------------------------------
// Fault shapes (noise-free offsets added on top of the baseline)

/// Resource KPIs that grow super-linearly in a non-linear failure of each
/// default intent.
inline constexpr std::array<std::array<Kpi, 2>, 3> kResourcePair = {{
    {Kpi::CpuPct, Kpi::Sri},     // api
    {Kpi::RamPct, Kpi::Snet},    // telemetry
    {Kpi::CpuPct, Kpi::RamPct},  // analytics
}};

enum class EnvelopeShape { Linear, Quadratic, LateThird };

/// Degradation fraction at minute t of a component that starts at `start`,
/// peaks at `fail` and recovers linearly over `recovery` minutes.
inline double fault_envelope(Minute t, Minute start, Minute fail, Minute recovery, EnvelopeShape shape) {
  auto profile = [shape](double u) {
    switch (shape) {
      case EnvelopeShape::Linear: return u;
      case EnvelopeShape::Quadratic: return u * u;
      case EnvelopeShape::LateThird: return std::clamp(3.0 * u - 2.0, 0.0, 1.0);
    }
    return 0.0;
  };
  if (t < start) return 0.0;
  if (t < fail) return profile(static_cast<double>(t - start) / static_cast<double>(fail - start));
  if (t < fail + recovery) return 1.0 - static_cast<double>(t - fail) / static_cast<double>(recovery);
  return 0.0;
}

/// Trapezoid transient over [start, start+duration): 2-minute edges,
/// flat top at 1, zero from start+duration on.
inline double spike_envelope(Minute t, Minute start, Minute duration) {
  if (t < start || t >= start + duration) return 0.0;
  const double tau = static_cast<double>(t - start);
  return std::min({1.0, (tau + 1.0) / 2.0, (static_cast<double>(duration) - tau) / 2.0});
}

enum class HardNegativeKind { ResourceSpike, AppTransient };

struct FaultComponent {
  Kpi kpi;
  double delta;  // signed excursion at envelope 1
  Minute start, fail;
  EnvelopeShape shape;
  bool spike = false;  // trapezoid over [start, fail)
};

/// Noise-free description of one injected episode.
struct FaultShape {
  EpisodeAnnotation annotation;
  std::vector<FaultComponent> components;
  Minute recovery = 10;
  Minute victim_lag = 0;
  double victim_attenuation = 1.0;

  KpiVector offset(Minute t) const {
    KpiVector v{};
    for (const auto& c : components) {
      const double e = c.spike ? spike_envelope(t, c.start, c.fail - c.start)
                               : fault_envelope(t, c.start, c.fail, recovery, c.shape);
      v[idx(c.kpi)] += c.delta * e;
    }
    return v;
  }
};

// ---------------------------------------------------------------------------
// Generation

inline void require_default_intent(std::size_t intent) {
  if (intent >= kAppKpi.size()) throw std::invalid_argument("synthetic generator supports intents 0..2");
}

/// Seasonal baseline with i.i.d. Gaussian noise; percentages clamped.
inline std::vector<KpiFrame> gen_baseline(const GenConfig& cfg) {
  cfg.validate();
  RngStream rng(cfg.seed, "baseline-noise");
  std::vector<KpiFrame> frames(static_cast<std::size_t>(cfg.total_minutes));
  const double w = 2.0 * M_PI / static_cast<double>(cfg.seasonality_period);
  for (std::size_t r = 0; r < frames.size(); ++r) {
    auto& f = frames[r];
    f.t = static_cast<Minute>(r);
    for (std::size_t k = 0; k < kNumKpis; ++k) {
      const auto& p = cfg.kpis[k];
      f.values[k] = p.nominal + p.seasonal_amplitude * std::sin(w * static_cast<double>(f.t) + p.seasonal_phase) +
                    p.noise_sigma * rng.normal();
    }
    clamp_frame(f);
  }
  return frames;
}

namespace detail {
inline void check_free(const Dataset& d, Minute begin, Minute end) {
  for (const auto& e : d.episodes)
    if (begin < e.end_t && e.onset_t < end)
      throw std::invalid_argument(fmt::format("episode [{},{}) overlaps an existing episode [{},{})", begin, end,
                                              e.onset_t, e.end_t));
}

inline void apply_shape(Dataset& d, const FaultShape& s) {
  const Minute lo = std::max<Minute>(0, s.annotation.onset_t);
  const Minute hi = std::min<Minute>(static_cast<Minute>(d.frames.size()), s.annotation.end_t);
  for (Minute t = lo; t < hi; ++t) {
    auto& f = d.frames[static_cast<std::size_t>(t)];
    const auto off = s.offset(t);
    for (std::size_t k = 0; k < kNumKpis; ++k) f.values[k] += off[k];
    clamp_frame(f);
  }
  auto pos = std::upper_bound(d.episodes.begin(), d.episodes.end(), s.annotation.onset_t,
                              [](Minute t, const EpisodeAnnotation& e) { return t < e.onset_t; });
  d.episodes.insert(pos, s.annotation);
}

inline void check_times(const Dataset& d, Minute onset, Minute fail) {
  if (!(onset < fail)) throw std::invalid_argument("onset_t must precede fail_t");
  if (onset < 0 || fail >= static_cast<Minute>(d.frames.size()))
    throw std::invalid_argument("episode outside the series");
}
}  // namespace detail

inline FaultShape simple_drift_shape(const GenConfig& cfg, std::size_t intent, Minute onset, Minute fail) {
  require_default_intent(intent);
  FaultShape s;
  s.recovery = cfg.recovery;
  const Kpi app = kAppKpi[intent];
  s.components.push_back({app, cfg.kpis[idx(app)].fault_delta, onset, fail, EnvelopeShape::Linear});
  auto& a = s.annotation;
  a.kind = EpisodeKind::SimpleDrift;
  a.cause = intent;
  a.onset_t = onset;
  a.fail_t[intent] = fail;
  a.end_t = fail + cfg.recovery;
  return s;
}

inline FaultShape non_linear_shape(const GenConfig& cfg, std::size_t intent, Minute onset, Minute fail) {
  require_default_intent(intent);
  FaultShape s;
  s.recovery = cfg.recovery;
  for (Kpi r : kResourcePair[intent])
    s.components.push_back({r, cfg.kpis[idx(r)].fault_delta, onset, fail, EnvelopeShape::Quadratic});
  const Kpi app = kAppKpi[intent];
  s.components.push_back({app, cfg.kpis[idx(app)].fault_delta, onset, fail, EnvelopeShape::LateThird});
  auto& a = s.annotation;
  a.kind = EpisodeKind::NonLinear;
  a.cause = intent;
  a.onset_t = onset;
  a.fail_t[intent] = fail;
  a.end_t = fail + cfg.recovery;
  return s;
}

/// The cause degrades as in a non-linear failure; the victim's application
/// KPI ramps from onset+lag to fail+lag at an attenuated magnitude.
inline FaultShape co_drift_shape(const GenConfig& cfg, std::size_t cause, std::size_t victim, Minute onset,
                                 Minute fail_cause, Minute lag, double attenuation) {
  require_default_intent(victim);
  if (cause == victim) throw std::invalid_argument("co-drift cause must differ from victim");
  if (lag < 1) throw std::invalid_argument("victim lag must be positive");
  FaultShape s = non_linear_shape(cfg, cause, onset, fail_cause);
  const Kpi app = kAppKpi[victim];
  const Minute fail_victim = fail_cause + lag;
  s.components.push_back(
      {app, attenuation * cfg.kpis[idx(app)].fault_delta, onset + lag, fail_victim, EnvelopeShape::Linear});
  s.victim_lag = lag;
  s.victim_attenuation = attenuation;
  auto& a = s.annotation;
  a.kind = EpisodeKind::CoDrift;
  a.victim = victim;
  a.fail_t[victim] = fail_victim;
  a.end_t = fail_victim + cfg.recovery;
  return s;
}

inline FaultShape hard_negative_shape(const GenConfig& cfg, HardNegativeKind kind, std::size_t app_intent, Minute t,
                                      Minute duration, double fraction) {
  if (duration < 1) throw std::invalid_argument("spike duration must be positive");
  FaultShape s;
  s.recovery = cfg.recovery;
  auto add = [&](Kpi k) { s.components.push_back({k, fraction * cfg.kpis[idx(k)].fault_delta, t, t + duration, EnvelopeShape::Linear, true}); };
  if (kind == HardNegativeKind::ResourceSpike) {
    add(Kpi::CpuPct);
    add(Kpi::RamPct);
  } else {
    require_default_intent(app_intent);
    add(kAppKpi[app_intent]);
  }
  auto& a = s.annotation;
  a.kind = EpisodeKind::BenignNegative;
  a.onset_t = t;
  a.end_t = t + duration;
  return s;
}

inline FaultShape inject_simple_drift(Dataset& d, const GenConfig& cfg, std::size_t intent, Minute onset, Minute fail) {
  detail::check_times(d, onset, fail);
  auto s = simple_drift_shape(cfg, intent, onset, fail);
  detail::check_free(d, onset, s.annotation.end_t);
  detail::apply_shape(d, s);
  return s;
}

inline FaultShape inject_nonlinear(Dataset& d, const GenConfig& cfg, std::size_t intent, Minute onset, Minute fail) {
  detail::check_times(d, onset, fail);
  auto s = non_linear_shape(cfg, intent, onset, fail);
  detail::check_free(d, onset, s.annotation.end_t);
  detail::apply_shape(d, s);
  return s;
}

inline FaultShape inject_codrift(Dataset& d, const GenConfig& cfg, std::size_t cause, std::size_t victim, Minute onset,
                                 Minute fail_cause, Minute lag, double attenuation) {
  detail::check_times(d, onset, fail_cause + lag);
  auto s = co_drift_shape(cfg, cause, victim, onset, fail_cause, lag, attenuation);
  detail::check_free(d, onset, s.annotation.end_t);
  detail::apply_shape(d, s);
  return s;
}

inline FaultShape inject_hard_negative(Dataset& d, const GenConfig& cfg, HardNegativeKind kind, std::size_t app_intent,
                                       Minute t, Minute duration, double fraction) {
  detail::check_times(d, t, t + duration);
  auto s = hard_negative_shape(cfg, kind, app_intent, t, duration, fraction);
  detail::check_free(d, t, s.annotation.end_t);
  detail::apply_shape(d, s);
  return s;
}

struct GeneratedBenchmark {
  Dataset data;
  std::vector<FaultShape> shapes;  // noise-free description of every episode, by onset
};

/// Baseline plus failure episodes placed uniformly at random without
/// overlap (kinds drawn from the event mix) and interleaved hard negatives.
inline GeneratedBenchmark generate(const GenConfig& cfg) {
  cfg.validate();
  GeneratedBenchmark out;
  out.data.frames = gen_baseline(cfg);

  const Minute slot = cfg.slot_length();
  const auto n = static_cast<Minute>(cfg.episode_count);
  const Minute free = cfg.total_minutes - cfg.warmup - n * slot;
  if (free < 0)
    throw std::invalid_argument(fmt::format("cannot place {} episodes in {} minutes without overlap (need {} per episode)",
                                            cfg.episode_count, cfg.total_minutes, slot));

  // Uniform placement of n non-overlapping slots: sorted uniform offsets
  // into the free space, each shifted by the slots before it.
  RngStream place(cfg.seed, "episode-placement");
  std::vector<Minute> offsets(cfg.episode_count);
  for (auto& o : offsets) o = place.uniform_int(0, free);
  std::sort(offsets.begin(), offsets.end());

  RngStream draw(cfg.seed, "episode-parameters");
  const Minute lead = std::max(cfg.ramp_max, cfg.horizon_guard);
  for (std::size_t e = 0; e < cfg.episode_count; ++e) {
    const Minute slot_start = cfg.warmup + offsets[e] + static_cast<Minute>(e) * slot;
    const Minute fail = slot_start + lead;
    const Minute ramp = draw.uniform_int(cfg.ramp_min, cfg.ramp_max);
    const Minute onset = fail - ramp;
    const double u = draw.uniform();
    const auto intent = static_cast<std::size_t>(draw.uniform_int(0, 2));
    FaultShape s;
    if (u < cfg.mix_non_linear) {
      s = inject_nonlinear(out.data, cfg, intent, onset, fail);
    } else if (u < cfg.mix_non_linear + cfg.mix_co_drift) {
      const auto victim = (intent + 1 + static_cast<std::size_t>(draw.uniform_int(0, 1))) % 3;
      const Minute lag = draw.uniform_int(cfg.lag_min, cfg.lag_max);
      const double att = draw.uniform(cfg.attenuation_min, cfg.attenuation_max);
      s = inject_codrift(out.data, cfg, intent, victim, onset, fail, lag, att);
    } else {
      s = inject_simple_drift(out.data, cfg, intent, onset, fail);
    }
    out.shapes.push_back(s);
  }

  // Hard negatives: keep a margin around every failure episode including
  // its label window, so they stay unlabeled.
  const auto neg_count =
      static_cast<std::size_t>(std::llround(cfg.hard_negative_rate * static_cast<double>(cfg.total_minutes) / 10000.0));
  constexpr Minute kMargin = 30;
  std::vector<std::pair<Minute, Minute>> blocked;
  for (const auto& ep : out.data.episodes) {
    Minute first = ep.onset_t;
    for (const auto& [i, f] : ep.fail_t) first = std::min(first, f - cfg.horizon_guard);
    blocked.emplace_back(first - kMargin, ep.end_t + kMargin);
  }
  RngStream neg(cfg.seed, "hard-negatives");
  for (std::size_t k = 0; k < neg_count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const Minute dur = neg.uniform_int(cfg.spike_min, cfg.spike_max);
      const Minute t = neg.uniform_int(cfg.warmup, cfg.total_minutes - dur - kMargin);
      const bool clash = std::any_of(blocked.begin(), blocked.end(),
                                     [&](const auto& b) { return t < b.second && b.first < t + dur; });
      if (clash) continue;
      const auto kind = neg.uniform() < 0.5 ? HardNegativeKind::ResourceSpike : HardNegativeKind::AppTransient;
      const auto app = static_cast<std::size_t>(neg.uniform_int(0, 2));
      const double frac = neg.uniform(cfg.spike_fraction_min, cfg.spike_fraction_max);
      out.shapes.push_back(inject_hard_negative(out.data, cfg, kind, app, t, dur, frac));
      blocked.emplace_back(t - kMargin, t + dur + kMargin);
      placed = true;
    }
    if (!placed) throw std::invalid_argument("cannot place hard negatives without overlapping episodes");
  }
  std::sort(out.shapes.begin(), out.shapes.end(),
            [](const FaultShape& a, const FaultShape& b) { return a.annotation.onset_t < b.annotation.onset_t; });
  return out;
}

}  // namespace mild
