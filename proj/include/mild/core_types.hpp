#pragma once

// Shared domain vocabulary: intents, KPI frames, episode annotations,
// fixed-horizon label matrices and deterministic random streams.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "json.hpp"

namespace mild {

using json = nlohmann::json;

/// Integer minutes. Sub-minute timestamps are out of contract.
using Minute = std::int64_t;

/// Bad input data or model files (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace log {
inline bool& quiet() {
  static bool q = false;
  return q;
}
inline void warn(const std::string& msg) {
  if (!quiet()) std::cerr << "[mild] warning: " << msg << '\n';
}
inline void info(const std::string& msg) {
  if (!quiet()) std::cerr << "[mild] " << msg << '\n';
}
}  // namespace log

// ---------------------------------------------------------------------------
// KPIs

inline constexpr std::size_t kNumKpis = 8;

enum class Kpi : std::size_t {
  CpuPct = 0,
  RamPct,
  StoragePct,
  Snet,
  Sri,
  ApiLatency,
  TelemetryQueue,
  AnalyticsTput,
};

inline constexpr std::array<std::string_view, kNumKpis> kKpiNames = {
    "cpu_pct", "ram_pct",         "storage_pct",   "snet",
    "sri",     "api_latency",     "telemetry_queue", "analytics_tput"};

constexpr std::size_t idx(Kpi k) { return static_cast<std::size_t>(k); }

constexpr bool is_percentage(Kpi k) {
  return k == Kpi::CpuPct || k == Kpi::RamPct || k == Kpi::StoragePct;
}

using KpiVector = std::array<double, kNumKpis>;

struct KpiFrame {
  Minute t = 0;
  KpiVector values{};
};

/// Clamps percentages into [0,100] and everything else to >= 0.
inline void clamp_frame(KpiFrame& f) {
  for (std::size_t k = 0; k < kNumKpis; ++k) {
    double& v = f.values[k];
    if (!std::isfinite(v)) throw DataError("non-finite KPI value");
    v = is_percentage(static_cast<Kpi>(k)) ? std::clamp(v, 0.0, 100.0) : std::max(v, 0.0);
  }
}

// ---------------------------------------------------------------------------
// Intents

struct IntentId {
  std::size_t index = 0;
  std::string name;

  friend bool operator==(const IntentId& a, const IntentId& b) { return a.index == b.index; }
};

/// Dense, uniquely named intents; K >= 2.
class IntentSet {
 public:
  IntentSet() : IntentSet({"api", "telemetry", "analytics"}) {}

  explicit IntentSet(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() < 2) throw std::invalid_argument("need at least two intents");
    for (std::size_t i = 0; i < names_.size(); ++i)
      for (std::size_t j = i + 1; j < names_.size(); ++j)
        if (names_[i] == names_[j]) throw std::invalid_argument("duplicate intent name " + names_[i]);
  }

  std::size_t size() const { return names_.size(); }
  IntentId at(std::size_t i) const {
    if (i >= names_.size()) throw std::out_of_range("intent index");
    return {i, names_[i]};
  }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    throw DataError(fmt::format("unknown intent '{}'", name));
  }

 private:
  std::vector<std::string> names_;
};

/// Application KPI monitored by each default intent (api, telemetry, analytics).
inline constexpr std::array<Kpi, 3> kAppKpi = {Kpi::ApiLatency, Kpi::TelemetryQueue, Kpi::AnalyticsTput};

// ---------------------------------------------------------------------------
// Episodes

enum class EpisodeKind { SimpleDrift, NonLinear, CoDrift, BenignNegative };

inline std::string_view to_string(EpisodeKind k) {
  switch (k) {
    case EpisodeKind::SimpleDrift: return "simple_drift";
    case EpisodeKind::NonLinear: return "non_linear";
    case EpisodeKind::CoDrift: return "co_drift";
    case EpisodeKind::BenignNegative: return "benign_negative";
  }
  return "?";
}

inline EpisodeKind episode_kind_from(std::string_view s) {
  for (auto k : {EpisodeKind::SimpleDrift, EpisodeKind::NonLinear, EpisodeKind::CoDrift,
                 EpisodeKind::BenignNegative})
    if (to_string(k) == s) return k;
  throw DataError(fmt::format("unknown episode kind '{}'", s));
}

struct EpisodeAnnotation {
  EpisodeKind kind = EpisodeKind::SimpleDrift;
  std::optional<std::size_t> cause;
  std::optional<std::size_t> victim;
  Minute onset_t = 0;
  std::map<std::size_t, Minute> fail_t;  // per affected intent
  Minute end_t = 0;                      // KPI effects fully gone at this minute

  bool is_failure() const { return kind != EpisodeKind::BenignNegative; }

  Minute cause_fail() const { return fail_t.at(*cause); }

  Minute last_fail() const {
    Minute m = onset_t;
    for (const auto& [i, f] : fail_t) m = std::max(m, f);
    return m;
  }

  /// Throws std::invalid_argument when the annotation is internally inconsistent.
  void validate(std::size_t num_intents) const {
    auto check_intent = [&](std::size_t i) {
      if (i >= num_intents) throw std::invalid_argument(fmt::format("episode references unknown intent {}", i));
    };
    if (!is_failure()) {
      if (cause || victim || !fail_t.empty())
        throw std::invalid_argument("benign negative episodes carry no labels");
      return;
    }
    if (!cause) throw std::invalid_argument("failure episode without cause");
    check_intent(*cause);
    if (!fail_t.count(*cause)) throw std::invalid_argument("cause has no failure time");
    if (kind == EpisodeKind::CoDrift) {
      if (!victim) throw std::invalid_argument("co-drift without victim");
      check_intent(*victim);
      if (*victim == *cause) throw std::invalid_argument("co-drift cause equals victim");
      if (!fail_t.count(*victim)) throw std::invalid_argument("victim has no failure time");
      if (fail_t.size() != 2) throw std::invalid_argument("co-drift must affect exactly two intents");
    } else {
      if (victim) throw std::invalid_argument("only co-drift episodes have a victim");
      if (fail_t.size() != 1) throw std::invalid_argument("single-intent episode with several failures");
    }
    for (const auto& [i, f] : fail_t) {
      check_intent(i);
      if (!(onset_t < f)) throw std::invalid_argument("onset_t must precede fail_t");
    }
  }
};

inline json episode_to_json(const EpisodeAnnotation& e, const IntentSet& intents) {
  json j;
  j["kind"] = to_string(e.kind);
  j["cause"] = e.cause ? json(intents.name(*e.cause)) : json(nullptr);
  j["victim"] = e.victim ? json(intents.name(*e.victim)) : json(nullptr);
  j["onset_t"] = e.onset_t;
  json fm = json::object();
  for (const auto& [i, f] : e.fail_t) fm[intents.name(i)] = f;
  j["fail_t_map"] = fm;
  j["end_t"] = e.end_t;
  return j;
}

inline EpisodeAnnotation episode_from_json(const json& j, const IntentSet& intents) {
  EpisodeAnnotation e;
  try {
    e.kind = episode_kind_from(j.at("kind").get<std::string>());
    if (!j.at("cause").is_null()) e.cause = intents.index_of(j.at("cause").get<std::string>());
    if (!j.at("victim").is_null()) e.victim = intents.index_of(j.at("victim").get<std::string>());
    e.onset_t = j.at("onset_t").get<Minute>();
    for (const auto& [name, f] : j.at("fail_t_map").items()) e.fail_t[intents.index_of(name)] = f.get<Minute>();
    e.end_t = j.value("end_t", e.last_fail());
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed episode annotation: ") + ex.what());
  }
  try {
    e.validate(intents.size());
  } catch (const std::invalid_argument& ex) {
    throw DataError(ex.what());
  }
  return e;
}

// ---------------------------------------------------------------------------
// Label matrices

/// Dense T x K matrix of 0/1 labels.
class BinaryMatrix {
 public:
  BinaryMatrix() = default;
  BinaryMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::uint8_t& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  bool row_any(std::size_t r) const {
    for (std::size_t c = 0; c < cols_; ++c)
      if ((*this)(r, c)) return true;
    return false;
  }
  std::size_t col_count(std::size_t c) const {
    std::size_t n = 0;
    for (std::size_t r = 0; r < rows_; ++r) n += (*this)(r, c);
    return n;
  }

  friend bool operator==(const BinaryMatrix&, const BinaryMatrix&) = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<std::uint8_t> data_;
};

struct LabelMatrices {
  BinaryMatrix y_bin;
  BinaryMatrix y_cause;
};

/// y_bin[t][i] = 1 iff fail - H <= t < fail for some failure of intent i.
/// `fail_times[i]` lists every failure minute of intent i. Windows are
/// truncated at the series start.
inline BinaryMatrix make_bin_labels(const std::vector<std::vector<Minute>>& fail_times, Minute horizon,
                                    std::size_t length) {
  if (horizon < 1) throw std::invalid_argument("horizon must be positive");
  BinaryMatrix y(length, fail_times.size());
  const auto T = static_cast<Minute>(length);
  for (std::size_t i = 0; i < fail_times.size(); ++i) {
    for (Minute f : fail_times[i]) {
      if (f < 0 || f >= T) throw std::invalid_argument(fmt::format("failure time {} outside [0,{})", f, T));
      for (Minute t = std::max<Minute>(0, f - horizon); t < f; ++t) y(static_cast<std::size_t>(t), i) = 1;
    }
  }
  return y;
}

inline BinaryMatrix make_bin_labels(const std::vector<std::optional<Minute>>& fail_times, Minute horizon,
                                    std::size_t length) {
  std::vector<std::vector<Minute>> lists(fail_times.size());
  for (std::size_t i = 0; i < fail_times.size(); ++i)
    if (fail_times[i]) lists[i].push_back(*fail_times[i]);
  return make_bin_labels(lists, horizon, length);
}

inline BinaryMatrix make_bin_labels(const std::vector<EpisodeAnnotation>& episodes, std::size_t num_intents,
                                    Minute horizon, std::size_t length) {
  std::vector<std::vector<Minute>> lists(num_intents);
  for (const auto& e : episodes) {
    e.validate(num_intents);
    for (const auto& [i, f] : e.fail_t) lists[i].push_back(f);
  }
  return make_bin_labels(lists, horizon, length);
}

/// y_cause[t][i] = 1 iff i is the annotated cause of an episode whose
/// positive window contains t, and y_bin[t][i] = 1.
inline BinaryMatrix make_cause_labels(const BinaryMatrix& y_bin, const std::vector<EpisodeAnnotation>& episodes,
                                      Minute horizon) {
  BinaryMatrix y(y_bin.rows(), y_bin.cols());
  const auto T = static_cast<Minute>(y_bin.rows());
  for (const auto& e : episodes) {
    e.validate(y_bin.cols());
    if (!e.is_failure()) continue;
    const std::size_t c = *e.cause;
    const Minute f = e.cause_fail();
    for (Minute t = std::max<Minute>(0, f - horizon); t < std::min(f, T); ++t) {
      const auto r = static_cast<std::size_t>(t);
      y(r, c) = y_bin(r, c);
    }
  }
  return y;
}

inline LabelMatrices make_labels(const std::vector<EpisodeAnnotation>& episodes, std::size_t num_intents,
                                 Minute horizon, std::size_t length) {
  LabelMatrices m;
  m.y_bin = make_bin_labels(episodes, num_intents, horizon, length);
  m.y_cause = make_cause_labels(m.y_bin, episodes, horizon);
  return m;
}

/// Normalized gate target for one row: cause labels when present, otherwise
/// the binary labels as weak supervision; nullopt means abstain.
inline std::optional<std::vector<double>> gate_supervision(const BinaryMatrix& y_bin, const BinaryMatrix& y_cause,
                                                           std::size_t row) {
  const std::size_t K = y_bin.cols();
  auto normalized = [&](const BinaryMatrix& m) -> std::optional<std::vector<double>> {
    double s = 0;
    for (std::size_t i = 0; i < K; ++i) s += m(row, i);
    if (s == 0) return std::nullopt;
    std::vector<double> v(K);
    for (std::size_t i = 0; i < K; ++i) v[i] = m(row, i) / s;
    return v;
  };
  if (auto v = normalized(y_cause)) return v;
  return normalized(y_bin);
}

// ---------------------------------------------------------------------------
// Deterministic random streams

/// Seeded stream keyed by (seed, label). Uniform and normal draws are computed
/// here rather than through <random> distributions, whose output is
/// implementation-defined, so sequences match across platforms.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view label) : engine_(mix(seed, label)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("empty integer range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(engine_());
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t r;
    do r = engine_();
    while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do u1 = uniform();
    while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }
  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : label) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    std::uint64_t z = seed ^ h;  // splitmix64 finalizer
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Dataset and its on-disk form

struct Dataset {
  IntentSet intents;
  std::vector<KpiFrame> frames;
  std::vector<EpisodeAnnotation> episodes;

  std::size_t size() const { return frames.size(); }
  std::vector<EpisodeAnnotation> failures() const {
    std::vector<EpisodeAnnotation> out;
    for (const auto& e : episodes)
      if (e.is_failure()) out.push_back(e);
    return out;
  }
  LabelMatrices labels(Minute horizon) const { return make_labels(episodes, intents.size(), horizon, frames.size()); }
};

inline std::string kpi_csv_header() {
  std::string h = "t";
  for (auto n : kKpiNames) {
    h += ',';
    h += n;
  }
  return h;
}

inline void write_kpi_csv(std::ostream& os, const std::vector<KpiFrame>& frames) {
  os << kpi_csv_header() << '\n';
  for (const auto& f : frames) {
    os << f.t;
    for (double v : f.values) os << fmt::format(",{:.6f}", v);
    os << '\n';
  }
}

inline std::vector<KpiFrame> read_kpi_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty KPI CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kpi_csv_header()) throw DataError("unexpected KPI CSV header: " + line);
  std::vector<KpiFrame> frames;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    KpiFrame f;
    try {
      std::getline(ss, cell, ',');
      f.t = std::stoll(cell);
      for (std::size_t k = 0; k < kNumKpis; ++k) {
        if (!std::getline(ss, cell, ',')) throw DataError("short row");
        f.values[k] = std::stod(cell);
        if (!std::isfinite(f.values[k])) throw DataError("non-finite value");
      }
    } catch (const std::exception& ex) {
      throw DataError(fmt::format("bad KPI CSV row {}: {}", lineno, ex.what()));
    }
    frames.push_back(f);
  }
  return frames;
}

inline json episodes_to_json(const std::vector<EpisodeAnnotation>& eps, const IntentSet& intents) {
  json arr = json::array();
  for (const auto& e : eps) arr.push_back(episode_to_json(e, intents));
  return arr;
}

inline std::vector<EpisodeAnnotation> episodes_from_json(const json& j, const IntentSet& intents) {
  if (!j.is_array()) throw DataError("episode sidecar must be a JSON list");
  std::vector<EpisodeAnnotation> eps;
  for (const auto& e : j) eps.push_back(episode_from_json(e, intents));
  return eps;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& ex) {
    throw DataError(fmt::format("invalid JSON in {}: {}", path, ex.what()));
  }
}

/// Loads `kpis.csv` + `episodes.json` from a dataset directory.
inline Dataset load_dataset(const std::string& dir, IntentSet intents = {}) {
  Dataset d;
  d.intents = std::move(intents);
  std::ifstream csv(dir + "/kpis.csv");
  if (!csv) throw DataError("cannot open " + dir + "/kpis.csv");
  d.frames = read_kpi_csv(csv);
  d.episodes = episodes_from_json(read_json_file(dir + "/episodes.json"), d.intents);
  for (std::size_t r = 0; r < d.frames.size(); ++r)
    if (d.frames[r].t != static_cast<Minute>(r))
      throw DataError("dataset frames must be contiguous minutes starting at t=0");
  return d;
}

}  // namespace mild
