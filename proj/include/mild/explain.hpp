#pragma once

// Shapley attributions of one intent's risk output. Players are either the
// 8 KPI groups (raw value + rolling stats of one KPI) or the 40 individual
// features. v(S) evaluates the model with players in S taken from x and the
// rest from a background row.

#include <bit>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mild/baselines.hpp"
#include "mild/features.hpp"

namespace mild {

/// Scores a batch of raw rows; returns one scalar per row.
using BatchValueFn = std::function<std::vector<double>(const Tensor2&)>;

enum class ShapleyMode { ExactGrouped, SampledGrouped, SampledFeatures };

inline std::string_view to_string(ShapleyMode m) {
  switch (m) {
    case ShapleyMode::ExactGrouped: return "exact";
    case ShapleyMode::SampledGrouped: return "sampled-groups";
    case ShapleyMode::SampledFeatures: return "sampled";
  }
  return "?";
}

inline ShapleyMode shapley_mode_from(std::string_view s) {
  for (auto m : {ShapleyMode::ExactGrouped, ShapleyMode::SampledGrouped, ShapleyMode::SampledFeatures})
    if (to_string(m) == s) return m;
  throw std::invalid_argument(fmt::format("unknown explain mode '{}'", s));
}

struct Attribution {
  double base = 0;   // v(empty)
  double value = 0;  // v(all players) = f(x)
  std::vector<std::string> names;
  std::vector<double> contributions;

  /// Indices sorted by |contribution|, largest first.
  std::vector<std::size_t> ranking() const {
    std::vector<std::size_t> r(contributions.size());
    std::iota(r.begin(), r.end(), 0);
    std::stable_sort(r.begin(), r.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(contributions[a]) > std::abs(contributions[b]); });
    return r;
  }
  double efficiency_gap() const {
    return base + std::accumulate(contributions.begin(), contributions.end(), 0.0) - value;
  }
};

namespace detail {

inline void check_players(std::span<const double> x, std::span<const double> background,
                          const std::vector<std::vector<std::size_t>>& groups) {
  if (x.size() != background.size()) throw std::invalid_argument("shapley: background/x dimension mismatch");
  if (groups.empty()) throw std::invalid_argument("shapley: no players");
  for (const auto& g : groups)
    for (auto c : g)
      if (c >= x.size()) throw std::invalid_argument("shapley: player column out of range");
}

inline void put_player(std::span<double> row, std::span<const double> x, const std::vector<std::size_t>& cols) {
  for (auto c : cols) row[c] = x[c];
}

}  // namespace detail

/// Exact Shapley values over `groups` (at most 15 players): all 2^P
/// coalitions are scored in one batch, then
///   phi_j = sum_{S not containing j} |S|!(P-|S|-1)!/P! [v(S+j) - v(S)].
inline Attribution shapley_exact(const BatchValueFn& f, std::span<const double> x, std::span<const double> background,
                                 const std::vector<std::vector<std::size_t>>& groups) {
  detail::check_players(x, background, groups);
  const std::size_t P = groups.size();
  if (P > 15) throw std::invalid_argument("shapley: exact mode supports at most 15 players");
  const std::size_t N = std::size_t{1} << P;
  Tensor2 batch(N, x.size());
  for (std::size_t s = 0; s < N; ++s) {
    auto row = batch.row(s);
    std::copy(background.begin(), background.end(), row.begin());
    for (std::size_t j = 0; j < P; ++j)
      if (s >> j & 1) detail::put_player(row, x, groups[j]);
  }
  const std::vector<double> v = f(batch);
  if (v.size() != N) throw std::logic_error("shapley: value function returned wrong batch size");

  std::vector<double> weight(P);  // weight[k] = k!(P-k-1)!/P!
  for (std::size_t k = 0; k < P; ++k) {
    double w = 1.0 / static_cast<double>(P);
    for (std::size_t a = 1; a <= k; ++a) w *= static_cast<double>(a) / static_cast<double>(P - a);
    weight[k] = w;
  }
  Attribution out;
  out.base = v[0];
  out.value = v[N - 1];
  out.contributions.assign(P, 0.0);
  for (std::size_t s = 0; s < N; ++s) {
    const auto k = static_cast<std::size_t>(std::popcount(s));
    for (std::size_t j = 0; j < P; ++j)
      if (!(s >> j & 1)) out.contributions[j] += weight[k] * (v[s | (std::size_t{1} << j)] - v[s]);
  }
  return out;
}

/// Permutation-sampling estimate with `permutations` seeded orderings.
/// Each ordering telescopes from v(empty) to v(all), so efficiency is exact.
inline Attribution shapley_sampled(const BatchValueFn& f, std::span<const double> x, std::span<const double> background,
                                   const std::vector<std::vector<std::size_t>>& groups, std::size_t permutations,
                                   std::uint64_t seed) {
  detail::check_players(x, background, groups);
  if (permutations == 0) throw std::invalid_argument("shapley: need at least one permutation");
  const std::size_t P = groups.size();
  RngStream rng(seed, "shapley-permutations");
  std::vector<std::vector<std::size_t>> orders(permutations);
  Tensor2 batch(permutations * (P + 1), x.size());
  for (std::size_t m = 0; m < permutations; ++m) {
    auto& ord = orders[m];
    ord.resize(P);
    std::iota(ord.begin(), ord.end(), 0);
    rng.shuffle(ord);
    std::vector<double> cur(background.begin(), background.end());
    std::copy(cur.begin(), cur.end(), batch.row(m * (P + 1)).begin());
    for (std::size_t s = 0; s < P; ++s) {
      detail::put_player(cur, x, groups[ord[s]]);
      std::copy(cur.begin(), cur.end(), batch.row(m * (P + 1) + s + 1).begin());
    }
  }
  const std::vector<double> v = f(batch);
  if (v.size() != batch.rows()) throw std::logic_error("shapley: value function returned wrong batch size");

  Attribution out;
  out.base = v[0];
  out.value = v[P];
  out.contributions.assign(P, 0.0);
  for (std::size_t m = 0; m < permutations; ++m)
    for (std::size_t s = 0; s < P; ++s) {
      const std::size_t r = m * (P + 1) + s;
      out.contributions[orders[m][s]] += v[r + 1] - v[r];
    }
  for (double& c : out.contributions) c /= static_cast<double>(permutations);
  return out;
}

inline std::vector<std::vector<std::size_t>> singleton_players(std::size_t n) {
  std::vector<std::vector<std::size_t>> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = {i};
  return g;
}

struct ExplainOptions {
  ShapleyMode mode = ShapleyMode::ExactGrouped;
  std::size_t permutations = 200;
  std::uint64_t seed = 42;
};

/// Attribution of `intent`'s risk for the raw feature row `x`, against the
/// scorer's own background row (training mean).
inline Attribution explain_risk(const RiskScorer& scorer, std::size_t intent, std::span<const double> x,
                                const ExplainOptions& opt = {}) {
  const auto bg = scorer.background();
  const BatchValueFn f = [&](const Tensor2& rows) {
    const ScoreTrace s = scorer.score(rows);
    if (intent >= s.risk.cols()) throw std::invalid_argument("explain: intent out of range");
    std::vector<double> v(rows.rows());
    for (std::size_t r = 0; r < rows.rows(); ++r) v[r] = s.risk(r, intent);
    return v;
  };
  Attribution a;
  switch (opt.mode) {
    case ShapleyMode::ExactGrouped:
      a = shapley_exact(f, x, bg, FeatureSpec::kpi_groups());
      break;
    case ShapleyMode::SampledGrouped:
      a = shapley_sampled(f, x, bg, FeatureSpec::kpi_groups(), opt.permutations, opt.seed);
      break;
    case ShapleyMode::SampledFeatures:
      a = shapley_sampled(f, x, bg, singleton_players(x.size()), opt.permutations, opt.seed);
      break;
  }
  if (opt.mode == ShapleyMode::SampledFeatures) {
    a.names = FeatureSpec::names();
  } else {
    a.names.assign(kKpiNames.begin(), kKpiNames.end());
  }
  return a;
}

}  // namespace mild
