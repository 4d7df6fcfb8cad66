#pragma once

// Engineered per-minute features: the 8 base KPIs followed by trailing
// rolling mean/std blocks over 5 and 15 minutes (40 columns), plus the
// fold-local standardizer.

#include <array>
#include <deque>
#include <ostream>
#include <string>
#include <vector>

#include "mild/core_types.hpp"
#include "mild/numerics.hpp"

namespace mild {

using nn::Tensor2;

struct FeatureSpec {
  static constexpr std::array<std::size_t, 2> kWindows = {5, 15};
  static constexpr std::size_t kBlocks = 1 + 2 * kWindows.size();  // raw, (mean, std) per window
  static constexpr std::size_t kDim = kNumKpis * kBlocks;          // 40
  static constexpr std::size_t kLookback = 15;

  /// Column of block `block` for KPI `kpi`. Blocks: 0 raw, 1 mean5, 2 std5,
  /// 3 mean15, 4 std15.
  static constexpr std::size_t column(std::size_t block, std::size_t kpi) { return block * kNumKpis + kpi; }

  static std::vector<std::string> names() {
    static const std::array<const char*, kBlocks> suffix = {"", "_mean5", "_std5", "_mean15", "_std15"};
    std::vector<std::string> out;
    for (std::size_t b = 0; b < kBlocks; ++b)
      for (auto n : kKpiNames) out.push_back(std::string(n) + suffix[b]);
    return out;
  }

  /// The five columns derived from each base KPI, used as Shapley players.
  static std::vector<std::vector<std::size_t>> kpi_groups() {
    std::vector<std::vector<std::size_t>> g(kNumKpis);
    for (std::size_t k = 0; k < kNumKpis; ++k)
      for (std::size_t b = 0; b < kBlocks; ++b) g[k].push_back(column(b, k));
    return g;
  }
};

namespace detail {
/// Fills one feature row from the trailing window ending at `end` (exclusive).
template <typename Get>
void feature_row(std::span<double> out, std::size_t end, std::size_t available, Get&& value_at) {
  for (std::size_t k = 0; k < kNumKpis; ++k) out[FeatureSpec::column(0, k)] = value_at(end - 1, k);
  for (std::size_t w = 0; w < FeatureSpec::kWindows.size(); ++w) {
    const std::size_t len = std::min(FeatureSpec::kWindows[w], available);
    for (std::size_t k = 0; k < kNumKpis; ++k) {
      double mean = 0;
      for (std::size_t s = end - len; s < end; ++s) mean += value_at(s, k);
      mean /= static_cast<double>(len);
      double var = 0;
      for (std::size_t s = end - len; s < end; ++s) {
        const double d = value_at(s, k) - mean;
        var += d * d;
      }
      var /= static_cast<double>(len);
      out[FeatureSpec::column(1 + 2 * w, k)] = mean;
      out[FeatureSpec::column(2 + 2 * w, k)] = std::sqrt(var);
    }
  }
}
}  // namespace detail

/// T x 40 feature matrix. Rolling statistics use trailing windows that
/// include t and shrink at the series start; std is the population std.
inline Tensor2 featurize(const std::vector<KpiFrame>& frames) {
  if (frames.empty()) throw std::invalid_argument("featurize: empty input");
  Tensor2 X(frames.size(), FeatureSpec::kDim);
  auto get = [&](std::size_t s, std::size_t k) { return frames[s].values[k]; };
  for (std::size_t t = 0; t < frames.size(); ++t) detail::feature_row(X.row(t), t + 1, t + 1, get);
  return X;
}

/// Incremental featurizer for streaming; produces the same rows as
/// featurize() over a contiguous stream.
class OnlineFeaturizer {
 public:
  std::vector<double> push(const KpiFrame& f) {
    window_.push_back(f.values);
    if (window_.size() > FeatureSpec::kLookback) window_.pop_front();
    std::vector<double> row(FeatureSpec::kDim);
    auto get = [&](std::size_t s, std::size_t k) { return window_[s][k]; };
    detail::feature_row(row, window_.size(), window_.size(), get);
    return row;
  }
  void reset() { window_.clear(); }

 private:
  std::deque<KpiVector> window_;
};

/// Per-column (x - mean) / max(std, 1e-8), fitted on training rows only.
struct Standardizer {
  static constexpr double kStdFloor = 1e-8;
  std::vector<double> mean, stddev;

  static Standardizer fit(const Tensor2& X, std::size_t begin, std::size_t end) {
    if (begin >= end || end > X.rows()) throw std::invalid_argument("Standardizer::fit: empty row range");
    Standardizer s;
    const std::size_t D = X.cols();
    const double n = static_cast<double>(end - begin);
    s.mean.assign(D, 0.0);
    s.stddev.assign(D, 0.0);
    for (std::size_t r = begin; r < end; ++r)
      for (std::size_t c = 0; c < D; ++c) s.mean[c] += X(r, c);
    for (double& m : s.mean) m /= n;
    for (std::size_t r = begin; r < end; ++r)
      for (std::size_t c = 0; c < D; ++c) {
        const double d = X(r, c) - s.mean[c];
        s.stddev[c] += d * d;
      }
    for (double& v : s.stddev) v = std::sqrt(v / n);
    return s;
  }
  static Standardizer fit(const Tensor2& X) { return fit(X, 0, X.rows()); }

  std::size_t dim() const { return mean.size(); }

  void apply_row(std::span<const double> in, std::span<double> out) const {
    require_dim(in.size());
    for (std::size_t c = 0; c < in.size(); ++c) out[c] = (in[c] - mean[c]) / std::max(stddev[c], kStdFloor);
  }

  Tensor2 apply(const Tensor2& X) const {
    require_dim(X.cols());
    Tensor2 out(X.rows(), X.cols());
    for (std::size_t r = 0; r < X.rows(); ++r) apply_row(X.row(r), out.row(r));
    return out;
  }

  /// Standardizes rows [begin, end) of X.
  Tensor2 apply(const Tensor2& X, std::size_t begin, std::size_t end) const {
    require_dim(X.cols());
    Tensor2 out(end - begin, X.cols());
    for (std::size_t r = begin; r < end; ++r) apply_row(X.row(r), out.row(r - begin));
    return out;
  }

  json to_json() const { return {{"mean", mean}, {"std", stddev}}; }
  static Standardizer from_json(const json& j) {
    Standardizer s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stddev = j.at("std").get<std::vector<double>>();
    if (s.mean.size() != s.stddev.size()) throw DataError("standardizer mean/std length mismatch");
    return s;
  }

 private:
  void require_dim(std::size_t d) const {
    if (d != mean.size()) throw std::invalid_argument("Standardizer: dimension mismatch");
  }
};

inline void write_feature_csv(std::ostream& os, const Tensor2& X, const std::vector<KpiFrame>& frames) {
  os << 't';
  for (const auto& n : FeatureSpec::names()) os << ',' << n;
  os << '\n';
  for (std::size_t r = 0; r < X.rows(); ++r) {
    os << frames.at(r).t;
    for (double v : X.row(r)) os << fmt::format(",{:.6f}", v);
    os << '\n';
  }
}

}  // namespace mild
