#pragma once

// Risk scorers: the MILD model and the comparison methods (WKPI-Tuned,
// Dist-Target, LR-OvR, MLP). Every scorer maps raw feature rows to per-intent
// scores in [0,1]; only MILD also emits a gate distribution.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mild/features.hpp"
#include "mild/mild_model.hpp"
#include "mild/teacher.hpp"
#include "mild/training.hpp"

namespace mild {

enum class Method { Mild, LrOvr, Mlp, Wkpi, DistTarget };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Mild: return "mild";
    case Method::LrOvr: return "lr";
    case Method::Mlp: return "mlp";
    case Method::Wkpi: return "wkpi";
    case Method::DistTarget: return "dist";
  }
  return "?";
}

inline Method method_from(std::string_view s) {
  for (auto m : {Method::Mild, Method::LrOvr, Method::Mlp, Method::Wkpi, Method::DistTarget})
    if (to_string(m) == s) return m;
  throw std::invalid_argument(fmt::format("unknown method '{}'", s));
}

struct RowRange {
  std::size_t begin = 0, end = 0;
  std::size_t size() const { return end - begin; }
};

struct ScoreTrace {
  Tensor2 risk;                 // rows x K
  std::optional<Tensor2> gate;  // rows x K (MILD only)
};

class RiskScorer {
 public:
  virtual ~RiskScorer() = default;
  virtual std::string method() const = 0;
  /// Scores rows [rows.begin, rows.end) of the raw (unstandardized) feature matrix.
  virtual ScoreTrace score(const Tensor2& raw_features, RowRange rows) const = 0;
  virtual json to_json() const = 0;
  /// Raw feature row that represents "typical" input (attribution baseline).
  virtual std::vector<double> background() const = 0;

  ScoreTrace score(const Tensor2& raw_features) const { return score(raw_features, {0, raw_features.rows()}); }
};

// ---------------------------------------------------------------------------

class MildScorer final : public RiskScorer {
 public:
  MildScorer(Standardizer s, TeacherModel t, MildNet n) : std_(std::move(s)), teacher_(std::move(t)), net_(std::move(n)) {}

  std::string method() const override { return "mild"; }
  std::vector<double> background() const override { return std_.mean; }
  ScoreTrace score(const Tensor2& raw, RowRange rows) const override {
    const Tensor2 X = std_.apply(raw, rows.begin, rows.end);
    auto pr = net_.predict(X, teacher_.distribution(X));
    return {std::move(pr.risk), std::move(pr.gate)};
  }
  json to_json() const override {
    json j = net_.to_json();
    j["standardizer"] = std_.to_json();
    j["teacher"] = teacher_.to_json();
    return j;
  }
  static std::unique_ptr<MildScorer> from_json(const json& j) {
    return std::make_unique<MildScorer>(Standardizer::from_json(j.at("standardizer")),
                                        TeacherModel::from_json(j.at("teacher")), MildNet::from_json(j));
  }

  const Standardizer& standardizer() const { return std_; }
  const TeacherModel& teacher() const { return teacher_; }
  const MildNet& net() const { return net_; }

 private:
  Standardizer std_;
  TeacherModel teacher_;
  MildNet net_;
};

/// Per-intent one-vs-rest logistic regression (the teacher estimator).
class LrOvrScorer final : public RiskScorer {
 public:
  LrOvrScorer(Standardizer s, TeacherModel t) : std_(std::move(s)), lr_(std::move(t)) {}
  std::string method() const override { return "lr"; }
  std::vector<double> background() const override { return std_.mean; }
  ScoreTrace score(const Tensor2& raw, RowRange rows) const override {
    return {lr_.probabilities(std_.apply(raw, rows.begin, rows.end)), std::nullopt};
  }
  json to_json() const override { return {{"standardizer", std_.to_json()}, {"teacher", lr_.to_json()}}; }
  static std::unique_ptr<LrOvrScorer> from_json(const json& j) {
    return std::make_unique<LrOvrScorer>(Standardizer::from_json(j.at("standardizer")),
                                         TeacherModel::from_json(j.at("teacher")));
  }

 private:
  Standardizer std_;
  TeacherModel lr_;
};

/// Weighted-KPI score: sigmoid of the L1-normalised logistic-regression
/// coefficients applied to the standardized features, bias dropped.
class WkpiScorer final : public RiskScorer {
 public:
  WkpiScorer(Standardizer s, Tensor2 weights) : std_(std::move(s)), w_(std::move(weights)) {}

  static std::unique_ptr<WkpiScorer> from_teacher(Standardizer s, const TeacherModel& t) {
    Tensor2 w = t.weights;
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double l1 = 0;
      for (double v : w.row(i)) l1 += std::abs(v);
      if (l1 > 0)
        for (double& v : w.row(i)) v /= l1;
    }
    return std::make_unique<WkpiScorer>(std::move(s), std::move(w));
  }

  /// Score for one standardized row.
  static std::vector<double> score_row(const Tensor2& weights, std::span<const double> x_std) {
    std::vector<double> s(weights.rows());
    for (std::size_t i = 0; i < weights.rows(); ++i) {
      double z = 0;
      for (std::size_t c = 0; c < x_std.size(); ++c) z += weights(i, c) * x_std[c];
      s[i] = nn::sigmoid(z);
    }
    return s;
  }

  std::string method() const override { return "wkpi"; }
  std::vector<double> background() const override { return std_.mean; }
  ScoreTrace score(const Tensor2& raw, RowRange rows) const override {
    const Tensor2 X = std_.apply(raw, rows.begin, rows.end);
    Tensor2 S(X.rows(), w_.rows());
    for (std::size_t r = 0; r < X.rows(); ++r) {
      const auto s = score_row(w_, X.row(r));
      std::copy(s.begin(), s.end(), S.row(r).begin());
    }
    return {std::move(S), std::nullopt};
  }
  json to_json() const override {
    return {{"standardizer", std_.to_json()}, {"rows", w_.rows()}, {"cols", w_.cols()}, {"weights", w_.data()}};
  }
  static std::unique_ptr<WkpiScorer> from_json(const json& j) {
    return std::make_unique<WkpiScorer>(
        Standardizer::from_json(j.at("standardizer")),
        Tensor2(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(), j.at("weights").get<std::vector<double>>()));
  }
  const Tensor2& weights() const { return w_; }

 private:
  Standardizer std_;
  Tensor2 w_;
};

/// KPIs relevant to each default intent for the target-distance score.
inline std::vector<std::vector<Kpi>> default_relevant_kpis() {
  return {{Kpi::ApiLatency, Kpi::CpuPct, Kpi::Snet, Kpi::Sri},
          {Kpi::TelemetryQueue, Kpi::RamPct, Kpi::Snet},
          {Kpi::AnalyticsTput, Kpi::CpuPct, Kpi::RamPct}};
}

/// Target-distance drift score over raw base KPIs:
///   min(1, ||(k - target) / tol||_2 / sqrt(#relevant KPIs)).
class DistTargetScorer final : public RiskScorer {
 public:
  static constexpr double kDefaultTolScale = 3.0;

  DistTargetScorer(KpiVector target, KpiVector tolerance, std::vector<std::vector<Kpi>> relevant)
      : target_(target), tol_(tolerance), relevant_(std::move(relevant)) {}

  /// Healthy target = mean over rows where no intent is labelled positive;
  /// tolerance = tol_scale x healthy std.
  static std::unique_ptr<DistTargetScorer> fit(const Tensor2& raw, const BinaryMatrix& y_bin, RowRange rows,
                                               double tol_scale = kDefaultTolScale) {
    KpiVector mean{}, var{}, tol{};
    std::size_t n = 0;
    for (std::size_t r = rows.begin; r < rows.end; ++r) {
      if (y_bin.row_any(r)) continue;
      ++n;
      for (std::size_t k = 0; k < kNumKpis; ++k) mean[k] += raw(r, FeatureSpec::column(0, k));
    }
    if (n == 0) throw DataError("dist-target: no healthy training rows");
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = rows.begin; r < rows.end; ++r) {
      if (y_bin.row_any(r)) continue;
      for (std::size_t k = 0; k < kNumKpis; ++k) {
        const double d = raw(r, FeatureSpec::column(0, k)) - mean[k];
        var[k] += d * d;
      }
    }
    for (std::size_t k = 0; k < kNumKpis; ++k)
      tol[k] = tol_scale * std::max(std::sqrt(var[k] / static_cast<double>(n)), 1e-8);
    return std::make_unique<DistTargetScorer>(mean, tol, default_relevant_kpis());
  }

  std::vector<double> score_kpis(const KpiVector& k) const {
    std::vector<double> s(relevant_.size());
    for (std::size_t i = 0; i < relevant_.size(); ++i) {
      double ss = 0;
      for (Kpi kp : relevant_[i]) {
        const double z = (k[idx(kp)] - target_[idx(kp)]) / tol_[idx(kp)];
        ss += z * z;
      }
      s[i] = std::min(1.0, std::sqrt(ss) / std::sqrt(static_cast<double>(relevant_[i].size())));
    }
    return s;
  }

  std::string method() const override { return "dist"; }
  /// Only the raw-KPI block is read; the target fills it and rolling stats
  /// take the values a constant healthy series would have.
  std::vector<double> background() const override {
    std::vector<double> b(FeatureSpec::kDim, 0.0);
    for (std::size_t k = 0; k < kNumKpis; ++k) {
      b[FeatureSpec::column(0, k)] = target_[k];
      b[FeatureSpec::column(1, k)] = target_[k];
      b[FeatureSpec::column(3, k)] = target_[k];
    }
    return b;
  }
  ScoreTrace score(const Tensor2& raw, RowRange rows) const override {
    Tensor2 S(rows.size(), relevant_.size());
    for (std::size_t r = rows.begin; r < rows.end; ++r) {
      KpiVector k;
      for (std::size_t j = 0; j < kNumKpis; ++j) k[j] = raw(r, FeatureSpec::column(0, j));
      const auto s = score_kpis(k);
      std::copy(s.begin(), s.end(), S.row(r - rows.begin).begin());
    }
    return {std::move(S), std::nullopt};
  }
  json to_json() const override {
    json rel = json::array();
    for (const auto& set : relevant_) {
      json names = json::array();
      for (Kpi k : set) names.push_back(kKpiNames[idx(k)]);
      rel.push_back(names);
    }
    return {{"target", target_}, {"tolerance", tol_}, {"relevant", rel}};
  }
  static std::unique_ptr<DistTargetScorer> from_json(const json& j) {
    std::vector<std::vector<Kpi>> rel;
    for (const auto& set : j.at("relevant")) {
      rel.emplace_back();
      for (const auto& n : set) {
        const auto s = n.get<std::string>();
        auto it = std::find(kKpiNames.begin(), kKpiNames.end(), s);
        if (it == kKpiNames.end()) throw DataError("unknown KPI " + s);
        rel.back().push_back(static_cast<Kpi>(it - kKpiNames.begin()));
      }
    }
    return std::make_unique<DistTargetScorer>(j.at("target").get<KpiVector>(), j.at("tolerance").get<KpiVector>(), rel);
  }

 private:
  KpiVector target_, tol_;
  std::vector<std::vector<Kpi>> relevant_;
};

/// Shared encoder (same widths as MILD) with one sigmoid head per intent; no
/// gate, no teacher. Trained on the focal loss alone.
class MlpNet {
 public:
  MlpNet() = default;
  MlpNet(const MildArch& arch, std::uint64_t seed, LossConfig loss = {}) : arch_(arch), loss_(loss) {
    RngStream rng(seed, "mlp-init");
    auto layer = [&](const std::string& name, std::size_t in, std::size_t out) {
      params_.add(name + ".W", in, out, &rng);
      params_.add(name + ".b", 1, out, nullptr, true);
    };
    layer("enc1", arch.input_dim, arch.encoder_hidden);
    layer("enc2", arch.encoder_hidden, arch.encoder_out);
    for (std::size_t i = 0; i < arch.intents; ++i) layer(fmt::format("head{}", i), arch.encoder_out, 1);
  }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const MildArch& arch() const { return arch_; }

  std::vector<Var> forward(Tape& tape, Var x, bool trainable = true) {
    std::size_t next = 0;
    auto p = [&]() {
      const std::size_t i = next++;
      return trainable ? tape.param(params_, i) : tape.input(params_[i].value);
    };
    auto dense = [&](Var in) {
      const Var W = p();
      const Var b = p();
      return tape.affine(in, W, b);
    };
    const Var h = tape.relu(dense(tape.relu(dense(x))));
    std::vector<Var> risk;
    for (std::size_t i = 0; i < arch_.intents; ++i) risk.push_back(tape.sigmoid(dense(h)));
    return risk;
  }

  Var loss(Tape& tape, const TrainingSet& b) {
    const auto risk = forward(tape, tape.input(b.X));
    std::vector<std::pair<double, Var>> terms;
    for (std::size_t i = 0; i < arch_.intents; ++i)
      terms.emplace_back(1.0, tape.focal(risk[i], b.label_column(i), loss_.focal_gamma, b.w_pos.at(i)));
    return tape.weighted_sum(terms);
  }

  Tensor2 predict(const Tensor2& X_std) const {
    Tape tape;
    auto& self = const_cast<MlpNet&>(*this);  // constants only
    const auto risk = self.forward(tape, tape.input(X_std), false);
    Tensor2 P(X_std.rows(), arch_.intents);
    for (std::size_t i = 0; i < arch_.intents; ++i)
      for (std::size_t n = 0; n < X_std.rows(); ++n) P(n, i) = tape.value(risk[i])(n, 0);
    return P;
  }

  json to_json() const { return {{"arch", arch_.to_json()}, {"focal_gamma", loss_.focal_gamma}, {"parameters", params_.to_json()}}; }
  static MlpNet from_json(const json& j) {
    MlpNet n;
    n.arch_ = MildArch::from_json(j.at("arch"));
    n.loss_.focal_gamma = j.at("focal_gamma");
    n.params_ = nn::ParamStore::from_json(j.at("parameters"));
    return n;
  }

 private:
  MildArch arch_;
  LossConfig loss_;
  nn::ParamStore params_;
};

class MlpScorer final : public RiskScorer {
 public:
  MlpScorer(Standardizer s, MlpNet n) : std_(std::move(s)), net_(std::move(n)) {}
  std::string method() const override { return "mlp"; }
  std::vector<double> background() const override { return std_.mean; }
  ScoreTrace score(const Tensor2& raw, RowRange rows) const override {
    return {net_.predict(std_.apply(raw, rows.begin, rows.end)), std::nullopt};
  }
  json to_json() const override {
    json j = net_.to_json();
    j["standardizer"] = std_.to_json();
    return j;
  }
  static std::unique_ptr<MlpScorer> from_json(const json& j) {
    return std::make_unique<MlpScorer>(Standardizer::from_json(j.at("standardizer")), MlpNet::from_json(j));
  }

 private:
  Standardizer std_;
  MlpNet net_;
};

inline std::unique_ptr<RiskScorer> scorer_from_json(Method m, const json& j) {
  try {
    switch (m) {
      case Method::Mild: return MildScorer::from_json(j);
      case Method::LrOvr: return LrOvrScorer::from_json(j);
      case Method::Mlp: return MlpScorer::from_json(j);
      case Method::Wkpi: return WkpiScorer::from_json(j);
      case Method::DistTarget: return DistTargetScorer::from_json(j);
    }
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed model bundle: ") + ex.what());
  }
  throw DataError("unknown method");
}

// ---------------------------------------------------------------------------
// Fitting

struct FitConfig {
  LossConfig loss{};
  TrainConfig train{};
  TeacherConfig teacher{};
  MildArch arch{};
  double dist_tol_scale = DistTargetScorer::kDefaultTolScale;
};

struct FitResult {
  std::unique_ptr<RiskScorer> scorer;
  RowRange fit_rows;        // rows used to fit standardizer, teacher and weights
  RowRange validation_rows; // chronological tail: early stopping and threshold tuning
  std::optional<TrainHistory> history;
};

/// Chronological split of [begin, end): the last `fraction` is validation.
inline std::pair<RowRange, RowRange> chronological_split(RowRange rows, double fraction) {
  const auto val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
  const std::size_t cut = rows.end - std::min(val, rows.size());
  return {{rows.begin, cut}, {cut, rows.end}};
}

/// Fits `method` on training rows `rows` of the raw feature matrix.
inline FitResult fit_method(Method method, const Tensor2& raw, const LabelMatrices& labels, RowRange rows,
                            const FitConfig& cfg) {
  FitResult out;
  std::tie(out.fit_rows, out.validation_rows) = chronological_split(rows, cfg.train.validation_fraction);
  const RowRange fr = out.fit_rows;
  if (fr.size() == 0) throw DataError("empty training split");

  if (method == Method::DistTarget) {
    out.scorer = DistTargetScorer::fit(raw, labels.y_bin, fr, cfg.dist_tol_scale);
    return out;
  }

  Standardizer st = Standardizer::fit(raw, fr.begin, fr.end);
  const Tensor2 X_fit = st.apply(raw, fr.begin, fr.end);
  BinaryMatrix y_fit(fr.size(), labels.y_bin.cols());
  for (std::size_t r = 0; r < fr.size(); ++r)
    for (std::size_t i = 0; i < y_fit.cols(); ++i) y_fit(r, i) = labels.y_bin(fr.begin + r, i);
  TeacherConfig tc = cfg.teacher;
  tc.temperature = cfg.loss.teacher_temperature;
  TeacherModel teacher = train_teacher(X_fit, y_fit, tc);

  switch (method) {
    case Method::LrOvr:
      out.scorer = std::make_unique<LrOvrScorer>(std::move(st), std::move(teacher));
      return out;
    case Method::Wkpi:
      out.scorer = WkpiScorer::from_teacher(std::move(st), teacher);
      return out;
    default: break;
  }

  const Tensor2 X_all = st.apply(raw, rows.begin, rows.end);
  const auto w_pos = focal_balance_weights(labels.y_bin, fr.begin, fr.end);
  LabelMatrices local;
  local.y_bin = BinaryMatrix(rows.size(), labels.y_bin.cols());
  local.y_cause = BinaryMatrix(rows.size(), labels.y_bin.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t i = 0; i < labels.y_bin.cols(); ++i) {
      local.y_bin(r, i) = labels.y_bin(rows.begin + r, i);
      local.y_cause(r, i) = labels.y_cause(rows.begin + r, i);
    }
  const TrainingSet train_set = make_training_set(X_all, local, teacher, 0, fr.size(), w_pos);
  const TrainingSet val_set = make_training_set(X_all, local, teacher, fr.size(), rows.size(), w_pos);

  MildArch arch = cfg.arch;
  arch.intents = labels.y_bin.cols();
  if (method == Method::Mild) {
    MildNet net(arch, cfg.train.seed);
    net.set_loss_config(cfg.loss);
    out.history = train_mild(net, train_set, val_set, cfg.train);
    out.scorer = std::make_unique<MildScorer>(std::move(st), std::move(teacher), std::move(net));
  } else {
    MlpNet net(arch, cfg.train.seed, cfg.loss);
    out.history = train_network(net, train_set, val_set, cfg.train);
    out.scorer = std::make_unique<MlpScorer>(std::move(st), std::move(net));
  }
  return out;
}

}  // namespace mild
