#pragma once

// Teacher-augmented mixture of experts: shared encoder, gate over intents
// conditioned on the teacher distribution, and one expert + sigmoid head per
// intent whose input is scaled by that intent's gate weight. Trained with a
// hybrid focal/distillation/gate objective.

#include <optional>
#include <string>
#include <vector>

#include "mild/features.hpp"
#include "mild/numerics.hpp"
#include "mild/teacher.hpp"
#include "mild/training.hpp"

namespace mild {

using nn::Tape;
using nn::Tensor2;
using nn::Var;

struct MildArch {
  std::size_t input_dim = FeatureSpec::kDim;
  std::size_t encoder_hidden = 64;
  std::size_t encoder_out = 32;
  std::size_t expert_hidden = 16;
  std::size_t intents = 3;

  json to_json() const {
    return {{"input_dim", input_dim}, {"encoder_hidden", encoder_hidden}, {"encoder_out", encoder_out},
            {"expert_hidden", expert_hidden}, {"intents", intents}};
  }
  static MildArch from_json(const json& j) {
    MildArch a;
    a.input_dim = j.at("input_dim");
    a.encoder_hidden = j.at("encoder_hidden");
    a.encoder_out = j.at("encoder_out");
    a.expert_hidden = j.at("expert_hidden");
    a.intents = j.at("intents");
    return a;
  }
};

struct LossConfig {
  double alpha = 0.9;  // focal vs distillation mix per head
  double focal_gamma = 2.0;
  double w_c = 0.7;
  double w_T = 0.7;
  double lambda_s = 0.005;
  double lambda_gate = 1.0;
  double lambda_decorr = 0.0;
  double teacher_temperature = 2.0;

  void validate() const {
    if (alpha < 0 || alpha > 1) throw std::invalid_argument("alpha must lie in [0,1]");
    for (double w : {focal_gamma, w_c, w_T, lambda_s, lambda_gate, lambda_decorr})
      if (w < 0) throw std::invalid_argument("loss weights must be non-negative");
    if (!(teacher_temperature > 0)) throw std::invalid_argument("teacher temperature must be positive");
  }

  json to_json() const {
    return {{"alpha", alpha},           {"focal_gamma", focal_gamma},     {"w_c", w_c},
            {"w_T", w_T},               {"lambda_s", lambda_s},           {"lambda_gate", lambda_gate},
            {"lambda_decorr", lambda_decorr}, {"teacher_temperature", teacher_temperature}};
  }
  static LossConfig from_json(const json& j) {
    LossConfig c;
    c.alpha = j.at("alpha");
    c.focal_gamma = j.at("focal_gamma");
    c.w_c = j.at("w_c");
    c.w_T = j.at("w_T");
    c.lambda_s = j.at("lambda_s");
    c.lambda_gate = j.at("lambda_gate");
    c.lambda_decorr = j.at("lambda_decorr");
    c.teacher_temperature = j.at("teacher_temperature");
    return c;
  }
};

// ---------------------------------------------------------------------------
// Loss primitives as plain functions (same tape code used in training)

inline double focal_loss(std::span<const double> p, std::span<const double> y, double gamma, double w_pos) {
  Tape tape;
  const Var pv = tape.input(Tensor2(p.size(), 1, std::vector<double>(p.begin(), p.end())));
  return tape.scalar(tape.focal(pv, y, gamma, w_pos));
}

inline double distill_loss(std::span<const double> p, std::span<const double> p_teacher) {
  Tape tape;
  const Var pv = tape.input(Tensor2(p.size(), 1, std::vector<double>(p.begin(), p.end())));
  return tape.scalar(tape.soft_bce(pv, p_teacher));
}

/// Single-row gate loss; `target` absent means abstain (supervision term skipped).
inline double gate_loss(std::span<const double> g, const std::optional<std::vector<double>>& target,
                        std::span<const double> d_teacher, double lambda_s, double w_c, double w_T) {
  double loss = 0;
  if (target) loss += w_c * nn::kl_divergence(*target, g);
  loss += w_T * nn::kl_divergence(d_teacher, g);
  for (double v : g) loss += lambda_s * v * (1.0 - v);
  return loss;
}

/// Cross-covariance penalty between representation matrices (each n x m).
inline double decorr_loss(const std::vector<Tensor2>& reps) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& r : reps) vars.push_back(tape.input(r));
  return tape.scalar(tape.decorrelation(vars));
}

// ---------------------------------------------------------------------------
// Network

struct MildOutputs {
  Var gate;                 // n x K
  std::vector<Var> risk;    // K of n x 1
  std::vector<Var> expert;  // K of n x expert_hidden
};

class MildNet {
 public:
  MildNet() = default;
  MildNet(const MildArch& arch, std::uint64_t seed) : arch_(arch) {
    RngStream rng(seed, "mild-init");
    auto layer = [&](const std::string& name, std::size_t in, std::size_t out) {
      params_.add(name + ".W", in, out, &rng);
      params_.add(name + ".b", 1, out, nullptr, true);
    };
    layer("enc1", arch.input_dim, arch.encoder_hidden);
    layer("enc2", arch.encoder_hidden, arch.encoder_out);
    layer("gate", arch.encoder_out + arch.intents, arch.intents);
    for (std::size_t i = 0; i < arch.intents; ++i) {
      layer(fmt::format("expert{}", i), arch.encoder_out, arch.expert_hidden);
      layer(fmt::format("head{}", i), arch.expert_hidden, 1);
    }
  }

  const MildArch& arch() const { return arch_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  void set_loss_config(const LossConfig& c) { loss_cfg_ = c; }
  const LossConfig& loss_config() const { return loss_cfg_; }

  /// Builds the forward graph. With `trainable`, parameters are bound so
  /// backward() fills their gradients; otherwise they enter as constants.
  MildOutputs forward(Tape& tape, Var x, Var d_teacher, bool trainable = true) {
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
    const Var h1 = tape.relu(dense(x));
    const Var h = tape.relu(dense(h1));
    MildOutputs out;
    out.gate = tape.softmax_rows(dense(tape.concat_cols(h, d_teacher)));
    for (std::size_t i = 0; i < arch_.intents; ++i) {
      const Var e = tape.relu(dense(h));
      const Var gated = tape.scale_rows(tape.column(out.gate, i), e);
      out.expert.push_back(e);
      out.risk.push_back(tape.sigmoid(dense(gated)));
    }
    return out;
  }

  /// Hybrid objective over a batch:
  ///   sum_i [a focal_i + (1-a) distill_i] + l_gate gate + l_decorr decorr.
  Var loss(Tape& tape, const TrainingSet& b) {
    const LossConfig& c = loss_cfg_;
    const Var x = tape.input(b.X);
    const Var d = tape.input(b.teacher_d);
    const MildOutputs o = forward(tape, x, d);
    std::vector<std::pair<double, Var>> terms;
    for (std::size_t i = 0; i < arch_.intents; ++i) {
      const auto y = b.label_column(i);
      const auto pt = b.teacher_column(i);
      terms.emplace_back(c.alpha, tape.focal(o.risk[i], y, c.focal_gamma, b.w_pos.at(i)));
      terms.emplace_back(1.0 - c.alpha, tape.soft_bce(o.risk[i], pt));
    }
    const std::vector<double> all_rows(b.size(), 1.0);
    terms.emplace_back(c.lambda_gate * c.w_c, tape.kl_rows(b.gate_target, b.supervised, o.gate));
    terms.emplace_back(c.lambda_gate * c.w_T, tape.kl_rows(b.teacher_d, all_rows, o.gate));
    terms.emplace_back(c.lambda_gate * c.lambda_s, tape.sparsity(o.gate));
    if (c.lambda_decorr > 0) terms.emplace_back(c.lambda_decorr, tape.decorrelation(o.expert));
    return tape.weighted_sum(terms);
  }

  struct Prediction {
    Tensor2 risk;  // n x K
    Tensor2 gate;  // n x K
  };

  Prediction predict(const Tensor2& X_std, const Tensor2& d_teacher) const {
    Tape tape;
    auto& self = const_cast<MildNet&>(*this);  // constants only; parameters are not modified
    const MildOutputs o = self.forward(tape, tape.input(X_std), tape.input(d_teacher), false);
    Prediction pr{Tensor2(X_std.rows(), arch_.intents), tape.value(o.gate)};
    for (std::size_t i = 0; i < arch_.intents; ++i) {
      const Tensor2& r = tape.value(o.risk[i]);
      for (std::size_t n = 0; n < X_std.rows(); ++n) pr.risk(n, i) = r(n, 0);
    }
    return pr;
  }

  json to_json() const { return {{"arch", arch_.to_json()}, {"loss_config", loss_cfg_.to_json()}, {"parameters", params_.to_json()}}; }
  static MildNet from_json(const json& j) {
    MildNet n;
    n.arch_ = MildArch::from_json(j.at("arch"));
    n.loss_cfg_ = LossConfig::from_json(j.at("loss_config"));
    n.params_ = nn::ParamStore::from_json(j.at("parameters"));
    const MildNet shape_ref(n.arch_, 0);
    if (shape_ref.params().size() != n.params_.size()) throw DataError("parameter count does not match architecture");
    for (std::size_t i = 0; i < n.params_.size(); ++i)
      if (shape_ref.params()[i].value.rows() != n.params_[i].value.rows() ||
          shape_ref.params()[i].value.cols() != n.params_[i].value.cols() ||
          shape_ref.params()[i].name != n.params_[i].name)
        throw DataError("parameter tensor does not match architecture: " + n.params_[i].name);
    return n;
  }

 private:
  MildArch arch_;
  LossConfig loss_cfg_;
  nn::ParamStore params_;
};

/// Trains MILD on standardized rows. The last `validation_fraction` of the
/// rows (chronologically) drive early stopping.
inline TrainHistory train_mild(MildNet& net, const TrainingSet& train, const TrainingSet& val, const TrainConfig& cfg) {
  bool any_pos = false;
  for (double v : train.y_bin.data()) any_pos = any_pos || v > 0;
  if (!any_pos) throw DataError("training split has no positive labels (fold too small)");
  return train_network(net, train, val, cfg);
}

}  // namespace mild
