#pragma once

// Mini-batch Adam training loop with chronological validation split and
// early stopping, shared by the MILD model and the MLP baseline.

#include <limits>
#include <numeric>
#include <vector>

#include "mild/core_types.hpp"
#include "mild/numerics.hpp"
#include "mild/teacher.hpp"

namespace mild {

using nn::Tensor2;

struct TrainConfig {
  nn::AdamConfig adam{};
  std::size_t batch_size = 512;
  int max_epochs = 30;
  int patience = 8;
  double validation_fraction = 0.2;
  double clip_norm = 5.0;
  std::uint64_t seed = 42;

  json to_json() const {
    return {{"lr", adam.lr},           {"beta1", adam.beta1},     {"beta2", adam.beta2},
            {"eps", adam.eps},         {"batch_size", batch_size}, {"max_epochs", max_epochs},
            {"patience", patience},    {"validation_fraction", validation_fraction},
            {"clip_norm", clip_norm},  {"seed", seed}};
  }
};

/// Rows of standardized features with every per-row target the losses need.
struct TrainingSet {
  Tensor2 X;            // n x D, standardized
  Tensor2 y_bin;        // n x K, 0/1
  Tensor2 teacher_p;    // n x K
  Tensor2 teacher_d;    // n x K, rows on the simplex
  Tensor2 gate_target;  // n x K, normalized supervision (zero rows when abstaining)
  std::vector<double> supervised;  // 1 when gate_target is defined
  std::vector<double> w_pos;       // per-intent focal balance weight

  std::size_t size() const { return X.rows(); }
  std::size_t intents() const { return y_bin.cols(); }

  TrainingSet gather(std::span<const std::size_t> idx) const {
    TrainingSet s;
    s.X = X.gather_rows(idx);
    s.y_bin = y_bin.gather_rows(idx);
    s.teacher_p = teacher_p.gather_rows(idx);
    s.teacher_d = teacher_d.gather_rows(idx);
    s.gate_target = gate_target.gather_rows(idx);
    s.supervised.reserve(idx.size());
    for (auto i : idx) s.supervised.push_back(supervised[i]);
    s.w_pos = w_pos;
    return s;
  }

  TrainingSet rows(std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return gather(idx);
  }

  std::vector<double> label_column(std::size_t i) const {
    std::vector<double> c(size());
    for (std::size_t r = 0; r < size(); ++r) c[r] = y_bin(r, i);
    return c;
  }
  std::vector<double> teacher_column(std::size_t i) const {
    std::vector<double> c(size());
    for (std::size_t r = 0; r < size(); ++r) c[r] = teacher_p(r, i);
    return c;
  }
};

/// w+ = #neg / #pos per intent, capped at 100 (1 when a column has no positives).
inline std::vector<double> focal_balance_weights(const BinaryMatrix& y, std::size_t begin, std::size_t end) {
  std::vector<double> w(y.cols(), 1.0);
  for (std::size_t i = 0; i < y.cols(); ++i) {
    std::size_t pos = 0;
    for (std::size_t r = begin; r < end; ++r) pos += y(r, i);
    const std::size_t neg = (end - begin) - pos;
    if (pos > 0) w[i] = std::min(100.0, static_cast<double>(neg) / static_cast<double>(pos));
  }
  return w;
}

/// Assembles the training rows [begin, end) of a standardized feature matrix.
inline TrainingSet make_training_set(const Tensor2& X_std, const LabelMatrices& labels, const TeacherModel& teacher,
                                     std::size_t begin, std::size_t end, std::vector<double> w_pos) {
  TrainingSet s;
  s.X = X_std.slice_rows(begin, end);
  const std::size_t n = end - begin, K = labels.y_bin.cols();
  s.y_bin = Tensor2(n, K);
  s.gate_target = Tensor2(n, K);
  s.supervised.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < K; ++i) s.y_bin(r, i) = labels.y_bin(begin + r, i);
    if (auto target = gate_supervision(labels.y_bin, labels.y_cause, begin + r)) {
      std::copy(target->begin(), target->end(), s.gate_target.row(r).begin());
      s.supervised[r] = 1.0;
    }
  }
  const Tensor2 Z = teacher.logits(s.X);
  s.teacher_p = Z;
  for (double& v : s.teacher_p.data()) v = nn::sigmoid(v);
  s.teacher_d = TeacherModel::distribution_from_logits(Z, teacher.temperature);
  s.w_pos = std::move(w_pos);
  return s;
}

/// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Records one epoch's validation loss; returns true when training should stop.
  bool update(double val_loss) {
    ++epoch_;
    if (val_loss < best_) {
      best_ = val_loss;
      best_epoch_ = epoch_;
      bad_ = 0;
      improved_ = true;
    } else {
      ++bad_;
      improved_ = false;
    }
    return bad_ >= patience_;
  }
  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0, best_epoch_ = 0, bad_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

struct TrainHistory {
  std::vector<double> train_loss;  // mean mini-batch loss per epoch
  std::vector<double> val_loss;
  int best_epoch = 0;
  int epochs_run = 0;
};

/// Net must provide `ParamStore& params()` and
/// `nn::Var loss(nn::Tape&, const TrainingSet&)` that binds its parameters
/// to the tape. Returns with the best-validation parameters restored.
template <typename Net>
TrainHistory train_network(Net& net, const TrainingSet& train, const TrainingSet& val, const TrainConfig& cfg) {
  if (train.size() == 0) throw std::invalid_argument("empty training split");
  RngStream shuffle(cfg.seed, "minibatch-order");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  auto evaluate = [&](const TrainingSet& s) {
    nn::Tape tape;
    const double v = tape.scalar(net.loss(tape, s));
    tape.clear();
    return v;
  };

  TrainHistory h;
  EarlyStopping stopper(cfg.patience);
  auto best = net.params().snapshot();
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle.shuffle(order);
    double sum = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const TrainingSet batch = train.gather(std::span<const std::size_t>(order.data() + b, e - b));
      nn::Tape tape;
      net.params().zero_grad();
      const nn::Var loss = net.loss(tape, batch);
      sum += tape.scalar(loss);
      ++batches;
      tape.backward(loss);
      net.params().clip_grad_norm(cfg.clip_norm);
      nn::adam_step(net.params(), cfg.adam);
    }
    h.train_loss.push_back(sum / static_cast<double>(batches));
    const double vl = val.size() > 0 ? evaluate(val) : h.train_loss.back();
    h.val_loss.push_back(vl);
    h.epochs_run = epoch + 1;
    const bool stop = stopper.update(vl);
    if (stopper.improved()) best = net.params().snapshot();
    if (stop) break;
  }
  h.best_epoch = stopper.best_epoch();
  net.params().restore(best);
  return h;
}

}  // namespace mild
