#pragma once

// One-vs-rest logistic regression per intent. Provides the teacher
// probabilities used for distillation and the temperature-scaled
// distribution over intents fed to the gate.

#include <cmath>
#include <vector>

#include "mild/core_types.hpp"
#include "mild/numerics.hpp"

namespace mild {

using nn::Tensor2;

struct TeacherConfig {
  double l2 = 1e-4;
  int max_iterations = 500;
  double tolerance = 1e-6;  // gradient norm
  double temperature = 2.0;
};

struct TeacherModel {
  Tensor2 weights;  // K x D
  std::vector<double> bias;
  double temperature = 2.0;

  std::size_t intents() const { return weights.rows(); }
  std::size_t dim() const { return weights.cols(); }

  /// Logits for every row of standardized X (n x K).
  Tensor2 logits(const Tensor2& X) const {
    if (X.cols() != dim()) throw std::invalid_argument("teacher: feature dimension mismatch");
    Tensor2 Z(X.rows(), intents());
    for (std::size_t r = 0; r < X.rows(); ++r)
      for (std::size_t i = 0; i < intents(); ++i) {
        double z = bias[i];
        for (std::size_t c = 0; c < dim(); ++c) z += weights(i, c) * X(r, c);
        Z(r, i) = z;
      }
    return Z;
  }

  /// Per-intent probabilities p(T) = sigmoid(logit).
  Tensor2 probabilities(const Tensor2& X) const {
    Tensor2 P = logits(X);
    for (double& v : P.data()) v = nn::sigmoid(v);
    return P;
  }

  /// d(T) = softmax(z / temperature) for each row.
  Tensor2 distribution(const Tensor2& X) const { return distribution_from_logits(logits(X), temperature); }

  static Tensor2 distribution_from_logits(const Tensor2& Z, double temperature) {
    if (!(temperature > 0)) throw std::invalid_argument("teacher temperature must be positive");
    Tensor2 D(Z.rows(), Z.cols());
    std::vector<double> scaled(Z.cols());
    for (std::size_t r = 0; r < Z.rows(); ++r) {
      for (std::size_t i = 0; i < Z.cols(); ++i) scaled[i] = Z(r, i) / temperature;
      auto s = nn::softmax(scaled);
      std::copy(s.begin(), s.end(), D.row(r).begin());
    }
    return D;
  }

  json to_json() const {
    return {{"weights", weights.data()}, {"rows", weights.rows()}, {"cols", weights.cols()},
            {"bias", bias}, {"temperature", temperature}};
  }
  static TeacherModel from_json(const json& j) {
    TeacherModel t;
    t.weights = Tensor2(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                        j.at("weights").get<std::vector<double>>());
    t.bias = j.at("bias").get<std::vector<double>>();
    t.temperature = j.at("temperature").get<double>();
    if (t.bias.size() != t.weights.rows()) throw DataError("teacher bias length mismatch");
    return t;
  }
};

namespace detail {

/// Largest eigenvalue of (1/n) A^T A for A = [X, 1] by power iteration.
inline double gram_spectral_radius(const Tensor2& X) {
  const std::size_t n = X.rows(), D = X.cols() + 1;
  std::vector<double> v(D, 1.0 / std::sqrt(static_cast<double>(D))), w(D);
  double lambda = 1.0;
  for (int it = 0; it < 60; ++it) {
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      double a = v[D - 1];
      for (std::size_t c = 0; c + 1 < D; ++c) a += X(r, c) * v[c];
      for (std::size_t c = 0; c + 1 < D; ++c) w[c] += a * X(r, c);
      w[D - 1] += a;
    }
    double norm = 0;
    for (double& x : w) {
      x /= static_cast<double>(n);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm == 0) return 1.0;
    lambda = norm;
    for (std::size_t c = 0; c < D; ++c) v[c] = w[c] / norm;
  }
  return lambda;
}

}  // namespace detail

/// Fits one L2-regularised logistic regression per label column by
/// full-batch accelerated gradient descent on the mean cross-entropy. A
/// column with a single class gets an intercept-only model.
inline TeacherModel train_teacher(const Tensor2& X, const BinaryMatrix& y, const TeacherConfig& cfg = {}) {
  if (X.rows() != y.rows() || X.rows() == 0) throw std::invalid_argument("train_teacher: shape mismatch");
  const std::size_t n = X.rows(), D = X.cols(), K = y.cols();
  TeacherModel m;
  m.weights = Tensor2(K, D);
  m.bias.assign(K, 0.0);
  m.temperature = cfg.temperature;

  const double L = 0.25 * detail::gram_spectral_radius(X) + cfg.l2;
  const double step = 1.0 / L;
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t i = 0; i < K; ++i) {
    const std::size_t pos = y.col_count(i);
    if (pos == 0 || pos == n) {
      const double rate = std::clamp(static_cast<double>(pos) * inv_n, 1e-4, 1.0 - 1e-4);
      m.bias[i] = std::log(rate / (1.0 - rate));
      log::warn(fmt::format("teacher: label column {} has a single class; fitting intercept only", i));
      continue;
    }
    // Nesterov momentum with gradient-based restart.
    std::vector<double> w(D + 1, 0.0), w_prev(D + 1, 0.0), look(D + 1, 0.0), g(D + 1);
    double tk = 1.0;
    for (int it = 0; it < cfg.max_iterations; ++it) {
      std::fill(g.begin(), g.end(), 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        double z = look[D];
        for (std::size_t c = 0; c < D; ++c) z += look[c] * X(r, c);
        const double err = nn::sigmoid(z) - static_cast<double>(y(r, i));
        for (std::size_t c = 0; c < D; ++c) g[c] += err * X(r, c);
        g[D] += err;
      }
      double gnorm = 0;
      for (std::size_t c = 0; c <= D; ++c) {
        g[c] *= inv_n;
        if (c < D) g[c] += cfg.l2 * look[c];
        gnorm += g[c] * g[c];
      }
      if (std::sqrt(gnorm) < cfg.tolerance) {
        w = look;
        break;
      }
      w_prev = w;
      for (std::size_t c = 0; c <= D; ++c) w[c] = look[c] - step * g[c];
      double restart = 0;
      for (std::size_t c = 0; c <= D; ++c) restart += g[c] * (w[c] - w_prev[c]);
      if (restart > 0) tk = 1.0;
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      const double beta = (tk - 1.0) / tn;
      tk = tn;
      for (std::size_t c = 0; c <= D; ++c) look[c] = w[c] + beta * (w[c] - w_prev[c]);
    }
    for (std::size_t c = 0; c < D; ++c) m.weights(i, c) = w[c];
    m.bias[i] = w[D];
  }
  return m;
}

}  // namespace mild
