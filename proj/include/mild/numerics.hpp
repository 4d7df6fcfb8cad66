#pragma once

// Small dense-matrix and reverse-mode differentiation kernel.
//
// A Tape records a fixed set of batched primitives (affine maps, ReLU,
// sigmoid, row softmax, concatenation, gating and the loss primitives) and
// replays them backwards to fill parameter gradients in a ParamStore.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mild/core_types.hpp"

namespace mild::nn {

inline constexpr double kLogClamp = 1e-12;

/// Row-major rows x cols matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw std::invalid_argument("Tensor2: data size does not match shape");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// Copies rows [begin, end).
  Tensor2 slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows_) throw std::out_of_range("slice_rows");
    return Tensor2(end - begin, cols_,
                   std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                                       data_.begin() + static_cast<std::ptrdiff_t>(end * cols_)));
  }

  /// Gathers the listed rows.
  Tensor2 gather_rows(std::span<const std::size_t> idx) const {
    Tensor2 out(idx.size(), cols_);
    for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(row(idx[r]).begin(), cols_, out.row(r).begin());
    return out;
  }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

inline void require_shape(bool ok, const char* what) {
  if (!ok) throw std::logic_error(std::string("shape mismatch in ") + what);
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double clamp_prob(double p) { return std::clamp(p, kLogClamp, 1.0 - kLogClamp); }

/// Softmax with max-subtraction.
inline std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> out(z.size());
  if (z.empty()) return out;
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (out[i] = std::exp(z[i] - m));
  for (double& v : out) v /= s;
  return out;
}

/// KL(p || q) with 0 log 0 = 0 and q clamped below at 1e-12.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * std::log(p[i] / std::max(q[i], kLogClamp));
  return s;
}

// ---------------------------------------------------------------------------
// Parameters

struct Param {
  std::string name;
  Tensor2 value, grad, m, v;
};

/// Named parameters with gradients and Adam moments.
class ParamStore {
 public:
  /// Adds a parameter initialised uniformly in +-sqrt(6/(fan_in+fan_out))
  /// (weights) or zeros (when `zero` is set).
  std::size_t add(std::string name, std::size_t rows, std::size_t cols, RngStream* rng, bool zero = false) {
    Param p;
    p.name = std::move(name);
    p.value = Tensor2(rows, cols);
    if (!zero) {
      if (!rng) throw std::invalid_argument("ParamStore::add needs an RNG for random init");
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (double& x : p.value.data()) x = rng->uniform(-limit, limit);
    }
    p.grad = Tensor2(rows, cols);
    p.m = Tensor2(rows, cols);
    p.v = Tensor2(rows, cols);
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    throw std::out_of_range("no parameter named " + name);
  }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  double grad_norm() const {
    double s = 0;
    for (const auto& p : params_)
      for (double g : p.grad.data()) s += g * g;
    return std::sqrt(s);
  }

  /// Rescales gradients so their global L2 norm is at most `max_norm`.
  void clip_grad_norm(double max_norm) {
    const double n = grad_norm();
    if (n > max_norm && n > 0) {
      const double s = max_norm / n;
      for (auto& p : params_)
        for (double& g : p.grad.data()) g *= s;
    }
  }

  /// Values only; gradients and moments are not part of a snapshot.
  std::vector<Tensor2> snapshot() const {
    std::vector<Tensor2> out;
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }
  void restore(const std::vector<Tensor2>& snap) {
    if (snap.size() != params_.size()) throw std::invalid_argument("snapshot size mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) {
      require_shape(snap[i].rows() == params_[i].value.rows() && snap[i].cols() == params_[i].value.cols(),
                    "ParamStore::restore");
      params_[i].value = snap[i];
    }
  }

  json to_json() const {
    json tensors = json::array();
    for (const auto& p : params_)
      tensors.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"data", p.value.data()}});
    return {{"schema_version", 1}, {"tensors", tensors}};
  }

  static ParamStore from_json(const json& j) {
    ParamStore s;
    try {
      if (j.at("schema_version").get<int>() != 1) throw DataError("unsupported parameter schema version");
      for (const auto& t : j.at("tensors")) {
        const auto rows = t.at("rows").get<std::size_t>();
        const auto cols = t.at("cols").get<std::size_t>();
        const auto idx = s.add(t.at("name").get<std::string>(), rows, cols, nullptr, true);
        s.params_[idx].value = Tensor2(rows, cols, t.at("data").get<std::vector<double>>());
      }
    } catch (const json::exception& ex) {
      throw DataError(std::string("malformed parameter tensors: ") + ex.what());
    } catch (const std::invalid_argument& ex) {
      throw DataError(ex.what());
    }
    return s;
  }

 private:
  std::vector<Param> params_;
  std::uint64_t step_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update; increments the step counter.
inline void adam_step(ParamStore& store, const AdamConfig& cfg = {}) {
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : store.all()) {
    auto& w = p.value.data();
    const auto& g = p.grad.data();
    auto& m = p.m.data();
    auto& v = p.v.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Tape

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  const Tensor2& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor2& grad(Var v) const { return nodes_.at(v.id).grad; }
  double scalar(Var v) const {
    const auto& t = value(v);
    require_shape(t.rows() == 1 && t.cols() == 1, "Tape::scalar");
    return t(0, 0);
  }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  /// Constant input; receives a gradient but propagates nowhere.
  Var input(Tensor2 t) { return push(std::move(t), nullptr); }

  /// Leaf bound to parameter `i` of `store`; backward accumulates into its grad.
  Var param(ParamStore& store, std::size_t i) {
    Var out = push(store[i].value, nullptr);
    nodes_[out.id].backward = [this, out, &store, i] {
      auto& g = store[i].grad.data();
      const auto& ng = nodes_[out.id].grad.data();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += ng[k];
    };
    return out;
  }

  /// x (n x in) * W (in x out) + b (1 x out).
  Var affine(Var x, Var W, Var b) {
    const Tensor2& X = value(x);
    const Tensor2& Wv = value(W);
    const Tensor2& bv = value(b);
    require_shape(X.cols() == Wv.rows() && bv.rows() == 1 && bv.cols() == Wv.cols(), "affine");
    const std::size_t n = X.rows(), in = X.cols(), out = Wv.cols();
    Tensor2 Y(n, out);
    for (std::size_t r = 0; r < n; ++r) {
      double* y = &Y(r, 0);
      for (std::size_t o = 0; o < out; ++o) y[o] = bv(0, o);
      for (std::size_t k = 0; k < in; ++k) {
        const double xv = X(r, k);
        if (xv == 0.0) continue;
        const double* w = &Wv(k, 0);
        for (std::size_t o = 0; o < out; ++o) y[o] += xv * w[o];
      }
    }
    Var res = push(std::move(Y), nullptr);
    nodes_[res.id].backward = [this, x, W, b, res, n, in, out] {
      const Tensor2& dY = nodes_[res.id].grad;
      const Tensor2& Xv = nodes_[x.id].value;
      const Tensor2& Wv2 = nodes_[W.id].value;
      Tensor2& dX = nodes_[x.id].grad;
      Tensor2& dW = nodes_[W.id].grad;
      Tensor2& db = nodes_[b.id].grad;
      for (std::size_t r = 0; r < n; ++r) {
        const double* dy = &dY(r, 0);
        for (std::size_t k = 0; k < in; ++k) {
          const double* w = &Wv2(k, 0);
          double s = 0;
          for (std::size_t o = 0; o < out; ++o) s += dy[o] * w[o];
          dX(r, k) += s;
          const double xv = Xv(r, k);
          if (xv != 0.0) {
            double* dw = &dW(k, 0);
            for (std::size_t o = 0; o < out; ++o) dw[o] += xv * dy[o];
          }
        }
        for (std::size_t o = 0; o < out; ++o) db(0, o) += dy[o];
      }
    };
    return res;
  }

  Var relu(Var x) {
    Tensor2 Y = value(x);
    for (double& v : Y.data()) v = v > 0 ? v : 0.0;
    Var res = push(std::move(Y), nullptr);
    nodes_[res.id].backward = [this, x, res] {
      const auto& xv = nodes_[x.id].value.data();
      const auto& dy = nodes_[res.id].grad.data();
      auto& dx = nodes_[x.id].grad.data();
      for (std::size_t k = 0; k < dx.size(); ++k)
        if (xv[k] > 0) dx[k] += dy[k];
    };
    return res;
  }

  Var sigmoid(Var x) {
    Tensor2 Y = value(x);
    for (double& v : Y.data()) v = nn::sigmoid(v);
    Var res = push(std::move(Y), nullptr);
    nodes_[res.id].backward = [this, x, res] {
      const auto& y = nodes_[res.id].value.data();
      const auto& dy = nodes_[res.id].grad.data();
      auto& dx = nodes_[x.id].grad.data();
      for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += dy[k] * y[k] * (1.0 - y[k]);
    };
    return res;
  }

  /// Softmax over each row.
  Var softmax_rows(Var x) {
    const Tensor2& X = value(x);
    Tensor2 Y(X.rows(), X.cols());
    for (std::size_t r = 0; r < X.rows(); ++r) {
      auto s = softmax(X.row(r));
      std::copy(s.begin(), s.end(), Y.row(r).begin());
    }
    Var res = push(std::move(Y), nullptr);
    nodes_[res.id].backward = [this, x, res] {
      const Tensor2& Yv = nodes_[res.id].value;
      const Tensor2& dY = nodes_[res.id].grad;
      Tensor2& dX = nodes_[x.id].grad;
      for (std::size_t r = 0; r < Yv.rows(); ++r) {
        double dot = 0;
        for (std::size_t c = 0; c < Yv.cols(); ++c) dot += dY(r, c) * Yv(r, c);
        for (std::size_t c = 0; c < Yv.cols(); ++c) dX(r, c) += Yv(r, c) * (dY(r, c) - dot);
      }
    };
    return res;
  }

  /// [a ; b] along columns.
  Var concat_cols(Var a, Var b) {
    const Tensor2& A = value(a);
    const Tensor2& B = value(b);
    require_shape(A.rows() == B.rows(), "concat_cols");
    Tensor2 Y(A.rows(), A.cols() + B.cols());
    for (std::size_t r = 0; r < A.rows(); ++r) {
      std::copy(A.row(r).begin(), A.row(r).end(), Y.row(r).begin());
      std::copy(B.row(r).begin(), B.row(r).end(), Y.row(r).begin() + static_cast<std::ptrdiff_t>(A.cols()));
    }
    const std::size_t ac = A.cols(), bc = B.cols();
    Var res = push(std::move(Y), nullptr);
    nodes_[res.id].backward = [this, a, b, res, ac, bc] {
      const Tensor2& dY = nodes_[res.id].grad;
      Tensor2& dA = nodes_[a.id].grad;
      Tensor2& dB = nodes_[b.id].grad;
      for (std::size_t r = 0; r < dY.rows(); ++r) {
        for (std::size_t c = 0; c < ac; ++c) dA(r, c) += dY(r, c);
        for (std::size_t c = 0; c < bc; ++c) dB(r, c) += dY(r, ac + c);
      }
    };
    return res;
  }

  /// Column j as an n x 1 tensor.
  Var column(Var x, std::size_t j) {
    const Tensor2& X = value(x);
    require_shape(j < X.cols(), "column");
    Tensor2 Y(X.rows(), 1);
    for (std::size_t r = 0; r < X.rows(); ++r) Y(r, 0) = X(r, j);
    Var res = push(std::move(Y), nullptr);
    nodes_[res.id].backward = [this, x, j, res] {
      const Tensor2& dY = nodes_[res.id].grad;
      Tensor2& dX = nodes_[x.id].grad;
      for (std::size_t r = 0; r < dY.rows(); ++r) dX(r, j) += dY(r, 0);
    };
    return res;
  }

  /// Multiplies row r of X by the scalar g(r, 0).
  Var scale_rows(Var g, Var x) {
    const Tensor2& G = value(g);
    const Tensor2& X = value(x);
    require_shape(G.cols() == 1 && G.rows() == X.rows(), "scale_rows");
    Tensor2 Y = X;
    for (std::size_t r = 0; r < Y.rows(); ++r)
      for (double& v : Y.row(r)) v *= G(r, 0);
    Var res = push(std::move(Y), nullptr);
    nodes_[res.id].backward = [this, g, x, res] {
      const Tensor2& dY = nodes_[res.id].grad;
      const Tensor2& Gv = nodes_[g.id].value;
      const Tensor2& Xv = nodes_[x.id].value;
      Tensor2& dG = nodes_[g.id].grad;
      Tensor2& dX = nodes_[x.id].grad;
      for (std::size_t r = 0; r < dY.rows(); ++r) {
        double s = 0;
        for (std::size_t c = 0; c < dY.cols(); ++c) {
          s += dY(r, c) * Xv(r, c);
          dX(r, c) += dY(r, c) * Gv(r, 0);
        }
        dG(r, 0) += s;
      }
    };
    return res;
  }

  // -- loss primitives (all return 1 x 1) ----------------------------------

  /// Batch mean of the focal loss on probabilities p (n x 1), p clamped to
  /// [1e-12, 1-1e-12]:  y=1: -w_pos (1-p)^gamma log p;  y=0: -p^gamma log(1-p).
  Var focal(Var p, std::span<const double> labels, double gamma, double w_pos) {
    const Tensor2& P = value(p);
    require_shape(P.cols() == 1 && P.rows() == labels.size(), "focal");
    const std::size_t n = P.rows();
    double total = 0;
    std::vector<double> dp(n);
    for (std::size_t r = 0; r < n; ++r) {
      const double raw = P(r, 0);
      const double q = clamp_prob(raw);
      const bool inside = raw > kLogClamp && raw < 1.0 - kLogClamp;
      double l, d;
      if (labels[r] > 0.5) {
        const double om = 1.0 - q;
        l = -w_pos * std::pow(om, gamma) * std::log(q);
        d = -w_pos * (std::pow(om, gamma) / q - (gamma == 0 ? 0.0 : gamma * std::pow(om, gamma - 1) * std::log(q)));
      } else {
        const double om = 1.0 - q;
        l = -std::pow(q, gamma) * std::log(om);
        d = std::pow(q, gamma) / om - (gamma == 0 ? 0.0 : gamma * std::pow(q, gamma - 1) * std::log(om));
      }
      total += l;
      dp[r] = inside ? d / static_cast<double>(n) : 0.0;
    }
    Var res = push(Tensor2(1, 1, total / static_cast<double>(n)), nullptr);
    nodes_[res.id].backward = [this, p, res, dp = std::move(dp)] {
      const double up = nodes_[res.id].grad(0, 0);
      Tensor2& dP = nodes_[p.id].grad;
      for (std::size_t r = 0; r < dp.size(); ++r) dP(r, 0) += up * dp[r];
    };
    return res;
  }

  /// Batch mean of the soft-target cross-entropy -[t log p + (1-t) log(1-p)].
  Var soft_bce(Var p, std::span<const double> targets) {
    const Tensor2& P = value(p);
    require_shape(P.cols() == 1 && P.rows() == targets.size(), "soft_bce");
    const std::size_t n = P.rows();
    double total = 0;
    std::vector<double> dp(n);
    for (std::size_t r = 0; r < n; ++r) {
      const double raw = P(r, 0);
      const double q = clamp_prob(raw);
      const double t = targets[r];
      total += -(t * std::log(q) + (1.0 - t) * std::log(1.0 - q));
      const bool inside = raw > kLogClamp && raw < 1.0 - kLogClamp;
      dp[r] = inside ? (-t / q + (1.0 - t) / (1.0 - q)) / static_cast<double>(n) : 0.0;
    }
    Var res = push(Tensor2(1, 1, total / static_cast<double>(n)), nullptr);
    nodes_[res.id].backward = [this, p, res, dp = std::move(dp)] {
      const double up = nodes_[res.id].grad(0, 0);
      Tensor2& dP = nodes_[p.id].grad;
      for (std::size_t r = 0; r < dp.size(); ++r) dP(r, 0) += up * dp[r];
    };
    return res;
  }

  /// (1/n) sum_r weight[r] * KL(target_r || q_r), q clamped at 1e-12.
  /// Rows with weight 0 contribute nothing.
  Var kl_rows(const Tensor2& target, std::span<const double> row_weight, Var q) {
    const Tensor2& Q = value(q);
    require_shape(target.rows() == Q.rows() && target.cols() == Q.cols() && row_weight.size() == Q.rows(), "kl_rows");
    const std::size_t n = Q.rows(), K = Q.cols();
    double total = 0;
    Tensor2 dq(n, K);
    for (std::size_t r = 0; r < n; ++r) {
      if (row_weight[r] == 0) continue;
      total += row_weight[r] * kl_divergence(target.row(r), Q.row(r));
      for (std::size_t c = 0; c < K; ++c) {
        const double t = target(r, c);
        if (t > 0 && Q(r, c) > kLogClamp) dq(r, c) = -row_weight[r] * t / Q(r, c) / static_cast<double>(n);
      }
    }
    Var res = push(Tensor2(1, 1, total / static_cast<double>(n)), nullptr);
    nodes_[res.id].backward = [this, q, res, dq = std::move(dq)] {
      const double up = nodes_[res.id].grad(0, 0);
      auto& dQ = nodes_[q.id].grad.data();
      const auto& d = dq.data();
      for (std::size_t k = 0; k < d.size(); ++k) dQ[k] += up * d[k];
    };
    return res;
  }

  /// (1/n) sum_r sum_i g_ri (1 - g_ri).
  Var sparsity(Var g) {
    const Tensor2& G = value(g);
    double total = 0;
    for (double v : G.data()) total += v * (1.0 - v);
    const double n = static_cast<double>(G.rows());
    Var res = push(Tensor2(1, 1, total / n), nullptr);
    nodes_[res.id].backward = [this, g, res, n] {
      const double up = nodes_[res.id].grad(0, 0);
      const auto& gv = nodes_[g.id].value.data();
      auto& dg = nodes_[g.id].grad.data();
      for (std::size_t k = 0; k < dg.size(); ++k) dg[k] += up * (1.0 - 2.0 * gv[k]) / n;
    };
    return res;
  }

  /// Sum over pairs a<b of ||C_ab||_F^2, where C_ab is the cross-covariance
  /// (1/n) A~^T B~ of the mean-centred representations A and B.
  Var decorrelation(const std::vector<Var>& reps) {
    const std::size_t m = reps.size();
    if (m < 2) return push(Tensor2(1, 1, 0.0), nullptr);
    const std::size_t n = value(reps[0]).rows();
    std::vector<Tensor2> centred;
    for (Var v : reps) {
      Tensor2 A = value(v);
      require_shape(A.rows() == n, "decorrelation");
      for (std::size_t c = 0; c < A.cols(); ++c) {
        double mu = 0;
        for (std::size_t r = 0; r < n; ++r) mu += A(r, c);
        mu /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) A(r, c) -= mu;
      }
      centred.push_back(std::move(A));
    }
    std::vector<Tensor2> dA;
    for (const auto& A : centred) dA.emplace_back(A.rows(), A.cols());
    double total = 0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = a + 1; b < m; ++b) {
        const Tensor2& A = centred[a];
        const Tensor2& B = centred[b];
        Tensor2 C(A.cols(), B.cols());
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t i = 0; i < A.cols(); ++i)
            for (std::size_t j = 0; j < B.cols(); ++j) C(i, j) += A(r, i) * B(r, j) * inv_n;
        for (double c : C.data()) total += c * c;
        // d/dA = (2/n) B C^T, d/dB = (2/n) A C; both already column-centred.
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t i = 0; i < A.cols(); ++i) {
            double s = 0;
            for (std::size_t j = 0; j < B.cols(); ++j) s += B(r, j) * C(i, j);
            dA[a](r, i) += 2.0 * inv_n * s;
          }
          for (std::size_t j = 0; j < B.cols(); ++j) {
            double s = 0;
            for (std::size_t i = 0; i < A.cols(); ++i) s += A(r, i) * C(i, j);
            dA[b](r, j) += 2.0 * inv_n * s;
          }
        }
      }
    }
    Var res = push(Tensor2(1, 1, total), nullptr);
    nodes_[res.id].backward = [this, reps, res, dA = std::move(dA)] {
      const double up = nodes_[res.id].grad(0, 0);
      for (std::size_t k = 0; k < reps.size(); ++k) {
        auto& g = nodes_[reps[k].id].grad.data();
        const auto& d = dA[k].data();
        for (std::size_t e = 0; e < g.size(); ++e) g[e] += up * d[e];
      }
    };
    return res;
  }

  /// sum_k w_k * s_k over 1 x 1 nodes. Terms with weight 0 are skipped
  /// entirely, so the result is bit-identical to omitting them.
  Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
    double total = 0;
    std::vector<std::pair<double, Var>> used;
    for (const auto& [w, v] : terms) {
      if (w == 0.0) continue;
      total += w * scalar(v);
      used.emplace_back(w, v);
    }
    Var res = push(Tensor2(1, 1, total), nullptr);
    nodes_[res.id].backward = [this, res, used = std::move(used)] {
      const double up = nodes_[res.id].grad(0, 0);
      for (const auto& [w, v] : used) nodes_[v.id].grad(0, 0) += w * up;
    };
    return res;
  }

  /// Reverse sweep from a scalar root, then clears the tape.
  void backward(Var loss) {
    if (nodes_.empty() || loss.id >= nodes_.size()) throw std::logic_error("backward called before forward");
    require_shape(nodes_[loss.id].value.size() == 1, "backward (loss must be scalar)");
    for (auto& nd : nodes_) nd.grad = Tensor2(nd.value.rows(), nd.value.cols());
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (std::size_t k = loss.id + 1; k-- > 0;)
      if (nodes_[k].backward) nodes_[k].backward();
    nodes_.clear();
  }

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    std::function<void()> backward;
  };

  Var push(Tensor2 v, std::function<void()> bw) {
    nodes_.push_back(Node{std::move(v), Tensor2(), std::move(bw)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace mild::nn
