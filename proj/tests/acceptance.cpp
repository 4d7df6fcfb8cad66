// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion
// (details indented below it) and exits non-zero if any criterion fails.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "mild/cli.hpp"

using namespace mild;
namespace fs = std::filesystem;

namespace {

struct Result {
  bool pass = true;
  std::vector<std::string> details;

  void check(bool ok, std::string what) {
    details.push_back(fmt::format("{} {}", ok ? "ok  " : "FAIL", what));
    pass = pass && ok;
  }
  void note(std::string what) { details.push_back("     " + std::move(what)); }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------------------
// 1. Desk-scale cross-validation

Result desk_scale_cv() {
  Result r;
  const auto t0 = Clock::now();
  GenConfig g;  // 30000 minutes, 60 episodes, seed 42
  const Dataset data = generate(g).data;
  EvalConfig ec;  // H = 120, FP budget 1/day, 11 blocks -> 10 folds
  ec.jobs = std::max(1u, std::thread::hardware_concurrency());
  const FitConfig fc;
  const auto report = run_cv(data,
                             {standard_method(Method::Mild, fc), standard_method(Method::LrOvr, fc),
                              standard_method(Method::DistTarget, fc)},
                             ec);
  const auto& mild = report.at("mild");
  const auto& lr = report.at("lr");
  const auto& dist = report.at("dist");
  for (const auto& m : report.methods)
    r.note(fmt::format("{:<5} detection {:.1f}/{:.1f}/{:.1f}%  lead {:.1f}/{:.1f}/{:.1f} min  FP/day {:.2f}  "
                       "root cause {:.1f}% pooled ({}/{})  co-drift {}/{}",
                       m.method, m.detection[0].mean, m.detection[1].mean, m.detection[2].mean, m.lead[0].mean,
                       m.lead[1].mean, m.lead[2].mean, m.fp_per_day.mean, m.pooled_disambiguation(), m.disamb_correct,
                       m.disamb_total, m.codrift_correct, m.codrift_total));

  for (std::size_t i = 0; i < report.intents.size(); ++i)
    r.check(mild.detection[i].mean >= 95.0,
            fmt::format("a. detection {} {:.1f}% >= 95%", report.intents.name(i), mild.detection[i].mean));
  for (std::size_t i = 0; i < report.intents.size(); ++i)
    r.check(mild.lead[i].mean >= 0.5 * static_cast<double>(ec.horizon),
            fmt::format("b. lead time {} {:.1f} min >= {:.0f}", report.intents.name(i), mild.lead[i].mean,
                        0.5 * static_cast<double>(ec.horizon)));
  r.check(mild.fp_per_day.mean <= 8.0, fmt::format("c. FP/day {:.2f} <= 8", mild.fp_per_day.mean));
  const double gap = mild.pooled_disambiguation() - lr.pooled_disambiguation();
  r.check(gap >= 5.0, fmt::format("d. root-cause accuracy {:.1f}% vs LR-OvR {:.1f}% (gap {:+.1f} pp, need >= +5)",
                                  mild.pooled_disambiguation(), lr.pooled_disambiguation(), gap));
  r.check(mild.pooled_codrift() > lr.pooled_codrift(),
          fmt::format("d. co-drift accuracy {:.1f}% > LR-OvR {:.1f}%", mild.pooled_codrift(), lr.pooled_codrift()));
  r.check(mild.mean_lead() >= dist.mean_lead(),
          fmt::format("e. mean lead {:.1f} min >= Dist-Target {:.1f} min", mild.mean_lead(), dist.mean_lead()));
  r.note(fmt::format("runtime {:.0f} s", seconds_since(t0)));
  return r;
}

// ---------------------------------------------------------------------------
// 2. Gradient verification on a micro model

MildArch micro_arch() {
  MildArch a;
  a.input_dim = 6;
  a.encoder_hidden = 5;
  a.encoder_out = 4;
  a.expert_hidden = 3;
  a.intents = 3;
  return a;
}

TrainingSet micro_batch(std::uint64_t seed) {
  const std::size_t n = 8, D = 6, K = 3;
  RngStream rng(seed, "acceptance-micro");
  TrainingSet b;
  b.X = Tensor2(n, D);
  for (double& v : b.X.data()) v = rng.normal();
  b.y_bin = Tensor2(n, K);
  b.gate_target = Tensor2(n, K);
  b.supervised.assign(n, 0.0);
  b.teacher_p = Tensor2(n, K);
  b.teacher_d = Tensor2(n, K);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (std::size_t i = 0; i < K; ++i) s += b.y_bin(r, i) = rng.uniform() < 0.4;
    if (s > 0) {
      b.supervised[r] = 1;
      for (std::size_t i = 0; i < K; ++i) b.gate_target(r, i) = b.y_bin(r, i) / s;
    }
    std::vector<double> z(K);
    for (std::size_t i = 0; i < K; ++i) {
      b.teacher_p(r, i) = rng.uniform(0.05, 0.95);
      z[i] = rng.uniform(-2, 2);
    }
    const auto d = nn::softmax(z);
    for (std::size_t i = 0; i < K; ++i) b.teacher_d(r, i) = d[i];
  }
  b.w_pos.assign(K, 2.5);
  return b;
}

Result gradient_check() {
  Result r;
  double worst_overall = 0, worst_abs = 0, largest_grad = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed)
    for (double decorr : {0.0, 0.3}) {
      MildNet net(micro_arch(), seed);
      for (auto& p : net.params().all())
        if (p.name.ends_with(".b")) {
          RngStream rng(seed, p.name);
          for (double& v : p.value.data()) v = rng.uniform(-0.2, 0.2);
        }
      LossConfig c;
      c.lambda_decorr = decorr;
      net.set_loss_config(c);
      const TrainingSet b = micro_batch(seed);
      auto loss = [&] {
        Tape tape;
        return tape.scalar(net.loss(tape, b));
      };
      auto& ps = net.params();
      ps.zero_grad();
      {
        Tape tape;
        tape.backward(net.loss(tape, b));
      }
      const double eps = 1e-6;
      double worst = 0;
      for (auto& p : ps.all())
        for (std::size_t k = 0; k < p.value.size(); ++k) {
          const double saved = p.value.data()[k];
          p.value.data()[k] = saved + eps;
          const double up = loss();
          p.value.data()[k] = saved - eps;
          const double down = loss();
          p.value.data()[k] = saved;
          const double num = (up - down) / (2 * eps), ana = p.grad.data()[k];
          worst_abs = std::max(worst_abs, std::abs(num - ana));
          largest_grad = std::max(largest_grad, std::abs(ana));
          if (std::abs(num - ana) > 1e-7) worst = std::max(worst, std::abs(num - ana) / std::max(std::abs(num), std::abs(ana)));
        }
      worst_overall = std::max(worst_overall, worst);
      if (worst > 1e-4) r.check(false, fmt::format("seed {} decorr {}: relative error {:.2e}", seed, decorr, worst));
    }
  r.note(fmt::format("relative error counted where |diff| > 1e-7; max |diff| {:.1e}, max |grad| {:.2f}", worst_abs,
                     largest_grad));
  r.check(largest_grad > 1e-3, "gradients are non-trivial");
  r.check(worst_overall <= 1e-4,
          fmt::format("10 seeds x (lambda_decorr 0, 0.3): worst relative error {:.2e} <= 1e-4", worst_overall));
  return r;
}

// ---------------------------------------------------------------------------
// 3. Loss identities

Result loss_identities() {
  Result r;
  RngStream rng(3, "acceptance-identities");
  double worst_bce = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p(64), y(64);
    double bce = 0;
    for (std::size_t k = 0; k < 64; ++k) {
      p[k] = rng.uniform(0.001, 0.999);
      y[k] = rng.uniform() < 0.3;
      bce -= y[k] > 0 ? std::log(p[k]) : std::log(1 - p[k]);
    }
    worst_bce = std::max(worst_bce, std::abs(focal_loss(p, y, 0.0, 1.0) - bce / 64));
  }
  r.check(worst_bce <= 1e-12, fmt::format("focal(gamma=0, w+=1) vs BCE: max |diff| {:.1e}", worst_bce));

  double worst_kl = 0, worst_gate = 0;
  bool sparsity_exact = true, sparsity_positive = true;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> z(3);
    for (double& v : z) v = rng.uniform(-3, 3);
    const auto g = nn::softmax(z);
    worst_kl = std::max(worst_kl, std::abs(nn::kl_divergence(g, g)));
    double s = 0;
    for (double v : g) s += v * (1 - v);
    const double ls = 0.005;
    worst_gate = std::max(worst_gate, std::abs(gate_loss(g, g, g, ls, 0.7, 0.7) - ls * s));
    sparsity_positive = sparsity_positive && gate_loss(g, std::nullopt, g, 1.0, 0.0, 0.0) > 0;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> hot(3, 0.0);
    hot[i] = 1.0;
    sparsity_exact = sparsity_exact && gate_loss(hot, std::nullopt, hot, 1.0, 0.0, 0.0) == 0.0;
  }
  r.check(worst_kl == 0.0, fmt::format("KL(p||p) max |value| {:.1e}", worst_kl));
  r.check(sparsity_exact && sparsity_positive, "sparsity term exactly 0 on one-hot gates, positive otherwise");
  r.check(worst_gate <= 1e-12, fmt::format("gate loss with target = d_T = g equals lambda_s sum g(1-g): max |diff| {:.1e}", worst_gate));
  return r;
}

// ---------------------------------------------------------------------------
// 4. Shapley attributions on a trained MILD scorer

/// Brute-force coalition sum evaluated one coalition at a time.
std::vector<double> coalition_oracle(const RiskScorer& scorer, std::size_t intent, std::span<const double> x,
                                     const std::vector<double>& bg) {
  const auto groups = FeatureSpec::kpi_groups();
  const std::size_t P = groups.size();
  auto v = [&](unsigned mask) {
    Tensor2 row(1, x.size(), bg);
    for (std::size_t j = 0; j < P; ++j)
      if (mask >> j & 1u)
        for (auto c : groups[j]) row(0, c) = x[c];
    return scorer.score(row).risk(0, intent);
  };
  auto fact = [](std::size_t n) {
    double f = 1;
    for (std::size_t k = 2; k <= n; ++k) f *= static_cast<double>(k);
    return f;
  };
  std::vector<double> phi(P, 0.0);
  for (std::size_t j = 0; j < P; ++j)
    for (unsigned mask = 0; mask < (1u << P); ++mask) {
      if (mask >> j & 1u) continue;
      const auto s = static_cast<std::size_t>(std::popcount(mask));
      phi[j] += fact(s) * fact(P - s - 1) / fact(P) * (v(mask | (1u << j)) - v(mask));
    }
  return phi;
}

Result shapley() {
  Result r;
  GenConfig g;
  g.total_minutes = 9000;
  g.episode_count = 16;
  const Dataset data = generate(g).data;
  const Tensor2 raw = featurize(data.frames);
  FitConfig fc;
  fc.train.max_epochs = 5;
  const auto fit = fit_method(Method::Mild, raw, data.labels(120), {0, 7000}, fc);
  const RiskScorer& scorer = *fit.scorer;
  const Tensor2 risk = scorer.score(raw, {7000, raw.rows()}).risk;
  const auto bg = scorer.background();

  double worst_eff = 0, worst_oracle = 0, worst_sampled = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 0; k < risk.rows(); ++k)
      if (risk(k, i) > risk(best, i)) best = k;
    for (std::size_t row : {7000 + best, std::size_t{7500}}) {
      const auto x = raw.row(row);
      const auto exact = explain_risk(scorer, i, x);
      worst_eff = std::max(worst_eff, std::abs(exact.efficiency_gap()));
      const auto oracle = coalition_oracle(scorer, i, x, bg);
      for (std::size_t j = 0; j < oracle.size(); ++j)
        worst_oracle = std::max(worst_oracle, std::abs(oracle[j] - exact.contributions[j]));
      ExplainOptions so;
      so.mode = ShapleyMode::SampledGrouped;
      const auto sampled = explain_risk(scorer, i, x, so);
      for (std::size_t j = 0; j < oracle.size(); ++j)
        worst_sampled = std::max(worst_sampled, std::abs(sampled.contributions[j] - exact.contributions[j]));
    }
  }
  r.check(worst_eff <= 1e-10, fmt::format("efficiency: max |base + sum phi - f(x)| {:.1e}", worst_eff));
  r.check(worst_oracle <= 1e-10, fmt::format("exact vs 2^8 coalition oracle: max |diff| {:.1e}", worst_oracle));
  r.check(worst_sampled <= 0.05,
          fmt::format("sampled ({} permutations) vs exact: max |diff| {:.4f} <= 0.05", ExplainOptions{}.permutations, worst_sampled));
  return r;
}

// ---------------------------------------------------------------------------
// 5. Labels

Result labeling() {
  Result r;
  const Dataset data = generate(GenConfig{}).data;
  const auto T = static_cast<Minute>(data.size());
  std::size_t windows = 0, codrift = 0;
  bool lengths = true, subset = true, one_cause = true, no_extra = true;
  for (Minute H : {120, 60, 30}) {
    const auto L = data.labels(H);
    std::vector<std::size_t> expected(3, 0), total(3, 0);
    for (const auto& e : data.episodes) {
      if (!e.is_failure()) continue;
      for (const auto& [i, f] : e.fail_t) {
        std::size_t pos = 0;
        for (Minute t = std::max<Minute>(0, f - H); t < f; ++t) pos += L.y_bin(static_cast<std::size_t>(t), i);
        lengths = lengths && static_cast<Minute>(pos) == std::min(H, f);
        expected[i] += static_cast<std::size_t>(std::min(H, f));
        ++windows;
      }
      if (e.kind == EpisodeKind::CoDrift) {
        ++codrift;
        std::size_t cause_rows = 0, victim_rows = 0;
        for (Minute t = std::max<Minute>(0, e.onset_t); t < std::min(T, e.last_fail()); ++t) {
          const auto row = static_cast<std::size_t>(t);
          cause_rows += L.y_cause(row, *e.cause);
          victim_rows += L.y_cause(row, *e.victim);
          std::size_t marks = 0;
          for (std::size_t i = 0; i < 3; ++i) marks += L.y_cause(row, i);
          one_cause = one_cause && marks <= 1;
        }
        one_cause = one_cause && cause_rows > 0 && victim_rows == 0;
      }
    }
    for (std::size_t row = 0; row < data.size(); ++row)
      for (std::size_t i = 0; i < 3; ++i) {
        total[i] += L.y_bin(row, i);
        subset = subset && (!L.y_cause(row, i) || L.y_bin(row, i));
      }
    no_extra = no_extra && total == expected;
  }
  r.check(lengths, fmt::format("{} (episode, intent, H) windows have exactly min(H, fail_t) positives", windows));
  r.check(no_extra, "no positives outside annotated windows");
  r.check(subset, "y_cause is a subset of y_bin");
  r.check(one_cause && codrift > 0, fmt::format("{} co-drift windows mark exactly one cause", codrift));
  return r;
}

// ---------------------------------------------------------------------------
// 6. EWMA

Result ewma() {
  Result r;
  EwmaState s(15.0);
  const double a = 0.125;
  const double s1 = 0.2, s2 = a * 0.9 + (1 - a) * s1, s3 = a * 0.4 + (1 - a) * s2;
  const double e1 = s.step(0.2), e2 = s.step(0.9), e3 = s.step(0.4);
  const double err = std::max({std::abs(e1 - s1), std::abs(e2 - s2), std::abs(e3 - s3)});
  r.check(err <= 1e-15, fmt::format("3-step recursion (W=15): {:.10f} {:.10f} {:.10f}, max |diff| {:.1e}", e1, e2, e3, err));
  bool alpha_ok = true;
  for (double W : {9.0, 15.0, 29.0}) {
    const double al = EwmaState::alpha_for_span(W);
    alpha_ok = alpha_ok && std::abs(al - 2.0 / (W + 1.0)) <= 1e-15;
    r.note(fmt::format("W={:.0f}: alpha {:.15f}", W, al));
  }
  r.check(alpha_ok, "alpha = 2/(W+1) for W in {9, 15, 29}");
  return r;
}

// ---------------------------------------------------------------------------
// 7. Multi-horizon time-to-failure bounds

Result multi_horizon() {
  Result r;
  const Dataset data = generate(GenConfig{}).data;
  const Tensor2 raw = featurize(data.frames);
  const std::size_t split = data.size() * 7 / 10;
  const std::vector<Minute> H = {120, 60, 30};
  RunConfig rc;
  std::vector<ModelBundle> bundles;
  for (Minute h : H)
    bundles.push_back(train_bundle(Method::Mild, data, raw, h, {0, split}, rc.fit, rc.policy(data.intents.size())));

  // Replay the held-out tail through the three engines in lockstep.
  std::vector<StreamEngine> engines;
  for (const auto& b : bundles) engines.emplace_back(b);
  const std::size_t n = data.size() - split;
  std::vector<std::vector<std::optional<TtfBound>>> bound(3, std::vector<std::optional<TtfBound>>(n));
  const bool was_quiet = log::quiet();
  log::quiet() = true;
  for (std::size_t k = 0; k < n; ++k) {
    for (auto& e : engines) e.push(data.frames[split + k]);
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<bool> fired(3);
      for (std::size_t j = 0; j < 3; ++j) fired[j] = engines[j].active(i);
      bound[i][k] = ttf_bound(H, fired);
    }
  }
  log::quiet() = was_quiet;

  std::size_t episodes = 0, with_bounds = 0, minutes = 0, covered = 0;
  bool nested = true, non_widening = true;
  for (const auto& e : data.episodes) {
    if (e.kind != EpisodeKind::NonLinear) continue;
    const Minute f = e.cause_fail();
    if (f - 2 * H.front() < static_cast<Minute>(split)) continue;
    ++episodes;
    const std::size_t i = *e.cause;
    std::optional<TtfBound> prev;
    std::size_t m_ep = 0, c_ep = 0;
    for (Minute m = f - 2 * H.front(); m < f; ++m) {
      const auto& b = bound[i][static_cast<std::size_t>(m) - split];
      if (!b) continue;
      ++m_ep;
      c_ep += b->contains(f - m);
      if (prev) {
        nested = nested && b->upper <= prev->upper;
        non_widening = non_widening && b->width() <= prev->width();
      }
      prev = b;
    }
    if (m_ep > 0) ++with_bounds;
    minutes += m_ep;
    covered += c_ep;
    r.note(fmt::format("episode failing at t={} ({}): {} bound-minutes, true TTF inside {}", f,
                       data.intents.name(i), m_ep, c_ep));
  }
  const double coverage = minutes ? 100.0 * static_cast<double>(covered) / static_cast<double>(minutes) : 0.0;
  r.check(with_bounds > 0, fmt::format("{} of {} held-out non-linear episodes emitted bounds", with_bounds, episodes));
  r.check(nested, "emitted bounds are nested (upper bound never rises before failure)");
  r.check(non_widening, "emitted bounds never widen");
  r.check(coverage >= 80.0, fmt::format("true TTF inside the bound for {:.1f}% of {} bound-minutes (>= 80%)", coverage, minutes));
  return r;
}

// ---------------------------------------------------------------------------
// 8. Inference overhead

Result inference_overhead() {
  Result r;
  GenConfig g;
  g.total_minutes = 6000;
  g.episode_count = 10;
  const Dataset data = generate(g).data;
  const Tensor2 raw = featurize(data.frames);
  FitConfig fc;
  fc.train.max_epochs = 1;
  const auto fit = fit_method(Method::Mild, raw, data.labels(120), {0, raw.rows()}, fc);
  const RowRange rows{0, 4096};
  std::vector<double> per_sample;
  for (int rep = 0; rep < 5; ++rep) {
    const auto t0 = Clock::now();
    const auto s = fit.scorer->score(raw, rows);
    per_sample.push_back(1e3 * seconds_since(t0) / static_cast<double>(rows.size()));
    if (s.risk.rows() != rows.size()) r.check(false, "score returned wrong row count");
  }
  std::sort(per_sample.begin(), per_sample.end());
  const double median = per_sample[per_sample.size() / 2];
  r.check(median <= 1.0, fmt::format("median {:.4f} ms per sample over batches of {} (<= 1 ms)", median, rows.size()));
  return r;
}

// ---------------------------------------------------------------------------
// 9. Determinism of generate and train

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mild");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result determinism() {
  Result r;
  const fs::path root = fs::temp_directory_path() / fmt::format("mild_acceptance_{}", ::getpid());
  fs::remove_all(root);
  fs::create_directories(root);
  for (const char* run : {"a", "b"}) {
    const fs::path d = root / run;
    r.check(cli({"generate", "-q", "--seed", "42", "--out", (d / "full").string()}) == 0,
            fmt::format("run {}: generate (defaults) exits 0", run));
    r.check(cli({"generate", "-q", "--seed", "42", "--minutes", "6000", "--episodes", "12", "--out",
                 (d / "small").string()}) == 0,
            fmt::format("run {}: generate (6000 min) exits 0", run));
    for (const char* m : {"mild", "lr"})
      r.check(cli({"train", "-q", "--seed", "42", "--method", m, "--data", (d / "small").string(), "--out",
                   (d / fmt::format("{}.json", m)).string()}) == 0,
              fmt::format("run {}: train {} exits 0", run, m));
  }
  std::size_t compared = 0;
  bool same = true;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root / "a");
    const bool eq = slurp(entry.path()) == slurp(root / "b" / rel);
    if (!eq) r.check(false, fmt::format("{} differs between runs", rel.string()));
    same = same && eq;
    ++compared;
  }
  r.check(same && compared >= 10, fmt::format("{} output files byte-identical across two runs", compared));
  fs::remove_all(root);
  return r;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Result (*run)();
  };
  const Criterion criteria[] = {
      {"1 desk-scale cross-validation (30000 min, 60 episodes, seed 42, H=120, 10 folds)", desk_scale_cv},
      {"2 gradient verification", gradient_check},
      {"3 loss identities", loss_identities},
      {"4 Shapley attributions", shapley},
      {"5 labeling", labeling},
      {"6 EWMA", ewma},
      {"7 multi-horizon TTF bounds", multi_horizon},
      {"8 inference overhead", inference_overhead},
      {"9 determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Result res;
    try {
      res = c.run();
    } catch (const std::exception& e) {
      res.check(false, fmt::format("exception: {}", e.what()));
    }
    fmt::print("{} [{}] ({:.1f} s)\n", res.pass ? "PASS" : "FAIL", c.name, seconds_since(t0));
    for (const auto& d : res.details) fmt::print("    {}\n", d);
    std::fflush(stdout);
    failed += !res.pass;
  }
  fmt::print("{} of {} criteria passed\n", std::size(criteria) - static_cast<std::size_t>(failed), std::size(criteria));
  return failed == 0 ? 0 : 1;
}
