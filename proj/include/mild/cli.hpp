#pragma once

// Command-line front end: generate, train, evaluate, stream, explain, ttf,
// report. Exit codes: 0 success, 1 usage error, 2 data/model error.

#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mild/bundle.hpp"
#include "mild/config.hpp"
#include "mild/evalharness.hpp"
#include "mild/explain.hpp"
#include "mild/synthgen.hpp"

namespace mild {

namespace fs = std::filesystem;

namespace cli_detail {

/// Flag values are captured as strings and applied over the config file,
/// so flags always win regardless of order.
struct Overrides {
  std::vector<std::pair<std::string, std::string>> items;
  std::string config_path;

  void bind(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help,
            std::deque<std::string>& storage) {
    app.add_option(flag, storage.emplace_back(), help)->each([this, key](const std::string& v) {
      items.emplace_back(key, v);
    });
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& [k, v] : items) cfg.set(k, v);
    cfg.validate();
    return cfg;
  }
};

inline void add_globals(CLI::App& app, Overrides& o, std::deque<std::string>& storage, bool& quiet) {
  app.add_flag("-q,--quiet", quiet, "suppress warnings and progress messages");
  app.add_option("--config", o.config_path, "key = value config file (flags take precedence)");
  o.bind(app, "--seed", "seed", "single seed for all randomness (default 42)", storage);
  o.bind(app, "--jobs", "jobs", "worker threads for evaluate", storage);
}

inline void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw UsageError(dir.string() + " is not empty; pass --force to overwrite");
  fs::create_directories(dir);
}

inline void prepare_output_file(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) throw UsageError(file.string() + " exists; pass --force to overwrite");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

inline std::string resolved_config_text(const RunConfig& cfg) {
  std::string s;
  const json j = cfg.to_json();
  for (const auto& [k, v] : j.items()) s += fmt::format("{} = {}\n", k, v.get<std::string>());
  return s;
}

inline Dataset load_data(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("data directory not found: " + dir);
  return load_dataset(dir);
}

inline RowRange training_rows(const Dataset& data, const RunConfig& cfg, int fold) {
  if (fold <= 0) return {0, data.size()};
  const auto folds = FoldPlan{data.size(), cfg.blocks}.folds();
  if (static_cast<std::size_t>(fold) > folds.size())
    throw UsageError(fmt::format("--fold must lie in 1..{}", folds.size()));
  return folds[static_cast<std::size_t>(fold) - 1].train;
}

inline void print_report(std::ostream& os, const EvalReport& r) {
  os << fmt::format("{:<8}", "method");
  for (const auto& n : r.intents.names()) os << fmt::format(" {:>16}", "det% " + n);
  for (const auto& n : r.intents.names()) os << fmt::format(" {:>16}", "lead " + n);
  os << fmt::format(" {:>14} {:>16}\n", "FP/day", "root-cause %");
  for (const auto& m : r.methods) {
    os << fmt::format("{:<8}", m.method);
    for (const auto& d : m.detection) os << fmt::format(" {:>16}", fmt::format("{:.1f}±{:.1f}", d.mean, d.std));
    for (const auto& l : m.lead) os << fmt::format(" {:>16}", fmt::format("{:.1f}±{:.1f}", l.mean, l.std));
    os << fmt::format(" {:>14} {:>16}\n", fmt::format("{:.2f}±{:.2f}", m.fp_per_day.mean, m.fp_per_day.std),
                      fmt::format("{:.1f}±{:.1f}", m.disambiguation.mean, m.disambiguation.std));
  }
  if (r.methods.size() >= 2) {
    os << "\npercent of best (detection, lead time, reliability, root cause)\n";
    for (const auto& row : percent_of_best(r))
      os << fmt::format("{:<8} {:>7.1f} {:>7.1f} {:>7.1f} {:>7.1f}\n", row.method, row.detection, row.lead_time,
                        row.reliability, row.root_cause);
  }
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_generate(const RunConfig& cfg, const std::string& out, bool force) {
  prepare_output_dir(out, force);
  const GeneratedBenchmark b = generate(cfg.gen);
  {
    std::ofstream csv(fs::path(out) / "kpis.csv", std::ios::binary);
    write_kpi_csv(csv, b.data.frames);
  }
  write_text(fs::path(out) / "episodes.json", episodes_to_json(b.data.episodes, b.data.intents).dump(1) + "\n");
  write_text(fs::path(out) / "genconfig.json", cfg.gen.to_json().dump(1) + "\n");
  write_text(fs::path(out) / "run_config.txt", resolved_config_text(cfg));
  log::info(fmt::format("wrote {} minutes and {} episodes to {}", b.data.size(), b.data.episodes.size(), out));
  return 0;
}

inline int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out, const std::string& method,
                     int fold, bool force) {
  Method m;
  try {
    m = method_from(method);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Dataset data = load_data(data_dir);
  prepare_output_file(out, force);
  const Tensor2 raw = featurize(data.frames);
  const RowRange rows = training_rows(data, cfg, fold);
  const ModelBundle b = train_bundle(m, data, raw, cfg.horizon, rows, cfg.fit, cfg.policy(data.intents.size()));
  json j = b.to_json();
  j["run_config"] = cfg.to_json();
  write_text(out, j.dump(1) + "\n");
  log::info(fmt::format("trained {} on rows [{}, {}) with thresholds {}", method, rows.begin, rows.end,
                        fmt::join(b.policy.thresholds, ", ")));
  return 0;
}

inline int cmd_evaluate(const RunConfig& cfg, const std::string& data_dir, const std::string& out, bool force) {
  const Dataset data = load_data(data_dir);
  prepare_output_dir(out, force);
  std::vector<MethodSpec> specs;
  for (Method m : cfg.method_list()) specs.push_back(standard_method(m, cfg.fit));
  EvalConfig ec;
  ec.horizon = cfg.horizon;
  ec.policy = cfg.policy(data.intents.size());
  ec.blocks = cfg.blocks;
  ec.jobs = cfg.jobs;
  const EvalReport report = run_cv(data, specs, ec);
  json j = report.to_json();
  j["run_config"] = cfg.to_json();
  write_text(fs::path(out) / "report.json", j.dump(1) + "\n");
  {
    std::ofstream t(fs::path(out) / "table2.csv", std::ios::binary);
    write_table2_csv(t, report);
  }
  if (report.methods.size() >= 2) {
    std::ofstream rc(fs::path(out) / "radar.csv", std::ios::binary);
    write_radar_csv(rc, percent_of_best(report));
  }
  write_text(fs::path(out) / "run_config.txt", resolved_config_text(cfg));
  print_report(std::cout, report);
  return 0;
}

inline int cmd_stream(const std::string& model, const std::string& data_dir, const std::string& out, bool force) {
  const ModelBundle b = ModelBundle::load(model);
  const Dataset data = load_data(data_dir);
  prepare_output_file(out, force);
  std::ofstream os(out, std::ios::binary);
  if (!os) throw DataError("cannot write " + out);
  StreamEngine engine(b);
  std::size_t n = 0;
  auto emit = [&](const std::vector<AlertEvent>& evs) {
    for (const auto& e : evs) {
      os << e.to_json(b.intents).dump() << '\n';
      ++n;
    }
    os.flush();
  };
  for (const auto& f : data.frames) emit(engine.push(f));
  auto rest = engine.finish();
  sort_events(rest);
  emit(rest);
  log::info(fmt::format("{} alert events written to {}", n, out));
  return 0;
}

inline int cmd_explain(const RunConfig& cfg, const std::string& model, const std::string& alerts,
                       const std::string& data_dir, std::size_t index, const std::string& mode, const std::string& csv) {
  ExplainOptions opt;
  try {
    opt.mode = shapley_mode_from(mode);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  opt.permutations = cfg.explain_permutations;
  opt.seed = cfg.seed;
  const ModelBundle b = ModelBundle::load(model);
  const auto events = read_alerts_jsonl(alerts, b.intents);
  if (index >= events.size()) throw DataError(fmt::format("alert index {} out of range ({} events)", index, events.size()));
  const AlertEvent& ev = events[index];
  const Dataset data = load_data(data_dir);
  if (ev.t < 0 || static_cast<std::size_t>(ev.t) >= data.size()) throw DataError("alert time outside the dataset");
  // Trailing-window features at the alert minute (causal, as in streaming).
  const auto first = static_cast<std::size_t>(std::max<Minute>(0, ev.t - static_cast<Minute>(FeatureSpec::kLookback) + 1));
  const std::vector<KpiFrame> window(data.frames.begin() + static_cast<std::ptrdiff_t>(first),
                                     data.frames.begin() + ev.t + 1);
  const Tensor2 X = featurize(window);
  const auto x = X.row(X.rows() - 1);
  const Attribution a = explain_risk(*b.scorer, ev.intent, x, opt);

  std::cout << fmt::format("alert #{} t={} intent={} root_cause={} mode={}\n", index, ev.t, b.intents.name(ev.intent),
                           b.intents.name(ev.root_cause), to_string(opt.mode));
  std::cout << fmt::format("base {:.6f}  risk {:.6f}\n", a.base, a.value);
  for (auto i : a.ranking()) std::cout << fmt::format("{:>24} {:+.6f}\n", a.names[i], a.contributions[i]);
  if (!csv.empty()) {
    std::string s = "feature,contribution\n";
    for (auto i : a.ranking()) s += fmt::format("{},{:.12g}\n", a.names[i], a.contributions[i]);
    write_text(csv, s);
  }
  return 0;
}

inline int cmd_ttf(const std::vector<std::string>& files, const std::vector<Minute>& horizons_flag, Minute cooldown,
                   const std::string& out, bool force) {
  const IntentSet intents;
  std::vector<std::pair<Minute, std::vector<AlertEvent>>> logs;
  for (std::size_t f = 0; f < files.size(); ++f) {
    auto ev = read_alerts_jsonl(files[f], intents);
    Minute h = 0;
    if (f < horizons_flag.size()) {
      h = horizons_flag[f];
    } else if (!ev.empty()) {
      h = ev.front().horizon;
    } else {
      throw UsageError(files[f] + " has no events; pass --horizons to name its horizon");
    }
    for (const auto& e : ev)
      if (e.horizon != h) throw DataError(files[f] + " mixes alert horizons");
    logs.emplace_back(h, std::move(ev));
  }
  std::sort(logs.begin(), logs.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Minute> hs;
  for (const auto& l : logs) hs.push_back(l.first);
  for (std::size_t j = 1; j < hs.size(); ++j)
    if (hs[j] == hs[j - 1]) throw UsageError("duplicate horizon across alert logs");

  Minute lo = std::numeric_limits<Minute>::max(), hi = std::numeric_limits<Minute>::min();
  for (const auto& l : logs)
    for (const auto& e : l.second) {
      lo = std::min(lo, e.t);
      hi = std::max(hi, e.t_end + cooldown);
    }

  std::ostringstream os;
  for (std::size_t i = 0; i < intents.size() && lo <= hi; ++i) {
    std::optional<TtfBound> cur;
    Minute since = lo;
    auto flush = [&](Minute until) {
      if (cur)
        os << json{{"intent", intents.name(i)}, {"from", since}, {"to", until},
                   {"lower", cur->lower}, {"upper", cur->upper}, {"consistent", cur->consistent}}
                  .dump()
           << '\n';
    };
    const bool was_quiet = log::quiet();
    log::quiet() = true;
    for (Minute m = lo; m <= hi; ++m) {
      std::vector<bool> fired(logs.size());
      for (std::size_t j = 0; j < logs.size(); ++j)
        for (const auto& e : logs[j].second)
          if (e.intent == i && event_active(e, m, cooldown)) fired[j] = true;
      const auto b = ttf_bound(hs, fired);
      if (b != cur) {
        flush(m - 1);
        cur = b;
        since = m;
      }
    }
    log::quiet() = was_quiet;
    flush(hi);
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    prepare_output_file(out, force);
    write_text(out, os.str());
  }
  return 0;
}

inline int cmd_report(const std::string& report_path, const std::string& out, bool force) {
  const EvalReport r = EvalReport::from_json(read_json_file(report_path));
  print_report(std::cout, r);
  if (!out.empty()) {
    prepare_output_dir(out, force);
    std::ofstream t(fs::path(out) / "table2.csv", std::ios::binary);
    write_table2_csv(t, r);
    if (r.methods.size() >= 2) {
      std::ofstream rc(fs::path(out) / "radar.csv", std::ios::binary);
      write_radar_csv(rc, percent_of_best(r));
    }
  }
  return 0;
}

}  // namespace cli_detail

/// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv) {
  using namespace cli_detail;
  CLI::App app{"Multi-intent drift forecasting and root-cause alerting", "mild"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mild 1.0");
  bool quiet = false;

  Overrides o;
  std::deque<std::string> storage;  // stable addresses for option targets
  bool force = false;
  std::string data_dir, out, model, alerts, method = "mild", mode = "exact", csv, report_path;
  int fold = 0;
  std::size_t index = 0;
  std::vector<std::string> alert_files;
  std::vector<Minute> horizons;
  Minute cooldown = 60;

  auto* gen = app.add_subcommand("generate", "generate a synthetic benchmark");
  add_globals(*gen, o, storage, quiet);
  o.bind(*gen, "--minutes", "minutes", "timeline length", storage);
  o.bind(*gen, "--episodes", "episodes", "failure episode count", storage);
  gen->add_option("--out", out, "output directory")->required();
  gen->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "train one model bundle");
  add_globals(*train, o, storage, quiet);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out, "model bundle path (JSON)")->required();
  train->add_option("--method", method, "mild, lr, mlp, wkpi or dist");
  train->add_option("--fold", fold, "train on the history of CV fold k only");
  o.bind(*train, "--horizon", "horizon", "label horizon in minutes", storage);
  train->add_flag("--force", force, "overwrite an existing bundle");

  auto* eval = app.add_subcommand("evaluate", "blocked cross-validation of several methods");
  add_globals(*eval, o, storage, quiet);
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out, "report directory")->required();
  o.bind(*eval, "--methods", "methods", "comma-separated method list", storage);
  o.bind(*eval, "--horizon", "horizon", "label horizon in minutes", storage);
  o.bind(*eval, "--blocks", "blocks", "contiguous CV blocks (folds = blocks - 1)", storage);
  eval->add_flag("--force", force, "overwrite a non-empty report directory");

  auto* str = app.add_subcommand("stream", "replay a dataset through a model bundle");
  add_globals(*str, o, storage, quiet);
  str->add_option("--model", model, "model bundle")->required();
  str->add_option("--data", data_dir, "dataset directory")->required();
  str->add_option("--out", out, "alert log (JSON lines)")->required();
  str->add_flag("--force", force, "overwrite an existing alert log");

  auto* exp = app.add_subcommand("explain", "Shapley attribution for one alert");
  add_globals(*exp, o, storage, quiet);
  exp->add_option("--model", model, "model bundle")->required();
  exp->add_option("--alerts", alerts, "alert log")->required();
  exp->add_option("--data", data_dir, "dataset directory the alerts came from")->required();
  exp->add_option("--index", index, "0-based alert index")->required();
  exp->add_option("--mode", mode, "exact (KPI groups), sampled (features) or sampled-groups");
  o.bind(*exp, "--permutations", "explain_permutations", "permutations for sampled modes", storage);
  exp->add_option("--csv", csv, "write feature,contribution CSV");

  auto* ttf = app.add_subcommand("ttf", "time-to-failure bounds from alert logs of several horizons");
  add_globals(*ttf, o, storage, quiet);
  ttf->add_option("--alerts", alert_files, "alert logs, one per horizon")->required();
  ttf->add_option("--horizons", horizons, "horizon of each log (default: read from events)")->delimiter(',');
  ttf->add_option("--cooldown", cooldown, "alert cooldown used by the streams");
  ttf->add_option("--out", out, "output JSON lines (default stdout)");
  ttf->add_flag("--force", force, "overwrite an existing output");

  auto* rep = app.add_subcommand("report", "print a saved evaluation report");
  add_globals(*rep, o, storage, quiet);
  rep->add_option("--report", report_path, "report.json")->required();
  rep->add_option("--out", out, "write table2.csv and radar.csv here");
  rep->add_flag("--force", force, "overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const bool was_quiet = log::quiet();
  log::quiet() = was_quiet || quiet;
  int rc = 0;
  try {
    const RunConfig cfg = o.resolve();
    if (*gen) rc = cmd_generate(cfg, out, force);
    else if (*train) rc = cmd_train(cfg, data_dir, out, method, fold, force);
    else if (*eval) rc = cmd_evaluate(cfg, data_dir, out, force);
    else if (*str) rc = cmd_stream(model, data_dir, out, force);
    else if (*exp) rc = cmd_explain(cfg, model, alerts, data_dir, index, mode, csv);
    else if (*ttf) rc = cmd_ttf(alert_files, horizons, cooldown, out, force);
    else if (*rep) rc = cmd_report(report_path, out, force);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    rc = 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    rc = 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    rc = 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    rc = 2;
  }
  log::quiet() = was_quiet;
  return rc;
}

}  // namespace mild
