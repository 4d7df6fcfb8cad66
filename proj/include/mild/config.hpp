#pragma once

// Run configuration: a plain `key = value` file ('#' starts a comment)
// layered under command-line flags. Every knob of the generator, the losses,
// training and alerting is reachable by key.

#include <charconv>
#include <functional>
#include <map>

#include "mild/alerting.hpp"
#include "mild/baselines.hpp"
#include "mild/synthgen.hpp"

namespace mild {

/// Malformed configuration or flags (CLI exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw UsageError(fmt::format("config: bad value '{}' for {}", v, key));
  return out;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto item = trim(std::string_view(v).substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

struct RunConfig {
  std::uint64_t seed = 42;
  GenConfig gen{};
  FitConfig fit{};
  Minute horizon = 120;
  std::vector<Minute> horizons = {120, 60, 30};
  std::vector<std::string> methods = {"mild", "lr", "mlp", "wkpi", "dist"};
  double ewma_span = 15.0;
  Minute cooldown = 60;
  double fp_budget_per_day = 1.0;
  std::size_t blocks = 11;
  unsigned jobs = 1;
  std::size_t explain_permutations = 200;

  /// Propagates the single seed into every random consumer.
  void set_seed(std::uint64_t s) {
    seed = s;
    gen.seed = s;
    fit.train.seed = s;
  }

  AlertPolicy policy(std::size_t intents) const {
    AlertPolicy p = AlertPolicy::defaults(intents, ewma_span);
    p.cooldown = cooldown;
    p.fp_budget_per_day = fp_budget_per_day;
    return p;
  }

  std::vector<Method> method_list() const {
    std::vector<Method> out;
    for (const auto& m : methods) {
      try {
        out.push_back(method_from(m));
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
    return out;
  }

  void set(const std::string& key, const std::string& value) {
    const auto& setters = table();
    auto it = setters.find(key);
    if (it == setters.end()) throw UsageError(fmt::format("config: unknown key '{}'", key));
    it->second(*this, key, value);
  }

  /// Applies every `key = value` line of a config file.
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto t = detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw UsageError(fmt::format("{}:{}: expected key = value", path, n));
      set(detail::trim(std::string_view(t).substr(0, eq)), detail::trim(std::string_view(t).substr(eq + 1)));
    }
  }

  void validate() const {
    try {
      gen.validate();
      fit.loss.validate();
      policy(3).validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (horizon < 1) throw UsageError("horizon must be positive");
    if (horizons.empty()) throw UsageError("horizons must not be empty");
    if (fit.train.batch_size == 0 || fit.train.max_epochs < 1 || fit.train.patience < 1)
      throw UsageError("training budget must be positive");
    if (!(fit.train.validation_fraction >= 0 && fit.train.validation_fraction < 1))
      throw UsageError("validation_fraction must lie in [0,1)");
    method_list();
  }

  json to_json() const {
    json j = json::object();
    for (const auto& kv : table()) j[kv.first] = get(kv.first);
    return j;
  }

  /// Current value of `key` rendered as it would appear in a config file.
  std::string get(const std::string& key) const {
    const auto& g = getters();
    auto it = g.find(key);
    if (it == g.end()) throw UsageError(fmt::format("config: unknown key '{}'", key));
    return it->second(*this);
  }

 private:
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  using Getter = std::function<std::string(const RunConfig&)>;

  struct Registry {
    std::map<std::string, Setter> set;
    std::map<std::string, Getter> get;
  };

  static const Registry& registry() {
    static const Registry r = [] {
      Registry r;
      using detail::parse_number;
      auto num = [&r](const std::string& key, auto member) {
        using T = std::remove_reference_t<decltype(member(std::declval<RunConfig&>()))>;
        r.set[key] = [member](RunConfig& c, const std::string& k, const std::string& v) {
          member(c) = parse_number<T>(k, v);
        };
        r.get[key] = [member](const RunConfig& c) {
          return fmt::format("{}", member(const_cast<RunConfig&>(c)));
        };
      };
      r.set["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
        c.set_seed(parse_number<std::uint64_t>(k, v));
      };
      r.get["seed"] = [](const RunConfig& c) { return fmt::format("{}", c.seed); };
      num("minutes", [](RunConfig& c) -> Minute& { return c.gen.total_minutes; });
      num("episodes", [](RunConfig& c) -> std::size_t& { return c.gen.episode_count; });
      num("mix_non_linear", [](RunConfig& c) -> double& { return c.gen.mix_non_linear; });
      num("mix_co_drift", [](RunConfig& c) -> double& { return c.gen.mix_co_drift; });
      num("mix_simple", [](RunConfig& c) -> double& { return c.gen.mix_simple; });
      num("hard_negative_rate", [](RunConfig& c) -> double& { return c.gen.hard_negative_rate; });
      num("seasonality_period", [](RunConfig& c) -> Minute& { return c.gen.seasonality_period; });
      num("ramp_min", [](RunConfig& c) -> Minute& { return c.gen.ramp_min; });
      num("ramp_max", [](RunConfig& c) -> Minute& { return c.gen.ramp_max; });
      num("lag_min", [](RunConfig& c) -> Minute& { return c.gen.lag_min; });
      num("lag_max", [](RunConfig& c) -> Minute& { return c.gen.lag_max; });
      num("attenuation_min", [](RunConfig& c) -> double& { return c.gen.attenuation_min; });
      num("attenuation_max", [](RunConfig& c) -> double& { return c.gen.attenuation_max; });
      num("horizon_guard", [](RunConfig& c) -> Minute& { return c.gen.horizon_guard; });
      num("alpha", [](RunConfig& c) -> double& { return c.fit.loss.alpha; });
      num("focal_gamma", [](RunConfig& c) -> double& { return c.fit.loss.focal_gamma; });
      num("w_c", [](RunConfig& c) -> double& { return c.fit.loss.w_c; });
      num("w_T", [](RunConfig& c) -> double& { return c.fit.loss.w_T; });
      num("lambda_s", [](RunConfig& c) -> double& { return c.fit.loss.lambda_s; });
      num("lambda_gate", [](RunConfig& c) -> double& { return c.fit.loss.lambda_gate; });
      num("lambda_decorr", [](RunConfig& c) -> double& { return c.fit.loss.lambda_decorr; });
      num("temperature", [](RunConfig& c) -> double& { return c.fit.loss.teacher_temperature; });
      num("lr", [](RunConfig& c) -> double& { return c.fit.train.adam.lr; });
      num("batch_size", [](RunConfig& c) -> std::size_t& { return c.fit.train.batch_size; });
      num("max_epochs", [](RunConfig& c) -> int& { return c.fit.train.max_epochs; });
      num("patience", [](RunConfig& c) -> int& { return c.fit.train.patience; });
      num("validation_fraction", [](RunConfig& c) -> double& { return c.fit.train.validation_fraction; });
      num("clip_norm", [](RunConfig& c) -> double& { return c.fit.train.clip_norm; });
      num("teacher_l2", [](RunConfig& c) -> double& { return c.fit.teacher.l2; });
      num("teacher_max_iterations", [](RunConfig& c) -> int& { return c.fit.teacher.max_iterations; });
      num("dist_tol_scale", [](RunConfig& c) -> double& { return c.fit.dist_tol_scale; });
      num("horizon", [](RunConfig& c) -> Minute& { return c.horizon; });
      num("ewma_span", [](RunConfig& c) -> double& { return c.ewma_span; });
      num("cooldown", [](RunConfig& c) -> Minute& { return c.cooldown; });
      num("fp_budget", [](RunConfig& c) -> double& { return c.fp_budget_per_day; });
      num("blocks", [](RunConfig& c) -> std::size_t& { return c.blocks; });
      num("jobs", [](RunConfig& c) -> unsigned& { return c.jobs; });
      num("explain_permutations", [](RunConfig& c) -> std::size_t& { return c.explain_permutations; });
      r.set["methods"] = [](RunConfig& c, const std::string&, const std::string& v) { c.methods = detail::split_list(v); };
      r.get["methods"] = [](const RunConfig& c) { return fmt::format("{}", fmt::join(c.methods, ",")); };
      r.set["horizons"] = [](RunConfig& c, const std::string& k, const std::string& v) {
        c.horizons.clear();
        for (const auto& h : detail::split_list(v)) c.horizons.push_back(parse_number<Minute>(k, h));
      };
      r.get["horizons"] = [](const RunConfig& c) { return fmt::format("{}", fmt::join(c.horizons, ",")); };
      return r;
    }();
    return r;
  }
  static const std::map<std::string, Setter>& table() { return registry().set; }
  static const std::map<std::string, Getter>& getters() { return registry().get; }
};

}  // namespace mild
