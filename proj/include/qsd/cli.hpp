#pragma once

// Batch front-end: `qsd <subcommand> [flags]`.
//
// Exit codes: 0 success, 1 runtime error, 2 usage or invalid config,
// 3 a certificate was refused or a bound failed its validation grid.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qsd/converse.hpp"
#include "qsd/ergodic.hpp"
#include "qsd/estimator.hpp"
#include "qsd/io.hpp"
#include "qsd/models.hpp"
#include "qsd/qprocess.hpp"
#include "qsd/spectral.hpp"

#ifndef QSD_VERSION
#define QSD_VERSION "0.1.0"
#endif

namespace qsd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitVerification = 3;

using json = nlohmann::json;

/// Invalid configuration, with the 1-based line it was found on (0 if unknown).
class ConfigError : public InvalidArgument {
 public:
  ConfigError(std::size_t line, const std::string& what)
      : InvalidArgument(line ? "config:" + std::to_string(line) + ": " + what : "config: " + what) {}
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

inline long parse_long(const std::string& s) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    throw InvalidArgument("not an integer: '" + s + "'");
  }
  if (used != s.size()) throw InvalidArgument("not an integer: '" + s + "'");
  return v;
}

inline double parse_real(const std::string& s) {
  double v = 0.0;
  if (!qsd::detail::parse_double(s, v)) throw InvalidArgument("not a number: '" + s + "'");
  return v;
}

}  // namespace detail

/// "a:b" (inclusive), "a:b:step" or "a,b,c".
inline std::vector<Step> parse_steps(const std::string& text) {
  std::vector<Step> out;
  for (const auto& part : detail::split(text, ',')) {
    if (part.empty()) continue;
    const auto range = detail::split(part, ':');
    if (range.size() == 1) {
      out.push_back(detail::parse_long(range[0]));
    } else if (range.size() == 2 || range.size() == 3) {
      const long a = detail::parse_long(range[0]);
      const long b = detail::parse_long(range[1]);
      const long step = range.size() == 3 ? detail::parse_long(range[2]) : 1;
      if (step <= 0 || b < a) throw InvalidArgument("bad range '" + part + "'");
      for (long v = a; v <= b; v += step) out.push_back(v);
    } else {
      throw InvalidArgument("bad range '" + part + "'");
    }
  }
  if (out.empty()) throw InvalidArgument("empty grid '" + text + "'");
  return out;
}

/// Comma-separated reals, or "indicator:<k>".
inline Vector parse_function(const std::string& text, std::size_t n) {
  Vector f;
  if (text.rfind("indicator:", 0) == 0) {
    const long k = detail::parse_long(text.substr(10));
    if (k < 0 || static_cast<std::size_t>(k) >= n) throw InvalidArgument("indicator state out of range");
    f.assign(n, 0.0);
    f[static_cast<std::size_t>(k)] = 1.0;
    return f;
  }
  for (const auto& part : detail::split(text, ',')) f.push_back(detail::parse_real(part));
  if (f.size() != n) throw InvalidArgument("f has " + std::to_string(f.size()) + " entries, kernel has " + std::to_string(n));
  return f;
}

/// Effective configuration: config file values overridden by explicit flags.
class Config {
 public:
  Config() = default;

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(0, "cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    Config c;
    c.text_ = buf.str();
    c.base_dir_ = path.parent_path();
    try {
      c.values_ = json::parse(c.text_);
    } catch (const json::parse_error& e) {
      throw ConfigError(c.line_of_byte(e.byte), e.what());
    }
    if (!c.values_.is_object()) throw ConfigError(1, "top level must be a JSON object");
    return c;
  }

  json& values() { return values_; }
  const json& values() const { return values_; }
  bool has(const std::string& key) const { return values_.contains(key); }

  /// Line of the first occurrence of "key" in the source text.
  std::size_t line_of(const std::string& key) const {
    const auto pos = text_.find('"' + key + '"');
    if (pos == std::string::npos) return 0;
    return line_of_byte(pos + 1);
  }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (!values_.contains(key)) return fallback;
    try {
      return values_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(line_of(key), "key '" + key + "': " + e.what());
    }
  }

  /// A grid given either as a string ("1:200") or a JSON array of integers.
  std::vector<Step> steps(const std::string& key, const std::string& fallback) const {
    try {
      if (!values_.contains(key)) return parse_steps(fallback);
      const auto& v = values_.at(key);
      if (v.is_string()) return parse_steps(v.get<std::string>());
      return v.get<std::vector<Step>>();
    } catch (const std::exception& e) {
      throw ConfigError(line_of(key), "key '" + key + "': " + e.what());
    }
  }

  Vector function(const std::string& key, std::size_t n) const {
    try {
      if (!values_.contains(key)) return parse_function("indicator:0", n);
      const auto& v = values_.at(key);
      if (v.is_string()) return parse_function(v.get<std::string>(), n);
      Vector f = v.get<Vector>();
      if (f.size() != n) throw InvalidArgument("f has the wrong length");
      return f;
    } catch (const std::exception& e) {
      throw ConfigError(line_of(key), "key '" + key + "': " + e.what());
    }
  }

  ModelSpec model_spec(const json& node) const {
    ModelSpec spec;
    std::string key = "kind";
    try {
      spec.kind = node.at(key).get<std::string>();
      key = "n";
      spec.n = node.at(key).get<std::size_t>();
      key = "seed";
      spec.seed = node.value(key, std::uint64_t{0});
      key = "params";
      if (node.contains(key))
        for (const auto& [name, v] : node.at(key).items()) {
          key = name;
          spec.params[name] = v.get<double>();
        }
    } catch (const json::exception& e) {
      throw ConfigError(line_of(key), "model spec key '" + key + "': " + e.what());
    }
    return spec;
  }

  /// Kernel from "kernel" (file path, relative to the config file) or a
  /// model spec under "model" or at top level.
  SubStochasticKernel kernel() const {
    if (values_.contains("kernel")) {
      std::filesystem::path p = get<std::string>("kernel", "");
      if (p.is_relative() && !from_flag_.count("kernel")) p = base_dir_ / p;
      return load_kernel(p);
    }
    const json* node = nullptr;
    if (values_.contains("model")) node = &values_.at("model");
    else if (values_.contains("kind")) node = &values_;
    if (!node) throw ConfigError(0, "no kernel: pass --kernel or give 'kernel' / 'model' in the config");
    try {
      return models::build(model_spec(*node));
    } catch (const InvalidArgument& e) {
      throw ConfigError(line_of("kind"), e.what());
    }
  }

  void set_flag(const std::string& key, json value) {
    values_[key] = std::move(value);
    from_flag_[key] = true;
  }

  std::string hash() const { return detail::hex64(detail::fnv1a(values_.dump())); }

 private:
  std::size_t line_of_byte(std::size_t byte) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < byte && i < text_.size(); ++i)
      if (text_[i] == '\n') ++line;
    return line;
  }

  std::string text_;
  std::filesystem::path base_dir_;
  json values_ = json::object();
  std::map<std::string, bool> from_flag_;
};

/// Everything one invocation writes, committed at the end.
class Artifacts {
 public:
  explicit Artifacts(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string contents) { files_.emplace_back(name, std::move(contents)); }

  void commit(const std::string& subcommand, const Config& cfg, std::uint64_t seed) const {
    std::filesystem::create_directories(dir_);
    json manifest;
    manifest["subcommand"] = subcommand;
    manifest["config_hash"] = cfg.hash();
    manifest["seed"] = seed;
    manifest["version"] = QSD_VERSION;
    json outputs = json::array();
    for (const auto& [name, contents] : files_) {
      write_file_atomic(dir_ / name, contents);
      outputs.push_back({{"file", name}, {"fnv1a", detail::hex64(detail::fnv1a(contents))}});
    }
    manifest["outputs"] = outputs;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    manifest["timestamp"] = stamp;
    write_file_atomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

namespace detail {

inline std::string fmt(double v) { return format_double(v); }

inline std::string report_csv(const BoundReport& r) {
  std::ostringstream out;
  out << "name=" << r.name << " constant=" << fmt(r.constant) << " rate=" << fmt(r.rate)
      << " max_violation=" << fmt(r.max_violation);
  if (!std::isnan(r.observed_rate)) out << " observed_rate=" << fmt(r.observed_rate);
  for (const auto& [k, v] : r.extras) out << ' ' << k << '=' << fmt(v);
  out << "\nt,T,observed,bound,ratio\n";
  for (const auto& p : r.grid())
    out << p.t << ',' << p.T << ',' << fmt(p.observed) << ',' << fmt(p.bound) << ',' << fmt(p.ratio) << '\n';
  return out.str();
}

struct Rates {
  double gamma;
  double gamma_prime;
};

inline Rates fitted_rates(const SubStochasticKernel& k, const SpectralTriple& s) {
  const QKernel q = build_q_kernel(k, s);
  std::vector<Step> grid;
  for (Step t = 1; t <= 200; ++t) grid.push_back(t);
  return {conditioned_rate(k, s), q_mixing_report(q, grid).rate};
}

}  // namespace detail

struct Options {
  std::string kernel;
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

namespace commands {

inline int model(Config& cfg, const Options& opt, Artifacts& art) {
  ModelSpec spec = cfg.model_spec(cfg.has("model") ? cfg.values().at("model") : cfg.values());
  SubStochasticKernel k;
  try {
    k = models::build(spec);
  } catch (const InvalidArgument& e) {
    throw ConfigError(cfg.line_of("kind"), e.what());
  }
  art.add("kernel.txt", kernel_to_string(k));
  const Step t0_max = cfg.get<Step>("quality_t0_max", 0);
  if (t0_max > 0) {
    std::ostringstream csv;
    csv << "n,t0,c1\n";
    for (const auto& row : condition_quality(k, t0_max))
      csv << row.n << ',' << row.t0 << ',' << detail::fmt(row.c1) << '\n';
    art.add("condition_quality.csv", csv.str());
  }
  (void)opt;
  return kExitOk;
}

inline int spectral(Config& cfg, const Options&, Artifacts& art) {
  const auto k = cfg.kernel();
  const auto s = compute_spectral(k, {cfg.get<double>("tol", 1e-12), cfg.get<long>("max_iters", 1'000'000)});
  std::ostringstream csv;
  csv << "rho=" << detail::fmt(s.rho) << " lambda0_per_step=" << detail::fmt(s.lambda0())
      << " residual=" << detail::fmt(s.residual) << '\n';
  csv << "state,alpha,eta,beta\n";
  for (std::size_t x = 0; x < k.size(); ++x)
    csv << x << ',' << detail::fmt(s.alpha[x]) << ',' << detail::fmt(s.eta[x]) << ',' << detail::fmt(s.beta[x]) << '\n';
  art.add("spectral.csv", csv.str());

  const Step t0 = cfg.get<Step>("minorization_t0", 0);
  if (t0 > 0) {
    MinorizationCert cert;
    try {
      cert = certify_minorization(k, t0, cfg.get<Step>("horizon", 0));
    } catch (const CertificationFailure& e) {
      std::cerr << "qsd: " << e.what() << '\n';
      return kExitVerification;
    }
    std::ostringstream m;
    m << "t0=" << cert.t0 << " c1=" << detail::fmt(cert.c1) << " c2=" << detail::fmt(cert.c2)
      << " horizon=" << cert.horizon << " tail_bound=" << detail::fmt(cert.tail_bound) << '\n';
    m << "state,nu\n";
    for (std::size_t x = 0; x < k.size(); ++x) m << x << ',' << detail::fmt(cert.nu[x]) << '\n';
    art.add("minorization.csv", m.str());
  }
  return kExitOk;
}

inline int verify(Config& cfg, const Options&, Artifacts& art) {
  const auto k = cfg.kernel();
  const auto s = compute_spectral(k);
  const double gamma = conditioned_rate(k, s);
  const QKernel q = build_q_kernel(k, s);

  const auto eta = verify_eta_bound(k, s, cfg.steps("t_grid", "1:200"), gamma);
  std::vector<std::pair<Step, Step>> pairs;
  for (Step t : cfg.steps("pair_t_grid", "1:10"))
    for (Step lag : cfg.steps("lag_grid", "1:50")) pairs.emplace_back(t, t + lag);
  const auto approx = verify_qproc_approx(k, s, q, pairs, gamma);
  const auto mixing = q_mixing_report(q, cfg.steps("mix_grid", "1:60"));

  art.add("eta_bound.csv", detail::report_csv(eta));
  art.add("qproc_approx.csv", detail::report_csv(approx));
  art.add("q_mixing.csv", detail::report_csv(mixing));
  for (const auto* r : {&eta, &approx, &mixing})
    std::cout << r->name << ": constant=" << detail::fmt(r->constant) << " rate=" << detail::fmt(r->rate)
              << " max_violation=" << detail::fmt(r->max_violation) << '\n';
  const bool ok = eta.valid() && approx.valid() && mixing.valid();
  return ok ? kExitOk : kExitVerification;
}

inline int ergodic(Config& cfg, const Options&, Artifacts& art) {
  const auto k = cfg.kernel();
  const auto s = compute_spectral(k);
  const Vector f = cfg.function("f", k.size());
  const auto T_grid = cfg.steps("T_grid", "10:200");
  const std::string plan = cfg.get<std::string>("plan", "uniform");

  BoundReport r;
  std::ostringstream csv;
  if (plan == "uniform") {
    r = verify_ergodic_theorem(k, s, f, T_grid);
    csv << "name=" << r.name << " constant=" << detail::fmt(r.constant) << " max_violation=" << detail::fmt(r.max_violation);
    for (const auto& [key, v] : r.extras) csv << ' ' << key << '=' << detail::fmt(v);
    csv << "\nT,error,bound,ratio\n";
    for (const auto& p : r.grid())
      csv << p.T << ',' << detail::fmt(p.observed) << ',' << detail::fmt(p.bound) << ',' << detail::fmt(p.ratio) << '\n';
  } else {
    const auto rates = detail::fitted_rates(k, s);
    std::optional<Step> fixed;
    if (plan.rfind("dirac:", 0) == 0) {
      try {
        fixed = detail::parse_long(plan.substr(6));
      } catch (const InvalidArgument& e) {
        throw ConfigError(cfg.line_of("plan"), e.what());
      }
    } else if (plan != "optimal") {
      throw ConfigError(cfg.line_of("plan"), "plan must be uniform, optimal or dirac:<t>");
    }
    std::vector<SamplingPlan> plans;
    for (Step T : T_grid) {
      const Step t = fixed ? *fixed : optimal_t0(rates.gamma, rates.gamma_prime, T);
      if (t <= T) plans.push_back(SamplingPlan::dirac(t, T));
    }
    if (plans.empty()) throw ConfigError(cfg.line_of("plan"), "no T in the grid admits the Dirac time");
    const std::size_t n_fit = (plans.size() + 1) / 2;
    const std::vector<SamplingPlan> fit(plans.begin(), plans.begin() + static_cast<long>(n_fit));
    const std::vector<SamplingPlan> val(plans.begin() + static_cast<long>(n_fit), plans.end());
    r = verify_general_bound(k, s, rates.gamma, rates.gamma_prime, f, fit, val);
    csv << "name=" << r.name << " constant=" << detail::fmt(r.constant) << " rate=" << detail::fmt(r.rate)
        << " gamma_prime=" << detail::fmt(rates.gamma_prime) << " max_violation=" << detail::fmt(r.max_violation);
    csv << "\nt,T,error,bound,ratio\n";
    for (const auto& p : r.grid())
      csv << p.t << ',' << p.T << ',' << detail::fmt(p.observed) << ',' << detail::fmt(p.bound) << ','
          << detail::fmt(p.ratio) << '\n';
  }
  art.add("ergodic.csv", csv.str());
  return r.valid() ? kExitOk : kExitVerification;
}

inline const char* kEstimateHeader = "N,T,t0,N_T,estimate,stderr,exact,abs_error,predicted\n";

inline int estimate(Config& cfg, const Options& opt, Artifacts& art) {
  const auto k = cfg.kernel();
  const auto s = compute_spectral(k);
  const auto rates = detail::fitted_rates(k, s);
  const Vector f = cfg.function("f", k.size());
  const auto N = cfg.get<std::size_t>("N", 10000);
  const auto x0 = cfg.get<std::size_t>("x0", 0);
  if (x0 >= k.size()) throw ConfigError(cfg.line_of("x0"), "x0 out of range");
  const auto pred = predict_tradeoff_for_N(s.lambda0(), rates.gamma, rates.gamma_prime, static_cast<double>(N));
  const Step T = cfg.get<Step>("T", std::max<Step>(1, static_cast<Step>(std::llround(pred.T_star))));
  const Step t0 = cfg.get<Step>("t0", optimal_t0(rates.gamma, rates.gamma_prime, T));
  if (T < 0 || t0 < 0 || t0 > T) throw ConfigError(cfg.line_of("t0"), "need 0 <= t0 <= T");

  const auto batch = simulate(k, x0, T, N, opt.seed, opt.threads);
  const double exact = s.beta_of(f);
  const double predicted = global_error(s.lambda0(), rates.gamma, rates.gamma_prime, static_cast<double>(N),
                                        static_cast<double>(T));
  std::ostringstream csv;
  csv << kEstimateHeader;
  csv << N << ',' << T << ',' << t0 << ',' << batch.N_T << ',';
  int status = kExitOk;
  if (batch.N_T < 2) {
    csv << "nan,nan," << detail::fmt(exact) << ",nan," << detail::fmt(predicted) << '\n';
    status = kExitVerification;
  } else {
    const auto e = estimate_beta(batch, f, SamplingPlan::dirac(t0, T));
    csv << detail::fmt(e.value) << ',' << detail::fmt(e.std_error) << ',' << detail::fmt(exact) << ','
        << detail::fmt(std::abs(e.value - exact)) << ',' << detail::fmt(predicted) << '\n';
  }
  art.add("estimate.csv", csv.str());
  return status;
}

inline int sweep(Config& cfg, const Options& opt, Artifacts& art) {
  const auto k = cfg.kernel();
  const auto s = compute_spectral(k);
  const auto rates = detail::fitted_rates(k, s);
  const Vector f = cfg.function("f", k.size());
  std::vector<std::size_t> N_list;
  for (Step v : cfg.steps("N_list", "100,1000,10000,100000,1000000")) {
    if (v < 1) throw ConfigError(cfg.line_of("N_list"), "N must be >= 1");
    N_list.push_back(static_cast<std::size_t>(v));
  }
  SweepOptions so;
  so.x0 = cfg.get<std::size_t>("x0", 0);
  so.gamma = rates.gamma;
  so.gamma_prime = rates.gamma_prime;
  so.threads = opt.threads;
  const auto rows = sweep_error_vs_N(k, s, f, N_list, cfg.get<std::size_t>("replications", 32), opt.seed, so);

  std::ostringstream csv;
  csv << kEstimateHeader;
  bool flagged = false;
  for (const auto& r : rows) {
    csv << r.N << ',' << r.T << ',' << r.t0 << ',' << detail::fmt(r.N_T) << ',';
    if (r.flagged) {
      flagged = true;
      csv << "nan,nan," << detail::fmt(r.exact) << ",nan," << detail::fmt(r.predicted) << '\n';
    } else {
      csv << detail::fmt(r.estimate) << ',' << detail::fmt(r.std_error) << ',' << detail::fmt(r.exact) << ','
          << detail::fmt(r.abs_error) << ',' << detail::fmt(r.predicted) << '\n';
    }
  }
  art.add("sweep.csv", csv.str());
  const double zeta = error_exponent(s.lambda0(), rates.gamma, rates.gamma_prime);
  std::cout << "zeta=" << detail::fmt(zeta) << " fitted_slope=" << detail::fmt(loglog_slope(rows)) << '\n';
  return flagged ? kExitVerification : kExitOk;
}

inline int converse(Config& cfg, const Options& opt, Artifacts& art) {
  const auto k = cfg.kernel();
  ConverseLimits limits;
  limits.t1_max = cfg.get<Step>("t1_max", limits.t1_max);
  limits.T_limit = cfg.get<Step>("T_limit", limits.T_limit);
  limits.decay_T_max = cfg.get<Step>("decay_T_max", limits.decay_T_max);
  limits.threads = opt.threads;
  const auto r = certify_converse(k, limits);
  std::ostringstream csv;
  csv << "certified=" << (r.certified ? 1 : 0) << " t1=" << r.t1 << " T1=" << r.T1 << " delta=" << detail::fmt(r.delta)
      << " stabilization_gap=" << detail::fmt(r.stabilization_gap) << '\n';
  csv << "T,sup_pair_tv,envelope\n";
  for (const auto& p : r.decay_curve)
    csv << p.T << ',' << detail::fmt(p.sup_pair_tv) << ',' << detail::fmt(p.envelope) << '\n';
  art.add("converse.csv", csv.str());
  if (!r.certified) {
    std::ostringstream frontier;
    frontier << "t1,T1,sup_delta\n";
    for (const auto& f : r.frontier) frontier << f.t1 << ',' << f.T1 << ',' << detail::fmt(f.sup_delta) << '\n';
    art.add("converse_frontier.csv", frontier.str());
    std::cerr << "qsd: converse contraction not certified within the search limits\n";
    return kExitVerification;
  }
  return kExitOk;
}

}  // namespace commands

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  CLI::App app{"Quasi-stationary distributions and the Q-process for absorbed finite Markov chains", "qsd"};
  app.require_subcommand(1);
  Options opt;
  std::map<std::string, std::string> raw;

  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(Config&, const Options&, Artifacts&);
  };
  const Sub subs[] = {
      {"model", "write a model-zoo kernel file", commands::model},
      {"spectral", "QSD, survival eigenvalue, eta and beta", commands::spectral},
      {"verify", "fit and validate the eta, Q-approximation and Q-mixing bounds", commands::verify},
      {"ergodic", "conditional time averages against beta(f)", commands::ergodic},
      {"estimate", "one seeded Monte Carlo estimate of beta(f)", commands::estimate},
      {"sweep", "median Monte Carlo error as N grows at the optimal horizon", commands::sweep},
      {"converse", "bridge-operator contraction certificate", commands::converse},
  };
  // flag name -> config key
  const std::vector<std::pair<std::string, std::string>> passthrough{
      {"--f", "f"},           {"--T-grid", "T_grid"},     {"--plan", "plan"},     {"--t-grid", "t_grid"},
      {"--lag-grid", "lag_grid"}, {"--pair-t-grid", "pair_t_grid"}, {"--mix-grid", "mix_grid"},
      {"--N", "N"},           {"--T", "T"},               {"--t0", "t0"},         {"--x0", "x0"},
      {"--N-list", "N_list"}, {"--replications", "replications"}, {"--kind", "kind"}, {"--n", "n"},
      {"--minorization-t0", "minorization_t0"}, {"--horizon", "horizon"}, {"--quality-t0-max", "quality_t0_max"},
      {"--t1-max", "t1_max"}, {"--T-limit", "T_limit"},  {"--decay-T-max", "decay_T_max"}};

  std::vector<std::string> params;
  CLI::App* chosen = nullptr;
  std::vector<CLI::App*> apps;
  for (const auto& sub : subs) {
    CLI::App* s = app.add_subcommand(sub.name, sub.help);
    s->add_option("--kernel", opt.kernel, "kernel file");
    s->add_option("--config", opt.config, "JSON experiment config");
    s->add_option("--out", opt.out, "output directory")->capture_default_str();
    s->add_option("--seed", opt.seed, "random seed")->capture_default_str();
    s->add_option("--threads", opt.threads, "worker threads (results do not depend on it)")->capture_default_str();
    for (const auto& [flag, key] : passthrough) s->add_option(flag, raw[key]);
    s->add_option("--param", params, "model parameter name=value (repeatable)");
    apps.push_back(s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, std::cout, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, std::cout, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    err << app.help();
    return kExitUsage;
  }
  std::size_t which = 0;
  for (std::size_t i = 0; i < apps.size(); ++i)
    if (apps[i]->parsed()) {
      chosen = apps[i];
      which = i;
    }
  if (!chosen) {
    err << app.help();
    return kExitUsage;
  }

  try {
    Config cfg = opt.config.empty() ? Config() : Config::load(opt.config);
    if (!opt.kernel.empty()) cfg.set_flag("kernel", opt.kernel);
    auto as_number_or_string = [](const std::string& v) -> json {
      double d = 0.0;
      if (qsd::detail::parse_double(v, d)) {
        if (d == std::floor(d) && std::abs(d) < 9e15 && v.find_first_of(".eE") == std::string::npos)
          return static_cast<long long>(d);
        return d;
      }
      return v;
    };
    for (const auto& [key, value] : raw)
      if (!value.empty()) cfg.set_flag(key, as_number_or_string(value));
    if (!params.empty()) {
      json p = cfg.has("params") ? cfg.values().at("params") : json::object();
      for (const auto& kv : params) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError(0, "--param expects name=value, got '" + kv + "'");
        p[kv.substr(0, eq)] = detail::parse_real(kv.substr(eq + 1));
      }
      cfg.set_flag("params", p);
    }
    if (chosen->count("--seed") || !cfg.has("seed")) cfg.set_flag("seed", opt.seed);
    else opt.seed = cfg.get<std::uint64_t>("seed", opt.seed);

    Artifacts art(opt.out);
    const int status = subs[which].fn(cfg, opt, art);
    art.commit(subs[which].name, cfg, opt.seed);
    return status;
  } catch (const InvalidArgument& e) {
    err << "qsd: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CertificationFailure& e) {
    err << "qsd: " << e.what() << '\n';
    return kExitVerification;
  } catch (const std::exception& e) {
    err << "qsd: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace qsd::cli
