#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pdv/assumptions.hpp"
#include "pdv/calibration.hpp"
#include "pdv/config.hpp"
#include "pdv/features.hpp"
#include "pdv/simulator.hpp"
#include "pdv/synthetic.hpp"

namespace pdv {

// Exit codes shared by all subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitExistenceOnly = 2;
inline constexpr int kExitNeither = 3;

struct CliOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  unsigned threads = 0;
};

namespace cli {

namespace fs = std::filesystem;

inline int exit_code(Guarantee g) {
  switch (g) {
    case Guarantee::existence_and_positivity: return kExitOk;
    case Guarantee::existence: return kExitExistenceOnly;
    case Guarantee::neither: return kExitNeither;
  }
  return kExitError;
}

// Data files are fully rewritten on every run.
inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

inline std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

class Context {
 public:
  Context(std::string command, const CliOptions& opt, std::ostream& out)
      : command_(std::move(command)), opt_(opt), out_(out) {
    cfg_ = load_config(opt.config);
    if (!opt.out.empty()) cfg_.out_dir = opt.out;
    if (opt.seed) {
      cfg_.sim.seed = *opt.seed;
      cfg_.calib.seed = *opt.seed;
      cfg_.synth.seed = *opt.seed;
    }
    if (opt.force) cfg_.sim.force = true;
    cfg_.sim.threads = opt.threads;
    cfg_.calib.spec.threads = opt.threads;
    std::error_code ec;
    fs::create_directories(cfg_.out_dir, ec);
    if (!fs::is_directory(cfg_.out_dir)) throw ConfigError("cannot create output directory " + cfg_.out_dir.string());
    log("start config=" + opt.config);
  }

  RunConfig& config() noexcept { return cfg_; }
  std::ostream& out() noexcept { return out_; }
  fs::path path(const std::string& name) const { return cfg_.out_dir / name; }

  void save(const std::string& name, const std::string& text) {
    write_file(path(name), text);
    out_ << "wrote " << path(name).string() << "\n";
    log("wrote " + name);
  }

  // Timestamps live only in this sidecar log.
  void log(const std::string& message) const {
    std::ofstream os(cfg_.out_dir / "pdv.log", std::ios::app);
    if (os) os << timestamp() << ' ' << command_ << ' ' << message << '\n';
  }

 private:
  std::string command_;
  CliOptions opt_;
  std::ostream& out_;
  RunConfig cfg_;
};

inline MarketDataset load_market(const RunConfig& c) {
  const auto& d = c.data;
  if (!d.prices) throw ConfigError("[data] prices is required for this command");
  if (!d.proxy) throw ConfigError("[data] proxy is required for this command");
  if (!d.split) throw ConfigError("[data] split is required for this command");
  auto prices = load_prices(d.prices->string(), d.price_columns);
  auto proxy = load_series(d.proxy->string(), d.proxy_columns);
  return make_dataset(std::move(prices), std::move(proxy), *d.split, d.returns);
}

inline std::string choice_slug(KernelChoice c) {
  std::string s(to_string(c));
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

inline int cmd_check(Context& ctx) {
  const auto& c = ctx.config();
  const auto report = full_report(c.model_params(), c.history(), c.sim.horizon);
  ctx.save("assumptions.txt", render_text(report));
  ctx.save("assumptions.kv", render_key_values(report));
  ctx.out() << render_text(report);
  const int code = exit_code(report.verdict);
  ctx.log("verdict=" + std::string(to_string(report.verdict)) + " exit=" + std::to_string(code));
  return code;
}

inline int cmd_simulate(Context& ctx) {
  const auto& c = ctx.config();
  std::optional<Simulator> sim;
  try {
    sim.emplace(c.model_params(), c.history(), c.sim);
  } catch (const GateError& e) {
    ctx.save("assumptions.txt", render_text(e.report()));
    ctx.out() << render_text(e.report()) << e.what() << "\n";
    ctx.log("gate refused simulation");
    return kExitNeither;
  }
  const auto summary = sim->monte_carlo();
  std::ostringstream s;
  write_summary(s, summary);
  ctx.save("summary.txt", s.str());
  const std::size_t dumps = std::min<std::size_t>(c.dump_paths, c.sim.n_paths);
  for (std::size_t i = 0; i < dumps; ++i) {
    std::ostringstream p;
    write_path(p, sim->simulate_path(i));
    ctx.save("path_" + std::to_string(i) + ".csv", p.str());
  }
  auto& out = ctx.out();
  out << "paths=" << summary.n_paths << " aborted=" << summary.aborted_paths
      << " r2_floor_events=" << summary.floor_events;
  if (summary.x_available)
    out << " violation_points=" << summary.violation_points << " violating_paths=" << summary.violating_paths
        << " min_sigma_minus_x=" << format_double(summary.min_gap);
  out << "\n";
  for (const auto& h : summary.horizons)
    out << "t=" << format_double(h.time) << " mean_S=" << format_double(h.s_mean) << " se_S=" << format_double(h.s_se)
        << "\n";
  for (const auto& e : summary.events) ctx.log("event " + e);
  return kExitOk;
}

inline int cmd_features(Context& ctx) {
  const auto& c = ctx.config();
  if (!c.data.prices) throw ConfigError("[data] prices is required for this command");
  const auto prices = load_prices(c.data.prices->string(), c.data.price_columns);
  for (const auto& w : prices.warnings) ctx.out() << "warning: " << w << "\n";
  FeatureOptions fo;
  fo.cutoff_days = c.data.cutoff_days;
  const auto f = compute_features(compute_returns(prices, c.data.returns), c.kernel1(), c.kernel2(), fo);
  std::ostringstream os;
  write_features(os, f);
  ctx.save("features.csv", os.str());
  return kExitOk;
}

inline void save_report(Context& ctx, const std::vector<CalibrationResult>& results) {
  const auto table = render_table(results);
  ctx.save("report.txt", table);
  ctx.save("report.csv", render_csv(results));
  ctx.out() << table;
}

inline int cmd_calibrate(Context& ctx) {
  const auto& c = ctx.config();
  const auto data = load_market(c);
  for (const auto& w : data.warnings) ctx.out() << "warning: " << w << "\n";
  std::vector<CalibrationResult> results;
  for (auto choice : c.calib.choices) {
    auto spec = c.calib.spec;
    spec.choice = choice;
    auto r = calibrate(data, spec, c.calib.seed, c.data.name);
    std::ostringstream os;
    write_result(os, r);
    ctx.save("calibration_" + choice_slug(choice) + ".txt", os.str());
    ctx.log(std::string(to_string(choice)) + " evaluations=" + std::to_string(r.evaluations()));
    results.push_back(std::move(r));
  }
  save_report(ctx, results);
  return kExitOk;
}

inline int cmd_report(Context& ctx) {
  const auto& c = ctx.config();
  std::vector<fs::path> inputs = c.report_inputs;
  if (inputs.empty()) {
    for (const auto& e : fs::directory_iterator(c.out_dir)) {
      const auto name = e.path().filename().string();
      if (name.rfind("calibration_", 0) == 0 && e.path().extension() == ".txt") inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
  }
  if (inputs.empty()) throw ConfigError("no calibration results found (set [report] inputs or run calibrate)");
  std::vector<CalibrationResult> results;
  for (const auto& p : inputs) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot open " + p.string());
    results.push_back(read_result(in, p.string()));
  }
  save_report(ctx, results);
  return kExitOk;
}

inline int cmd_synth(Context& ctx) {
  const auto& c = ctx.config();
  const auto m = synthesize_market(c.synth);
  std::ostringstream prices, proxy, truth;
  prices << "date,price\n";
  for (std::size_t i = 0; i < m.prices.size(); ++i)
    prices << format_date(m.prices.dates[i]) << ',' << format_sig17(m.prices.values[i]) << '\n';
  proxy << "date,vol\n";
  for (std::size_t i = 0; i < m.proxy.size(); ++i)
    proxy << format_date(m.proxy.dates[i]) << ',' << format_sig17(m.proxy.values[i]) << '\n';
  truth << "split=" << format_date(m.split_date) << "\n";
  truth << "beta0=" << format_double(c.synth.betas.beta0) << "\nbeta1=" << format_double(c.synth.betas.beta1)
        << "\nbeta2=" << format_double(c.synth.betas.beta2) << "\n";
  for (const auto& [k, v] : to_key_values(c.synth.k1)) truth << "k1." << k << "=" << v << "\n";
  for (const auto& [k, v] : to_key_values(c.synth.k2)) truth << "k2." << k << "=" << v << "\n";
  if (const auto ratio = positivity_ratio(c.synth.k1, c.synth.k2)) truth << "positivity_ratio=" << format_double(*ratio) << "\n";
  truth << "noise=" << format_double(c.synth.noise_rel) << "\nseed=" << c.synth.seed << "\n";
  ctx.save("prices.csv", prices.str());
  ctx.save("proxy.csv", proxy.str());
  ctx.save("truth.txt", truth.str());
  ctx.out() << "split date " << format_date(m.split_date) << "\n";
  return kExitOk;
}

}  // namespace cli

// Parses arguments and runs one subcommand; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Path-dependent volatility toolkit: assumption checks, simulation, features and calibration", "pdv"};
  app.require_subcommand(1);
  CliOptions opt;

  using Handler = int (*)(cli::Context&);
  struct Command {
    const char* name;
    const char* help;
    Handler run;
  };
  const std::vector<Command> commands{
      {"check", "Check the model assumptions; exit 0 existence+positivity, 2 existence only, 3 neither",
       cli::cmd_check},
      {"simulate", "Simulate paths and write the ensemble summary and path dumps", cli::cmd_simulate},
      {"features", "Compute the R1/R2 features of a price series", cli::cmd_features},
      {"calibrate", "Calibrate betas and kernel parameters to a volatility proxy", cli::cmd_calibrate},
      {"report", "Render the comparison table from calibration result files", cli::cmd_report},
      {"synth", "Generate a synthetic price and proxy dataset from the model", cli::cmd_synth},
  };
  std::vector<CLI::App*> subs;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", opt.config, "Run configuration (INI); relative paths resolve against its directory")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "Output directory (overrides [output] dir)");
    sub->add_option("--seed", opt.seed, "Random seed (overrides the config seeds)");
    sub->add_flag("--force", opt.force, "Simulate even when the assumption gate fails");
    sub->add_option("--threads", opt.threads, "Worker thread cap (0 = all cores); results do not depend on it");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      cli::Context ctx(commands[i].name, opt, out);
      try {
        const int code = commands[i].run(ctx);
        ctx.log("exit=" + std::to_string(code));
        return code;
      } catch (const std::exception& e) {
        ctx.log(std::string("error ") + e.what());
        throw;
      }
    } catch (const std::exception& e) {
      err << "pdv " << commands[i].name << ": " << e.what() << "\n";
      return kExitError;
    }
  }
  return kExitError;
}

}  // namespace pdv
