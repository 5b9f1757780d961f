#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdv/calibration.hpp"
#include "pdv/features.hpp"
#include "pdv/history.hpp"
#include "pdv/model.hpp"
#include "pdv/numeric_text.hpp"
#include "pdv/simulator.hpp"
#include "pdv/synthetic.hpp"

namespace pdv {

// Raised for malformed or inconsistent run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelSection {
  Betas betas{0.0, 0.0, 0.0};
  double s0 = 1.0;
  double history_length = 0.0;
  std::optional<double> history_sigma;  // constant-history shortcut
  std::optional<std::filesystem::path> history_file;
};

struct DataSection {
  std::optional<std::filesystem::path> prices;
  std::optional<std::filesystem::path> proxy;
  std::optional<Date> split;
  CsvColumns price_columns{"date", "price", ','};
  CsvColumns proxy_columns{"date", "vol", ','};
  ReturnMode returns = ReturnMode::arithmetic;
  std::string name = "dataset";
  std::optional<std::size_t> cutoff_days;
};

struct CalibSection {
  std::vector<KernelChoice> choices{KernelChoice::exp_tspl};
  CalibrationSpec spec;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::filesystem::path base_dir;
  std::optional<KernelSpec> k1;
  std::optional<KernelSpec> k2;
  ModelSection model;
  SimConfig sim;
  std::size_t dump_paths = 1;
  DataSection data;
  CalibSection calib;
  SyntheticSpec synth;
  std::vector<std::filesystem::path> report_inputs;
  std::filesystem::path out_dir = "out";

  const KernelSpec& kernel1() const {
    if (!k1) throw ConfigError("section [k1] is required for this command");
    return *k1;
  }
  const KernelSpec& kernel2() const {
    if (!k2) throw ConfigError("section [k2] is required for this command");
    return *k2;
  }
  ModelParams model_params() const { return {model.betas, kernel1(), kernel2(), model.s0, model.history_length}; }
  HistorySegment history() const;
};

// History file: columns t,R1,R2 with t in [-Delta, 0], strictly increasing, last row at t = 0.
inline HistorySegment load_history_csv(const std::filesystem::path& path, double length) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open history file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty history file");
  const auto header = split(std::string(trim(line)), ',');
  if (header.size() < 3 || trim(header[0]) != "t" || trim(header[1]) != "R1" || trim(header[2]) != "R2")
    throw ConfigError(path.string() + ": history header must be t,R1,R2");
  std::vector<double> t, r1, r2;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split(std::string(trim(line)), ',');
    if (cells.size() < 3) throw ConfigError(path.string() + " row " + std::to_string(row) + ": expected 3 columns");
    try {
      t.push_back(parse_double(cells[0], "t"));
      r1.push_back(parse_double(cells[1], "R1"));
      r2.push_back(parse_double(cells[2], "R2"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path.string() + " row " + std::to_string(row) + ": " + e.what());
    }
  }
  try {
    return HistorySegment(-length, std::move(t), std::move(r1), std::move(r2));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline HistorySegment RunConfig::history() const {
  if (model.history_length == 0.0) return {};
  if (model.history_file) return load_history_csv(*model.history_file, model.history_length);
  if (model.history_sigma) return HistorySegment::constant_sigma(*model.history_sigma, model.betas, model.history_length);
  throw ConfigError("history_length > 0 needs history_sigma or history_file in [model]");
}

namespace detail {

using boost::property_tree::ptree;

class Section {
 public:
  Section(const ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  bool present() const noexcept { return tree_ != nullptr; }

  std::optional<std::string> text(const std::string& key) {
    used_.insert(key);
    if (!tree_) return std::nullopt;
    const auto child = tree_->get_child_optional(key);
    if (!child) return std::nullopt;
    return std::string(trim(child->data()));
  }

  template <class T, class F>
  std::optional<T> parse(const std::string& key, F&& f) {
    const auto v = text(key);
    if (!v) return std::nullopt;
    try {
      return f(*v);
    } catch (const std::exception& e) {
      throw ConfigError("[" + name_ + "] " + key + ": " + e.what());
    }
  }

  std::optional<double> number(const std::string& key) {
    return parse<double>(key, [&](const std::string& s) { return parse_double(s, key); });
  }
  std::optional<long long> integer(const std::string& key) {
    return parse<long long>(key, [&](const std::string& s) { return parse_integer(s, key); });
  }
  std::optional<std::size_t> count(const std::string& key) {
    const auto v = integer(key);
    if (v && *v < 0) throw ConfigError("[" + name_ + "] " + key + " must be >= 0");
    return v ? std::optional<std::size_t>(static_cast<std::size_t>(*v)) : std::nullopt;
  }
  std::optional<bool> flag(const std::string& key) {
    return parse<bool>(key, [&](const std::string& s) {
      if (s == "true" || s == "1" || s == "yes") return true;
      if (s == "false" || s == "0" || s == "no") return false;
      throw std::invalid_argument("expected true or false, got '" + s + "'");
    });
  }
  std::optional<char> delimiter(const std::string& key) {
    return parse<char>(key, [](const std::string& s) {
      if (s == "tab" || s == "\\t") return '\t';
      if (s == "comma") return ',';
      if (s == "semicolon") return ';';
      if (s.size() != 1) throw std::invalid_argument("delimiter must be one character, comma, semicolon or tab");
      return s[0];
    });
  }

  // Rejects keys nobody asked for, which catches typos.
  void finish() const {
    if (!tree_) return;
    for (const auto& [key, _] : *tree_)
      if (!used_.count(key)) throw ConfigError("unknown key '" + key + "' in section [" + name_ + "]");
  }

 private:
  const ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

inline KernelSpec read_kernel(Section& s, const std::string& name) {
  std::map<std::string, std::string> kv;
  for (const char* key : {"family", "lambda", "alpha", "delta", "theta", "lambda_a", "lambda_b", "a", "cutoff"})
    if (auto v = s.text(key)) kv[key] = *v;
  s.finish();
  try {
    return kernel_from_key_values(kv);
  } catch (const std::exception& e) {
    throw ConfigError("[" + name + "] " + e.what());
  }
}

inline std::vector<std::string> list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& item : split(s, ',')) {
    const auto t = trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

}  // namespace detail

// Parses INI text; relative paths resolve against base_dir.
inline RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = ".") {
  using detail::Section;
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  static const std::set<std::string> known{"k1", "k2", "model", "sim", "data", "calib", "synth", "report", "output"};
  for (const auto& [name, child] : tree) {
    if (!known.count(name)) throw ConfigError("unknown section [" + name + "]");
    if (child.data().size() > 0 && child.empty()) throw ConfigError("key '" + name + "' outside any section");
  }
  auto section = [&](const std::string& name) {
    const auto child = tree.get_child_optional(name);
    return Section(child ? &*child : nullptr, name);
  };
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  auto existing = [&](const std::string& p, const std::string& what) {
    auto path = resolve(p);
    if (!std::filesystem::exists(path)) throw ConfigError(what + " not found: " + path.string());
    return path;
  };

  RunConfig c;
  c.base_dir = base_dir;

  for (const char* name : {"k1", "k2"}) {
    auto s = section(name);
    if (!s.present()) continue;
    (std::string(name) == "k1" ? c.k1 : c.k2) = detail::read_kernel(s, name);
  }

  {
    auto s = section("model");
    if (auto v = s.number("beta0")) c.model.betas.beta0 = *v;
    if (auto v = s.number("beta1")) c.model.betas.beta1 = *v;
    if (auto v = s.number("beta2")) c.model.betas.beta2 = *v;
    if (auto v = s.number("s0")) c.model.s0 = *v;
    if (auto v = s.number("history_length")) c.model.history_length = *v;
    c.model.history_sigma = s.number("history_sigma");
    if (auto v = s.text("history_file")) c.model.history_file = existing(*v, "history file");
    s.finish();
    if (!(c.model.history_length >= 0.0)) throw ConfigError("[model] history_length must be >= 0");
    if (c.model.history_sigma && c.model.history_file)
      throw ConfigError("[model] give history_sigma or history_file, not both");
    if (c.model.history_length > 0.0 && !c.model.history_sigma && !c.model.history_file)
      throw ConfigError("[model] history_length > 0 needs history_sigma or history_file");
  }

  {
    auto s = section("sim");
    auto& sim = c.sim;
    if (auto v = s.number("horizon")) sim.horizon = *v;
    if (auto v = s.integer("steps_per_year")) sim.steps_per_year = static_cast<int>(*v);
    if (auto v = s.count("n_paths")) sim.n_paths = *v;
    if (auto v = s.count("seed")) sim.seed = *v;
    if (auto v = s.parse<Scheme>("scheme", [](const std::string& x) { return parse_scheme(x); })) sim.scheme = *v;
    if (auto v = s.parse<G1Mode>("g1_mode", [](const std::string& x) { return parse_g1_mode(x); })) sim.g1_mode = *v;
    if (auto v = s.number("r2_floor")) sim.r2_floor = *v;
    if (auto v = s.integer("tspl_exp_terms")) sim.tspl_exp_terms = static_cast<int>(*v);
    if (auto v = s.number("violation_tol_factor")) sim.violation_tol_factor = *v;
    if (auto v = s.number("max_lookback_years")) sim.max_lookback_years = *v;
    if (auto v = s.parse<std::vector<double>>("horizons", [](const std::string& x) {
          std::vector<double> out;
          for (const auto& h : detail::list(x)) out.push_back(parse_double(h, "horizon"));
          return out;
        }))
      sim.horizons = *v;
    if (auto v = s.count("dump_paths")) c.dump_paths = *v;
    s.finish();
    try {
      sim.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("[sim] ") + e.what());
    }
  }

  {
    auto s = section("data");
    auto& d = c.data;
    if (auto v = s.text("prices")) d.prices = existing(*v, "price file");
    if (auto v = s.text("proxy")) d.proxy = existing(*v, "proxy file");
    d.split = s.parse<Date>("split", [](const std::string& x) { return parse_date(x); });
    if (auto v = s.text("date_column")) d.price_columns.date = d.proxy_columns.date = *v;
    if (auto v = s.text("price_column")) d.price_columns.value = *v;
    if (auto v = s.text("proxy_column")) d.proxy_columns.value = *v;
    if (auto v = s.delimiter("delimiter")) d.price_columns.delimiter = d.proxy_columns.delimiter = *v;
    if (auto v = s.parse<ReturnMode>("returns", [](const std::string& x) { return parse_return_mode(x); })) d.returns = *v;
    if (auto v = s.text("name")) d.name = *v;
    d.cutoff_days = s.count("cutoff_days");
    s.finish();
  }

  {
    auto s = section("calib");
    auto& k = c.calib;
    if (auto v = s.parse<std::vector<KernelChoice>>("choices", [](const std::string& x) {
          std::vector<KernelChoice> out;
          for (const auto& item : detail::list(x)) out.push_back(parse_kernel_choice(item));
          if (out.empty()) throw std::invalid_argument("no kernel choice given");
          return out;
        }))
      k.choices = *v;
    auto& spec = k.spec;
    static const std::array<const char*, 3> names{"beta0", "beta1", "beta2"};
    for (std::size_t j = 0; j < 3; ++j) {
      if (auto v = s.number(std::string(names[j]) + "_min")) spec.bounds.lower[j] = *v;
      if (auto v = s.number(std::string(names[j]) + "_max")) spec.bounds.upper[j] = *v;
    }
    spec.ridge = s.number("ridge");
    if (auto v = s.flag("penalize_intercept")) spec.penalize_intercept = *v;
    if (auto v = s.count("multistarts")) spec.multistarts = *v;
    if (auto v = s.count("max_iterations")) spec.optimizer.max_iterations = *v;
    if (auto v = s.count("max_evaluations")) spec.optimizer.max_evaluations = *v;
    if (auto v = s.number("f_tol")) spec.optimizer.f_tol = *v;
    if (auto v = s.number("x_tol")) spec.optimizer.x_tol = *v;
    if (auto v = s.number("initial_step")) spec.optimizer.initial_step = *v;
    if (auto v = s.count("restarts")) spec.optimizer.restarts = *v;
    if (auto v = s.number("positivity_horizon")) spec.positivity_horizon = *v;
    if (auto v = s.count("seed")) k.seed = *v;
    s.finish();
    spec.cutoff_days = c.data.cutoff_days;
    try {
      spec.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("[calib] ") + e.what());
    }
  }

  {
    auto s = section("synth");
    auto& y = c.synth;
    if (auto v = s.count("days")) y.n_days = *v;
    if (auto v = s.count("burn_in")) y.burn_in = *v;
    if (auto v = s.number("noise")) y.noise_rel = *v;
    if (auto v = s.number("sigma_floor")) y.sigma_floor = *v;
    if (auto v = s.number("train_fraction")) y.train_fraction = *v;
    if (auto v = s.parse<Date>("start", [](const std::string& x) { return parse_date(x); })) y.start = *v;
    if (auto v = s.count("seed")) y.seed = *v;
    s.finish();
    if (c.k1) y.k1 = *c.k1;
    if (c.k2) y.k2 = *c.k2;
    if (tree.get_child_optional("model")) {
      y.betas = c.model.betas;
      y.s0 = c.model.s0;
    }
  }

  {
    auto s = section("report");
    if (auto v = s.text("inputs"))
      for (const auto& p : detail::list(*v)) c.report_inputs.push_back(existing(p, "report input"));
    s.finish();
  }

  {
    auto s = section("output");
    if (auto v = s.text("dir")) c.out_dir = resolve(*v);
    else c.out_dir = base_dir / "out";
    s.finish();
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_config(in, base);
}

}  // namespace pdv
