#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "pdv/exp_sum.hpp"
#include "pdv/kernel.hpp"
#include "pdv/numeric_text.hpp"

namespace pdv {

using Date = std::chrono::year_month_day;

// ISO-8601 calendar date (YYYY-MM-DD).
inline Date parse_date(std::string_view text) {
  const auto s = trim(text);
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  const std::string buf(s);
  if (buf.size() != 10 || std::sscanf(buf.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3)
    throw std::invalid_argument("invalid date '" + buf + "' (expected YYYY-MM-DD)");
  const Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) throw std::invalid_argument("invalid calendar date '" + buf + "'");
  return date;
}

inline std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

inline Date shift_days(const Date& d, int days) {
  return Date{std::chrono::sys_days{d} + std::chrono::days{days}};
}

// A dated series with strictly increasing dates.
struct DatedSeries {
  std::vector<Date> dates;
  std::vector<double> values;
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return dates.size(); }
};

struct CsvColumns {
  std::string date = "date";
  std::string value = "price";
  char delimiter = ',';
};

namespace detail {

inline std::size_t column_index(const std::vector<std::string>& header, const std::string& name,
                                const std::string& source) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) == name) return i;
  throw std::invalid_argument(source + ": column '" + name + "' not found in header");
}

}  // namespace detail

// Reads a delimited file with a header row. Rows are sorted by date (with a
// warning); duplicate dates and non-finite values are rejected with the row number.
inline DatedSeries parse_series(std::istream& in, const CsvColumns& cols, const std::string& source = "input") {
  std::string line;
  std::size_t row = 1;
  while (std::getline(in, line) && trim(line).empty()) ++row;
  if (trim(line).empty()) throw std::invalid_argument(source + ": empty file");
  const auto header = split(line, cols.delimiter);
  const auto di = detail::column_index(header, cols.date, source);
  const auto vi = detail::column_index(header, cols.value, source);

  std::vector<std::pair<Date, double>> rows;
  std::vector<std::size_t> row_numbers;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split(line, cols.delimiter);
    const std::string where = source + " row " + std::to_string(row);
    if (fields.size() <= std::max(di, vi)) throw std::invalid_argument(where + ": too few fields");
    try {
      const Date d = parse_date(fields[di]);
      const double v = parse_double(fields[vi], cols.value);
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite value");
      rows.emplace_back(d, v);
      row_numbers.push_back(row);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + ": " + e.what());
    }
  }
  DatedSeries out;
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  if (!std::is_sorted(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; })) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rows[a].first < rows[b].first; });
    out.warnings.push_back(source + ": rows were not in date order and have been sorted");
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& [d, v] = rows[order[i]];
    if (!out.dates.empty() && out.dates.back() == d)
      throw std::invalid_argument(source + " row " + std::to_string(row_numbers[order[i]]) + ": duplicate date " +
                                  format_date(d));
    out.dates.push_back(d);
    out.values.push_back(v);
  }
  return out;
}

inline DatedSeries load_series(const std::string& path, const CsvColumns& cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return parse_series(in, cols, path);
}

inline void require_positive_prices(const DatedSeries& s, const std::string& source) {
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!(s.values[i] > 0.0))
      throw std::invalid_argument(source + ": non-positive price " + format_double(s.values[i]) + " on " +
                                  format_date(s.dates[i]));
}

inline DatedSeries load_prices(const std::string& path, const CsvColumns& cols) {
  auto s = load_series(path, cols);
  require_positive_prices(s, path);
  return s;
}

enum class ReturnMode { arithmetic, log };

inline ReturnMode parse_return_mode(std::string_view s) {
  if (s == "arithmetic" || s == "simple") return ReturnMode::arithmetic;
  if (s == "log") return ReturnMode::log;
  throw std::invalid_argument("unknown return mode '" + std::string(s) + "' (expected arithmetic or log)");
}

// Daily returns dated at the later of the two prices.
inline DatedSeries compute_returns(const DatedSeries& prices, ReturnMode mode = ReturnMode::arithmetic) {
  require_positive_prices(prices, "prices");
  DatedSeries r;
  for (std::size_t i = 1; i < prices.size(); ++i) {
    const double ratio = prices.values[i] / prices.values[i - 1];
    r.dates.push_back(prices.dates[i]);
    r.values.push_back(mode == ReturnMode::arithmetic ? ratio - 1.0 : std::log(ratio));
  }
  return r;
}

struct MarketDataset {
  DatedSeries prices;
  DatedSeries returns;
  DatedSeries proxy;  // annualised decimal volatility
  Date split_date{};
  std::vector<std::string> warnings;
};

// Builds the dataset; proxy observations on dates outside the price calendar are dropped.
inline MarketDataset make_dataset(DatedSeries prices, DatedSeries proxy, Date split_date,
                                  ReturnMode mode = ReturnMode::arithmetic) {
  if (prices.size() < 2) throw std::invalid_argument("need at least two prices");
  MarketDataset ds;
  ds.returns = compute_returns(prices, mode);
  ds.warnings = prices.warnings;
  ds.warnings.insert(ds.warnings.end(), proxy.warnings.begin(), proxy.warnings.end());
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < proxy.size(); ++i) {
    if (std::binary_search(prices.dates.begin(), prices.dates.end(), proxy.dates[i])) {
      ds.proxy.dates.push_back(proxy.dates[i]);
      ds.proxy.values.push_back(proxy.values[i]);
    } else {
      ++dropped;
    }
  }
  if (dropped > 0)
    ds.warnings.push_back(std::to_string(dropped) + " proxy observations outside the price calendar dropped");
  ds.prices = std::move(prices);
  ds.split_date = split_date;
  return ds;
}

// ---------------------------------------------------------------------------
// Features.

enum class FeatureMethod { automatic, direct, recursive, fft };

struct FeatureOptions {
  std::optional<std::size_t> cutoff_days;  // window in days beyond the current one; nullopt = full history
  FeatureMethod method = FeatureMethod::automatic;
};

struct FeaturePath {
  std::vector<Date> dates;
  std::vector<double> r1;
  std::vector<double> r2;
};

// Lags are business-day counts over 252 (calendar gaps count as one day); the
// return on the feature date has lag 0.
inline double lag_years(std::size_t days) { return static_cast<double>(days) / kBusinessDaysPerYear; }

// Largest lag in days that can carry weight.
inline std::size_t feature_window(const KernelSpec& k, const FeatureOptions& opt, std::size_t n) {
  std::size_t m = n == 0 ? 0 : n - 1;
  if (opt.cutoff_days) m = std::min(m, *opt.cutoff_days);
  if (k.finite_support()) {
    const double days = std::floor(k.cutoff() * kBusinessDaysPerYear + 1e-9);
    if (days < static_cast<double>(m)) m = static_cast<std::size_t>(days);
  }
  return m;
}

inline std::vector<double> feature_weights(const KernelSpec& k, std::size_t window) {
  std::vector<double> w(window + 1);
  for (std::size_t m = 0; m <= window; ++m) w[m] = evaluate_lag(k, lag_years(m));
  return w;
}

// out[t] = sum_{m=0}^{min(t, window)} K(m/252) x[t-m].
inline std::vector<double> kernel_sum_direct(std::span<const double> x, const KernelSpec& k,
                                             const FeatureOptions& opt = {}) {
  const auto w = feature_weights(k, feature_window(k, opt, x.size()));
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const std::size_t top = std::min(t, w.size() - 1);
    double s = 0.0;
    for (std::size_t m = 0; m <= top; ++m) s += w[m] * x[t - m];
    out[t] = s;
  }
  return out;
}

// Same sums at selected indices only.
inline std::vector<double> kernel_sum_at(std::span<const double> x, const KernelSpec& k,
                                         std::span<const std::size_t> indices, const FeatureOptions& opt = {}) {
  const auto w = feature_weights(k, feature_window(k, opt, x.size()));
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::size_t t : indices) {
    if (t >= x.size()) throw std::out_of_range("feature index beyond the series");
    const std::size_t top = std::min(t, w.size() - 1);
    double s = 0.0;
    for (std::size_t m = 0; m <= top; ++m) s += w[m] * x[t - m];
    out.push_back(s);
  }
  return out;
}

// O(1) per day for kernels with exponential factors; the dropped tail term is
// subtracted once the window is full.
inline std::vector<double> kernel_sum_recursive(std::span<const double> x, const KernelSpec& k,
                                                const FeatureOptions& opt = {}) {
  const auto f = exponential_factors(k);
  if (!f) throw std::invalid_argument("recursive features need an exponential or combination kernel");
  const std::size_t window = feature_window(k, opt, x.size());
  const std::size_t n = x.size();
  std::vector<double> decay, tail, y(f->size(), 0.0);
  for (std::size_t j = 0; j < f->size(); ++j) {
    decay.push_back(std::exp(-f->rates[j] / kBusinessDaysPerYear));
    tail.push_back(f->coeffs[j] * std::exp(-f->rates[j] * lag_years(window + 1)));
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double s = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
      y[j] = decay[j] * y[j] + f->coeffs[j] * x[t];
      if (t > window) y[j] -= tail[j] * x[t - window - 1];
      s += y[j];
    }
    out[t] = s;
  }
  return out;
}

// Linear convolution through a zero-padded FFT, O(n log n).
inline std::vector<double> kernel_sum_fft(std::span<const double> x, const KernelSpec& k,
                                          const FeatureOptions& opt = {}) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  const auto w = feature_weights(k, feature_window(k, opt, n));
  std::size_t size = 1;
  while (size < n + w.size()) size <<= 1;
  std::vector<double> a(size, 0.0), b(size, 0.0);
  std::copy(x.begin(), x.end(), a.begin());
  std::copy(w.begin(), w.end(), b.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> fa, fb;
  fft.fwd(fa, a);
  fft.fwd(fb, b);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  std::vector<double> c;
  fft.inv(c, fa);
  c.resize(n);
  return c;
}

inline std::vector<double> kernel_sum(std::span<const double> x, const KernelSpec& k, const FeatureOptions& opt = {}) {
  switch (opt.method) {
    case FeatureMethod::direct: return kernel_sum_direct(x, k, opt);
    case FeatureMethod::recursive: return kernel_sum_recursive(x, k, opt);
    case FeatureMethod::fft: return kernel_sum_fft(x, k, opt);
    case FeatureMethod::automatic:
      if (exponential_factors(k)) return kernel_sum_recursive(x, k, opt);
      if (feature_window(k, opt, x.size()) < 256) return kernel_sum_direct(x, k, opt);
      return kernel_sum_fft(x, k, opt);
  }
  return {};
}

// R1_t = sum K1(t - t_i) r_i and R2_t = sum K2(t - t_i) r_i^2 over t_i <= t.
inline FeaturePath compute_features(const DatedSeries& returns, const KernelSpec& k1, const KernelSpec& k2,
                                    const FeatureOptions& opt = {}) {
  if (returns.size() == 0) throw std::invalid_argument("features need at least one return");
  FeaturePath f;
  f.dates = returns.dates;
  std::vector<double> sq(returns.values.size());
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = returns.values[i] * returns.values[i];
  f.r1 = kernel_sum(returns.values, k1, opt);
  f.r2 = kernel_sum(sq, k2, opt);
  // Rounding in the FFT route can leave tiny negative values.
  for (double& v : f.r2) v = std::max(v, 0.0);
  return f;
}

inline void write_features(std::ostream& os, const FeaturePath& f) {
  os << "date,R1,R2\n";
  for (std::size_t i = 0; i < f.dates.size(); ++i)
    os << format_date(f.dates[i]) << ',' << format_sig17(f.r1[i]) << ',' << format_sig17(f.r2[i]) << '\n';
}

// ---------------------------------------------------------------------------
// Alignment with the proxy.

struct RegressionRows {
  std::vector<Date> dates;
  std::vector<std::size_t> index;  // position in the feature path
  std::vector<double> r1;
  std::vector<double> sqrt_r2;
  std::vector<double> y;

  std::size_t size() const noexcept { return dates.size(); }
  void push(const Date& d, std::size_t i, double a, double b, double v) {
    dates.push_back(d);
    index.push_back(i);
    r1.push_back(a);
    sqrt_r2.push_back(b);
    y.push_back(v);
  }
};

struct AlignedData {
  RegressionRows train;  // dates before the split date
  RegressionRows test;   // dates on or after the split date
  std::size_t missing_proxy = 0;     // feature dates without a proxy value
  std::size_t unmatched_proxy = 0;   // proxy dates without a feature
};

inline AlignedData align(const FeaturePath& f, const DatedSeries& proxy, const Date& split_date) {
  AlignedData out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < f.dates.size(); ++i) {
    while (j < proxy.size() && proxy.dates[j] < f.dates[i]) {
      ++out.unmatched_proxy;
      ++j;
    }
    if (j < proxy.size() && proxy.dates[j] == f.dates[i]) {
      auto& rows = f.dates[i] < split_date ? out.train : out.test;
      rows.push(f.dates[i], i, f.r1[i], std::sqrt(f.r2[i]), proxy.values[j]);
      ++j;
    } else {
      ++out.missing_proxy;
    }
  }
  out.unmatched_proxy += proxy.size() - j;
  if (out.train.size() == 0) throw std::invalid_argument("empty train set after alignment (split " + format_date(split_date) + ")");
  if (out.test.size() == 0) throw std::invalid_argument("empty test set after alignment (split " + format_date(split_date) + ")");
  return out;
}

}  // namespace pdv
