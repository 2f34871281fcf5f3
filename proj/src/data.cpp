#include "smamba/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace smamba {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

TimeSeriesDataset load_csv(const std::filesystem::path& path, std::size_t min_rows) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open csv file: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw LoadError("empty csv file: " + path.string());
  std::vector<std::string> header = split_line(line);
  if (header.empty()) throw LoadError("csv header row is empty: " + path.string());
  for (auto& h : header) h = trim(h);

  std::size_t first_col = 0;
  const std::string h0 = lower(header[0]);
  if (h0 == "date" || h0 == "timestamp") first_col = 1;
  if (header.size() <= first_col)
    throw LoadError("csv has no variate columns: " + path.string());

  TimeSeriesDataset ds;
  ds.variate_names.assign(header.begin() + static_cast<std::ptrdiff_t>(first_col),
                          header.end());
  ds.variates = ds.variate_names.size();

  std::size_t row = 0;  // 1-based data rows, header excluded
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size())
      throw LoadError("csv row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    for (std::size_t c = first_col; c < cells.size(); ++c) {
      const std::string cell = trim(cells[c]);
      std::size_t consumed = 0;
      double v = 0.0;
      bool ok = !cell.empty();
      if (ok) {
        try {
          v = std::stod(cell, &consumed);
          ok = consumed == cell.size();
        } catch (const std::exception&) {
          ok = false;
        }
      }
      if (!ok || !std::isfinite(v))
        throw LoadError("csv cell at row " + std::to_string(row) + " col " +
                        std::to_string(c + 1) + " is not numeric: '" + cell + "'");
      ds.values.push_back(v);
    }
  }
  ds.steps = row;
  if (min_rows > 0 && ds.steps < min_rows)
    throw LoadError("csv has " + std::to_string(ds.steps) + " rows, need at least " +
                    std::to_string(min_rows));
  if (ds.steps == 0) throw LoadError("csv has no data rows: " + path.string());
  return ds;
}

void save_csv(const TimeSeriesDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError("cannot open csv for writing: " + path.string());
  for (std::size_t v = 0; v < ds.variates; ++v) {
    if (v) out << ',';
    out << ds.variate_names[v];
  }
  out << '\n';
  out.precision(17);
  for (std::size_t t = 0; t < ds.steps; ++t) {
    for (std::size_t v = 0; v < ds.variates; ++v) {
      if (v) out << ',';
      out << ds.at(t, v);
    }
    out << '\n';
  }
}

TimeSeriesDataset split_and_standardize(const TimeSeriesDataset& ds, double r_train,
                                        double r_val, double r_test,
                                        std::size_t min_window) {
  if (r_train <= 0 || r_val <= 0 || r_test <= 0)
    throw ProtocolError("split ratios must all be positive");
  if (std::fabs(r_train + r_val + r_test - 1.0) > 1e-9)
    throw ProtocolError("split ratios must sum to 1");

  TimeSeriesDataset out = ds;
  out.train_end = static_cast<std::size_t>(static_cast<double>(ds.steps) * r_train);
  out.val_end = out.train_end +
                static_cast<std::size_t>(static_cast<double>(ds.steps) * r_val);
  if (out.train_end == 0 || out.val_end <= out.train_end || out.val_end >= ds.steps)
    throw ProtocolError("splits degenerate for " + std::to_string(ds.steps) + " steps");
  const std::size_t lens[3] = {out.train_end, out.val_end - out.train_end,
                               ds.steps - out.val_end};
  for (std::size_t len : lens)
    if (len < min_window)
      throw ProtocolError("split of " + std::to_string(len) +
                          " steps is shorter than lookback+horizon = " +
                          std::to_string(min_window));

  out.mean.assign(ds.variates, 0.0);
  out.stddev.assign(ds.variates, 0.0);
  for (std::size_t v = 0; v < ds.variates; ++v) {
    double mu = 0.0;
    for (std::size_t t = 0; t < out.train_end; ++t) mu += ds.at(t, v);
    mu /= static_cast<double>(out.train_end);
    double var = 0.0;
    for (std::size_t t = 0; t < out.train_end; ++t) {
      const double d = ds.at(t, v) - mu;
      var += d * d;
    }
    var /= static_cast<double>(out.train_end);
    out.mean[v] = mu;
    out.stddev[v] = std::max(std::sqrt(var), 1e-8);  // constant-variate floor
  }
  for (std::size_t t = 0; t < ds.steps; ++t)
    for (std::size_t v = 0; v < ds.variates; ++v)
      out.values[t * ds.variates + v] = (ds.at(t, v) - out.mean[v]) / out.stddev[v];
  out.standardized = true;
  return out;
}

std::pair<std::size_t, std::size_t> split_range(const TimeSeriesDataset& ds, Split split) {
  if (!ds.split_defined()) throw ProtocolError("dataset has no split boundaries");
  switch (split) {
    case Split::Train: return {0, ds.train_end};
    case Split::Val: return {ds.train_end, ds.val_end};
    default: return {ds.val_end, ds.steps};
  }
}

std::vector<WindowSample> make_windows(const TimeSeriesDataset& ds, Split split,
                                       std::size_t lookback, std::size_t horizon,
                                       std::size_t stride) {
  if (stride == 0) throw ContractError("window stride must be >= 1");
  const auto [lo, hi] = split_range(ds, split);
  std::vector<WindowSample> windows;
  if (hi - lo < lookback + horizon) return windows;
  const std::size_t last = hi - lookback - horizon;
  for (std::size_t origin = lo; origin <= last; origin += stride) {
    WindowSample w;
    w.origin = origin;
    w.lookback = Array<double>({lookback, ds.variates});
    w.target = Array<double>({horizon, ds.variates});
    for (std::size_t t = 0; t < lookback; ++t)
      for (std::size_t v = 0; v < ds.variates; ++v)
        w.lookback[t * ds.variates + v] = ds.at(origin + t, v);
    for (std::size_t t = 0; t < horizon; ++t)
      for (std::size_t v = 0; v < ds.variates; ++v)
        w.target[t * ds.variates + v] = ds.at(origin + lookback + t, v);
    windows.push_back(std::move(w));
  }
  return windows;
}

TimeSeriesDataset generate_synthetic(const SyntheticSpec& spec) {
  const std::size_t V = spec.total_variates();
  if (V == 0 || spec.steps == 0) throw ConfigError("synthetic spec has no data");
  if (spec.coupled > 0 && spec.walks == 0)
    throw ConfigError("coupled variates require at least one walk source");
  if (spec.coupled > spec.coupling_lags.size() ||
      spec.coupled > spec.coupling_weights.size())
    throw ConfigError("coupling_lags/coupling_weights shorter than coupled count");
  if (spec.periodic > 0 && spec.periods.empty())
    throw ConfigError("periodic variates require at least one period");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  TimeSeriesDataset ds;
  ds.steps = spec.steps;
  ds.variates = V;
  ds.values.assign(spec.steps * V, 0.0);
  ds.granularity = "synthetic";

  std::size_t col = 0;
  for (std::size_t i = 0; i < spec.periodic; ++i, ++col) {
    ds.variate_names.push_back("p" + std::to_string(i));
    const double p_main = spec.periods[i % spec.periods.size()];
    const double p_second = spec.periods[(i + 1) % spec.periods.size()];
    const double phi = phase(rng);
    const double phi2 = phase(rng);
    for (std::size_t t = 0; t < spec.steps; ++t) {
      const double x = static_cast<double>(t);
      ds.values[t * V + col] =
          std::sin(2.0 * std::numbers::pi * x / p_main + phi) +
          0.3 * std::sin(2.0 * std::numbers::pi * x / p_second + phi2) +
          spec.noise * gauss(rng);
    }
  }

  std::vector<std::vector<double>> walks(spec.walks);
  for (std::size_t i = 0; i < spec.walks; ++i, ++col) {
    ds.variate_names.push_back("w" + std::to_string(i));
    walks[i].resize(spec.steps);
    double level = 0.0;
    for (std::size_t t = 0; t < spec.steps; ++t) {
      level = spec.walk_damping * level + gauss(rng);
      walks[i][t] = level;
      ds.values[t * V + col] = level;
    }
  }

  for (std::size_t i = 0; i < spec.coupled; ++i, ++col) {
    ds.variate_names.push_back("c" + std::to_string(i));
    const std::vector<double>& src = walks[i % spec.walks];
    const std::size_t lag = spec.coupling_lags[i];
    const double w = spec.coupling_weights[i];
    for (std::size_t t = 0; t < spec.steps; ++t) {
      const double lagged = t >= lag ? src[t - lag] : src[0];
      ds.values[t * V + col] = w * lagged + spec.coupled_noise * gauss(rng);
    }
  }
  return ds;
}

PeriodicityResult classify_periodicity(std::span<const double> series, double threshold) {
  const std::size_t n = series.size();
  if (n < 64)
    throw ContractError("periodicity classification requires >= 64 steps, got " +
                        std::to_string(n));
  double mu = 0.0;
  for (double v : series) mu += v;
  mu /= static_cast<double>(n);

  double total = 0.0, peak = 0.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double angle =
          -2.0 * std::numbers::pi * static_cast<double>(k) * static_cast<double>(t) /
          static_cast<double>(n);
      const double x = series[t] - mu;
      re += x * std::cos(angle);
      im += x * std::sin(angle);
    }
    const double power = re * re + im * im;
    total += power;
    peak = std::max(peak, power);
  }
  PeriodicityResult r;
  r.score = total > 0.0 ? peak / total : 0.0;
  r.periodic = r.score >= threshold;
  return r;
}

ReorderResult reorder_variates(const TimeSeriesDataset& ds, Placement placement,
                               double threshold) {
  std::vector<std::size_t> periodic, aperiodic;
  for (std::size_t v = 0; v < ds.variates; ++v) {
    const std::vector<double> col = ds.column(v);
    if (classify_periodicity(col, threshold).periodic)
      periodic.push_back(v);
    else
      aperiodic.push_back(v);
  }

  std::vector<std::size_t> perm;
  perm.reserve(ds.variates);
  switch (placement) {
    case Placement::Original:
      for (std::size_t v = 0; v < ds.variates; ++v) perm.push_back(v);
      break;
    case Placement::AperiodicEnd:
      perm.insert(perm.end(), periodic.begin(), periodic.end());
      perm.insert(perm.end(), aperiodic.begin(), aperiodic.end());
      break;
    case Placement::AperiodicMiddle: {
      const std::size_t front = (periodic.size() + 1) / 2;
      perm.insert(perm.end(), periodic.begin(),
                  periodic.begin() + static_cast<std::ptrdiff_t>(front));
      perm.insert(perm.end(), aperiodic.begin(), aperiodic.end());
      perm.insert(perm.end(), periodic.begin() + static_cast<std::ptrdiff_t>(front),
                  periodic.end());
      break;
    }
  }

  ReorderResult out;
  out.permutation = perm;
  out.dataset = ds;
  for (std::size_t v = 0; v < ds.variates; ++v) {
    out.dataset.variate_names[v] = ds.variate_names[perm[v]];
    if (!ds.mean.empty()) {
      out.dataset.mean[v] = ds.mean[perm[v]];
      out.dataset.stddev[v] = ds.stddev[perm[v]];
    }
  }
  for (std::size_t t = 0; t < ds.steps; ++t)
    for (std::size_t v = 0; v < ds.variates; ++v)
      out.dataset.values[t * ds.variates + v] = ds.at(t, perm[v]);
  return out;
}

SubsetResult subset_variates(const TimeSeriesDataset& ds, double fraction,
                             std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw ConfigError("variate fraction must lie in (0, 1]");
  const std::size_t k =
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ds.variates)));
  std::vector<std::size_t> indices(ds.variates);
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(indices.begin(), indices.end(), rng);
  indices.resize(k);
  std::sort(indices.begin(), indices.end());

  SubsetResult out;
  out.index_map = indices;
  out.subset.steps = ds.steps;
  out.subset.variates = k;
  out.subset.granularity = ds.granularity;
  out.subset.train_end = ds.train_end;
  out.subset.val_end = ds.val_end;
  out.subset.standardized = ds.standardized;
  out.subset.values.assign(ds.steps * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    out.subset.variate_names.push_back(ds.variate_names[indices[i]]);
    if (!ds.mean.empty()) {
      out.subset.mean.push_back(ds.mean[indices[i]]);
      out.subset.stddev.push_back(ds.stddev[indices[i]]);
    }
  }
  for (std::size_t t = 0; t < ds.steps; ++t)
    for (std::size_t i = 0; i < k; ++i)
      out.subset.values[t * k + i] = ds.at(t, indices[i]);
  return out;
}

}  // namespace smamba
