#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "smamba/array.hpp"
#include "smamba/errors.hpp"

namespace smamba {

// Chronologically ordered multivariate series. Values are stored row-major
// [steps, V] in 64-bit floats; standardization statistics come from the
// train split only. Immutable after construction; transformations return
// new datasets.
struct TimeSeriesDataset {
  std::vector<double> values;  // [steps * variates]
  std::size_t steps = 0;
  std::size_t variates = 0;
  std::vector<std::string> variate_names;
  std::string granularity = "unknown";

  std::size_t train_end = 0;  // 0 while unsplit
  std::size_t val_end = 0;
  std::vector<double> mean, stddev;  // per-variate, train-split statistics
  bool standardized = false;

  double at(std::size_t step, std::size_t v) const { return values[step * variates + v]; }
  bool split_defined() const { return val_end > 0; }

  double de_standardize(double value, std::size_t v) const {
    return standardized ? value * stddev[v] + mean[v] : value;
  }

  std::vector<double> column(std::size_t v) const {
    std::vector<double> c(steps);
    for (std::size_t t = 0; t < steps; ++t) c[t] = at(t, v);
    return c;
  }
};

enum class Split { Train, Val, Test };

struct WindowSample {
  Array<double> lookback;  // [L, V]
  Array<double> target;    // [T, V]
  std::size_t origin = 0;  // absolute step index of the first lookback row
};

// Header row of variate names; an optional leading timestamp column is
// dropped when its header is "date" or "timestamp" (case-insensitive).
// Errors carry 1-based data-row / file-column locations.
TimeSeriesDataset load_csv(const std::filesystem::path& path, std::size_t min_rows = 0);

void save_csv(const TimeSeriesDataset& ds, const std::filesystem::path& path);

// Chronological split + per-variate z-score with train-split statistics.
// min_window (= L+T) guards every split against being too short.
TimeSeriesDataset split_and_standardize(const TimeSeriesDataset& ds, double r_train,
                                        double r_val, double r_test,
                                        std::size_t min_window);

std::pair<std::size_t, std::size_t> split_range(const TimeSeriesDataset& ds, Split split);

// Windows lie strictly inside one split; count = split_len - L - T + 1 for
// stride 1, empty when the split is too short.
std::vector<WindowSample> make_windows(const TimeSeriesDataset& ds, Split split,
                                       std::size_t lookback, std::size_t horizon,
                                       std::size_t stride = 1);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

// Column layout: [periodic..., walks..., coupled...]. Coupled variate j is a
// lagged multiple of walk (j mod walks) plus noise, planting inter-variate
// correlations that no per-variate model can exploit.
struct SyntheticSpec {
  std::size_t steps = 600;
  std::size_t periodic = 4;
  std::size_t walks = 2;
  std::size_t coupled = 2;
  std::vector<double> periods = {24.0, 36.0, 48.0, 60.0};
  std::vector<std::size_t> coupling_lags = {10, 12};
  std::vector<double> coupling_weights = {0.9, 0.8};
  double noise = 0.1;
  double coupled_noise = 0.02;
  // 1.0 is a pure random walk; values < 1 give a damped (stationary) walk.
  // Pure walks concentrate spectral power in the lowest bin and score as
  // periodic under the peak-ratio rule, so experiments that need variates
  // classified aperiodic use damping around 0.7.
  double walk_damping = 1.0;
  std::uint64_t seed = 7;

  std::size_t total_variates() const { return periodic + walks + coupled; }
};

TimeSeriesDataset generate_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Periodicity classification and variate transformations
// ---------------------------------------------------------------------------

struct PeriodicityResult {
  bool periodic = false;
  double score = 0.0;  // peak single-bin power / total power, mean removed
};

// Direct O(n^2) discrete Fourier transform; requires >= 64 steps.
PeriodicityResult classify_periodicity(std::span<const double> series,
                                       double threshold = 0.2);

enum class Placement { Original, AperiodicMiddle, AperiodicEnd };

inline std::string to_string(Placement p) {
  switch (p) {
    case Placement::Original: return "original";
    case Placement::AperiodicMiddle: return "aperiodic_middle";
    default: return "aperiodic_end";
  }
}

struct ReorderResult {
  TimeSeriesDataset dataset;
  // permutation[new_column] = old_column; identity when placement=original
  std::vector<std::size_t> permutation;
};

ReorderResult reorder_variates(const TimeSeriesDataset& ds, Placement placement,
                               double threshold = 0.2);

struct SubsetResult {
  TimeSeriesDataset subset;
  std::vector<std::size_t> index_map;  // subset column -> original column
};

// ceil(fraction*V) variates sampled uniformly without replacement, original
// relative order preserved.
SubsetResult subset_variates(const TimeSeriesDataset& ds, double fraction,
                             std::uint64_t seed);

}  // namespace smamba
