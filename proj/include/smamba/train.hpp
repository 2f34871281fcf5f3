#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "smamba/data.hpp"
#include "smamba/errors.hpp"
#include "smamba/model.hpp"
#include "smamba/ops.hpp"
#include "smamba/ssm.hpp"
#include "smamba/tape.hpp"

namespace smamba {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

template <typename S>
double mse(const Array<S>& pred, const Array<S>& target) {
  if (pred.shape != target.shape)
    throw DimError("mse operands differ: " + shape_str(pred.shape) + " vs " +
                   shape_str(target.shape));
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

template <typename S>
double mae(const Array<S>& pred, const Array<S>& target) {
  if (pred.shape != target.shape)
    throw DimError("mae operands differ: " + shape_str(pred.shape) + " vs " +
                   shape_str(target.shape));
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i)
    acc += std::fabs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
  return acc / static_cast<double>(pred.numel());
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t max_epochs = 200;
  std::size_t patience = 5;
  std::uint64_t seed = 42;
  std::string precision = "f32";  // f32 for training, f64 for verification runs

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (lr <= 0) throw ConfigError("lr must be > 0");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
      throw ConfigError("adam betas must lie in (0,1)");
    if (eps <= 0) throw ConfigError("adam eps must be > 0");
    if (patience > max_epochs && max_epochs > 0)
      throw ConfigError("patience must be <= max_epochs");
    if (precision != "f32" && precision != "f64")
      throw ConfigError("precision must be f32 or f64");
  }
};

// Moments are kept in double in both precisions; updates are elementwise so
// parameter trajectories are bit-reproducible for a fixed seed.
template <typename S>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const TrainConfig& cfg)
      : lr_(cfg.lr), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps) {}

  void step(const std::vector<BoundParam<S>>& bindings, Tape<S>& tape) {
    ++t_;
    if (states_.empty()) {
      states_.resize(bindings.size());
      for (std::size_t i = 0; i < bindings.size(); ++i) {
        states_[i].m.assign(bindings[i].storage->numel(), 0.0);
        states_[i].v.assign(bindings[i].storage->numel(), 0.0);
      }
    }
    if (states_.size() != bindings.size())
      throw StateError("optimizer state does not match parameter bindings");

    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < bindings.size(); ++i) {
      const Array<S>& g = tape.grad_of(bindings[i].var);
      Array<S>& p = *bindings[i].storage;
      auto& st = states_[i];
      for (std::size_t j = 0; j < p.numel(); ++j) {
        const double gj = static_cast<double>(g[j]);
        if (!std::isfinite(gj))
          throw ComputeError("non-finite gradient for parameter '" + bindings[i].name + "'");
        st.m[j] = beta1_ * st.m[j] + (1.0 - beta1_) * gj;
        st.v[j] = beta2_ * st.v[j] + (1.0 - beta2_) * gj * gj;
        const double mhat = st.m[j] / bc1;
        const double vhat = st.v[j] / bc2;
        p[j] = static_cast<S>(static_cast<double>(p[j]) -
                              lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  struct State {
    std::vector<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<State> states_;
};

// ---------------------------------------------------------------------------
// Batched window evaluation
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
Array<S> stack_windows(const std::vector<WindowSample>& windows,
                       const std::vector<std::size_t>& idx, bool targets) {
  const Array<double>& first = targets ? windows[idx[0]].target : windows[idx[0]].lookback;
  const std::size_t R = first.shape[0], V = first.shape[1];
  Array<S> out({idx.size(), R, V});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Array<double>& src = targets ? windows[idx[b]].target : windows[idx[b]].lookback;
    for (std::size_t i = 0; i < R * V; ++i)
      out[b * R * V + i] = static_cast<S>(src[i]);
  }
  return out;
}

}  // namespace detail

struct EvalMetrics {
  double mse_std = 0.0, mae_std = 0.0;  // standardized scale
  double mse_raw = 0.0, mae_raw = 0.0;  // original units
  std::vector<double> per_variate_mse_std;
  std::size_t windows = 0;
};

// Window-by-window forward over one split; accumulation order is fixed.
template <typename S, typename Model>
EvalMetrics evaluate(Model& model, const TimeSeriesDataset& ds, Split split,
                     std::size_t lookback, std::size_t horizon, std::size_t batch = 16) {
  const std::vector<WindowSample> windows = make_windows(ds, split, lookback, horizon);
  EvalMetrics m;
  m.windows = windows.size();
  m.per_variate_mse_std.assign(ds.variates, 0.0);
  if (windows.empty()) return m;

  double se = 0, ae = 0, se_raw = 0, ae_raw = 0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < windows.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(start + batch, windows.size()); ++i)
      idx.push_back(i);
    Array<S> input = detail::stack_windows<S>(windows, idx, false);
    Array<S> target = detail::stack_windows<S>(windows, idx, true);
    Tape<S> tape;
    Binder<S> binder(tape, false);
    Var<S> out = model.run(tape, binder, tape.leaf(std::move(input)));
    const Array<S>& pred = out.value();
    const std::size_t B = idx.size(), V = ds.variates;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < horizon; ++t)
        for (std::size_t v = 0; v < V; ++v) {
          const std::size_t at = (b * horizon + t) * V + v;
          const double p = static_cast<double>(pred[at]);
          const double y = static_cast<double>(target[at]);
          const double d = p - y;
          se += d * d;
          ae += std::fabs(d);
          m.per_variate_mse_std[v] += d * d;
          const double praw = ds.de_standardize(p, v);
          const double yraw = ds.de_standardize(y, v);
          se_raw += (praw - yraw) * (praw - yraw);
          ae_raw += std::fabs(praw - yraw);
          ++count;
        }
  }
  const double n = static_cast<double>(count);
  m.mse_std = se / n;
  m.mae_std = ae / n;
  m.mse_raw = se_raw / n;
  m.mae_raw = ae_raw / n;
  const double per_v = static_cast<double>(m.windows * horizon);
  for (auto& v : m.per_variate_mse_std) v /= per_v;
  return m;
}

// Persistence baseline metrics over a split (no parameters, no tape).
inline EvalMetrics evaluate_persistence(const TimeSeriesDataset& ds, Split split,
                                        std::size_t lookback, std::size_t horizon) {
  const std::vector<WindowSample> windows = make_windows(ds, split, lookback, horizon);
  EvalMetrics m;
  m.windows = windows.size();
  m.per_variate_mse_std.assign(ds.variates, 0.0);
  if (windows.empty()) return m;
  double se = 0, ae = 0, se_raw = 0, ae_raw = 0;
  std::size_t count = 0;
  for (const auto& w : windows) {
    Array<double> pred = persistence_forecast(
        Array<double>({1, lookback, ds.variates}, w.lookback.data), horizon);
    for (std::size_t t = 0; t < horizon; ++t)
      for (std::size_t v = 0; v < ds.variates; ++v) {
        const double p = pred[t * ds.variates + v];
        const double y = w.target[t * ds.variates + v];
        const double d = p - y;
        se += d * d;
        ae += std::fabs(d);
        m.per_variate_mse_std[v] += d * d;
        const double praw = ds.de_standardize(p, v);
        const double yraw = ds.de_standardize(y, v);
        se_raw += (praw - yraw) * (praw - yraw);
        ae_raw += std::fabs(praw - yraw);
        ++count;
      }
  }
  const double n = static_cast<double>(count);
  m.mse_std = se / n;
  m.mae_std = ae / n;
  m.mse_raw = se_raw / n;
  m.mae_raw = ae_raw / n;
  const double per_v = static_cast<double>(m.windows * horizon);
  for (auto& v : m.per_variate_mse_std) v /= per_v;
  return m;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 = never improved / untrained
  double best_val_loss = std::numeric_limits<double>::infinity();
  EvalMetrics test;
  std::size_t parameter_count = 0;
  bool diverged = false;
  std::string divergence_note;
  double total_seconds = 0.0;
};

// Seeded shuffled mini-batches, MSE loss on the standardized scale, early
// stop after `patience` epochs without val improvement. The best-epoch
// parameters are restored into the model before test evaluation.
template <typename S, typename Model>
TrainReport train(Model& model, const TimeSeriesDataset& ds, std::size_t lookback,
                  std::size_t horizon, const TrainConfig& cfg) {
  cfg.validate();
  const std::vector<WindowSample> train_windows =
      make_windows(ds, Split::Train, lookback, horizon);
  const std::vector<WindowSample> val_windows =
      make_windows(ds, Split::Val, lookback, horizon);
  if (train_windows.empty() || val_windows.empty())
    throw ProtocolError("train/val split too short for lookback+horizon windows");

  TrainReport report;
  report.parameter_count = count_parameters(model);

  auto snapshot = [&] {
    std::vector<Array<S>> copy;
    model.visit([&](const std::string&, Array<S>& a) { copy.push_back(a); });
    return copy;
  };
  auto restore = [&](const std::vector<Array<S>>& copy) {
    std::size_t i = 0;
    model.visit([&](const std::string&, Array<S>& a) { a = copy[i++]; });
  };

  std::vector<Array<S>> best = snapshot();
  AdamOptimizer<S> adam(cfg);
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(train_windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const auto run_start = std::chrono::steady_clock::now();
  std::size_t epochs_since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double train_loss_sum = 0.0;
    std::size_t train_elems = 0;
    bool failed = false;
    std::string note;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() +
              static_cast<std::ptrdiff_t>(std::min(start + cfg.batch_size, order.size())));
      try {
        Tape<S> tape;
        Binder<S> binder(tape, true);
        Var<S> out = model.run(tape, binder,
                               tape.leaf(detail::stack_windows<S>(train_windows, idx, false)));
        Var<S> target = tape.leaf(detail::stack_windows<S>(train_windows, idx, true));
        Var<S> diff = sub(out, target);
        Var<S> loss = reduce_mean(mul(diff, diff));
        const double lv = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(lv)) throw ComputeError("training loss is not finite");
        train_loss_sum += lv * static_cast<double>(out.numel());
        train_elems += out.numel();
        tape.backward(loss);
        adam.step(binder.bindings(), tape);
      } catch (const ComputeError& e) {
        failed = true;
        note = e.what();
        break;
      }
    }
    if (failed) {
      report.diverged = true;
      report.divergence_note = note;
      break;
    }

    double val_loss;
    try {
      val_loss = evaluate<S>(model, ds, Split::Val, lookback, horizon, cfg.batch_size).mse_std;
    } catch (const ComputeError& e) {
      report.diverged = true;
      report.divergence_note = e.what();
      break;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss_sum / static_cast<double>(train_elems);
    rec.val_loss = val_loss;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                epoch_start)
                      .count();
    report.epochs.push_back(rec);

    if (val_loss < report.best_val_loss) {
      report.best_val_loss = val_loss;
      report.best_epoch = epoch;
      best = snapshot();
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) break;
    }
  }

  restore(best);
  report.test = evaluate<S>(model, ds, Split::Test, lookback, horizon, cfg.batch_size);
  report.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Wall-time scaling benchmark
// ---------------------------------------------------------------------------

struct BenchConfig {
  std::size_t lookback = 48;
  std::size_t horizon = 12;
  std::size_t token_width = 64;
  std::size_t n_layers = 1;
  std::size_t state_dim = 8;
  std::size_t expand = 2;
  std::size_t conv_kernel = 4;
  std::size_t ffn_hidden = 128;
  std::size_t n_heads = 4;
  std::size_t steps = 50;    // optimizer steps timed per repeat
  std::size_t repeats = 3;
  std::size_t batch = 8;
  std::uint64_t seed = 7;
};

struct BenchRow {
  std::string variant;
  std::size_t variates = 0;
  double median_seconds = 0.0;
  double min_seconds = 0.0;
  double max_seconds = 0.0;
  std::size_t parameter_count = 0;
  std::size_t repeats = 0;
};

// Trains `steps` optimizer steps per repeat on synthetic data (float32) and
// records the median wall time over repeats. Timing excludes data and model
// setup.
inline std::vector<BenchRow> benchmark_scaling(const std::vector<VcVariant>& variants,
                                               const std::vector<std::size_t>& variate_counts,
                                               const BenchConfig& cfg) {
  if (cfg.repeats == 0) throw ConfigError("bench repeats must be >= 1");
  std::vector<BenchRow> rows;
  for (VcVariant vc : variants) {
    for (std::size_t V : variate_counts) {
      SyntheticSpec spec;
      // sized so the train split always yields at least batch*8 windows
      const std::size_t train_need = cfg.lookback + cfg.horizon + cfg.batch * 8;
      spec.steps = (train_need * 10) / 7 + 8;
      spec.periodic = V;
      spec.walks = 0;
      spec.coupled = 0;
      spec.noise = 0.2;
      spec.seed = cfg.seed;
      TimeSeriesDataset ds =
          split_and_standardize(generate_synthetic(spec), 0.7, 0.15, 0.15, 0);
      const std::vector<WindowSample> windows =
          make_windows(ds, Split::Train, cfg.lookback, cfg.horizon);
      if (windows.empty()) throw ProtocolError("bench dataset produced no windows");

      ModelConfig mc;
      mc.lookback = cfg.lookback;
      mc.horizon = cfg.horizon;
      mc.variates = V;
      mc.token_width = cfg.token_width;
      mc.n_layers = cfg.n_layers;
      mc.ssm = SSMConfig{.token_width = cfg.token_width, .state_dim = cfg.state_dim,
                         .expand = cfg.expand, .conv_kernel = cfg.conv_kernel};
      mc.ffn_hidden = cfg.ffn_hidden;
      mc.vc = vc;
      mc.td = TdVariant::Ffn;
      mc.n_heads = cfg.n_heads;
      mc.seed = cfg.seed;

      TrainConfig tc;
      tc.batch_size = cfg.batch;
      tc.seed = cfg.seed;

      BenchRow row;
      row.variant = to_string(vc);
      row.variates = V;
      row.repeats = cfg.repeats;
      std::vector<double> times;
      for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
        auto model = SMambaModel<float>::init(mc);
        row.parameter_count = count_parameters(model);
        AdamOptimizer<float> adam(tc);
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t step = 0; step < cfg.steps; ++step) {
          std::vector<std::size_t> idx;
          for (std::size_t b = 0; b < cfg.batch; ++b)
            idx.push_back((step * cfg.batch + b) % windows.size());
          Tape<float> tape;
          Binder<float> binder(tape, true);
          Var<float> out = model.run(tape, binder,
                                     tape.leaf(detail::stack_windows<float>(windows, idx, false)));
          Var<float> target = tape.leaf(detail::stack_windows<float>(windows, idx, true));
          Var<float> diff = sub(out, target);
          Var<float> loss = reduce_mean(mul(diff, diff));
          tape.backward(loss);
          adam.step(binder.bindings(), tape);
        }
        times.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
      std::sort(times.begin(), times.end());
      row.min_seconds = times.front();
      row.max_seconds = times.back();
      row.median_seconds = times[times.size() / 2];
      if (times.size() % 2 == 0)
        row.median_seconds = 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
      rows.push_back(row);
    }
  }
  return rows;
}

// Least-squares slope of log(seconds) against log(V).
inline double loglog_slope(const std::vector<std::pair<std::size_t, double>>& points) {
  if (points.size() < 2) throw ContractError("slope needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(points.size());
  for (const auto& [v, t] : points) {
    const double x = std::log(static_cast<double>(v));
    const double y = std::log(t);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace smamba
