#pragma once

#include <string>
#include <thread>
#include <vector>

#include "smamba/data.hpp"
#include "smamba/model.hpp"
#include "smamba/train.hpp"

// Library-level drivers for the grid experiments; the CLI wraps these and
// handles file output.

namespace smamba {

// ---------------------------------------------------------------------------
// Ablation grid: {bi_mamba, attention, none} x {ffn, none}
// ---------------------------------------------------------------------------

struct AblationCell {
  VcVariant vc = VcVariant::None;
  TdVariant td = TdVariant::None;
  TrainReport report;
};

inline std::vector<std::pair<VcVariant, TdVariant>> ablation_grid() {
  std::vector<std::pair<VcVariant, TdVariant>> grid;
  for (VcVariant vc : {VcVariant::BiMamba, VcVariant::Attention, VcVariant::None})
    for (TdVariant td : {TdVariant::Ffn, TdVariant::None}) grid.emplace_back(vc, td);
  return grid;
}

// One trained run per grid cell with a shared seed and dataset. Cells are
// independent; `parallel` runs them on separate threads (one tape per cell,
// no shared mutable state).
template <typename S>
std::vector<AblationCell> run_ablation(const TimeSeriesDataset& ds, ModelConfig base,
                                       TrainConfig tc, bool parallel = false) {
  const auto grid = ablation_grid();
  std::vector<AblationCell> cells(grid.size());
  auto run_cell = [&](std::size_t i) {
    ModelConfig cfg = base;
    cfg.vc = grid[i].first;
    cfg.td = grid[i].second;
    auto model = SMambaModel<S>::init(cfg);
    cells[i].vc = cfg.vc;
    cells[i].td = cfg.td;
    cells[i].report = train<S>(model, ds, cfg.lookback, cfg.horizon, tc);
  };
  if (parallel) {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < grid.size(); ++i) threads.emplace_back(run_cell, i);
    for (auto& t : threads) t.join();
  } else {
    for (std::size_t i = 0; i < grid.size(); ++i) run_cell(i);
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Variate-order experiment
// ---------------------------------------------------------------------------

struct ReorderArm {
  Placement placement = Placement::Original;
  std::vector<std::size_t> permutation;
  TrainReport report;
};

struct ReorderExperiment {
  std::vector<ReorderArm> arms;
  double spread = 0.0;          // max - min test MSE (standardized)
  double relative_spread = 0.0; // spread / original-order MSE
};

// Trains one model per placement of the aperiodic variates. `raw` must be
// unsplit; each arm permutes the raw columns, then splits and standardizes.
template <typename S>
ReorderExperiment run_reorder(const TimeSeriesDataset& raw, ModelConfig base,
                              TrainConfig tc, double r_train, double r_val, double r_test,
                              double threshold = 0.2, bool parallel = false) {
  const Placement placements[3] = {Placement::Original, Placement::AperiodicMiddle,
                                   Placement::AperiodicEnd};
  ReorderExperiment out;
  out.arms.resize(3);
  auto run_arm = [&](std::size_t i) {
    ReorderResult r = reorder_variates(raw, placements[i], threshold);
    TimeSeriesDataset ds = split_and_standardize(r.dataset, r_train, r_val, r_test,
                                                 base.lookback + base.horizon);
    auto model = SMambaModel<S>::init(base);
    out.arms[i].placement = placements[i];
    out.arms[i].permutation = r.permutation;
    out.arms[i].report = train<S>(model, ds, base.lookback, base.horizon, tc);
  };
  if (parallel) {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < 3; ++i) threads.emplace_back(run_arm, i);
    for (auto& t : threads) t.join();
  } else {
    for (std::size_t i = 0; i < 3; ++i) run_arm(i);
  }
  double lo = out.arms[0].report.test.mse_std, hi = lo;
  for (const auto& arm : out.arms) {
    lo = std::min(lo, arm.report.test.mse_std);
    hi = std::max(hi, arm.report.test.mse_std);
  }
  out.spread = hi - lo;
  out.relative_spread = out.spread / out.arms[0].report.test.mse_std;
  return out;
}

// ---------------------------------------------------------------------------
// Train-on-a-fraction generalization experiment
// ---------------------------------------------------------------------------

struct GeneralizeExperiment {
  double fraction = 0.4;
  std::vector<std::size_t> trained_variates;  // original column indices
  TrainReport subset_report;                  // metrics on the trained subset
  EvalMetrics full_eval;                      // same weights applied to all variates
  double seen_mse = 0.0;                      // standardized, averaged per group
  double unseen_mse = 0.0;
  EvalMetrics persistence_full;
};

// Channel-shared weights make the model applicable to variates never seen in
// training; this trains on ceil(fraction*V) columns and evaluates on all V.
template <typename S>
GeneralizeExperiment run_generalize(const TimeSeriesDataset& ds, ModelConfig base,
                                    TrainConfig tc, double fraction,
                                    std::uint64_t subset_seed) {
  GeneralizeExperiment out;
  out.fraction = fraction;
  SubsetResult subset = subset_variates(ds, fraction, subset_seed);
  out.trained_variates = subset.index_map;

  ModelConfig cfg = base;
  cfg.variates = subset.subset.variates;
  auto model = SMambaModel<S>::init(cfg);
  out.subset_report = train<S>(model, subset.subset, cfg.lookback, cfg.horizon, tc);

  out.full_eval = evaluate<S>(model, ds, Split::Test, cfg.lookback, cfg.horizon,
                              tc.batch_size);
  out.persistence_full = evaluate_persistence(ds, Split::Test, cfg.lookback, cfg.horizon);

  std::vector<bool> seen(ds.variates, false);
  for (std::size_t idx : subset.index_map) seen[idx] = true;
  double seen_sum = 0, unseen_sum = 0;
  std::size_t seen_n = 0, unseen_n = 0;
  for (std::size_t v = 0; v < ds.variates; ++v) {
    if (seen[v]) {
      seen_sum += out.full_eval.per_variate_mse_std[v];
      ++seen_n;
    } else {
      unseen_sum += out.full_eval.per_variate_mse_std[v];
      ++unseen_n;
    }
  }
  out.seen_mse = seen_n ? seen_sum / static_cast<double>(seen_n) : 0.0;
  out.unseen_mse = unseen_n ? unseen_sum / static_cast<double>(unseen_n) : 0.0;
  return out;
}

}  // namespace smamba
