#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "smamba/errors.hpp"
#include "smamba/train.hpp"

// Line-delimited structured training log plus a machine-readable summary
// record. Summary records contain no timing fields, so a rerun with the same
// config and seed produces byte-identical summaries; wall times live in the
// epoch/timing lines of the log.

namespace smamba {

using json = nlohmann::json;

inline json eval_json(const EvalMetrics& m) {
  return json{{"mse_std", m.mse_std},
              {"mae_std", m.mae_std},
              {"mse_raw", m.mse_raw},
              {"mae_raw", m.mae_raw},
              {"windows", m.windows}};
}

inline json summary_json(const std::string& command, std::uint64_t seed,
                         const std::string& precision, const TrainReport& report) {
  json epochs = json::array();
  for (const auto& e : report.epochs)
    epochs.push_back(json{{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss}});
  return json{{"type", "summary"},
              {"command", command},
              {"seed", seed},
              {"precision", precision},
              {"epochs_run", report.epochs.size()},
              {"best_epoch", report.best_epoch},
              {"best_val_loss",
               report.best_epoch == 0 ? json(nullptr) : json(report.best_val_loss)},
              {"epoch_losses", epochs},
              {"test", eval_json(report.test)},
              {"parameter_count", report.parameter_count},
              {"diverged", report.diverged}};
}

inline void write_summary(const std::filesystem::path& path, const json& summary) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write summary: " + path.string());
  out << summary.dump() << '\n';
}

inline void write_train_log(const std::filesystem::path& path, const std::string& command,
                            std::uint64_t seed, const TrainReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write log: " + path.string());
  for (const auto& e : report.epochs) {
    json line{{"type", "epoch"},    {"command", command},      {"seed", seed},
              {"epoch", e.epoch},   {"train_loss", e.train_loss},
              {"val_loss", e.val_loss}, {"seconds", e.seconds}};
    out << line.dump() << '\n';
  }
  if (report.diverged) {
    json line{{"type", "divergence"}, {"note", report.divergence_note}};
    out << line.dump() << '\n';
  }
  json timing{{"type", "timing"}, {"total_seconds", report.total_seconds}};
  out << timing.dump() << '\n';
}

}  // namespace smamba
