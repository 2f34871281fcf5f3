#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "smamba/data.hpp"
#include "smamba/model.hpp"
#include "smamba/train.hpp"

namespace smamba {

// Declarative run configuration: a flat key-value file with [sections],
// optionally overridden by command-line flags (flags win). Every key is
// validated before any computation.
struct RunConfig {
  // [data]
  std::string source = "synthetic";  // synthetic | csv
  std::string csv_path;
  double r_train = 0.7, r_val = 0.1, r_test = 0.2;

  // [synthetic]
  SyntheticSpec synthetic;

  // [model]
  ModelConfig model;

  // [train]
  TrainConfig train;

  // [experiment]
  double fraction = 0.4;
  std::uint64_t subset_seed = 1;
  double periodicity_threshold = 0.2;
  bool parallel_cells = false;
  std::vector<std::size_t> bench_variates = {64, 128, 256};
  BenchConfig bench;

  // [output]
  std::string out_dir = "out";

  // forecast/eval inputs (flags only)
  std::string checkpoint_path;

  void validate(const std::string& command) const;
};

// Applies one "section.key" assignment; unknown keys raise ConfigError
// naming the key.
void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig parse_config_file(const std::filesystem::path& path);

}  // namespace smamba
