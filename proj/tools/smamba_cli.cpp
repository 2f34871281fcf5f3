#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "smamba/checkpoint.hpp"
#include "smamba/data.hpp"
#include "smamba/experiments.hpp"
#include "smamba/model.hpp"
#include "smamba/report.hpp"
#include "smamba/runconfig.hpp"
#include "smamba/train.hpp"

// Experiment harness. Every command validates its full configuration before
// any computation; outputs land in the configured directory under
// deterministic names derived from (command, seed).
//
// Exit codes: 0 success, 2 configuration error, 3 artifact mismatch,
// 4 numerical divergence, 1 unexpected failure.

namespace fs = std::filesystem;
using namespace smamba;

namespace {

struct Cli {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;
};

RunConfig resolve_config(const Cli& cli) {
  RunConfig cfg;
  if (!cli.config_file.empty()) cfg = parse_config_file(cli.config_file);
  for (const auto& [key, value] : cli.overrides) apply_config_value(cfg, key, value);
  return cfg;
}

std::string run_prefix(const std::string& command, std::uint64_t seed) {
  return command + "_seed" + std::to_string(seed);
}

fs::path out_path(const RunConfig& cfg, const std::string& name) {
  return fs::path(cfg.out_dir) / name;
}

TimeSeriesDataset load_raw_dataset(const RunConfig& cfg) {
  if (cfg.source == "csv")
    return load_csv(cfg.csv_path, cfg.model.lookback + cfg.model.horizon);
  return generate_synthetic(cfg.synthetic);
}

TimeSeriesDataset load_standardized_dataset(const RunConfig& cfg) {
  return split_and_standardize(load_raw_dataset(cfg), cfg.r_train, cfg.r_val, cfg.r_test,
                               cfg.model.lookback + cfg.model.horizon);
}

void write_table(const fs::path& path, const std::string& header,
                 const std::vector<std::string>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write table: " + path.string());
  out << header << '\n';
  for (const auto& r : rows) out << r << '\n';
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string permutation_string(const std::vector<std::size_t>& perm) {
  std::string s;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(perm[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// train / eval / forecast
// ---------------------------------------------------------------------------

template <typename S>
int cmd_train_impl(RunConfig cfg) {
  TimeSeriesDataset ds = load_standardized_dataset(cfg);
  cfg.model.variates = ds.variates;
  auto model = SMambaModel<S>::init(cfg.model);

  TrainReport report = train<S>(model, ds, cfg.model.lookback, cfg.model.horizon, cfg.train);
  EvalMetrics persistence =
      evaluate_persistence(ds, Split::Test, cfg.model.lookback, cfg.model.horizon);

  const std::string prefix = run_prefix("train", cfg.train.seed);
  fs::create_directories(cfg.out_dir);
  Checkpoint ckpt = checkpoint_from_model(model, ds.variate_names, ds.mean, ds.stddev);
  ckpt.save(out_path(cfg, prefix + "_checkpoint.smck"));
  write_train_log(out_path(cfg, prefix + "_log.jsonl"), "train", cfg.train.seed, report);

  json summary = summary_json("train", cfg.train.seed, cfg.train.precision, report);
  summary["persistence"] = eval_json(persistence);
  write_summary(out_path(cfg, prefix + "_summary.json"), summary);

  std::cout << "train: test mse_std=" << report.test.mse_std
            << " mae_std=" << report.test.mae_std << " params=" << report.parameter_count
            << " best_epoch=" << report.best_epoch << "\n";
  if (report.diverged) {
    std::cerr << "training diverged: " << report.divergence_note << "\n";
    return 4;
  }
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  return cfg.train.precision == "f64" ? cmd_train_impl<double>(cfg)
                                      : cmd_train_impl<float>(cfg);
}

template <typename S>
int cmd_eval_impl(RunConfig cfg) {
  Checkpoint ckpt = Checkpoint::load(cfg.checkpoint_path);
  auto model = model_from_checkpoint<S>(ckpt);
  const std::size_t L = model.config.lookback, T = model.config.horizon;
  cfg.model.lookback = L;
  cfg.model.horizon = T;
  TimeSeriesDataset ds = load_standardized_dataset(cfg);

  EvalMetrics test = evaluate<S>(model, ds, Split::Test, L, T, cfg.train.batch_size);
  EvalMetrics persistence = evaluate_persistence(ds, Split::Test, L, T);

  fs::create_directories(cfg.out_dir);
  const std::string prefix = run_prefix("eval", cfg.train.seed);
  json summary{{"type", "summary"},
               {"command", "eval"},
               {"seed", cfg.train.seed},
               {"checkpoint", cfg.checkpoint_path},
               {"test", eval_json(test)},
               {"persistence", eval_json(persistence)},
               {"parameter_count", ckpt.parameter_count()}};
  write_summary(out_path(cfg, prefix + "_summary.json"), summary);
  std::cout << "eval: test mse_std=" << test.mse_std << " mae_std=" << test.mae_std << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  return cfg.train.precision == "f64" ? cmd_eval_impl<double>(cfg)
                                      : cmd_eval_impl<float>(cfg);
}

template <typename S>
int cmd_forecast_impl(RunConfig cfg) {
  Checkpoint ckpt = Checkpoint::load(cfg.checkpoint_path);
  auto model = model_from_checkpoint<S>(ckpt);
  const std::size_t L = model.config.lookback, T = model.config.horizon;

  if (cfg.source != "csv" || cfg.csv_path.empty())
    throw ConfigError("forecast requires --csv with at least lookback rows");
  TimeSeriesDataset raw = load_csv(cfg.csv_path, L);

  const CheckpointTensor* mean_t = ckpt.find("norm.mean");
  const CheckpointTensor* std_t = ckpt.find("norm.std");
  if (!mean_t || !std_t)
    throw ArtifactError("checkpoint carries no standardization statistics");
  const std::vector<double> mean = mean_t->as_f64();
  const std::vector<double> stddev = std_t->as_f64();
  if (mean.size() != raw.variates)
    throw ArtifactError("checkpoint stores " + std::to_string(mean.size()) +
                        " variates but the csv has " + std::to_string(raw.variates));

  Array<S> window({1, L, raw.variates});
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t v = 0; v < raw.variates; ++v)
      window[t * raw.variates + v] = static_cast<S>(
          (raw.at(raw.steps - L + t, v) - mean[v]) / stddev[v]);

  Tape<S> tape;
  Binder<S> binder(tape, false);
  Var<S> out = model.run(tape, binder, tape.leaf(std::move(window)));

  fs::create_directories(cfg.out_dir);
  const std::uint64_t seed = ckpt.meta.count("seed") ? std::stoull(ckpt.meta.at("seed")) : 0;
  const fs::path dest = out_path(cfg, run_prefix("forecast", seed) + "_forecast.csv");
  std::ofstream fout(dest, std::ios::trunc);
  if (!fout) throw ConfigError("cannot write forecast: " + dest.string());
  for (std::size_t v = 0; v < raw.variates; ++v) {
    if (v) fout << ',';
    fout << raw.variate_names[v];
  }
  fout << '\n';
  fout.precision(17);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t v = 0; v < raw.variates; ++v) {
      if (v) fout << ',';
      fout << static_cast<double>(out.value()[t * raw.variates + v]) * stddev[v] + mean[v];
    }
    fout << '\n';
  }
  std::cout << "forecast: wrote " << T << " rows to " << dest.string() << "\n";
  return 0;
}

int cmd_forecast(const RunConfig& cfg) {
  return cfg.train.precision == "f64" ? cmd_forecast_impl<double>(cfg)
                                      : cmd_forecast_impl<float>(cfg);
}

// ---------------------------------------------------------------------------
// ablate / reorder-exp / generalize-exp / bench / datagen
// ---------------------------------------------------------------------------

template <typename S>
int cmd_ablate_impl(RunConfig cfg) {
  TimeSeriesDataset ds = load_standardized_dataset(cfg);
  cfg.model.variates = ds.variates;
  auto cells = run_ablation<S>(ds, cfg.model, cfg.train, cfg.parallel_cells);

  fs::create_directories(cfg.out_dir);
  const std::string prefix = run_prefix("ablate", cfg.train.seed);
  std::vector<std::string> rows;
  json jcells = json::array();
  for (const auto& cell : cells) {
    rows.push_back(to_string(cell.vc) + "," + to_string(cell.td) + "," +
                   fmt(cell.report.test.mse_std) + "," + fmt(cell.report.test.mae_std) + "," +
                   fmt(cell.report.test.mse_raw) + "," + fmt(cell.report.test.mae_raw) + "," +
                   std::to_string(cell.report.parameter_count) + "," +
                   std::to_string(cell.report.best_epoch));
    json jc{{"vc", to_string(cell.vc)},
            {"td", to_string(cell.td)},
            {"test", eval_json(cell.report.test)},
            {"parameter_count", cell.report.parameter_count},
            {"best_epoch", cell.report.best_epoch},
            {"diverged", cell.report.diverged}};
    jcells.push_back(jc);
  }
  write_table(out_path(cfg, prefix + "_table.csv"),
              "vc,td,mse_std,mae_std,mse_raw,mae_raw,parameter_count,best_epoch", rows);
  json summary{{"type", "summary"},
               {"command", "ablate"},
               {"seed", cfg.train.seed},
               {"precision", cfg.train.precision},
               {"cells", jcells}};
  write_summary(out_path(cfg, prefix + "_summary.json"), summary);
  for (const auto& cell : cells)
    std::cout << "ablate: vc=" << to_string(cell.vc) << " td=" << to_string(cell.td)
              << " mse_std=" << cell.report.test.mse_std << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  return cfg.train.precision == "f64" ? cmd_ablate_impl<double>(cfg)
                                      : cmd_ablate_impl<float>(cfg);
}

template <typename S>
int cmd_reorder_impl(RunConfig cfg) {
  TimeSeriesDataset raw = load_raw_dataset(cfg);
  cfg.model.variates = raw.variates;
  ReorderExperiment exp =
      run_reorder<S>(raw, cfg.model, cfg.train, cfg.r_train, cfg.r_val, cfg.r_test,
                     cfg.periodicity_threshold, cfg.parallel_cells);

  fs::create_directories(cfg.out_dir);
  const std::string prefix = run_prefix("reorder-exp", cfg.train.seed);
  std::vector<std::string> rows;
  json jarms = json::array();
  for (const auto& arm : exp.arms) {
    rows.push_back(to_string(arm.placement) + "," + permutation_string(arm.permutation) +
                   "," + fmt(arm.report.test.mse_std) + "," + fmt(arm.report.test.mae_std) +
                   "," + fmt(exp.spread));
    jarms.push_back(json{{"placement", to_string(arm.placement)},
                         {"permutation", arm.permutation},
                         {"test", eval_json(arm.report.test)},
                         {"best_epoch", arm.report.best_epoch}});
  }
  write_table(out_path(cfg, prefix + "_table.csv"),
              "placement,permutation,mse_std,mae_std,spread_max_minus_min", rows);
  json summary{{"type", "summary"},      {"command", "reorder-exp"},
               {"seed", cfg.train.seed}, {"precision", cfg.train.precision},
               {"arms", jarms},          {"spread", exp.spread},
               {"relative_spread", exp.relative_spread}};
  write_summary(out_path(cfg, prefix + "_summary.json"), summary);
  std::cout << "reorder-exp: spread=" << exp.spread
            << " relative=" << exp.relative_spread << "\n";
  return 0;
}

int cmd_reorder(const RunConfig& cfg) {
  return cfg.train.precision == "f64" ? cmd_reorder_impl<double>(cfg)
                                      : cmd_reorder_impl<float>(cfg);
}

template <typename S>
int cmd_generalize_impl(RunConfig cfg) {
  TimeSeriesDataset ds = load_standardized_dataset(cfg);
  cfg.model.variates = ds.variates;
  GeneralizeExperiment exp =
      run_generalize<S>(ds, cfg.model, cfg.train, cfg.fraction, cfg.subset_seed);

  fs::create_directories(cfg.out_dir);
  const std::string prefix = run_prefix("generalize-exp", cfg.train.seed);
  std::vector<std::string> rows{
      fmt(exp.fraction) + "," + permutation_string(exp.trained_variates) + "," +
      fmt(exp.subset_report.test.mse_std) + "," + fmt(exp.full_eval.mse_std) + "," +
      fmt(exp.seen_mse) + "," + fmt(exp.unseen_mse) + "," +
      fmt(exp.persistence_full.mse_std)};
  write_table(out_path(cfg, prefix + "_table.csv"),
              "fraction,trained_variates,subset_mse_std,full_mse_std,seen_mse_std,"
              "unseen_mse_std,persistence_mse_std",
              rows);
  json summary{{"type", "summary"},
               {"command", "generalize-exp"},
               {"seed", cfg.train.seed},
               {"precision", cfg.train.precision},
               {"fraction", exp.fraction},
               {"trained_variates", exp.trained_variates},
               {"subset_test", eval_json(exp.subset_report.test)},
               {"full_test", eval_json(exp.full_eval)},
               {"seen_mse_std", exp.seen_mse},
               {"unseen_mse_std", exp.unseen_mse},
               {"persistence", eval_json(exp.persistence_full)}};
  write_summary(out_path(cfg, prefix + "_summary.json"), summary);
  std::cout << "generalize-exp: seen=" << exp.seen_mse << " unseen=" << exp.unseen_mse
            << " persistence=" << exp.persistence_full.mse_std << "\n";
  return 0;
}

int cmd_generalize(const RunConfig& cfg) {
  return cfg.train.precision == "f64" ? cmd_generalize_impl<double>(cfg)
                                      : cmd_generalize_impl<float>(cfg);
}

int cmd_bench(const RunConfig& cfg) {
  BenchConfig bc = cfg.bench;
  bc.seed = cfg.train.seed;
  auto rows = benchmark_scaling({VcVariant::BiMamba, VcVariant::Attention},
                                cfg.bench_variates, bc);

  fs::create_directories(cfg.out_dir);
  const std::string prefix = run_prefix("bench", cfg.train.seed);
  std::vector<std::string> lines;
  for (const auto& r : rows)
    lines.push_back(r.variant + "," + std::to_string(r.variates) + "," +
                    fmt(r.median_seconds) + "," + fmt(r.min_seconds) + "," +
                    fmt(r.max_seconds) + "," + std::to_string(r.parameter_count) + "," +
                    std::to_string(r.repeats));
  write_table(out_path(cfg, prefix + "_table.csv"),
              "variant,variates,median_seconds,min_seconds,max_seconds,parameter_count,"
              "repeats",
              lines);

  json jrows = json::array();
  std::vector<std::pair<std::size_t, double>> mamba_pts, attn_pts;
  for (const auto& r : rows) {
    jrows.push_back(json{{"variant", r.variant},
                         {"variates", r.variates},
                         {"median_seconds", r.median_seconds},
                         {"parameter_count", r.parameter_count}});
    if (r.variant == "bi_mamba") mamba_pts.emplace_back(r.variates, r.median_seconds);
    if (r.variant == "attention") attn_pts.emplace_back(r.variates, r.median_seconds);
  }
  json summary{{"type", "summary"},
               {"command", "bench"},
               {"seed", cfg.train.seed},
               {"rows", jrows}};
  if (mamba_pts.size() >= 2) summary["bi_mamba_slope"] = loglog_slope(mamba_pts);
  if (attn_pts.size() >= 2) summary["attention_slope"] = loglog_slope(attn_pts);
  write_summary(out_path(cfg, prefix + "_summary.json"), summary);
  for (const auto& r : rows)
    std::cout << "bench: " << r.variant << " V=" << r.variates
              << " median_s=" << r.median_seconds << "\n";
  return 0;
}

int cmd_datagen(const RunConfig& cfg) {
  TimeSeriesDataset ds = generate_synthetic(cfg.synthetic);
  fs::create_directories(cfg.out_dir);
  const fs::path dest =
      out_path(cfg, run_prefix("datagen", cfg.synthetic.seed) + "_data.csv");
  save_csv(ds, dest);
  std::cout << "datagen: wrote " << ds.steps << " steps x " << ds.variates
            << " variates to " << dest.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

// Repeated flags keep the last occurrence, matching config-file override
// semantics.
template <typename Fn>
void add_opt(CLI::App* sub, const std::string& name, Fn&& fn, const std::string& help) {
  sub->add_option_function<std::string>(name, std::forward<Fn>(fn), help)->take_last();
}

void add_common_flags(CLI::App* sub, Cli& cli) {
  add_opt(sub, 
      "--config", [&cli](const std::string& v) { cli.config_file = v; },
      "declarative config file (sections of key=value)");
  auto push = [&cli](const char* key) {
    return [&cli, key](const std::string& v) { cli.overrides.emplace_back(key, v); };
  };
  add_opt(sub, "--csv", [&cli](const std::string& v) {
    cli.overrides.emplace_back("data.source", "csv");
    cli.overrides.emplace_back("data.csv_path", v);
  }, "csv dataset path (switches data.source to csv)");
  add_opt(sub, "--split", push("data.split"), "train,val,test ratios");
  add_opt(sub, "--lookback", push("model.lookback"), "lookback length L");
  add_opt(sub, "--horizon", push("model.horizon"), "forecast horizon T");
  add_opt(sub, "--width", push("model.width"), "token width D");
  add_opt(sub, "--layers", push("model.layers"), "encoder layers");
  add_opt(sub, "--state-dim", push("model.state_dim"), "SSM state size N");
  add_opt(sub, "--expand", push("model.expand"), "block expansion E");
  add_opt(sub, "--conv-kernel", push("model.conv_kernel"), "conv kernel k");
  add_opt(sub, "--ffn-hidden", push("model.ffn_hidden"), "FFN width");
  add_opt(sub, "--vc", push("model.vc"), "vc variant: bi_mamba|attention|none");
  add_opt(sub, "--td", push("model.td"), "td variant: ffn|none");
  add_opt(sub, "--heads", push("model.heads"), "attention heads");
  add_opt(sub, "--batch", push("train.batch"), "batch size");
  add_opt(sub, "--lr", push("train.lr"), "learning rate");
  add_opt(sub, "--epochs", push("train.epochs"), "max epochs");
  add_opt(sub, "--patience", push("train.patience"), "early-stop patience");
  add_opt(sub, "--precision", push("train.precision"), "f32|f64");
  add_opt(sub, "--seed", [&cli](const std::string& v) {
    cli.overrides.emplace_back("model.seed", v);
    cli.overrides.emplace_back("train.seed", v);
  }, "run seed (model init + training)");
  add_opt(sub, "--data-seed", push("synthetic.seed"), "synthetic data seed");
  add_opt(sub, "--steps", push("synthetic.steps"), "synthetic steps");
  add_opt(sub, "--fraction", push("experiment.fraction"),
                                        "variate fraction for generalize-exp");
  add_opt(sub, "--theta", push("experiment.theta"),
                                        "periodicity threshold");
  add_opt(sub, "--parallel", push("experiment.parallel"),
                                        "run grid cells in parallel (0/1)");
  add_opt(sub, "--bench-variates", push("experiment.bench_variates"),
                                        "comma list of V for bench");
  add_opt(sub, "--bench-steps", push("experiment.bench_steps"),
                                        "optimizer steps per bench repeat");
  add_opt(sub, "--bench-repeats", push("experiment.bench_repeats"),
                                        "bench repeats (>=1)");
  add_opt(sub, "--bench-batch", push("experiment.bench_batch"),
                                        "bench batch size");
  add_opt(sub, "--bench-lookback", push("experiment.bench_lookback"),
                                        "bench lookback length");
  add_opt(sub, "--out", push("output.dir"), "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selective state-space forecaster harness"};
  app.require_subcommand(1);

  struct Sub {
    std::string name;
    std::string help;
    int (*run)(const RunConfig&);
    bool takes_checkpoint;
  };
  const std::vector<Sub> subs{
      {"train", "train a forecaster and write checkpoint/report", cmd_train, false},
      {"eval", "evaluate a checkpoint on a dataset's test split", cmd_eval, true},
      {"forecast", "forecast beyond the end of a csv file", cmd_forecast, true},
      {"ablate", "train the 6-cell vc/td ablation grid", cmd_ablate, false},
      {"reorder-exp", "train across aperiodic-variate placements", cmd_reorder, false},
      {"generalize-exp", "train on a variate fraction, evaluate on all", cmd_generalize,
       false},
      {"bench", "wall-time scaling in the variate count", cmd_bench, false},
      {"datagen", "write a synthetic dataset as csv", cmd_datagen, false},
  };

  std::vector<std::unique_ptr<Cli>> clis;
  for (const auto& sub : subs) {
    auto* s = app.add_subcommand(sub.name, sub.help);
    clis.push_back(std::make_unique<Cli>());
    Cli* cli = clis.back().get();
    add_common_flags(s, *cli);
    if (sub.takes_checkpoint) {
      s->add_option_function<std::string>(
          "--checkpoint",
          [cli](const std::string& v) { cli->overrides.emplace_back("@checkpoint", v); },
          "checkpoint file");
    }
    s->callback([&sub, cli]() {
      RunConfig cfg;
      Cli local = *cli;
      // route the checkpoint pseudo-key around the config table
      std::string checkpoint;
      local.overrides.erase(
          std::remove_if(local.overrides.begin(), local.overrides.end(),
                         [&](const auto& kv) {
                           if (kv.first == "@checkpoint") {
                             checkpoint = kv.second;
                             return true;
                           }
                           return false;
                         }),
          local.overrides.end());
      cfg = resolve_config(local);
      cfg.checkpoint_path = checkpoint;
      cfg.validate(sub.name);
      std::exit(sub.run(cfg));
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const LoadError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return 2;
  } catch (const ArtifactError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return 3;
  } catch (const ComputeError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
