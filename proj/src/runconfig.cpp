#include "smamba/runconfig.hpp"

#include <fstream>
#include <sstream>

namespace smamba {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename T, typename Fn>
std::vector<T> to_list(const std::string& key, const std::string& v, Fn parse) {
  std::vector<T> out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse(key, item));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "' expects a list, got '" + v + "'");
  return out;
}

}  // namespace

void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  // [data]
  if (key == "data.source") {
    if (value != "csv" && value != "synthetic")
      throw ConfigError("data.source must be csv or synthetic, got '" + value + "'");
    cfg.source = value;
  } else if (key == "data.csv_path") {
    cfg.csv_path = value;
  } else if (key == "data.split") {
    const auto parts = to_list<double>(key, value, to_double);
    if (parts.size() != 3) throw ConfigError("data.split expects three ratios");
    cfg.r_train = parts[0];
    cfg.r_val = parts[1];
    cfg.r_test = parts[2];
  }
  // [synthetic]
  else if (key == "synthetic.steps") cfg.synthetic.steps = to_size(key, value);
  else if (key == "synthetic.periodic") cfg.synthetic.periodic = to_size(key, value);
  else if (key == "synthetic.walks") cfg.synthetic.walks = to_size(key, value);
  else if (key == "synthetic.coupled") cfg.synthetic.coupled = to_size(key, value);
  else if (key == "synthetic.periods")
    cfg.synthetic.periods = to_list<double>(key, value, to_double);
  else if (key == "synthetic.coupling_lags")
    cfg.synthetic.coupling_lags = to_list<std::size_t>(key, value, to_size);
  else if (key == "synthetic.coupling_weights")
    cfg.synthetic.coupling_weights = to_list<double>(key, value, to_double);
  else if (key == "synthetic.noise") cfg.synthetic.noise = to_double(key, value);
  else if (key == "synthetic.coupled_noise")
    cfg.synthetic.coupled_noise = to_double(key, value);
  else if (key == "synthetic.walk_damping")
    cfg.synthetic.walk_damping = to_double(key, value);
  else if (key == "synthetic.seed") cfg.synthetic.seed = to_size(key, value);
  // [model]
  else if (key == "model.lookback") cfg.model.lookback = to_size(key, value);
  else if (key == "model.horizon") cfg.model.horizon = to_size(key, value);
  else if (key == "model.width") cfg.model.token_width = to_size(key, value);
  else if (key == "model.layers") cfg.model.n_layers = to_size(key, value);
  else if (key == "model.state_dim") cfg.model.ssm.state_dim = to_size(key, value);
  else if (key == "model.expand") cfg.model.ssm.expand = to_size(key, value);
  else if (key == "model.conv_kernel") cfg.model.ssm.conv_kernel = to_size(key, value);
  else if (key == "model.delta_rank") cfg.model.ssm.delta_rank = to_size(key, value);
  else if (key == "model.use_skip") cfg.model.ssm.use_skip = to_bool(key, value);
  else if (key == "model.ffn_hidden") cfg.model.ffn_hidden = to_size(key, value);
  else if (key == "model.vc") cfg.model.vc = vc_from_string(value);
  else if (key == "model.td") cfg.model.td = td_from_string(value);
  else if (key == "model.heads") cfg.model.n_heads = to_size(key, value);
  else if (key == "model.ffn_residual") cfg.model.ffn_residual = to_bool(key, value);
  else if (key == "model.seed") cfg.model.seed = to_size(key, value);
  // [train]
  else if (key == "train.batch") cfg.train.batch_size = to_size(key, value);
  else if (key == "train.lr") cfg.train.lr = to_double(key, value);
  else if (key == "train.beta1") cfg.train.beta1 = to_double(key, value);
  else if (key == "train.beta2") cfg.train.beta2 = to_double(key, value);
  else if (key == "train.eps") cfg.train.eps = to_double(key, value);
  else if (key == "train.epochs") cfg.train.max_epochs = to_size(key, value);
  else if (key == "train.patience") cfg.train.patience = to_size(key, value);
  else if (key == "train.seed") cfg.train.seed = to_size(key, value);
  else if (key == "train.precision") cfg.train.precision = value;
  // [experiment]
  else if (key == "experiment.fraction") cfg.fraction = to_double(key, value);
  else if (key == "experiment.subset_seed") cfg.subset_seed = to_size(key, value);
  else if (key == "experiment.theta") cfg.periodicity_threshold = to_double(key, value);
  else if (key == "experiment.parallel") cfg.parallel_cells = to_bool(key, value);
  else if (key == "experiment.bench_variates")
    cfg.bench_variates = to_list<std::size_t>(key, value, to_size);
  else if (key == "experiment.bench_steps") cfg.bench.steps = to_size(key, value);
  else if (key == "experiment.bench_repeats") cfg.bench.repeats = to_size(key, value);
  else if (key == "experiment.bench_batch") cfg.bench.batch = to_size(key, value);
  else if (key == "experiment.bench_lookback") cfg.bench.lookback = to_size(key, value);
  else if (key == "experiment.bench_width") cfg.bench.token_width = to_size(key, value);
  // [output]
  else if (key == "output.dir") cfg.out_dir = value;
  else
    throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  RunConfig cfg;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("malformed section at " + path.string() + ":" +
                          std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key=value at " + path.string() + ":" +
                        std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("key '" + key + "' outside any [section] at " + path.string() + ":" +
                        std::to_string(lineno));
    apply_config_value(cfg, section + "." + key, value);
  }
  return cfg;
}

void RunConfig::validate(const std::string& command) const {
  if (source == "csv" && csv_path.empty())
    throw ConfigError("data.source is csv but data.csv_path is missing");
  if (source == "csv" && !std::filesystem::exists(csv_path))
    throw ConfigError("data.csv_path does not exist: " + csv_path);
  if (r_train <= 0 || r_val <= 0 || r_test <= 0 ||
      std::fabs(r_train + r_val + r_test - 1.0) > 1e-9)
    throw ConfigError("data.split ratios must be positive and sum to 1");
  model.validate();
  train.validate();
  if (command == "generalize-exp" && (fraction <= 0.0 || fraction > 1.0))
    throw ConfigError("experiment.fraction must lie in (0,1]");
  if (command == "bench") {
    if (bench.repeats < 1) throw ConfigError("experiment.bench_repeats must be >= 1");
    if (bench_variates.empty()) throw ConfigError("experiment.bench_variates is empty");
  }
  if ((command == "forecast" || command == "eval") && checkpoint_path.empty())
    throw ConfigError("missing --checkpoint path");
  if (periodicity_threshold <= 0 || periodicity_threshold >= 1)
    throw ConfigError("experiment.theta must lie in (0,1)");
  if (out_dir.empty()) throw ConfigError("output.dir must not be empty");
}

}  // namespace smamba
