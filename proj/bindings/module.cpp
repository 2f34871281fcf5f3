#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "smamba/checkpoint.hpp"
#include "smamba/data.hpp"
#include "smamba/model.hpp"
#include "smamba/ssm.hpp"
#include "smamba/train.hpp"

namespace py = pybind11;
using namespace smamba;

namespace {

Array<double> from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] =
      static_cast<std::size_t>(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Array<double>(std::move(shape), std::move(data));
}

py::array_t<double> to_numpy(const Array<double>& a) {
  std::vector<py::ssize_t> shape(a.shape.begin(), a.shape.end());
  py::array_t<double> out(shape);
  std::copy(a.data.begin(), a.data.end(), out.mutable_data());
  return out;
}

ModelConfig make_config(std::size_t lookback, std::size_t horizon, std::size_t width,
                        std::size_t layers, std::size_t state_dim, std::size_t expand,
                        std::size_t conv_kernel, std::size_t ffn_hidden,
                        const std::string& vc, const std::string& td, std::size_t heads,
                        std::uint64_t seed) {
  ModelConfig cfg;
  cfg.lookback = lookback;
  cfg.horizon = horizon;
  cfg.token_width = width;
  cfg.n_layers = layers;
  cfg.ssm = SSMConfig{.token_width = width, .state_dim = state_dim, .expand = expand,
                      .conv_kernel = conv_kernel};
  cfg.ffn_hidden = ffn_hidden;
  cfg.vc = vc_from_string(vc);
  cfg.td = td_from_string(td);
  cfg.n_heads = heads;
  cfg.seed = seed;
  return cfg;
}

// Double-precision forecaster handle for verification-style use from python.
class PyModel {
 public:
  explicit PyModel(SMambaModel<double> model) : model_(std::move(model)) {}

  py::array_t<double> forward(
      const py::array_t<double, py::array::c_style | py::array::forcecast>& input) {
    Tape<double> tape;
    Binder<double> binder(tape, false);
    Var<double> out = model_.run(tape, binder, tape.leaf(from_numpy(input)));
    return to_numpy(out.value());
  }

  std::size_t parameter_count() { return count_parameters(model_); }

  void save(const std::string& path, const std::vector<std::string>& names,
            const std::vector<double>& mean, const std::vector<double>& stddev) {
    checkpoint_from_model(model_, names, mean, stddev).save(path);
  }

  static PyModel load(const std::string& path) {
    return PyModel(model_from_checkpoint<double>(Checkpoint::load(path)));
  }

  py::dict config() const {
    py::dict d;
    d["lookback"] = model_.config.lookback;
    d["horizon"] = model_.config.horizon;
    d["width"] = model_.config.token_width;
    d["layers"] = model_.config.n_layers;
    d["vc"] = to_string(model_.config.vc);
    d["td"] = to_string(model_.config.td);
    return d;
  }

 private:
  SMambaModel<double> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "selective state-space forecaster core";

  py::register_exception<DimError>(m, "DimError");
  py::register_exception<ComputeError>(m, "ComputeError");
  py::register_exception<ArtifactError>(m, "ArtifactError");

  m.def(
      "discretize",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& delta,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
        Tape<double> tape;
        auto [abar, bbar] = discretize(tape.leaf(from_numpy(delta)),
                                       tape.leaf(from_numpy(a)), tape.leaf(from_numpy(b)));
        return py::make_tuple(to_numpy(abar.value()), to_numpy(bbar.value()));
      },
      py::arg("delta"), py::arg("a"), py::arg("b"),
      "Zero-order-hold discretization: Abar = exp(delta*a), "
      "Bbar = (exp(delta*a)-1)/a * b with the small-step limit delta*b.");

  m.def(
      "selective_scan",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& abar,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& bbar,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& c,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         std::optional<py::array_t<double, py::array::c_style | py::array::forcecast>>
             d_skip) {
        Tape<double> tape;
        Var<double> y;
        if (d_skip)
          y = selective_scan(tape.leaf(from_numpy(abar)), tape.leaf(from_numpy(bbar)),
                             tape.leaf(from_numpy(c)), tape.leaf(from_numpy(x)),
                             tape.leaf(from_numpy(*d_skip)));
        else
          y = selective_scan(tape.leaf(from_numpy(abar)), tape.leaf(from_numpy(bbar)),
                             tape.leaf(from_numpy(c)), tape.leaf(from_numpy(x)));
        return to_numpy(y.value());
      },
      py::arg("abar"), py::arg("bbar"), py::arg("c"), py::arg("x"),
      py::arg("d_skip") = std::nullopt,
      "Sequential selective scan over [B,S,ED,N] discretized parameters.");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](std::size_t lookback, std::size_t horizon, std::size_t width,
                       std::size_t layers, std::size_t state_dim, std::size_t expand,
                       std::size_t conv_kernel, std::size_t ffn_hidden,
                       const std::string& vc, const std::string& td, std::size_t heads,
                       std::uint64_t seed) {
             return PyModel(SMambaModel<double>::init(
                 make_config(lookback, horizon, width, layers, state_dim, expand,
                             conv_kernel, ffn_hidden, vc, td, heads, seed)));
           }),
           py::arg("lookback") = 96, py::arg("horizon") = 12, py::arg("width") = 64,
           py::arg("layers") = 1, py::arg("state_dim") = 8, py::arg("expand") = 2,
           py::arg("conv_kernel") = 4, py::arg("ffn_hidden") = 128,
           py::arg("vc") = "bi_mamba", py::arg("td") = "ffn", py::arg("heads") = 4,
           py::arg("seed") = 42)
      .def("forward", &PyModel::forward, py::arg("input"),
           "Forecast [B,L,V] -> [B,T,V].")
      .def("parameter_count", &PyModel::parameter_count)
      .def("save", &PyModel::save, py::arg("path"),
           py::arg("names") = std::vector<std::string>{},
           py::arg("mean") = std::vector<double>{},
           py::arg("std") = std::vector<double>{})
      .def_static("load", &PyModel::load, py::arg("path"))
      .def("config", &PyModel::config);

  m.def(
      "generate_synthetic",
      [](std::size_t steps, std::size_t periodic, std::size_t walks, std::size_t coupled,
         std::vector<double> periods, std::vector<std::size_t> lags,
         std::vector<double> weights, double noise, double coupled_noise,
         double walk_damping, std::uint64_t seed) {
        SyntheticSpec spec;
        spec.steps = steps;
        spec.periodic = periodic;
        spec.walks = walks;
        spec.coupled = coupled;
        spec.periods = std::move(periods);
        spec.coupling_lags = std::move(lags);
        spec.coupling_weights = std::move(weights);
        spec.noise = noise;
        spec.coupled_noise = coupled_noise;
        spec.walk_damping = walk_damping;
        spec.seed = seed;
        TimeSeriesDataset ds = generate_synthetic(spec);
        return py::make_tuple(
            to_numpy(Array<double>({ds.steps, ds.variates}, ds.values)), ds.variate_names);
      },
      py::arg("steps") = 600, py::arg("periodic") = 4, py::arg("walks") = 2,
      py::arg("coupled") = 2, py::arg("periods") = std::vector<double>{24, 36, 48, 60},
      py::arg("lags") = std::vector<std::size_t>{10, 12},
      py::arg("weights") = std::vector<double>{0.9, 0.8}, py::arg("noise") = 0.1,
      py::arg("coupled_noise") = 0.02, py::arg("walk_damping") = 1.0, py::arg("seed") = 7);

  m.def(
      "classify_periodicity",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& series,
         double threshold) {
        std::vector<double> s(series.data(), series.data() + series.size());
        PeriodicityResult r = classify_periodicity(s, threshold);
        return py::make_tuple(r.periodic, r.score);
      },
      py::arg("series"), py::arg("threshold") = 0.2);

  m.def(
      "mse",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
        return mse(from_numpy(a), from_numpy(b));
      },
      py::arg("pred"), py::arg("target"));
  m.def(
      "mae",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
        return mae(from_numpy(a), from_numpy(b));
      },
      py::arg("pred"), py::arg("target"));
}
