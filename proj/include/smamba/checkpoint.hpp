#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "smamba/array.hpp"
#include "smamba/errors.hpp"
#include "smamba/model.hpp"

// Checkpoint file layout:
//   SMAMBA-CKPT v1
//   meta <key> <value>                      (sorted by key)
//   tensor <name> f32 <rank> <d0> <d1> ...  (model parameters, declaration order)
//   extra <name> f64 <rank> <d0> ...        (standardization stats etc.)
//   payload <nbytes>
//   <raw row-major little-endian payloads in manifest order>
//   <8-byte little-endian FNV-1a64 checksum of the payload bytes>
// Round-trips are byte-exact; parameters are always stored as 32-bit floats.

namespace smamba {

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

struct CheckpointTensor {
  std::string name;
  std::string dtype;  // "f32" or "f64"
  bool extra = false;
  Shape shape;
  std::vector<std::uint8_t> bytes;

  static CheckpointTensor make_f32(std::string name, Shape shape,
                                   const std::vector<float>& values, bool extra = false);
  static CheckpointTensor make_f64(std::string name, Shape shape,
                                   const std::vector<double>& values, bool extra = true);
  std::vector<float> as_f32() const;
  std::vector<double> as_f64() const;
  std::size_t numel() const { return shape_numel(shape); }
};

class Checkpoint {
 public:
  std::map<std::string, std::string> meta;
  std::vector<CheckpointTensor> tensors;

  void add(CheckpointTensor t) { tensors.push_back(std::move(t)); }
  const CheckpointTensor* find(const std::string& name) const;

  // Sum of non-extra tensor extents; must equal count_parameters(model).
  std::size_t parameter_count() const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

// ---------------------------------------------------------------------------
// Model glue
// ---------------------------------------------------------------------------

namespace detail {

std::size_t meta_size(const Checkpoint& c, const std::string& key);
bool meta_bool(const Checkpoint& c, const std::string& key);

}  // namespace detail

template <typename S>
Checkpoint checkpoint_from_model(SMambaModel<S>& model,
                                 const std::vector<std::string>& variate_names,
                                 const std::vector<double>& mean,
                                 const std::vector<double>& stddev) {
  const ModelConfig& cfg = model.config;
  Checkpoint c;
  c.meta["lookback"] = std::to_string(cfg.lookback);
  c.meta["horizon"] = std::to_string(cfg.horizon);
  c.meta["variates"] = std::to_string(cfg.variates);
  c.meta["token_width"] = std::to_string(cfg.token_width);
  c.meta["n_layers"] = std::to_string(cfg.n_layers);
  c.meta["state_dim"] = std::to_string(cfg.ssm.state_dim);
  c.meta["expand"] = std::to_string(cfg.ssm.expand);
  c.meta["conv_kernel"] = std::to_string(cfg.ssm.conv_kernel);
  c.meta["delta_rank"] = std::to_string(cfg.ssm.delta_rank);
  c.meta["use_skip"] = cfg.ssm.use_skip ? "1" : "0";
  c.meta["ffn_hidden"] = std::to_string(cfg.ffn_hidden);
  c.meta["vc"] = to_string(cfg.vc);
  c.meta["td"] = to_string(cfg.td);
  c.meta["n_heads"] = std::to_string(cfg.n_heads);
  c.meta["ffn_residual"] = cfg.ffn_residual ? "1" : "0";
  c.meta["seed"] = std::to_string(cfg.seed);
  if (!variate_names.empty()) {
    std::string joined;
    for (std::size_t i = 0; i < variate_names.size(); ++i) {
      if (i) joined += ',';
      joined += variate_names[i];
    }
    c.meta["variate_names"] = joined;
  }

  model.visit([&](const std::string& name, Array<S>& arr) {
    std::vector<float> v(arr.numel());
    for (std::size_t i = 0; i < arr.numel(); ++i) v[i] = static_cast<float>(arr[i]);
    c.add(CheckpointTensor::make_f32(name, arr.shape, v));
  });
  if (!mean.empty()) {
    c.add(CheckpointTensor::make_f64("norm.mean", {mean.size()}, mean));
    c.add(CheckpointTensor::make_f64("norm.std", {stddev.size()}, stddev));
  }
  return c;
}

ModelConfig config_from_checkpoint(const Checkpoint& c);

template <typename S>
SMambaModel<S> model_from_checkpoint(const Checkpoint& c) {
  SMambaModel<S> model = SMambaModel<S>::init(config_from_checkpoint(c));
  model.visit([&](const std::string& name, Array<S>& arr) {
    const CheckpointTensor* t = c.find(name);
    if (!t) throw ArtifactError("checkpoint is missing tensor '" + name + "'");
    if (t->shape != arr.shape)
      throw ArtifactError("checkpoint tensor '" + name + "' has extents " +
                          shape_str(t->shape) + " but the model expects " +
                          shape_str(arr.shape));
    const std::vector<float> v = t->as_f32();
    for (std::size_t i = 0; i < arr.numel(); ++i) arr[i] = static_cast<S>(v[i]);
  });
  return model;
}

}  // namespace smamba
