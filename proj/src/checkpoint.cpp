#include "smamba/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace smamba {

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t get_u64le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

CheckpointTensor CheckpointTensor::make_f32(std::string name, Shape shape,
                                            const std::vector<float>& values, bool extra) {
  if (shape_numel(shape) != values.size())
    throw ContractError("tensor '" + name + "' value count does not match extents");
  CheckpointTensor t;
  t.name = std::move(name);
  t.dtype = "f32";
  t.extra = extra;
  t.shape = std::move(shape);
  t.bytes.reserve(values.size() * 4);
  for (float v : values) put_u32le(t.bytes, std::bit_cast<std::uint32_t>(v));
  return t;
}

CheckpointTensor CheckpointTensor::make_f64(std::string name, Shape shape,
                                            const std::vector<double>& values, bool extra) {
  if (shape_numel(shape) != values.size())
    throw ContractError("tensor '" + name + "' value count does not match extents");
  CheckpointTensor t;
  t.name = std::move(name);
  t.dtype = "f64";
  t.extra = extra;
  t.shape = std::move(shape);
  t.bytes.reserve(values.size() * 8);
  for (double v : values) put_u64le(t.bytes, std::bit_cast<std::uint64_t>(v));
  return t;
}

std::vector<float> CheckpointTensor::as_f32() const {
  if (dtype != "f32") throw ArtifactError("tensor '" + name + "' is not f32");
  std::vector<float> v(numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = std::bit_cast<float>(get_u32le(bytes.data() + 4 * i));
  return v;
}

std::vector<double> CheckpointTensor::as_f64() const {
  if (dtype != "f64") throw ArtifactError("tensor '" + name + "' is not f64");
  std::vector<double> v(numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = std::bit_cast<double>(get_u64le(bytes.data() + 8 * i));
  return v;
}

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::size_t Checkpoint::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors)
    if (!t.extra) n += t.numel();
  return n;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ostringstream manifest;
  manifest << "SMAMBA-CKPT v1\n";
  for (const auto& [k, v] : meta) manifest << "meta " << k << ' ' << v << '\n';
  std::size_t payload_size = 0;
  for (const auto& t : tensors) {
    manifest << (t.extra ? "extra " : "tensor ") << t.name << ' ' << t.dtype << ' '
             << t.shape.size();
    for (std::size_t d : t.shape) manifest << ' ' << d;
    manifest << '\n';
    payload_size += t.bytes.size();
  }
  manifest << "payload " << payload_size << '\n';

  std::vector<std::uint8_t> payload;
  payload.reserve(payload_size);
  for (const auto& t : tensors) payload.insert(payload.end(), t.bytes.begin(), t.bytes.end());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot open checkpoint for writing: " + path.string());
  const std::string header = manifest.str();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  std::vector<std::uint8_t> sum;
  put_u64le(sum, fnv1a64(payload.data(), payload.size()));
  out.write(reinterpret_cast<const char*>(sum.data()), 8);
  if (!out) throw ArtifactError("failed writing checkpoint: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open checkpoint: " + path.string());

  Checkpoint c;
  std::string line;
  if (!std::getline(in, line) || line != "SMAMBA-CKPT v1")
    throw ArtifactError("not a checkpoint file (bad magic): " + path.string());

  struct Pending {
    std::string name, dtype;
    bool extra;
    Shape shape;
    std::size_t nbytes;
  };
  std::vector<Pending> pending;
  std::size_t payload_size = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      c.meta[key] = value;
    } else if (kind == "tensor" || kind == "extra") {
      Pending p;
      p.extra = kind == "extra";
      std::size_t rank = 0;
      ls >> p.name >> p.dtype >> rank;
      p.shape.resize(rank);
      for (auto& d : p.shape) ls >> d;
      if (!ls) throw ArtifactError("malformed manifest line: " + line);
      const std::size_t width = p.dtype == "f64" ? 8 : 4;
      if (p.dtype != "f32" && p.dtype != "f64")
        throw ArtifactError("unknown dtype tag '" + p.dtype + "' in " + path.string());
      p.nbytes = shape_numel(p.shape) * width;
      pending.push_back(std::move(p));
    } else if (kind == "payload") {
      ls >> payload_size;
      break;
    } else {
      throw ArtifactError("unexpected manifest line: " + line);
    }
  }

  std::vector<std::uint8_t> payload(payload_size);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_size));
  std::uint8_t sumbuf[8];
  in.read(reinterpret_cast<char*>(sumbuf), 8);
  if (!in) throw ArtifactError("truncated checkpoint: " + path.string());
  if (get_u64le(sumbuf) != fnv1a64(payload.data(), payload.size()))
    throw ArtifactError("checkpoint checksum mismatch: " + path.string());

  std::size_t offset = 0;
  for (auto& p : pending) {
    if (offset + p.nbytes > payload.size())
      throw ArtifactError("payload shorter than manifest in " + path.string());
    CheckpointTensor t;
    t.name = std::move(p.name);
    t.dtype = std::move(p.dtype);
    t.extra = p.extra;
    t.shape = std::move(p.shape);
    t.bytes.assign(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                   payload.begin() + static_cast<std::ptrdiff_t>(offset + p.nbytes));
    offset += p.nbytes;
    c.tensors.push_back(std::move(t));
  }
  if (offset != payload.size())
    throw ArtifactError("payload longer than manifest in " + path.string());
  return c;
}

namespace detail {

std::size_t meta_size(const Checkpoint& c, const std::string& key) {
  auto it = c.meta.find(key);
  if (it == c.meta.end()) throw ArtifactError("checkpoint missing meta key '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw ArtifactError("checkpoint meta '" + key + "' is not an integer: " + it->second);
  }
}

bool meta_bool(const Checkpoint& c, const std::string& key) {
  auto it = c.meta.find(key);
  if (it == c.meta.end()) throw ArtifactError("checkpoint missing meta key '" + key + "'");
  return it->second == "1" || it->second == "true";
}

}  // namespace detail

ModelConfig config_from_checkpoint(const Checkpoint& c) {
  ModelConfig cfg;
  cfg.lookback = detail::meta_size(c, "lookback");
  cfg.horizon = detail::meta_size(c, "horizon");
  cfg.variates = detail::meta_size(c, "variates");
  cfg.token_width = detail::meta_size(c, "token_width");
  cfg.n_layers = detail::meta_size(c, "n_layers");
  cfg.ssm.token_width = cfg.token_width;
  cfg.ssm.state_dim = detail::meta_size(c, "state_dim");
  cfg.ssm.expand = detail::meta_size(c, "expand");
  cfg.ssm.conv_kernel = detail::meta_size(c, "conv_kernel");
  cfg.ssm.delta_rank = detail::meta_size(c, "delta_rank");
  cfg.ssm.use_skip = detail::meta_bool(c, "use_skip");
  cfg.ffn_hidden = detail::meta_size(c, "ffn_hidden");
  cfg.vc = vc_from_string(c.meta.at("vc"));
  cfg.td = td_from_string(c.meta.at("td"));
  cfg.n_heads = detail::meta_size(c, "n_heads");
  cfg.ffn_residual = detail::meta_bool(c, "ffn_residual");
  cfg.seed = detail::meta_size(c, "seed");
  return cfg;
}

}  // namespace smamba
