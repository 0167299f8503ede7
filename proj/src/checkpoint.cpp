#include "bap/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "bap/io_util.hpp"
#include "json.hpp"

namespace bap {

using json = nlohmann::json;

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<char> assemble(const json& header, const std::vector<float>& values) {
  const std::string h = header.dump();
  std::vector<char> out;
  out.reserve(12 + h.size() + values.size() * 4);
  for (char c : kCheckpointMagic) out.push_back(c);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out.insert(out.end(), h.begin(), h.end());
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

void check_finite(const std::vector<float>& values) {
  for (float v : values) {
    if (!std::isfinite(v)) throw CheckpointError("checkpoint holds a non-finite parameter");
  }
}

template <typename T>
T field(const json& h, const char* key) {
  if (!h.contains(key)) throw CheckpointError(std::string("checkpoint header lacks '") + key + "'");
  try {
    return h.at(key).get<T>();
  } catch (const json::exception&) {
    throw CheckpointError(std::string("checkpoint header field '") + key + "' has the wrong type");
  }
}

}  // namespace

std::vector<char> encode_checkpoint(const ProbeModel& model) {
  model.config.validate();
  const auto& c = model.config;
  json header = {
      {"kind", "attention"},
      {"d_in", c.d_in},
      {"num_heads", c.num_heads},
      {"num_kv_heads", c.num_kv_heads},
      {"head_dim", c.head_dim},
      {"ff_dim", c.ff_dim},
      {"use_block_residual_ln", c.use_block_residual_ln},
      {"seed", c.seed},
  };
  json tensors = json::array();
  std::vector<float> values;
  model.params.visit([&](std::string_view name, const Matrix& m) {
    tensors.push_back({{"name", std::string(name)}, {"rows", m.rows}, {"cols", m.cols}});
    values.insert(values.end(), m.values.begin(), m.values.end());
  });
  header["tensors"] = tensors;
  check_finite(values);
  return assemble(header, values);
}

std::vector<char> encode_checkpoint(const LinearProbe& model) {
  json header = {{"kind", "linear"}, {"d_in", model.dim()}};
  std::vector<float> values = model.weight;
  values.push_back(model.bias);
  check_finite(values);
  return assemble(header, values);
}

AnyProbe decode_checkpoint(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 12) throw CheckpointError("checkpoint is truncated");
  if (std::memcmp(p, kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint (expected \"BAPM\")");
  const auto version = get_u32(p + 4);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::size_t hlen = get_u32(p + 8);
  if (n - 12 < hlen) throw CheckpointError("checkpoint header is truncated");
  json h;
  try {
    h = json::parse(bytes.substr(12, hlen));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (!h.is_object()) throw CheckpointError("checkpoint header is not an object");
  const std::size_t body = n - 12 - hlen;
  if (body % 4 != 0) throw CheckpointError("checkpoint payload is not a whole number of floats");
  std::vector<float> values(body / 4);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::bit_cast<float>(get_u32(p + 12 + hlen + 4 * i));
  check_finite(values);

  const auto kind = field<std::string>(h, "kind");
  if (kind == "linear") {
    const auto d = field<std::size_t>(h, "d_in");
    if (d == 0 || values.size() != d + 1) throw CheckpointError("linear checkpoint payload does not match d_in");
    LinearProbe m;
    m.weight.assign(values.begin(), values.end() - 1);
    m.bias = values.back();
    return m;
  }
  if (kind != "attention") throw CheckpointError("unknown checkpoint kind '" + kind + "'");

  ProbeConfig c;
  c.d_in = field<std::size_t>(h, "d_in");
  c.num_heads = field<std::size_t>(h, "num_heads");
  c.num_kv_heads = field<std::size_t>(h, "num_kv_heads");
  c.head_dim = field<std::size_t>(h, "head_dim");
  c.ff_dim = field<std::size_t>(h, "ff_dim");
  c.use_block_residual_ln = field<bool>(h, "use_block_residual_ln");
  c.seed = field<std::uint64_t>(h, "seed");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }

  // Shapes come from the config; the stored tensor table must agree.
  ProbeModel model = init_probe(c);
  const auto table = h.contains("tensors") ? h["tensors"] : json::array();
  std::size_t offset = 0, index = 0;
  model.params.visit([&](std::string_view name, Matrix& m) {
    if (index >= table.size()) throw CheckpointError("checkpoint tensor table is too short");
    const auto& entry = table[index++];
    if (entry.value("name", "") != name || entry.value("rows", 0u) != m.rows || entry.value("cols", 0u) != m.cols) {
      throw CheckpointError("checkpoint tensor '" + std::string(name) + "' does not match the config");
    }
    if (offset + m.size() > values.size()) throw CheckpointError("checkpoint payload is truncated");
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), m.size(), m.values.begin());
    offset += m.size();
  });
  if (index != table.size()) throw CheckpointError("checkpoint tensor table has extra entries");
  if (offset != values.size()) throw CheckpointError("checkpoint payload has trailing bytes");
  return model;
}

void save_checkpoint(const AnyProbe& model, const std::filesystem::path& path) {
  const auto bytes = std::visit([](const auto& m) { return encode_checkpoint(m); }, model);
  write_file_atomic(path, std::string_view(bytes.data(), bytes.size()));
}

AnyProbe load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw CheckpointError(e.what());
  }
  return decode_checkpoint(bytes);
}

ProbeModel load_probe(const std::filesystem::path& path) {
  auto any = load_checkpoint(path);
  if (!std::holds_alternative<ProbeModel>(any)) {
    throw CheckpointError(path.string() + " holds a linear probe, not an attention probe");
  }
  return std::get<ProbeModel>(std::move(any));
}

}  // namespace bap
