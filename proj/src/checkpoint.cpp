#include "rkt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

namespace rkt {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'R', 'K', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void put_floats(std::string& out, const Tensor& t) {
  for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

json layer_json(const LayerSpec& s) {
  json j{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case LayerKind::conv2d:
      j["in_channels"] = s.in_channels;
      j["out_channels"] = s.out_channels;
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["padding"] = s.padding;
      break;
    case LayerKind::dense:
      j["in_features"] = s.in_features;
      j["out_features"] = s.out_features;
      break;
    case LayerKind::maxpool2d:
      j["pool"] = s.pool;
      break;
    default:
      break;
  }
  return j;
}

template <typename T>
T field(const json& j, const char* name, const std::string& where) {
  if (!j.contains(name)) throw CheckpointError("checkpoint header: missing field '" + where + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw CheckpointError("checkpoint header: field '" + where + name + "' has the wrong type");
  }
}

LayerSpec layer_from_json(const json& j, const std::string& where) {
  LayerSpec s;
  try {
    s.kind = layer_kind_from_string(field<std::string>(j, "kind", where));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError("checkpoint header: field '" + where + "kind': " + e.what());
  }
  switch (s.kind) {
    case LayerKind::conv2d:
      s = LayerSpec::conv2d(field<std::size_t>(j, "in_channels", where), field<std::size_t>(j, "out_channels", where),
                            field<std::size_t>(j, "kernel", where), field<std::size_t>(j, "stride", where),
                            field<std::size_t>(j, "padding", where));
      break;
    case LayerKind::dense:
      s = LayerSpec::dense(field<std::size_t>(j, "in_features", where), field<std::size_t>(j, "out_features", where));
      break;
    case LayerKind::maxpool2d:
      s = LayerSpec::maxpool2d(field<std::size_t>(j, "pool", where));
      break;
    default:
      break;
  }
  return s;
}

}  // namespace

std::string encode_checkpoint(const Model& model, const CheckpointMetadata& meta) {
  json header;
  header["format_version"] = kCheckpointVersion;
  header["input_shape"] = model.input_shape();
  header["classes"] = model.classes();
  header["editable_layers"] = model.editable_layers();
  json layers = json::array();
  for (const auto& layer : model.layers()) layers.push_back(layer_json(layer.spec));
  header["layers"] = layers;
  header["metadata"] = {{"seed", meta.seed},
                        {"epochs", meta.epochs},
                        {"corruption_digest", meta.corruption_digest},
                        {"note", meta.note}};
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& layer : model.layers())
    if (layer.spec.parameterized()) {
      put_floats(out, layer.weight);
      put_floats(out, layer.bias);
    }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic bytes (expected \"RKT1\")");
  const std::uint32_t header_len = get_u32(bytes, 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(header_len))
    throw CheckpointError("checkpoint: truncated header, expected " + std::to_string(header_len) + " bytes, got " +
                          std::to_string(bytes.size() - 8));
  json header;
  try {
    header = json::parse(bytes.substr(8, header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: invalid JSON: ") + e.what());
  }
  const auto version = field<std::uint32_t>(header, "format_version", "");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: field 'format_version' is " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));

  const auto input_shape = field<Shape>(header, "input_shape", "");
  const auto classes = field<std::size_t>(header, "classes", "");
  if (!header.contains("layers") || !header["layers"].is_array())
    throw CheckpointError("checkpoint header: missing field 'layers'");

  std::vector<Layer> layers;
  std::size_t needed = 0;
  for (std::size_t i = 0; i < header["layers"].size(); ++i) {
    Layer layer{layer_from_json(header["layers"][i], "layers[" + std::to_string(i) + "]."), {}, {}};
    if (layer.spec.parameterized()) {
      layer.weight = Tensor(layer.spec.weight_shape());
      layer.bias = Tensor(layer.spec.bias_shape());
      needed += 4 * (layer.weight.size() + layer.bias.size());
    }
    layers.push_back(std::move(layer));
  }
  const std::size_t offset = 8 + header_len;
  const std::size_t have = bytes.size() - offset;
  if (have != needed)
    throw CheckpointError("checkpoint: parameter block " + std::string(have < needed ? "truncated" : "oversized") +
                          ", expected " + std::to_string(needed) + " bytes, got " + std::to_string(have));
  std::size_t at = offset;
  auto read = [&](Tensor& t) {
    for (double& v : t.data()) {
      v = static_cast<double>(std::bit_cast<float>(get_u32(bytes, at)));
      at += 4;
    }
  };
  for (auto& layer : layers)
    if (layer.spec.parameterized()) {
      read(layer.weight);
      read(layer.bias);
    }

  Checkpoint ck;
  try {
    ck.model = Model(input_shape, std::move(layers), classes);
    if (header.contains("editable_layers"))
      ck.model.set_editable_layers(field<std::vector<std::size_t>>(header, "editable_layers", ""));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: inconsistent architecture: ") + e.what());
  }
  if (header.contains("metadata")) {
    const json& m = header["metadata"];
    ck.metadata.seed = field<std::uint64_t>(m, "seed", "metadata.");
    ck.metadata.epochs = field<std::size_t>(m, "epochs", "metadata.");
    ck.metadata.corruption_digest = field<std::string>(m, "corruption_digest", "metadata.");
    if (m.contains("note")) ck.metadata.note = field<std::string>(m, "note", "metadata.");
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMetadata& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
  const std::string bytes = encode_checkpoint(model, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace rkt
