#include "metaformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace metaformer {

using nlohmann::json;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

}  // namespace

const ContainerEntry* Container::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : c.entries) {
    if (static_cast<std::int64_t>(e.values.size()) != shape_numel(e.shape)) {
      throw std::invalid_argument("encode_container: tensor '" + e.name + "' has " +
                                  std::to_string(e.values.size()) + " values for shape " +
                                  to_string(e.shape));
    }
    const std::uint64_t len = e.values.size() * sizeof(float);
    tensors.push_back({{"name", e.name},
                       {"shape", e.shape},
                       {"dtype", "f32"},
                       {"frozen", e.frozen},
                       {"offset", offset},
                       {"byte_len", len}});
    offset += len;
  }
  json manifest{{"config", c.config ? *c.config : json(nullptr)}, {"tensors", tensors}};
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + text.size() + offset);
  out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& e : c.entries) {
    for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Container decode_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) {
    throw FormatError("checkpoint: file is " + std::to_string(bytes.size()) +
                      " bytes, shorter than the 16-byte header");
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic (expected \"MFCK\")");
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes.data() + 4, 4));
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) +
                      " (expected 1)");
  }
  const std::uint64_t manifest_len = get_le(bytes.data() + 8, 8);
  if (manifest_len > bytes.size() - 16) {
    throw CorruptionError("checkpoint: manifest length " + std::to_string(manifest_len) +
                          " exceeds file size");
  }
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 16, bytes.begin() + 16 + manifest_len);
  } catch (const json::parse_error& e) {
    throw CorruptionError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw CorruptionError("checkpoint: manifest lacks a \"tensors\" array");
  }

  const std::uint8_t* payload = bytes.data() + 16 + manifest_len;
  const std::uint64_t payload_len = bytes.size() - 16 - manifest_len;
  Container c;
  if (manifest.contains("config") && !manifest["config"].is_null()) c.config = manifest["config"];
  std::uint64_t cursor = 0;
  for (const auto& t : manifest["tensors"]) {
    ContainerEntry e;
    std::uint64_t offset = 0, len = 0;
    try {
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      e.frozen = t.at("frozen").get<bool>();
      offset = t.at("offset").get<std::uint64_t>();
      len = t.at("byte_len").get<std::uint64_t>();
      if (t.at("dtype").get<std::string>() != "f32") {
        throw CorruptionError("checkpoint: tensor '" + e.name + "' has unsupported dtype " +
                              t.at("dtype").dump());
      }
    } catch (const json::exception& ex) {
      throw CorruptionError(std::string("checkpoint: malformed tensor entry: ") + ex.what());
    }
    for (auto d : e.shape) {
      if (d <= 0) throw CorruptionError("checkpoint: tensor '" + e.name + "' has a non-positive dim");
    }
    const auto n = static_cast<std::uint64_t>(shape_numel(e.shape));
    if (len != n * sizeof(float)) {
      throw CorruptionError("checkpoint: tensor '" + e.name + "' byte_len " + std::to_string(len) +
                            " does not match shape " + to_string(e.shape));
    }
    if (offset < cursor) {
      throw CorruptionError("checkpoint: tensor '" + e.name + "' overlaps the previous tensor");
    }
    if (offset > payload_len || len > payload_len - offset) {
      throw CorruptionError("checkpoint: payload truncated inside tensor '" + e.name + "'");
    }
    e.values.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      e.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(payload + offset + 4 * i, 4)));
    }
    cursor = offset + len;
    c.entries.push_back(std::move(e));
  }
  if (cursor != payload_len) {
    throw CorruptionError("checkpoint: " + std::to_string(payload_len - cursor) +
                          " trailing payload bytes not described by the manifest");
  }
  return c;
}

void write_container(const std::string& path, const Container& container) {
  const auto bytes = encode_container(container);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_container(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  } catch (const CorruptionError& e) {
    throw CorruptionError(path + ": " + e.what());
  }
}

template <typename T>
Container model_container(const Model<T>& model) {
  Container c;
  c.config = config_to_json(model.config());
  for (const auto& p : model.parameters()) {
    ContainerEntry e;
    e.name = p.name;
    e.shape = p.tensor.shape();
    e.frozen = p.role != ParamRole::trainable;
    const auto v = p.tensor.data();
    e.values.reserve(v.size());
    for (T x : v) e.values.push_back(static_cast<float>(x));
    c.entries.push_back(std::move(e));
  }
  return c;
}

template <typename T>
void save(const Model<T>& model, const std::string& path) {
  write_container(path, model_container(model));
}

Model<float> model_from_container(const Container& c) {
  if (!c.config) throw CorruptionError("checkpoint: manifest has no model config");
  const auto config = config_from_json(*c.config);
  auto model = Model<float>::allocate(config);
  auto params = model.parameters();

  std::map<std::string, const ContainerEntry*> by_name;
  for (const auto& e : c.entries) {
    if (!by_name.emplace(e.name, &e).second) {
      throw CorruptionError("checkpoint: tensor '" + e.name + "' appears twice");
    }
  }
  for (const auto& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw CorruptionError("checkpoint: missing tensor '" + p.name + "'");
    }
    const auto& e = *it->second;
    if (e.shape != p.tensor.shape()) {
      throw CorruptionError("checkpoint: tensor '" + p.name + "' has shape " + to_string(e.shape) +
                            " but the config needs " + to_string(p.tensor.shape()));
    }
    if (e.frozen != (p.role != ParamRole::trainable)) {
      throw CorruptionError("checkpoint: tensor '" + p.name + "' has the wrong frozen flag");
    }
  }
  if (by_name.size() != params.size()) {
    for (const auto& e : c.entries) {
      const bool known = std::any_of(params.begin(), params.end(),
                                     [&](const ParamRef<float>& p) { return p.name == e.name; });
      if (!known) throw CorruptionError("checkpoint: unexpected tensor '" + e.name + "'");
    }
  }
  for (auto& p : params) {
    const auto& src = by_name.at(p.name)->values;
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
  }
  return model;
}

Model<float> load(const std::string& path) {
  const auto c = read_container(path);
  try {
    return model_from_container(c);
  } catch (const CorruptionError& e) {
    throw CorruptionError(path + ": " + e.what());
  }
}

void write_input(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw std::invalid_argument("write_input: expected [1, C, H, W], got " + to_string(image.shape()));
  }
  Container c;
  const auto v = image.data();
  c.entries.push_back({"input", image.shape(), false, std::vector<float>(v.begin(), v.end())});
  write_container(path, c);
}

Tensor<float> read_input(const std::string& path) {
  const auto c = read_container(path);
  const auto* e = c.find("input");
  if (!e || c.entries.size() != 1) {
    throw CorruptionError(path + ": input container must hold exactly one tensor named \"input\"");
  }
  if (e->shape.size() != 4 || e->shape[0] != 1) {
    throw std::invalid_argument(path + ": input must be [1, C, H, W], got " + to_string(e->shape));
  }
  return Tensor<float>::from_vector(e->shape, e->values);
}

template Container model_container(const Model<float>&);
template Container model_container(const Model<double>&);
template void save(const Model<float>&, const std::string&);
template void save(const Model<double>&, const std::string&);

}  // namespace metaformer
