#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "metaformer/model.hpp"

namespace metaformer {

inline constexpr char kCheckpointMagic[4] = {'M', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wrong magic or unsupported version.
class FormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Manifest and payload disagree, or the file is truncated.
class CorruptionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct ContainerEntry {
  std::string name;
  Shape shape;
  bool frozen = false;
  std::vector<float> values;
};

/// Layout:
///   "MFCK" | u32 LE version | u64 LE manifest_len | manifest JSON | payload
/// The manifest is {"config": ..., "tensors": [{name, shape, dtype, frozen,
/// offset, byte_len}]}; offsets are relative to the payload start and the
/// payload holds little-endian f32 values in manifest order.
struct Container {
  std::optional<nlohmann::json> config;
  std::vector<ContainerEntry> entries;

  const ContainerEntry* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& container);
Container decode_container(const std::vector<std::uint8_t>& bytes);

void write_container(const std::string& path, const Container& container);
Container read_container(const std::string& path);

/// Every model tensor in canonical order, converted to f32. Frozen matrices
/// and batch-norm statistics are flagged frozen.
template <typename T>
Container model_container(const Model<T>& model);

template <typename T>
void save(const Model<T>& model, const std::string& path);

/// Rebuilds the model from the embedded config and restores every tensor
/// bit-exactly. Throws before returning anything when the file is invalid.
Model<float> load(const std::string& path);
Model<float> model_from_container(const Container& container);

/// Single-entry container {"input": [1, C, H, W]} used for inference inputs.
void write_input(const std::string& path, const Tensor<float>& image);
Tensor<float> read_input(const std::string& path);

}  // namespace metaformer
