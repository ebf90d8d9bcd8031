#pragma once

#include <string>

#include "metaformer/tensor.hpp"

namespace metaformer {

/// trainable: seen by the optimizer. frozen: fixed after initialization
/// (global random matrix). buffer: non-learned state (batch-norm statistics).
enum class ParamRole { trainable, frozen, buffer };

enum class InitRule {
  trunc_normal,         // N(0, 0.02²) truncated at ±2σ
  zeros,
  ones,
  layer_scale,          // constant LayerScale ε
  uniform_row_softmax,  // U[0,1) then softmax over each row
};

/// Named handle to one parameter tensor inside a model. The tensor aliases
/// the model's storage.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  ParamRole role;
  InitRule init;
};

}  // namespace metaformer
