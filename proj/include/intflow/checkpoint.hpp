#pragma once

#include <string>

#include "intflow/trainer.hpp"

namespace intflow {

// Little-endian binary snapshot: magic "WGBN", u16 version 1, the width
// configuration, policy bits, topology, then per-tensor records (QTensor
// mantissas as i32, real tensors as f64, flag tensors in the quantfn wire
// form). load(save(model)) reproduces every mantissa exactly.
struct Checkpoint {
  Model model;
  OptimizerState opt;
  std::uint64_t sr_state = 0;
  std::uint64_t shuffle_state = 0;
  std::int64_t step = 0;
  int batch = 0;
  Shape input_shape;  // one sample, e.g. [1,28,28]
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);

// Throws IoError on bad magic, unsupported version, or truncation.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace intflow
