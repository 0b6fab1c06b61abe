#pragma once

#include <string>
#include <vector>

#include "intflow/rng.hpp"
#include "intflow/tensor.hpp"

namespace intflow {

// Labeled images, [N,C,H,W] (or [N,D] for in-memory dense tasks). Pixels are
// scaled by 1/256 on load so every value sits on the 2^-8 grid.
struct Dataset {
  RealTensor images;
  std::vector<int> labels;

  std::int64_t size() const { return images.shape.empty() ? 0 : images.shape[0]; }
  int num_classes() const;
  Shape sample_shape() const;  // shape without the batch dimension
  Dataset subset(std::int64_t n) const;

  // Gathers rows into a batch tensor / label vector.
  RealTensor gather(const std::vector<std::int64_t>& idx) const;
  std::vector<int> gather_labels(const std::vector<std::int64_t>& idx) const;
};

// IDX files as published for MNIST: big-endian magic 0x00000803 (images,
// unsigned byte, 3 dims) and 0x00000801 (labels).
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);

// Writes a dataset of [N,1,H,W] images (values on the 1/256 grid) back to the
// IDX pair; inverse of load_idx_dataset.
void write_idx_dataset(const Dataset& data, const std::string& images_path,
                       const std::string& labels_path);

// Deterministic MNIST-class stand-in: 28x28 seven-segment-style glyphs for 10
// classes with per-sample shift, stroke intensity and pixel noise.
Dataset make_synthetic_digits(std::int64_t n, std::uint64_t seed);

}  // namespace intflow
