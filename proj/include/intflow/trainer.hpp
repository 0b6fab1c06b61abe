#pragma once

#include <string>
#include <vector>

#include "intflow/backward.hpp"
#include "intflow/dataset.hpp"
#include "intflow/optimizer.hpp"

namespace intflow {

struct LrPoint {
  int epoch = 0;
  FixedScalar lr;
};

struct TrainConfig {
  std::vector<LayerSpec> layers;
  BitWidthConfig widths;
  QuantPolicy policy;
  FixedScalar momentum{3, -2};
  FixedScalar lr{26, -9};
  std::vector<LrPoint> lr_schedule;  // overrides from the given epoch on
  DrSchedule dr_schedule = DrSchedule::single(8);
  int batch = 64;
  int epochs = 10;
  std::uint64_t seed = 1;
  FixedScalar epsilon{1, -10};
  BnBackwardMode bn_backward = BnBackwardMode::frozen;
  Rounding rounding = Rounding::stochastic;
  std::string train_images, train_labels, test_images, test_labels;
  std::string out_dir;
  std::int64_t train_subset = 0;  // 0 = all
  std::int64_t test_subset = 0;
  int log_interval = 100;
  bool histograms = true;
  int checkpoint_keep = 2;

  void validate() const;  // throws ConfigError
  FixedScalar lr_at(int epoch) const;
};

struct MetricsRow {
  int epoch = 0;
  std::int64_t step = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::int64_t lr_mantissa = 0;
  int lr_exp = 0;
  std::int64_t dr = 0;
  std::int64_t acc_saturation = 0;
};

struct CoverageRow {
  int epoch = 0;
  int layer = 0;
  double coverage = 0.0;
};

struct Metrics {
  std::vector<MetricsRow> rows;
  std::vector<CoverageRow> coverage;
};

struct OptimizerState {
  struct PerLayer {
    ParamOptState w, gamma, beta;
  };
  std::vector<PerLayer> layers;

  static OptimizerState for_model(const Model& model);
  std::int64_t saturation_total() const;
};

struct TrainResult {
  Model model;
  OptimizerState opt;
  Metrics metrics;
  std::uint64_t sr_state = 0;       // stochastic-rounding stream after training
  std::uint64_t shuffle_state = 0;  // shuffle stream after training
  std::int64_t step = 0;
};

// W' ~ N(0, 1/sqrt(n_in)), direct-quantized to the storage width and clipped.
QTensor init_weights(const LayerSpec& spec, const BitWidthConfig& cfg, Rng& rng);

// The raw draws behind init_weights; the unquantized path keeps these as-is
// so quantized and baseline runs share initialization draws.
RealTensor sample_weight_init(const LayerSpec& spec, Rng& rng);

Model build_model(const TrainConfig& cfg, Rng& init_rng);

TrainResult train(const TrainConfig& cfg, const Dataset& train_data, const Dataset& test_data);

// Top-1 accuracy with current-batch statistics; a trailing chunk of one
// sample is folded into the previous chunk so BN always sees >= 2.
double evaluate(Model& model, const Dataset& data, int batch);

// Pre/post-quantization value histograms per role (W, BN, A, G, E) from one
// forward/backward probe; CSV files hist_<role>_<pre|post>.csv.
void emit_histograms(Model& model, const Dataset& data, int batch, const std::string& out_dir,
                     Rng rng, int dr_bits, Rounding rounding);

struct MemoryReport {
  struct Row {
    std::string name;
    std::int64_t count = 0;
    int bits = 0;
    std::int64_t total_bits() const { return count * bits; }
  };
  std::vector<Row> rows;
  std::int64_t inference_bits = 0;       // W (compute width) + A across layers
  std::int64_t inference_bits_fp32 = 0;  // the same tensors at 32 bits
  double inference_ratio32 = 0.0;
  std::int64_t total_bits() const;
};

// Bit totals per role and the inference-path (W, A) ratio against a
// 32-bit-everything baseline. input_shape is one sample, e.g. [1,28,28].
MemoryReport memory_report(const Model& model, const Shape& input_shape);

void write_metrics_csv(const Metrics& metrics, const std::string& path);
void write_coverage_csv(const Metrics& metrics, const std::string& path);

}  // namespace intflow
