#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "intflow/checkpoint.hpp"
#include "intflow/config.hpp"
#include "intflow/log.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDataset = 3;
constexpr int kExitWidths = 4;
constexpr int kExitCheckpoint = 5;

struct TrainArgs {
  std::string config_path, out_dir, data_images, data_labels;
  std::int64_t seed = -1;
};

int cmd_train(const TrainArgs& args) {
  std::ifstream in(args.config_path);
  if (!in) {
    std::fprintf(stderr, "error: cannot read config file %s\n", args.config_path.c_str());
    return kExitConfig;
  }
  std::stringstream buf;
  buf << in.rdbuf();

  intflow::TrainConfig cfg;
  try {
    cfg = intflow::parse_config(buf.str());
  } catch (const intflow::ConfigParseError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  }
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (!args.data_images.empty()) cfg.train_images = args.data_images;
  if (!args.data_labels.empty()) cfg.train_labels = args.data_labels;

  const intflow::WidthReport report = intflow::validate_widths(cfg.widths);
  if (!report.ok) {
    for (const std::string& v : report.violations)
      std::fprintf(stderr, "width identity violation: %s\n", v.c_str());
    return kExitWidths;
  }
  try {
    cfg.validate();
  } catch (const intflow::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  }

  intflow::Dataset train_set, test_set;
  try {
    train_set = intflow::load_idx_dataset(cfg.train_images, cfg.train_labels);
    test_set = intflow::load_idx_dataset(cfg.test_images, cfg.test_labels);
  } catch (const intflow::IoError& e) {
    std::fprintf(stderr, "dataset error: %s\n", e.what());
    return kExitDataset;
  }

  try {
    const intflow::TrainResult res = intflow::train(cfg, train_set, test_set);
    const double train_acc =
        res.metrics.rows.empty() ? 0.0 : res.metrics.rows.back().train_acc;
    const double test_acc = res.metrics.rows.empty() ? 0.0 : res.metrics.rows.back().test_acc;
    std::printf("final train_acc=%.6f test_acc=%.6f\n", train_acc, test_acc);
  } catch (const intflow::Error& e) {
    std::fprintf(stderr, "training failed: %s\n", e.what());
    return 1;
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& images, const std::string& labels) {
  intflow::Checkpoint ck;
  try {
    ck = intflow::load_checkpoint(ckpt_path);
  } catch (const intflow::IoError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kExitCheckpoint;
  }
  intflow::Dataset data;
  try {
    data = intflow::load_idx_dataset(images, labels);
  } catch (const intflow::IoError& e) {
    std::fprintf(stderr, "dataset error: %s\n", e.what());
    return kExitDataset;
  }
  const double top1 = intflow::evaluate(ck.model, data, ck.batch);
  std::printf("top1=%.6f\n", top1);
  return 0;
}

int cmd_inspect(const std::string& ckpt_path) {
  intflow::Checkpoint ck;
  try {
    ck = intflow::load_checkpoint(ckpt_path);
  } catch (const intflow::IoError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kExitCheckpoint;
  }
  auto print_param = [](const std::string& name, const intflow::Param& p) {
    if (p.grid) {
      std::int32_t lo = 0, hi = 0;
      if (!p.q.mantissas.empty()) {
        lo = hi = p.q.mantissas[0];
        for (std::int32_t m : p.q.mantissas) {
          lo = std::min(lo, m);
          hi = std::max(hi, m);
        }
      }
      std::printf("%-18s width=%-3d res=2^%-4d shape=%s mantissa=[%d, %d]\n", name.c_str(),
                  p.q.bit_width, p.q.resolution_exp, intflow::shape_str(p.q.shape).c_str(), lo, hi);
    } else {
      std::printf("%-18s fp64 shape=%s\n", name.c_str(),
                  intflow::shape_str(p.fp.shape).c_str());
    }
  };
  for (std::size_t i = 0; i < ck.model.layers.size(); ++i) {
    const intflow::LayerState& l = ck.model.layers[i];
    const std::string base = "layer" + std::to_string(i);
    print_param(base + ".w", l.w);
    if (l.spec.has_bn) {
      print_param(base + ".gamma", l.gamma);
      print_param(base + ".beta", l.beta);
    }
  }
  const intflow::MemoryReport rep = intflow::memory_report(ck.model, ck.input_shape);
  std::printf("\nmemory report (bits):\n");
  for (const auto& row : rep.rows)
    std::printf("%-22s count=%-8lld bits=%-3d total=%lld\n", row.name.c_str(),
                static_cast<long long>(row.count), row.bits,
                static_cast<long long>(row.total_bits()));
  std::printf("total_bits=%lld\n", static_cast<long long>(rep.total_bits()));
  std::printf("inference W+A ratio vs 32-bit: %.6f\n", rep.inference_ratio32);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"integer-only DNN training engine"};
  app.require_subcommand(1);

  TrainArgs targs;
  CLI::App* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", targs.config_path, "config file path")->required();
  train->add_option("--out", targs.out_dir, "output directory (metrics, checkpoints)");
  train->add_option("--seed", targs.seed, "override the config seed");
  train->add_option("--data-images", targs.data_images, "override training image IDX path");
  train->add_option("--data-labels", targs.data_labels, "override training label IDX path");

  std::string ckpt, images, labels;
  CLI::App* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint on a dataset");
  eval->add_option("--checkpoint", ckpt, "checkpoint path")->required();
  eval->add_option("--data-images", images, "image IDX path")->required();
  eval->add_option("--data-labels", labels, "label IDX path")->required();

  std::string inspect_ckpt;
  CLI::App* inspect = app.add_subcommand("inspect", "list checkpoint tensors and memory report");
  inspect->add_option("--checkpoint", inspect_ckpt, "checkpoint path")->required();

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) return cmd_train(targs);
  if (eval->parsed()) return cmd_eval(ckpt, images, labels);
  if (inspect->parsed()) return cmd_inspect(inspect_ckpt);
  return 1;
}
