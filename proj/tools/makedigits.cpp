#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "intflow/dataset.hpp"

// Writes a deterministic synthetic digit dataset (MNIST-class IDX files) for
// smoke runs and the acceptance suite.
int main(int argc, char** argv) {
  CLI::App app{"synthetic digit dataset generator (IDX output)"};
  std::string out_dir = ".";
  std::int64_t train_n = 10000, test_n = 2000;
  std::uint64_t seed = 7;
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--train", train_n, "training sample count");
  app.add_option("--test", test_n, "test sample count");
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::create_directories(out_dir);
    const intflow::Dataset train = intflow::make_synthetic_digits(train_n, seed);
    const intflow::Dataset test = intflow::make_synthetic_digits(test_n, seed + 1);
    intflow::write_idx_dataset(train, out_dir + "/train-images.idx", out_dir + "/train-labels.idx");
    intflow::write_idx_dataset(test, out_dir + "/test-images.idx", out_dir + "/test-labels.idx");
    std::printf("wrote %lld train and %lld test samples under %s\n",
                static_cast<long long>(train_n), static_cast<long long>(test_n), out_dir.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
