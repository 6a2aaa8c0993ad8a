#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "tpgrad/error.hpp"
#include "tpgrad/experiment.hpp"
#include "tpgrad/theory_checks.hpp"

namespace fs = std::filesystem;
using namespace tpgrad;

namespace {

unsigned worker_cap() {
  if (const char* env = std::getenv("TPGRAD_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

// Returns true when the run finished without diverging.
bool run_one(TrainConfig cfg, const fs::path& out_dir, std::mutex& log) {
  fs::create_directories(out_dir);
  const Dataset data = load_dataset(cfg);
  const RunResult run = run_experiment(cfg, data);
  emit_metrics(run.records, MetricsFormat::CSV, (out_dir / "metrics.csv").string());
  emit_metrics(run.records, MetricsFormat::JSONL, (out_dir / "metrics.jsonl").string());
  write_text(out_dir / "summary.json", summary_to_json(run.summary));
  write_text(out_dir / "config.cfg", format_config(cfg));
  save_checkpoint((out_dir / "checkpoint.bin").string(), make_checkpoint(cfg, run));
  std::lock_guard<std::mutex> lock(log);
  std::cout << to_string(cfg.method) << " seed " << cfg.seed << ": ";
  if (run.summary.diverged) {
    std::cout << "DIVERGED (" << run.summary.failure << ")\n";
  } else {
    std::cout << "final train loss " << run.summary.final_train_loss;
    if (run.summary.test_error_at_best) std::cout << ", test error at best epoch " << *run.summary.test_error_at_best;
    std::cout << "\n";
  }
  return !run.summary.diverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Target propagation experiments and theory checks"};
  app.require_subcommand(1);

  std::string config_path, out_dir, mnist_images, mnist_labels, mnist_test_images, mnist_test_labels;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  auto* run = app.add_subcommand("run", "Train one config and write metrics, summary and checkpoint");
  run->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--seed", seed, "Override run.seed");
  run->add_option("--seeds", seeds, "Run several seeds in parallel, one subdirectory each")->delimiter(',')->excludes("--seed");
  run->add_option("--mnist-images", mnist_images, "MNIST training images (IDX)");
  run->add_option("--mnist-labels", mnist_labels, "MNIST training labels (IDX)");
  run->add_option("--mnist-test-images", mnist_test_images, "MNIST test images (IDX)");
  run->add_option("--mnist-test-labels", mnist_test_labels, "MNIST test labels (IDX)");

  std::uint64_t verify_seed = 1;
  std::string scratch = (fs::temp_directory_path() / "tpgrad-verify").string();
  auto* verify = app.add_subcommand("verify", "Run the theory checks");
  verify->add_option("--seed", verify_seed, "Seed for the random instances");
  verify->add_option("--scratch", scratch, "Directory for temporary files");

  std::uint64_t toy_seed = 1;
  int toy_samples = 50;
  auto* toy = app.add_subcommand("toy-nullspace", "Nullspace ratios of DTP, DDTP-linear and GNT on a toy student");
  toy->add_option("--seed", toy_seed, "Seed");
  toy->add_option("--samples", toy_samples, "Number of batch-1 updates to average")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      TrainConfig cfg = parse_config(config_path);
      if (!mnist_images.empty()) cfg.data.mnist_train_images = mnist_images;
      if (!mnist_labels.empty()) cfg.data.mnist_train_labels = mnist_labels;
      if (!mnist_test_images.empty()) cfg.data.mnist_test_images = mnist_test_images;
      if (!mnist_test_labels.empty()) cfg.data.mnist_test_labels = mnist_test_labels;
      if (seed) cfg.seed = *seed;
      validate(cfg);
      std::mutex log;
      if (seeds.empty()) return run_one(cfg, out_dir, log) ? 0 : 1;

      std::atomic<std::size_t> next{0};
      std::atomic<bool> ok{true};
      std::vector<std::thread> workers;
      const unsigned n = std::min<unsigned>(worker_cap(), static_cast<unsigned>(seeds.size()));
      for (unsigned w = 0; w < n; ++w) {
        workers.emplace_back([&] {
          for (std::size_t k = next++; k < seeds.size(); k = next++) {
            TrainConfig c = cfg;
            c.seed = seeds[k];
            try {
              if (!run_one(c, fs::path(out_dir) / ("seed-" + std::to_string(c.seed)), log)) ok = false;
            } catch (const std::exception& e) {
              std::lock_guard<std::mutex> lock(log);
              std::cerr << "seed " << c.seed << ": " << e.what() << "\n";
              ok = false;
            }
          }
        });
      }
      for (auto& t : workers) t.join();
      return ok ? 0 : 1;
    }

    if (*verify) {
      bool all = true;
      for (const CheckResult& r : run_theory_checks(verify_seed, scratch)) {
        all = all && r.passed;
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " [" << r.seconds << " s]\n";
      }
      return all ? 0 : 1;
    }

    if (*toy) {
      const ToyNullspaceResult r = toy_nullspace(toy_seed, toy_samples);
      std::cout << "layer-2 nullspace ratio over " << r.samples << " samples\n"
                << "  DTP          " << r.dtp_ratio << "\n"
                << "  DDTP-linear  " << r.ddtp_ratio << "\n"
                << "  GNT          " << r.gnt_ratio << "\n";
      const bool ok = r.gnt_ratio < 1e-8 && r.dtp_ratio > r.ddtp_ratio && r.ddtp_ratio > r.gnt_ratio;
      std::cout << (ok ? "ordering DTP > DDTP-linear > GNT holds\n" : "ordering DTP > DDTP-linear > GNT does NOT hold\n");
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
