#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tpgrad/checkpoint.hpp"
#include "tpgrad/config.hpp"
#include "tpgrad/metrics.hpp"

namespace tpgrad {

struct EpochSummary {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_error;
  std::optional<double> test_error;
  // Per layer 1..L; NaN where no angle was measured.
  std::vector<double> angle_grad_deg;
  std::vector<double> angle_gnt_deg;  // epoch mean at the epoch's best damping value
  std::vector<double> best_lambda;
};

struct RunSummary {
  std::string method;
  std::uint64_t seed = 0;
  int epochs_completed = 0;
  int feedback_only_epochs = 0;
  long long iterations = 0;
  int best_epoch = 0;
  std::optional<double> best_val_error;
  std::optional<double> test_error_at_best;
  double final_train_loss = 0.0;
  bool diverged = false;
  std::string failure;
  std::vector<EpochSummary> epochs;
  // Mean over the last angle_window measurements, per layer.
  std::vector<double> window_angle_grad_deg;
  std::vector<double> window_angle_gnt_deg;
  std::uint64_t initial_digest = 0;
  std::uint64_t final_digest = 0;
};

struct RunResult {
  std::vector<DiagnosticsRecord> records;
  RunSummary summary;
  ForwardNet net;
  std::optional<FeedbackPathway> feedback;
  AdamState forward_opt;
  AdamState feedback_opt;
};

/// Builds the splits the config asks for. MNIST paths come from the config.
Dataset load_dataset(const TrainConfig& cfg);

/// Runs the full schedule. A non-finite loss stops the run early with
/// summary.diverged set; the records gathered so far are kept.
RunResult run_experiment(const TrainConfig& cfg, const Dataset& data);

/// Parameters and optimizer state of a run.
Checkpoint make_checkpoint(const TrainConfig& cfg, const RunResult& run);

std::string summary_to_json(const RunSummary& summary);

/// Misclassification rate (softmax_ce) or mean L2 loss on a split; NaN-free
/// splits of size zero return nullopt.
std::optional<double> split_error(const ForwardNet& net, LossKind loss, const Split& split);
double split_loss(const ForwardNet& net, LossKind loss, const Split& split);

}  // namespace tpgrad
