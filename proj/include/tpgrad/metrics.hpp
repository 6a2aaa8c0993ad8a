#pragma once

#include <optional>
#include <string>
#include <vector>

namespace tpgrad {

/// One row of the metric stream. Absent fields stay empty; a NaN value marks
/// a failed run.
struct DiagnosticsRecord {
  long long iteration = 0;
  int epoch = 0;
  std::optional<double> train_loss;
  std::optional<double> val_error;
  std::optional<double> test_error;
  std::optional<int> layer;
  std::optional<double> angle_grad_deg;
  std::optional<double> angle_gnt_deg;
  std::optional<double> best_lambda;
  std::optional<double> nullspace_ratio;

  bool operator==(const DiagnosticsRecord&) const = default;
};

inline constexpr const char* kCsvHeader =
    "iteration,epoch,train_loss,val_error,test_error,layer,angle_grad_deg,angle_gnt_deg,best_lambda,nullspace_ratio";

enum class MetricsFormat { CSV, JSONL };

std::string to_csv(const std::vector<DiagnosticsRecord>& records);
std::string to_jsonl(const std::vector<DiagnosticsRecord>& records);

/// Writes the stream; throws IoError when the path is not writable.
void emit_metrics(const std::vector<DiagnosticsRecord>& records, MetricsFormat format, const std::string& path);

std::vector<DiagnosticsRecord> parse_csv(const std::string& text);
std::vector<DiagnosticsRecord> parse_jsonl(const std::string& text);
std::vector<DiagnosticsRecord> read_metrics(const std::string& path, MetricsFormat format);

}  // namespace tpgrad
