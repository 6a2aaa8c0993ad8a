#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tpgrad/data.hpp"
#include "tpgrad/oracle.hpp"
#include "tpgrad/optim.hpp"

namespace tpgrad {

enum class Method {
  BP,
  DFA,
  DTP,
  DTP_pretrained,
  DTPDRL,
  DDTP_linear,
  DDTP_control,
  DDTP_RHL,
  DDTP_RHL_rec,
  GNT_oracle,
};

std::string to_string(Method m);
Method parse_method(const std::string& name);

/// Feedback pathway each method trains with; BP and GNT_oracle have none.
bool uses_feedback(Method m);
FeedbackKind default_pathway(Method m);
bool trains_feedback(Method m);

enum class OptimizerKind { Adam, SGD };
enum class DataSource { Mnist, Teacher };

struct DataConfig {
  DataSource source = DataSource::Mnist;
  std::string mnist_train_images;
  std::string mnist_train_labels;
  std::string mnist_test_images;
  std::string mnist_test_labels;
  Eigen::Index train_subset = 10000;
  Eigen::Index val_count = 5000;
  TeacherSpec teacher;
  Eigen::Index n_train = 1000;
  Eigen::Index n_val = 0;
  Eigen::Index n_test = 1000;
};

struct TrainConfig {
  Method method = Method::DDTP_linear;
  std::uint64_t seed = 0;

  std::vector<Eigen::Index> sizes;
  Activation hidden_act = Activation::tanh();
  Activation output_act = Activation::linear();
  LossKind loss = LossKind::SoftmaxCrossEntropy;
  FeedbackKind pathway = FeedbackKind::DirectLinear;
  Eigen::Index rhl_hidden = 1024;

  double eta_hat = 0.05;
  double sigma = 0.01;
  int noise_samples = 1;
  double gnt_lambda = 0.0;

  OptimizerKind forward_optimizer = OptimizerKind::Adam;
  AdamConfig forward;
  AdamConfig feedback;

  Eigen::Index batch_size = 128;
  int epochs = 10;
  int pretrain_fb_epochs = 6;
  int interleave_fb_epochs = 1;
  bool freeze_forward_except_first = false;

  DampingGrid grid;
  int angle_every = 10;
  int angle_window = 50;
  bool angles = true;
  bool nullspace = false;

  DataConfig data;
};

/// Defaults for a method before any file overrides.
TrainConfig default_config(Method m);

/// Throws ValidationError naming the offending field.
void validate(const TrainConfig& cfg);

/// Parses the key=value format with [section] headers; '#' starts a comment.
/// Unknown keys and malformed lines raise ParseError with the line number.
TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config(const std::string& path);

/// Inverse of parse_config_text: every field, grouped by section.
std::string format_config(const TrainConfig& cfg);

}  // namespace tpgrad
