#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tpgrad/network.hpp"

namespace tpgrad {

/// Inputs and labels stored column-wise (one column per sample).
struct Split {
  Mat inputs;
  Mat labels;

  Eigen::Index size() const { return inputs.cols(); }
};

struct Dataset {
  Split train;
  Split val;
  Split test;
};

struct TeacherSpec {
  Eigen::Index input_dim = 6;
  Eigen::Index output_dim = 2;
  std::vector<Eigen::Index> hidden{1000, 1000, 1000, 1000};
  Activation act = Activation::relu();
  double weight_scale = 1.0;  // multiplies the 1/sqrt(fan_in) Gaussian std
  std::uint64_t seed = 0;
};

/// The teacher itself: Gaussian weights with std weight_scale/sqrt(fan_in),
/// zero biases, linear output layer.
ForwardNet make_teacher(const TeacherSpec& spec);

/// Standard normal inputs pushed through the teacher; deterministic in the seed.
/// The validation split is left empty.
Dataset gen_teacher_dataset(const TeacherSpec& spec, Eigen::Index n_train, Eigen::Index n_test);

Vec one_hot(Eigen::Index label, Eigen::Index classes);

struct IdxImages {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
  Eigen::Index count() const { return rows * cols == 0 ? 0 : static_cast<Eigen::Index>(pixels.size()) / (rows * cols); }
};

IdxImages read_idx_images(const std::string& path);
std::vector<std::uint8_t> read_idx_labels(const std::string& path);
void write_idx_images(const std::string& path, const IdxImages& images);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

/// Pixels scaled to [0, 1] (no mean subtraction), labels one-hot over 10 classes.
Split idx_to_split(const IdxImages& images, const std::vector<std::uint8_t>& labels);

/// Loads a training IDX pair, shuffles it by `seed`, puts the first val_count
/// samples in validation and the next train_subset (0 = all remaining) in
/// training. The test split is left empty.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       Eigen::Index train_subset, Eigen::Index val_count, std::uint64_t seed = 0);

/// FNV-1a over shapes and raw bytes of every split.
std::uint64_t digest(const Dataset& data);

}  // namespace tpgrad
