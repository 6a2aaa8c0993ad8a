#pragma once

#include <span>
#include <string>
#include <vector>

#include "tpgrad/credit.hpp"

namespace tpgrad {

/// A named view onto one parameter tensor (or its gradient).
struct TensorRef {
  std::string name;
  double* data = nullptr;
  Eigen::Index size = 0;
};

struct ConstTensorRef {
  std::string name;
  const double* data = nullptr;
  Eigen::Index size = 0;
};

template <typename Derived>
TensorRef tensor_ref(std::string name, Eigen::PlainObjectBase<Derived>& m) {
  return {std::move(name), m.data(), m.size()};
}

template <typename Derived>
ConstTensorRef tensor_ref(std::string name, const Eigen::PlainObjectBase<Derived>& m) {
  return {std::move(name), m.data(), m.size()};
}

enum class GroupLabel { Forward, Feedback };

struct ParamGroup {
  GroupLabel label = GroupLabel::Forward;
  std::vector<TensorRef> params;
};

/// Forward parameters W_i, b_i. With `first_layer_only` only layer 1 is included.
ParamGroup forward_group(ForwardNet& net, bool first_layer_only = false);
std::vector<ConstTensorRef> forward_grad_refs(const ForwardGrads& grads, bool first_layer_only = false);

/// Trainable feedback parameters (Q_i, S_i, c_i). Fixed R, d, B_i are never listed.
ParamGroup feedback_group(FeedbackPathway& fb);
std::vector<ConstTensorRef> feedback_grad_refs(const FeedbackGrads& grads, const FeedbackPathway& fb);

/// Trainable parameters of one feedback mapping g_i.
ParamGroup feedback_layer_group(FeedbackPathway& fb, int i);
std::vector<ConstTensorRef> feedback_layer_grad_refs(const FeedbackLayerGrad& grad, const FeedbackPathway& fb,
                                                      int i);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

void validate(const AdamConfig& cfg);

struct AdamState {
  AdamConfig cfg;
  std::vector<std::string> names;  // accumulator order
  std::vector<Vec> m;
  std::vector<Vec> v;
  long long t = 0;
};

/// Bias-corrected Adam. Weight decay is added to the gradient (g + wd * theta)
/// before the moment updates. Accumulators are keyed by tensor name and
/// created on first use.
void adam_step(AdamState& state, std::span<const TensorRef> params, std::span<const ConstTensorRef> grads);

/// theta <- theta - lr * g
void sgd_step(double lr, std::span<const TensorRef> params, std::span<const ConstTensorRef> grads);

}  // namespace tpgrad
