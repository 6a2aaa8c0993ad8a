#include "tpgrad/optim.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

namespace tpgrad {

namespace {

std::string idx(const char* stem, std::size_t k) { return stem + std::to_string(k + 1); }

void check_pairs(std::span<const TensorRef> params, std::span<const ConstTensorRef> grads) {
  if (params.size() != grads.size()) throw Error(ErrorCode::ShapeMismatch, "parameter and gradient counts differ");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size != grads[k].size) {
      throw Error(ErrorCode::ShapeMismatch, "gradient size differs for " + params[k].name);
    }
    if (!Eigen::Map<const Vec>(grads[k].data, grads[k].size).allFinite()) {
      throw Error(ErrorCode::NonFinite, "gradient for " + params[k].name + " is not finite");
    }
  }
}

template <typename Fb, typename Grad>
void for_each_trainable(Fb& fb, int i, Grad&& visit) {
  std::visit(
      [&](auto& p) {
        using T = std::decay_t<decltype(p)>;
        const auto k = static_cast<std::size_t>(i - 1);
        if constexpr (!std::is_same_v<T, FixedRandomDirect>) {
          visit(idx("fb.Q", k), p.Q[k]);
          if constexpr (std::is_same_v<T, DirectRHLRecFeedback>) visit(idx("fb.S", k), p.S[k]);
          visit(idx("fb.c", k), p.c[k]);
        }
      },
      fb);
}

}  // namespace

ParamGroup forward_group(ForwardNet& net, bool first_layer_only) {
  ParamGroup g{GroupLabel::Forward, {}};
  const std::size_t n = first_layer_only ? 1 : net.layers.size();
  for (std::size_t k = 0; k < n; ++k) {
    g.params.push_back(tensor_ref(idx("fwd.W", k), net.layers[k].W));
    g.params.push_back(tensor_ref(idx("fwd.b", k), net.layers[k].b));
  }
  return g;
}

std::vector<ConstTensorRef> forward_grad_refs(const ForwardGrads& grads, bool first_layer_only) {
  std::vector<ConstTensorRef> out;
  const std::size_t n = first_layer_only ? 1 : grads.dW.size();
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back(tensor_ref(idx("fwd.W", k), grads.dW[k]));
    out.push_back(tensor_ref(idx("fwd.b", k), grads.db[k]));
  }
  return out;
}

ParamGroup feedback_layer_group(FeedbackPathway& fb, int i) {
  if (i < 1 || i > feedback_layers(fb)) throw Error(ErrorCode::IndexOutOfRange, "feedback_layer_group: layer");
  ParamGroup g{GroupLabel::Feedback, {}};
  for_each_trainable(fb, i, [&](std::string name, auto& m) { g.params.push_back(tensor_ref(std::move(name), m)); });
  return g;
}

std::vector<ConstTensorRef> feedback_layer_grad_refs(const FeedbackLayerGrad& grad, const FeedbackPathway& fb,
                                                      int i) {
  std::vector<ConstTensorRef> out;
  const auto k = static_cast<std::size_t>(i - 1);
  if (kind_of(fb) == FeedbackKind::FixedRandomDirect) return out;
  out.push_back(tensor_ref(idx("fb.Q", k), grad.dQ));
  if (kind_of(fb) == FeedbackKind::DirectRHLRec) out.push_back(tensor_ref(idx("fb.S", k), grad.dS));
  out.push_back(tensor_ref(idx("fb.c", k), grad.dc));
  return out;
}

ParamGroup feedback_group(FeedbackPathway& fb) {
  ParamGroup g{GroupLabel::Feedback, {}};
  for (int i = 1; i <= feedback_layers(fb); ++i) {
    ParamGroup layer = feedback_layer_group(fb, i);
    for (auto& p : layer.params) g.params.push_back(std::move(p));
  }
  return g;
}

std::vector<ConstTensorRef> feedback_grad_refs(const FeedbackGrads& grads, const FeedbackPathway& fb) {
  std::vector<ConstTensorRef> out;
  if (kind_of(fb) == FeedbackKind::FixedRandomDirect) return out;
  if (static_cast<int>(grads.size()) != feedback_layers(fb)) {
    throw Error(ErrorCode::ShapeMismatch, "feedback gradient count differs from pathway depth");
  }
  for (int i = 1; i <= feedback_layers(fb); ++i) {
    auto layer = feedback_layer_grad_refs(grads[static_cast<std::size_t>(i - 1)], fb, i);
    for (auto& r : layer) out.push_back(std::move(r));
  }
  return out;
}

void validate(const AdamConfig& cfg) {
  if (!(cfg.lr >= 0.0)) throw Error(ErrorCode::ValidationError, "adam lr must be >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) throw Error(ErrorCode::ValidationError, "adam beta1 must be in [0, 1)");
  if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) throw Error(ErrorCode::ValidationError, "adam beta2 must be in [0, 1)");
  if (!(cfg.eps > 0.0)) throw Error(ErrorCode::ValidationError, "adam eps must be > 0");
  if (!(cfg.weight_decay >= 0.0)) throw Error(ErrorCode::ValidationError, "weight decay must be >= 0");
}

void adam_step(AdamState& state, std::span<const TensorRef> params, std::span<const ConstTensorRef> grads) {
  check_pairs(params, grads);
  const AdamConfig& c = state.cfg;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const TensorRef& p = params[k];
    auto it = std::find(state.names.begin(), state.names.end(), p.name);
    std::size_t slot;
    if (it == state.names.end()) {
      slot = state.names.size();
      state.names.push_back(p.name);
      state.m.push_back(Vec::Zero(p.size));
      state.v.push_back(Vec::Zero(p.size));
    } else {
      slot = static_cast<std::size_t>(it - state.names.begin());
      if (state.m[slot].size() != p.size) throw Error(ErrorCode::ShapeMismatch, "adam state size for " + p.name);
    }
    Eigen::Map<Vec> theta(p.data, p.size);
    Eigen::Map<const Vec> grad(grads[k].data, grads[k].size);
    const Vec g = grad + c.weight_decay * theta;
    state.m[slot] = c.beta1 * state.m[slot] + (1.0 - c.beta1) * g;
    state.v[slot] = c.beta2 * state.v[slot] + (1.0 - c.beta2) * g.cwiseAbs2();
    const Vec m_hat = state.m[slot] / correction1;
    const Vec v_hat = state.v[slot] / correction2;
    theta.array() -= c.lr * m_hat.array() / (v_hat.array().sqrt() + c.eps);
  }
}

void sgd_step(double lr, std::span<const TensorRef> params, std::span<const ConstTensorRef> grads) {
  check_pairs(params, grads);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Eigen::Map<Vec> theta(params[k].data, params[k].size);
    theta -= lr * Eigen::Map<const Vec>(grads[k].data, grads[k].size);
  }
}

}  // namespace tpgrad
