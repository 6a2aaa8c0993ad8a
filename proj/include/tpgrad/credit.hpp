#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tpgrad/network.hpp"

namespace tpgrad {

enum class LossKind { L2, SoftmaxCrossEntropy };

/// `loss` is the mean over samples; `error` holds dL/dh_L per sample (columns).
/// L2 has no 1/2 factor: loss = ||h_L - l||^2, error = 2 (h_L - l).
struct LossEval {
  double loss = 0.0;
  Mat error;
};

Mat softmax(const Mat& logits);
LossEval output_loss_and_error(LossKind kind, const Mat& h_L, const Mat& labels);

/// h_L - eta_hat * e_L
Mat output_target(const Mat& h_L, const Mat& e_L, double eta_hat);

/// Targets and target updates for layers 1..L (index 0 is unused).
struct TargetBundle {
  std::vector<Mat> targets;
  std::vector<Mat> deltas;
};

/// Fills deltas[i] = targets[i] - h[i].
TargetBundle make_bundle(const Activations& acts, std::vector<Mat> targets);

/// Layerwise difference recursion with an arbitrary g: target_i = g(i, target_{i+1})
/// + h_i - g(i, h_{i+1}).
using LayerMap = std::function<Mat(int i, const Mat& above)>;
TargetBundle propagate_difference(const Activations& acts, const Mat& target_L, const LayerMap& g);

TargetBundle propagate_dtp(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                           const Mat& target_L);
TargetBundle propagate_ddtp(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                            const Mat& target_L);

/// Gradients for every forward layer, indexed by layer - 1.
struct ForwardGrads {
  std::vector<Mat> dW;
  std::vector<Vec> db;
};

ForwardGrads zero_grads(const ForwardNet& net);

/// Gradient of the mean local loss ||target_i - h_i||^2 with the target held fixed.
ForwardGrads forward_update(const ForwardNet& net, const Activations& acts, const TargetBundle& bundle);
double local_loss(const ForwardNet& net, const Activations& acts, const TargetBundle& bundle, int i);

struct NoiseSpec {
  double sigma = 0.01;
  int samples_per_item = 1;
  std::uint64_t seed = 0;
};

/// Standard normal draws, one independent stream per (seed, layer, sample,
/// iteration, draw) so a perturbation can be replayed exactly.
Mat draw_noise(const NoiseSpec& noise, std::uint64_t iteration, int layer, Eigen::Index rows,
               Eigen::Index batch, int draw);

/// Gradient of one feedback mapping's loss w.r.t. its trainable parameters.
/// Members that the variant does not have stay empty.
struct FeedbackLayerGrad {
  Mat dQ;
  Vec dc;
  Mat dS;
  double loss = 0.0;
};

using FeedbackGrads = std::vector<FeedbackLayerGrad>;

/// mean ||g_i(f_{i+1}(h_i + sigma eps)) - (h_i + sigma eps)||^2, layerwise pathway only.
FeedbackLayerGrad layerwise_recon_grad(const ForwardNet& net, const FeedbackPathway& fb,
                                       const Activations& acts, int i, const NoiseSpec& noise,
                                       std::uint64_t iteration);
double layerwise_recon_loss(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                            int i, const NoiseSpec& noise, std::uint64_t iteration);

/// Difference reconstruction loss, scaled by 1/sigma^2. The corrupted state is
/// sent to the output and back through the difference-corrected feedback
/// chain; only g_i's parameters receive gradient.
FeedbackLayerGrad drl_grad(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                           int i, const NoiseSpec& noise, std::uint64_t iteration);
double drl_loss(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts, int i,
                const NoiseSpec& noise, std::uint64_t iteration);

/// Same loop as drl_grad without the difference correction, DirectLinear only.
/// Also scaled by 1/sigma^2 so the two losses differ only by the correction.
FeedbackLayerGrad control_recon_grad(const ForwardNet& net, const FeedbackPathway& fb,
                                     const Activations& acts, int i, const NoiseSpec& noise,
                                     std::uint64_t iteration);
double control_recon_loss(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                          int i, const NoiseSpec& noise, std::uint64_t iteration);

/// Direct feedback alignment pseudo-gradients (mean over the batch).
ForwardGrads dfa_update(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                        const Mat& e_L);

/// Exact gradient of the mean output loss.
ForwardGrads bp_update(const ForwardNet& net, const Activations& acts, const Mat& e_L);

}  // namespace tpgrad
