#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "tpgrad/linalg.hpp"

namespace tpgrad {

enum class ActivationKind { Tanh, Linear, LeakyTanh, ReLU };

struct Activation {
  ActivationKind kind = ActivationKind::Tanh;
  double alpha = 0.1;  // LeakyTanh slope, must be > 0

  static Activation tanh() { return {ActivationKind::Tanh, 0.1}; }
  static Activation linear() { return {ActivationKind::Linear, 0.1}; }
  static Activation leaky_tanh(double alpha = 0.1) { return {ActivationKind::LeakyTanh, alpha}; }
  static Activation relu() { return {ActivationKind::ReLU, 0.1}; }
};

std::string to_string(const Activation& act);
Activation parse_activation(const std::string& name);

Mat activate(const Activation& act, const Mat& a);
/// s'(a), elementwise.
Mat activation_derivative(const Activation& act, const Mat& a);
/// s^{-1}(h), elementwise. Only defined for activations whose image is all
/// of R (Linear, LeakyTanh) or for tanh inside (-1, 1).
Mat activation_inverse(const Activation& act, const Mat& h);

struct Layer {
  Mat W;  // n_out x n_in
  Vec b;
  Activation act;

  Eigen::Index in_dim() const { return W.cols(); }
  Eigen::Index out_dim() const { return W.rows(); }
};

struct ForwardNet {
  std::vector<Layer> layers;

  int depth() const { return static_cast<int>(layers.size()); }
  Eigen::Index input_dim() const { return layers.front().in_dim(); }
  Eigen::Index output_dim() const { return layers.back().out_dim(); }
  Eigen::Index width(int i) const { return i == 0 ? input_dim() : layers[i - 1].out_dim(); }
  const Layer& layer(int i) const { return layers.at(static_cast<std::size_t>(i - 1)); }
  Layer& layer(int i) { return layers.at(static_cast<std::size_t>(i - 1)); }
};

/// Checks neighbouring shapes; throws ShapeMismatch.
void validate(const ForwardNet& net);

/// h[0..L] and a[0..L] (a[0] is empty). Columns index samples.
struct Activations {
  std::vector<Mat> h;
  std::vector<Mat> a;

  int depth() const { return static_cast<int>(h.size()) - 1; }
  Eigen::Index batch() const { return h.front().cols(); }
};

Activations forward_pass(const ForwardNet& net, const Mat& x);

/// Output of layers from+1..L applied to a state of layer `from`.
Mat forward_from(const ForwardNet& net, int from, const Mat& h_from);

/// dh_i/dh_{i-1} = diag(s'(a_i)) W_i for one sample.
Mat layer_jacobian(const ForwardNet& net, const Activations& acts, int i, Eigen::Index sample = 0);

/// dh_L/dh_i, the product J_L ... J_{i+1}; identity when i == L.
Mat path_jacobian(const ForwardNet& net, const Activations& acts, int i, Eigen::Index sample = 0);

/// Exact inverse of one layer, W^{-1}(s^{-1}(h) - b). Needs square invertible W.
Mat layer_inverse(const Layer& layer, const Mat& h);

// Feedback pathways. Per-layer members are indexed by hidden layer i-1, for
// i = 1..L-1. Layerwise g_i maps n_{i+1} -> n_i; direct g_i maps n_L -> n_i.

struct LayerwiseFeedback {
  std::vector<Mat> Q;
  std::vector<Vec> c;
  Activation act = Activation::tanh();
};

struct DirectLinearFeedback {
  std::vector<Mat> Q;
  std::vector<Vec> c;
};

struct DirectRHLFeedback {
  Mat R;  // fixed, shared
  Vec d;  // fixed, shared
  std::vector<Mat> Q;
  std::vector<Vec> c;
};

struct DirectRHLRecFeedback {
  Mat R;  // fixed, shared
  Vec d;  // fixed, shared
  std::vector<Mat> Q;
  std::vector<Mat> S;
  std::vector<Vec> c;
};

struct FixedRandomDirect {
  std::vector<Mat> B;  // fixed, n_i x n_L
};

using FeedbackPathway = std::variant<LayerwiseFeedback, DirectLinearFeedback, DirectRHLFeedback,
                                     DirectRHLRecFeedback, FixedRandomDirect>;

enum class FeedbackKind { Layerwise, DirectLinear, DirectRHL, DirectRHLRec, FixedRandomDirect };

FeedbackKind kind_of(const FeedbackPathway& fb);
std::string to_string(FeedbackKind kind);
FeedbackKind parse_feedback_kind(const std::string& name);
bool is_direct(FeedbackKind kind);

/// Number of hidden layers served by the pathway.
int feedback_layers(const FeedbackPathway& fb);

/// Evaluates g_i. `input` is h_{i+1} (Layerwise) or h_L (direct variants);
/// `recurrent` is h_i and only read by DirectRHLRec.
Mat feedback_apply(const FeedbackPathway& fb, int i, const Mat& input, const Mat& recurrent = Mat());

/// dg_i/d(input) for a single sample (column vectors).
Mat feedback_jacobian(const FeedbackPathway& fb, int i, const Vec& input, const Vec& recurrent = Vec());

// Construction. Trainable weights and fixed random matrices are uniform in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases start at zero.

Mat uniform_fan_in(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

ForwardNet make_forward_net(const std::vector<Eigen::Index>& sizes, Activation hidden,
                            Activation output, std::mt19937_64& rng);

FeedbackPathway make_feedback(FeedbackKind kind, const ForwardNet& net, std::mt19937_64& rng,
                              Eigen::Index rhl_hidden = 0);

}  // namespace tpgrad
