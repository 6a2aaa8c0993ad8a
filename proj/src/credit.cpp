#include "tpgrad/credit.hpp"

#include <cmath>
#include <random>
#include <type_traits>

namespace tpgrad {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ splitmix64(v)); }

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::ShapeMismatch, what);
}

void check_hidden(const ForwardNet& net, int i, const char* what) {
  if (i < 1 || i >= net.depth()) throw Error(ErrorCode::IndexOutOfRange, what);
}

void check_pathway(const ForwardNet& net, const FeedbackPathway& fb) {
  if (feedback_layers(fb) != net.depth() - 1) {
    throw Error(ErrorCode::ShapeMismatch, "feedback pathway does not match network depth");
  }
}

FeedbackLayerGrad zero_feedback_grad(const FeedbackPathway& fb, int i) {
  const auto k = static_cast<std::size_t>(i - 1);
  FeedbackLayerGrad g;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, FixedRandomDirect>) {
          throw Error(ErrorCode::VariantMismatch, "fixed random feedback has no trainable parameters");
        } else {
          g.dQ = Mat::Zero(p.Q[k].rows(), p.Q[k].cols());
          g.dc = Vec::Zero(p.c[k].size());
          if constexpr (std::is_same_v<T, DirectRHLRecFeedback>) {
            g.dS = Mat::Zero(p.S[k].rows(), p.S[k].cols());
          }
        }
      },
      fb);
  return g;
}

// Adds J_theta g_i(input)^T * weight to the gradient, column by column over the batch.
void accumulate_param_grad(const FeedbackPathway& fb, int i, const Mat& input, const Mat& recurrent,
                           const Mat& weight, FeedbackLayerGrad& grad) {
  const auto k = static_cast<std::size_t>(i - 1);
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LayerwiseFeedback>) {
          Mat a = p.Q[k] * input;
          a.colwise() += p.c[k];
          const Mat delta = weight.cwiseProduct(activation_derivative(p.act, a));
          grad.dQ.noalias() += delta * input.transpose();
          grad.dc += delta.rowwise().sum();
        } else if constexpr (std::is_same_v<T, DirectLinearFeedback>) {
          grad.dQ.noalias() += weight * input.transpose();
          grad.dc += weight.rowwise().sum();
        } else if constexpr (std::is_same_v<T, DirectRHLFeedback> ||
                             std::is_same_v<T, DirectRHLRecFeedback>) {
          Mat u = p.R * input;
          u.colwise() += p.d;
          u = u.array().tanh().matrix();
          Mat a = p.Q[k] * u;
          if constexpr (std::is_same_v<T, DirectRHLRecFeedback>) a.noalias() += p.S[k] * recurrent;
          a.colwise() += p.c[k];
          const Mat delta = weight.cwiseProduct((1.0 - a.array().tanh().square()).matrix());
          grad.dQ.noalias() += delta * u.transpose();
          grad.dc += delta.rowwise().sum();
          if constexpr (std::is_same_v<T, DirectRHLRecFeedback>) {
            grad.dS.noalias() += delta * recurrent.transpose();
          }
        } else {
          throw Error(ErrorCode::VariantMismatch, "fixed random feedback has no trainable parameters");
        }
      },
      fb);
}

Mat corrupted(const Activations& acts, int i, const NoiseSpec& noise, std::uint64_t iteration, int draw) {
  return acts.h[i] + noise.sigma * draw_noise(noise, iteration, i, acts.h[i].rows(), acts.batch(), draw);
}

void check_noise(const NoiseSpec& noise) {
  if (!(noise.sigma > 0.0)) throw Error(ErrorCode::ValidationError, "noise sigma must be > 0");
  if (noise.samples_per_item < 1) throw Error(ErrorCode::ValidationError, "noise samples_per_item must be >= 1");
}

// Input that the corrupted loop feeds into g_i: the reconstruction of layer
// i+1 (layerwise) or the corrupted output (direct).
Mat corrupted_feedback_input(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                             int i, const Mat& h_tilde) {
  const int L = net.depth();
  Mat rec = forward_from(net, i, h_tilde);
  if (kind_of(fb) != FeedbackKind::Layerwise) return rec;
  for (int k = L - 1; k > i; --k) {
    rec = feedback_apply(fb, k, rec) + acts.h[k] - feedback_apply(fb, k, acts.h[k + 1]);
  }
  return rec;
}

Mat clean_feedback_input(const FeedbackPathway& fb, const Activations& acts, int i) {
  return kind_of(fb) == FeedbackKind::Layerwise ? acts.h[i + 1] : acts.h.back();
}

enum class ReconMode { Difference, Control };

// Shared loop for the difference and control losses. Returns the loss and,
// when grad is non-null, fills the gradient.
double reconstruction_pass(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                           int i, const NoiseSpec& noise, std::uint64_t iteration, ReconMode mode,
                           FeedbackLayerGrad* grad) {
  check_hidden(net, i, "reconstruction loss: layer");
  check_pathway(net, fb);
  check_noise(noise);
  const double count = static_cast<double>(acts.batch()) * noise.samples_per_item;
  const double scale = 1.0 / (noise.sigma * noise.sigma * count);
  const Mat& h_i = acts.h[i];
  const Mat z = clean_feedback_input(fb, acts, i);
  const Mat g_clean = mode == ReconMode::Difference ? feedback_apply(fb, i, z, h_i) : Mat();
  double loss = 0.0;
  for (int draw = 0; draw < noise.samples_per_item; ++draw) {
    const Mat h_tilde = corrupted(acts, i, noise, iteration, draw);
    const Mat z_tilde = corrupted_feedback_input(net, fb, acts, i, h_tilde);
    Mat rec = feedback_apply(fb, i, z_tilde, h_i);
    if (mode == ReconMode::Difference) rec += h_i - g_clean;
    const Mat r = rec - h_tilde;
    loss += r.squaredNorm();
    if (grad) {
      const Mat w = (2.0 * scale) * r;
      accumulate_param_grad(fb, i, z_tilde, h_i, w, *grad);
      if (mode == ReconMode::Difference) accumulate_param_grad(fb, i, z, h_i, -w, *grad);
    }
  }
  loss *= scale;
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFinite, "reconstruction loss is not finite");
  return loss;
}

double layerwise_pass(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts, int i,
                      const NoiseSpec& noise, std::uint64_t iteration, FeedbackLayerGrad* grad) {
  check_hidden(net, i, "layerwise reconstruction: layer");
  check_pathway(net, fb);
  check_noise(noise);
  if (kind_of(fb) != FeedbackKind::Layerwise) {
    throw Error(ErrorCode::VariantMismatch, "layerwise reconstruction needs a layerwise pathway");
  }
  const double scale = 1.0 / (static_cast<double>(acts.batch()) * noise.samples_per_item);
  double loss = 0.0;
  for (int draw = 0; draw < noise.samples_per_item; ++draw) {
    const Mat h_tilde = corrupted(acts, i, noise, iteration, draw);
    Mat a = net.layer(i + 1).W * h_tilde;
    a.colwise() += net.layer(i + 1).b;
    const Mat next = activate(net.layer(i + 1).act, a);
    const Mat r = feedback_apply(fb, i, next) - h_tilde;
    loss += r.squaredNorm();
    if (grad) accumulate_param_grad(fb, i, next, Mat(), (2.0 * scale) * r, *grad);
  }
  loss *= scale;
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFinite, "reconstruction loss is not finite");
  return loss;
}

}  // namespace

Mat softmax(const Mat& logits) {
  Mat p = logits;
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    const double top = p.col(c).maxCoeff();
    p.col(c) = (p.col(c).array() - top).exp().matrix();
    p.col(c) /= p.col(c).sum();
  }
  return p;
}

LossEval output_loss_and_error(LossKind kind, const Mat& h_L, const Mat& labels) {
  require_same_shape(h_L, labels, "output_loss_and_error: output and label shapes differ");
  LossEval out;
  const double batch = static_cast<double>(h_L.cols());
  if (h_L.cols() == 0) {
    out.error = Mat(h_L.rows(), 0);
    return out;
  }
  if (kind == LossKind::L2) {
    const Mat r = h_L - labels;
    out.loss = r.squaredNorm() / batch;
    out.error = 2.0 * r;
  } else {
    const Mat p = softmax(h_L);
    double total = 0.0;
    for (Eigen::Index c = 0; c < h_L.cols(); ++c) {
      const double top = h_L.col(c).maxCoeff();
      const double log_z = top + std::log((h_L.col(c).array() - top).exp().sum());
      total -= labels.col(c).dot(h_L.col(c)) - labels.col(c).sum() * log_z;
    }
    out.loss = total / batch;
    out.error = p - labels;
  }
  return out;
}

Mat output_target(const Mat& h_L, const Mat& e_L, double eta_hat) {
  require_same_shape(h_L, e_L, "output_target: shapes differ");
  if (!(eta_hat >= 0.0)) throw Error(ErrorCode::ValidationError, "eta_hat must be >= 0");
  return h_L - eta_hat * e_L;
}

TargetBundle make_bundle(const Activations& acts, std::vector<Mat> targets) {
  if (targets.size() != acts.h.size()) throw Error(ErrorCode::ShapeMismatch, "make_bundle: depth");
  TargetBundle out;
  out.deltas.resize(targets.size());
  for (std::size_t i = 1; i < targets.size(); ++i) {
    require_same_shape(targets[i], acts.h[i], "make_bundle: target shape");
    out.deltas[i] = targets[i] - acts.h[i];
  }
  out.targets = std::move(targets);
  return out;
}

TargetBundle propagate_difference(const Activations& acts, const Mat& target_L, const LayerMap& g) {
  const int L = acts.depth();
  std::vector<Mat> targets(static_cast<std::size_t>(L) + 1);
  targets[L] = target_L;
  for (int i = L - 1; i >= 1; --i) {
    targets[i] = acts.h[i] + (g(i, targets[i + 1]) - g(i, acts.h[i + 1]));
  }
  return make_bundle(acts, std::move(targets));
}

TargetBundle propagate_dtp(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                           const Mat& target_L) {
  if (kind_of(fb) != FeedbackKind::Layerwise) {
    throw Error(ErrorCode::VariantMismatch, "propagate_dtp needs a layerwise pathway");
  }
  check_pathway(net, fb);
  require_same_shape(target_L, acts.h.back(), "propagate_dtp: output target shape");
  return propagate_difference(acts, target_L,
                              [&](int i, const Mat& above) { return feedback_apply(fb, i, above); });
}

TargetBundle propagate_ddtp(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                            const Mat& target_L) {
  const FeedbackKind kind = kind_of(fb);
  if (kind == FeedbackKind::Layerwise || kind == FeedbackKind::FixedRandomDirect) {
    throw Error(ErrorCode::VariantMismatch, "propagate_ddtp needs a trainable direct pathway");
  }
  check_pathway(net, fb);
  require_same_shape(target_L, acts.h.back(), "propagate_ddtp: output target shape");
  const int L = net.depth();
  std::vector<Mat> targets(static_cast<std::size_t>(L) + 1);
  targets[L] = target_L;
  for (int i = L - 1; i >= 1; --i) {
    const Mat& h_i = acts.h[i];
    targets[i] = h_i + (feedback_apply(fb, i, target_L, h_i) - feedback_apply(fb, i, acts.h[L], h_i));
  }
  return make_bundle(acts, std::move(targets));
}

ForwardGrads zero_grads(const ForwardNet& net) {
  ForwardGrads g;
  for (const Layer& l : net.layers) {
    g.dW.push_back(Mat::Zero(l.W.rows(), l.W.cols()));
    g.db.push_back(Vec::Zero(l.b.size()));
  }
  return g;
}

ForwardGrads forward_update(const ForwardNet& net, const Activations& acts, const TargetBundle& bundle) {
  const int L = net.depth();
  if (bundle.targets.size() != static_cast<std::size_t>(L) + 1 || acts.depth() != L) {
    throw Error(ErrorCode::ShapeMismatch, "forward_update: depth mismatch");
  }
  const double scale = 2.0 / static_cast<double>(acts.batch());
  ForwardGrads g;
  for (int i = 1; i <= L; ++i) {
    require_same_shape(bundle.targets[i], acts.h[i], "forward_update: target shape");
    const Mat delta =
        (acts.h[i] - bundle.targets[i]).cwiseProduct(activation_derivative(net.layer(i).act, acts.a[i]));
    g.dW.push_back(scale * delta * acts.h[i - 1].transpose());
    g.db.push_back(scale * delta.rowwise().sum());
  }
  return g;
}

double local_loss(const ForwardNet& net, const Activations& acts, const TargetBundle& bundle, int i) {
  if (i < 1 || i > net.depth()) throw Error(ErrorCode::IndexOutOfRange, "local_loss: layer");
  const Layer& l = net.layer(i);
  Mat a = l.W * acts.h[i - 1];
  a.colwise() += l.b;
  return (bundle.targets[i] - activate(l.act, a)).squaredNorm() / static_cast<double>(acts.batch());
}

Mat draw_noise(const NoiseSpec& noise, std::uint64_t iteration, int layer, Eigen::Index rows,
               Eigen::Index batch, int draw) {
  Mat eps(rows, batch);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index b = 0; b < batch; ++b) {
    std::uint64_t key = mix(noise.seed, static_cast<std::uint64_t>(layer));
    key = mix(key, static_cast<std::uint64_t>(b));
    key = mix(key, iteration);
    key = mix(key, static_cast<std::uint64_t>(draw));
    std::mt19937_64 gen(key);
    for (Eigen::Index r = 0; r < rows; ++r) eps(r, b) = normal(gen);
  }
  return eps;
}

FeedbackLayerGrad layerwise_recon_grad(const ForwardNet& net, const FeedbackPathway& fb,
                                       const Activations& acts, int i, const NoiseSpec& noise,
                                       std::uint64_t iteration) {
  FeedbackLayerGrad grad = zero_feedback_grad(fb, i);
  grad.loss = layerwise_pass(net, fb, acts, i, noise, iteration, &grad);
  return grad;
}

double layerwise_recon_loss(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                            int i, const NoiseSpec& noise, std::uint64_t iteration) {
  return layerwise_pass(net, fb, acts, i, noise, iteration, nullptr);
}

FeedbackLayerGrad drl_grad(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                           int i, const NoiseSpec& noise, std::uint64_t iteration) {
  check_hidden(net, i, "drl_grad: layer");
  FeedbackLayerGrad grad = zero_feedback_grad(fb, i);
  grad.loss = reconstruction_pass(net, fb, acts, i, noise, iteration, ReconMode::Difference, &grad);
  return grad;
}

double drl_loss(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts, int i,
                const NoiseSpec& noise, std::uint64_t iteration) {
  if (kind_of(fb) == FeedbackKind::FixedRandomDirect) {
    throw Error(ErrorCode::VariantMismatch, "fixed random feedback has no trainable parameters");
  }
  return reconstruction_pass(net, fb, acts, i, noise, iteration, ReconMode::Difference, nullptr);
}

FeedbackLayerGrad control_recon_grad(const ForwardNet& net, const FeedbackPathway& fb,
                                     const Activations& acts, int i, const NoiseSpec& noise,
                                     std::uint64_t iteration) {
  if (kind_of(fb) != FeedbackKind::DirectLinear) {
    throw Error(ErrorCode::VariantMismatch, "control loss needs a direct linear pathway");
  }
  check_hidden(net, i, "control_recon_grad: layer");
  FeedbackLayerGrad grad = zero_feedback_grad(fb, i);
  grad.loss = reconstruction_pass(net, fb, acts, i, noise, iteration, ReconMode::Control, &grad);
  return grad;
}

double control_recon_loss(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                          int i, const NoiseSpec& noise, std::uint64_t iteration) {
  if (kind_of(fb) != FeedbackKind::DirectLinear) {
    throw Error(ErrorCode::VariantMismatch, "control loss needs a direct linear pathway");
  }
  return reconstruction_pass(net, fb, acts, i, noise, iteration, ReconMode::Control, nullptr);
}

ForwardGrads dfa_update(const ForwardNet& net, const FeedbackPathway& fb, const Activations& acts,
                        const Mat& e_L) {
  const auto* dfa = std::get_if<FixedRandomDirect>(&fb);
  if (!dfa) throw Error(ErrorCode::VariantMismatch, "dfa_update needs fixed random feedback");
  check_pathway(net, fb);
  require_same_shape(e_L, acts.h.back(), "dfa_update: error shape");
  const int L = net.depth();
  const double scale = 1.0 / static_cast<double>(acts.batch());
  ForwardGrads g;
  for (int i = 1; i <= L; ++i) {
    const Mat projected = i == L ? e_L : Mat(dfa->B[static_cast<std::size_t>(i - 1)] * e_L);
    const Mat delta = projected.cwiseProduct(activation_derivative(net.layer(i).act, acts.a[i]));
    g.dW.push_back(scale * delta * acts.h[i - 1].transpose());
    g.db.push_back(scale * delta.rowwise().sum());
  }
  return g;
}

ForwardGrads bp_update(const ForwardNet& net, const Activations& acts, const Mat& e_L) {
  require_same_shape(e_L, acts.h.back(), "bp_update: error shape");
  const int L = net.depth();
  const double scale = 1.0 / static_cast<double>(acts.batch());
  ForwardGrads g = zero_grads(net);
  Mat delta = e_L.cwiseProduct(activation_derivative(net.layer(L).act, acts.a[L]));
  for (int i = L; i >= 1; --i) {
    g.dW[i - 1] = scale * delta * acts.h[i - 1].transpose();
    g.db[i - 1] = scale * delta.rowwise().sum();
    if (i > 1) {
      delta = (net.layer(i).W.transpose() * delta)
                  .cwiseProduct(activation_derivative(net.layer(i - 1).act, acts.a[i - 1]));
    }
  }
  return g;
}

}  // namespace tpgrad
