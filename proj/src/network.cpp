#include "tpgrad/network.hpp"

#include <cmath>
#include <limits>
#include <type_traits>

namespace tpgrad {

namespace {

double leaky_tanh_inverse(double y, double alpha) {
  // s(x) = tanh(x) + alpha x is strictly increasing with |s(x) - alpha x| < 1,
  // so the root lies in [(y - 1)/alpha, (y + 1)/alpha].
  double lo = (y - 1.0) / alpha;
  double hi = (y + 1.0) / alpha;
  double x = y / (1.0 + alpha);
  for (int it = 0; it < 200; ++it) {
    const double t = std::tanh(x);
    const double fx = t + alpha * x - y;
    if (fx == 0.0) return x;
    if (fx > 0.0) hi = x; else lo = x;
    // Newton step, falling back to bisection when it leaves the bracket.
    double next = x - fx / (1.0 - t * t + alpha);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-16 * std::max(1.0, std::abs(x))) return next;
    x = next;
  }
  return x;
}

void check_hidden_index(int i, int n_hidden, const char* what) {
  if (i < 1 || i > n_hidden) throw Error(ErrorCode::IndexOutOfRange, what);
}

void check_rows(const Mat& m, Eigen::Index rows, const char* what) {
  if (m.rows() != rows) throw Error(ErrorCode::ShapeMismatch, what);
}

}  // namespace

std::string to_string(const Activation& act) {
  switch (act.kind) {
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::Linear: return "linear";
    case ActivationKind::LeakyTanh: return "leaky_tanh";
    case ActivationKind::ReLU: return "relu";
  }
  return "unknown";
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh();
  if (name == "linear") return Activation::linear();
  if (name == "leaky_tanh") return Activation::leaky_tanh();
  if (name == "relu") return Activation::relu();
  throw Error(ErrorCode::ValidationError, "unknown activation '" + name + "'");
}

Mat activate(const Activation& act, const Mat& a) {
  switch (act.kind) {
    case ActivationKind::Tanh: return a.array().tanh().matrix();
    case ActivationKind::Linear: return a;
    case ActivationKind::LeakyTanh: return (a.array().tanh() + act.alpha * a.array()).matrix();
    case ActivationKind::ReLU: return a.cwiseMax(0.0);
  }
  return a;
}

Mat activation_derivative(const Activation& act, const Mat& a) {
  switch (act.kind) {
    case ActivationKind::Tanh: return (1.0 - a.array().tanh().square()).matrix();
    case ActivationKind::Linear: return Mat::Ones(a.rows(), a.cols());
    case ActivationKind::LeakyTanh:
      return (1.0 + act.alpha - a.array().tanh().square()).matrix();
    case ActivationKind::ReLU: return (a.array() > 0.0).cast<double>().matrix();
  }
  return Mat::Ones(a.rows(), a.cols());
}

Mat activation_inverse(const Activation& act, const Mat& h) {
  switch (act.kind) {
    case ActivationKind::Linear: return h;
    case ActivationKind::Tanh:
      if ((h.array().abs() >= 1.0).any()) {
        throw Error(ErrorCode::NonFinite, "tanh inverse outside (-1, 1)");
      }
      return h.array().atanh().matrix();
    case ActivationKind::LeakyTanh: {
      Mat x(h.rows(), h.cols());
      for (Eigen::Index k = 0; k < h.size(); ++k) x(k) = leaky_tanh_inverse(h(k), act.alpha);
      return x;
    }
    case ActivationKind::ReLU:
      throw Error(ErrorCode::VariantMismatch, "relu is not invertible");
  }
  return h;
}

void validate(const ForwardNet& net) {
  if (net.layers.empty()) throw Error(ErrorCode::ShapeMismatch, "network has no layers");
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const Layer& l = net.layers[k];
    if (l.b.size() != l.W.rows()) throw Error(ErrorCode::ShapeMismatch, "bias length != rows of W");
    if (k > 0 && l.W.cols() != net.layers[k - 1].W.rows()) {
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(k + 1) + " input size");
    }
    if (l.act.kind == ActivationKind::LeakyTanh && !(l.act.alpha > 0.0)) {
      throw Error(ErrorCode::ValidationError, "leaky_tanh alpha must be > 0");
    }
  }
}

Activations forward_pass(const ForwardNet& net, const Mat& x) {
  if (x.rows() != net.input_dim()) throw Error(ErrorCode::ShapeMismatch, "forward_pass: input size");
  Activations acts;
  acts.h.reserve(net.layers.size() + 1);
  acts.a.reserve(net.layers.size() + 1);
  acts.h.push_back(x);
  acts.a.emplace_back();
  for (const Layer& l : net.layers) {
    Mat a = l.W * acts.h.back();
    a.colwise() += l.b;
    acts.h.push_back(activate(l.act, a));
    acts.a.push_back(std::move(a));
  }
  return acts;
}

Mat forward_from(const ForwardNet& net, int from, const Mat& h_from) {
  if (from < 0 || from > net.depth()) throw Error(ErrorCode::IndexOutOfRange, "forward_from: layer");
  check_rows(h_from, net.width(from), "forward_from: input size");
  Mat h = h_from;
  for (int k = from + 1; k <= net.depth(); ++k) {
    const Layer& l = net.layer(k);
    Mat a = l.W * h;
    a.colwise() += l.b;
    h = activate(l.act, a);
  }
  return h;
}

Mat layer_jacobian(const ForwardNet& net, const Activations& acts, int i, Eigen::Index sample) {
  if (i < 1 || i > net.depth()) throw Error(ErrorCode::IndexOutOfRange, "layer_jacobian: layer");
  if (sample < 0 || sample >= acts.batch()) throw Error(ErrorCode::IndexOutOfRange, "layer_jacobian: sample");
  const Layer& l = net.layer(i);
  const Vec slope = activation_derivative(l.act, acts.a[i].col(sample));
  return slope.asDiagonal() * l.W;
}

Mat path_jacobian(const ForwardNet& net, const Activations& acts, int i, Eigen::Index sample) {
  if (i < 0 || i > net.depth()) throw Error(ErrorCode::IndexOutOfRange, "path_jacobian: layer");
  const int L = net.depth();
  if (i == L) return Mat::Identity(net.output_dim(), net.output_dim());
  // Accumulate from the output side so every product is (n_L x n_k)(n_k x n_{k-1}).
  Mat J = layer_jacobian(net, acts, L, sample);
  for (int k = L - 1; k > i; --k) J = J * layer_jacobian(net, acts, k, sample);
  return J;
}

Mat layer_inverse(const Layer& layer, const Mat& h) {
  if (layer.W.rows() != layer.W.cols()) throw Error(ErrorCode::ShapeMismatch, "layer_inverse: W not square");
  check_rows(h, layer.W.rows(), "layer_inverse: input size");
  Eigen::PartialPivLU<Mat> lu(layer.W);
  Mat pre = activation_inverse(layer.act, h);
  pre.colwise() -= layer.b;
  return lu.solve(pre);
}

FeedbackKind kind_of(const FeedbackPathway& fb) {
  return static_cast<FeedbackKind>(fb.index());
}

std::string to_string(FeedbackKind kind) {
  switch (kind) {
    case FeedbackKind::Layerwise: return "layerwise";
    case FeedbackKind::DirectLinear: return "direct_linear";
    case FeedbackKind::DirectRHL: return "direct_rhl";
    case FeedbackKind::DirectRHLRec: return "direct_rhl_rec";
    case FeedbackKind::FixedRandomDirect: return "fixed_random_direct";
  }
  return "unknown";
}

FeedbackKind parse_feedback_kind(const std::string& name) {
  for (auto k : {FeedbackKind::Layerwise, FeedbackKind::DirectLinear, FeedbackKind::DirectRHL,
                 FeedbackKind::DirectRHLRec, FeedbackKind::FixedRandomDirect}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::ValidationError, "unknown feedback pathway '" + name + "'");
}

bool is_direct(FeedbackKind kind) { return kind != FeedbackKind::Layerwise; }

int feedback_layers(const FeedbackPathway& fb) {
  return std::visit(
      [](const auto& p) -> int {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, FixedRandomDirect>) {
          return static_cast<int>(p.B.size());
        } else {
          return static_cast<int>(p.Q.size());
        }
      },
      fb);
}

Mat feedback_apply(const FeedbackPathway& fb, int i, const Mat& input, const Mat& recurrent) {
  check_hidden_index(i, feedback_layers(fb), "feedback_apply: layer");
  const auto k = static_cast<std::size_t>(i - 1);
  return std::visit(
      [&](const auto& p) -> Mat {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LayerwiseFeedback>) {
          check_rows(input, p.Q[k].cols(), "feedback_apply: input size");
          Mat a = p.Q[k] * input;
          a.colwise() += p.c[k];
          return activate(p.act, a);
        } else if constexpr (std::is_same_v<T, DirectLinearFeedback>) {
          check_rows(input, p.Q[k].cols(), "feedback_apply: input size");
          Mat a = p.Q[k] * input;
          a.colwise() += p.c[k];
          return a;
        } else if constexpr (std::is_same_v<T, DirectRHLFeedback>) {
          check_rows(input, p.R.cols(), "feedback_apply: input size");
          Mat u = p.R * input;
          u.colwise() += p.d;
          Mat a = p.Q[k] * u.array().tanh().matrix();
          a.colwise() += p.c[k];
          return a.array().tanh().matrix();
        } else if constexpr (std::is_same_v<T, DirectRHLRecFeedback>) {
          check_rows(input, p.R.cols(), "feedback_apply: input size");
          check_rows(recurrent, p.S[k].cols(), "feedback_apply: recurrent size");
          if (recurrent.cols() != input.cols()) {
            throw Error(ErrorCode::ShapeMismatch, "feedback_apply: recurrent batch");
          }
          Mat u = p.R * input;
          u.colwise() += p.d;
          Mat a = p.Q[k] * u.array().tanh().matrix() + p.S[k] * recurrent;
          a.colwise() += p.c[k];
          return a.array().tanh().matrix();
        } else {
          throw Error(ErrorCode::VariantMismatch, "feedback_apply: fixed random feedback carries no mapping");
        }
      },
      fb);
}

Mat feedback_jacobian(const FeedbackPathway& fb, int i, const Vec& input, const Vec& recurrent) {
  check_hidden_index(i, feedback_layers(fb), "feedback_jacobian: layer");
  const auto k = static_cast<std::size_t>(i - 1);
  return std::visit(
      [&](const auto& p) -> Mat {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LayerwiseFeedback>) {
          check_rows(input, p.Q[k].cols(), "feedback_jacobian: input size");
          const Vec a = p.Q[k] * input + p.c[k];
          return activation_derivative(p.act, a).col(0).asDiagonal() * p.Q[k];
        } else if constexpr (std::is_same_v<T, DirectLinearFeedback>) {
          return p.Q[k];
        } else if constexpr (std::is_same_v<T, DirectRHLFeedback> ||
                             std::is_same_v<T, DirectRHLRecFeedback>) {
          check_rows(input, p.R.cols(), "feedback_jacobian: input size");
          const Vec u = (p.R * input + p.d).array().tanh().matrix();
          Vec a = p.Q[k] * u + p.c[k];
          if constexpr (std::is_same_v<T, DirectRHLRecFeedback>) {
            check_rows(recurrent, p.S[k].cols(), "feedback_jacobian: recurrent size");
            a += p.S[k] * recurrent;
          }
          const Vec outer = 1.0 - a.array().tanh().square();
          const Vec inner = 1.0 - u.array().square();
          return outer.asDiagonal() * p.Q[k] * inner.asDiagonal() * p.R;
        } else {
          throw Error(ErrorCode::VariantMismatch, "feedback_jacobian: fixed random feedback carries no mapping");
        }
      },
      fb);
}

Mat uniform_fan_in(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  // Fill row by row so the draw order matches the row-major layout on disk.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

ForwardNet make_forward_net(const std::vector<Eigen::Index>& sizes, Activation hidden,
                            Activation output, std::mt19937_64& rng) {
  if (sizes.size() < 2) throw Error(ErrorCode::ShapeMismatch, "need at least input and output sizes");
  ForwardNet net;
  for (std::size_t k = 1; k < sizes.size(); ++k) {
    Layer l;
    l.W = uniform_fan_in(sizes[k], sizes[k - 1], rng);
    l.b = Vec::Zero(sizes[k]);
    l.act = (k + 1 == sizes.size()) ? output : hidden;
    net.layers.push_back(std::move(l));
  }
  return net;
}

FeedbackPathway make_feedback(FeedbackKind kind, const ForwardNet& net, std::mt19937_64& rng,
                              Eigen::Index rhl_hidden) {
  const int L = net.depth();
  const Eigen::Index nL = net.output_dim();
  if ((kind == FeedbackKind::DirectRHL || kind == FeedbackKind::DirectRHLRec) && rhl_hidden <= 0) {
    throw Error(ErrorCode::ValidationError, "random hidden feedback layer needs a positive width");
  }
  switch (kind) {
    case FeedbackKind::Layerwise: {
      LayerwiseFeedback fb;
      for (int i = 1; i < L; ++i) {
        fb.Q.push_back(uniform_fan_in(net.width(i), net.width(i + 1), rng));
        fb.c.push_back(Vec::Zero(net.width(i)));
      }
      return fb;
    }
    case FeedbackKind::DirectLinear: {
      DirectLinearFeedback fb;
      for (int i = 1; i < L; ++i) {
        fb.Q.push_back(uniform_fan_in(net.width(i), nL, rng));
        fb.c.push_back(Vec::Zero(net.width(i)));
      }
      return fb;
    }
    case FeedbackKind::DirectRHL: {
      DirectRHLFeedback fb;
      fb.R = uniform_fan_in(rhl_hidden, nL, rng);
      fb.d = uniform_fan_in(rhl_hidden, 1, rng).col(0) * (1.0 / std::sqrt(static_cast<double>(nL)));
      for (int i = 1; i < L; ++i) {
        fb.Q.push_back(uniform_fan_in(net.width(i), rhl_hidden, rng));
        fb.c.push_back(Vec::Zero(net.width(i)));
      }
      return fb;
    }
    case FeedbackKind::DirectRHLRec: {
      DirectRHLRecFeedback fb;
      fb.R = uniform_fan_in(rhl_hidden, nL, rng);
      fb.d = uniform_fan_in(rhl_hidden, 1, rng).col(0) * (1.0 / std::sqrt(static_cast<double>(nL)));
      for (int i = 1; i < L; ++i) {
        fb.Q.push_back(uniform_fan_in(net.width(i), rhl_hidden, rng));
        fb.S.push_back(uniform_fan_in(net.width(i), net.width(i), rng));
        fb.c.push_back(Vec::Zero(net.width(i)));
      }
      return fb;
    }
    case FeedbackKind::FixedRandomDirect: {
      FixedRandomDirect fb;
      for (int i = 1; i < L; ++i) fb.B.push_back(uniform_fan_in(net.width(i), nL, rng));
      return fb;
    }
  }
  throw Error(ErrorCode::VariantMismatch, "unknown feedback kind");
}

}  // namespace tpgrad
