#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tpgrad/network.hpp"

using namespace tpgrad;
using tpgrad::testing::code_of;
using tpgrad::testing::gaussian;
using tpgrad::testing::gaussian_vec;

namespace {

ForwardNet random_net(const std::vector<Eigen::Index>& sizes, std::mt19937_64& rng, Activation hidden = Activation::tanh(),
                      Activation out = Activation::tanh()) {
  ForwardNet net = make_forward_net(sizes, hidden, out, rng);
  for (auto& l : net.layers) {
    l.W *= 1.5;
    l.b = gaussian_vec(l.b.size(), rng, 0.3);
  }
  return net;
}

}  // namespace

TEST_CASE("forward_pass trivial nets") {
  ForwardNet zero;
  for (int k = 0; k < 3; ++k) zero.layers.push_back({Mat::Zero(3, 3), Vec::Zero(3), Activation::tanh()});
  std::mt19937_64 rng(1);
  const Activations a = forward_pass(zero, gaussian(3, 2, rng));
  for (int i = 1; i <= 3; ++i) CHECK(a.h[i].isZero(0.0));

  ForwardNet id;
  id.layers.push_back({Mat::Identity(4, 4), Vec::Zero(4), Activation::linear()});
  const Mat x = gaussian(4, 3, rng);
  CHECK(forward_pass(id, x).h[1] == x);

  CHECK(code_of([&] { forward_pass(id, gaussian(3, 1, rng)); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("forward_pass matches a hand evaluation on a 3-vector") {
  ForwardNet net;
  Mat W1(2, 3);
  W1 << 0.5, -1.0, 0.25, 0.0, 2.0, -0.5;
  Vec b1(2);
  b1 << 0.1, -0.2;
  Mat W2(1, 2);
  W2 << 1.5, -0.75;
  Vec b2(1);
  b2 << 0.05;
  net.layers.push_back({W1, b1, Activation::tanh()});
  net.layers.push_back({W2, b2, Activation::tanh()});
  Vec x(3);
  x << 1.0, 0.5, -2.0;
  // layer 1: [0.5 - 0.5 - 0.5 + 0.1, 0 + 1 + 1 - 0.2] = [-0.4, 1.8]
  const double h11 = std::tanh(-0.4), h12 = std::tanh(1.8);
  const double out = std::tanh(1.5 * h11 - 0.75 * h12 + 0.05);
  const Activations a = forward_pass(net, x);
  CHECK(a.a[1](0, 0) == doctest::Approx(-0.4).epsilon(1e-15));
  CHECK(a.a[1](1, 0) == doctest::Approx(1.8).epsilon(1e-15));
  CHECK(std::abs(a.h[2](0, 0) - out) < 1e-15);
}

TEST_CASE("layer_jacobian") {
  std::mt19937_64 rng(2);
  ForwardNet lin = make_forward_net({3, 4, 2}, Activation::linear(), Activation::linear(), rng);
  const Activations al = forward_pass(lin, gaussian(3, 1, rng));
  CHECK(layer_jacobian(lin, al, 1) == lin.layer(1).W);
  CHECK(layer_jacobian(lin, al, 2) == lin.layer(2).W);

  ForwardNet t = make_forward_net({3, 4}, Activation::tanh(), Activation::tanh(), rng);
  const Activations at = forward_pass(t, Mat::Zero(3, 1));
  CHECK(layer_jacobian(t, at, 1).isApprox(t.layer(1).W, 1e-15));

  for (int trial = 0; trial < 5; ++trial) {
    ForwardNet net = random_net({5, 6, 4, 3}, rng);
    const Mat x = gaussian(5, 2, rng);
    const Activations acts = forward_pass(net, x);
    for (int i = 1; i <= 3; ++i) {
      for (Eigen::Index s = 0; s < 2; ++s) {
        const Mat fd = central_finite_diff_jacobian(
            [&](const Vec& h) {
              Mat out = net.layer(i).W * h + net.layer(i).b;
              return Vec(activate(net.layer(i).act, out).col(0));
            },
            Vec(acts.h[i - 1].col(s)));
        CHECK(rel_error(layer_jacobian(net, acts, i, s), fd) < 1e-6);
      }
    }
  }
  const Activations acts = forward_pass(lin, gaussian(3, 1, rng));
  CHECK(code_of([&] { layer_jacobian(lin, acts, 0); }) == ErrorCode::IndexOutOfRange);
  CHECK(code_of([&] { layer_jacobian(lin, acts, 3); }) == ErrorCode::IndexOutOfRange);
}

TEST_CASE("path_jacobian") {
  std::mt19937_64 rng(3);
  ForwardNet net = random_net({4, 5, 5, 3, 2}, rng);
  const Activations acts = forward_pass(net, gaussian(4, 3, rng));
  const int L = net.depth();
  CHECK(path_jacobian(net, acts, L - 1, 1).isApprox(layer_jacobian(net, acts, L, 1), 1e-15));
  CHECK(path_jacobian(net, acts, L) == Mat::Identity(2, 2));

  ForwardNet id;
  for (int k = 0; k < 3; ++k) id.layers.push_back({Mat::Identity(3, 3), Vec::Zero(3), Activation::linear()});
  const Activations ai = forward_pass(id, gaussian(3, 1, rng));
  CHECK(path_jacobian(id, ai, 0) == Mat::Identity(3, 3));

  for (int i = 0; i < L; ++i) {
    const Mat fd = central_finite_diff_jacobian([&](const Vec& h) { return Vec(forward_from(net, i, h).col(0)); },
                                                Vec(acts.h[i].col(2)));
    CHECK(rel_error(path_jacobian(net, acts, i, 2), fd) < 1e-6);
  }

  // associativity: left-to-right and right-to-left products agree
  Mat left = layer_jacobian(net, acts, L, 0);
  for (int k = L - 1; k >= 1; --k) left = left * layer_jacobian(net, acts, k, 0);
  Mat right = layer_jacobian(net, acts, 1, 0);
  for (int k = 2; k <= L; ++k) right = layer_jacobian(net, acts, k, 0) * right;
  CHECK((left - right).norm() <= 1e-12 * left.norm());
  CHECK((path_jacobian(net, acts, 0, 0) - left).norm() <= 1e-12 * left.norm());
}

TEST_CASE("leaky tanh layers are exactly invertible") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Layer l{gaussian(5, 5, rng) + 3.0 * Mat::Identity(5, 5), gaussian_vec(5, rng, 0.2), Activation::leaky_tanh(0.1)};
    const Mat h = gaussian(5, 4, rng, 3.0);
    Mat a = l.W * h;
    a.colwise() += l.b;
    const Mat up = activate(l.act, a);
    CHECK((layer_inverse(l, up) - h).cwiseAbs().maxCoeff() < 1e-10);
  }
  const Mat y = gaussian(3, 3, rng, 10.0);
  CHECK((activate(Activation::leaky_tanh(0.3), activation_inverse(Activation::leaky_tanh(0.3), y)) - y)
            .cwiseAbs()
            .maxCoeff() < 1e-10);
  Mat outside(1, 1);
  outside << 1.5;
  CHECK(code_of([&] { activation_inverse(Activation::tanh(), outside); }) == ErrorCode::NonFinite);
  CHECK(code_of([&] { activation_inverse(Activation::relu(), outside); }) == ErrorCode::VariantMismatch);
}

TEST_CASE("feedback_apply examples") {
  std::mt19937_64 rng(5);
  const ForwardNet net = make_forward_net({3, 4, 4, 2}, Activation::tanh(), Activation::linear(), rng);

  DirectLinearFeedback dl;
  dl.Q = {Mat::Zero(4, 2), Mat::Zero(4, 2)};
  dl.c = {Vec::Zero(4), Vec::Zero(4)};
  CHECK(feedback_apply(dl, 1, gaussian(2, 3, rng)).isZero(0.0));

  LayerwiseFeedback lw;
  lw.act = Activation::linear();
  lw.Q = {Mat::Identity(4, 4), Mat::Identity(4, 2)};  // identity truncated to n_i x n_{i+1}
  lw.c = {Vec::Zero(4), Vec::Zero(4)};
  const Mat x = gaussian(4, 2, rng);
  CHECK(feedback_apply(lw, 1, x) == x);

  // DirectRHL on a 2-vector with a 4-unit random hidden layer
  DirectRHLFeedback rhl;
  rhl.R = gaussian(4, 2, rng);
  rhl.d = gaussian_vec(4, rng);
  rhl.Q = {gaussian(3, 4, rng)};
  rhl.c = {gaussian_vec(3, rng)};
  Vec hL(2);
  hL << 0.3, -0.7;
  Vec expect(3);
  for (int r = 0; r < 3; ++r) {
    double s = rhl.c[0](r);
    for (int k = 0; k < 4; ++k) s += rhl.Q[0](r, k) * std::tanh(rhl.R(k, 0) * 0.3 - rhl.R(k, 1) * 0.7 + rhl.d(k));
    expect(r) = std::tanh(s);
  }
  CHECK((feedback_apply(rhl, 1, hL) - expect).cwiseAbs().maxCoeff() < 1e-15);

  CHECK(code_of([&] { feedback_apply(dl, 1, gaussian(3, 1, rng)); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { feedback_apply(dl, 3, gaussian(2, 1, rng)); }) == ErrorCode::IndexOutOfRange);
}

TEST_CASE("feedback_jacobian matches finite differences for every variant") {
  std::mt19937_64 rng(6);
  const ForwardNet net = make_forward_net({3, 5, 4, 3}, Activation::tanh(), Activation::linear(), rng);
  for (FeedbackKind kind : {FeedbackKind::Layerwise, FeedbackKind::DirectLinear, FeedbackKind::DirectRHL,
                            FeedbackKind::DirectRHLRec}) {
    const FeedbackPathway fb = make_feedback(kind, net, rng, 6);
    for (int i = 1; i <= 2; ++i) {
      const Eigen::Index in = kind == FeedbackKind::Layerwise ? net.width(i + 1) : net.width(3);
      const Vec input = gaussian_vec(in, rng);
      const Vec rec = gaussian_vec(net.width(i), rng);
      const Mat fd = central_finite_diff_jacobian(
          [&](const Vec& v) { return Vec(feedback_apply(fb, i, v, rec).col(0)); }, input);
      CHECK(rel_error(feedback_jacobian(fb, i, input, rec), fd) < 1e-6);
    }
  }
}

TEST_CASE("make_feedback shapes and fixed parts") {
  std::mt19937_64 rng(7);
  const ForwardNet net = make_forward_net({6, 5, 4, 3}, Activation::tanh(), Activation::linear(), rng);
  const auto lw = std::get<LayerwiseFeedback>(make_feedback(FeedbackKind::Layerwise, net, rng));
  REQUIRE(lw.Q.size() == 2);
  CHECK(lw.Q[0].rows() == 5);
  CHECK(lw.Q[0].cols() == 4);
  CHECK(lw.Q[1].rows() == 4);
  CHECK(lw.Q[1].cols() == 3);
  CHECK(lw.c[0].isZero(0.0));

  const auto rhl = std::get<DirectRHLRecFeedback>(make_feedback(FeedbackKind::DirectRHLRec, net, rng, 7));
  CHECK(rhl.R.rows() == 7);
  CHECK(rhl.R.cols() == 3);
  CHECK(rhl.S[1].rows() == 4);
  CHECK(rhl.S[1].cols() == 4);
  const double bound = 1.0 / std::sqrt(3.0);
  CHECK(rhl.R.cwiseAbs().maxCoeff() <= bound);

  const auto dfa = std::get<FixedRandomDirect>(make_feedback(FeedbackKind::FixedRandomDirect, net, rng));
  CHECK(dfa.B[0].rows() == 5);
  CHECK(dfa.B[0].cols() == 3);
  CHECK(code_of([&] { make_feedback(FeedbackKind::DirectRHL, net, rng, 0); }) == ErrorCode::ValidationError);
  CHECK(to_string(FeedbackKind::DirectRHLRec) == "direct_rhl_rec");
  CHECK(parse_feedback_kind("direct_linear") == FeedbackKind::DirectLinear);
}

TEST_CASE("initialization law") {
  std::mt19937_64 rng(8);
  const ForwardNet net = make_forward_net({100, 50, 10}, Activation::tanh(), Activation::linear(), rng);
  CHECK(net.layer(1).W.cwiseAbs().maxCoeff() <= 0.1);
  CHECK(net.layer(1).b.isZero(0.0));
  // uniform(-a, a) has variance a^2 / 3
  const double var = net.layer(1).W.squaredNorm() / static_cast<double>(net.layer(1).W.size());
  CHECK(var == doctest::Approx(0.01 / 3.0).epsilon(0.05));
  CHECK(code_of([] {
          ForwardNet bad;
          bad.layers.push_back({Mat::Zero(3, 2), Vec::Zero(3), Activation::tanh()});
          bad.layers.push_back({Mat::Zero(2, 4), Vec::Zero(2), Activation::tanh()});
          validate(bad);
        }) == ErrorCode::ShapeMismatch);
}
