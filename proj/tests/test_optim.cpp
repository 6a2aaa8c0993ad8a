#include <doctest.h>

#include <cmath>
#include <utility>

#include "test_util.hpp"
#include "tpgrad/optim.hpp"

using namespace tpgrad;
using tpgrad::testing::code_of;
using tpgrad::testing::gaussian;

namespace {

struct Scalar {
  Vec theta = Vec::Ones(1);
  Vec grad = Vec::Zero(1);
  std::vector<TensorRef> params() { return {tensor_ref("theta", theta)}; }
  std::vector<ConstTensorRef> grads() const { return {tensor_ref("theta", grad)}; }
};

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters alone") {
  Scalar s;
  s.theta << 0.7;
  AdamState st;
  st.cfg.lr = 0.1;
  adam_step(st, s.params(), s.grads());
  CHECK(s.theta(0) == 0.7);
  CHECK(st.t == 1);
}

TEST_CASE("adam: first step is a unit-signal step") {
  Scalar s;
  s.grad << 1.0;
  AdamState st;
  st.cfg.lr = 0.1;
  st.cfg.eps = 1e-12;
  adam_step(st, s.params(), s.grads());
  CHECK(s.theta(0) - 1.0 == doctest::Approx(-0.1).epsilon(1e-10));
}

TEST_CASE("adam: weight decay acts as a gradient") {
  Scalar s;
  AdamState st;
  st.cfg.lr = 0.01;
  st.cfg.weight_decay = 0.1;
  adam_step(st, s.params(), s.grads());
  CHECK(s.theta(0) - 1.0 == doctest::Approx(-0.01).epsilon(1e-6));

  // repeated decay shrinks a matrix
  std::mt19937_64 rng(1);
  Mat Q = gaussian(3, 4, rng);
  Mat G = Mat::Zero(3, 4);
  AdamState fb;
  fb.cfg.weight_decay = 1e-3;
  double prev = Q.norm();
  for (int k = 0; k < 5; ++k) {
    std::vector<TensorRef> p{tensor_ref("fb.Q1", Q)};
    std::vector<ConstTensorRef> g{tensor_ref("fb.Q1", std::as_const(G))};
    adam_step(fb, p, g);
    CHECK(Q.norm() < prev);
    prev = Q.norm();
  }
}

TEST_CASE("adam matches a hand-written recursion and replays bitwise") {
  std::mt19937_64 rng(2);
  const Mat start = gaussian(2, 3, rng);
  std::vector<Mat> grads;
  for (int k = 0; k < 6; ++k) grads.push_back(gaussian(2, 3, rng));
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.05;

  auto run = [&] {
    Mat W = start;
    AdamState st;
    st.cfg = cfg;
    for (const Mat& g : grads) {
      std::vector<TensorRef> p{tensor_ref("W", W)};
      std::vector<ConstTensorRef> gr{tensor_ref("W", std::as_const(g))};
      adam_step(st, p, gr);
    }
    return W;
  };
  const Mat a = run(), b = run();
  CHECK(a == b);

  Mat W = start, m = Mat::Zero(2, 3), v = Mat::Zero(2, 3);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const double t = static_cast<double>(k + 1);
    const Mat g = grads[k] + cfg.weight_decay * W;
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g.cwiseProduct(g);
    const Mat mh = m / (1 - std::pow(cfg.beta1, t));
    const Mat vh = v / (1 - std::pow(cfg.beta2, t));
    W -= cfg.lr * mh.cwiseQuotient((vh.cwiseSqrt().array() + cfg.eps).matrix());
  }
  CHECK((a - W).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("adam errors") {
  Scalar s;
  s.grad << std::nan("");
  AdamState st;
  CHECK(code_of([&] { adam_step(st, s.params(), s.grads()); }) == ErrorCode::NonFinite);
  Vec two = Vec::Zero(2);
  std::vector<ConstTensorRef> g{tensor_ref("theta", std::as_const(two))};
  CHECK(code_of([&] { adam_step(st, s.params(), g); }) == ErrorCode::ShapeMismatch);
  AdamConfig bad;
  bad.beta1 = 1.0;
  CHECK(code_of([&] { validate(bad); }) == ErrorCode::ValidationError);
}

TEST_CASE("sgd_step") {
  Vec th(3), g(3);
  th << 1, -2, 3;
  g.setZero();
  std::vector<TensorRef> p{tensor_ref("x", th)};
  sgd_step(0.5, p, std::vector<ConstTensorRef>{tensor_ref("x", std::as_const(g))});
  CHECK(th == Vec((Vec(3) << 1, -2, 3).finished()));
  g = th;
  sgd_step(1.0, p, std::vector<ConstTensorRef>{tensor_ref("x", std::as_const(g))});
  CHECK(th.isZero(0.0));
  th << 1, -2, 3;
  g << 0.5, 0.25, -1;
  sgd_step(0.1, p, std::vector<ConstTensorRef>{tensor_ref("x", std::as_const(g))});
  CHECK(th(0) == doctest::Approx(0.95));
  CHECK(th(1) == doctest::Approx(-2.025));
  CHECK(th(2) == doctest::Approx(3.1));
  g(1) = INFINITY;
  CHECK(code_of([&] { sgd_step(0.1, p, std::vector<ConstTensorRef>{tensor_ref("x", std::as_const(g))}); }) == ErrorCode::NonFinite);
}

TEST_CASE("parameter groups are disjoint and skip fixed tensors") {
  std::mt19937_64 rng(3);
  ForwardNet net = make_forward_net({4, 5, 3, 2}, Activation::tanh(), Activation::linear(), rng);
  FeedbackPathway fb = make_feedback(FeedbackKind::DirectRHLRec, net, rng, 6);
  const ParamGroup fwd = forward_group(net);
  const ParamGroup back = feedback_group(fb);
  CHECK(fwd.label == GroupLabel::Forward);
  CHECK(back.label == GroupLabel::Feedback);
  CHECK(fwd.params.size() == 6);
  CHECK(forward_group(net, true).params.size() == 2);
  const auto& p = std::get<DirectRHLRecFeedback>(fb);
  for (const auto& t : back.params) {
    CHECK(t.data != p.R.data());
    CHECK(t.data != p.d.data());
    for (const auto& f : fwd.params) CHECK(t.data != f.data);
  }
  CHECK(back.params.size() == 6);  // Q, S, c for two hidden layers

  FeedbackPathway dfa = make_feedback(FeedbackKind::FixedRandomDirect, net, rng);
  CHECK(feedback_group(dfa).params.empty());
}
