#include <doctest.h>

#include <random>

#include "tpgrad/credit.hpp"
#include "tpgrad/optim.hpp"

using namespace tpgrad;

namespace {

Mat gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST_CASE("damped_pinv small cases") {
  CHECK(damped_pinv(Mat::Identity(2, 2), 0.0).isApprox(Mat::Identity(2, 2), 1e-15));

  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 2.0;
  Mat expect = Mat::Zero(2, 2);
  expect(0, 0) = 0.5;
  CHECK((damped_pinv(d, 0.0) - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("damped_pinv against an SVD solve of the damped normal equations") {
  Mat J(2, 3);
  J << 1, 0, 1, 0, 1, 1;
  const double lambda = 0.5;
  Mat A = J * J.transpose() + lambda * Mat::Identity(2, 2);
  Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat Ainv = svd.matrixV() * svd.singularValues().cwiseInverse().asDiagonal() * svd.matrixU().transpose();
  // columns x_k solve A x = e_k, so X = A^{-1}; the damped pinv is J^T X
  const Mat oracle = J.transpose() * Ainv;
  CHECK((damped_pinv(J, lambda) - oracle).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("damped_pinv normal-equation residual and Penrose conditions") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index m = 1 + trial * 2, n = m + 5 + trial * 3;
    const Mat J = gaussian(m, n, rng);
    for (double lambda : {1e-3, 0.1, 2.0}) {
      const Mat X = damped_pinv(J, lambda);
      const Mat lhs = (J * J.transpose() + lambda * Mat::Identity(m, m)) * X.transpose();
      CHECK((lhs - J).norm() < 1e-10 * J.norm());
    }
    const Mat P = damped_pinv(J, 0.0);
    CHECK((J * P * J - J).norm() < 1e-8 * J.norm());
    CHECK((P * J * P - P).norm() < 1e-8 * P.norm());
    CHECK(((J * P).transpose() - J * P).norm() < 1e-8 * (J * P).norm());
    CHECK(((P * J).transpose() - P * J).norm() < 1e-8 * (P * J).norm());
  }
}

TEST_CASE("damped_pinv errors") {
  Mat bad = Mat::Identity(2, 2);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(damped_pinv(bad, 0.1), Error);
  try {
    damped_pinv(bad, 0.1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFinite);
  }

  Mat rank1(2, 3);
  rank1 << 1, 2, 3, 2, 4, 6;
  try {
    damped_pinv(rank1, 0.0, PinvOptions{false});
    FAIL("expected Singular");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Singular);
  }
  // the SVD fallback handles the same input
  const Mat P = damped_pinv(rank1, 0.0);
  CHECK((rank1 * P * rank1 - rank1).norm() < 1e-10);
}

TEST_CASE("frobenius_angle") {
  std::mt19937_64 rng(5);
  const Mat A = gaussian(3, 4, rng), B = gaussian(3, 4, rng);
  CHECK(frobenius_angle(A, A) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(frobenius_angle(A, Mat(-A)) == doctest::Approx(180.0));
  Mat e11 = Mat::Zero(2, 2), e22 = Mat::Zero(2, 2);
  e11(0, 0) = 1;
  e22(1, 1) = 1;
  CHECK(frobenius_angle(e11, e22) == doctest::Approx(90.0));
  CHECK(frobenius_angle(A, B) == doctest::Approx(frobenius_angle(B, A)).epsilon(1e-14));
  CHECK(frobenius_angle(Mat(3.0 * A), Mat(0.2 * B)) == doctest::Approx(frobenius_angle(A, B)).epsilon(1e-12));
  CHECK_THROWS_AS(frobenius_angle(A, Mat(Mat::Zero(3, 4))), Error);
  CHECK_THROWS_AS(frobenius_angle(A, Mat(Mat::Zero(4, 3))), Error);
}

TEST_CASE("central_finite_diff") {
  Vec x(2);
  x << 1, 2;
  const Vec g = central_finite_diff([](const Vec& v) { return v.squaredNorm(); }, x, 1e-5);
  CHECK(std::abs(g(0) - 2.0) < 1e-8);
  CHECK(std::abs(g(1) - 4.0) < 1e-8);
  CHECK(central_finite_diff([](const Vec&) { return 3.5; }, x).isZero(0.0));

  // a general quadratic is exact up to round-off
  std::mt19937_64 rng(11);
  const Mat A = gaussian(4, 4, rng);
  const Vec b = gaussian(4, 1, rng).col(0), y = gaussian(4, 1, rng).col(0);
  auto q = [&](const Vec& v) { return v.dot(A * v) + b.dot(v) + 0.7; };
  const Vec exact = (A + A.transpose()) * y + b;
  CHECK((central_finite_diff(q, y) - exact).cwiseAbs().maxCoeff() < 1e-8);

  CHECK_THROWS_AS(central_finite_diff([](const Vec& v) { return v(0) > 1.0 ? INFINITY : 0.0; }, x), Error);
}

TEST_CASE("central_finite_diff against the DRL gradient of a 2-layer net") {
  std::mt19937_64 rng(21);
  const ForwardNet net = make_forward_net({3, 4, 2}, Activation::tanh(), Activation::linear(), rng);
  FeedbackPathway fb = make_feedback(FeedbackKind::DirectLinear, net, rng);
  const Activations acts = forward_pass(net, gaussian(3, 2, rng));
  const NoiseSpec noise{0.05, 1, 9};
  const FeedbackLayerGrad g = drl_grad(net, fb, acts, 1, noise, 4);
  // one feedback weight, Q_1(2, 1)
  auto& Q = std::get<DirectLinearFeedback>(fb).Q[0];
  Vec w(1);
  w << Q(2, 1);
  const Vec fd = central_finite_diff(
      [&](const Vec& v) {
        FeedbackPathway probe = fb;
        std::get<DirectLinearFeedback>(probe).Q[0](2, 1) = v(0);
        return drl_loss(net, probe, acts, 1, noise, 4);
      },
      w);
  CHECK(std::abs(fd(0) - g.dQ(2, 1)) / std::abs(g.dQ(2, 1)) < 1e-6);
}

TEST_CASE("row-major flattening") {
  Mat M(2, 3);
  M << 1, 2, 3, 4, 5, 6;
  const Vec v = flatten_rows(M);
  for (int k = 0; k < 6; ++k) CHECK(v(k) == k + 1);
  CHECK(unflatten_rows(v, 2, 3) == M);
  CHECK_THROWS_AS(unflatten_rows(v, 4, 2), Error);
}
