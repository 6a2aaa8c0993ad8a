#include "tpgrad/theory_checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>

#include "tpgrad/experiment.hpp"

namespace tpgrad {

namespace {

using Clock = std::chrono::steady_clock;

Vec gather(const std::vector<TensorRef>& params) {
  Eigen::Index n = 0;
  for (const auto& p : params) n += p.size;
  Vec out(n);
  Eigen::Index k = 0;
  for (const auto& p : params) {
    out.segment(k, p.size) = Eigen::Map<const Vec>(p.data, p.size);
    k += p.size;
  }
  return out;
}

Vec gather(const std::vector<ConstTensorRef>& grads) {
  Eigen::Index n = 0;
  for (const auto& g : grads) n += g.size;
  Vec out(n);
  Eigen::Index k = 0;
  for (const auto& g : grads) {
    out.segment(k, g.size) = Eigen::Map<const Vec>(g.data, g.size);
    k += g.size;
  }
  return out;
}

void scatter(const std::vector<TensorRef>& params, const Vec& flat) {
  Eigen::Index k = 0;
  for (const auto& p : params) {
    Eigen::Map<Vec>(p.data, p.size) = flat.segment(k, p.size);
    k += p.size;
  }
}

double rel_vec(const Vec& a, const Vec& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / scale;
}

Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
  return m;
}

void randomize_biases(FeedbackPathway& fb, std::mt19937_64& rng) {
  std::visit(
      [&](auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (!std::is_same_v<T, FixedRandomDirect>) {
          for (auto& c : p.c) c = gaussian(c.size(), 1, rng, 0.2).col(0);
        }
      },
      fb);
}

// Central differences of `loss` over the trainable parameters of g_i.
Vec fd_feedback(const FeedbackPathway& fb, int i, const std::function<double(const FeedbackPathway&)>& loss) {
  FeedbackPathway probe = fb;
  const ParamGroup group = feedback_layer_group(probe, i);
  const Vec theta = gather(group.params);
  return central_finite_diff(
      [&](const Vec& x) {
        scatter(group.params, x);
        return loss(probe);
      },
      theta);
}

Vec fd_forward(const ForwardNet& net, const std::function<double(const ForwardNet&)>& loss) {
  ForwardNet probe = net;
  const ParamGroup group = forward_group(probe);
  const Vec theta = gather(group.params);
  return central_finite_diff(
      [&](const Vec& x) {
        scatter(group.params, x);
        return loss(probe);
      },
      theta);
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += std::log10(x[k]);
    my += std::log10(y[k]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = std::log10(x[k]) - mx;
    sxy += dx * (std::log10(y[k]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(3);
  os << x;
  return os.str();
}

template <typename F>
CheckResult timed(const std::string& name, F&& body) {
  const auto t0 = Clock::now();
  CheckResult r;
  r.name = name;
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

Mat orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Mat> qr(gaussian(n, n, rng));
  return qr.householderQ() * Mat::Identity(n, n);
}

ForwardNet linear_net(const std::vector<Eigen::Index>& sizes, std::mt19937_64& rng) {
  return make_forward_net(sizes, Activation::linear(), Activation::linear(), rng);
}

// Trains feedback parameters on a fixed batch with plain gradient steps and
// Polyak averaging after the first `burn_in` fraction of the run. `grad_fn(fb, i, iteration)`
// returns the loss gradient for g_i. With `only_layer` > 0 the other layers
// stay put.
void train_feedback(FeedbackPathway& fb, int iterations, double lr, double weight_decay,
                    const std::function<FeedbackLayerGrad(const FeedbackPathway&, int, std::uint64_t)>& grad_fn,
                    int only_layer = 0, double burn_in = 0.5) {
  const int n = feedback_layers(fb);
  FeedbackPathway avg = fb;
  int averaged = 0;
  FeedbackGrads frozen;
  for (int i = 1; i <= n; ++i) {
    FeedbackLayerGrad z = grad_fn(fb, i, 0);
    z.dQ.setZero();
    z.dc.setZero();
    z.dS.setZero();
    frozen.push_back(z);
  }
  for (int t = 0; t < iterations; ++t) {
    FeedbackGrads grads;
    for (int i = 1; i <= n; ++i) {
      grads.push_back(only_layer == 0 || i == only_layer ? grad_fn(fb, i, static_cast<std::uint64_t>(t))
                                                          : frozen[static_cast<std::size_t>(i - 1)]);
    }
    ParamGroup group = feedback_group(fb);
    std::vector<ConstTensorRef> refs = feedback_grad_refs(grads, fb);
    // Coupled weight decay, as in the optimizer.
    std::vector<Vec> decayed;
    decayed.reserve(refs.size());
    for (std::size_t k = 0; k < refs.size(); ++k) {
      decayed.push_back(Eigen::Map<const Vec>(refs[k].data, refs[k].size) +
                        weight_decay * Eigen::Map<const Vec>(group.params[k].data, group.params[k].size));
      refs[k].data = decayed.back().data();
    }
    if (only_layer > 0) {
      // Keep decay off the frozen layers too.
      const ParamGroup mine = feedback_layer_group(fb, only_layer);
      for (std::size_t k = 0; k < refs.size(); ++k) {
        const bool trained = std::any_of(mine.params.begin(), mine.params.end(),
                                         [&](const TensorRef& p) { return p.data == group.params[k].data; });
        if (!trained) decayed[k].setZero();
      }
    }
    sgd_step(lr, group.params, refs);
    if (t >= static_cast<int>(burn_in * iterations)) {
      ParamGroup ag = feedback_group(avg);
      const Vec cur = gather(group.params);
      const Vec run = gather(ag.params);
      scatter(ag.params, averaged == 0 ? cur : Vec(run + (cur - run) / static_cast<double>(averaged + 1)));
      ++averaged;
    }
  }
  fb = avg;
}

}  // namespace

CheckResult check_gradients(std::uint64_t seed, int instances) {
  return timed("gradient correctness", [&](CheckResult& r) {
    double worst = 0.0;
    std::string worst_what;
    int checks = 0;
    auto record = [&](const std::string& what, const Vec& analytic, const Vec& numeric) {
      const double e = rel_vec(analytic, numeric);
      ++checks;
      if (e > worst || !std::isfinite(e)) {
        worst = std::isfinite(e) ? e : INFINITY;
        worst_what = what;
      }
    };
    for (int k = 0; k < instances; ++k) {
      std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(k));
      const int L = 2 + k % 5;
      std::uniform_int_distribution<int> width(2, 8);
      std::vector<Eigen::Index> sizes;
      for (int i = 0; i <= L; ++i) sizes.push_back(width(rng));
      const Activation out_act = k % 2 ? Activation::tanh() : Activation::linear();
      ForwardNet net = make_forward_net(sizes, Activation::tanh(), out_act, rng);
      for (auto& l : net.layers) l.b = gaussian(l.b.size(), 1, rng, 0.2).col(0);
      const Eigen::Index batch = 3;
      const Mat x = gaussian(sizes.front(), batch, rng);
      const Activations acts = forward_pass(net, x);
      const std::string tag = "instance " + std::to_string(k) + " ";

      // Local forward losses with random targets.
      std::vector<Mat> targets(acts.h.size());
      for (int i = 1; i <= L; ++i) targets[i] = acts.h[i] + gaussian(acts.h[i].rows(), batch, rng, 0.1);
      const TargetBundle bundle = make_bundle(acts, targets);
      const ForwardGrads local = forward_update(net, acts, bundle);
      for (int i = 1; i <= L; ++i) {
        ForwardGrads only = zero_grads(net);
        only.dW[i - 1] = local.dW[i - 1];
        only.db[i - 1] = local.db[i - 1];
        const Vec numeric = fd_forward(net, [&](const ForwardNet& n) { return local_loss(n, acts, bundle, i); });
        record(tag + "local loss layer " + std::to_string(i), gather(forward_grad_refs(only)), numeric);
      }

      // Output loss through backpropagation.
      const LossKind kind = k % 3 == 0 ? LossKind::SoftmaxCrossEntropy : LossKind::L2;
      Mat labels = gaussian(sizes.back(), batch, rng);
      if (kind == LossKind::SoftmaxCrossEntropy) {
        labels.setZero();
        for (Eigen::Index b = 0; b < batch; ++b) labels((b + k) % sizes.back(), b) = 1.0;
      }
      const LossEval le = output_loss_and_error(kind, acts.h.back(), labels);
      const ForwardGrads bp = bp_update(net, acts, le.error);
      record(tag + "bp", gather(forward_grad_refs(bp)), fd_forward(net, [&](const ForwardNet& n) {
               return output_loss_and_error(kind, forward_from(n, 0, x), labels).loss;
             }));

      // Feedback losses, noise replayed through the fixed iteration index.
      const NoiseSpec noise{0.1, 2, seed + static_cast<std::uint64_t>(k)};
      const std::uint64_t it = 7;
      for (FeedbackKind fk : {FeedbackKind::Layerwise, FeedbackKind::DirectLinear, FeedbackKind::DirectRHL,
                              FeedbackKind::DirectRHLRec}) {
        FeedbackPathway fb = make_feedback(fk, net, rng, 5);
        randomize_biases(fb, rng);
        for (int i = 1; i < L; ++i) {
          const std::string where = tag + to_string(fk) + " layer " + std::to_string(i);
          const FeedbackLayerGrad g = drl_grad(net, fb, acts, i, noise, it);
          record(where + " drl", gather(feedback_layer_grad_refs(g, fb, i)),
                 fd_feedback(fb, i, [&](const FeedbackPathway& p) { return drl_loss(net, p, acts, i, noise, it); }));
          if (fk == FeedbackKind::Layerwise) {
            const FeedbackLayerGrad lg = layerwise_recon_grad(net, fb, acts, i, noise, it);
            record(where + " layerwise", gather(feedback_layer_grad_refs(lg, fb, i)),
                   fd_feedback(fb, i, [&](const FeedbackPathway& p) {
                     return layerwise_recon_loss(net, p, acts, i, noise, it);
                   }));
          }
          if (fk == FeedbackKind::DirectLinear) {
            const FeedbackLayerGrad cg = control_recon_grad(net, fb, acts, i, noise, it);
            record(where + " control", gather(feedback_layer_grad_refs(cg, fb, i)),
                   fd_feedback(fb, i, [&](const FeedbackPathway& p) {
                     return control_recon_loss(net, p, acts, i, noise, it);
                   }));
          }
        }
      }
    }
    r.passed = worst < 1e-6;
    r.detail = std::to_string(checks) + " gradients over " + std::to_string(instances) +
               " nets, worst rel. err " + fmt(worst) + " (" + worst_what + ")";
  });
}

CheckResult check_taylor_order(std::uint64_t seed) {
  return timed("taylor order of target updates", [&](CheckResult& r) {
    const std::vector<double> etas{1e-2, 1e-3, 1e-4};
    std::vector<double> slopes;
    std::mt19937_64 rng(seed + 17);

    // Invertible net: square well-conditioned weights, leaky tanh everywhere.
    ForwardNet inv;
    for (int k = 0; k < 3; ++k) {
      Layer l;
      l.W = 1.2 * orthogonal(4, rng);
      l.b = gaussian(4, 1, rng, 0.1).col(0);
      l.act = Activation::leaky_tanh(0.1);
      inv.layers.push_back(l);
    }
    const Mat x = gaussian(4, 1, rng);
    const Activations acts = forward_pass(inv, x);
    const Mat label = gaussian(4, 1, rng);
    const Mat e = output_loss_and_error(LossKind::L2, acts.h.back(), label).error;
    for (int i = 1; i <= 2; ++i) {
      std::vector<double> errs;
      const Vec reference_dir = -(path_jacobian(inv, acts, i).partialPivLu().solve(Vec(e.col(0))));
      for (double eta : etas) {
        const TargetBundle b = propagate_difference(acts, output_target(acts.h.back(), e, eta),
                                                    [&](int k, const Mat& above) {
                                                      return layer_inverse(inv.layer(k + 1), above);
                                                    });
        errs.push_back((Vec(b.deltas[i].col(0)) - eta * reference_dir).norm());
      }
      slopes.push_back(slope(etas, errs));
    }

    // DTP net with arbitrary smooth layerwise feedback.
    ForwardNet net = make_forward_net({6, 5, 4, 3}, Activation::tanh(), Activation::linear(), rng);
    for (auto& l : net.layers) l.W *= 1.5;
    FeedbackPathway fb = make_feedback(FeedbackKind::Layerwise, net, rng);
    randomize_biases(fb, rng);
    const Mat x2 = gaussian(6, 1, rng);
    const Activations a2 = forward_pass(net, x2);
    const Mat e2 = output_loss_and_error(LossKind::L2, a2.h.back(), gaussian(3, 1, rng)).error;
    for (int i = 1; i <= 2; ++i) {
      Vec dir = e2.col(0);
      for (int k = 2; k >= i; --k) dir = feedback_jacobian(fb, k, Vec(a2.h[k + 1].col(0))) * dir;
      std::vector<double> errs;
      for (double eta : etas) {
        const TargetBundle b = propagate_dtp(net, fb, a2, output_target(a2.h.back(), e2, eta));
        errs.push_back((Vec(b.deltas[i].col(0)) + eta * dir).norm());
      }
      slopes.push_back(slope(etas, errs));
    }
    r.passed = true;
    std::string s;
    for (double v : slopes) {
      r.passed = r.passed && std::abs(v - 2.0) <= 0.2;
      s += (s.empty() ? "" : ", ") + fmt(v);
    }
    r.detail = "slopes [inverse net layers 1-2, DTP net layers 1-2] = " + s + " (need 2.0 +/- 0.2)";
  });
}

CheckResult check_drl_fixed_point(std::uint64_t seed) {
  return timed("DRL fixed point is the damped pseudo-inverse", [&](CheckResult& r) {
    std::mt19937_64 rng(seed + 29);
    ForwardNet net = make_forward_net({4, 3, 3, 2}, Activation::tanh(), Activation::linear(), rng);
    for (auto& l : net.layers) l.W *= 1.5;
    const Mat x = gaussian(4, 1, rng);
    const Activations acts = forward_pass(net, x);
    FeedbackPathway fb = make_feedback(FeedbackKind::DirectLinear, net, rng);
    const double wd = 0.02;
    const double lambda = wd / 2.0;  // coupled decay on the expected loss ||QJ - I||^2
    const NoiseSpec noise{1e-3, 2048, seed};
    const int layer = 1;
    const Mat J = path_jacobian(net, acts, layer);
    const Mat target = damped_pinv(J, lambda);
    Eigen::JacobiSVD<Mat> svd(J);
    const double smax = svd.singularValues()(0);
    const double lr = 0.5 / (smax * smax + lambda);
    train_feedback(
        fb, 5000, lr, wd,
        [&](const FeedbackPathway& p, int i, std::uint64_t t) { return drl_grad(net, p, acts, i, noise, t); }, layer,
        0.2);
    const Mat& Q = std::get<DirectLinearFeedback>(fb).Q[layer - 1];
    const double angle = frobenius_angle(Q, target);
    const double rel = (Q - target).norm() / target.norm();
    const double undamped_gap = (pinv(J) - target).norm() / target.norm();
    r.passed = angle < 1.0 && rel < 1e-3;
    r.detail = "angle " + fmt(angle) + " deg (< 1), rel. Frobenius error " + fmt(rel) + " (< 1e-3), lambda = wd/2 = " +
               fmt(lambda) + " (undamped pinv is " + fmt(undamped_gap) + " away)";
  });
}

CheckResult check_gnt_direction_and_nullspace(std::uint64_t seed) {
  return timed("GNT output direction and nullspace ratios", [&](CheckResult& r) {
    std::mt19937_64 rng(seed + 41);
    ForwardNet net = linear_net({10, 8, 6, 4, 2}, rng);
    const int L = net.depth();
    const Mat x = gaussian(10, 1, rng);
    const Mat label = gaussian(2, 1, rng);
    const Activations acts = forward_pass(net, x);
    const Mat e = output_loss_and_error(LossKind::L2, acts.h.back(), label).error;
    const double eta = 0.1;

    // (a) output change under a tiny GNT step
    const TargetBundle gnt = gnt_target(net, acts, e, eta, 0.0);
    const ForwardGrads g = gnt_weight_update(net, acts, gnt);
    ForwardNet stepped = net;
    ParamGroup group = forward_group(stepped);
    sgd_step(1e-7, group.params, forward_grad_refs(g));
    const Mat dh = forward_from(stepped, 0, x) - acts.h.back();
    const double out_angle = frobenius_angle(dh, Mat(-e));

    // (b) GNT nullspace ratio, every layer
    double gnt_ratio = 0.0;
    for (int i = 1; i <= L; ++i) gnt_ratio = std::max(gnt_ratio, nullspace_ratio(g.dW[i - 1], net, acts, i));

    // (c) DTP with white-noise trained layerwise feedback vs DDTP-linear with DRL
    LayerwiseFeedback lw;
    lw.act = Activation::linear();
    {
      auto tmp = std::get<LayerwiseFeedback>(make_feedback(FeedbackKind::Layerwise, net, rng));
      lw.Q = tmp.Q;
      lw.c = tmp.c;
    }
    FeedbackPathway dtp_fb = lw;
    const NoiseSpec white{1.0, 64, seed + 1};
    train_feedback(dtp_fb, 3000, 0.02, 0.0, [&](const FeedbackPathway& p, int i, std::uint64_t t) {
      return layerwise_recon_grad(net, p, acts, i, white, t);
    });
    FeedbackPathway ddtp_fb = make_feedback(FeedbackKind::DirectLinear, net, rng);
    const NoiseSpec small{1e-2, 64, seed + 2};
    train_feedback(ddtp_fb, 3000, 0.05, 2e-6, [&](const FeedbackPathway& p, int i, std::uint64_t t) {
      return drl_grad(net, p, acts, i, small, t);
    });
    const Mat target_L = output_target(acts.h.back(), e, eta);
    const ForwardGrads dtp = forward_update(net, acts, propagate_dtp(net, dtp_fb, acts, target_L));
    const ForwardGrads ddtp = forward_update(net, acts, propagate_ddtp(net, ddtp_fb, acts, target_L));
    // Layer 1's target passes through three feedback steps.
    const double dtp_ratio = nullspace_ratio(dtp.dW[0], net, acts, 1);
    const double ddtp_ratio = nullspace_ratio(ddtp.dW[0], net, acts, 1);

    const bool a = out_angle < 1e-4;
    const bool b = gnt_ratio < 1e-8;
    const bool c = dtp_ratio > ddtp_ratio;
    r.passed = a && b && c;
    r.detail = "(a) output angle to -e_L " + fmt(out_angle) + " deg (< 1e-4); (b) max GNT nullspace ratio " +
               fmt(gnt_ratio) + " (< 1e-8); (c) layer-1 ratio DTP " + fmt(dtp_ratio) + " > DDTP-linear " +
               fmt(ddtp_ratio);
  });
}

CheckResult check_gnt_convergence(std::uint64_t seed) {
  return timed("GNT convergence on a linear net", [&](CheckResult& r) {
    std::mt19937_64 rng(seed + 53);
    TeacherSpec teacher;
    teacher.input_dim = 6;
    teacher.output_dim = 2;
    teacher.hidden = {};
    teacher.act = Activation::linear();
    teacher.seed = seed + 54;
    const Dataset data = gen_teacher_dataset(teacher, 200, 0);
    ForwardNet net = linear_net({6, 5, 4, 2}, rng);
    // Variance-preserving scale so the signal does not shrink with depth.
    for (auto& l : net.layers) l.W *= std::sqrt(3.0);
    const double eta = 1.0, lr = 1e-3;
    double initial = 0.0, previous = INFINITY, loss = 0.0, worst_angle = 0.0;
    bool monotone = true;
    int reached = -1;
    const int max_iterations = 5000;
    for (int t = 0; t <= max_iterations; ++t) {
      const Activations acts = forward_pass(net, data.train.inputs);
      const LossEval le = output_loss_and_error(LossKind::L2, acts.h.back(), data.train.labels);
      loss = le.loss;
      if (t == 0) initial = loss;
      if (!(loss < previous)) monotone = false;
      previous = loss;
      if (loss < 1e-6 * initial) {
        reached = t;
        break;
      }
      const ForwardGrads g = gnt_weight_update(net, acts, gnt_target(net, acts, le.error, eta, 0.0));
      const ForwardGrads bp = bp_update(net, acts, le.error);
      for (std::size_t k = 0; k < g.dW.size(); ++k) worst_angle = std::max(worst_angle, frobenius_angle(g.dW[k], bp.dW[k]));
      ParamGroup group = forward_group(net);
      sgd_step(lr, group.params, forward_grad_refs(g));
    }
    r.passed = monotone && worst_angle < 90.0 && reached >= 0;
    r.detail = "max angle to gradient " + fmt(worst_angle) + " deg (< 90), loss ratio " + fmt(loss / initial) +
               (reached >= 0 ? " reached 1e-6 at iteration " + std::to_string(reached) : " never reached 1e-6") +
               (monotone ? ", strictly decreasing" : ", NOT monotone");
  });
}

CheckResult check_eps_pinv(std::uint64_t seed) {
  return timed("scaled transpose as approximate pseudo-inverse", [&](CheckResult& r) {
    double worst_ratio = 0.0, worst_fraction = 1.0;
    bool ok = true;
    for (int s = 0; s < 20; ++s) {
      std::mt19937_64 rng(seed * 7919ULL + static_cast<std::uint64_t>(s));
      Mat A = gaussian(10, 1000, rng);
      for (Eigen::Index i = 0; i < A.rows(); ++i) A.row(i).normalize();
      const EpsPinvReport rep = eps_pinv_check(A);
      const Mat B = A / rep.s;
      const double ratio = rep.penrose_residual_1 / B.squaredNorm();
      int good = 0, pairs = 0;
      for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < A.rows(); ++j) {
          ++pairs;
          if (std::abs(A.row(i).dot(A.row(j))) < 0.15) ++good;
        }
      }
      const double fraction = static_cast<double>(good) / pairs;
      worst_ratio = std::max(worst_ratio, ratio);
      worst_fraction = std::min(worst_fraction, fraction);
      ok = ok && ratio < 0.05 && fraction >= 0.95 && rep.hermitian_ok;
    }
    r.passed = ok;
    r.detail = "worst ||BB^TB-B||^2/||B||^2 = " + fmt(worst_ratio) + " (< 0.05), worst fraction of pairs below 0.15 = " +
               fmt(worst_fraction) + " (>= 0.95), 20 matrices";
  });
}

CheckResult check_determinism_and_io(std::uint64_t seed, const std::string& scratch_dir) {
  return timed("determinism and I/O round trips", [&](CheckResult& r) {
    namespace fs = std::filesystem;
    fs::create_directories(scratch_dir);
    std::ostringstream cfg_text;
    cfg_text << "[run]\nmethod = DDTP_linear\nseed = " << seed
             << "\nepochs = 2\nbatch_size = 16\npretrain_fb_epochs = 1\ninterleave_fb_epochs = 1\n"
             << "[model]\nsizes = 6,8,6,2\nloss = l2\n"
             << "[diagnostics]\nangle_every = 2\n"
             << "[data]\nsource = teacher\nteacher_input_dim = 6\nteacher_output_dim = 2\n"
             << "teacher_hidden = 32,32\nn_train = 96\nn_val = 32\nn_test = 32\n";
    const TrainConfig cfg = parse_config_text(cfg_text.str());
    const Dataset data = load_dataset(cfg);
    const RunResult a = run_experiment(cfg, data);
    const RunResult b = run_experiment(cfg, load_dataset(cfg));
    const bool same_stream = to_csv(a.records) == to_csv(b.records) && a.records == b.records &&
                             to_jsonl(a.records) == to_jsonl(b.records);

    // IDX fixture with known bytes
    IdxImages img;
    img.rows = 28;
    img.cols = 28;
    for (int n = 0; n < 4; ++n)
      for (int p = 0; p < 784; ++p) img.pixels.push_back(static_cast<std::uint8_t>((p * 7 + n * 31) % 256));
    const std::vector<std::uint8_t> labels{3, 1, 4, 1};
    const std::string ip = (fs::path(scratch_dir) / "fixture-images-idx3-ubyte").string();
    const std::string lp = (fs::path(scratch_dir) / "fixture-labels-idx1-ubyte").string();
    write_idx_images(ip, img);
    write_idx_labels(lp, labels);
    const IdxImages back = read_idx_images(ip);
    const Split split = idx_to_split(back, read_idx_labels(lp));
    bool idx_ok = back.pixels == img.pixels && read_idx_labels(lp) == labels && split.size() == 4 &&
                  split.inputs.rows() == 784 && split.inputs.minCoeff() >= 0.0 && split.inputs.maxCoeff() <= 1.0;
    for (int n = 0; n < 4 && idx_ok; ++n) {
      idx_ok = std::abs(split.inputs(5, n) - img.pixels[static_cast<std::size_t>(n * 784 + 5)] / 255.0) < 1e-15 &&
               split.labels(labels[static_cast<std::size_t>(n)], n) == 1.0;
    }

    // CSV round trip of the toy run
    const std::string csv = (fs::path(scratch_dir) / "metrics.csv").string();
    emit_metrics(a.records, MetricsFormat::CSV, csv);
    const auto reread = read_metrics(csv, MetricsFormat::CSV);
    double worst = 0.0;
    bool csv_ok = reread.size() == a.records.size();
    auto cmp = [&](const std::optional<double>& x, const std::optional<double>& y) {
      if (x.has_value() != y.has_value()) {
        csv_ok = false;
        return;
      }
      if (x) worst = std::max(worst, std::abs(*x - *y));
    };
    for (std::size_t k = 0; csv_ok && k < reread.size(); ++k) {
      cmp(a.records[k].train_loss, reread[k].train_loss);
      cmp(a.records[k].val_error, reread[k].val_error);
      cmp(a.records[k].test_error, reread[k].test_error);
      cmp(a.records[k].angle_grad_deg, reread[k].angle_grad_deg);
      cmp(a.records[k].angle_gnt_deg, reread[k].angle_gnt_deg);
      cmp(a.records[k].best_lambda, reread[k].best_lambda);
      csv_ok = csv_ok && a.records[k].iteration == reread[k].iteration && a.records[k].layer == reread[k].layer;
    }
    csv_ok = csv_ok && worst <= 1e-12;
    r.passed = same_stream && idx_ok && csv_ok;
    r.detail = std::string("metric streams ") + (same_stream ? "identical" : "DIFFER") + " (" +
               std::to_string(a.records.size()) + " records); IDX fixture " + (idx_ok ? "ok" : "FAILED") +
               "; CSV max abs diff " + fmt(worst) + (csv_ok ? "" : " FAILED");
  });
}

std::vector<CheckResult> run_theory_checks(std::uint64_t seed, const std::string& scratch_dir) {
  return {check_gradients(seed),         check_taylor_order(seed), check_drl_fixed_point(seed),
          check_gnt_direction_and_nullspace(seed), check_gnt_convergence(seed), check_eps_pinv(seed),
          check_determinism_and_io(seed, scratch_dir)};
}

ToyNullspaceResult toy_nullspace(std::uint64_t seed, int samples) {
  TeacherSpec teacher;
  teacher.input_dim = 6;
  teacher.output_dim = 2;
  teacher.seed = seed + 101;
  const Dataset data = gen_teacher_dataset(teacher, 512, samples);
  std::mt19937_64 rng(seed + 102);
  const ForwardNet net = make_forward_net({6, 6, 6, 2}, Activation::tanh(), Activation::linear(), rng);
  FeedbackPathway dtp_fb = make_feedback(FeedbackKind::Layerwise, net, rng);
  FeedbackPathway ddtp_fb = make_feedback(FeedbackKind::DirectLinear, net, rng);
  const NoiseSpec dtp_noise{0.0173, 1, seed + 103};
  const NoiseSpec drl_noise{0.01, 1, seed + 104};
  AdamState dtp_opt, ddtp_opt;
  dtp_opt.cfg.lr = ddtp_opt.cfg.lr = 1e-3;
  ddtp_opt.cfg.weight_decay = 3.162e-6;
  // Forward weights stay frozen; only the feedback is trained, to convergence.
  const Eigen::Index batch = 32;
  std::uint64_t it = 0;
  for (int epoch = 0; epoch < 200; ++epoch) {
    for (Eigen::Index start = 0; start < data.train.size(); start += batch, ++it) {
      const Activations acts = forward_pass(net, data.train.inputs.middleCols(start, batch));
      FeedbackGrads gd, gr;
      for (int i = 1; i < net.depth(); ++i) {
        gd.push_back(layerwise_recon_grad(net, dtp_fb, acts, i, dtp_noise, it));
        gr.push_back(drl_grad(net, ddtp_fb, acts, i, drl_noise, it));
      }
      ParamGroup pd = feedback_group(dtp_fb);
      adam_step(dtp_opt, pd.params, feedback_grad_refs(gd, dtp_fb));
      ParamGroup pr = feedback_group(ddtp_fb);
      adam_step(ddtp_opt, pr.params, feedback_grad_refs(gr, ddtp_fb));
    }
  }
  ToyNullspaceResult out;
  const double eta = 0.1;
  for (Eigen::Index n = 0; n < data.test.size(); ++n) {
    const Activations acts = forward_pass(net, data.test.inputs.col(n));
    const Mat e = output_loss_and_error(LossKind::L2, acts.h.back(), data.test.labels.col(n)).error;
    const Mat target = output_target(acts.h.back(), e, eta);
    const int layer = 2;
    out.dtp_ratio += nullspace_ratio(forward_update(net, acts, propagate_dtp(net, dtp_fb, acts, target)).dW[layer - 1],
                                     net, acts, layer);
    out.ddtp_ratio += nullspace_ratio(
        forward_update(net, acts, propagate_ddtp(net, ddtp_fb, acts, target)).dW[layer - 1], net, acts, layer);
    out.gnt_ratio += nullspace_ratio(gnt_weight_update(net, acts, gnt_target(net, acts, e, eta, 0.0)).dW[layer - 1],
                                     net, acts, layer);
    ++out.samples;
  }
  out.dtp_ratio /= out.samples;
  out.ddtp_ratio /= out.samples;
  out.gnt_ratio /= out.samples;
  return out;
}

}  // namespace tpgrad
