#include "tpgrad/experiment.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

namespace tpgrad {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Mat columns(const Mat& m, const std::vector<Eigen::Index>& order, std::size_t from, std::size_t count) {
  Mat out(m.rows(), static_cast<Eigen::Index>(count));
  for (std::size_t k = 0; k < count; ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(order[from + k]);
  return out;
}

struct Diverged {
  std::string why;
};

// Running per-epoch sums of angle measurements for one layer.
struct AngleAccumulator {
  double grad_sum = 0.0;
  std::vector<double> gnt_sum;
  int count = 0;
};

class Runner {
 public:
  Runner(const TrainConfig& cfg, const Dataset& data) : cfg_(cfg), data_(data) {
    validate(cfg_);
    if (data_.train.inputs.rows() != cfg_.sizes.front() || data_.train.labels.rows() != cfg_.sizes.back()) {
      throw Error(ErrorCode::ConfigInvalid, "dataset dimensions do not match model.sizes");
    }
    std::mt19937_64 rng(cfg_.seed);
    out_.net = make_forward_net(cfg_.sizes, cfg_.hidden_act, cfg_.output_act, rng);
    if (uses_feedback(cfg_.method)) out_.feedback = make_feedback(cfg_.pathway, out_.net, rng, cfg_.rhl_hidden);
    out_.forward_opt.cfg = cfg_.forward;
    out_.feedback_opt.cfg = cfg_.feedback;
    noise_.sigma = cfg_.sigma;
    noise_.samples_per_item = cfg_.noise_samples;
    noise_.seed = mix_seed(cfg_.seed, 0x401e);
    L_ = out_.net.depth();
    out_.summary.method = to_string(cfg_.method);
    out_.summary.seed = cfg_.seed;
  }

  RunResult run() {
    out_.summary.initial_digest = digest(make_checkpoint(cfg_, out_));
    try {
      for (int p = 0; p < cfg_.pretrain_fb_epochs && trains_feedback(cfg_.method); ++p) feedback_epoch();
      for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
        if (epoch > 1 && trains_feedback(cfg_.method)) {
          for (int k = 0; k < cfg_.interleave_fb_epochs; ++k) feedback_epoch();
        }
        train_epoch(epoch);
      }
    } catch (const Diverged& d) {
      out_.summary.diverged = true;
      out_.summary.failure = d.why;
    }
    finish_windows();
    out_.summary.final_digest = digest(make_checkpoint(cfg_, out_));
    return std::move(out_);
  }

 private:
  std::vector<Eigen::Index> shuffled(Eigen::Index n) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::mt19937_64 rng(mix_seed(cfg_.seed, 0xba7c4ULL + static_cast<std::uint64_t>(shuffle_count_++)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  template <typename F>
  void for_each_batch(F&& f) {
    const Eigen::Index n = data_.train.size();
    const auto order = shuffled(n);
    for (Eigen::Index start = 0; start < n; start += cfg_.batch_size) {
      const auto count = static_cast<std::size_t>(std::min(cfg_.batch_size, n - start));
      f(columns(data_.train.inputs, order, static_cast<std::size_t>(start), count),
        columns(data_.train.labels, order, static_cast<std::size_t>(start), count));
    }
  }

  void feedback_epoch() {
    for_each_batch([&](const Mat& x, const Mat&) {
      const Activations acts = forward_pass(out_.net, x);
      if (!acts.h.back().allFinite()) throw Diverged{"non-finite activations during feedback training"};
      feedback_step(acts);
    });
    ++out_.summary.feedback_only_epochs;
  }

  void feedback_step(const Activations& acts) {
    FeedbackPathway& fb = *out_.feedback;
    FeedbackGrads grads;
    try {
      for (int i = 1; i < L_; ++i) {
        switch (cfg_.method) {
          case Method::DTP:
          case Method::DTP_pretrained:
            grads.push_back(layerwise_recon_grad(out_.net, fb, acts, i, noise_, fb_iteration_));
            break;
          case Method::DDTP_control:
            grads.push_back(control_recon_grad(out_.net, fb, acts, i, noise_, fb_iteration_));
            break;
          default:
            grads.push_back(drl_grad(out_.net, fb, acts, i, noise_, fb_iteration_));
            break;
        }
      }
      ParamGroup group = feedback_group(fb);
      adam_step(out_.feedback_opt, group.params, feedback_grad_refs(grads, fb));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NonFinite) throw Diverged{e.what()};
      throw;
    }
    ++fb_iteration_;
  }

  ForwardGrads method_update(const Activations& acts, const Mat& e_L) {
    switch (cfg_.method) {
      case Method::BP: return bp_update(out_.net, acts, e_L);
      case Method::DFA: return dfa_update(out_.net, *out_.feedback, acts, e_L);
      case Method::GNT_oracle:
        return gnt_weight_update(out_.net, acts, gnt_target(out_.net, acts, e_L, cfg_.eta_hat, cfg_.gnt_lambda));
      case Method::DTP:
      case Method::DTP_pretrained:
      case Method::DTPDRL:
        return forward_update(out_.net, acts,
                              propagate_dtp(out_.net, *out_.feedback, acts,
                                            output_target(acts.h.back(), e_L, cfg_.eta_hat)));
      default:
        return forward_update(out_.net, acts,
                              propagate_ddtp(out_.net, *out_.feedback, acts,
                                             output_target(acts.h.back(), e_L, cfg_.eta_hat)));
    }
  }

  void measure(const Activations& acts, const Mat& e_L, const ForwardGrads& update, int epoch) {
    const ForwardGrads bp = bp_update(out_.net, acts, e_L);
    const auto gnt = gnt_updates_over_grid(out_.net, acts, e_L, cfg_.eta_hat, cfg_.grid);
    for (int i = 1; i <= L_; ++i) {
      const auto k = static_cast<std::size_t>(i - 1);
      DiagnosticsRecord r;
      r.iteration = iteration_;
      r.epoch = epoch;
      r.layer = i;
      std::vector<Mat> per_lambda;
      for (const auto& g : gnt) per_lambda.push_back(g.dW[k]);
      try {
        const AlignmentEntry e = alignment_report(update.dW[k], bp.dW[k], per_lambda, cfg_.grid);
        r.angle_grad_deg = e.angle_grad_deg;
        r.angle_gnt_deg = e.best_angle_gnt_deg;
        r.best_lambda = e.best_lambda;
        AngleAccumulator& acc = epoch_angles_[k];
        if (acc.gnt_sum.empty()) acc.gnt_sum.assign(cfg_.grid.lambdas.size(), 0.0);
        acc.grad_sum += e.angle_grad_deg;
        for (std::size_t g = 0; g < e.angle_gnt_deg.size(); ++g) acc.gnt_sum[g] += e.angle_gnt_deg[g];
        ++acc.count;
        history_grad_[k].push_back(e.angle_grad_deg);
        history_gnt_[k].push_back(e.best_angle_gnt_deg);
        if (static_cast<int>(history_grad_[k].size()) > cfg_.angle_window) {
          history_grad_[k].pop_front();
          history_gnt_[k].pop_front();
        }
      } catch (const Error& err) {
        if (err.code() != ErrorCode::ZeroMatrix) throw;
      }
      if (cfg_.nullspace) {
        try {
          r.nullspace_ratio = nullspace_ratio(update.dW[k], out_.net, acts, i);
        } catch (const Error& err) {
          if (err.code() != ErrorCode::ZeroMatrix) throw;
        }
      }
      out_.records.push_back(r);
    }
  }

  void train_epoch(int epoch) {
    epoch_angles_.assign(static_cast<std::size_t>(L_), {});
    if (history_grad_.empty()) {
      history_grad_.resize(static_cast<std::size_t>(L_));
      history_gnt_.resize(static_cast<std::size_t>(L_));
    }
    int batch_index = 0;
    for_each_batch([&](const Mat& x, const Mat& y) {
      const Activations acts = forward_pass(out_.net, x);
      const LossEval le = output_loss_and_error(cfg_.loss, acts.h.back(), y);
      DiagnosticsRecord r;
      r.iteration = iteration_;
      r.epoch = epoch;
      r.train_loss = le.loss;
      out_.records.push_back(r);
      if (!std::isfinite(le.loss)) throw Diverged{"non-finite training loss at iteration " + std::to_string(iteration_)};
      try {
        if (trains_feedback(cfg_.method)) feedback_step(acts);
        const ForwardGrads update = method_update(acts, le.error);
        if (cfg_.angles && batch_index % cfg_.angle_every == 0) measure(acts, le.error, update, epoch);
        const bool first_only = cfg_.freeze_forward_except_first;
        ParamGroup group = forward_group(out_.net, first_only);
        const auto grads = forward_grad_refs(update, first_only);
        if (cfg_.forward_optimizer == OptimizerKind::Adam) {
          adam_step(out_.forward_opt, group.params, grads);
        } else {
          sgd_step(cfg_.forward.lr, group.params, grads);
        }
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFinite) throw Diverged{e.what()};
        throw;
      }
      ++iteration_;
      ++batch_index;
    });
    end_of_epoch(epoch);
  }

  void end_of_epoch(int epoch) {
    EpochSummary es;
    es.epoch = epoch;
    es.train_loss = split_loss(out_.net, cfg_.loss, data_.train);
    es.val_error = split_error(out_.net, cfg_.loss, data_.val);
    es.test_error = split_error(out_.net, cfg_.loss, data_.test);
    for (const auto& acc : epoch_angles_) {
      if (acc.count == 0) {
        es.angle_grad_deg.push_back(kNaN);
        es.angle_gnt_deg.push_back(kNaN);
        es.best_lambda.push_back(kNaN);
        continue;
      }
      es.angle_grad_deg.push_back(acc.grad_sum / acc.count);
      std::size_t best = 0;
      for (std::size_t g = 1; g < acc.gnt_sum.size(); ++g)
        if (acc.gnt_sum[g] < acc.gnt_sum[best]) best = g;
      es.angle_gnt_deg.push_back(acc.gnt_sum[best] / acc.count);
      es.best_lambda.push_back(cfg_.grid.lambdas[best]);
    }
    DiagnosticsRecord r;
    r.iteration = iteration_;
    r.epoch = epoch;
    r.train_loss = es.train_loss;
    r.val_error = es.val_error;
    r.test_error = es.test_error;
    out_.records.push_back(r);
    RunSummary& s = out_.summary;
    s.epochs.push_back(es);
    s.epochs_completed = epoch;
    s.iterations = iteration_;
    s.final_train_loss = es.train_loss;
    if (!std::isfinite(es.train_loss)) throw Diverged{"non-finite training loss after epoch " + std::to_string(epoch)};
    // Model selection by validation error, or training loss without a validation split.
    const double score = es.val_error ? *es.val_error : es.train_loss;
    if (!s.best_val_error || score < *s.best_val_error) {
      s.best_val_error = score;
      s.best_epoch = epoch;
      s.test_error_at_best = es.test_error;
    }
  }

  void finish_windows() {
    for (std::size_t k = 0; k < history_grad_.size(); ++k) {
      auto mean = [](const std::deque<double>& d) {
        return d.empty() ? kNaN : std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
      };
      out_.summary.window_angle_grad_deg.push_back(mean(history_grad_[k]));
      out_.summary.window_angle_gnt_deg.push_back(mean(history_gnt_[k]));
    }
  }

  const TrainConfig& cfg_;
  const Dataset& data_;
  RunResult out_;
  NoiseSpec noise_;
  int L_ = 0;
  long long iteration_ = 0;
  std::uint64_t fb_iteration_ = 0;
  int shuffle_count_ = 0;
  std::vector<AngleAccumulator> epoch_angles_;
  std::vector<std::deque<double>> history_grad_;
  std::vector<std::deque<double>> history_gnt_;
};

nlohmann::json opt(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

nlohmann::json finite_list(const std::vector<double>& v) {
  nlohmann::json out = nlohmann::json::array();
  for (double x : v) out.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
  return out;
}

}  // namespace

Dataset load_dataset(const TrainConfig& cfg) {
  const DataConfig& d = cfg.data;
  if (d.source == DataSource::Teacher) {
    Dataset all = gen_teacher_dataset(d.teacher, d.n_train + d.n_val, d.n_test);
    Dataset out;
    out.train.inputs = all.train.inputs.leftCols(d.n_train);
    out.train.labels = all.train.labels.leftCols(d.n_train);
    out.val.inputs = all.train.inputs.rightCols(d.n_val);
    out.val.labels = all.train.labels.rightCols(d.n_val);
    out.test = std::move(all.test);
    return out;
  }
  if (d.mnist_train_images.empty() || d.mnist_train_labels.empty()) {
    throw Error(ErrorCode::ConfigInvalid, "MNIST training image and label paths are required");
  }
  Dataset out = load_mnist_idx(d.mnist_train_images, d.mnist_train_labels, d.train_subset, d.val_count, cfg.seed);
  if (!d.mnist_test_images.empty() && !d.mnist_test_labels.empty()) {
    out.test = idx_to_split(read_idx_images(d.mnist_test_images), read_idx_labels(d.mnist_test_labels));
  }
  return out;
}

double split_loss(const ForwardNet& net, LossKind loss, const Split& split) {
  if (split.size() == 0) return 0.0;
  const Mat out = forward_from(net, 0, split.inputs);
  return output_loss_and_error(loss, out, split.labels).loss;
}

std::optional<double> split_error(const ForwardNet& net, LossKind loss, const Split& split) {
  if (split.size() == 0) return std::nullopt;
  const Mat out = forward_from(net, 0, split.inputs);
  if (loss == LossKind::L2) return output_loss_and_error(loss, out, split.labels).loss;
  Eigen::Index wrong = 0;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    Eigen::Index pred = 0, truth = 0;
    out.col(c).maxCoeff(&pred);
    split.labels.col(c).maxCoeff(&truth);
    if (pred != truth) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(out.cols());
}

RunResult run_experiment(const TrainConfig& cfg, const Dataset& data) { return Runner(cfg, data).run(); }

Checkpoint make_checkpoint(const TrainConfig& cfg, const RunResult& run) {
  Checkpoint c;
  c.meta["method"] = to_string(cfg.method);
  c.meta["seed"] = std::to_string(cfg.seed);
  add_network(c, run.net);
  if (run.feedback) add_feedback(c, *run.feedback);
  add_adam(c, "adam.forward", run.forward_opt);
  if (run.feedback && trains_feedback(cfg.method)) add_adam(c, "adam.feedback", run.feedback_opt);
  return c;
}

std::string summary_to_json(const RunSummary& s) {
  nlohmann::ordered_json j;
  j["method"] = s.method;
  j["seed"] = s.seed;
  j["epochs_completed"] = s.epochs_completed;
  j["feedback_only_epochs"] = s.feedback_only_epochs;
  j["iterations"] = s.iterations;
  j["best_epoch"] = s.best_epoch;
  j["best_val_error"] = opt(s.best_val_error);
  j["test_error_at_best"] = opt(s.test_error_at_best);
  j["final_train_loss"] = std::isfinite(s.final_train_loss) ? nlohmann::json(s.final_train_loss) : nlohmann::json(nullptr);
  j["diverged"] = s.diverged;
  j["failure"] = s.failure;
  j["window_angle_grad_deg"] = finite_list(s.window_angle_grad_deg);
  j["window_angle_gnt_deg"] = finite_list(s.window_angle_gnt_deg);
  j["initial_digest"] = s.initial_digest;
  j["final_digest"] = s.final_digest;
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const auto& e : s.epochs) {
    nlohmann::ordered_json je;
    je["epoch"] = e.epoch;
    je["train_loss"] = std::isfinite(e.train_loss) ? nlohmann::json(e.train_loss) : nlohmann::json(nullptr);
    je["val_error"] = opt(e.val_error);
    je["test_error"] = opt(e.test_error);
    je["angle_grad_deg"] = finite_list(e.angle_grad_deg);
    je["angle_gnt_deg"] = finite_list(e.angle_gnt_deg);
    je["best_lambda"] = finite_list(e.best_lambda);
    epochs.push_back(je);
  }
  j["epochs"] = epochs;
  return j.dump(2);
}

}  // namespace tpgrad
