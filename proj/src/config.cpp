#include "tpgrad/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace tpgrad {

namespace {

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void parse_fail(int line, const std::string& msg) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + msg);
}

double to_double(const Entry& e) {
  double v = 0.0;
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) parse_fail(e.line, e.key + ": expected a number, got '" + e.value + "'");
  return v;
}

long long to_int(const Entry& e) {
  long long v = 0;
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) parse_fail(e.line, e.key + ": expected an integer, got '" + e.value + "'");
  return v;
}

std::uint64_t to_u64(const Entry& e) {
  std::uint64_t v = 0;
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) parse_fail(e.line, e.key + ": expected an unsigned integer, got '" + e.value + "'");
  return v;
}

bool to_bool(const Entry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  parse_fail(e.line, e.key + ": expected true or false, got '" + e.value + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<Eigen::Index> to_sizes(const Entry& e) {
  std::vector<Eigen::Index> out;
  for (const auto& item : split_list(e.value)) out.push_back(static_cast<Eigen::Index>(to_int({e.key, item, e.line})));
  return out;
}

std::vector<double> to_doubles(const Entry& e) {
  std::vector<double> out;
  for (const auto& item : split_list(e.value)) out.push_back(to_double({e.key, item, e.line}));
  return out;
}

template <typename F>
auto wrap(const Entry& e, F&& f) {
  try {
    return f();
  } catch (const Error& err) {
    if (err.code() == ErrorCode::ParseError) throw;
    parse_fail(e.line, e.key + ": " + err.what());
  }
}

using Setter = std::function<void(TrainConfig&, const Entry&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"run.method", [](TrainConfig& c, const Entry& e) { c.method = wrap(e, [&] { return parse_method(e.value); }); }},
      {"run.seed", [](TrainConfig& c, const Entry& e) { c.seed = to_u64(e); }},
      {"run.epochs", [](TrainConfig& c, const Entry& e) { c.epochs = static_cast<int>(to_int(e)); }},
      {"run.batch_size", [](TrainConfig& c, const Entry& e) { c.batch_size = to_int(e); }},
      {"run.pretrain_fb_epochs", [](TrainConfig& c, const Entry& e) { c.pretrain_fb_epochs = static_cast<int>(to_int(e)); }},
      {"run.interleave_fb_epochs", [](TrainConfig& c, const Entry& e) { c.interleave_fb_epochs = static_cast<int>(to_int(e)); }},
      {"run.freeze_forward_except_first", [](TrainConfig& c, const Entry& e) { c.freeze_forward_except_first = to_bool(e); }},

      {"model.sizes", [](TrainConfig& c, const Entry& e) { c.sizes = to_sizes(e); }},
      {"model.hidden_activation",
       [](TrainConfig& c, const Entry& e) {
         const double alpha = c.hidden_act.alpha;
         c.hidden_act = wrap(e, [&] { return parse_activation(e.value); });
         c.hidden_act.alpha = alpha;
       }},
      {"model.output_activation",
       [](TrainConfig& c, const Entry& e) {
         const double alpha = c.output_act.alpha;
         c.output_act = wrap(e, [&] { return parse_activation(e.value); });
         c.output_act.alpha = alpha;
       }},
      {"model.leaky_alpha",
       [](TrainConfig& c, const Entry& e) {
         c.hidden_act.alpha = to_double(e);
         c.output_act.alpha = c.hidden_act.alpha;
       }},
      {"model.loss",
       [](TrainConfig& c, const Entry& e) {
         if (e.value == "l2") c.loss = LossKind::L2;
         else if (e.value == "softmax_ce") c.loss = LossKind::SoftmaxCrossEntropy;
         else parse_fail(e.line, "model.loss: expected l2 or softmax_ce");
       }},
      {"model.pathway", [](TrainConfig& c, const Entry& e) { c.pathway = wrap(e, [&] { return parse_feedback_kind(e.value); }); }},
      {"model.rhl_hidden", [](TrainConfig& c, const Entry& e) { c.rhl_hidden = to_int(e); }},

      {"targets.eta_hat", [](TrainConfig& c, const Entry& e) { c.eta_hat = to_double(e); }},
      {"targets.sigma", [](TrainConfig& c, const Entry& e) { c.sigma = to_double(e); }},
      {"targets.noise_samples", [](TrainConfig& c, const Entry& e) { c.noise_samples = static_cast<int>(to_int(e)); }},
      {"targets.gnt_lambda", [](TrainConfig& c, const Entry& e) { c.gnt_lambda = to_double(e); }},

      {"forward.optimizer",
       [](TrainConfig& c, const Entry& e) {
         if (e.value == "adam") c.forward_optimizer = OptimizerKind::Adam;
         else if (e.value == "sgd") c.forward_optimizer = OptimizerKind::SGD;
         else parse_fail(e.line, "forward.optimizer: expected adam or sgd");
       }},
      {"forward.lr", [](TrainConfig& c, const Entry& e) { c.forward.lr = to_double(e); }},
      {"forward.beta1", [](TrainConfig& c, const Entry& e) { c.forward.beta1 = to_double(e); }},
      {"forward.beta2", [](TrainConfig& c, const Entry& e) { c.forward.beta2 = to_double(e); }},
      {"forward.eps", [](TrainConfig& c, const Entry& e) { c.forward.eps = to_double(e); }},
      {"forward.weight_decay", [](TrainConfig& c, const Entry& e) { c.forward.weight_decay = to_double(e); }},

      {"feedback.lr", [](TrainConfig& c, const Entry& e) { c.feedback.lr = to_double(e); }},
      {"feedback.beta1", [](TrainConfig& c, const Entry& e) { c.feedback.beta1 = to_double(e); }},
      {"feedback.beta2", [](TrainConfig& c, const Entry& e) { c.feedback.beta2 = to_double(e); }},
      {"feedback.eps", [](TrainConfig& c, const Entry& e) { c.feedback.eps = to_double(e); }},
      {"feedback.weight_decay", [](TrainConfig& c, const Entry& e) { c.feedback.weight_decay = to_double(e); }},

      {"diagnostics.angles", [](TrainConfig& c, const Entry& e) { c.angles = to_bool(e); }},
      {"diagnostics.angle_every", [](TrainConfig& c, const Entry& e) { c.angle_every = static_cast<int>(to_int(e)); }},
      {"diagnostics.angle_window", [](TrainConfig& c, const Entry& e) { c.angle_window = static_cast<int>(to_int(e)); }},
      {"diagnostics.damping_grid", [](TrainConfig& c, const Entry& e) { c.grid.lambdas = to_doubles(e); }},
      {"diagnostics.nullspace", [](TrainConfig& c, const Entry& e) { c.nullspace = to_bool(e); }},

      {"data.source",
       [](TrainConfig& c, const Entry& e) {
         if (e.value == "mnist") c.data.source = DataSource::Mnist;
         else if (e.value == "teacher") c.data.source = DataSource::Teacher;
         else parse_fail(e.line, "data.source: expected mnist or teacher");
       }},
      {"data.mnist_train_images", [](TrainConfig& c, const Entry& e) { c.data.mnist_train_images = e.value; }},
      {"data.mnist_train_labels", [](TrainConfig& c, const Entry& e) { c.data.mnist_train_labels = e.value; }},
      {"data.mnist_test_images", [](TrainConfig& c, const Entry& e) { c.data.mnist_test_images = e.value; }},
      {"data.mnist_test_labels", [](TrainConfig& c, const Entry& e) { c.data.mnist_test_labels = e.value; }},
      {"data.train_subset", [](TrainConfig& c, const Entry& e) { c.data.train_subset = to_int(e); }},
      {"data.val_count", [](TrainConfig& c, const Entry& e) { c.data.val_count = to_int(e); }},
      {"data.teacher_input_dim", [](TrainConfig& c, const Entry& e) { c.data.teacher.input_dim = to_int(e); }},
      {"data.teacher_output_dim", [](TrainConfig& c, const Entry& e) { c.data.teacher.output_dim = to_int(e); }},
      {"data.teacher_hidden", [](TrainConfig& c, const Entry& e) { c.data.teacher.hidden = to_sizes(e); }},
      {"data.teacher_activation",
       [](TrainConfig& c, const Entry& e) { c.data.teacher.act = wrap(e, [&] { return parse_activation(e.value); }); }},
      {"data.teacher_weight_scale", [](TrainConfig& c, const Entry& e) { c.data.teacher.weight_scale = to_double(e); }},
      {"data.teacher_seed", [](TrainConfig& c, const Entry& e) { c.data.teacher.seed = to_u64(e); }},
      {"data.n_train", [](TrainConfig& c, const Entry& e) { c.data.n_train = to_int(e); }},
      {"data.n_val", [](TrainConfig& c, const Entry& e) { c.data.n_val = to_int(e); }},
      {"data.n_test", [](TrainConfig& c, const Entry& e) { c.data.n_test = to_int(e); }},
  };
  return table;
}

[[noreturn]] void invalid(const std::string& field, const std::string& msg) {
  throw Error(ErrorCode::ValidationError, field + ": " + msg);
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k) os << ',';
    if constexpr (std::is_floating_point_v<T>) os << fmt(v[k]); else os << v[k];
  }
  return os.str();
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::BP: return "BP";
    case Method::DFA: return "DFA";
    case Method::DTP: return "DTP";
    case Method::DTP_pretrained: return "DTP_pretrained";
    case Method::DTPDRL: return "DTPDRL";
    case Method::DDTP_linear: return "DDTP_linear";
    case Method::DDTP_control: return "DDTP_control";
    case Method::DDTP_RHL: return "DDTP_RHL";
    case Method::DDTP_RHL_rec: return "DDTP_RHL_rec";
    case Method::GNT_oracle: return "GNT_oracle";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::BP, Method::DFA, Method::DTP, Method::DTP_pretrained, Method::DTPDRL, Method::DDTP_linear,
                 Method::DDTP_control, Method::DDTP_RHL, Method::DDTP_RHL_rec, Method::GNT_oracle}) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::ValidationError, "unknown method '" + name + "'");
}

bool uses_feedback(Method m) { return m != Method::BP && m != Method::GNT_oracle; }

bool trains_feedback(Method m) { return uses_feedback(m) && m != Method::DFA; }

FeedbackKind default_pathway(Method m) {
  switch (m) {
    case Method::DTP:
    case Method::DTP_pretrained:
    case Method::DTPDRL: return FeedbackKind::Layerwise;
    case Method::DDTP_RHL: return FeedbackKind::DirectRHL;
    case Method::DDTP_RHL_rec: return FeedbackKind::DirectRHLRec;
    case Method::DFA: return FeedbackKind::FixedRandomDirect;
    default: return FeedbackKind::DirectLinear;
  }
}

TrainConfig default_config(Method m) {
  TrainConfig c;
  c.method = m;
  c.pathway = default_pathway(m);
  // Geometric midpoints of the published search intervals (untuned).
  const double lr_times_eta = 1e-5;
  c.feedback.lr = 3.873e-4;
  c.feedback.weight_decay = 3.162e-6;
  switch (m) {
    case Method::BP:
    case Method::DFA:
      c.forward.lr = 3.162e-4;
      c.pretrain_fb_epochs = 0;
      c.interleave_fb_epochs = 0;
      break;
    case Method::DTP:
      c.eta_hat = 0.1;
      c.sigma = 0.01732;
      c.forward.lr = lr_times_eta / c.eta_hat;
      c.feedback.weight_decay = 0.0;
      c.pretrain_fb_epochs = 0;
      c.interleave_fb_epochs = 0;
      break;
    case Method::DTP_pretrained:
      c.eta_hat = 0.1;
      c.sigma = 0.01732;
      c.forward.lr = lr_times_eta / c.eta_hat;
      break;
    case Method::GNT_oracle:
      c.forward.lr = lr_times_eta / c.eta_hat;
      c.pretrain_fb_epochs = 0;
      c.interleave_fb_epochs = 0;
      break;
    default:
      c.forward.lr = lr_times_eta / c.eta_hat;
      break;
  }
  return c;
}

void validate(const TrainConfig& c) {
  if (c.sizes.size() < 2) invalid("model.sizes", "needs at least an input and an output size");
  for (auto s : c.sizes)
    if (s <= 0) invalid("model.sizes", "sizes must be positive");
  if (c.hidden_act.kind == ActivationKind::ReLU) invalid("model.hidden_activation", "relu is reserved for the teacher");
  if (c.output_act.kind == ActivationKind::ReLU) invalid("model.output_activation", "relu is reserved for the teacher");
  if ((c.hidden_act.kind == ActivationKind::LeakyTanh || c.output_act.kind == ActivationKind::LeakyTanh) &&
      !(c.hidden_act.alpha > 0.0)) {
    invalid("model.leaky_alpha", "must be > 0");
  }
  if (c.loss == LossKind::SoftmaxCrossEntropy && c.output_act.kind != ActivationKind::Linear) {
    invalid("model.output_activation", "softmax_ce needs a linear output layer");
  }
  if (uses_feedback(c.method)) {
    if (c.pathway != default_pathway(c.method)) {
      invalid("model.pathway", to_string(c.method) + " requires the " + to_string(default_pathway(c.method)) +
                                   " pathway, not " + to_string(c.pathway));
    }
    if (c.sizes.size() < 3) invalid("model.sizes", to_string(c.method) + " needs at least one hidden layer");
  }
  if ((c.pathway == FeedbackKind::DirectRHL || c.pathway == FeedbackKind::DirectRHLRec) && uses_feedback(c.method) &&
      c.rhl_hidden <= 0) {
    invalid("model.rhl_hidden", "must be > 0");
  }
  if (!(c.eta_hat > 0.0)) invalid("targets.eta_hat", "must be > 0");
  if (!(c.sigma > 0.0)) invalid("targets.sigma", "must be > 0");
  if (c.noise_samples < 1) invalid("targets.noise_samples", "must be >= 1");
  if (!(c.gnt_lambda >= 0.0)) invalid("targets.gnt_lambda", "must be >= 0");
  if (c.batch_size < 1) invalid("run.batch_size", "must be >= 1");
  if (c.epochs < 0) invalid("run.epochs", "must be >= 0");
  if (c.pretrain_fb_epochs < 0) invalid("run.pretrain_fb_epochs", "must be >= 0");
  if (c.interleave_fb_epochs < 0) invalid("run.interleave_fb_epochs", "must be >= 0");
  auto adam = [](const AdamConfig& a, const std::string& section) {
    try {
      validate(a);
    } catch (const Error& e) {
      invalid(section, e.what());
    }
  };
  adam(c.forward, "forward");
  adam(c.feedback, "feedback");
  if (!(c.forward.lr > 0.0)) invalid("forward.lr", "must be > 0");
  if (trains_feedback(c.method) && !(c.feedback.lr > 0.0)) invalid("feedback.lr", "must be > 0");
  try {
    validate(c.grid);
  } catch (const Error& e) {
    invalid("diagnostics.damping_grid", e.what());
  }
  if (c.angle_every < 1) invalid("diagnostics.angle_every", "must be >= 1");
  if (c.angle_window < 1) invalid("diagnostics.angle_window", "must be >= 1");
  if (c.data.source == DataSource::Teacher) {
    if (c.data.teacher.input_dim != c.sizes.front()) invalid("data.teacher_input_dim", "must equal the input size");
    if (c.data.teacher.output_dim != c.sizes.back()) invalid("data.teacher_output_dim", "must equal the output size");
    if (c.data.n_train < 1) invalid("data.n_train", "must be >= 1");
    if (c.data.n_val < 0) invalid("data.n_val", "must be >= 0");
    if (c.data.n_test < 0) invalid("data.n_test", "must be >= 0");
  } else {
    if (c.data.train_subset < 0) invalid("data.train_subset", "must be >= 0");
    if (c.data.val_count < 0) invalid("data.val_count", "must be >= 0");
  }
}

TrainConfig parse_config_text(const std::string& text) {
  std::vector<Entry> entries;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) parse_fail(line_no, "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) parse_fail(line_no, "expected key = value");
    const std::string k = trim(line.substr(0, eq));
    if (k.empty()) parse_fail(line_no, "empty key");
    const std::string full = section.empty() ? k : section + "." + k;
    if (!setters().contains(full)) parse_fail(line_no, "unknown key '" + full + "'");
    if (auto it = seen.find(full); it != seen.end()) {
      parse_fail(line_no, "duplicate key '" + full + "' (first set on line " + std::to_string(it->second) + ")");
    }
    seen[full] = line_no;
    entries.push_back({full, trim(line.substr(eq + 1)), line_no});
  }
  const Entry* method = nullptr;
  for (const auto& e : entries)
    if (e.key == "run.method") method = &e;
  if (!method) invalid("run.method", "missing");
  TrainConfig cfg = default_config(wrap(*method, [&] { return parse_method(method->value); }));
  for (const auto& e : entries) setters().at(e.key)(cfg, e);
  validate(cfg);
  return cfg;
}

TrainConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream os;
  auto act = [](const Activation& a) { return to_string(a); };
  os << "[run]\n"
     << "method = " << to_string(c.method) << "\n"
     << "seed = " << c.seed << "\n"
     << "epochs = " << c.epochs << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "pretrain_fb_epochs = " << c.pretrain_fb_epochs << "\n"
     << "interleave_fb_epochs = " << c.interleave_fb_epochs << "\n"
     << "freeze_forward_except_first = " << (c.freeze_forward_except_first ? "true" : "false") << "\n\n";
  os << "[model]\n"
     << "sizes = " << join(c.sizes) << "\n"
     << "hidden_activation = " << act(c.hidden_act) << "\n"
     << "output_activation = " << act(c.output_act) << "\n"
     << "leaky_alpha = " << fmt(c.hidden_act.alpha) << "\n"
     << "loss = " << (c.loss == LossKind::L2 ? "l2" : "softmax_ce") << "\n"
     << "pathway = " << to_string(c.pathway) << "\n"
     << "rhl_hidden = " << c.rhl_hidden << "\n\n";
  os << "[targets]\n"
     << "eta_hat = " << fmt(c.eta_hat) << "\n"
     << "sigma = " << fmt(c.sigma) << "\n"
     << "noise_samples = " << c.noise_samples << "\n"
     << "gnt_lambda = " << fmt(c.gnt_lambda) << "\n\n";
  os << "[forward]\n"
     << "optimizer = " << (c.forward_optimizer == OptimizerKind::Adam ? "adam" : "sgd") << "\n"
     << "lr = " << fmt(c.forward.lr) << "\n"
     << "beta1 = " << fmt(c.forward.beta1) << "\n"
     << "beta2 = " << fmt(c.forward.beta2) << "\n"
     << "eps = " << fmt(c.forward.eps) << "\n"
     << "weight_decay = " << fmt(c.forward.weight_decay) << "\n\n";
  os << "[feedback]\n"
     << "lr = " << fmt(c.feedback.lr) << "\n"
     << "beta1 = " << fmt(c.feedback.beta1) << "\n"
     << "beta2 = " << fmt(c.feedback.beta2) << "\n"
     << "eps = " << fmt(c.feedback.eps) << "\n"
     << "weight_decay = " << fmt(c.feedback.weight_decay) << "\n\n";
  os << "[diagnostics]\n"
     << "angles = " << (c.angles ? "true" : "false") << "\n"
     << "angle_every = " << c.angle_every << "\n"
     << "angle_window = " << c.angle_window << "\n"
     << "damping_grid = " << join(c.grid.lambdas) << "\n"
     << "nullspace = " << (c.nullspace ? "true" : "false") << "\n\n";
  os << "[data]\n"
     << "source = " << (c.data.source == DataSource::Mnist ? "mnist" : "teacher") << "\n"
     << "mnist_train_images = " << c.data.mnist_train_images << "\n"
     << "mnist_train_labels = " << c.data.mnist_train_labels << "\n"
     << "mnist_test_images = " << c.data.mnist_test_images << "\n"
     << "mnist_test_labels = " << c.data.mnist_test_labels << "\n"
     << "train_subset = " << c.data.train_subset << "\n"
     << "val_count = " << c.data.val_count << "\n"
     << "teacher_input_dim = " << c.data.teacher.input_dim << "\n"
     << "teacher_output_dim = " << c.data.teacher.output_dim << "\n"
     << "teacher_hidden = " << join(c.data.teacher.hidden) << "\n"
     << "teacher_activation = " << act(c.data.teacher.act) << "\n"
     << "teacher_weight_scale = " << fmt(c.data.teacher.weight_scale) << "\n"
     << "teacher_seed = " << c.data.teacher.seed << "\n"
     << "n_train = " << c.data.n_train << "\n"
     << "n_val = " << c.data.n_val << "\n"
     << "n_test = " << c.data.n_test << "\n";
  return os.str();
}

}  // namespace tpgrad
