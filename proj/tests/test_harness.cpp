#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "tpgrad/experiment.hpp"

using namespace tpgrad;
using tpgrad::testing::code_of;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch() {
  const fs::path p = fs::path(TPGRAD_TEST_SCRATCH);
  fs::create_directories(p);
  return p;
}

TrainConfig toy(Method m) {
  TrainConfig c = default_config(m);
  c.seed = 3;
  c.sizes = {6, 8, 6, 2};
  c.loss = LossKind::L2;
  c.batch_size = 16;
  c.epochs = 2;
  c.pretrain_fb_epochs = 1;
  c.interleave_fb_epochs = 1;
  c.angle_every = 2;
  c.data.source = DataSource::Teacher;
  c.data.teacher.hidden = {32, 32};
  c.data.n_train = 64;
  c.data.n_val = 16;
  c.data.n_test = 16;
  return c;
}

int error_line(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ParseError) return -2;
    const std::string msg = e.what();
    const auto pos = msg.find("line ");
    return pos == std::string::npos ? -3 : std::stoi(msg.substr(pos + 5));
  }
  return -1;
}

}  // namespace

TEST_CASE("config parsing") {
  const TrainConfig c = parse_config_text("[run]\nmethod = DDTP_linear\n[model]\nsizes = 784,128,10\n");
  const TrainConfig d = default_config(Method::DDTP_linear);
  CHECK(c.eta_hat == d.eta_hat);
  CHECK(c.sigma == d.sigma);
  CHECK(c.feedback.lr == d.feedback.lr);
  CHECK(c.pathway == FeedbackKind::DirectLinear);
  CHECK(c.sizes == std::vector<Eigen::Index>{784, 128, 10});

  // the layer-wise method cannot run on a direct pathway
  CHECK(code_of([] {
          parse_config_text("[run]\nmethod = DTP\n[model]\nsizes = 4,3,2\npathway = direct_linear\n");
        }) == ErrorCode::ValidationError);
  CHECK(code_of([] { parse_config_text("[model]\nsizes = 4,3,2\n"); }) == ErrorCode::ValidationError);

  CHECK(error_line("[run]\nmethod = BP\n[model]\nsizes = 4,3,2\nbogus = 1\n") == 5);
  CHECK(error_line("[run]\nmethod = BP\nthis line has no equals sign\n") == 3);
  CHECK(error_line("[run]\nmethod = BP\nseed = 1\nseed = 2\n") == 4);
  CHECK(error_line("[run]\nmethod = BP\nepochs = three\n") == 3);
  CHECK(error_line("[run]\nmethod = NotAMethod\n") == 2);

  // formatting is a fixed point of parsing
  const TrainConfig again = parse_config_text(format_config(c));
  CHECK(format_config(again) == format_config(c));
}

TEST_CASE("golden config formatting") {
  const fs::path src(TPGRAD_SOURCE_DIR);
  const TrainConfig c = parse_config((src / "configs" / "fashion_like_toy.cfg").string());
  CHECK(format_config(c) == slurp(src / "tests" / "golden" / "fashion_like_toy.golden"));
}

TEST_CASE("metric streams") {
  CHECK(to_csv({}) == std::string(kCsvHeader) + "\n");
  CHECK(parse_csv(to_csv({})).empty());
  CHECK(to_jsonl({}).empty());

  DiagnosticsRecord r;
  r.iteration = 12;
  r.epoch = 2;
  r.train_loss = 0.1234567890123;
  r.layer = 3;
  r.angle_gnt_deg = 41.5;
  r.best_lambda = 0.001;
  const std::vector<DiagnosticsRecord> one{r};
  CHECK(parse_csv(to_csv(one)) == one);
  CHECK(parse_jsonl(to_jsonl(one)) == one);

  const std::string path = (scratch() / "m.jsonl").string();
  emit_metrics(one, MetricsFormat::JSONL, path);
  CHECK(read_metrics(path, MetricsFormat::JSONL) == one);
  CHECK(code_of([&] { emit_metrics(one, MetricsFormat::CSV, "/nonexistent-dir/x/m.csv"); }) == ErrorCode::IoError);
}

TEST_CASE("zero epochs leave the parameters untouched") {
  TrainConfig c = toy(Method::DDTP_linear);
  c.epochs = 0;
  c.pretrain_fb_epochs = 0;
  const RunResult r = run_experiment(c, load_dataset(c));
  CHECK(r.summary.initial_digest == r.summary.final_digest);
  CHECK(r.records.empty());
  CHECK(r.summary.iterations == 0);
}

TEST_CASE("schedule accounting and determinism") {
  TrainConfig c = toy(Method::DDTP_linear);
  c.epochs = 3;
  c.pretrain_fb_epochs = 2;
  c.interleave_fb_epochs = 2;
  const Dataset data = load_dataset(c);
  const RunResult a = run_experiment(c, data);
  CHECK(a.summary.feedback_only_epochs == 2 + 2 * (3 - 1));
  CHECK(a.summary.epochs_completed == 3);
  CHECK(a.summary.iterations == 3 * 4);
  CHECK(a.summary.epochs.size() == 3);
  CHECK(a.summary.initial_digest != a.summary.final_digest);

  const RunResult b = run_experiment(c, load_dataset(c));
  CHECK(a.records == b.records);
  CHECK(a.summary.final_digest == b.summary.final_digest);
  CHECK(to_csv(a.records) == to_csv(b.records));

  c.seed = 4;
  CHECK(run_experiment(c, data).summary.final_digest != a.summary.final_digest);

  TrainConfig bp = toy(Method::BP);
  CHECK(run_experiment(bp, data).summary.feedback_only_epochs == 0);
}

TEST_CASE("frozen mode trains only the first layer") {
  TrainConfig c = toy(Method::DDTP_linear);
  c.freeze_forward_except_first = true;
  const RunResult r = run_experiment(c, load_dataset(c));
  std::mt19937_64 rng(c.seed);
  const ForwardNet init = make_forward_net(c.sizes, c.hidden_act, c.output_act, rng);
  const FeedbackPathway fb0 = make_feedback(c.pathway, init, rng, c.rhl_hidden);
  CHECK(r.net.layer(1).W != init.layer(1).W);
  for (int i = 2; i <= init.depth(); ++i) {
    CHECK(r.net.layer(i).W == init.layer(i).W);
    CHECK(r.net.layer(i).b == init.layer(i).b);
  }
  REQUIRE(r.feedback.has_value());
  CHECK(std::get<DirectLinearFeedback>(*r.feedback).Q[0] != std::get<DirectLinearFeedback>(fb0).Q[0]);
}

TEST_CASE("GNT oracle decreases a linear regression loss") {
  TrainConfig c = default_config(Method::GNT_oracle);
  c.seed = 5;
  c.sizes = {5, 4, 3, 2};
  c.hidden_act = Activation::linear();
  c.loss = LossKind::L2;
  c.forward_optimizer = OptimizerKind::SGD;
  c.forward.lr = 1e-3;
  c.eta_hat = 1.0;
  c.angles = false;
  c.data.source = DataSource::Teacher;
  c.data.teacher.input_dim = 5;
  c.data.teacher.hidden = {};
  c.data.teacher.act = Activation::linear();
  c.data.n_train = 40;
  c.data.n_val = 0;
  c.data.n_test = 0;
  c.batch_size = 40;
  c.epochs = 200;
  const RunResult r = run_experiment(c, load_dataset(c));
  std::vector<double> losses;
  for (const auto& rec : r.records)
    if (rec.train_loss && !rec.layer) losses.push_back(*rec.train_loss);
  REQUIRE(losses.size() == 400);
  bool monotone = true;
  for (std::size_t k = 1; k < losses.size(); ++k) monotone = monotone && losses[k] <= losses[k - 1] * (1 + 1e-12);
  CHECK(monotone);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("divergence is reported and records kept") {
  TrainConfig c = toy(Method::BP);
  c.forward_optimizer = OptimizerKind::SGD;
  c.forward.lr = 1e8;
  c.epochs = 5;
  c.angles = false;
  const RunResult r = run_experiment(c, load_dataset(c));
  CHECK(r.summary.diverged);
  CHECK(!r.summary.failure.empty());
  CHECK(!r.records.empty());
  CHECK(r.summary.epochs_completed < 5);
  const std::string json = summary_to_json(r.summary);
  CHECK(json.find("\"diverged\": true") != std::string::npos);
}
