#include "tpgrad/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tpgrad/error.hpp"

namespace tpgrad {

namespace {

// Shortest decimal form that parses back to the same double.
std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

std::optional<double> parse_opt(const std::string& s, int line) {
  if (s.empty()) return std::nullopt;
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::ParseError, "metrics line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

nlohmann::json opt_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (!std::isfinite(*v)) return fmt(*v);  // JSON has no NaN literal
  return *v;
}

std::optional<double> json_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (j[key].is_string()) return parse_opt(j[key].get<std::string>(), 0);
  return j[key].get<double>();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string to_csv(const std::vector<DiagnosticsRecord>& records) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.iteration) + "," + std::to_string(r.epoch) + "," + opt(r.train_loss) + "," +
           opt(r.val_error) + "," + opt(r.test_error) + "," + (r.layer ? std::to_string(*r.layer) : "") + "," +
           opt(r.angle_grad_deg) + "," + opt(r.angle_gnt_deg) + "," + opt(r.best_lambda) + "," +
           opt(r.nullspace_ratio) + "\n";
  }
  return out;
}

std::string to_jsonl(const std::vector<DiagnosticsRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["iteration"] = r.iteration;
    j["epoch"] = r.epoch;
    j["train_loss"] = opt_json(r.train_loss);
    j["val_error"] = opt_json(r.val_error);
    j["test_error"] = opt_json(r.test_error);
    j["layer"] = r.layer ? nlohmann::json(*r.layer) : nlohmann::json(nullptr);
    j["angle_grad_deg"] = opt_json(r.angle_grad_deg);
    j["angle_gnt_deg"] = opt_json(r.angle_gnt_deg);
    j["best_lambda"] = opt_json(r.best_lambda);
    j["nullspace_ratio"] = opt_json(r.nullspace_ratio);
    out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict) + "\n";
  }
  return out;
}

void emit_metrics(const std::vector<DiagnosticsRecord>& records, MetricsFormat format, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << (format == MetricsFormat::CSV ? to_csv(records) : to_jsonl(records));
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

std::vector<DiagnosticsRecord> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw Error(ErrorCode::ParseError, "metrics line 1: unexpected CSV header");
  }
  std::vector<DiagnosticsRecord> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 10) throw Error(ErrorCode::ParseError, "metrics line " + std::to_string(line_no) + ": expected 10 fields");
    DiagnosticsRecord r;
    r.iteration = static_cast<long long>(*parse_opt(f[0], line_no));
    r.epoch = static_cast<int>(*parse_opt(f[1], line_no));
    r.train_loss = parse_opt(f[2], line_no);
    r.val_error = parse_opt(f[3], line_no);
    r.test_error = parse_opt(f[4], line_no);
    if (auto l = parse_opt(f[5], line_no)) r.layer = static_cast<int>(*l);
    r.angle_grad_deg = parse_opt(f[6], line_no);
    r.angle_gnt_deg = parse_opt(f[7], line_no);
    r.best_lambda = parse_opt(f[8], line_no);
    r.nullspace_ratio = parse_opt(f[9], line_no);
    out.push_back(r);
  }
  return out;
}

std::vector<DiagnosticsRecord> parse_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<DiagnosticsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    DiagnosticsRecord r;
    r.iteration = j.at("iteration").get<long long>();
    r.epoch = j.at("epoch").get<int>();
    r.train_loss = json_opt(j, "train_loss");
    r.val_error = json_opt(j, "val_error");
    r.test_error = json_opt(j, "test_error");
    if (!j.at("layer").is_null()) r.layer = j.at("layer").get<int>();
    r.angle_grad_deg = json_opt(j, "angle_grad_deg");
    r.angle_gnt_deg = json_opt(j, "angle_gnt_deg");
    r.best_lambda = json_opt(j, "best_lambda");
    r.nullspace_ratio = json_opt(j, "nullspace_ratio");
    out.push_back(r);
  }
  return out;
}

std::vector<DiagnosticsRecord> read_metrics(const std::string& path, MetricsFormat format) {
  const std::string text = slurp(path);
  return format == MetricsFormat::CSV ? parse_csv(text) : parse_jsonl(text);
}

}  // namespace tpgrad
