#include "tpgrad/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace tpgrad {

namespace {

constexpr char kMagic[8] = {'T', 'P', 'G', 'R', 'A', 'D', '1', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  void raw(void* p, std::size_t n) {
    if (pos_ + n > b_.size()) throw Error(ErrorCode::TruncatedFile, "checkpoint ends early");
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
  double f64() { double v; raw(&v, sizeof v); return v; }
  std::string str() {
    const std::uint32_t n = u32();
    if (pos_ + n > b_.size()) throw Error(ErrorCode::TruncatedFile, "checkpoint ends early");
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

std::string key(const std::string& stem, std::size_t k) { return stem + std::to_string(k + 1); }

void put(Checkpoint& c, std::string name, const Mat& m) { c.tensors.push_back({std::move(name), m}); }
void put(Checkpoint& c, std::string name, const Vec& v) { c.tensors.push_back({std::move(name), Mat(v)}); }

Vec as_vec(const Mat& m, const std::string& name) {
  if (m.cols() != 1) throw Error(ErrorCode::ShapeMismatch, name + " is not a column vector");
  return m.col(0);
}

int count_prefix(const Checkpoint& c, const std::string& stem) {
  int n = 0;
  while (c.find(key(stem, static_cast<std::size_t>(n)))) ++n;
  return n;
}

Activation act_meta(const Checkpoint& c, const std::string& k) {
  auto it = c.meta.find(k);
  if (it == c.meta.end()) throw Error(ErrorCode::ValidationError, "checkpoint metadata lacks " + k);
  Activation a = parse_activation(it->second);
  auto alpha = c.meta.find(k + ".alpha");
  if (alpha != c.meta.end()) a.alpha = std::stod(alpha->second);
  return a;
}

std::string format_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace

const Mat* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

const Mat& Checkpoint::at(const std::string& name) const {
  const Mat* m = find(name);
  if (!m) throw Error(ErrorCode::ValidationError, "checkpoint lacks tensor " + name);
  return *m;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.str(t.name);
    w.u64(static_cast<std::uint64_t>(t.value.rows()));
    w.u64(static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) w.f64(t.value(r, c));
  }
  return std::move(w.bytes);
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  if (bytes.size() < sizeof magic) throw Error(ErrorCode::TruncatedFile, "checkpoint shorter than its magic");
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw Error(ErrorCode::BadMagic, "not a TPGRAD1 checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw Error(ErrorCode::BadMagic, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t k = 0; k < n_meta; ++k) {
    std::string key_ = r.str();
    c.meta[key_] = r.str();
  }
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t k = 0; k < n_tensors; ++k) {
    NamedTensor t;
    t.name = r.str();
    const auto rows = static_cast<Eigen::Index>(r.u64());
    const auto cols = static_cast<Eigen::Index>(r.u64());
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) > bytes.size()) {
      throw Error(ErrorCode::TruncatedFile, "tensor " + t.name + " larger than the file");
    }
    t.value.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) t.value(i, j) = r.f64();
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize(bytes);
}

std::uint64_t digest(const Checkpoint& ckpt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : serialize(ckpt)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void add_network(Checkpoint& ckpt, const ForwardNet& net) {
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const Layer& l = net.layers[k];
    put(ckpt, key("fwd.W", k), l.W);
    put(ckpt, key("fwd.b", k), l.b);
    ckpt.meta[key("fwd.act", k)] = to_string(l.act);
    ckpt.meta[key("fwd.act", k) + ".alpha"] = format_double(l.act.alpha);
  }
}

void add_feedback(Checkpoint& ckpt, const FeedbackPathway& fb) {
  ckpt.meta["fb.kind"] = to_string(kind_of(fb));
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, FixedRandomDirect>) {
          for (std::size_t k = 0; k < p.B.size(); ++k) put(ckpt, key("fb.B", k), p.B[k]);
        } else {
          if constexpr (std::is_same_v<T, LayerwiseFeedback>) {
            ckpt.meta["fb.act"] = to_string(p.act);
            ckpt.meta["fb.act.alpha"] = format_double(p.act.alpha);
          }
          if constexpr (std::is_same_v<T, DirectRHLFeedback> || std::is_same_v<T, DirectRHLRecFeedback>) {
            put(ckpt, "fb.R", p.R);
            put(ckpt, "fb.d", p.d);
          }
          for (std::size_t k = 0; k < p.Q.size(); ++k) {
            put(ckpt, key("fb.Q", k), p.Q[k]);
            if constexpr (std::is_same_v<T, DirectRHLRecFeedback>) put(ckpt, key("fb.S", k), p.S[k]);
            put(ckpt, key("fb.c", k), p.c[k]);
          }
        }
      },
      fb);
}

void add_adam(Checkpoint& ckpt, const std::string& prefix, const AdamState& state) {
  const AdamConfig& c = state.cfg;
  ckpt.meta[prefix + ".lr"] = format_double(c.lr);
  ckpt.meta[prefix + ".beta1"] = format_double(c.beta1);
  ckpt.meta[prefix + ".beta2"] = format_double(c.beta2);
  ckpt.meta[prefix + ".eps"] = format_double(c.eps);
  ckpt.meta[prefix + ".weight_decay"] = format_double(c.weight_decay);
  ckpt.meta[prefix + ".t"] = std::to_string(state.t);
  ckpt.meta[prefix + ".slots"] = std::to_string(state.names.size());
  for (std::size_t k = 0; k < state.names.size(); ++k) {
    ckpt.meta[prefix + ".slot" + std::to_string(k)] = state.names[k];
    put(ckpt, prefix + ".m." + state.names[k], state.m[k]);
    put(ckpt, prefix + ".v." + state.names[k], state.v[k]);
  }
}

ForwardNet network_from(const Checkpoint& ckpt) {
  ForwardNet net;
  const int n = count_prefix(ckpt, "fwd.W");
  for (int k = 0; k < n; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    Layer l;
    l.W = ckpt.at(key("fwd.W", uk));
    l.b = as_vec(ckpt.at(key("fwd.b", uk)), key("fwd.b", uk));
    l.act = act_meta(ckpt, key("fwd.act", uk));
    net.layers.push_back(std::move(l));
  }
  validate(net);
  return net;
}

FeedbackPathway feedback_from(const Checkpoint& ckpt) {
  auto it = ckpt.meta.find("fb.kind");
  if (it == ckpt.meta.end()) throw Error(ErrorCode::ValidationError, "checkpoint has no feedback pathway");
  const FeedbackKind kind = parse_feedback_kind(it->second);
  auto vecs = [&](const std::string& stem) {
    std::vector<Vec> out;
    for (int k = 0; k < count_prefix(ckpt, stem); ++k) {
      const std::string name = key(stem, static_cast<std::size_t>(k));
      out.push_back(as_vec(ckpt.at(name), name));
    }
    return out;
  };
  auto mats = [&](const std::string& stem) {
    std::vector<Mat> out;
    for (int k = 0; k < count_prefix(ckpt, stem); ++k) out.push_back(ckpt.at(key(stem, static_cast<std::size_t>(k))));
    return out;
  };
  switch (kind) {
    case FeedbackKind::Layerwise: return LayerwiseFeedback{mats("fb.Q"), vecs("fb.c"), act_meta(ckpt, "fb.act")};
    case FeedbackKind::DirectLinear: return DirectLinearFeedback{mats("fb.Q"), vecs("fb.c")};
    case FeedbackKind::DirectRHL:
      return DirectRHLFeedback{ckpt.at("fb.R"), as_vec(ckpt.at("fb.d"), "fb.d"), mats("fb.Q"), vecs("fb.c")};
    case FeedbackKind::DirectRHLRec:
      return DirectRHLRecFeedback{ckpt.at("fb.R"), as_vec(ckpt.at("fb.d"), "fb.d"), mats("fb.Q"), mats("fb.S"),
                                  vecs("fb.c")};
    case FeedbackKind::FixedRandomDirect: return FixedRandomDirect{mats("fb.B")};
  }
  throw Error(ErrorCode::VariantMismatch, "unknown feedback kind");
}

AdamState adam_from(const Checkpoint& ckpt, const std::string& prefix) {
  auto get = [&](const std::string& k) {
    auto it = ckpt.meta.find(prefix + "." + k);
    if (it == ckpt.meta.end()) throw Error(ErrorCode::ValidationError, "checkpoint lacks " + prefix + "." + k);
    return it->second;
  };
  AdamState s;
  s.cfg.lr = std::stod(get("lr"));
  s.cfg.beta1 = std::stod(get("beta1"));
  s.cfg.beta2 = std::stod(get("beta2"));
  s.cfg.eps = std::stod(get("eps"));
  s.cfg.weight_decay = std::stod(get("weight_decay"));
  s.t = std::stoll(get("t"));
  const auto slots = std::stoul(get("slots"));
  for (std::size_t k = 0; k < slots; ++k) {
    const std::string name = get("slot" + std::to_string(k));
    s.names.push_back(name);
    s.m.push_back(as_vec(ckpt.at(prefix + ".m." + name), name));
    s.v.push_back(as_vec(ckpt.at(prefix + ".v." + name), name));
  }
  return s;
}

}  // namespace tpgrad
