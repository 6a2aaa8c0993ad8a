#include "tpgrad/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

namespace tpgrad {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& path) {
  if (b.size() < off + 4) throw Error(ErrorCode::TruncatedFile, path + ": header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

Split take_columns(const Split& s, const std::vector<Eigen::Index>& order, std::size_t from, std::size_t count) {
  Split out;
  out.inputs.resize(s.inputs.rows(), static_cast<Eigen::Index>(count));
  out.labels.resize(s.labels.rows(), static_cast<Eigen::Index>(count));
  for (std::size_t k = 0; k < count; ++k) {
    out.inputs.col(static_cast<Eigen::Index>(k)) = s.inputs.col(order[from + k]);
    out.labels.col(static_cast<Eigen::Index>(k)) = s.labels.col(order[from + k]);
  }
  return out;
}

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t k = 0; k < n; ++k) {
    h ^= p[k];
    h *= 0x100000001b3ULL;
  }
}

void fnv_matrix(std::uint64_t& h, const Mat& m) {
  const std::int64_t shape[2] = {m.rows(), m.cols()};
  fnv(h, shape, sizeof(shape));
  fnv(h, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

}  // namespace

ForwardNet make_teacher(const TeacherSpec& spec) {
  if (spec.input_dim <= 0 || spec.output_dim <= 0) throw Error(ErrorCode::ValidationError, "teacher dims must be > 0");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::Index> sizes{spec.input_dim};
  sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
  sizes.push_back(spec.output_dim);
  ForwardNet net;
  for (std::size_t k = 1; k < sizes.size(); ++k) {
    Layer l;
    const double std_dev = spec.weight_scale / std::sqrt(static_cast<double>(sizes[k - 1]));
    l.W.resize(sizes[k], sizes[k - 1]);
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = std_dev * normal(rng);
    l.b = Vec::Zero(sizes[k]);
    l.act = k + 1 == sizes.size() ? Activation::linear() : spec.act;
    net.layers.push_back(std::move(l));
  }
  return net;
}

Dataset gen_teacher_dataset(const TeacherSpec& spec, Eigen::Index n_train, Eigen::Index n_test) {
  const ForwardNet teacher = make_teacher(spec);
  // Inputs come from a separate stream so changing the teacher width does not
  // change the inputs.
  std::mt19937_64 rng(spec.seed ^ 0x5eedda7aULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Eigen::Index n) {
    Split s;
    s.inputs.resize(spec.input_dim, n);
    for (Eigen::Index c = 0; c < n; ++c)
      for (Eigen::Index r = 0; r < spec.input_dim; ++r) s.inputs(r, c) = normal(rng);
    s.labels = forward_from(teacher, 0, s.inputs);
    return s;
  };
  Dataset d;
  d.train = draw(n_train);
  d.test = draw(n_test);
  d.val.inputs.resize(spec.input_dim, 0);
  d.val.labels.resize(spec.output_dim, 0);
  return d;
}

Vec one_hot(Eigen::Index label, Eigen::Index classes) {
  if (label < 0 || label >= classes) throw Error(ErrorCode::IndexOutOfRange, "one_hot: label out of range");
  Vec v = Vec::Zero(classes);
  v(label) = 1.0;
  return v;
}

IdxImages read_idx_images(const std::string& path) {
  const auto bytes = read_file(path);
  if (be32(bytes, 0, path) != kImageMagic) throw Error(ErrorCode::BadMagic, path + ": not an IDX image file");
  const std::uint32_t n = be32(bytes, 4, path);
  IdxImages img;
  img.rows = be32(bytes, 8, path);
  img.cols = be32(bytes, 12, path);
  const std::size_t need = std::size_t{n} * static_cast<std::size_t>(img.rows * img.cols);
  if (bytes.size() < 16 + need) throw Error(ErrorCode::TruncatedFile, path + ": pixel data shorter than header says");
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::string& path) {
  const auto bytes = read_file(path);
  if (be32(bytes, 0, path) != kLabelMagic) throw Error(ErrorCode::BadMagic, path + ": not an IDX label file");
  const std::uint32_t n = be32(bytes, 4, path);
  if (bytes.size() < 8 + std::size_t{n}) throw Error(ErrorCode::TruncatedFile, path + ": label data shorter than header says");
  return {bytes.begin() + 8, bytes.begin() + 8 + n};
}

void write_idx_images(const std::string& path, const IdxImages& images) {
  std::vector<std::uint8_t> b;
  put_be32(b, kImageMagic);
  put_be32(b, static_cast<std::uint32_t>(images.count()));
  put_be32(b, static_cast<std::uint32_t>(images.rows));
  put_be32(b, static_cast<std::uint32_t>(images.cols));
  b.insert(b.end(), images.pixels.begin(), images.pixels.end());
  write_file(path, b);
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b;
  put_be32(b, kLabelMagic);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  write_file(path, b);
}

Split idx_to_split(const IdxImages& images, const std::vector<std::uint8_t>& labels) {
  const Eigen::Index n = images.count();
  if (n != static_cast<Eigen::Index>(labels.size())) {
    throw Error(ErrorCode::CountMismatch, "image and label counts differ");
  }
  const Eigen::Index dim = images.rows * images.cols;
  Split s;
  s.inputs.resize(dim, n);
  s.labels = Mat::Zero(10, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index r = 0; r < dim; ++r) {
      s.inputs(r, c) = images.pixels[static_cast<std::size_t>(c * dim + r)] / 255.0;
    }
    s.labels.col(c) = one_hot(labels[static_cast<std::size_t>(c)], 10);
  }
  return s;
}

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       Eigen::Index train_subset, Eigen::Index val_count, std::uint64_t seed) {
  const Split all = idx_to_split(read_idx_images(images_path), read_idx_labels(labels_path));
  const Eigen::Index n = all.size();
  if (val_count < 0 || train_subset < 0 || val_count > n) {
    throw Error(ErrorCode::CountMismatch, "validation count exceeds the file");
  }
  const Eigen::Index train_n = train_subset == 0 ? n - val_count : train_subset;
  if (val_count + train_n > n) throw Error(ErrorCode::CountMismatch, "train subset plus validation exceeds the file");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Dataset d;
  d.val = take_columns(all, order, 0, static_cast<std::size_t>(val_count));
  d.train = take_columns(all, order, static_cast<std::size_t>(val_count), static_cast<std::size_t>(train_n));
  d.test.inputs.resize(all.inputs.rows(), 0);
  d.test.labels.resize(10, 0);
  return d;
}

std::uint64_t digest(const Dataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Split* s : {&data.train, &data.val, &data.test}) {
    fnv_matrix(h, s->inputs);
    fnv_matrix(h, s->labels);
  }
  return h;
}

}  // namespace tpgrad
