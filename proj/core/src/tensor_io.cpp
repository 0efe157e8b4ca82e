#include "selfore/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "selfore/errors.hpp"

namespace selfore {
namespace {

class Writer {
 public:
  template <typename T>
  void scalar(T v) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    auto bits = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buf_.push_back(static_cast<char>(bits & 0xffu));
      bits >>= 8;
    }
  }
  void bytes(std::string_view s) { buf_.append(s); }
  void string(std::string_view s) {
    scalar(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void flush(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw DataError("write failed for " + path.string());
  }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  template <typename T>
  T scalar() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    need(sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = buf_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::string string() { return bytes(scalar<std::uint32_t>()); }
  std::size_t remaining() const { return buf_.size() - pos_; }

  void expect_header(Magic magic) {
    const std::string got = bytes(4);
    if (std::memcmp(got.data(), magic.data(), 4) != 0) {
      throw DataError(path_.string() + ": bad magic '" + got + "', expected '" +
                      std::string(magic.data(), 4) + "'");
    }
    const auto version = scalar<std::uint32_t>();
    if (version != kFormatVersion) {
      throw DataError(path_.string() + ": unsupported version " + std::to_string(version));
    }
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw DataError(path_.string() + ": truncated file");
  }

  std::filesystem::path path_;
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_feature_file(const std::filesystem::path& path, const FeatureFile& file) {
  if (file.values.size() != file.rows * file.cols || file.ids.size() != file.rows) {
    throw ShapeError("feature file: header does not match payload");
  }
  Writer w;
  w.bytes({kFeatureMagic.data(), 4});
  w.scalar(kFormatVersion);
  w.scalar(file.rows);
  w.scalar(file.cols);
  for (float v : file.values) w.scalar(v);
  for (const auto& id : file.ids) w.string(id);
  w.flush(path);
}

void write_feature_file(const std::filesystem::path& path, const Dense2D& matrix,
                        const std::vector<std::string>& ids) {
  FeatureFile f;
  f.rows = static_cast<std::uint64_t>(matrix.rows());
  f.cols = static_cast<std::uint64_t>(matrix.cols());
  f.values.reserve(static_cast<std::size_t>(matrix.size()));
  for (Eigen::Index i = 0; i < matrix.size(); ++i) {
    f.values.push_back(static_cast<float>(matrix.data()[i]));
  }
  f.ids = ids;
  write_feature_file(path, f);
}

FeatureFile read_feature_file(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_header(kFeatureMagic);
  FeatureFile f;
  f.rows = r.scalar<std::uint64_t>();
  f.cols = r.scalar<std::uint64_t>();
  if (f.cols == 0) throw DataError(path.string() + ": zero feature dimension");
  if (f.rows > r.remaining() / 4 / f.cols) throw DataError(path.string() + ": truncated file");
  f.values.resize(f.rows * f.cols);
  for (auto& v : f.values) {
    v = r.scalar<float>();
    if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite feature value");
  }
  f.ids.reserve(f.rows);
  for (std::uint64_t i = 0; i < f.rows; ++i) f.ids.push_back(r.string());
  if (r.remaining() != 0) throw DataError(path.string() + ": trailing bytes after ids");
  return f;
}

void TensorBundle::put(const std::string& name, const Dense2D& m) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  tensors_[name] = std::move(t);
}

void TensorBundle::put(const std::string& name, const Vector& v) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  tensors_[name] = std::move(t);
}

void TensorBundle::put_scalar(const std::string& name, double value) {
  tensors_[name] = Tensor{{}, {value}};
}

void TensorBundle::put_ints(const std::string& name, const std::vector<int>& values) {
  Tensor t;
  t.dims = {values.size()};
  t.data.assign(values.begin(), values.end());
  tensors_[name] = std::move(t);
}

void TensorBundle::put_raw(const std::string& name, Tensor tensor) {
  tensors_[name] = std::move(tensor);
}

const Tensor& TensorBundle::raw(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw DataError("checkpoint lacks tensor '" + name + "'");
  return it->second;
}

Dense2D TensorBundle::matrix(const std::string& name) const {
  const Tensor& t = raw(name);
  if (t.dims.size() != 2) throw DataError("tensor '" + name + "' is not a matrix");
  Dense2D m(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
  std::copy(t.data.begin(), t.data.end(), m.data());
  return m;
}

Vector TensorBundle::vector(const std::string& name) const {
  const Tensor& t = raw(name);
  if (t.dims.size() != 1) throw DataError("tensor '" + name + "' is not a vector");
  Vector v(static_cast<Eigen::Index>(t.dims[0]));
  std::copy(t.data.begin(), t.data.end(), v.data());
  return v;
}

double TensorBundle::scalar(const std::string& name) const {
  const Tensor& t = raw(name);
  if (!t.dims.empty()) throw DataError("tensor '" + name + "' is not a scalar");
  return t.data.at(0);
}

std::vector<int> TensorBundle::ints(const std::string& name) const {
  const Tensor& t = raw(name);
  if (t.dims.size() != 1) throw DataError("tensor '" + name + "' is not a vector");
  std::vector<int> out;
  out.reserve(t.data.size());
  for (double d : t.data) out.push_back(static_cast<int>(d));
  return out;
}

void write_tensor_file(const std::filesystem::path& path, Magic magic, const TensorBundle& bundle) {
  Writer w;
  w.bytes({magic.data(), 4});
  w.scalar(kFormatVersion);
  w.scalar(static_cast<std::uint64_t>(bundle.entries().size()));
  for (const auto& [name, t] : bundle.entries()) {
    w.string(name);
    w.scalar(static_cast<std::uint64_t>(t.dims.size()));
    for (auto d : t.dims) w.scalar(d);
    for (double v : t.data) w.scalar(v);
  }
  w.flush(path);
}

TensorBundle read_tensor_file(const std::filesystem::path& path, Magic magic) {
  Reader r(path);
  r.expect_header(magic);
  const auto count = r.scalar<std::uint64_t>();
  TensorBundle bundle;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.string();
    Tensor t;
    const auto rank = r.scalar<std::uint64_t>();
    if (rank > 8) throw DataError(path.string() + ": implausible tensor rank");
    std::uint64_t total = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.scalar<std::uint64_t>());
      total *= t.dims.back();
    }
    if (total > r.remaining() / 8) throw DataError(path.string() + ": truncated file");
    t.data.resize(total);
    for (auto& v : t.data) v = r.scalar<double>();
    bundle.put_raw(name, std::move(t));
  }
  if (r.remaining() != 0) throw DataError(path.string() + ": trailing bytes");
  return bundle;
}

Magic peek_magic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Magic m{};
  if (!in.read(m.data(), 4)) throw DataError(path.string() + ": truncated file");
  return m;
}

}  // namespace selfore
