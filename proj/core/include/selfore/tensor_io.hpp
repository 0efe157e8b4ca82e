#pragma once

// Binary containers, little-endian throughout.
//
// Feature file:  "SORE" | u32 version=1 | u64 N | u64 D | N*D f32 row-major
//                | N x (u32 length, UTF-8 bytes) ids in row order
// Tensor file:   4-byte magic | u32 version=1 | u64 count
//                | count x (u32 name length, name bytes, u64 rank,
//                           rank x u64 dims, prod(dims) x f64)

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "selfore/numerics.hpp"

namespace selfore {

using Magic = std::array<char, 4>;

inline constexpr Magic kFeatureMagic{'S', 'O', 'R', 'E'};
inline constexpr Magic kAutoencoderMagic{'S', 'A', 'E', 'C'};
inline constexpr Magic kClassifierMagic{'S', 'C', 'L', 'F'};
inline constexpr Magic kEncoderMagic{'S', 'E', 'N', 'C'};
inline constexpr Magic kRunStateMagic{'S', 'R', 'U', 'N'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct FeatureFile {
  std::vector<float> values;  // N*D row-major
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::vector<std::string> ids;
};

void write_feature_file(const std::filesystem::path& path, const FeatureFile& file);
/// Narrows to f32 on write.
void write_feature_file(const std::filesystem::path& path, const Dense2D& matrix,
                        const std::vector<std::string>& ids);
/// Throws DataError on magic/version mismatch, truncation, or non-finite
/// entries.
FeatureFile read_feature_file(const std::filesystem::path& path);

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

/// Ordered bag of named f64 tensors.
class TensorBundle {
 public:
  void put(const std::string& name, const Dense2D& m);
  void put(const std::string& name, const Vector& v);
  void put_scalar(const std::string& name, double value);
  void put_ints(const std::string& name, const std::vector<int>& values);
  void put_raw(const std::string& name, Tensor tensor);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  /// Each getter throws DataError when the entry is missing or has the
  /// wrong rank.
  Dense2D matrix(const std::string& name) const;
  Vector vector(const std::string& name) const;
  double scalar(const std::string& name) const;
  std::vector<int> ints(const std::string& name) const;
  const Tensor& raw(const std::string& name) const;

  const std::map<std::string, Tensor>& entries() const { return tensors_; }

 private:
  std::map<std::string, Tensor> tensors_;
};

void write_tensor_file(const std::filesystem::path& path, Magic magic, const TensorBundle& bundle);
TensorBundle read_tensor_file(const std::filesystem::path& path, Magic magic);

/// Reads only the 4-byte magic; throws DataError if the file is shorter.
Magic peek_magic(const std::filesystem::path& path);

}  // namespace selfore
