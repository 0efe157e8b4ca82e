#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "selfore/corpus.hpp"
#include "selfore/numerics.hpp"
#include "selfore/tensor_io.hpp"

namespace selfore {

/// N x D relation representations, one row per sentence.
using FeatureMatrix = Dense2D;

/// Feature rows keyed by sentence id.
class FeatureStore {
 public:
  FeatureStore() = default;
  FeatureStore(FeatureMatrix matrix, std::vector<std::string> ids);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(matrix_.cols()); }
  const FeatureMatrix& matrix() const { return matrix_; }
  const std::vector<std::string>& ids() const { return ids_; }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  std::size_t row_of(const std::string& id) const;

  /// Rows for the given sentences, in their order.
  FeatureMatrix gather(std::span<const MarkedSentence> sentences) const;

 private:
  FeatureMatrix matrix_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Reads a feature file and aligns it to the corpus order. Throws DataError
/// listing ids the file lacks.
FeatureStore load_features(const std::filesystem::path& path, const Corpus& corpus);
FeatureStore load_features(const std::filesystem::path& path);
void save_features(const std::filesystem::path& path, const FeatureStore& store);

struct BuiltinEncoderConfig {
  std::size_t hidden = 64;        // h_R; features have 2 * hidden columns
  std::size_t buckets = 50021;    // hashed vocabulary size
  std::size_t max_length = 128;
  double embedding_std = 1.0;
  std::uint64_t seed = 0;
};

/// Token id: markers get dedicated rows after the hash buckets.
std::size_t token_index(std::string_view token, std::size_t buckets);

/// Desk-scale trainable relation encoder: hashed token embeddings, one
/// single-head self-attention block with a residual connection, and a
/// residual position-wise relu feed-forward layer. A sentence's feature is
/// the block output at [E1_start] concatenated with the output at
/// [E2_start]. Only those two query rows are ever computed.
class BuiltinEncoder {
 public:
  struct Params {
    Dense2D embedding;  // (buckets + 4) x hidden
    Dense2D query;      // hidden x hidden, applied as x * W
    Dense2D key;
    Dense2D value;
    Dense2D ff_weight;
    Vector ff_bias;
  };

  explicit BuiltinEncoder(const BuiltinEncoderConfig& config);
  BuiltinEncoder(const BuiltinEncoderConfig& config, Params params);

  const BuiltinEncoderConfig& config() const { return config_; }
  std::size_t dim() const { return 2 * config_.hidden; }
  const Params& params() const { return params_; }
  Params& mutable_params() { return params_; }

  /// Inference; pure in the parameters. Uses up to `threads` workers, each
  /// writing disjoint rows.
  FeatureMatrix encode(std::span<const MarkedSentence> batch, std::size_t threads = 1) const;

  /// Forward pass that records what backward() needs.
  FeatureMatrix forward_train(std::span<const MarkedSentence> batch);
  /// Accumulates parameter gradients for the last forward_train batch.
  void backward(const Dense2D& grad_features);
  void zero_grad();
  const Params& grads() const { return grads_; }

  /// Applies an optimizer step unless frozen. Returns true when parameters
  /// changed.
  bool apply(Adam& optimizer);

  void freeze() { frozen_ = true; }
  void unfreeze() { frozen_ = false; }
  bool frozen() const { return frozen_; }

  /// Incremented on every parameter update; lets callers assert that
  /// features were computed from the latest parameters.
  std::uint64_t version() const { return version_; }
  void set_version(std::uint64_t v) { version_ = v; }

  /// Every parameter as a flat span, in a fixed order.
  std::vector<std::span<double>> flat_params();

  void save(TensorBundle& bundle, const std::string& prefix) const;
  static BuiltinEncoder load(const TensorBundle& bundle, const std::string& prefix);

 private:
  struct SentenceTape {
    std::vector<std::size_t> ids;
    Dense2D x;       // T x h embeddings
    Dense2D keys;    // T x h
    Dense2D values;  // T x h
    std::array<std::size_t, 2> pos{};
    std::array<Eigen::RowVectorXd, 2> q, attn, y, pre;
  };

  void check(const MarkedSentence& s) const;
  void forward_one(const MarkedSentence& s, SentenceTape& tape) const;
  Eigen::RowVectorXd readout(const SentenceTape& tape, int which) const;

  BuiltinEncoderConfig config_;
  Params params_;
  Params grads_;
  std::vector<SentenceTape> tape_;
  std::vector<std::size_t> touched_;  // embedding rows with nonzero grad
  bool frozen_ = false;
  std::uint64_t version_ = 0;
};

}  // namespace selfore
