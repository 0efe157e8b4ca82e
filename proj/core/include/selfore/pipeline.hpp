#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "selfore/autoencoder.hpp"
#include "selfore/classifier.hpp"
#include "selfore/clustering.hpp"
#include "selfore/corpus.hpp"
#include "selfore/encoder.hpp"
#include "selfore/metrics.hpp"
#include "selfore/surface.hpp"

namespace selfore {

enum class LoopMode { full, no_classification, no_adaptive_clustering };
/// raw: share of positions whose cluster id changed. partition: share of
/// element pairs the two partitions disagree on (1 - Rand index), which is
/// invariant to relabeling.
enum class DeltaKind { raw, partition };

std::string to_string(LoopMode mode);
LoopMode parse_loop_mode(const std::string& s);
std::string to_string(DeltaKind kind);
DeltaKind parse_delta_kind(const std::string& s);

struct LoopConfig {
  int k = 10;
  int k_hat = 0;  // 0: cluster with k directly
  int max_loops = 20;
  double stop_threshold = 0.10;
  std::uint64_t seed = 0;
  LoopMode mode = LoopMode::full;
  DeltaKind delta = DeltaKind::raw;
  VMeasureOrientation orientation = VMeasureOrientation::standard;
  std::size_t threads = 1;
  PretrainConfig autoencoder;
  FitConfig clustering;  // k, seed and warm start are filled in per pass
  TrainSchedule classifier;
  double classifier_dropout = 0.1;
  std::size_t names_n_min = 1;
  std::size_t names_n_max = 4;

  int cluster_count() const { return k_hat > 0 ? k_hat : k; }
  /// Throws UsageError on an invalid combination.
  void validate() const;
  /// Flat key=value rendering of every field; the basis of hash().
  std::string describe() const;
  std::uint64_t hash() const;
};

/// Fraction of disagreement between consecutive pseudo-label vectors.
/// Throws DataError on a length mismatch.
double label_delta(std::span<const int> prev, std::span<const int> curr,
                   DeltaKind kind = DeltaKind::raw);

struct Snapshot {
  int iteration = 0;
  std::uint64_t feature_version = 0;
  std::uint64_t config_hash = 0;
  double label_delta = 1.0;  // vs the previous pass; 1 for the first pass
  int reselections = 0;
  std::optional<EvalReport> report;      // pseudo-labels vs gold
  std::optional<EvalReport> merged;      // after K-hat -> K merging
  std::optional<EvalReport> validation;  // classifier predictions on held-out data
};

struct LoopState {
  int iteration = 0;  // completed classify-then-cluster rounds
  std::vector<std::vector<int>> label_history;  // one entry per clustering pass
  std::vector<Snapshot> snapshots;
  bool converged = false;
};

using EncoderBackend = std::variant<BuiltinEncoder, FeatureStore>;

struct RunOptions {
  std::optional<std::filesystem::path> run_dir;
  /// Checkpoint (iter_NNN/state.ckpt) to continue from.
  std::optional<std::filesystem::path> resume_from;
  /// Return after this many rounds even if not converged; simulates an
  /// interrupted run. Negative: no limit.
  int stop_after = -1;
};

struct RunResult {
  LoopState state;
  std::vector<int> final_labels;
  std::vector<int> merged_labels;  // empty unless k_hat is set
  ClusterModel cluster;
  AutoencoderParams autoencoder;
  std::optional<ClassifierParams> classifier;
  std::map<int, RelationName> names;
};

/// The self-supervision loop. Encodes every training sentence, pretrains
/// the autoencoder once, clusters, then repeats {train the classifier on the
/// pseudo-labels (updating the encoder), re-encode, re-cluster from the
/// previous centroids} until fewer than stop_threshold labels change or
/// max_loops rounds have run.
class Pipeline {
 public:
  Pipeline(LoopConfig config, std::vector<MarkedSentence> train,
           std::vector<MarkedSentence> validation, EncoderBackend backend);

  RunResult run(const RunOptions& options = {});

  const EncoderBackend& backend() const { return backend_; }
  const LoopConfig& config() const { return config_; }

 private:
  struct State {
    LoopState loop;
    AutoencoderParams autoencoder;
    ClusterModel cluster;
    std::optional<ClassifierParams> classifier;
  };

  Dense2D features(std::span<const MarkedSentence> sentences) const;
  std::uint64_t feature_version() const;
  void cluster_pass(State& state, const Dense2D& features, std::uint64_t version,
                    const std::optional<std::filesystem::path>& dir);
  void classify(State& state);
  Snapshot evaluate_pass(const State& state, int iteration, std::uint64_t version, double delta,
                         int reselections) const;
  void save_checkpoint(const std::filesystem::path& path, const State& state) const;
  State load_checkpoint(const std::filesystem::path& path);
  void write_outputs(const std::filesystem::path& dir, const RunResult& result) const;

  LoopConfig config_;
  std::vector<MarkedSentence> train_;
  std::vector<MarkedSentence> validation_;
  std::vector<std::string> gold_;
  EncoderBackend backend_;
};

/// Writes the EvalReport history as key=value lines.
void write_final_report(std::ostream& out, const LoopConfig& config, const RunResult& result);

}  // namespace selfore
