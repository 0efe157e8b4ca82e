#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "selfore/numerics.hpp"
#include "selfore/tensor_io.hpp"

namespace selfore {

struct KMeansResult {
  Dense2D centroids;                    // K x d
  std::vector<int> assignment;          // nearest centroid per point
  double objective = 0.0;               // sum of squared distances
  std::vector<double> objective_trace;  // after every Lloyd iteration
  int iterations = 0;
  bool degenerate = false;              // fewer distinct points than K
};

/// Squared Euclidean distances, N x K.
Dense2D squared_distances(const Dense2D& points, const Dense2D& centroids);

/// Lloyd's algorithm from k-means++ seeding. With restarts > 1 the best
/// objective over independent seedings wins. Empty clusters are re-seeded
/// with the point farthest from its centroid. Throws DataError when N < K.
KMeansResult kmeans(const Dense2D& points, int k, std::uint64_t seed, int max_iters = 100,
                    int restarts = 1);

/// Lloyd's algorithm from the given centroids.
KMeansResult kmeans_from(const Dense2D& points, Dense2D centroids, int max_iters = 100);

struct ClusterModel {
  std::vector<LinearLayer> phi;  // latent map g_phi
  Dense2D centroids;             // K x h_AC
  double alpha = 1.0;
  ColumnScaler input;            // applied to h before phi

  int k() const { return static_cast<int>(centroids.rows()); }
  Dense2D embed(const Dense2D& features) const;
};

void save_cluster_model(TensorBundle& bundle, const std::string& prefix, const ClusterModel& m);
ClusterModel load_cluster_model(const TensorBundle& bundle, const std::string& prefix);

struct SoftAssignment {
  Dense2D q;  // N x K, rows sum to 1
};

struct TargetDistribution {
  Dense2D p;  // N x K, rows sum to 1
  Vector f;   // soft cluster frequencies
};

struct PseudoLabels {
  std::vector<int> labels;
  int epoch = 0;
};

/// Student-t kernel (1 + |z - mu|^2 / alpha)^(-(alpha+1)/2), row-normalized.
SoftAssignment soft_assign(const Dense2D& z, const Dense2D& centroids, double alpha = 1.0);
SoftAssignment soft_assign(const ClusterModel& model, const Dense2D& z);

/// p_nk = (q_nk^2 / f_k) / sum_k' (q_nk'^2 / f_k'), f_k = sum_n q_nk.
TargetDistribution target_distribution(const SoftAssignment& q);

/// sum_n sum_k p ln(p / q), with 0 ln 0 = 0.
double kl_loss(const Dense2D& p, const Dense2D& q);

struct KlGradients {
  double loss = 0.0;
  Dense2D grad_z;   // N x h
  Dense2D grad_mu;  // K x h
};

/// KL(P || Q(z, mu)) with P held constant, and its gradients.
KlGradients kl_loss_and_grad(const Dense2D& z, const Dense2D& centroids, const Dense2D& p,
                             double alpha = 1.0);

/// Row-wise argmax; ties go to the lowest index.
PseudoLabels pseudo_labels(const Dense2D& p);
PseudoLabels pseudo_labels(const TargetDistribution& target);

/// Fraction of rows whose largest entry is at least `threshold`.
double confident_fraction(const Dense2D& q, double threshold = 0.9);

struct FitConfig {
  int k = 10;
  int epochs = 50;
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  int kmeans_restarts = 10;
  int kmeans_max_iters = 100;
  int max_reselections = 5;
  /// Warm start. Kept even when the first epoch raises L_AC; centroid
  /// re-selection applies to k-means seeded starts only.
  std::optional<Dense2D> initial_centroids;
};

struct EpochDiagnostics {
  int epoch = 0;               // 0 = initialization
  double loss = 0.0;           // KL(P_e || Q_e), P_e refreshed from Q_e
  double label_change = 0.0;   // vs previous epoch's labels
  double f_min = 0.0;
  double f_max = 0.0;
  double confident = 0.0;      // share of rows with max q >= 0.9
};

struct FitResult {
  ClusterModel model;
  PseudoLabels labels;
  TargetDistribution target;
  std::vector<EpochDiagnostics> history;
  int reselections = 0;
  double first_epoch_start_loss = 0.0;  // KL(P_0 || Q_0) of the kept attempt
  double first_epoch_end_loss = 0.0;    // KL(P_0 || Q_1)
};

/// Adaptive clustering. Embeds the features with phi, seeds centroids with
/// k-means (or the warm start), then minimizes KL(P || Q) over phi and the
/// centroids with mini-batch Adam, refreshing P from the full data at the
/// start of every epoch. If the loss has not decreased after the first
/// epoch, centroids are re-drawn and phi reset, at most max_reselections
/// times; after that the attempt with the lowest first-epoch loss continues.
FitResult fit(std::vector<LinearLayer> phi, const Dense2D& features, const FitConfig& cfg);

/// One line per epoch: epoch, L_AC, label-change fraction, min/max f_k.
void write_diagnostics(std::ostream& out, std::span<const EpochDiagnostics> history);

}  // namespace selfore
