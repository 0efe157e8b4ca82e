#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "selfore/numerics.hpp"

namespace selfore {

/// Cluster or class id per element.
using Partition = std::vector<int>;

/// Maps arbitrary ids onto 0..m-1 in order of first appearance.
Partition dense_relabel(std::span<const int> ids);
/// Maps label strings onto dense ids in order of first appearance; `names`
/// receives the id -> string table.
Partition encode_labels(std::span<const std::string> labels, std::vector<std::string>* names = nullptr);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct VMeasure {
  double homogeneity = 0.0;
  double completeness = 0.0;
  double f1 = 0.0;
};

/// Which conditional entropy each V-measure component uses. `standard`:
/// homogeneity = 1 - H(G|C)/H(G), completeness = 1 - H(C|G)/H(C).
/// `swapped` exchanges the two.
enum class VMeasureOrientation { standard, swapped };

double harmonic_mean(double a, double b);

/// Element-wise B-cubed; each element counts itself as a pair partner.
PrecisionRecall b_cubed(std::span<const int> pred, std::span<const int> gold);

/// Entropy-based homogeneity/completeness, natural log. A 0/0 component is 1.
VMeasure v_measure(std::span<const int> pred, std::span<const int> gold,
                   VMeasureOrientation orientation = VMeasureOrientation::standard);

/// Adjusted Rand index from the contingency table. Requires N >= 2.
double adjusted_rand_index(std::span<const int> pred, std::span<const int> gold);

struct MajorityMap {
  std::map<int, std::string> cluster_label;  // modal gold label per cluster
  std::vector<std::string> predicted;        // mapped label per element
  double accuracy = 0.0;
};

/// Modal gold label per predicted cluster; ties go to the lexicographically
/// smallest label.
MajorityMap majority_map(std::span<const int> pred, std::span<const std::string> gold);

struct MergeResult {
  std::vector<int> centroid_group;  // original cluster -> merged cluster
  Partition labels;                 // merged label per element
};

/// Groups K-hat centroids into K super-clusters with k-means, then relabels
/// every element through its original cluster. Throws DataError if K-hat < K.
MergeResult merge_clusters(const Dense2D& centroids, std::span<const int> labels, int k,
                           std::uint64_t seed, int restarts = 10);

struct EvalReport {
  PrecisionRecall b3;
  VMeasure v;
  double ari = 0.0;
  MajorityMap majority;
};

EvalReport evaluate(std::span<const int> pred, std::span<const std::string> gold,
                    VMeasureOrientation orientation = VMeasureOrientation::standard);

/// One `key=value` line per metric with six decimals; keys get `prefix`.
void write_report(std::ostream& out, const EvalReport& report, const std::string& prefix = "");

}  // namespace selfore
