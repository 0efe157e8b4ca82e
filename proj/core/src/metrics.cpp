#include "selfore/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "selfore/clustering.hpp"
#include "selfore/errors.hpp"

namespace selfore {
namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DataError(std::string(what) + ": partitions differ in length (" + std::to_string(a) +
                    " vs " + std::to_string(b) + ")");
  }
}

struct Contingency {
  std::vector<std::vector<double>> table;  // cluster x class counts
  std::vector<double> cluster_sizes;
  std::vector<double> class_sizes;
  double n = 0.0;
};

Contingency contingency(std::span<const int> pred, std::span<const int> gold) {
  const Partition c = dense_relabel(pred);
  const Partition g = dense_relabel(gold);
  const int nc = c.empty() ? 0 : *std::max_element(c.begin(), c.end()) + 1;
  const int ng = g.empty() ? 0 : *std::max_element(g.begin(), g.end()) + 1;
  Contingency t;
  t.table.assign(static_cast<std::size_t>(nc), std::vector<double>(static_cast<std::size_t>(ng), 0.0));
  t.cluster_sizes.assign(static_cast<std::size_t>(nc), 0.0);
  t.class_sizes.assign(static_cast<std::size_t>(ng), 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    t.table[static_cast<std::size_t>(c[i])][static_cast<std::size_t>(g[i])] += 1.0;
    t.cluster_sizes[static_cast<std::size_t>(c[i])] += 1.0;
    t.class_sizes[static_cast<std::size_t>(g[i])] += 1.0;
  }
  t.n = static_cast<double>(c.size());
  return t;
}

double entropy(const std::vector<double>& sizes, double n) {
  double h = 0.0;
  for (double s : sizes) {
    if (s > 0.0) h -= (s / n) * std::log(s / n);
  }
  return h;
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

Partition dense_relabel(std::span<const int> ids) {
  std::unordered_map<int, int> map;
  Partition out;
  out.reserve(ids.size());
  for (int id : ids) {
    const auto it = map.try_emplace(id, static_cast<int>(map.size())).first;
    out.push_back(it->second);
  }
  return out;
}

Partition encode_labels(std::span<const std::string> labels, std::vector<std::string>* names) {
  std::unordered_map<std::string, int> map;
  Partition out;
  out.reserve(labels.size());
  if (names) names->clear();
  for (const auto& l : labels) {
    const auto [it, fresh] = map.try_emplace(l, static_cast<int>(map.size()));
    if (fresh && names) names->push_back(l);
    out.push_back(it->second);
  }
  return out;
}

double harmonic_mean(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

PrecisionRecall b_cubed(std::span<const int> pred, std::span<const int> gold) {
  require_same_length(pred.size(), gold.size(), "b_cubed");
  if (pred.empty()) throw DataError("b_cubed: empty partition");
  const Contingency t = contingency(pred, gold);
  // Sum over elements of |cluster & class| / |cluster| equals, per cell,
  // count^2 / |cluster|.
  double precision = 0.0;
  double recall = 0.0;
  for (std::size_t c = 0; c < t.table.size(); ++c) {
    for (std::size_t g = 0; g < t.class_sizes.size(); ++g) {
      const double cell = t.table[c][g];
      if (cell == 0.0) continue;
      precision += cell * cell / t.cluster_sizes[c];
      recall += cell * cell / t.class_sizes[g];
    }
  }
  PrecisionRecall r;
  r.precision = precision / t.n;
  r.recall = recall / t.n;
  r.f1 = harmonic_mean(r.precision, r.recall);
  return r;
}

VMeasure v_measure(std::span<const int> pred, std::span<const int> gold,
                   VMeasureOrientation orientation) {
  require_same_length(pred.size(), gold.size(), "v_measure");
  if (pred.empty()) throw DataError("v_measure: empty partition");
  const Contingency t = contingency(pred, gold);
  const double h_c = entropy(t.cluster_sizes, t.n);
  const double h_g = entropy(t.class_sizes, t.n);
  double h_g_given_c = 0.0;
  double h_c_given_g = 0.0;
  for (std::size_t c = 0; c < t.table.size(); ++c) {
    for (std::size_t g = 0; g < t.class_sizes.size(); ++g) {
      const double cell = t.table[c][g];
      if (cell == 0.0) continue;
      h_g_given_c -= (cell / t.n) * std::log(cell / t.cluster_sizes[c]);
      h_c_given_g -= (cell / t.n) * std::log(cell / t.class_sizes[g]);
    }
  }
  VMeasure v;
  v.homogeneity = h_g > 0.0 ? 1.0 - h_g_given_c / h_g : 1.0;
  v.completeness = h_c > 0.0 ? 1.0 - h_c_given_g / h_c : 1.0;
  if (orientation == VMeasureOrientation::swapped) std::swap(v.homogeneity, v.completeness);
  v.f1 = harmonic_mean(v.homogeneity, v.completeness);
  return v;
}

double adjusted_rand_index(std::span<const int> pred, std::span<const int> gold) {
  require_same_length(pred.size(), gold.size(), "adjusted_rand_index");
  if (pred.size() < 2) throw DataError("adjusted_rand_index: needs at least two elements");
  const Contingency t = contingency(pred, gold);
  double index = 0.0;
  for (const auto& row : t.table) {
    for (double cell : row) index += choose2(cell);
  }
  double sum_c = 0.0;
  double sum_g = 0.0;
  for (double s : t.cluster_sizes) sum_c += choose2(s);
  for (double s : t.class_sizes) sum_g += choose2(s);
  const double expected = sum_c * sum_g / choose2(t.n);
  const double max_index = 0.5 * (sum_c + sum_g);
  if (max_index == expected) return 1.0;  // both trivial (all one cluster or all singletons)
  return (index - expected) / (max_index - expected);
}

MajorityMap majority_map(std::span<const int> pred, std::span<const std::string> gold) {
  require_same_length(pred.size(), gold.size(), "majority_map");
  std::map<int, std::map<std::string, std::size_t>> counts;
  for (std::size_t i = 0; i < pred.size(); ++i) ++counts[pred[i]][gold[i]];
  MajorityMap m;
  for (const auto& [cluster, labels] : counts) {
    // std::map iterates labels in lexicographic order, so the first maximum
    // is the smallest label among ties.
    const std::string* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [label, count] : labels) {
      if (count > best_count) {
        best = &label;
        best_count = count;
      }
    }
    m.cluster_label[cluster] = *best;
  }
  std::size_t hits = 0;
  m.predicted.reserve(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    m.predicted.push_back(m.cluster_label.at(pred[i]));
    hits += m.predicted.back() == gold[i];
  }
  m.accuracy = pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
  return m;
}

MergeResult merge_clusters(const Dense2D& centroids, std::span<const int> labels, int k,
                           std::uint64_t seed, int restarts) {
  if (centroids.rows() < k) {
    throw DataError("merge_clusters: " + std::to_string(centroids.rows()) +
                    " clusters cannot be merged into " + std::to_string(k));
  }
  MergeResult r;
  r.centroid_group = kmeans(centroids, k, seed, 100, restarts).assignment;
  r.labels.reserve(labels.size());
  for (int l : labels) {
    if (l < 0 || l >= centroids.rows()) throw DataError("merge_clusters: label out of range");
    r.labels.push_back(r.centroid_group[static_cast<std::size_t>(l)]);
  }
  return r;
}

EvalReport evaluate(std::span<const int> pred, std::span<const std::string> gold,
                    VMeasureOrientation orientation) {
  const Partition g = encode_labels(gold);
  EvalReport r;
  r.b3 = b_cubed(pred, g);
  r.v = v_measure(pred, g, orientation);
  r.ari = pred.size() >= 2 ? adjusted_rand_index(pred, g) : 1.0;
  r.majority = majority_map(pred, gold);
  return r;
}

void write_report(std::ostream& out, const EvalReport& r, const std::string& prefix) {
  auto line = [&](const char* key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out << prefix << key << '=' << buf << '\n';
  };
  line("b3_precision", r.b3.precision);
  line("b3_recall", r.b3.recall);
  line("b3_f1", r.b3.f1);
  line("homogeneity", r.v.homogeneity);
  line("completeness", r.v.completeness);
  line("v_f1", r.v.f1);
  line("ari", r.ari);
  line("majority_accuracy", r.majority.accuracy);
}

}  // namespace selfore
