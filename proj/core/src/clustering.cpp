#include "selfore/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "selfore/autoencoder.hpp"
#include "selfore/errors.hpp"
#include "selfore/log.hpp"

namespace selfore {

Dense2D squared_distances(const Dense2D& points, const Dense2D& centroids) {
  if (points.cols() != centroids.cols()) throw ShapeError("squared_distances: dimension mismatch");
  Dense2D d = -2.0 * points * centroids.transpose();
  d.colwise() += points.rowwise().squaredNorm();
  d.rowwise() += centroids.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

namespace {

Dense2D kmeans_pp_seed(const Dense2D& points, int k, Rng& rng, bool& degenerate) {
  const auto n = points.rows();
  Dense2D centroids(k, points.cols());
  centroids.row(0) = points.row(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n))));
  Eigen::VectorXd best = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = best.sum();
    Eigen::Index pick = 0;
    if (!(total > 0.0)) {
      degenerate = true;
      pick = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
    } else {
      double target = uniform01(rng) * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= best[i];
        if (target < 0.0 && best[i] > 0.0) {
          pick = i;
          break;
        }
      }
      while (best[pick] <= 0.0 && pick > 0) --pick;
    }
    centroids.row(c) = points.row(pick);
    best = best.cwiseMin((points.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans_from(const Dense2D& points, Dense2D centroids, int max_iters) {
  const auto n = points.rows();
  const auto k = centroids.rows();
  if (n < k) throw DataError("kmeans: fewer points than clusters");
  if (k < 1) throw DataError("kmeans: need at least one cluster");
  if (points.cols() != centroids.cols()) throw ShapeError("kmeans: centroid dimension mismatch");

  KMeansResult r;
  r.assignment.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int it = 0; it < std::max(1, max_iters); ++it) {
    const Dense2D d = squared_distances(points, centroids);
    bool changed = false;
    double objective = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index arg = 0;
      const double best = d.row(i).minCoeff(&arg);
      dist[static_cast<std::size_t>(i)] = best;
      objective += best;
      if (r.assignment[static_cast<std::size_t>(i)] != static_cast<int>(arg)) {
        r.assignment[static_cast<std::size_t>(i)] = static_cast<int>(arg);
        changed = true;
      }
    }
    r.objective = objective;
    r.objective_trace.push_back(objective);
    r.iterations = it + 1;
    if (!changed && it > 0) break;

    Dense2D sums = Dense2D::Zero(k, points.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = r.assignment[static_cast<std::size_t>(i)];
      sums.row(a) += points.row(i);
      ++counts[static_cast<std::size_t>(a)];
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      const auto far = static_cast<Eigen::Index>(
          std::max_element(dist.begin(), dist.end()) - dist.begin());
      centroids.row(c) = points.row(far);
      dist[static_cast<std::size_t>(far)] = -1.0;
    }
  }
  r.centroids = std::move(centroids);
  return r;
}

KMeansResult kmeans(const Dense2D& points, int k, std::uint64_t seed, int max_iters,
                    int restarts) {
  if (k < 1) throw DataError("kmeans: need at least one cluster");
  if (points.rows() < k) {
    throw DataError("kmeans: " + std::to_string(points.rows()) + " points cannot form " +
                    std::to_string(k) + " clusters");
  }
  if (points.cols() < 1) throw DataError("kmeans: zero-dimensional points");
  KMeansResult best;
  bool have = false;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    Rng rng(derive_seed(seed, 0x6b6d, static_cast<std::uint64_t>(r)));
    bool degenerate = false;
    Dense2D init = kmeans_pp_seed(points, k, rng, degenerate);
    KMeansResult cur = kmeans_from(points, std::move(init), max_iters);
    cur.degenerate = degenerate;
    if (!have || cur.objective < best.objective) {
      best = std::move(cur);
      have = true;
    }
  }
  if (best.degenerate) {
    log::warn("kmeans: fewer distinct points than clusters; duplicated centroids returned");
  }
  return best;
}

Dense2D ClusterModel::embed(const Dense2D& features) const { return encode(phi, input.apply(features)); }

void save_cluster_model(TensorBundle& bundle, const std::string& prefix, const ClusterModel& m) {
  save_layers(bundle, prefix + "phi.", m.phi);
  bundle.put(prefix + "centroids", m.centroids);
  bundle.put_scalar(prefix + "alpha", m.alpha);
  save_scaler(bundle, prefix + "input.", m.input);
}

ClusterModel load_cluster_model(const TensorBundle& bundle, const std::string& prefix) {
  ClusterModel m;
  m.phi = load_layers(bundle, prefix + "phi.");
  m.centroids = bundle.matrix(prefix + "centroids");
  m.alpha = bundle.scalar(prefix + "alpha");
  m.input = load_scaler(bundle, prefix + "input.");
  if (!m.phi.empty() && m.phi.back().out_dim() != static_cast<std::size_t>(m.centroids.cols())) {
    throw DataError("cluster model: centroid dimension differs from latent map output");
  }
  return m;
}

SoftAssignment soft_assign(const Dense2D& z, const Dense2D& centroids, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("soft_assign: alpha must be positive");
  Dense2D q = squared_distances(z, centroids);
  const double power = -(alpha + 1.0) / 2.0;
  if (alpha == 1.0) {
    q = (1.0 + q.array()).inverse().matrix();
  } else {
    q = (1.0 + q.array() / alpha).pow(power).matrix();
  }
  for (Eigen::Index r = 0; r < q.rows(); ++r) q.row(r) /= q.row(r).sum();
  return {std::move(q)};
}

SoftAssignment soft_assign(const ClusterModel& model, const Dense2D& z) {
  return soft_assign(z, model.centroids, model.alpha);
}

TargetDistribution target_distribution(const SoftAssignment& sa) {
  const Dense2D& q = sa.q;
  TargetDistribution t;
  t.f = q.colwise().sum().transpose();
  for (Eigen::Index k = 0; k < t.f.size(); ++k) {
    if (!(t.f[k] > 0.0)) throw NumericError("target_distribution: cluster with zero frequency");
  }
  t.p = q.array().square().rowwise() / t.f.transpose().array();
  for (Eigen::Index r = 0; r < t.p.rows(); ++r) t.p.row(r) /= t.p.row(r).sum();
  return t;
}

double kl_loss(const Dense2D& p, const Dense2D& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) throw ShapeError("kl_loss: shape mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = p.data()[i];
    if (pi > 0.0) total += pi * std::log(pi / q.data()[i]);
  }
  return total;
}

KlGradients kl_loss_and_grad(const Dense2D& z, const Dense2D& centroids, const Dense2D& p,
                             double alpha) {
  if (p.rows() != z.rows() || p.cols() != centroids.rows()) {
    throw ShapeError("kl_loss_and_grad: target shape mismatch");
  }
  const Dense2D d = squared_distances(z, centroids);
  const SoftAssignment sa = soft_assign(z, centroids, alpha);
  KlGradients g;
  g.loss = kl_loss(p, sa.q);
  // dL/dz_n = (a+1)/a sum_k (p_nk - q_nk) (z_n - mu_k) / (1 + d_nk/a)
  const Dense2D w =
      ((p - sa.q).array() / (1.0 + d.array() / alpha)).matrix() * ((alpha + 1.0) / alpha);
  const Eigen::VectorXd row_sum = w.rowwise().sum();
  const Eigen::RowVectorXd col_sum = w.colwise().sum();
  g.grad_z = z.array().colwise() * row_sum.array();
  g.grad_z.noalias() -= w * centroids;
  g.grad_mu = centroids.array().colwise() * col_sum.transpose().array();
  g.grad_mu.noalias() -= w.transpose() * z;
  return g;
}

PseudoLabels pseudo_labels(const Dense2D& p) {
  PseudoLabels out;
  out.labels.resize(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < p.cols(); ++k) {
      if (p(r, k) > p(r, best)) best = k;
    }
    out.labels[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

PseudoLabels pseudo_labels(const TargetDistribution& target) { return pseudo_labels(target.p); }

double confident_fraction(const Dense2D& q, double threshold) {
  if (q.rows() == 0) return 0.0;
  std::size_t count = 0;
  for (Eigen::Index r = 0; r < q.rows(); ++r) count += q.row(r).maxCoeff() >= threshold ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(q.rows());
}

namespace {

struct Attempt {
  std::vector<LinearLayer> phi;
  Dense2D centroids;
  Adam adam;
  double start_loss = 0.0;
  double end_loss = 0.0;
  EpochDiagnostics init;
  std::vector<int> init_labels;
};

EpochDiagnostics diagnose(int epoch, const SoftAssignment& sa, const TargetDistribution& t,
                          const std::vector<int>& labels, const std::vector<int>& prev) {
  EpochDiagnostics d;
  d.epoch = epoch;
  d.loss = kl_loss(t.p, sa.q);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < labels.size() && i < prev.size(); ++i) changed += labels[i] != prev[i];
  d.label_change = prev.empty() ? 0.0 : static_cast<double>(changed) / static_cast<double>(labels.size());
  d.f_min = t.f.minCoeff();
  d.f_max = t.f.maxCoeff();
  d.confident = confident_fraction(sa.q);
  return d;
}

void train_epoch(std::vector<LinearLayer>& phi, Dense2D& centroids, Adam& adam,
                 const Dense2D& features, const Dense2D& p, double alpha, std::size_t batch,
                 Rng& rng) {
  const auto n = static_cast<std::size_t>(features.rows());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle_indices(order, rng);
  std::vector<LinearGrads> grads;
  for (const auto& l : phi) grads.emplace_back(l);
  Dense2D grad_mu;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    const auto m = static_cast<Eigen::Index>(end - start);
    Dense2D x(m, features.cols());
    Dense2D pb(m, p.cols());
    for (std::size_t i = start; i < end; ++i) {
      x.row(static_cast<Eigen::Index>(i - start)) = features.row(static_cast<Eigen::Index>(order[i]));
      pb.row(static_cast<Eigen::Index>(i - start)) = p.row(static_cast<Eigen::Index>(order[i]));
    }
    const auto acts = stack_forward(phi, x);
    KlGradients g = kl_loss_and_grad(acts.back(), centroids, pb, alpha);
    const double scale = 1.0 / static_cast<double>(m);
    for (auto& gr : grads) gr.zero();
    stack_backward(phi, acts, g.grad_z * scale, grads);
    grad_mu = g.grad_mu * scale;
    std::vector<ParamRef> refs;
    for (std::size_t i = 0; i < phi.size(); ++i) {
      refs.push_back(param_ref(phi[i].weight, grads[i].weight));
      refs.push_back(param_ref(phi[i].bias, grads[i].bias));
    }
    refs.push_back(param_ref(centroids, grad_mu));
    if (!adam.step(refs)) log::warn("adaptive clustering: non-finite gradient, step skipped");
  }
}

}  // namespace

FitResult fit(std::vector<LinearLayer> phi, const Dense2D& features, const FitConfig& cfg) {
  if (cfg.k < 1) throw UsageError("fit: K must be positive");
  if (cfg.epochs < 0) throw UsageError("fit: negative epoch count");
  if (features.rows() < cfg.k) throw DataError("fit: fewer samples than clusters");
  const std::size_t batch =
      std::max<std::size_t>(1, std::min(cfg.batch_size, static_cast<std::size_t>(features.rows())));
  const std::vector<LinearLayer> phi0 = std::move(phi);
  auto embed = [&](const std::vector<LinearLayer>& layers) {
    Dense2D z = encode(layers, features);
    if (!z.allFinite()) throw NumericError("fit: non-finite latent features");
    return z;
  };

  std::optional<Attempt> chosen;
  std::optional<Attempt> best_failed;
  int reselections = 0;
  for (int attempt = 0; attempt <= cfg.max_reselections; ++attempt) {
    Attempt a{phi0, {}, Adam({.learning_rate = cfg.learning_rate}), 0.0, 0.0, {}, {}};
    const Dense2D z0 = embed(a.phi);
    if (attempt == 0 && cfg.initial_centroids) {
      if (cfg.initial_centroids->rows() != cfg.k || cfg.initial_centroids->cols() != z0.cols()) {
        throw ShapeError("fit: warm-start centroids have the wrong shape");
      }
      a.centroids = *cfg.initial_centroids;
    } else {
      a.centroids = kmeans(z0, cfg.k, derive_seed(cfg.seed, 0xc1, static_cast<std::uint64_t>(attempt)),
                           cfg.kmeans_max_iters, cfg.kmeans_restarts)
                        .centroids;
    }
    const SoftAssignment q0 = soft_assign(z0, a.centroids, cfg.alpha);
    const TargetDistribution p0 = target_distribution(q0);
    a.init_labels = pseudo_labels(p0).labels;
    a.init = diagnose(0, q0, p0, a.init_labels, {});
    a.start_loss = a.init.loss;
    if (cfg.epochs == 0) {
      chosen = std::move(a);
      break;
    }
    Rng rng(derive_seed(cfg.seed, 0xe90c, static_cast<std::uint64_t>(attempt) << 32));
    train_epoch(a.phi, a.centroids, a.adam, features, p0.p, cfg.alpha, batch, rng);
    a.end_loss = kl_loss(p0.p, soft_assign(embed(a.phi), a.centroids, cfg.alpha).q);
    if (a.end_loss < a.start_loss || (attempt == 0 && cfg.initial_centroids)) {
      chosen = std::move(a);
      break;
    }
    std::ostringstream msg;
    msg << "adaptive clustering: L_AC did not decrease after the first epoch (" << a.start_loss
        << " -> " << a.end_loss << ")";
    if (attempt < cfg.max_reselections) {
      msg << "; re-selecting initial centroids (attempt " << attempt + 2 << ")";
      ++reselections;
    } else {
      msg << "; retry budget spent, continuing with the best attempt";
    }
    log::info(msg.str());
    if (!best_failed || a.end_loss - a.start_loss < best_failed->end_loss - best_failed->start_loss) {
      best_failed = std::move(a);
    }
  }
  if (!chosen) chosen = std::move(best_failed);

  Attempt& a = *chosen;
  FitResult result;
  result.reselections = reselections;
  result.first_epoch_start_loss = a.start_loss;
  result.first_epoch_end_loss = a.end_loss;
  result.history.push_back(a.init);
  std::vector<int> prev = a.init_labels;

  SoftAssignment q = soft_assign(embed(a.phi), a.centroids, cfg.alpha);
  TargetDistribution p = target_distribution(q);
  if (cfg.epochs > 0) {
    prev = [&] {
      auto labels = pseudo_labels(p).labels;
      result.history.push_back(diagnose(1, q, p, labels, prev));
      return labels;
    }();
  }
  for (int epoch = 2; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
    train_epoch(a.phi, a.centroids, a.adam, features, p.p, cfg.alpha, batch, rng);
    q = soft_assign(embed(a.phi), a.centroids, cfg.alpha);
    p = target_distribution(q);
    auto labels = pseudo_labels(p).labels;
    result.history.push_back(diagnose(epoch, q, p, labels, prev));
    prev = std::move(labels);
  }
  const double tiny = 1e-6 * static_cast<double>(features.rows());
  if (p.f.minCoeff() < tiny) {
    log::info("adaptive clustering: degenerate cluster(s) with f_k below 1e-6 N retained");
  }

  result.labels = pseudo_labels(p);
  result.labels.epoch = cfg.epochs;
  result.target = std::move(p);
  result.model.phi = std::move(a.phi);
  result.model.centroids = std::move(a.centroids);
  result.model.alpha = cfg.alpha;
  return result;
}

void write_diagnostics(std::ostream& out, std::span<const EpochDiagnostics> history) {
  out << "# epoch L_AC label_change f_min f_max confident\n";
  for (const auto& d : history) {
    out << d.epoch << ' ' << d.loss << ' ' << d.label_change << ' ' << d.f_min << ' ' << d.f_max
        << ' ' << d.confident << '\n';
  }
}

}  // namespace selfore
