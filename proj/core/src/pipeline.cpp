#include "selfore/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "selfore/errors.hpp"
#include "selfore/log.hpp"

namespace selfore {

std::string to_string(LoopMode mode) {
  switch (mode) {
    case LoopMode::full:
      return "full";
    case LoopMode::no_classification:
      return "no_classification";
    case LoopMode::no_adaptive_clustering:
      return "no_adaptive_clustering";
  }
  return "full";
}

LoopMode parse_loop_mode(const std::string& s) {
  if (s == "full") return LoopMode::full;
  if (s == "no_classification") return LoopMode::no_classification;
  if (s == "no_adaptive_clustering") return LoopMode::no_adaptive_clustering;
  throw UsageError("mode must be full, no_classification or no_adaptive_clustering, got '" + s + "'");
}

std::string to_string(DeltaKind kind) { return kind == DeltaKind::raw ? "raw" : "partition"; }

DeltaKind parse_delta_kind(const std::string& s) {
  if (s == "raw") return DeltaKind::raw;
  if (s == "partition") return DeltaKind::partition;
  throw UsageError("label_delta must be raw or partition, got '" + s + "'");
}

void LoopConfig::validate() const {
  if (k < 2) throw UsageError("k must be at least 2");
  if (k_hat != 0 && k_hat < k) throw UsageError("k_hat must be at least k");
  if (max_loops < 1) throw UsageError("max_loops must be positive");
  if (!(stop_threshold > 0.0 && stop_threshold <= 1.0)) {
    throw UsageError("stop_threshold must lie in (0, 1]");
  }
  if (names_n_min < 1 || names_n_min > names_n_max) {
    throw UsageError("names_n_min must be in [1, names_n_max]");
  }
}

std::string LoopConfig::describe() const {
  std::ostringstream o;
  o.precision(17);
  auto dims = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (auto d : v) s += (s.empty() ? "" : ",") + std::to_string(d);
    return s;
  };
  o << "k=" << k << "\nk_hat=" << k_hat << "\nmax_loops=" << max_loops
    << "\nstop_threshold=" << stop_threshold << "\nseed=" << seed << "\nmode=" << to_string(mode)
    << "\nlabel_delta=" << to_string(delta)
    << "\nvmeasure=" << (orientation == VMeasureOrientation::standard ? "standard" : "swapped")
    << "\nae_hidden=" << dims(autoencoder.hidden) << "\nae_latent=" << autoencoder.latent
    << "\nae_epochs=" << autoencoder.epochs << "\nae_lr=" << autoencoder.learning_rate
    << "\nae_weight_decay=" << autoencoder.weight_decay << "\nae_init_std=" << autoencoder.init_std
    << "\nae_batch=" << autoencoder.batch_size << "\nae_dropout=" << autoencoder.dropout
    << "\nae_standardize=" << autoencoder.standardize
    << "\nac_epochs=" << clustering.epochs << "\nac_lr=" << clustering.learning_rate
    << "\nac_batch=" << clustering.batch_size << "\nac_alpha=" << clustering.alpha
    << "\nac_max_reselections=" << clustering.max_reselections
    << "\nkmeans_restarts=" << clustering.kmeans_restarts
    << "\nkmeans_max_iters=" << clustering.kmeans_max_iters
    << "\nclf_lr=" << classifier.learning_rate << "\nclf_warmup=" << classifier.warmup_fraction
    << "\nclf_weight_decay=" << classifier.weight_decay
    << "\nclf_freeze_epochs=" << classifier.encoder_freeze_epochs
    << "\nclf_epochs=" << classifier.epochs << "\nclf_batch=" << classifier.batch_size << "\nclf_dropout=" << classifier_dropout
    << "\nnames_n_min=" << names_n_min << "\nnames_n_max=" << names_n_max << '\n';
  return o.str();
}

std::uint64_t LoopConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : describe()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double label_delta(std::span<const int> prev, std::span<const int> curr, DeltaKind kind) {
  if (prev.size() != curr.size()) {
    throw DataError("label_delta: label vectors differ in length (" + std::to_string(prev.size()) +
                    " vs " + std::to_string(curr.size()) + ")");
  }
  const std::size_t n = prev.size();
  if (n == 0) return 0.0;
  if (kind == DeltaKind::raw) {
    std::size_t diff = 0;
    for (std::size_t i = 0; i < n; ++i) diff += prev[i] != curr[i];
    return static_cast<double>(diff) / static_cast<double>(n);
  }
  if (n < 2) return 0.0;
  std::map<std::pair<int, int>, double> cells;
  std::map<int, double> a;
  std::map<int, double> b;
  for (std::size_t i = 0; i < n; ++i) {
    cells[{prev[i], curr[i]}] += 1.0;
    a[prev[i]] += 1.0;
    b[curr[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sa = 0.0, sb = 0.0, sab = 0.0;
  for (const auto& [_, v] : a) sa += c2(v);
  for (const auto& [_, v] : b) sb += c2(v);
  for (const auto& [_, v] : cells) sab += c2(v);
  return (sa + sb - 2.0 * sab) / c2(static_cast<double>(n));
}

Pipeline::Pipeline(LoopConfig config, std::vector<MarkedSentence> train,
                   std::vector<MarkedSentence> validation, EncoderBackend backend)
    : config_(std::move(config)),
      train_(std::move(train)),
      validation_(std::move(validation)),
      backend_(std::move(backend)) {
  config_.validate();
  if (train_.size() < static_cast<std::size_t>(config_.cluster_count())) {
    throw DataError("pipeline: " + std::to_string(train_.size()) + " sentences cannot form " +
                    std::to_string(config_.cluster_count()) + " clusters");
  }
  bool all_gold = true;
  for (const auto& s : train_) {
    all_gold = all_gold && s.gold_relation.has_value();
    gold_.push_back(s.gold_relation.value_or(""));
  }
  if (!all_gold) gold_.clear();
  if (const auto* store = std::get_if<FeatureStore>(&backend_)) {
    for (const auto* set : {&train_, &validation_}) {
      for (const auto& s : *set) {
        if (!store->contains(s.origin_id)) {
          throw DataError("pipeline: no precomputed features for '" + s.origin_id + "'");
        }
      }
    }
  }
}

Dense2D Pipeline::features(std::span<const MarkedSentence> sentences) const {
  if (const auto* enc = std::get_if<BuiltinEncoder>(&backend_)) {
    return enc->encode(sentences, config_.threads);
  }
  return std::get<FeatureStore>(backend_).gather(sentences);
}

std::uint64_t Pipeline::feature_version() const {
  if (const auto* enc = std::get_if<BuiltinEncoder>(&backend_)) return enc->version();
  return 0;
}

Snapshot Pipeline::evaluate_pass(const State& state, int iteration, std::uint64_t version,
                                 double delta, int reselections) const {
  Snapshot snap;
  snap.iteration = iteration;
  snap.feature_version = version;
  snap.config_hash = config_.hash();
  snap.label_delta = delta;
  snap.reselections = reselections;
  const auto& labels = state.loop.label_history.back();
  if (!gold_.empty()) {
    snap.report = evaluate(labels, gold_, config_.orientation);
    if (config_.k_hat > 0) {
      const auto merged = merge_clusters(state.cluster.centroids, labels, config_.k,
                                         derive_seed(config_.seed, 0x3e76e));
      snap.merged = evaluate(merged.labels, gold_, config_.orientation);
    }
  }
  if (state.classifier && !validation_.empty()) {
    std::vector<std::string> vgold;
    for (const auto& s : validation_) {
      if (!s.gold_relation) {
        vgold.clear();
        break;
      }
      vgold.push_back(*s.gold_relation);
    }
    if (!vgold.empty()) {
      const auto pred = predict(*state.classifier, features(validation_));
      snap.validation = evaluate(pred, vgold, config_.orientation);
    }
  }
  return snap;
}

void Pipeline::cluster_pass(State& state, const Dense2D& feats, std::uint64_t version,
                            const std::optional<std::filesystem::path>& dir) {
  // Clustering must see features from the current encoder parameters.
  if (version != feature_version()) {
    throw Error("pipeline: stale features (version " + std::to_string(version) + ", encoder at " +
                std::to_string(feature_version()) + ")");
  }
  const int pass = static_cast<int>(state.loop.label_history.size());
  const bool first = pass == 0;
  std::vector<int> labels;
  std::vector<EpochDiagnostics> history;
  int reselections = 0;
  // Pass 0 reuses the pretraining statistics; later passes refit them on the
  // refined features.
  const ColumnScaler scaler = state.autoencoder.input.empty() ? ColumnScaler{}
                              : first                         ? state.autoencoder.input
                                                              : ColumnScaler::fit(feats);
  const Dense2D inputs = scaler.apply(feats);
  if (config_.mode == LoopMode::no_adaptive_clustering) {
    if (first) state.cluster.phi = state.autoencoder.encoder;
    const Dense2D z = encode(state.cluster.phi, inputs);
    KMeansResult km =
        first ? kmeans(z, config_.cluster_count(), derive_seed(config_.seed, 0xc1, 0),
                       config_.clustering.kmeans_max_iters, config_.clustering.kmeans_restarts)
              : kmeans_from(z, state.cluster.centroids, config_.clustering.kmeans_max_iters);
    state.cluster.centroids = std::move(km.centroids);
    state.cluster.alpha = config_.clustering.alpha;
    labels = std::move(km.assignment);
  } else {
    FitConfig fc = config_.clustering;
    fc.k = config_.cluster_count();
    fc.seed = derive_seed(config_.seed, 0xf17, static_cast<std::uint64_t>(pass));
    std::vector<LinearLayer> phi = state.autoencoder.encoder;
    if (!first) {
      fc.initial_centroids = state.cluster.centroids;
      phi = state.cluster.phi;
    }
    FitResult fit_result = fit(std::move(phi), inputs, fc);
    state.cluster = std::move(fit_result.model);
    labels = std::move(fit_result.labels.labels);
    history = std::move(fit_result.history);
    reselections = fit_result.reselections;
  }
  state.cluster.input = scaler;

  const double delta =
      first ? 1.0 : label_delta(state.loop.label_history.back(), labels, config_.delta);
  state.loop.label_history.push_back(std::move(labels));
  state.loop.snapshots.push_back(evaluate_pass(state, pass, version, delta, reselections));

  if (dir) {
    char name[32];
    std::snprintf(name, sizeof name, "iter_%03d", pass);
    const auto iter_dir = *dir / name;
    std::filesystem::create_directories(iter_dir);
    {
      std::ofstream out(iter_dir / "diagnostics.txt");
      write_diagnostics(out, history);
    }
    {
      std::ofstream out(iter_dir / "labels.tsv");
      const auto& l = state.loop.label_history.back();
      for (std::size_t i = 0; i < train_.size(); ++i) out << train_[i].origin_id << '\t' << l[i] << '\n';
    }
    if (first) save_autoencoder(iter_dir / "autoencoder.saec", state.autoencoder);
    if (state.classifier) save_classifier(iter_dir / "classifier.sclf", *state.classifier);
    save_checkpoint(iter_dir / "state.ckpt", state);
  }

  std::ostringstream msg;
  msg << "pass " << pass << ": label_delta=" << delta;
  if (const auto& r = state.loop.snapshots.back().report) msg << " b3_f1=" << r->b3.f1 << " ari=" << r->ari;
  log::info(msg.str());
}

void Pipeline::classify(State& state) {
  const auto& labels = state.loop.label_history.back();
  const int round = state.loop.iteration + 1;
  TrainSchedule sched = config_.classifier;
  sched.seed = derive_seed(config_.seed, 0xc1a55, static_cast<std::uint64_t>(round));
  if (!state.classifier) {
    const std::size_t dim = std::visit([](const auto& b) { return b.dim(); }, backend_);
    state.classifier = make_classifier(dim, config_.cluster_count(), config_.classifier_dropout);
  }
  if (auto* enc = std::get_if<BuiltinEncoder>(&backend_)) {
    train(*state.classifier, *enc, train_, labels, sched);
  } else {
    train(*state.classifier, std::get<FeatureStore>(backend_).gather(train_), labels, sched);
  }
}

namespace {

constexpr int kReportWidth = 8;

std::vector<double> report_row(const std::optional<EvalReport>& r) {
  if (!r) return std::vector<double>(kReportWidth + 1, 0.0);
  return {1.0,           r->b3.precision,  r->b3.recall, r->b3.f1, r->v.homogeneity,
          r->v.completeness, r->v.f1, r->ari, r->majority.accuracy};
}

std::optional<EvalReport> report_from(const double* row) {
  if (row[0] == 0.0) return std::nullopt;
  EvalReport r;
  r.b3 = {row[1], row[2], row[3]};
  r.v = {row[4], row[5], row[6]};
  r.ari = row[7];
  r.majority.accuracy = row[8];
  return r;
}

}  // namespace

void Pipeline::save_checkpoint(const std::filesystem::path& path, const State& state) const {
  TensorBundle b;
  const auto hash = config_.hash();
  b.put_scalar("meta.iteration", state.loop.iteration);
  b.put_scalar("meta.converged", state.loop.converged ? 1.0 : 0.0);
  b.put_scalar("meta.k", config_.k);
  b.put_scalar("meta.k_hat", config_.k_hat);
  b.put_scalar("meta.mode", static_cast<double>(config_.mode));
  b.put_scalar("meta.n", static_cast<double>(train_.size()));
  b.put_scalar("meta.dim", static_cast<double>(std::visit([](const auto& x) { return x.dim(); }, backend_)));
  b.put_scalar("meta.config_hash_hi", static_cast<double>(hash >> 32));
  b.put_scalar("meta.config_hash_lo", static_cast<double>(hash & 0xffffffffu));
  b.put_scalar("meta.builtin", std::holds_alternative<BuiltinEncoder>(backend_) ? 1.0 : 0.0);

  const auto passes = static_cast<Eigen::Index>(state.loop.label_history.size());
  Dense2D labels(passes, static_cast<Eigen::Index>(train_.size()));
  for (Eigen::Index p = 0; p < passes; ++p) {
    for (std::size_t i = 0; i < train_.size(); ++i) {
      labels(p, static_cast<Eigen::Index>(i)) = state.loop.label_history[static_cast<std::size_t>(p)][i];
    }
  }
  b.put("labels.history", labels);

  const Eigen::Index width = 5 + 3 * (kReportWidth + 1);
  Dense2D snaps(passes, width);
  for (Eigen::Index p = 0; p < passes; ++p) {
    const Snapshot& s = state.loop.snapshots[static_cast<std::size_t>(p)];
    std::vector<double> row = {static_cast<double>(s.iteration),
                               static_cast<double>(s.feature_version >> 32),
                               static_cast<double>(s.feature_version & 0xffffffffu), s.label_delta,
                               static_cast<double>(s.reselections)};
    for (const auto* r : {&s.report, &s.merged, &s.validation}) {
      const auto part = report_row(*r);
      row.insert(row.end(), part.begin(), part.end());
    }
    for (Eigen::Index c = 0; c < width; ++c) snaps(p, c) = row[static_cast<std::size_t>(c)];
  }
  b.put("snapshots", snaps);

  if (const auto* enc = std::get_if<BuiltinEncoder>(&backend_)) enc->save(b, "encoder.");
  save_autoencoder(b, "ae.", state.autoencoder);
  save_cluster_model(b, "cluster.", state.cluster);
  b.put_scalar("meta.has_classifier", state.classifier ? 1.0 : 0.0);
  if (state.classifier) save_classifier(b, "classifier.", *state.classifier);
  write_tensor_file(path, kRunStateMagic, b);
}

Pipeline::State Pipeline::load_checkpoint(const std::filesystem::path& path) {
  const TensorBundle b = read_tensor_file(path, kRunStateMagic);
  auto expect = [&](const char* key, double want, const char* what) {
    const double got = b.scalar(key);
    if (got != want) {
      std::ostringstream msg;
      msg << path.string() << ": checkpoint " << what << " is " << got << ", run expects " << want;
      throw DataError(msg.str());
    }
  };
  expect("meta.k", config_.k, "k");
  expect("meta.k_hat", config_.k_hat, "k_hat");
  expect("meta.mode", static_cast<double>(config_.mode), "mode");
  expect("meta.n", static_cast<double>(train_.size()), "sentence count");
  expect("meta.builtin", std::holds_alternative<BuiltinEncoder>(backend_) ? 1.0 : 0.0,
         "encoder backend");
  const auto hash = (static_cast<std::uint64_t>(b.scalar("meta.config_hash_hi")) << 32) |
                    static_cast<std::uint64_t>(b.scalar("meta.config_hash_lo"));
  if (hash != config_.hash()) log::warn("resume: configuration differs from the checkpointed run");

  State st;
  st.loop.iteration = static_cast<int>(b.scalar("meta.iteration"));
  st.loop.converged = b.scalar("meta.converged") != 0.0;
  const Dense2D labels = b.matrix("labels.history");
  const Dense2D snaps = b.matrix("snapshots");
  if (labels.cols() != static_cast<Eigen::Index>(train_.size()) || snaps.rows() != labels.rows()) {
    throw DataError(path.string() + ": label history does not match the corpus");
  }
  for (Eigen::Index p = 0; p < labels.rows(); ++p) {
    std::vector<int> row(train_.size());
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<int>(labels(p, static_cast<Eigen::Index>(i)));
    st.loop.label_history.push_back(std::move(row));
    const double* s = snaps.row(p).data();
    Snapshot snap;
    snap.iteration = static_cast<int>(s[0]);
    snap.feature_version = (static_cast<std::uint64_t>(s[1]) << 32) | static_cast<std::uint64_t>(s[2]);
    snap.label_delta = s[3];
    snap.reselections = static_cast<int>(s[4]);
    snap.config_hash = hash;
    snap.report = report_from(s + 5);
    snap.merged = report_from(s + 5 + kReportWidth + 1);
    snap.validation = report_from(s + 5 + 2 * (kReportWidth + 1));
    st.loop.snapshots.push_back(std::move(snap));
  }
  st.autoencoder = load_autoencoder(b, "ae.");
  st.cluster = load_cluster_model(b, "cluster.");
  if (st.cluster.k() != config_.cluster_count()) throw DataError(path.string() + ": centroid count mismatch");
  if (b.scalar("meta.has_classifier") != 0.0) st.classifier = load_classifier(b, "classifier.");
  if (std::holds_alternative<BuiltinEncoder>(backend_)) {
    BuiltinEncoder enc = BuiltinEncoder::load(b, "encoder.");
    if (enc.dim() != std::get<BuiltinEncoder>(backend_).dim()) {
      throw DataError(path.string() + ": encoder dimension mismatch");
    }
    backend_ = std::move(enc);  // last step: nothing is mutated if anything above throws
  }
  return st;
}

RunResult Pipeline::run(const RunOptions& options) {
  const auto& dir = options.run_dir;
  if (dir) std::filesystem::create_directories(*dir);
  State st;
  if (options.resume_from) {
    st = load_checkpoint(*options.resume_from);
    log::info("resumed at round " + std::to_string(st.loop.iteration));
  } else {
    const Dense2D h = features(train_);
    PretrainConfig pc = config_.autoencoder;
    pc.seed = derive_seed(config_.seed, 0xae);
    st.autoencoder = pretrain(h, pc).params;
    cluster_pass(st, h, feature_version(), dir);
    if (config_.mode == LoopMode::no_classification) st.loop.converged = true;
  }

  while (!st.loop.converged && st.loop.iteration < config_.max_loops) {
    if (options.stop_after >= 0 && st.loop.iteration >= options.stop_after) break;
    classify(st);
    const std::uint64_t version = feature_version();
    const Dense2D h = features(train_);
    ++st.loop.iteration;
    cluster_pass(st, h, version, dir);
    // A threshold of 1 tolerates any change, so one round always suffices.
    if (st.loop.snapshots.back().label_delta < config_.stop_threshold ||
        config_.stop_threshold >= 1.0) {
      st.loop.converged = true;
      if (dir) {
        // Re-save so the checkpoint records convergence.
        char name[32];
        std::snprintf(name, sizeof name, "iter_%03d", static_cast<int>(st.loop.label_history.size()) - 1);
        save_checkpoint(*dir / name / "state.ckpt", st);
      }
    }
  }

  RunResult result;
  result.final_labels = st.loop.label_history.back();
  if (config_.k_hat > 0) {
    result.merged_labels = merge_clusters(st.cluster.centroids, result.final_labels, config_.k,
                                          derive_seed(config_.seed, 0x3e76e))
                               .labels;
  }
  result.names = extract_names(train_, result.final_labels, config_.names_n_min, config_.names_n_max);
  if (!gold_.empty() && !st.loop.snapshots.empty()) {
    // Restore majority maps dropped by checkpointing for the final pass.
    auto& last = st.loop.snapshots.back();
    if (last.report) last.report->majority = majority_map(result.final_labels, gold_);
    if (last.merged) last.merged->majority = majority_map(result.merged_labels, gold_);
  }
  result.state = std::move(st.loop);
  result.cluster = std::move(st.cluster);
  result.autoencoder = std::move(st.autoencoder);
  result.classifier = std::move(st.classifier);
  if (dir) write_outputs(*dir, result);
  return result;
}

void Pipeline::write_outputs(const std::filesystem::path& dir, const RunResult& result) const {
  {
    std::ofstream out(dir / "report.final");
    write_final_report(out, config_, result);
  }
  {
    std::ofstream out(dir / "labels.final");
    for (std::size_t i = 0; i < train_.size(); ++i) {
      out << train_[i].origin_id << '\t' << result.final_labels[i] << '\n';
    }
  }
  if (!result.merged_labels.empty()) {
    std::ofstream out(dir / "labels.merged");
    for (std::size_t i = 0; i < train_.size(); ++i) {
      out << train_[i].origin_id << '\t' << result.merged_labels[i] << '\n';
    }
  }
  std::ofstream names(dir / "names.final");
  write_names(names, result.names);
}

void write_final_report(std::ostream& out, const LoopConfig& config, const RunResult& result) {
  const char* ablation = config.mode == LoopMode::full                ? "none"
                         : config.mode == LoopMode::no_classification ? "w/o classification"
                                                                      : "w/o adaptive clustering";
  out << "mode=" << to_string(config.mode) << '\n'
      << "ablation=" << ablation << '\n'
      << "k=" << config.k << '\n'
      << "k_hat=" << config.k_hat << '\n'
      << "rounds=" << result.state.iteration << '\n'
      << "passes=" << result.state.label_history.size() << '\n'
      << "converged=" << (result.state.converged ? 1 : 0) << '\n'
      << "config_hash=" << std::hex << config.hash() << std::dec << '\n';
  auto delta_line = [&](const std::string& prefix, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out << prefix << "label_delta=" << buf << '\n';
  };
  for (const auto& s : result.state.snapshots) {
    char prefix[32];
    std::snprintf(prefix, sizeof prefix, "iter_%03d.", s.iteration);
    delta_line(prefix, s.label_delta);
    out << prefix << "feature_version=" << s.feature_version << '\n';
    if (s.report) write_report(out, *s.report, prefix);
    if (s.merged) write_report(out, *s.merged, std::string(prefix) + "merged.");
    if (s.validation) write_report(out, *s.validation, std::string(prefix) + "validation.");
  }
  if (!result.state.snapshots.empty()) {
    const auto& last = result.state.snapshots.back();
    if (last.report) {
      write_report(out, *last.report);
      for (const auto& [cluster, label] : last.report->majority.cluster_label) {
        out << "majority." << cluster << '=' << label << '\n';
      }
    }
    if (last.merged) write_report(out, *last.merged, "merged.");
    if (last.validation) write_report(out, *last.validation, "validation.");
  }
}

}  // namespace selfore
