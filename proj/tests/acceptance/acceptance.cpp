// Acceptance run: one PASS/FAIL line per primary criterion. Exit status is
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "selfore/autoencoder.hpp"
#include "selfore/classifier.hpp"
#include "selfore/clustering.hpp"
#include "selfore/config.hpp"
#include "selfore/log.hpp"
#include "selfore/metrics.hpp"
#include "selfore/pipeline.hpp"
#include "selfore/synth.hpp"
#include "selfore/tensor_io.hpp"

using namespace selfore;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------- helpers

std::vector<double> flatten(const AutoencoderParams& p) {
  std::vector<double> out;
  for (const auto* stack : {&p.encoder, &p.decoder}) {
    for (const auto& l : *stack) {
      out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
      out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
  }
  return out;
}

std::vector<double> flatten(const AutoencoderGrads& g) {
  std::vector<double> out;
  for (const auto* stack : {&g.encoder, &g.decoder}) {
    for (const auto& l : *stack) {
      out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
      out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
  }
  return out;
}

void unflatten(AutoencoderParams& p, std::span<const double> flat) {
  std::size_t at = 0;
  for (auto* stack : {&p.encoder, &p.decoder}) {
    for (auto& l : *stack) {
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = flat[at++];
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = flat[at++];
    }
  }
}

std::vector<double> flatten(const BuiltinEncoder::Params& p) {
  std::vector<double> out;
  auto add = [&](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  add(p.embedding);
  add(p.query);
  add(p.key);
  add(p.value);
  add(p.ff_weight);
  add(p.ff_bias);
  return out;
}

// The synthetic corpus every loop criterion runs on, split the way `run` does.
struct SynthData {
  std::vector<MarkedSentence> train;
  std::vector<MarkedSentence> validation;
  std::filesystem::path path;
};

const SynthData& synth_data() {
  static const SynthData data = [] {
    SynthData d;
    d.path = oracle::scratch("acc_corpus") / "synth.jsonl";
    write_corpus(d.path, synthesize(SynthConfig{}));
    const Settings s;
    const Corpus c = ingest(d.path, s.ingest_options()).corpus;
    d.train = c.train();
    d.validation = c.validation();
    return d;
  }();
  return data;
}

// Default settings with K = 4 and the given overrides.
Settings synth_settings(std::uint64_t seed, std::vector<std::pair<std::string, std::string>> extra = {}) {
  Settings s;
  s.set("k", "4", SettingSource::command_line);
  s.set("seed", std::to_string(seed), SettingSource::command_line);
  for (const auto& [k, v] : extra) s.set(k, v, SettingSource::command_line);
  return s;
}

RunResult run_loop(const Settings& s, const RunOptions& options = {}) {
  const auto& d = synth_data();
  Pipeline p(s.loop_config(), d.train, d.validation, BuiltinEncoder(s.encoder_config()));
  return p.run(options);
}

double final_b3(const RunResult& r) { return r.state.snapshots.back().report->b3.f1; }
double final_ari(const RunResult& r) { return r.state.snapshots.back().report->ari; }

// Cache of the default full-mode runs, shared between criteria.
const RunResult& full_run(std::uint64_t seed) {
  static std::map<std::uint64_t, RunResult> cache;
  auto it = cache.find(seed);
  if (it == cache.end()) it = cache.emplace(seed, run_loop(synth_settings(seed))).first;
  return it->second;
}

// ---------------------------------------------------------------- criteria

Outcome metric_oracles() {
  const Clock clock;
  std::mt19937_64 rng(20240);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 49;
    const auto pred = oracle::random_partition(rng, n, 8);
    const auto gold = oracle::random_partition(rng, n, 8);
    const auto b3 = b_cubed(pred, gold);
    const auto ob3 = oracle::b_cubed(pred, gold);
    const auto v = v_measure(pred, gold);
    const auto ov = oracle::v_measure(pred, gold);
    for (double e : {b3.precision - ob3.precision, b3.recall - ob3.recall, b3.f1 - ob3.f1,
                     v.homogeneity - ov.homogeneity, v.completeness - ov.completeness, v.f1 - ov.f1,
                     adjusted_rand_index(pred, gold) - oracle::ari(pred, gold)}) {
      worst = std::max(worst, std::abs(e));
    }
  }
  const std::vector<int> pred{0, 0, 1, 1};
  const std::vector<int> gold{0, 0, 0, 1};
  const auto b3 = b_cubed(pred, gold);
  const double ari = adjusted_rand_index(pred, gold);
  const bool example = std::abs(b3.precision - 0.75) <= 1e-12 && std::abs(b3.recall - 2.0 / 3.0) <= 1e-12 &&
                       std::abs(b3.f1 - 0.70588) <= 5e-6 && ari == 0.0;
  const double t = clock.seconds();
  return {worst <= 1e-12 && example && t < 10.0,
          fmt("max |diff| %.2e over 200 pairs; example B3 (%.4f, %.4f, %.5f) ARI %.1f; %.2fs", worst, b3.precision,
              b3.recall, b3.f1, ari, t)};
}

Outcome gradient_integrity() {
  const Clock clock;
  Rng rng(31);

  // Autoencoder reconstruction loss, with and without corruption masks.
  PretrainConfig cfg;
  cfg.hidden = {6};
  cfg.latent = 3;
  cfg.init_std = 0.7;
  auto ae = make_autoencoder(10, cfg);
  for (auto* stack : {&ae.encoder, &ae.decoder}) {
    for (auto& l : *stack) l.bias = Vector::Constant(l.bias.size(), 0.2);
  }
  const Dense2D h = gaussian_matrix(6, 10, 1.0, rng);
  const Dense2D in_mask = dropout_mask(6, 10, 0.2, rng);
  const Dense2D z_mask = dropout_mask(6, 3, 0.2, rng);
  double ae_err = 0.0;
  for (bool masked : {false, true}) {
    const std::optional<Dense2D> im = masked ? std::optional(in_mask) : std::nullopt;
    const std::optional<Dense2D> zm = masked ? std::optional(z_mask) : std::nullopt;
    AutoencoderGrads g(ae);
    g.zero();
    reconstruction_loss_and_grad(ae, h, im, zm, g);
    auto f = [&](std::span<const double> flat) {
      auto copy = ae;
      unflatten(copy, flat);
      AutoencoderGrads scratch(copy);
      return reconstruction_loss_and_grad(copy, h, im, zm, scratch);
    };
    ae_err = std::max(ae_err, grad_check(f, flatten(ae), flatten(g)));
  }

  // Clustering loss with respect to z and the centroids.
  double kl_err = 0.0;
  for (double alpha : {1.0, 2.0}) {
    const Dense2D z = gaussian_matrix(7, 4, 1.0, rng);
    const Dense2D mu = gaussian_matrix(3, 4, 1.0, rng);
    const Dense2D p = target_distribution(soft_assign(gaussian_matrix(7, 4, 1.0, rng), mu, alpha)).p;
    const auto g = kl_loss_and_grad(z, mu, p, alpha);
    std::vector<double> theta(z.data(), z.data() + z.size());
    theta.insert(theta.end(), mu.data(), mu.data() + mu.size());
    std::vector<double> analytic(g.grad_z.data(), g.grad_z.data() + g.grad_z.size());
    analytic.insert(analytic.end(), g.grad_mu.data(), g.grad_mu.data() + g.grad_mu.size());
    auto f = [&](std::span<const double> flat) {
      const Dense2D zz = Eigen::Map<const Dense2D>(flat.data(), 7, 4);
      const Dense2D mm = Eigen::Map<const Dense2D>(flat.data() + 28, 3, 4);
      return kl_loss(p, soft_assign(zz, mm, alpha).q);
    };
    kl_err = std::max(kl_err, grad_check(f, theta, analytic));
  }

  // Classification loss through the head and the built-in encoder.
  BuiltinEncoder enc({.hidden = 4, .buckets = 13, .max_length = 16, .embedding_std = 1.0, .seed = 32});
  auto& ep = enc.mutable_params();
  ep.query = gaussian_matrix(4, 4, 0.5, rng);
  ep.ff_weight = gaussian_matrix(4, 4, 0.5, rng);
  auto head = make_classifier(8, 3);
  head.head.weight = gaussian_matrix(3, 8, 0.5, rng);
  head.head.bias = Vector::Random(3);
  std::vector<MarkedSentence> batch;
  for (const auto& raw : synthesize({.relations = 3, .per_relation = 2, .seed = 33})) {
    batch.push_back(inject_markers(raw));
  }
  const std::vector<int> labels{0, 1, 2, 1, 0, 2};
  const Dense2D feats = enc.forward_train(batch);
  const Dense2D logits = forward(head, feats);
  const auto xent = softmax_xent(logits, labels);
  LinearGrads hg(head.head);
  const Dense2D gh = linear_backward(head.head, feats, logits, xent.grad, hg);
  enc.zero_grad();
  enc.backward(gh);
  std::vector<double> theta(head.head.weight.data(), head.head.weight.data() + 24);
  theta.insert(theta.end(), head.head.bias.data(), head.head.bias.data() + 3);
  std::vector<double> analytic(hg.weight.data(), hg.weight.data() + 24);
  analytic.insert(analytic.end(), hg.bias.data(), hg.bias.data() + 3);
  const auto et = flatten(enc.params());
  const auto eg = flatten(enc.grads());
  theta.insert(theta.end(), et.begin(), et.end());
  analytic.insert(analytic.end(), eg.begin(), eg.end());
  auto f = [&](std::span<const double> flat) {
    auto hp = head;
    std::copy(flat.begin(), flat.begin() + 24, hp.head.weight.data());
    std::copy(flat.begin() + 24, flat.begin() + 27, hp.head.bias.data());
    BuiltinEncoder e = enc;
    std::size_t at = 27;
    for (auto part : e.flat_params()) {
      for (auto& v : part) v = flat[at++];
    }
    return softmax_xent(forward(hp, e.encode(batch)), labels).loss;
  };
  const double rc_err = grad_check(f, theta, analytic);

  const double t = clock.seconds();
  return {std::max({ae_err, kl_err, rc_err}) <= 1e-4 && t < 30.0,
          fmt("max relative error AE %.2e, L_AC %.2e, L_RC %.2e; %.2fs", ae_err, kl_err, rc_err, t)};
}

Outcome blob_recovery() {
  const Clock clock;
  constexpr int kBlobs = 10;
  constexpr int kPer = 200;
  constexpr int kDim = 32;
  Rng rng(41);
  const Dense2D centers = gaussian_matrix(kBlobs, kDim, 3.0, rng);
  Dense2D x = gaussian_matrix(kBlobs * kPer, kDim, 1.0, rng);
  std::vector<int> truth;
  for (int i = 0; i < kBlobs * kPer; ++i) {
    x.row(i) += centers.row(i % kBlobs);
    truth.push_back(i % kBlobs);
  }
  PretrainConfig ae;  // D-500-500-200
  ae.seed = 42;
  const auto pre = pretrain(x, ae);
  FitConfig cfg;  // 50 epochs
  cfg.k = kBlobs;
  cfg.seed = 43;
  const auto r = fit(pre.params.encoder, pre.params.input.apply(x), cfg);
  const double ari = adjusted_rand_index(r.labels.labels, truth);
  const double before = r.history.front().confident;
  const double after = r.history.back().confident;
  const double t = clock.seconds();
  return {ari >= 0.95 && r.history.back().epoch == 50 && after > before && t < 120.0,
          fmt("ARI %.4f; confident fraction %.4f at init -> %.4f at epoch %d; %d re-selections; %.1fs", ari, before,
              after, r.history.back().epoch, r.reselections, t)};
}

Outcome bootstrapping() {
  const Clock clock;
  const RunResult& full = full_run(0);
  const RunResult ablated = run_loop(synth_settings(0, {{"mode", "no_classification"}}));
  const double f = final_b3(full);
  const double a = final_b3(ablated);
  const bool stopped = full.state.converged && full.state.iteration <= 20;
  const double t = clock.seconds();
  return {f >= a && f >= 0.7 && stopped && t < 600.0,
          fmt("B3 F1 full %.4f vs w/o classification %.4f; converged=%d after %d rounds; %.1fs", f, a,
              full.state.converged ? 1 : 0, full.state.iteration, t)};
}

Outcome hard_vs_soft() {
  const Clock clock;
  int wins = 0;
  std::string detail;
  bool reports = true;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto dir = oracle::scratch("acc_hard_" + std::to_string(seed));
    const RunResult hard = run_loop(synth_settings(seed, {{"mode", "no_adaptive_clustering"}}), {.run_dir = dir});
    reports = reports && std::filesystem::exists(dir / "report.final") && hard.state.snapshots.back().report;
    const double full_ari = final_ari(full_run(seed));
    const double hard_ari = final_ari(hard);
    wins += full_ari >= hard_ari;
    detail += fmt("seed %d ARI full %.4f hard %.4f; ", static_cast<int>(seed), full_ari, hard_ari);
  }
  return {reports && wins >= 2, detail + fmt("full wins %d/3; %.1fs", wins, clock.seconds())};
}

Outcome k_hat_sensitivity() {
  const Clock clock;
  std::vector<double> f1;
  std::string detail;
  for (int k_hat : {4, 16, 64}) {
    const RunResult r = run_loop(synth_settings(0, {{"k_hat", std::to_string(k_hat)}}));
    f1.push_back(r.state.snapshots.back().merged->b3.f1);
    detail += fmt("K-hat %d merged B3 F1 %.4f; ", k_hat, f1.back());
  }
  const double spread = *std::max_element(f1.begin(), f1.end()) - *std::min_element(f1.begin(), f1.end());
  const double t = clock.seconds();
  return {spread <= 0.10 && t < 900.0, detail + fmt("spread %.4f; %.1fs", spread, t)};
}

Outcome determinism_and_resume() {
  const Clock clock;
  const RunResult again = run_loop(synth_settings(0));
  const bool same = again.state.label_history == full_run(0).state.label_history &&
                    again.cluster.centroids == full_run(0).cluster.centroids;

  // Three forced rounds, uninterrupted versus stopped after two and resumed.
  // A larger classifier lr makes the encoder move between rounds.
  const Settings s = synth_settings(5, {{"stop_threshold", "1e-9"}, {"max_loops", "3"}, {"clf_lr", "0.001"}});
  const auto whole = oracle::scratch("acc_whole");
  const auto cut = oracle::scratch("acc_cut");
  const auto resumed_dir = oracle::scratch("acc_resumed");
  const RunResult uninterrupted = run_loop(s, {.run_dir = whole});
  const RunResult interrupted = run_loop(s, {.run_dir = cut, .stop_after = 2});
  if (uninterrupted.state.iteration != 3 || interrupted.state.iteration != 2) {
    return {false, fmt("expected 3 and 2 rounds, got %d and %d", uninterrupted.state.iteration,
                       interrupted.state.iteration)};
  }
  const RunResult resumed =
      run_loop(s, {.run_dir = resumed_dir, .resume_from = cut / "iter_002" / "state.ckpt"});
  const bool labels = resumed.state.label_history == uninterrupted.state.label_history;
  const bool ckpt = oracle::slurp(resumed_dir / "iter_003" / "state.ckpt") ==
                    oracle::slurp(whole / "iter_003" / "state.ckpt");
  const bool report = oracle::slurp(resumed_dir / "labels.final") == oracle::slurp(whole / "labels.final");
  return {same && labels && ckpt && report,
          fmt("repeat run identical=%d; resumed labels identical=%d, final checkpoint bytes identical=%d, "
              "labels.final identical=%d; %.1fs",
              same, labels, ckpt, report, clock.seconds())};
}

Outcome format_round_trips() {
  const Clock clock;
  const auto dir = oracle::scratch("acc_formats");
  const Settings s = synth_settings(7, {{"max_loops", "1"}});
  run_loop(s, {.run_dir = dir});
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };

  // Feature file.
  const auto& d = synth_data();
  const BuiltinEncoder enc(s.encoder_config());
  std::vector<std::string> ids;
  for (const auto& m : d.train) ids.push_back(m.origin_id);
  write_feature_file(dir / "a.sore", enc.encode(d.train), ids);
  const FeatureFile sore = read_feature_file(dir / "a.sore");
  write_feature_file(dir / "b.sore", sore);
  expect(oracle::slurp(dir / "a.sore") == oracle::slurp(dir / "b.sore") && sore.ids == ids, "SORE");

  // Autoencoder, classifier, run state.
  const auto ae = load_autoencoder(dir / "iter_000" / "autoencoder.saec");
  save_autoencoder(dir / "again.saec", ae);
  expect(oracle::slurp(dir / "iter_000" / "autoencoder.saec") == oracle::slurp(dir / "again.saec"), "SAEC");

  const auto clf = load_classifier(dir / "iter_001" / "classifier.sclf");
  save_classifier(dir / "again.sclf", clf);
  expect(oracle::slurp(dir / "iter_001" / "classifier.sclf") == oracle::slurp(dir / "again.sclf"), "SCLF");

  const auto state = read_tensor_file(dir / "iter_001" / "state.ckpt", kRunStateMagic);
  write_tensor_file(dir / "again.ckpt", kRunStateMagic, state);
  expect(oracle::slurp(dir / "iter_001" / "state.ckpt") == oracle::slurp(dir / "again.ckpt"), "SRUN");

  // Encoder weights inside and outside a run checkpoint.
  const BuiltinEncoder trained = BuiltinEncoder::load(state, "encoder.");
  TensorBundle b;
  trained.save(b, "encoder.");
  write_tensor_file(dir / "a.senc", kEncoderMagic, b);
  const BuiltinEncoder back = BuiltinEncoder::load(read_tensor_file(dir / "a.senc", kEncoderMagic), "encoder.");
  TensorBundle b2;
  back.save(b2, "encoder.");
  write_tensor_file(dir / "b.senc", kEncoderMagic, b2);
  expect(oracle::slurp(dir / "a.senc") == oracle::slurp(dir / "b.senc") &&
             flatten(back.params()) == flatten(trained.params()),
         "SENC");

  std::string detail = failed.empty() ? "SORE, SAEC, SCLF, SRUN, SENC bit-exact" : "mismatch:";
  for (const auto& f : failed) detail += " " + f;
  return {failed.empty(), detail + fmt("; %.1fs", clock.seconds())};
}

}  // namespace

// An optional argument runs only the criterion of that name.
int main(int argc, char** argv) {
  const std::string only = argc > 1 ? argv[1] : "";
  log::set_min_level(log::Level::warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"metric oracle equivalence", metric_oracles},
      {"gradient integrity", gradient_integrity},
      {"clustering recovery", blob_recovery},
      {"bootstrapping benefit", bootstrapping},
      {"hard-vs-soft ablation", hard_vs_soft},
      {"K-hat sensitivity", k_hat_sensitivity},
      {"determinism and resume", determinism_and_resume},
      {"format round trips", format_round_trips},
  };
  int failures = 0;
  int ran = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && name != only) continue;
    ++ran;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  if (ran == 0) {
    std::cerr << "no criterion named '" << only << "'\n";
    return 2;
  }
  return failures == 0 ? 0 : 1;
}
