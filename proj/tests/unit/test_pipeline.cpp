#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "runs.hpp"
#include "selfore/errors.hpp"
#include "selfore/pipeline.hpp"

using namespace selfore;

namespace {

std::vector<double> flatten(const BuiltinEncoder& enc) {
  std::vector<double> out;
  const auto& p = enc.params();
  auto add = [&](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  add(p.embedding);
  add(p.query);
  add(p.key);
  add(p.value);
  add(p.ff_weight);
  add(p.ff_bias);
  return out;
}

Pipeline make(const LoopConfig& cfg, const fixture::SynthSplit& data) {
  return Pipeline(cfg, data.train, data.validation, BuiltinEncoder(fixture::small_encoder(cfg.seed)));
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("label delta counts raw disagreements") {
    const std::vector<int> a{0, 0, 1, 1};
    CHECK(label_delta(a, a) == 0.0);
    CHECK(label_delta(a, std::vector<int>{0, 1, 1, 1}) == 0.25);
    CHECK_THROWS_AS(label_delta(a, std::vector<int>{0}), DataError);

    std::mt19937_64 rng(3);
    std::vector<int> x(1000), y(1000);
    for (auto& v : x) v = static_cast<int>(rng() % 10);
    for (auto& v : y) v = static_cast<int>(rng() % 10);
    int differ = 0;
    for (int i = 0; i < 1000; ++i) differ += x[i] != y[i];
    CHECK(label_delta(x, y) == differ / 1000.0);
  }

  TEST_CASE("partition delta ignores relabeling") {
    const std::vector<int> a{0, 0, 1, 1, 2};
    const std::vector<int> b{2, 2, 0, 0, 1};
    CHECK(label_delta(a, b, DeltaKind::raw) == 1.0);
    CHECK(label_delta(a, b, DeltaKind::partition) == 0.0);
    const std::vector<int> c{0, 0, 1, 1, 1};
    std::mt19937_64 rng(4);
    std::vector<int> x(60), y(60);
    for (auto& v : x) v = static_cast<int>(rng() % 4);
    for (auto& v : y) v = static_cast<int>(rng() % 4);
    double disagree = 0, pairs = 0;
    for (int i = 0; i < 60; ++i) {
      for (int j = i + 1; j < 60; ++j) {
        disagree += (x[i] == x[j]) != (y[i] == y[j]);
        pairs += 1;
      }
    }
    CHECK(label_delta(x, y, DeltaKind::partition) == doctest::Approx(disagree / pairs).epsilon(1e-12));
    CHECK(label_delta(a, c, DeltaKind::partition) == doctest::Approx(2.0 / 10.0));
  }

  TEST_CASE("configuration validation") {
    LoopConfig c;
    CHECK_NOTHROW(c.validate());
    c.k = 1;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = {};
    c.k_hat = 5;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = {};
    c.stop_threshold = 0.0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c.stop_threshold = 1.5;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = {};
    c.max_loops = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    LoopConfig d;
    d.seed = 1;
    CHECK(d.hash() != LoopConfig{}.hash());
    CHECK(LoopConfig{}.hash() == LoopConfig{}.hash());
  }

  TEST_CASE("a threshold of one stops after exactly one round") {
    const auto data = fixture::synth_split(4, 30, 1);
    auto cfg = fixture::small_loop(4, 1);
    cfg.stop_threshold = 1.0;
    cfg.max_loops = 5;
    auto p = make(cfg, data);
    const auto r = p.run();
    CHECK(r.state.iteration == 1);
    CHECK(r.state.converged);
    CHECK(r.state.label_history.size() == 2);
  }

  TEST_CASE("loop bookkeeping") {
    const auto data = fixture::synth_split(4, 30, 2);
    auto cfg = fixture::small_loop(4, 2);
    cfg.stop_threshold = 1e-9;
    auto p = make(cfg, data);
    const auto before = flatten(std::get<BuiltinEncoder>(p.backend()));
    const auto r = p.run();
    CHECK(r.state.iteration <= cfg.max_loops);
    REQUIRE(r.state.snapshots.size() == r.state.label_history.size());
    for (std::size_t i = 0; i < r.state.snapshots.size(); ++i) {
      const auto& s = r.state.snapshots[i];
      CHECK(s.iteration == static_cast<int>(i));
      CHECK(s.config_hash == cfg.hash());
      CHECK(s.report.has_value());
      if (i > 0) CHECK(s.feature_version > r.state.snapshots[i - 1].feature_version);
    }
    CHECK(r.state.snapshots[0].label_delta == 1.0);
    CHECK(r.final_labels == r.state.label_history.back());
    CHECK(r.classifier.has_value());
    CHECK(flatten(std::get<BuiltinEncoder>(p.backend())) != before);
  }

  TEST_CASE("no_classification runs a single pass and never touches the encoder") {
    const auto data = fixture::synth_split(4, 30, 3);
    auto cfg = fixture::small_loop(4, 3);
    cfg.mode = LoopMode::no_classification;
    auto p = make(cfg, data);
    const auto before = flatten(std::get<BuiltinEncoder>(p.backend()));
    const auto r = p.run();
    CHECK(r.state.iteration == 0);
    CHECK(r.state.label_history.size() == 1);
    CHECK_FALSE(r.classifier.has_value());
    CHECK(flatten(std::get<BuiltinEncoder>(p.backend())) == before);
  }

  TEST_CASE("no_adaptive_clustering produces hard labels and a report") {
    const auto data = fixture::synth_split(4, 30, 4);
    auto cfg = fixture::small_loop(4, 4);
    cfg.mode = LoopMode::no_adaptive_clustering;
    auto p = make(cfg, data);
    const auto dir = oracle::scratch("pipe_hard");
    const auto r = p.run({.run_dir = dir});
    CHECK(r.state.snapshots.back().report.has_value());
    const auto kv = oracle::read_kv(dir / "report.final");
    CHECK(kv.at("ablation") == "w/o adaptive clustering");
    CHECK(kv.count("b3_f1"));
  }

  TEST_CASE("same seed gives the same label history") {
    const auto data = fixture::synth_split(4, 30, 5);
    auto cfg = fixture::small_loop(4, 5);
    cfg.stop_threshold = 1e-9;
    const auto a = make(cfg, data).run();
    const auto b = make(cfg, data).run();
    CHECK(a.state.label_history == b.state.label_history);
    CHECK(a.cluster.centroids == b.cluster.centroids);
  }

  TEST_CASE("resuming from a checkpoint matches the uninterrupted run") {
    const auto data = fixture::synth_split(4, 30, 6);
    auto cfg = fixture::small_loop(4, 6);
    cfg.stop_threshold = 1e-9;
    const auto full = make(cfg, data).run();
    REQUIRE(full.state.iteration == 3);

    const auto dir = oracle::scratch("pipe_resume");
    auto first = make(cfg, data);
    const auto partial = first.run({.run_dir = dir, .stop_after = 2});
    CHECK(partial.state.iteration == 2);
    REQUIRE(std::filesystem::exists(dir / "iter_002" / "state.ckpt"));

    auto second = make(cfg, data);
    const auto resumed = second.run({.resume_from = dir / "iter_002" / "state.ckpt"});
    CHECK(resumed.state.label_history == full.state.label_history);
    CHECK(resumed.cluster.centroids == full.cluster.centroids);
    CHECK(resumed.state.iteration == full.state.iteration);
    CHECK(resumed.classifier->head.weight == full.classifier->head.weight);
  }

  TEST_CASE("resume rejects mismatched K and corrupt files without side effects") {
    const auto data = fixture::synth_split(4, 30, 7);
    auto cfg = fixture::small_loop(4, 7);
    cfg.max_loops = 1;
    const auto dir = oracle::scratch("pipe_bad_resume");
    make(cfg, data).run({.run_dir = dir});
    const auto ckpt = dir / "iter_000" / "state.ckpt";
    REQUIRE(std::filesystem::exists(ckpt));

    auto other = cfg;
    other.k = 5;
    auto wrong_k = make(other, data);
    CHECK_THROWS_AS(wrong_k.run({.resume_from = ckpt}), DataError);

    std::string bytes = oracle::slurp(ckpt);
    bytes[0] = 'X';
    std::ofstream(dir / "corrupt.ckpt", std::ios::binary) << bytes;
    auto p = make(cfg, data);
    const auto before = flatten(std::get<BuiltinEncoder>(p.backend()));
    CHECK_THROWS_AS(p.run({.resume_from = dir / "corrupt.ckpt"}), DataError);
    CHECK(flatten(std::get<BuiltinEncoder>(p.backend())) == before);
    const auto fresh = make(cfg, data).run();
    CHECK(p.run().state.label_history == fresh.state.label_history);
  }

  TEST_CASE("run directory layout") {
    const auto data = fixture::synth_split(4, 30, 8);
    auto cfg = fixture::small_loop(4, 8);
    cfg.k_hat = 6;
    cfg.max_loops = 1;
    const auto dir = oracle::scratch("pipe_layout");
    const auto r = make(cfg, data).run({.run_dir = dir});
    for (const char* f : {"report.final", "labels.final", "labels.merged", "names.final",
                          "iter_000/state.ckpt", "iter_000/diagnostics.txt", "iter_000/labels.tsv",
                          "iter_000/autoencoder.saec", "iter_001/classifier.sclf"}) {
      CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
    }
    CHECK(r.merged_labels.size() == r.final_labels.size());
    const auto kv = oracle::read_kv(dir / "report.final");
    CHECK(kv.count("merged.b3_f1"));
    CHECK(kv.count("b3_f1"));
    CHECK(kv.at("k_hat") == "6");
  }

  TEST_CASE("precomputed features drive the loop without an encoder") {
    const auto data = fixture::synth_split(4, 30, 9);
    BuiltinEncoder enc(fixture::small_encoder(9));
    std::vector<MarkedSentence> all = data.train;
    all.insert(all.end(), data.validation.begin(), data.validation.end());
    std::vector<std::string> ids;
    for (const auto& s : all) ids.push_back(s.origin_id);
    FeatureStore store(enc.encode(all), ids);

    auto cfg = fixture::small_loop(4, 9);
    cfg.max_loops = 2;
    Pipeline p(cfg, data.train, data.validation, store);
    const auto r = p.run();
    CHECK(r.state.snapshots.size() >= 2);
    for (const auto& s : r.state.snapshots) CHECK(s.feature_version == 0);

    FeatureStore missing(store.matrix().topRows(10), std::vector<std::string>(ids.begin(), ids.begin() + 10));
    CHECK_THROWS_AS(Pipeline(cfg, data.train, data.validation, missing), DataError);
  }
}
