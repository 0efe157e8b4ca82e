#include <cmath>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "selfore/classifier.hpp"
#include "selfore/errors.hpp"

using namespace selfore;

namespace {

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

std::vector<MarkedSentence> relation_sentences(int per) {
  std::vector<MarkedSentence> out;
  for (int i = 0; i < per; ++i) {
    const std::string a = "P" + std::to_string(i);
    const std::string b = "Q" + std::to_string(i);
    out.push_back(fixture::marked(a + " was born in " + b, {0, 1}, {4, 5}, "b" + std::to_string(i)));
    out.push_back(fixture::marked(a + " works for " + b, {0, 1}, {3, 4}, "w" + std::to_string(i)));
  }
  return out;
}

std::vector<int> alternating(std::size_t n) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 2);
  return y;
}

struct Separable {
  Dense2D x;
  std::vector<int> y;
};

Separable separable(int n, std::uint64_t seed) {
  Rng rng(seed);
  Separable s{gaussian_matrix(n, 5, 1.0, rng), {}};
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    s.x(i, 0) += label ? 3.0 : -3.0;
    s.y.push_back(label);
  }
  return s;
}

}  // namespace

TEST_SUITE("classifier") {
  TEST_CASE("zero-initialized head gives uniform predictions") {
    const auto p = make_classifier(6, 10);
    Rng rng(1);
    const Dense2D x = gaussian_matrix(4, 6, 1.0, rng);
    const Dense2D logits = forward(p, x);
    CHECK(logits.rows() == 4);
    CHECK(logits.cols() == 10);
    const Dense2D s = softmax_rows(logits);
    CHECK((s.array() - 0.1).abs().maxCoeff() <= 1e-15);

    auto q = p;
    const std::vector<int> labels{0, 3, 5, 9};
    const auto report = train(q, x, labels, {.epochs = 1, .batch_size = 4});
    CHECK(report.initial_loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }

  TEST_CASE("forward is the affine map") {
    Rng rng(2);
    auto p = make_classifier(5, 3);
    p.head.weight = gaussian_matrix(3, 5, 1.0, rng);
    p.head.bias = Vector::Random(3);
    const Dense2D x = gaussian_matrix(7, 5, 1.0, rng);
    CHECK((forward(p, x) - oracle::brute_linear(p.head, x)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK_THROWS_AS(forward(p, Dense2D::Zero(2, 4)), ShapeError);
  }

  TEST_CASE("separable features are learned") {
    const auto s = separable(200, 3);
    auto p = make_classifier(5, 2);
    TrainSchedule sched;
    sched.learning_rate = 1e-2;
    sched.epochs = 50;
    sched.seed = 4;
    const auto report = train(p, s.x, s.y, sched);
    CHECK(report.final_accuracy >= 0.99);
    CHECK(report.epoch_losses.back() < report.epoch_losses.front());

    const auto pred = predict(p, s.x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == s.y[i];
    CHECK(static_cast<double>(hits) / pred.size() == report.final_accuracy);
    CHECK(predict(p, s.x) == pred);
  }

  TEST_CASE("labels are validated") {
    auto p = make_classifier(5, 2);
    const auto s = separable(10, 5);
    std::vector<int> bad = s.y;
    bad[3] = 2;
    CHECK_THROWS_AS(train(p, s.x, bad, {}), DataError);
    bad.pop_back();
    CHECK_THROWS_AS(train(p, s.x, bad, {}), DataError);
  }

  TEST_CASE("cross-entropy gradient flows through head and encoder") {
    BuiltinEncoder enc({.hidden = 4, .buckets = 7, .max_length = 16, .embedding_std = 1.0, .seed = 6});
    Rng rng(7);
    auto& ep = enc.mutable_params();
    ep.query = gaussian_matrix(4, 4, 0.5, rng);
    ep.ff_weight = gaussian_matrix(4, 4, 0.5, rng);
    auto head = make_classifier(8, 3);
    head.head.weight = gaussian_matrix(3, 8, 0.5, rng);
    head.head.bias = Vector::Random(3);

    const auto all = relation_sentences(2);
    const std::vector<MarkedSentence> batch(all.begin(), all.begin() + 4);
    const std::vector<int> labels{0, 1, 2, 1};

    const Dense2D h = enc.forward_train(batch);
    const Dense2D logits = forward(head, h);
    const auto xent = softmax_xent(logits, labels);
    LinearGrads hg(head.head);
    const Dense2D gh = linear_backward(head.head, h, logits, xent.grad, hg);
    enc.zero_grad();
    enc.backward(gh);

    std::vector<double> theta(head.head.weight.data(), head.head.weight.data() + 24);
    theta.insert(theta.end(), head.head.bias.data(), head.head.bias.data() + 3);
    std::vector<double> analytic(hg.weight.data(), hg.weight.data() + 24);
    analytic.insert(analytic.end(), hg.bias.data(), hg.bias.data() + 3);
    const auto enc_theta = flatten(enc.params());
    const auto enc_grad = flatten(enc.grads());
    theta.insert(theta.end(), enc_theta.begin(), enc_theta.end());
    analytic.insert(analytic.end(), enc_grad.begin(), enc_grad.end());

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
    CHECK(grad_check(f, theta, analytic) <= 1e-4);
  }

  TEST_CASE("frozen epochs leave the encoder bit-identical") {
    BuiltinEncoder enc({.hidden = 8, .buckets = 101, .max_length = 16, .embedding_std = 1.0, .seed = 8});
    const auto sentences = relation_sentences(10);
    const auto labels = alternating(sentences.size());
    const auto before = flatten(enc.params());

    auto p = make_classifier(16, 2);
    TrainSchedule sched;
    sched.learning_rate = 1e-2;
    sched.epochs = 3;
    sched.encoder_freeze_epochs = 3;
    sched.batch_size = 8;
    const auto frozen = train(p, enc, sentences, labels, sched);
    CHECK(frozen.encoder_updates == 0);
    CHECK(flatten(enc.params()) == before);
    CHECK(frozen.epoch_losses.back() < frozen.initial_loss);
    CHECK_FALSE(enc.frozen());

    sched.epochs = 5;
    auto q = make_classifier(16, 2);
    const auto tuned = train(q, enc, sentences, labels, sched);
    CHECK(tuned.encoder_updates == 2 * 3);
    CHECK(flatten(enc.params()) != before);
    CHECK(enc.version() == 6);
  }

  TEST_CASE("permuting pseudo-label ids permutes the head without changing the losses") {
    const auto s = separable(60, 9);
    std::vector<int> y3(s.y.size());
    for (std::size_t i = 0; i < y3.size(); ++i) y3[i] = static_cast<int>(i % 3);
    std::vector<int> permuted(y3.size());
    const int perm[3] = {2, 0, 1};
    for (std::size_t i = 0; i < y3.size(); ++i) permuted[i] = perm[y3[i]];

    TrainSchedule sched;
    sched.learning_rate = 1e-2;
    sched.epochs = 4;
    sched.batch_size = 16;
    sched.seed = 10;
    auto a = make_classifier(5, 3);
    auto b = make_classifier(5, 3);
    const auto ra = train(a, s.x, y3, sched);
    const auto rb = train(b, s.x, permuted, sched);
    for (std::size_t e = 0; e < ra.epoch_losses.size(); ++e) {
      CHECK(ra.epoch_losses[e] == doctest::Approx(rb.epoch_losses[e]).epsilon(1e-12));
    }
    for (int k = 0; k < 3; ++k) {
      CHECK((a.head.weight.row(k) - b.head.weight.row(perm[k])).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }

  TEST_CASE("classifier checkpoint round trips bit-exact") {
    const auto dir = oracle::scratch("clf_ckpt");
    Rng rng(11);
    auto p = make_classifier(6, 4, 0.25);
    p.head.weight = gaussian_matrix(4, 6, 1.0, rng);
    p.head.bias = Vector::Random(4);
    save_classifier(dir / "c.sclf", p);
    const auto back = load_classifier(dir / "c.sclf");
    CHECK(back.head.weight == p.head.weight);
    CHECK(back.head.bias == p.head.bias);
    CHECK(back.dropout == 0.25);
    save_classifier(dir / "d.sclf", back);
    CHECK(oracle::slurp(dir / "c.sclf") == oracle::slurp(dir / "d.sclf"));
  }
}
