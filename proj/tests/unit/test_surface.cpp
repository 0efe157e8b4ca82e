#include <algorithm>
#include <map>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "selfore/errors.hpp"
#include "selfore/numerics.hpp"
#include "selfore/surface.hpp"

using namespace selfore;

namespace {

// Counts every occurrence of `gram` in the between-text of the cluster.
std::size_t recount(std::span<const MarkedSentence> sentences, std::span<const int> labels, int cluster,
                    const std::vector<std::string>& gram) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (labels[i] != cluster) continue;
    const auto t = between_tokens(sentences[i]);
    for (std::size_t s = 0; s + gram.size() <= t.size(); ++s) {
      hits += std::equal(gram.begin(), gram.end(), t.begin() + static_cast<std::ptrdiff_t>(s));
    }
  }
  return hits;
}

}  // namespace

TEST_SUITE("surface") {
  TEST_CASE("most frequent between-entity n-gram") {
    const std::vector<MarkedSentence> s{fixture::marked("X born in Y", {0, 1}, {3, 4}),
                                        fixture::marked("A born in B", {0, 1}, {3, 4}),
                                        fixture::marked("C lives near D", {0, 1}, {3, 4})};
    const std::vector<int> labels{0, 0, 0};
    const auto names = extract_names(s, labels);
    REQUIRE(names.count(0));
    CHECK(names.at(0).text() == "born in");
    CHECK(names.at(0).support == 2);
  }

  TEST_CASE("single member prefers the longest n-gram") {
    const std::vector<MarkedSentence> s{fixture::marked("Paris capital city France", {0, 1}, {3, 4})};
    const auto names = extract_names(s, std::vector<int>{5});
    CHECK(names.at(5).text() == "capital city");
    CHECK(names.at(5).support == 1);
  }

  TEST_CASE("adjacent entities yield an empty name") {
    const std::vector<MarkedSentence> s{fixture::marked("Ann Bob", {0, 1}, {1, 2}),
                                        fixture::marked("Cy Di", {0, 1}, {1, 2})};
    const auto names = extract_names(s, std::vector<int>{1, 1});
    CHECK(names.at(1).ngram.empty());
    CHECK(names.at(1).support == 0);
  }

  TEST_CASE("between-text is case-folded and excludes entity tokens") {
    const auto s = fixture::marked("Derek Bell Was Born in Belfast", {0, 2}, {5, 6});
    CHECK(between_tokens(s) == std::vector<std::string>{"was", "born", "in"});
    const auto r = fixture::marked("Belfast is where Derek Bell was born", {3, 5}, {0, 1});
    CHECK(between_tokens(r) == std::vector<std::string>{"is", "where"});
  }

  TEST_CASE("support equals a brute-force recount and order does not matter") {
    Rng rng(3);
    const std::vector<std::string> vocab{"of", "the", "son", "born", "in", "a"};
    std::vector<MarkedSentence> sentences;
    std::vector<int> labels;
    for (int i = 0; i < 60; ++i) {
      std::string text = "E1";
      const std::size_t len = uniform_index(rng, 5);
      for (std::size_t j = 0; j < len; ++j) text += " " + vocab[uniform_index(rng, vocab.size())];
      text += " E2";
      sentences.push_back(fixture::marked(text, {0, 1}, {len + 1, len + 2}));
      labels.push_back(static_cast<int>(uniform_index(rng, 4)));
    }
    const auto names = extract_names(sentences, labels, 1, 3);
    for (const auto& [cluster, name] : names) {
      if (name.ngram.empty()) continue;
      CHECK(name.ngram.size() >= 1);
      CHECK(name.ngram.size() <= 3);
      CHECK(name.support >= 1);
      CHECK(name.support == recount(sentences, labels, cluster, name.ngram));
    }

    std::vector<std::size_t> order(sentences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_indices(order, rng);
    std::vector<MarkedSentence> s2;
    std::vector<int> l2;
    for (auto i : order) {
      s2.push_back(sentences[i]);
      l2.push_back(labels[i]);
    }
    const auto shuffled = extract_names(s2, l2, 1, 3);
    for (const auto& [cluster, name] : names) {
      CHECK(shuffled.at(cluster).ngram == name.ngram);
      CHECK(shuffled.at(cluster).support == name.support);
    }
  }

  TEST_CASE("errors and output format") {
    const std::vector<MarkedSentence> s{fixture::marked("X born in Y", {0, 1}, {3, 4})};
    CHECK_THROWS_AS(extract_names(s, std::vector<int>{0, 1}), DataError);
    CHECK_THROWS_AS(extract_names(s, std::vector<int>{0}, 3, 2), UsageError);
    std::ostringstream out;
    write_names(out, extract_names(s, std::vector<int>{4}));
    CHECK(out.str() == "4\tborn in\t1\n");
  }
}
