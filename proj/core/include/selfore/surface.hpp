#pragma once

#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "selfore/corpus.hpp"

namespace selfore {

struct RelationName {
  int cluster = 0;
  std::vector<std::string> ngram;  // empty when no member has between-text
  std::size_t support = 0;

  std::string text() const;
};

/// Lower-cased tokens strictly between the inner markers of the two
/// entities (after the first entity's end marker, before the second's start).
std::vector<std::string> between_tokens(const MarkedSentence& s);

/// Most frequent n-gram (n_min <= n <= n_max) of the between-text of each
/// cluster's members. Ties prefer the longer n-gram, then the
/// lexicographically smaller one.
std::map<int, RelationName> extract_names(std::span<const MarkedSentence> sentences,
                                          std::span<const int> labels, std::size_t n_min = 1,
                                          std::size_t n_max = 4);

/// `cluster_id<TAB>name<TAB>support`, one line per cluster.
void write_names(std::ostream& out, const std::map<int, RelationName>& names);

}  // namespace selfore
