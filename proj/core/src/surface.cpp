#include "selfore/surface.hpp"

#include <algorithm>
#include <cctype>

#include "selfore/errors.hpp"

namespace selfore {

std::string RelationName::text() const {
  std::string out;
  for (const auto& t : ngram) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::vector<std::string> between_tokens(const MarkedSentence& s) {
  const std::size_t e1_end = s.e1_end_pos();
  const std::size_t e2_end = s.e2_end_pos();
  std::size_t begin = 0;
  std::size_t end = 0;
  if (s.e1_start_pos < s.e2_start_pos) {
    begin = e1_end + 1;
    end = s.e2_start_pos;
  } else {
    begin = e2_end + 1;
    end = s.e1_start_pos;
  }
  std::vector<std::string> out;
  for (std::size_t i = begin; i < end; ++i) {
    std::string t = s.tokens[i];
    std::transform(t.begin(), t.end(), t.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(t));
  }
  return out;
}

std::map<int, RelationName> extract_names(std::span<const MarkedSentence> sentences,
                                          std::span<const int> labels, std::size_t n_min,
                                          std::size_t n_max) {
  if (sentences.size() != labels.size()) {
    throw DataError("extract_names: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(sentences.size()) + " sentences");
  }
  if (n_min == 0 || n_min > n_max) throw UsageError("extract_names: need 1 <= n_min <= n_max");

  std::map<int, std::map<std::vector<std::string>, std::size_t>> counts;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    auto& bag = counts[labels[i]];
    const auto words = between_tokens(sentences[i]);
    for (std::size_t n = n_min; n <= n_max && n <= words.size(); ++n) {
      for (std::size_t start = 0; start + n <= words.size(); ++start) {
        ++bag[{words.begin() + static_cast<std::ptrdiff_t>(start),
               words.begin() + static_cast<std::ptrdiff_t>(start + n)}];
      }
    }
  }

  std::map<int, RelationName> names;
  for (const auto& [cluster, bag] : counts) {
    RelationName best{cluster, {}, 0};
    for (const auto& [gram, count] : bag) {
      // Map order is lexicographic, so a strict improvement test keeps the
      // smallest n-gram among equals.
      if (best.support == 0 || count > best.support ||
          (count == best.support && gram.size() > best.ngram.size())) {
        best.ngram = gram;
        best.support = count;
      }
    }
    names[cluster] = std::move(best);
  }
  return names;
}

void write_names(std::ostream& out, const std::map<int, RelationName>& names) {
  for (const auto& [cluster, name] : names) {
    out << cluster << '\t' << name.text() << '\t' << name.support << '\n';
  }
}

}  // namespace selfore
