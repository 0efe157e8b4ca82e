#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "selfore/corpus.hpp"

namespace fixture {

// Marked sentence from whitespace-separated text and entity spans.
inline selfore::MarkedSentence marked(const std::string& text, selfore::Span e1, selfore::Span e2,
                                      const std::string& id = "s",
                                      std::optional<std::string> gold = std::nullopt) {
  selfore::RawSentence s;
  s.id = id;
  std::istringstream in(text);
  for (std::string t; in >> t;) s.tokens.push_back(t);
  s.e1 = e1;
  s.e2 = e2;
  s.gold_relation = std::move(gold);
  return selfore::inject_markers(s);
}

}  // namespace fixture
