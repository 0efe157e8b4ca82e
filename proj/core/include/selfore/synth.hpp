#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "selfore/corpus.hpp"

namespace selfore {

struct SynthConfig {
  int relations = 4;
  int per_relation = 250;
  std::uint64_t seed = 0;
};

/// Relation name and the between-entity phrasings used for it. Phrasings of
/// different relations share no token.
struct RelationTemplate {
  std::string name;
  std::vector<std::vector<std::string>> phrasings;
};

std::vector<RelationTemplate> synth_templates(int relations);

/// Templated sentences "[filler] E1 <phrase> E2 [filler] ." with gold
/// relations, shuffled deterministically. Throws UsageError unless
/// relations >= 2 and per_relation >= 1.
std::vector<RawSentence> synthesize(const SynthConfig& cfg);

/// Writes the corpus as JSON lines.
void write_corpus(const std::filesystem::path& path, const std::vector<RawSentence>& sentences);

}  // namespace selfore
