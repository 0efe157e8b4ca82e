#include "selfore/synth.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "selfore/errors.hpp"
#include "selfore/numerics.hpp"

namespace selfore {
namespace {

std::vector<std::string> split(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

const std::vector<std::pair<std::string, std::vector<std::string>>>& catalogue() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> c = {
      {"place_of_birth", {"was born in", "was born near", "born in", "was born and raised in"}},
      {"employer", {"works for", "works at", "currently works for", "works full time for"}},
      {"capital_of", {"capital of", "is the capital of", "remains capital of", "serves as the capital of"}},
      {"spouse", {"married", "has married", "got married to", "recently married"}},
      {"founded", {"founded", "jointly founded", "first founded", "founded early"}},
      {"member_of", {"plays on", "plays within", "regularly plays on", "plays alongside"}},
      {"located_in", {"lies inside", "lies deep inside", "lies just inside", "lies somewhere inside"}},
      {"parent_of", {"fathered", "proudly fathered", "fathered a son named", "fathered a daughter named"}},
  };
  return c;
}

const std::vector<std::string> kFirst = {
    "Derek", "Maria", "Kenji", "Amara", "Lucas", "Ingrid", "Omar", "Priya", "Tomas", "Chen",
    "Fatima", "Jonas", "Elena", "Kwame", "Sofia", "Ravi", "Hana", "Pedro", "Leila", "Ivan"};
const std::vector<std::string> kLast = {
    "Bell", "Okafor", "Tanaka", "Silva", "Novak", "Haddad", "Larsen", "Moreau", "Kowalski", "Reyes",
    "Nguyen", "Fischer", "Mensah", "Costa", "Ibrahim", "Andersen", "Petrov", "Dubois", "Kim", "Walsh"};
const std::vector<std::string> kPlaces = {
    "Belfast", "Lagos", "Osaka", "Porto", "Krakow", "Beirut", "Bergen", "Lyon", "Quito", "Hanoi",
    "Accra", "Leipzig", "Cusco", "Tbilisi", "Dakar", "Galway", "Mombasa", "Tampere", "Cordoba", "Hobart"};
const std::vector<std::string> kOrgSuffix = {"Group", "Institute", "United", "Labs", "Council"};
const std::vector<std::string> kPrefix = {"Yesterday", "Reportedly", "Officially", "Notably",
                                          "Meanwhile", "Historically"};
const std::vector<std::string> kSuffix = {"last year", "since 1990", "according to records",
                                          "this spring", "long ago", "by all accounts"};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[uniform_index(rng, v.size())];
}

std::vector<std::string> entity(Rng& rng) {
  switch (uniform_index(rng, 3)) {
    case 0:
      return {pick(kFirst, rng), pick(kLast, rng)};
    case 1:
      return {pick(kPlaces, rng)};
    default:
      return {pick(kPlaces, rng), pick(kOrgSuffix, rng)};
  }
}

}  // namespace

std::vector<RelationTemplate> synth_templates(int relations) {
  std::vector<RelationTemplate> out;
  const auto& cat = catalogue();
  for (int r = 0; r < relations; ++r) {
    RelationTemplate t;
    if (static_cast<std::size_t>(r) < cat.size()) {
      t.name = cat[static_cast<std::size_t>(r)].first;
      for (const auto& p : cat[static_cast<std::size_t>(r)].second) t.phrasings.push_back(split(p));
    } else {
      char name[32];
      std::snprintf(name, sizeof name, "relation_%02d", r);
      t.name = name;
      char core[32];
      std::snprintf(core, sizeof core, "r%02dverb", r);
      t.phrasings.push_back({core});
      for (int j = 1; j < 4; ++j) {
        char mod[32];
        std::snprintf(mod, sizeof mod, "r%02dmod%d", r, j);
        t.phrasings.push_back({mod, core});
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<RawSentence> synthesize(const SynthConfig& cfg) {
  if (cfg.relations < 2) throw UsageError("synth: need at least two relations");
  if (cfg.per_relation < 1) throw UsageError("synth: per-relation count must be positive");
  const auto templates = synth_templates(cfg.relations);
  Rng rng(derive_seed(cfg.seed, 0x5e17));

  std::vector<RawSentence> out;
  out.reserve(static_cast<std::size_t>(cfg.relations * cfg.per_relation));
  for (const auto& rel : templates) {
    for (int i = 0; i < cfg.per_relation; ++i) {
      RawSentence s;
      s.gold_relation = rel.name;
      if (uniform_index(rng, 2) == 0) s.tokens.push_back(pick(kPrefix, rng));
      const auto e1 = entity(rng);
      s.e1 = {s.tokens.size(), s.tokens.size() + e1.size()};
      s.tokens.insert(s.tokens.end(), e1.begin(), e1.end());
      const auto& phrase = pick(rel.phrasings, rng);
      s.tokens.insert(s.tokens.end(), phrase.begin(), phrase.end());
      auto e2 = entity(rng);
      while (e2 == e1) e2 = entity(rng);
      s.e2 = {s.tokens.size(), s.tokens.size() + e2.size()};
      s.tokens.insert(s.tokens.end(), e2.begin(), e2.end());
      if (uniform_index(rng, 2) == 0) {
        const auto tail = split(pick(kSuffix, rng));
        s.tokens.insert(s.tokens.end(), tail.begin(), tail.end());
      }
      s.tokens.emplace_back(".");
      out.push_back(std::move(s));
    }
  }
  std::vector<std::size_t> order(out.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_indices(order, rng);
  std::vector<RawSentence> shuffled;
  shuffled.reserve(out.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    shuffled.push_back(std::move(out[order[i]]));
    char id[32];
    std::snprintf(id, sizeof id, "s%06zu", i);
    shuffled.back().id = id;
  }
  return shuffled;
}

void write_corpus(const std::filesystem::path& path, const std::vector<RawSentence>& sentences) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& s : sentences) out << format_record(s) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace selfore
