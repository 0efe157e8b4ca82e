#include "selfore/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "selfore/errors.hpp"
#include "selfore/numerics.hpp"

namespace selfore {
namespace {

std::size_t find_marker(const std::vector<std::string>& tokens, std::string_view marker) {
  const auto it = std::find(tokens.begin(), tokens.end(), marker);
  if (it == tokens.end()) {
    throw DataError("marked sentence lacks " + std::string(marker));
  }
  return static_cast<std::size_t>(it - tokens.begin());
}

Span read_span(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
    throw DataError(std::string("field '") + key + "' must be [begin, end]");
  }
  const auto b = v[0].get<long long>();
  const auto e = v[1].get<long long>();
  if (b < 0 || e < 0) throw DataError(std::string("field '") + key + "' has a negative index");
  return {static_cast<std::size_t>(b), static_cast<std::size_t>(e)};
}

}  // namespace

bool is_marker(std::string_view token) {
  return token == kE1Start || token == kE1End || token == kE2Start || token == kE2End;
}

void validate(const RawSentence& s) {
  const std::size_t n = s.tokens.size();
  if (n == 0) throw DataError("record '" + s.id + "': empty token sequence");
  for (const auto& [name, span] : {std::pair{"e1", s.e1}, std::pair{"e2", s.e2}}) {
    if (span.begin >= span.end) {
      throw DataError("record '" + s.id + "': " + name + " span is empty");
    }
    if (span.end > n) {
      throw DataError("record '" + s.id + "': " + name + " span out of bounds");
    }
  }
  if (s.e1.begin < s.e2.end && s.e2.begin < s.e1.end) {
    throw DataError("record '" + s.id + "': overlapping spans");
  }
  for (const auto& t : s.tokens) {
    if (is_marker(t)) throw DataError("record '" + s.id + "': contains reserved marker token " + t);
  }
}

std::size_t MarkedSentence::e1_end_pos() const { return find_marker(tokens, kE1End); }
std::size_t MarkedSentence::e2_end_pos() const { return find_marker(tokens, kE2End); }

MarkedSentence inject_markers(const RawSentence& s) {
  validate(s);
  MarkedSentence out;
  out.origin_id = s.id;
  out.gold_relation = s.gold_relation;
  out.tokens.reserve(s.tokens.size() + 4);
  for (std::size_t i = 0; i <= s.tokens.size(); ++i) {
    if (i == s.e1.end) out.tokens.emplace_back(kE1End);
    if (i == s.e2.end) out.tokens.emplace_back(kE2End);
    if (i == s.e1.begin) {
      out.e1_start_pos = out.tokens.size();
      out.tokens.emplace_back(kE1Start);
    }
    if (i == s.e2.begin) {
      out.e2_start_pos = out.tokens.size();
      out.tokens.emplace_back(kE2Start);
    }
    if (i < s.tokens.size()) out.tokens.push_back(s.tokens[i]);
  }
  return out;
}

std::vector<std::string> strip_markers(const MarkedSentence& s) {
  std::vector<std::string> out;
  out.reserve(s.tokens.size());
  for (const auto& t : s.tokens) {
    if (!is_marker(t)) out.push_back(t);
  }
  return out;
}

void check_markers(const MarkedSentence& s) {
  std::size_t count = 0;
  for (const auto& t : s.tokens) count += is_marker(t) ? 1 : 0;
  if (count != 4) throw DataError("sentence '" + s.origin_id + "' must carry exactly four markers");
  const std::size_t e1s = find_marker(s.tokens, kE1Start);
  const std::size_t e1e = find_marker(s.tokens, kE1End);
  const std::size_t e2s = find_marker(s.tokens, kE2Start);
  const std::size_t e2e = find_marker(s.tokens, kE2End);
  if (e1s != s.e1_start_pos || e2s != s.e2_start_pos) {
    throw DataError("sentence '" + s.origin_id + "': recorded marker positions are stale");
  }
  if (!(e1s + 1 < e1e && e2s + 1 < e2e)) {
    throw DataError("sentence '" + s.origin_id + "': empty or inverted entity");
  }
  if (!(e1e < e2s || e2e < e1s)) {
    throw DataError("sentence '" + s.origin_id + "': entities overlap");
  }
}

std::optional<MarkedSentence> truncate(const MarkedSentence& s, std::size_t max_length) {
  const std::size_t n = s.tokens.size();
  if (n <= max_length) return s;
  const std::size_t first = std::min(s.e1_start_pos, s.e2_start_pos);
  const std::size_t last = std::max(s.e1_end_pos(), s.e2_end_pos()) + 1;
  const std::size_t region = last - first;
  if (region > max_length) return std::nullopt;
  const std::size_t budget = max_length - region;
  const std::size_t left_room = first;
  const std::size_t right_room = n - last;
  std::size_t left = std::min(left_room, budget / 2);
  const std::size_t right = std::min(right_room, budget - left);
  left = std::min(left_room, budget - right);

  MarkedSentence out;
  out.origin_id = s.origin_id;
  out.gold_relation = s.gold_relation;
  const std::size_t begin = first - left;
  out.tokens.assign(s.tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                    s.tokens.begin() + static_cast<std::ptrdiff_t>(last + right));
  out.e1_start_pos = s.e1_start_pos - begin;
  out.e2_start_pos = s.e2_start_pos - begin;
  return out;
}

Corpus::Corpus(std::vector<MarkedSentence> sentences, double train_fraction, std::uint64_t seed)
    : sentences_(std::move(sentences)), train_fraction_(train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw UsageError("train fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(sentences_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5b11u));
  shuffle_indices(order, rng);
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(sentences_.size())));
  train_.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  validation_.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train_.begin(), train_.end());
  std::sort(validation_.begin(), validation_.end());
}

std::vector<MarkedSentence> Corpus::train() const {
  std::vector<MarkedSentence> out;
  out.reserve(train_.size());
  for (auto i : train_) out.push_back(sentences_[i]);
  return out;
}

std::vector<MarkedSentence> Corpus::validation() const {
  std::vector<MarkedSentence> out;
  out.reserve(validation_.size());
  for (auto i : validation_) out.push_back(sentences_[i]);
  return out;
}

std::vector<std::string> Corpus::label_vocabulary() const {
  std::set<std::string> labels;
  for (const auto& s : sentences_) {
    if (s.gold_relation) labels.insert(*s.gold_relation);
  }
  return {labels.begin(), labels.end()};
}

bool Corpus::has_gold() const {
  return !sentences_.empty() &&
         std::all_of(sentences_.begin(), sentences_.end(),
                     [](const MarkedSentence& s) { return s.gold_relation.has_value(); });
}

RawSentence parse_record(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("record is not a JSON object");
  RawSentence s;
  try {
    s.id = j.at("id").get<std::string>();
    s.tokens = j.at("tokens").get<std::vector<std::string>>();
    if (j.contains("relation") && !j.at("relation").is_null()) {
      s.gold_relation = j.at("relation").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad field: ") + e.what());
  }
  s.e1 = read_span(j, "e1");
  s.e2 = read_span(j, "e2");
  return s;
}

std::string format_record(const RawSentence& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["tokens"] = s.tokens;
  j["e1"] = {s.e1.begin, s.e1.end};
  j["e2"] = {s.e2.begin, s.e2.end};
  if (s.gold_relation) j["relation"] = *s.gold_relation;
  return j.dump();
}

IngestResult ingest_lines(std::span<const std::string> lines, const IngestOptions& options) {
  IngestResult result;
  std::vector<MarkedSentence> kept;
  std::unordered_set<std::string> seen;
  bool any_content = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    any_content = true;
    try {
      RawSentence raw = parse_record(line);
      if (!seen.insert(raw.id).second) throw DataError("duplicate id '" + raw.id + "'");
      auto marked = truncate(inject_markers(raw), options.max_length);
      if (!marked) {
        throw DataError("record '" + raw.id + "': entity region exceeds max length " +
                        std::to_string(options.max_length));
      }
      kept.push_back(std::move(*marked));
    } catch (const DataError& e) {
      if (options.strict) {
        throw DataError("line " + std::to_string(i + 1) + ": " + e.what());
      }
      result.diagnostics.push_back({i + 1, e.what()});
    }
  }
  if (!any_content) throw DataError("corpus is empty");
  if (kept.empty()) throw DataError("corpus has no valid record");
  result.corpus = Corpus(std::move(kept), options.train_fraction, options.seed);
  return result;
}

IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
  return ingest_lines(lines, options);
}

}  // namespace selfore
