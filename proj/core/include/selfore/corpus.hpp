#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace selfore {

inline constexpr std::string_view kE1Start = "[E1_start]";
inline constexpr std::string_view kE1End = "[E1_end]";
inline constexpr std::string_view kE2Start = "[E2_start]";
inline constexpr std::string_view kE2End = "[E2_end]";

bool is_marker(std::string_view token);

/// Half-open token interval [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct RawSentence {
  std::string id;
  std::vector<std::string> tokens;
  Span e1;
  Span e2;
  std::optional<std::string> gold_relation;
};

/// Throws DataError describing the first violated invariant: empty tokens,
/// empty or out-of-bounds spans, overlapping spans. E2 may precede E1.
void validate(const RawSentence& s);

struct MarkedSentence {
  std::vector<std::string> tokens;
  std::size_t e1_start_pos = 0;
  std::size_t e2_start_pos = 0;
  std::string origin_id;
  std::optional<std::string> gold_relation;

  /// Indices of the four markers, in E1_start, E1_end, E2_start, E2_end order.
  std::size_t e1_end_pos() const;
  std::size_t e2_end_pos() const;
};

/// Wraps E1 in [E1_start]/[E1_end] and E2 in [E2_start]/[E2_end]. The
/// sentence must satisfy validate().
MarkedSentence inject_markers(const RawSentence& s);

/// Drops the four markers, recovering the original token sequence.
std::vector<std::string> strip_markers(const MarkedSentence& s);

/// Checks marker count and placement; throws DataError when broken.
void check_markers(const MarkedSentence& s);

/// Cuts a window of at most max_length tokens that keeps both marker pairs,
/// spending the remaining budget evenly on the left and right context.
/// Returns nullopt when the entity region alone does not fit.
std::optional<MarkedSentence> truncate(const MarkedSentence& s, std::size_t max_length);

struct Diagnostic {
  std::size_t line = 0;  // 1-based
  std::string message;
};

class Corpus {
 public:
  Corpus() = default;
  /// Assigns a deterministic train/validation split. train_fraction in (0,1).
  Corpus(std::vector<MarkedSentence> sentences, double train_fraction, std::uint64_t seed);

  std::span<const MarkedSentence> sentences() const { return sentences_; }
  std::size_t size() const { return sentences_.size(); }
  const MarkedSentence& operator[](std::size_t i) const { return sentences_[i]; }

  double train_fraction() const { return train_fraction_; }
  std::span<const std::size_t> train_indices() const { return train_; }
  std::span<const std::size_t> validation_indices() const { return validation_; }
  std::vector<MarkedSentence> train() const;
  std::vector<MarkedSentence> validation() const;

  /// Sorted distinct gold relations; empty when no sentence carries one.
  std::vector<std::string> label_vocabulary() const;
  bool has_gold() const;

 private:
  std::vector<MarkedSentence> sentences_;
  double train_fraction_ = 0.8;
  std::vector<std::size_t> train_;
  std::vector<std::size_t> validation_;
};

struct IngestOptions {
  std::size_t max_length = 128;
  bool strict = false;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct IngestResult {
  Corpus corpus;
  std::vector<Diagnostic> diagnostics;  // skipped records
};

/// Parses one JSON-lines record. Throws DataError on malformed input.
RawSentence parse_record(std::string_view line);
std::string format_record(const RawSentence& s);

/// Reads a JSON-lines corpus. Invalid records are skipped and reported in
/// the diagnostics unless options.strict, in which case the first one
/// throws DataError. An empty file, or one with no usable record, throws.
IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options = {});
IngestResult ingest_lines(std::span<const std::string> lines, const IngestOptions& options = {});

}  // namespace selfore
