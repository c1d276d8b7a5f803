#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "claimlm/records.hpp"

namespace claimlm::preprocess {

// Word-boundary rewrite table applied with single-pass longest match.
class RewriteDict {
 public:
  RewriteDict() = default;

  // Keys are lowercased. Throws ConfigError if any replacement contains a key
  // (repeated application would keep rewriting).
  static RewriteDict from_pairs(std::vector<std::pair<std::string, std::string>> entries);
  static RewriteDict parse(const std::string& text);  // `key<TAB>value`, `#` comments
  static RewriteDict load(const std::string& path);

  std::string apply(const std::string& lowered) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return entries_.empty(); }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;  // sorted by key length, longest first
};

// Administrative sentence markers: plain substrings, or `^text` anchored at
// the sentence start. Matching is against normalized (lowercase) text.
class PatternSet {
 public:
  PatternSet() = default;
  explicit PatternSet(std::vector<std::string> patterns);
  static PatternSet parse(const std::string& text);  // one per line, `#` comments
  static PatternSet load(const std::string& path);

  bool matches(const std::string& sentence) const;
  const std::vector<std::string>& patterns() const noexcept { return patterns_; }

 private:
  std::vector<std::string> patterns_;
};

struct PipelineConfig {
  RewriteDict shorthand;
  RewriteDict misspellings;
  PatternSet admin_patterns;
  std::size_t min_tokens = 3;
};

// Sentences end at '.' or newline; the terminator stays with its sentence.
std::vector<std::string> split_sentences(const std::string& text);
std::string join_sentences(const std::vector<std::string>& sentences);

// Collapses whitespace runs and trims.
std::string collapse_whitespace(const std::string& text);

std::string normalize_string(const std::string& text, const PipelineConfig& config);

// Stage 1. Keeps the first occurrence of each sentence within and across
// complaint, cause, correction (in that order). `key_config` supplies the
// normalization used for the comparison key; without it keys are whitespace
// collapsed only.
ClaimRecord dedup_fragments(const ClaimRecord& record, const PipelineConfig* key_config = nullptr);

// Stages 2 and 3: lowercase, shorthand expansion, misspelling correction.
ClaimRecord normalize_text(const ClaimRecord& record, const PipelineConfig& config);

// Stage 4.
ClaimRecord strip_admin(const ClaimRecord& record, const PatternSet& patterns);

// Stage 5. Returns the first field name with fewer than min_tokens tokens.
std::optional<std::string> filter_degenerate(const ClaimRecord& record, std::size_t min_tokens);

struct DropEntry {
  std::string id;
  int stage = 0;
  std::string reason;
};

struct PipelineResult {
  std::vector<ClaimRecord> records;
  std::vector<DropEntry> drops;
};

PipelineResult run_pipeline(const std::vector<ClaimRecord>& records, const PipelineConfig& config);

// `id<TAB>stage<TAB>reason` lines.
std::string drop_log_tsv(const std::vector<DropEntry>& drops);

}  // namespace claimlm::preprocess
