#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace claimlm::metrics {

// Lowercase, strip ASCII punctuation, split on whitespace.
std::vector<std::string> normalize_tokens(std::string_view text);

// Unicode scalar values of a UTF-8 string (invalid bytes map to U+FFFD).
std::u32string utf8_codepoints(std::string_view text);

std::size_t levenshtein(const std::u32string& a, const std::u32string& b);

// 1 - ED / max(|pred|, |ref|) over code points; both empty -> 1.0.
double edit_distance_similarity(std::string_view prediction, std::string_view reference);

// Clipped n-gram precision; nullopt when the prediction has fewer than n tokens.
std::optional<double> ngram_precision(std::string_view prediction, std::string_view reference, std::size_t n);

// Sentence BLEU, N = 4, uniform weights, zero precisions floored at 1e-9.
double sentence_bleu(std::string_view prediction, std::string_view reference);
double brevity_penalty(std::size_t prediction_length, std::size_t reference_length);

// TF-IDF over word 1- and 2-grams with smoothed idf = ln((1+N)/(1+df)) + 1.
class TfidfSpace {
 public:
  static TfidfSpace fit(const std::vector<std::string>& corpus);

  std::map<std::string, double> vectorize(std::string_view text) const;
  double cosine(std::string_view prediction, std::string_view reference) const;

  std::size_t document_count() const noexcept { return documents_; }
  std::size_t vocabulary_size() const noexcept { return idf_.size(); }
  std::optional<double> idf(const std::string& term) const;

 private:
  std::map<std::string, double> idf_;
  std::size_t documents_ = 0;
};

// Word 1- and 2-grams in the order they occur (bigrams joined by one space).
std::vector<std::string> tfidf_terms(std::string_view text);

// Sentence and token vectors loaded from a `dim <d>` file of
// `<key>\t<floats>` lines. Token entries use keys `token:<t>`.
class EmbeddingProvider {
 public:
  EmbeddingProvider() = default;
  explicit EmbeddingProvider(std::size_t dim) : dim_(dim) {}

  static EmbeddingProvider load(const std::string& path);
  static EmbeddingProvider parse(const std::string& text);

  void add(const std::string& key, std::vector<double> vec);
  const std::vector<double>& sentence(const std::string& text) const;  // throws ProviderMiss
  const std::vector<double>& token(const std::string& tok) const;      // throws ProviderMiss
  bool contains(const std::string& key) const { return vectors_.count(key) != 0; }
  std::size_t dim() const noexcept { return dim_; }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> vectors_;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

double embedding_cosine(const EmbeddingProvider& provider, const std::string& prediction,
                        const std::string& reference);

struct BertScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Greedy max-cosine matching over token vectors.
BertScore bertscore(const EmbeddingProvider& provider, const std::vector<std::string>& prediction_tokens,
                    const std::vector<std::string>& reference_tokens);
BertScore bertscore_from_similarity(const std::vector<std::vector<double>>& sim);
double bertscore_f1(const EmbeddingProvider& provider, const std::vector<std::string>& prediction_tokens,
                    const std::vector<std::string>& reference_tokens);

// Learned pair scorer interface (BLEURT-shaped). The shipped implementation
// replays scores from a `prediction\treference\tscore` file.
class PairScorer {
 public:
  virtual ~PairScorer() = default;
  virtual double score(const std::string& prediction, const std::string& reference) const = 0;
};

class FilePairScorer : public PairScorer {
 public:
  static FilePairScorer load(const std::string& path);
  static FilePairScorer parse(const std::string& text);
  double score(const std::string& prediction, const std::string& reference) const override;

 private:
  std::map<std::pair<std::string, std::string>, double> scores_;
};

// ---------------------------------------------------------------------------
// LLM-as-a-judge

// Rubric levels accepted from a judge.
inline constexpr double kRubricLevels[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

// Deterministic judge prompt embedding the six-level rubric and the pair.
std::string render_judge_prompt(const std::string& prediction, const std::string& reference);

// First `Score: <value>` line whose value is a rubric level; throws
// JudgeParseError carrying the raw response otherwise.
double parse_judge_response(const std::string& response);

// Transport to a scoring model. Implementations throw TransportError on failure.
class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

// Offline backend that applies a string-equality rubric rule: identical
// normalized actions score 1.0, otherwise token-overlap F1 is snapped down to
// the nearest rubric level.
class RubricMockBackend : public JudgeBackend {
 public:
  std::string complete(const std::string& prompt) override;
};

// Backend that returns canned responses in order (tests, replays).
class ScriptedBackend : public JudgeBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> responses) : responses_(std::move(responses)) {}
  std::string complete(const std::string& prompt) override;
  std::size_t calls() const noexcept { return calls_; }

 private:
  std::vector<std::string> responses_;
  std::size_t calls_ = 0;
};

// POSTs the prompt as text/plain to http://host:port/path and returns the body.
class HttpJudgeBackend : public JudgeBackend {
 public:
  HttpJudgeBackend(std::string host, int port, std::string path = "/judge", int timeout_seconds = 30)
      : host_(std::move(host)), port_(port), path_(std::move(path)), timeout_seconds_(timeout_seconds) {}
  std::string complete(const std::string& prompt) override;

 private:
  std::string host_;
  int port_;
  std::string path_;
  int timeout_seconds_;
};

struct JudgeOptions {
  std::size_t max_retries = 2;  // transport retries per pair
  std::size_t max_in_flight = 4;
  std::function<void(const std::string&)> log;
};

double judge_score(JudgeBackend& backend, const std::string& prediction, const std::string& reference,
                   const JudgeOptions& options = {});

struct JudgeResult {
  std::optional<double> score;
  std::string error;  // empty on success
  std::size_t attempts = 0;
};

// Scores pairs concurrently (at most max_in_flight outstanding); results are
// indexed like the input. The backend must be safe for concurrent calls.
std::vector<JudgeResult> judge_batch(JudgeBackend& backend,
                                     const std::vector<std::pair<std::string, std::string>>& pairs,
                                     const JudgeOptions& options = {});

// ---------------------------------------------------------------------------
// Batch report

struct PairScores {
  std::string id;
  std::map<std::string, std::optional<double>> scores;
};

struct SuiteOptions {
  const EmbeddingProvider* embeddings = nullptr;  // enables bert_cosine / bertscore_f1
  const PairScorer* learned = nullptr;             // enables bleurt
  JudgeBackend* judge = nullptr;                   // enables judge
  JudgeOptions judge_options;
};

// Column order of the metric report.
std::vector<std::string> metric_columns(const SuiteOptions& options);

struct PredictionPair {
  std::string id;
  std::string prediction;
  std::string reference;
};

std::vector<PairScores> score_pairs(const std::vector<PredictionPair>& pairs, const SuiteOptions& options);

// CSV: id then one column per metric; absent values are empty cells.
std::string metric_report_csv(const std::vector<PairScores>& rows, const std::vector<std::string>& columns);

}  // namespace claimlm::metrics
