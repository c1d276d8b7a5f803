#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace claimlm::eval {

// ---------------------------------------------------------------------------
// Rank correlation. Each function requires equal lengths and n >= 3
// (ParameterError otherwise).

// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> average_ranks(const std::vector<double>& x);

// nullopt when either vector is constant.
std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b);
std::optional<double> spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

// Tau-b by pair enumeration; nullopt when either vector is constant.
std::optional<double> kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

// Chatterjee's xi of b on a. Ties in a keep input order; the number of
// records sharing an a-value with an earlier record is written to a_ties.
// Returns 0 when b is constant.
double chatterjee_xi(const std::vector<double>& a, const std::vector<double>& b, std::size_t* a_ties = nullptr);

// ---------------------------------------------------------------------------
// Output schema

struct SchemaParse {
  bool compliant = false;
  std::string action;  // empty unless compliant
};

// Strict single-line `corrective action(s) include(d): <action>`, case-insensitive.
SchemaParse parse_corrective_action(const std::string& text);

std::vector<std::string> default_action_lexicon();

struct ExtractedAction {
  std::string phrase;
  bool terminated = false;  // phrase ends at a sentence terminator rather than end of text
};

// Finds the first repair phrase (lexicon verb followed by at least one word)
// that ends in a sentence terminator. Failing that, returns the final
// unterminated phrase unless the generation hit its token budget.
std::optional<ExtractedAction> extract_action(const std::string& text, const std::vector<std::string>& lexicon,
                                              bool hit_budget);

// ---------------------------------------------------------------------------
// Governance

struct EvalRecord {
  std::string id;
  std::string prompt;
  std::string output;
  std::string reference;
  std::string score_source;  // "human" or "judge"
  std::optional<double> score;
  bool hq = false;
  std::optional<bool> truncated;  // generation ended on max_new_tokens
};

std::vector<EvalRecord> parse_eval_jsonl(const std::string& text);
std::vector<EvalRecord> read_eval_jsonl(const std::string& path);
std::string to_jsonl(const std::vector<EvalRecord>& records);

struct RecordFlags {
  std::string id;
  bool format = false;
  bool valid = false;
  bool accurate = false;
  bool hq = false;
  std::string action;
};

struct GovernanceReport {
  std::size_t n = 0;
  std::size_t n_format = 0;
  std::size_t n_valid = 0;
  std::size_t n_valid_accurate = 0;
  std::size_t n_hq = 0;
  std::size_t n_hq_accurate = 0;
  std::vector<RecordFlags> flags;

  double format_rate() const;
  double validity_rate() const;
  std::optional<double> acc_valid() const;  // nullopt when no valid records
  std::optional<double> acc_hq() const;     // nullopt when no HQ records

  // Combines disjoint shards.
  GovernanceReport& operator+=(const GovernanceReport& other);
};

struct GovernanceOptions {
  double accuracy_threshold = 0.8;
  std::vector<std::string> lexicon = default_action_lexicon();
};

// Throws DataConsistencyError when an HQ record is not valid or a valid
// record has no score, and ParameterError on an empty record set.
GovernanceReport governance(const std::vector<EvalRecord>& records, const GovernanceOptions& options = {});

// Percentages to one decimal.
std::string governance_table(const GovernanceReport& report, const std::string& model_name);
std::string governance_csv(const GovernanceReport& report, const std::string& model_name);
std::string governance_flags_csv(const GovernanceReport& report);

// ---------------------------------------------------------------------------
// Threshold calibration

struct Threshold {
  double kappa = 0.0;
  double j = 0.0;
  std::vector<double> candidates;  // sorted unique observed scores
  bool degenerate = false;         // best J <= 0
};

double youden_j(const std::vector<double>& scores, const std::vector<int>& labels, double kappa);

// Candidate cutoffs are the observed scores, positives are score >= kappa;
// ties in J resolve to the smallest kappa. Throws CalibrationError when only
// one class is present.
Threshold youden_threshold(const std::vector<double>& scores, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Event rates

struct EventRate {
  std::size_t count = 0;
  std::size_t total = 0;
  double p_hat = 0.0;
  double expected = 0.0;  // total * p_ref
};

EventRate event_probability(const std::vector<std::string>& predictions,
                            const std::function<bool(const std::string&)>& predicate, double p_ref);

// Case-insensitive whole-phrase keyword predicate.
std::function<bool(const std::string&)> keyword_predicate(std::vector<std::string> phrases);

}  // namespace claimlm::eval
