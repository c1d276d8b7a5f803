#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "claimlm/lora.hpp"
#include "claimlm/model.hpp"
#include "claimlm/rng.hpp"
#include "claimlm/tokenizer.hpp"

namespace claimlm {

enum class Strategy { kGreedy, kSample, kTopK, kTopP };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);  // throws ConfigError

struct DecodeConfig {
  Strategy strategy = Strategy::kTopK;
  double temperature = 1.0;
  std::size_t k = 50;
  double p = 0.9;
  std::size_t max_new_tokens = 64;
  std::uint64_t seed = 0;

  void validate() const;  // throws ParameterError
  std::string to_kv() const;
};

// Keeps the k largest entries (lower id wins ties) and renormalizes.
std::vector<double> truncate_top_k(std::span<const double> probs, std::size_t k);
// Keeps the minimal descending prefix whose cumulative mass reaches p.
std::vector<double> truncate_top_p(std::span<const double> probs, double p);

struct Generation {
  std::string text;       // decoded new tokens, end-of-sequence excluded
  TokenSequence tokens;   // generated ids, including a final eos when emitted
  bool hit_budget = false;
};

// One RNG per session; sessions over the same model may run concurrently.
class Generator {
 public:
  Generator(const ModelParams& params, const Vocab& vocab, const LoraAdapter* adapter = nullptr)
      : params_(params), vocab_(vocab), adapter_(adapter) {}

  Generation generate(const std::string& prompt, const DecodeConfig& cfg) const;
  Generation generate_tokens(const TokenSequence& prompt_tokens, const DecodeConfig& cfg) const;

 private:
  const ModelParams& params_;
  const Vocab& vocab_;
  const LoraAdapter* adapter_;
};

// Selects the next id from a probability vector under the strategy.
TokenId select_token(std::span<const double> probs, const DecodeConfig& cfg, CounterRng& rng);

// JSON Lines record: prompt, output, tokens, seed, strategy, config.
std::string generation_report_line(const std::string& prompt, const Generation& g, const DecodeConfig& cfg);

}  // namespace claimlm
