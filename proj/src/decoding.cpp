#include "claimlm/decoding.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "claimlm/error.hpp"

namespace claimlm {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kGreedy: return "greedy";
    case Strategy::kSample: return "sample";
    case Strategy::kTopK: return "top_k";
    case Strategy::kTopP: return "top_p";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "greedy") return Strategy::kGreedy;
  if (name == "sample") return Strategy::kSample;
  if (name == "top_k") return Strategy::kTopK;
  if (name == "top_p") return Strategy::kTopP;
  throw ConfigError("unknown decoding strategy '" + name + "'");
}

void DecodeConfig::validate() const {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  if (k < 1) throw ParameterError("k must be >= 1");
  if (!(p > 0.0 && p <= 1.0)) throw ParameterError("p must lie in (0, 1]");
  if (max_new_tokens < 1) throw ParameterError("max_new_tokens must be >= 1");
}

std::string DecodeConfig::to_kv() const {
  std::ostringstream os;
  os.precision(17);
  os << "strategy=" << to_string(strategy) << "\ntemperature=" << temperature << "\nk=" << k << "\np=" << p
     << "\nmax_new_tokens=" << max_new_tokens << "\nseed=" << seed << "\n";
  return os.str();
}

namespace {

// Indices sorted by descending probability, lower id first on ties.
std::vector<std::size_t> descending_order(std::span<const double> probs) {
  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  return idx;
}

std::vector<double> keep_and_renormalize(std::span<const double> probs, std::span<const std::size_t> kept) {
  std::vector<double> out(probs.size(), 0.0);
  double total = 0.0;
  for (std::size_t i : kept) total += probs[i];
  if (!(total > 0.0)) throw ParameterError("filtered distribution has no mass");
  for (std::size_t i : kept) out[i] = probs[i] / total;
  return out;
}

}  // namespace

std::vector<double> truncate_top_k(std::span<const double> probs, std::size_t k) {
  if (k < 1) throw ParameterError("top-k requires k >= 1");
  if (k >= probs.size()) return std::vector<double>(probs.begin(), probs.end());
  const auto order = descending_order(probs);
  return keep_and_renormalize(probs, std::span(order).first(k));
}

std::vector<double> truncate_top_p(std::span<const double> probs, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ParameterError("top-p requires 0 < p <= 1");
  if (p == 1.0) return std::vector<double>(probs.begin(), probs.end());
  const auto order = descending_order(probs);
  double cumulative = 0.0;
  std::size_t n = 0;
  while (n < order.size()) {
    cumulative += probs[order[n]];
    ++n;
    if (cumulative >= p) break;
  }
  return keep_and_renormalize(probs, std::span(order).first(n));
}

TokenId select_token(std::span<const double> probs, const DecodeConfig& cfg, CounterRng& rng) {
  if (cfg.strategy == Strategy::kGreedy) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
      if (probs[i] > probs[best]) best = i;
    return static_cast<TokenId>(best);
  }
  std::vector<double> filtered;
  if (cfg.strategy == Strategy::kTopK) {
    filtered = truncate_top_k(probs, cfg.k);
  } else if (cfg.strategy == Strategy::kTopP) {
    filtered = truncate_top_p(probs, cfg.p);
  } else {
    filtered.assign(probs.begin(), probs.end());
  }
  const double u = rng.uniform();
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < filtered.size(); ++i) {
    if (filtered[i] <= 0.0) continue;
    last_positive = i;
    cumulative += filtered[i];
    if (u < cumulative) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last_positive);
}

Generation Generator::generate(const std::string& prompt, const DecodeConfig& cfg) const {
  TokenSequence tokens{Vocab::kBos};
  const TokenSequence body = encode(vocab_, prompt);
  tokens.insert(tokens.end(), body.begin(), body.end());
  return generate_tokens(tokens, cfg);
}

Generation Generator::generate_tokens(const TokenSequence& prompt_tokens, const DecodeConfig& cfg) const {
  cfg.validate();
  if (params_.config.vocab_size != vocab_.size()) {
    throw ConfigError("model vocabulary of " + std::to_string(params_.config.vocab_size) +
                      " does not match tokenizer vocabulary of " + std::to_string(vocab_.size()));
  }
  const std::size_t limit = params_.config.max_seq_len;
  if (prompt_tokens.size() + cfg.max_new_tokens > limit) {
    throw LengthError("prompt of " + std::to_string(prompt_tokens.size()) + " tokens plus " +
                      std::to_string(cfg.max_new_tokens) + " new tokens exceeds max_seq_len " + std::to_string(limit));
  }
  CounterRng rng(cfg.seed);
  TokenSequence seq = prompt_tokens;
  Generation out;
  for (std::size_t step = 0; step < cfg.max_new_tokens; ++step) {
    const Matrix logits = forward(params_, seq, adapter_);
    const auto probs = output_distribution(logits.row(logits.rows() - 1), cfg.temperature);
    const TokenId next = select_token(probs, cfg, rng);
    out.tokens.push_back(next);
    if (next == Vocab::kEos) break;
    seq.push_back(next);
  }
  out.hit_budget = out.tokens.empty() || out.tokens.back() != Vocab::kEos;
  TokenSequence text_ids(out.tokens.begin(), out.tokens.end() - (out.hit_budget ? 0 : 1));
  out.text = decode(vocab_, text_ids);
  return out;
}

std::string generation_report_line(const std::string& prompt, const Generation& g, const DecodeConfig& cfg) {
  nlohmann::json j;
  j["prompt"] = prompt;
  j["output"] = g.text;
  j["tokens"] = g.tokens;
  j["seed"] = cfg.seed;
  j["strategy"] = to_string(cfg.strategy);
  j["config"] = {{"temperature", cfg.temperature},
                 {"k", cfg.k},
                 {"p", cfg.p},
                 {"max_new_tokens", cfg.max_new_tokens}};
  // Invalid UTF-8 from partial multi-byte tokens is replaced rather than rejected.
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace claimlm
