#include <doctest.h>

#include <algorithm>
#include <nlohmann/json.hpp>
#include <thread>

#include "claimlm/decoding.hpp"
#include "claimlm/error.hpp"

using namespace claimlm;

namespace {

ModelParams small_model() {
  ModelConfig c;
  c.d = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = Vocab::kBaseSize;
  c.max_seq_len = 24;
  return ModelParams::init(c, 4);
}

std::size_t support(const std::vector<double>& p) {
  return static_cast<std::size_t>(std::count_if(p.begin(), p.end(), [](double x) { return x > 0.0; }));
}

}  // namespace

TEST_CASE("strategy names round trip") {
  for (Strategy s : {Strategy::kGreedy, Strategy::kSample, Strategy::kTopK, Strategy::kTopP})
    CHECK(parse_strategy(to_string(s)) == s);
  CHECK_THROWS_AS(parse_strategy("beam"), ConfigError);
}

TEST_CASE("config validation") {
  DecodeConfig c;
  CHECK_NOTHROW(c.validate());
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = {};
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = {};
  c.p = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c.p = 1.01;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = {};
  c.max_new_tokens = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("top-k truncation") {
  const std::vector<double> probs{0.1, 0.4, 0.2, 0.2, 0.1};
  const auto k2 = truncate_top_k(probs, 2);
  // 0.2 tie resolved toward the lower id.
  const std::vector<double> want{0.0, 2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(k2[i] == doctest::Approx(want[i]).epsilon(1e-15));
  CHECK(support(truncate_top_k(probs, 3)) == 3);
  CHECK(truncate_top_k(probs, 9) == probs);
  const auto k1 = truncate_top_k(probs, 1);
  CHECK(k1[1] == 1.0);
  CHECK(support(k1) == 1);
}

TEST_CASE("top-p keeps the minimal prefix") {
  const std::vector<double> probs{0.05, 0.5, 0.15, 0.3};
  const auto a = truncate_top_p(probs, 0.8);
  CHECK(support(a) == 2);
  CHECK(a[1] == doctest::Approx(0.625).epsilon(1e-15));
  CHECK(a[3] == doctest::Approx(0.375).epsilon(1e-15));
  CHECK(support(truncate_top_p(probs, 0.81)) == 3);
  CHECK(support(truncate_top_p(probs, 0.1)) == 1);
  CHECK(truncate_top_p(probs, 1.0) == probs);
}

TEST_CASE("sampling frequencies track the filtered distribution") {
  const std::vector<double> probs{0.5, 0.3, 0.15, 0.05};
  DecodeConfig cfg;
  cfg.strategy = Strategy::kTopK;
  cfg.k = 2;
  CounterRng rng(17);
  std::vector<int> counts(4, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(select_token(probs, cfg, rng))];
  CHECK(counts[2] == 0);
  CHECK(counts[3] == 0);
  CHECK(counts[0] / double(n) == doctest::Approx(0.625).epsilon(0.03));

  cfg.strategy = Strategy::kSample;
  std::fill(counts.begin(), counts.end(), 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(select_token(probs, cfg, rng))];
  for (std::size_t i = 0; i < 4; ++i) CHECK(counts[i] / double(n) == doctest::Approx(probs[i]).epsilon(0.1));

  cfg.strategy = Strategy::kGreedy;
  CHECK(select_token(std::vector<double>{0.2, 0.4, 0.4}, cfg, rng) == 1);
}

TEST_CASE("greedy generation follows the argmax of the forward pass") {
  const ModelParams p = small_model();
  const Vocab v;
  Generator g(p, v);
  DecodeConfig cfg;
  cfg.strategy = Strategy::kGreedy;
  cfg.max_new_tokens = 6;
  const TokenSequence prompt{Vocab::kBos, 'h', 'i'};
  const Generation out = g.generate_tokens(prompt, cfg);
  REQUIRE(!out.tokens.empty());
  CHECK(out.tokens.size() <= 6);
  TokenSequence seq = prompt;
  for (TokenId t : out.tokens) {
    const Matrix logits = forward(p, seq);
    const auto row = logits.row(logits.rows() - 1);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    CHECK(t == best);
    seq.push_back(t);
  }
  CHECK(out.hit_budget == (out.tokens.back() != Vocab::kEos));
}

TEST_CASE("seeded sampling is reproducible and sessions are independent") {
  const ModelParams p = small_model();
  const Vocab v;
  Generator g(p, v);
  DecodeConfig cfg;
  cfg.strategy = Strategy::kSample;
  cfg.max_new_tokens = 10;
  cfg.seed = 99;
  const Generation ref = g.generate("abc", cfg);
  CHECK(ref.tokens.size() <= 10);
  Generation a, b;
  std::thread ta([&] { a = g.generate("abc", cfg); });
  std::thread tb([&] { b = g.generate("abc", cfg); });
  ta.join();
  tb.join();
  CHECK(a.tokens == ref.tokens);
  CHECK(b.tokens == ref.tokens);
  cfg.seed = 100;
  bool any_diff = false;
  for (std::uint64_t s = 100; s < 105 && !any_diff; ++s) {
    cfg.seed = s;
    any_diff = g.generate("abc", cfg).tokens != ref.tokens;
  }
  CHECK(any_diff);
}

TEST_CASE("budget and length limits") {
  const ModelParams p = small_model();
  const Vocab v;
  Generator g(p, v);
  DecodeConfig cfg;
  cfg.strategy = Strategy::kSample;
  cfg.max_new_tokens = 1;
  const Generation one = g.generate("x", cfg);
  CHECK(one.tokens.size() == 1);
  cfg.max_new_tokens = 22;
  CHECK_THROWS_AS(g.generate("xy", cfg), LengthError);  // bos + 2 + 22 > 24
  cfg.max_new_tokens = 21;
  CHECK_NOTHROW(g.generate("xy", cfg));

  const Vocab bigger = train_bpe({"aaaa aaaa"}, 260);
  REQUIRE(bigger.size() == 260);
  Generator mismatched(p, bigger);
  CHECK_THROWS_AS(mismatched.generate("x", cfg), ConfigError);
}

TEST_CASE("report line fields") {
  Generation gen;
  gen.text = "ok";
  gen.tokens = {'o', 'k', Vocab::kEos};
  DecodeConfig cfg;
  cfg.seed = 3;
  const auto j = nlohmann::json::parse(generation_report_line("p", gen, cfg));
  CHECK(j["prompt"] == "p");
  CHECK(j["output"] == "ok");
  CHECK(j["tokens"].size() == 3);
  CHECK(j["seed"] == 3);
  CHECK(j["strategy"] == to_string(Strategy::kTopK));
  CHECK(j["config"]["k"] == 50);
  gen.text = std::string("\xff", 1);
  CHECK(nlohmann::json::parse(generation_report_line("p", gen, cfg)).is_object());
}
