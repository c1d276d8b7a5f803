#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "claimlm/error.hpp"
#include "claimlm/lora.hpp"
#include "claimlm/rng.hpp"

using namespace claimlm;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 24;
  c.vocab_size = 270;
  c.max_seq_len = 32;
  return c;
}

TokenSequence tokens(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  TokenSequence t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(270));
  return t;
}

void randomize_b(LoraAdapter& ad, std::uint64_t seed) {
  CounterRng rng(seed);
  ad.for_each([&](const std::string& name, Matrix& m) {
    if (name.back() == 'B')
      for (double& v : m.data()) v = rng.normal(0.0, 0.1);
  });
}

}  // namespace

TEST_CASE("injection shapes and initialization") {
  const ModelParams p = ModelParams::init(small_config(), 1);
  const LoraAdapter ad = inject(p, LoraConfig::attention_default(4, 8), 2);
  const LoraPair* q = ad.find(0, "q");
  REQUIRE(q != nullptr);
  CHECK(q->a.rows() == 4);
  CHECK(q->a.cols() == 16);
  CHECK(q->b.rows() == 16);
  CHECK(q->b.cols() == 4);
  CHECK(q->b == Matrix(16, 4, 0.0));
  CHECK(ad.find(0, "k") == nullptr);
  CHECK(ad.config().scale() == 2.0);

  ModelConfig wide_cfg = small_config();
  wide_cfg.d = 256;
  wide_cfg.n_heads = 4;
  const LoraAdapter wide = inject(ModelParams::init(wide_cfg, 1), LoraConfig::attention_default(8, 8), 3);
  double s2 = 0.0;
  std::size_t n = 0;
  wide.for_each([&](const std::string& name, const Matrix& m) {
    if (name.back() != 'A') return;
    for (double v : m.data()) s2 += v * v, ++n;
  });
  CHECK(std::sqrt(s2 / static_cast<double>(n)) == doctest::Approx(1.0 / 8.0).epsilon(0.05));
}

TEST_CASE("zero-initialized adapter leaves logits bitwise unchanged") {
  const ModelParams p = ModelParams::init(small_config(), 4);
  const LoraAdapter ad = inject(p, LoraConfig::all_projections(4, 4), 5);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto t = tokens(10, s);
    CHECK(forward(p, t, &ad) == forward(p, t));
  }
}

TEST_CASE("effective weight adds the scaled low-rank product") {
  const Matrix w{{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}};  // d_out 3 x d_in 2
  const Matrix a{{1.0, -1.0}};                         // r 1 x d_in 2
  const Matrix b{{2.0}, {0.0}, {1.0}};                 // d_out 3 x r 1
  const Matrix e = effective_weight(w, a, b, 3.0, 1);  // scale 3
  CHECK(e == Matrix{{7.0, -4.0}, {3.0, 4.0}, {8.0, 3.0}});
}

TEST_CASE("merged weights reproduce the adapted forward") {
  const ModelParams p = ModelParams::init(small_config(), 6);
  LoraAdapter ad = inject(p, LoraConfig::all_projections(4, 6), 7);
  randomize_b(ad, 8);
  const auto t = tokens(12, 9);
  const Matrix adapted = forward(p, t, &ad);
  CHECK_FALSE(adapted == forward(p, t));
  const ModelParams merged = merge(ad, p);
  CHECK(max_abs_diff(forward(merged, t), adapted) <= 1e-12);
  CHECK(ad.merged());
  CHECK_THROWS_AS(merge(ad, p), ConfigError);
  Tape tape;
  CHECK_THROWS_AS(BoundModel(tape, p, &ad, {}), ConfigError);
}

TEST_CASE("parameter counts") {
  const ModelConfig c = small_config();
  const LoraConfig qv = LoraConfig::attention_default(4, 4);
  CHECK(trainable_parameter_count(qv, c) == 2 * 2 * 4 * (16 + 16));
  const ModelParams p = ModelParams::init(c, 1);
  CHECK(inject(p, qv, 1).parameter_count() == trainable_parameter_count(qv, c));
  const LoraConfig all = LoraConfig::all_projections(2, 2);
  // q,k,v,o: 16->16; up, gate: 16->12; down: 12->16
  CHECK(trainable_parameter_count(all, c) == 2 * 2 * (4 * 32 + 2 * 28 + 28));
  CHECK(inject(p, all, 1).parameter_count() == trainable_parameter_count(all, c));
}

TEST_CASE("config validation") {
  const ModelConfig c = small_config();
  LoraConfig cfg = LoraConfig::attention_default(12, 12);  // ffn not targeted, min dim 16
  CHECK_NOTHROW(cfg.validate(c));
  cfg.r = 16;
  CHECK_THROWS_AS(cfg.validate(c), ConfigError);
  cfg = LoraConfig::attention_default(4, 4);
  cfg.targets = {"q", "x"};
  CHECK_THROWS_AS(cfg.validate(c), ConfigError);
  cfg.targets = {"q", "q"};
  CHECK_THROWS_AS(cfg.validate(c), ConfigError);
  cfg.targets = {"q"};
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(c), ConfigError);
  CHECK_THROWS_AS(LoraConfig::from_kv({{"r", "0"}}), ConfigError);
  const LoraConfig back = LoraConfig::from_kv(parse_kv_block(LoraConfig::all_projections(8, 16).to_kv()));
  CHECK(back.to_kv() == LoraConfig::all_projections(8, 16).to_kv());
}

TEST_CASE("dropout applies only when a dropout stream is supplied") {
  const ModelParams p = ModelParams::init(small_config(), 10);
  LoraConfig cfg = LoraConfig::attention_default(4, 4);
  cfg.dropout = 0.5;
  LoraAdapter ad = inject(p, cfg, 11);
  randomize_b(ad, 12);
  const auto t = tokens(8, 13);
  Tape t1, t2;
  CounterRng rng(14);
  const Matrix eval_logits = BoundModel(t1, p, &ad, {}).forward(t).value();
  const Matrix train_logits = BoundModel(t2, p, &ad, {false, true, &rng}).forward(t).value();
  CHECK(eval_logits == forward(p, t, &ad));
  CHECK_FALSE(train_logits == eval_logits);
}

TEST_CASE("adapter files round-trip") {
  const ModelParams p = ModelParams::init(small_config(), 15);
  LoraAdapter ad = inject(p, LoraConfig::attention_default(4, 4), 16);
  randomize_b(ad, 17);
  const auto path = (std::filesystem::temp_directory_path() / "claimlm_test_adapter.bin").string();
  ad.save(path);
  const LoraAdapter back = LoraAdapter::load(path);
  std::remove(path.c_str());
  CHECK(back.config().to_kv() == ad.config().to_kv());
  const auto t = tokens(6, 18);
  CHECK(max_abs_diff(forward(p, t, &back), forward(p, t, &ad)) < 1e-6);
}
