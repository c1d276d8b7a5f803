#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "claimlm/error.hpp"
#include "claimlm/rng.hpp"
#include "claimlm/synthetic.hpp"
#include "claimlm/training.hpp"

using namespace claimlm;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.d = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = Vocab::kBaseSize;
  c.max_seq_len = 48;
  return c;
}

}  // namespace

TEST_CASE("prompt framing") {
  CHECK(render_prompt("a", "b") == "Complaint: a\nCause: b\nCorrective actions included:");
  CHECK(render_response("replace tire") == " replace tire");
}

TEST_CASE("assemble masks the instruction and supervises the response") {
  const Vocab v;  // bytes only
  const TrainingExample ex = assemble("ab", "c", v, 16, false);
  CHECK(ex.tokens == TokenSequence{Vocab::kBos, 'a', 'b', 'c', Vocab::kEos});
  CHECK(ex.mask == std::vector<double>{0, 0, 0, 1, 1});
  CHECK(ex.instruction_length == 3);
  CHECK(ex.response_length == 2);

  const TrainingExample padded = assemble("ab", "c", v, 8, true);
  CHECK(padded.tokens.size() == 8);
  CHECK(padded.tokens.back() == Vocab::kPad);
  CHECK(padded.mask == std::vector<double>{0, 0, 0, 1, 1, 0, 0, 0});
  CHECK(padded.effective_length() == 5);

  const TrainingExample cut = assemble("ab", "cdefgh", v, 6, true);
  CHECK(cut.tokens.size() == 6);
  CHECK(cut.tokens == TokenSequence{Vocab::kBos, 'a', 'b', 'c', 'd', 'e'});

  CHECK_THROWS_AS(assemble("ab", "", v, 8), ExampleRejected);
  CHECK_THROWS_AS(assemble("abcdef", "x", v, 6), ExampleRejected);
}

TEST_CASE("masked nll oracles") {
  SUBCASE("uniform logits cost log |V| per token") {
    const Matrix logits(2, 7, 0.0);
    CHECK(masked_nll(logits, {1, 3}, {0, 1}) == doctest::Approx(std::log(7.0)).epsilon(1e-14));
  }
  SUBCASE("certain predictions cost nothing") {
    Matrix logits(2, 4, -1000.0);
    logits(0, 2) = 0.0;
    CHECK(masked_nll(logits, {0, 2}, {0, 1}) == 0.0);
  }
  SUBCASE("probabilities one half and one quarter") {
    Matrix logits(3, 4);
    const double l2 = std::log(0.5), l4 = std::log(0.25), l6 = std::log(1.0 / 6.0);
    logits.row(0)[0] = l2, logits.row(0)[1] = l6, logits.row(0)[2] = l6, logits.row(0)[3] = l6;
    logits.row(1)[0] = l4, logits.row(1)[1] = l4, logits.row(1)[2] = l4, logits.row(1)[3] = l4;
    const double mean = masked_nll(logits, {9, 0, 3}, {0, 1, 1});
    CHECK(mean == doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-13));
    CHECK(masked_nll(logits, {9, 0, 3}, {0, 1, 1}, LossReduction::kSum) ==
          doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-13));
  }
  SUBCASE("all-zero mask is degenerate") {
    CHECK_THROWS_AS(masked_nll(Matrix(2, 3, 0.0), {0, 1}, {1, 0}), DegenerateExample);
  }
}

TEST_CASE("masked nll gradient matches differences and vanishes off-mask") {
  CounterRng rng(3);
  Matrix point(5, 6);
  for (double& v : point.data()) v = rng.normal();
  const TokenSequence z{0, 4, 2, 5, 1};
  const std::vector<double> m{0, 0, 1, 1, 0};
  Tape tape;
  Var x = tape.leaf(point, true);
  tape.backward(masked_nll(x, z, m));
  const Matrix g = x.grad();
  const double err = grad_check([&](const Matrix& p) { return masked_nll(p, z, m); }, g, point, 1e-6);
  CHECK(err < 1e-8);
  // Rows 0 and 3 feed unsupervised targets (z1, z4); row 4 feeds nothing.
  for (std::size_t r : {0u, 3u, 4u})
    for (std::size_t j = 0; j < 6; ++j) CHECK(g(r, j) == 0.0);
}

TEST_CASE("padding content does not change the loss") {
  const ModelParams p = ModelParams::init(toy_config(), 1);
  const Vocab v;
  TrainingExample ex = assemble("xy", "zz", v, 12, true);
  const double base = example_loss_and_grads(ex, p, nullptr, false).loss;
  for (std::size_t t = 6; t < 12; ++t) ex.tokens[t] = 'q';
  CHECK(example_loss_and_grads(ex, p, nullptr, false).loss == base);
}

TEST_CASE("adamw arithmetic") {
  Matrix w{{1.0, -2.0}};
  std::map<std::string, Matrix*> params{{"w", &w}};
  AdamWConfig cfg;
  cfg.lr = 0.1;
  AdamWState st;

  SUBCASE("zero gradient, no decay") {
    adamw_step(params, {{"w", Matrix(1, 2, 0.0)}}, st, cfg);
    CHECK(w == Matrix{{1.0, -2.0}});
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    adamw_step(params, {{"w", Matrix{{0.3, -5.0}}}}, st, cfg);
    CHECK(w(0, 0) == doctest::Approx(1.0 - 0.1).epsilon(1e-7));
    CHECK(w(0, 1) == doctest::Approx(-2.0 + 0.1).epsilon(1e-7));
    CHECK(st.step == 1);
  }
  SUBCASE("decoupled decay with zero gradient") {
    cfg.weight_decay = 0.5;
    adamw_step(params, {{"w", Matrix(1, 2, 0.0)}}, st, cfg);
    CHECK(w(0, 0) == doctest::Approx(1.0 * (1 - 0.1 * 0.5)).epsilon(1e-14));
    CHECK(w(0, 1) == doctest::Approx(-2.0 * (1 - 0.1 * 0.5)).epsilon(1e-14));
  }
  SUBCASE("non-finite gradient names the tensor") {
    try {
      adamw_step(params, {{"w", Matrix{{std::nan(""), 0.0}}}}, st, cfg);
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(std::string(e.what()).find("w") != std::string::npos);
    }
  }
}

TEST_CASE("training loop behaviour") {
  const auto claims = synthetic::clean_claims(6, 2);
  const Vocab v = train_bpe(synthetic::narrative_corpus(claims), 300);
  ModelConfig mc = toy_config();
  mc.vocab_size = v.size();
  mc.max_seq_len = 128;
  std::vector<TrainingExample> data;
  for (const auto& c : claims) data.push_back(assemble(c, v, 128, false));
  TrainConfig tc;
  tc.batch_size = 2;
  tc.grad_accumulation = 1;
  tc.epochs = 2;
  tc.max_seq_len = 128;
  tc.seed = 5;

  SUBCASE("zero learning rate keeps the loss constant per batch order") {
    ModelParams p = ModelParams::init(mc, 1);
    const ModelParams before = p;
    tc.optimizer.lr = 0.0;
    tc.shuffle = false;
    const auto r = train(data, p, nullptr, tc);
    CHECK(r.steps == 6);
    CHECK(p.embedding == before.embedding);
    for (std::size_t i = 3; i < r.loss_trace.size(); ++i) CHECK(r.loss_trace[i] == r.loss_trace[i - 3]);
  }
  SUBCASE("identical seeds give identical traces") {
    tc.optimizer.lr = 1e-2;
    ModelParams a = ModelParams::init(mc, 1), b = ModelParams::init(mc, 1);
    CHECK(train(data, a, nullptr, tc).loss_trace == train(data, b, nullptr, tc).loss_trace);
  }
  SUBCASE("adapter training leaves the backbone untouched") {
    ModelParams p = ModelParams::init(mc, 1);
    const ModelParams before = p;
    LoraAdapter ad = inject(p, LoraConfig::attention_default(2, 2), 3);
    tc.optimizer.lr = 1e-2;
    train(data, p, &ad, tc);
    p.for_each([&](const std::string& name, const Matrix& m) {
      CHECK(m == const_cast<ModelParams&>(before).tensor(name));
    });
    CHECK_FALSE(ad.find(0, "q")->b == Matrix(16, 2, 0.0));
    const auto lg = example_loss_and_grads(data[0], p, &ad, false);
    for (const auto& [name, g] : lg.grads) CHECK(name.find(".A") + name.find(".B") != 2 * std::string::npos);
    CHECK(lg.grads.size() == 4);
  }
  SUBCASE("a single example is fitted") {
    ModelParams p = ModelParams::init(mc, 1);
    tc.optimizer.lr = 1e-2;
    tc.epochs = 40;
    const auto r = train({data[0]}, p, nullptr, tc);
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 5; ++i) head += r.loss_trace[i], tail += r.loss_trace[r.loss_trace.size() - 1 - i];
    CHECK(tail < 0.5 * head);
  }
  SUBCASE("invalid configuration") {
    ModelParams p = ModelParams::init(mc, 1);
    tc.batch_size = 0;
    CHECK_THROWS_AS(train(data, p, nullptr, tc), ConfigError);
  }
}

TEST_CASE("loss trace csv") { CHECK(loss_trace_csv({0.5, 0.25}) == "step,loss\n1,0.5\n2,0.25\n"); }

TEST_CASE("kl / mle decomposition") {
  SUBCASE("identical tables") {
    const Matrix p{{0.2, 0.8}, {0.6, 0.4}};
    const auto g = kl_mle_gap(p, p);
    CHECK(std::abs(g.kl) < 1e-15);
    CHECK(g.nll == doctest::Approx(g.entropy).epsilon(1e-15));
  }
  SUBCASE("two-symbol hand value") {
    const auto g = kl_mle_gap(Matrix{{0.5, 0.5}}, Matrix{{0.25, 0.75}});
    const double kl = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(g.kl == doctest::Approx(kl).epsilon(1e-14));
    CHECK(g.nll == doctest::Approx(std::log(2.0) + kl).epsilon(1e-14));
  }
  SUBCASE("zero model mass where data is positive") {
    CHECK_THROWS_AS(kl_mle_gap(Matrix{{0.5, 0.5}}, Matrix{{1.0, 0.0}}), InfiniteKlError);
  }
  SUBCASE("weighted marginal") {
    CounterRng rng(1);
    Matrix p(3, 5), q(3, 5);
    for (std::size_t r = 0; r < 3; ++r) {
      double sp = 0.0, sq = 0.0;
      for (std::size_t c = 0; c < 5; ++c) sp += p(r, c) = rng.uniform() + 0.01, sq += q(r, c) = rng.uniform() + 0.01;
      for (std::size_t c = 0; c < 5; ++c) p(r, c) /= sp, q(r, c) /= sq;
    }
    const auto g = kl_mle_gap(p, q, std::vector<double>{0.5, 0.3, 0.2});
    CHECK(std::abs(g.nll - g.entropy - g.kl) < 1e-12);
    CHECK(g.kl > 0.0);
  }
}
