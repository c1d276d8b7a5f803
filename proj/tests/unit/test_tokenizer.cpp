#include <doctest.h>

#include <climits>

#include "claimlm/error.hpp"
#include "claimlm/rng.hpp"
#include "claimlm/synthetic.hpp"
#include "claimlm/tokenizer.hpp"

using namespace claimlm;

namespace {

// Straightforward reference: per chunk, repeatedly apply the lowest-ranked
// adjacent merge (leftmost occurrence first) until none applies.
TokenSequence reference_encode(const Vocab& v, std::string_view text) {
  TokenSequence out;
  for (auto chunk : pretokenize(text)) {
    TokenSequence seq;
    for (unsigned char c : chunk) seq.push_back(c);
    for (;;) {
      int best = INT_MAX;
      std::size_t at = 0;
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        const int r = v.merge_rank(seq[i], seq[i + 1]);
        if (r >= 0 && r < best) best = r, at = i;
      }
      if (best == INT_MAX) break;
      seq[at] = v.merge_result(best);
      seq.erase(seq.begin() + static_cast<std::ptrdiff_t>(at) + 1);
    }
    out.insert(out.end(), seq.begin(), seq.end());
  }
  return out;
}

}  // namespace

TEST_CASE("pretokenize attaches leading whitespace to the following word") {
  const auto chunks = pretokenize("ab  cd\nef");
  REQUIRE(chunks.size() >= 3);
  std::string joined;
  for (auto c : chunks) joined += c;
  CHECK(joined == "ab  cd\nef");
  CHECK(chunks.front() == "ab");
}

TEST_CASE("bpe learns the most frequent pair first") {
  const Vocab v1 = train_bpe({"ab ab ab"}, 260);
  CHECK(v1.size() == 260);
  CHECK(v1.piece(259) == "ab");
  CHECK(encode(v1, "ab") == TokenSequence{259});

  const Vocab v2 = train_bpe({"ab ab ab"}, 261);
  CHECK(v2.piece(260) == " ab");
  CHECK(encode(v2, " ab") == TokenSequence{260});
}

TEST_CASE("bpe breaks count ties by piece order") {
  const Vocab v = train_bpe({"zw", "zw", "xy", "xy"}, 260);
  CHECK(v.piece(259) == "xy");
}

TEST_CASE("bpe stops when no pair repeats") {
  CHECK(train_bpe({"abc"}, 300).size() == Vocab::kBaseSize);
}

TEST_CASE("bpe argument errors") {
  CHECK_THROWS_AS(train_bpe({"abc"}, 100), ParameterError);
  CHECK_THROWS_AS(train_bpe({}, 300), TrainingError);
}

TEST_CASE("encode matches the reference merge loop and decode inverts it") {
  const auto claims = synthetic::noisy_claims(60, 4);
  std::vector<std::string> corpus = synthetic::narrative_corpus(claims);
  const Vocab v = train_bpe(corpus, 420);
  CHECK(v.size() == 420);
  for (const auto& doc : corpus) {
    CHECK(encode(v, doc) == reference_encode(v, doc));
    CHECK(decode(v, encode(v, doc)) == doc);
  }
  CounterRng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::string s;
    const std::size_t n = rng.below(20);
    for (std::size_t k = 0; k < n; ++k) s.push_back(static_cast<char>(rng.below(256)));
    CHECK(decode(v, encode(v, s)) == s);
  }
  CHECK(decode(v, encode(v, "pièce → ok")) == "pièce → ok");
}

TEST_CASE("decode drops reserved ids and rejects unknown ids") {
  Vocab v;
  CHECK(decode(v, {Vocab::kBos, 'h', 'i', Vocab::kPad, Vocab::kEos}) == "hi");
  CHECK_THROWS_AS(v.piece(9999), VocabError);
  CHECK_THROWS_AS(decode(v, {-1}), VocabError);
}

TEST_CASE("vocab serialization round-trips") {
  const Vocab v = train_bpe({"the shop will replace the tire", "the shop will tighten the cover"}, 280);
  const Vocab back = Vocab::deserialize(v.serialize());
  CHECK(back.size() == v.size());
  CHECK(back.merges() == v.merges());
  CHECK(encode(back, "the shop") == encode(v, "the shop"));
  std::string bad = v.serialize();
  bad.replace(0, bad.find('\n'), "vocab 999");
  CHECK_THROWS_AS(Vocab::deserialize(bad), FormatError);
}
