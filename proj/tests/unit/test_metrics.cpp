#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <set>
#include <thread>

#include "claimlm/error.hpp"
#include "claimlm/metrics.hpp"

using namespace claimlm;
using namespace claimlm::metrics;

namespace {

// Plain recursive edit distance.
std::size_t naive_ed(const std::u32string& a, const std::u32string& b) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  const std::u32string ta = a.substr(1), tb = b.substr(1);
  if (a[0] == b[0]) return naive_ed(ta, tb);
  return 1 + std::min({naive_ed(ta, b), naive_ed(a, tb), naive_ed(ta, tb)});
}

void all_strings(std::size_t max_len, const std::u32string& alphabet, std::vector<std::u32string>& out,
                 std::u32string cur = {}) {
  out.push_back(cur);
  if (cur.size() == max_len) return;
  for (char32_t c : alphabet) all_strings(max_len, alphabet, out, cur + c);
}

class FlakyBackend : public JudgeBackend {
 public:
  explicit FlakyBackend(int failures) : failures_(failures) {}
  std::string complete(const std::string&) override {
    if (calls_++ < failures_) throw TransportError("connection reset");
    return "Score: 0.6";
  }
  int calls() const { return calls_; }

 private:
  int failures_;
  int calls_ = 0;
};

// Thread-safe backend that tracks peak concurrency.
class CountingBackend : public JudgeBackend {
 public:
  std::string complete(const std::string& prompt) override {
    const int now = ++active_;
    {
      std::lock_guard lock(mu_);
      peak_ = std::max(peak_, now);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --active_;
    if (prompt.find("<prediction>bad</prediction>") != std::string::npos) return "no verdict";
    return inner_.complete(prompt);
  }
  int peak() const { return peak_; }

 private:
  std::atomic<int> active_{0};
  std::mutex mu_;
  int peak_ = 0;
  RubricMockBackend inner_;
};

}  // namespace

TEST_CASE("normalization") {
  CHECK(normalize_tokens("Replace  the TIRE, now!") == std::vector<std::string>{"replace", "the", "tire", "now"});
  CHECK(normalize_tokens("  ...  ").empty());
  CHECK(utf8_codepoints("a\xc3\xa9") == U"aé");
  CHECK(utf8_codepoints("\xff") == U"�");
}

TEST_CASE("levenshtein agrees with the recursive definition") {
  std::vector<std::u32string> strs;
  all_strings(4, U"ab", strs);
  for (const auto& a : strs)
    for (const auto& b : strs) REQUIRE(levenshtein(a, b) == naive_ed(a, b));
  CHECK(levenshtein(U"kitten", U"sitting") == 3);
}

TEST_CASE("edit similarity") {
  CHECK(edit_distance_similarity("", "") == 1.0);
  CHECK(edit_distance_similarity("abc", "") == 0.0);
  CHECK(edit_distance_similarity("kitten", "sitting") == doctest::Approx(1.0 - 3.0 / 7.0).epsilon(1e-15));
  // One code point, not two bytes.
  CHECK(edit_distance_similarity("\xc3\xa9", "e") == 0.0);
}

TEST_CASE("n-gram precision and bleu") {
  CHECK(*ngram_precision("the the the", "the cat", 1) == doctest::Approx(1.0 / 3.0));
  CHECK(*ngram_precision("a b c", "a b d", 2) == doctest::Approx(0.5));
  CHECK_FALSE(ngram_precision("a", "a b", 2).has_value());
  CHECK_THROWS_AS(ngram_precision("a", "a", 0), ParameterError);

  CHECK(sentence_bleu("replace the left front tire", "Replace the left front tire.") ==
        doctest::Approx(1.0).epsilon(1e-15));
  // p1..p4 = 4/5, 3/4, 2/3, 1/2 with no brevity penalty.
  CHECK(sentence_bleu("a b c d e", "a b c d f") == doctest::Approx(std::pow(0.2, 0.25)).epsilon(1e-14));
  CHECK(brevity_penalty(3, 6) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(brevity_penalty(7, 6) == 1.0);
  CHECK(brevity_penalty(0, 6) == 0.0);
  const double floored = sentence_bleu("x y", "p q");
  CHECK(floored == doctest::Approx(1e-9).epsilon(1e-6));
  CHECK_THROWS_AS(sentence_bleu("", "a"), MetricError);
}

TEST_CASE("tf-idf against a direct computation") {
  const std::vector<std::string> corpus{"replace tire", "replace battery", "patch tire"};
  const TfidfSpace space = TfidfSpace::fit(corpus);
  CHECK(space.document_count() == 3);
  CHECK(space.vocabulary_size() == 7);  // 4 unigrams + 3 bigrams
  CHECK(*space.idf("replace") == doctest::Approx(std::log(4.0 / 3.0) + 1.0).epsilon(1e-15));
  CHECK(*space.idf("patch tire") == doctest::Approx(std::log(2.0) + 1.0).epsilon(1e-15));
  CHECK_FALSE(space.idf("engine").has_value());

  // "replace tire" vs "patch tire": shared term is "tire" only.
  const double ir = std::log(4.0 / 3.0) + 1.0, it = ir, ip = std::log(2.0) + 1.0, ib = ip;
  const double dot = it * it;
  const double na = std::sqrt(ir * ir + it * it + ib * ib), nb = std::sqrt(ip * ip + it * it + ib * ib);
  CHECK(space.cosine("replace tire", "patch tire") == doctest::Approx(dot / (na * nb)).epsilon(1e-14));
  CHECK(space.cosine("replace tire", "replace tire") == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(space.cosine("engine", "tire") == 0.0);
  CHECK(tfidf_terms("A b c") == std::vector<std::string>{"a", "b", "c", "a b", "b c"});
  CHECK_THROWS_AS(TfidfSpace::fit({}), MetricError);
}

TEST_CASE("embeddings and bertscore") {
  const auto e = EmbeddingProvider::parse(
      "dim 2\n"
      "replace tire\t1 0\n"
      "swap tire\t0.6 0.8\n"
      "token:replace\t1 0\n"
      "token:swap\t0.8 0.6\n"
      "token:tire\t0 1\n");
  CHECK(e.dim() == 2);
  CHECK(embedding_cosine(e, "replace tire", "swap tire") == doctest::Approx(0.6).epsilon(1e-15));
  CHECK_THROWS_AS(e.sentence("unknown"), ProviderMiss);
  CHECK_THROWS_AS(e.token("bolt"), ProviderMiss);

  const auto bs = bertscore(e, {"swap", "tire"}, {"replace", "tire"});
  CHECK(bs.precision == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(bs.recall == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(bs.f1 == doctest::Approx(0.9).epsilon(1e-15));

  // Rows are prediction tokens: precision takes row maxima, recall column maxima.
  const auto s = bertscore_from_similarity({{1.0, 0.0, 0.0}, {0.5, 0.2, 0.0}});
  CHECK(s.precision == doctest::Approx(0.75));
  CHECK(s.recall == doctest::Approx(1.2 / 3.0));
  CHECK(s.f1 == doctest::Approx(2 * 0.75 * 0.4 / 1.15));

  EmbeddingProvider p(3);
  CHECK_THROWS_AS(p.add("a", {1.0, 0.0}), ShapeError);
  CHECK_THROWS_AS(p.add("a", {0.0, 0.0, 0.0}), NumericError);
  CHECK_THROWS(EmbeddingProvider::parse("a\t1 2\n"));
}

TEST_CASE("learned scorer replay") {
  const auto s = FilePairScorer::parse("replace tire\tswap tire\t0.71\n");
  CHECK(s.score("replace tire", "swap tire") == 0.71);
  CHECK_THROWS_AS(s.score("swap tire", "replace tire"), ProviderMiss);
}

TEST_CASE("judge prompt and response parsing") {
  const std::string prompt = render_judge_prompt("patch tire", "repair tire");
  CHECK(prompt.find("<prediction>patch tire</prediction>") != std::string::npos);
  CHECK(prompt.find("<reference>repair tire</reference>") != std::string::npos);
  CHECK(prompt == render_judge_prompt("patch tire", "repair tire"));
  for (double lvl : kRubricLevels) CHECK(prompt.find(std::to_string(lvl).substr(0, 3)) != std::string::npos);

  CHECK(parse_judge_response("Score: 0.8") == 0.8);
  CHECK(parse_judge_response("reasoning...\nscore:1") == 1.0);
  CHECK(parse_judge_response("Score: 0.7\nScore: 0.4") == 0.4);  // 0.7 is not a level
  CHECK_THROWS_AS(parse_judge_response("Score: 0.5"), JudgeParseError);
  try {
    parse_judge_response("no score here");
    FAIL("expected JudgeParseError");
  } catch (const JudgeParseError& e) {
    CHECK(std::string(e.what()).find("no score here") != std::string::npos);
  }
}

TEST_CASE("mock rubric backend") {
  RubricMockBackend m;
  CHECK(judge_score(m, "Replace tire.", "replace tire") == 1.0);
  // Overlap p = 1/2, r = 1/3, F1 = 0.4.
  CHECK(judge_score(m, "patch tire", "replace the tire") == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(judge_score(m, "reset module", "replace tire") == 0.0);
  // Reordered identical bags still differ as sequences and cap at 0.8.
  CHECK(judge_score(m, "tire replace", "replace tire") == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("judge retries are bounded and logged") {
  std::vector<std::string> log;
  JudgeOptions opt;
  opt.max_retries = 2;
  opt.log = [&](const std::string& m) { log.push_back(m); };
  FlakyBackend two(2);
  CHECK(judge_score(two, "a", "b", opt) == 0.6);
  CHECK(two.calls() == 3);
  CHECK(log.size() == 2);
  FlakyBackend three(3);
  CHECK_THROWS_AS(judge_score(three, "a", "b", opt), TransportError);
  CHECK(three.calls() == 3);

  ScriptedBackend scripted({"Score: 0.2"});
  CHECK(judge_score(scripted, "a", "b") == 0.2);
  CHECK_THROWS_AS(judge_score(scripted, "a", "b", JudgeOptions{0, 1, {}}), TransportError);
}

TEST_CASE("judge batch preserves order and limits concurrency") {
  CountingBackend backend;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (int i = 0; i < 12; ++i) pairs.emplace_back(i % 2 ? "replace tire" : "reset module", "replace tire");
  pairs.emplace_back("bad", "replace tire");
  JudgeOptions opt;
  opt.max_in_flight = 3;
  const auto res = judge_batch(backend, pairs, opt);
  REQUIRE(res.size() == pairs.size());
  for (int i = 0; i < 12; ++i) {
    CHECK(res[i].score == (i % 2 ? 1.0 : 0.0));
    CHECK(res[i].attempts == 1);
  }
  CHECK_FALSE(res[12].score.has_value());
  CHECK(res[12].error.find("no verdict") != std::string::npos);
  CHECK(backend.peak() <= 3);
  CHECK(backend.peak() >= 2);
}

TEST_CASE("http judge backend") {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/judge", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    if (hits == 1) {
      res.status = 503;
      return;
    }
    res.set_content(req.body.find("patch") != std::string::npos ? "Score: 0.8" : "Score: 0.0", "text/plain");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpJudgeBackend backend("127.0.0.1", port, "/judge", 5);
  CHECK_THROWS_AS(backend.complete("x"), TransportError);
  CHECK(judge_score(backend, "patch tire", "repair tire") == 0.8);
  server.stop();
  t.join();

  HttpJudgeBackend dead("127.0.0.1", port, "/judge", 1);
  CHECK_THROWS_AS(dead.complete("x"), TransportError);
}

TEST_CASE("suite columns and csv") {
  const auto e = EmbeddingProvider::parse("dim 1\nx\t1\n");
  RubricMockBackend judge;
  SuiteOptions opt;
  CHECK(metric_columns(opt).size() == 5);
  opt.embeddings = &e;
  opt.judge = &judge;
  const auto cols = metric_columns(opt);
  CHECK(cols == std::vector<std::string>{"edit_similarity", "unigram_precision", "bigram_precision", "sentence_bleu",
                                         "tfidf_cosine", "bert_cosine", "bertscore_f1", "judge"});
  const auto rows = score_pairs({{"r1", "replace tire", "replace tire"}, {"r2", "x", "y z"}}, opt);
  REQUIRE(rows.size() == 2);
  CHECK(*rows[0].scores.at("edit_similarity") == 1.0);
  CHECK(*rows[0].scores.at("judge") == 1.0);
  CHECK_FALSE(rows[0].scores.at("bert_cosine").has_value());
  CHECK_FALSE(rows[1].scores.at("bigram_precision").has_value());
  const std::string csv = metric_report_csv(rows, cols);
  CHECK(csv.substr(0, csv.find('\n')) ==
        "id,edit_similarity,unigram_precision,bigram_precision,sentence_bleu,tfidf_cosine,bert_cosine,bertscore_f1,"
        "judge");
  CHECK(csv.find("\nr2,") != std::string::npos);
  CHECK(csv.find(",,") != std::string::npos);
}
