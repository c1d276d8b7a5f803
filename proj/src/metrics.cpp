#include "claimlm/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "claimlm/error.hpp"
#include "claimlm/records.hpp"

namespace claimlm::metrics {

std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else if (ch < 0x80 && std::ispunct(ch)) {
      continue;
    } else {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::u32string utf8_codepoints(std::string_view s) {
  std::u32string out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1, cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2, cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3, cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4, cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(U'�');
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::size_t levenshtein(const std::u32string& a, const std::u32string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double edit_distance_similarity(std::string_view prediction, std::string_view reference) {
  const auto a = utf8_codepoints(prediction);
  const auto b = utf8_codepoints(reference);
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& toks, std::size_t n) {
  NgramCounts counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++counts[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                      toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

// (clipped matches, total prediction n-grams)
std::pair<std::size_t, std::size_t> clipped(const std::vector<std::string>& pred,
                                            const std::vector<std::string>& ref, std::size_t n) {
  const auto cp = count_ngrams(pred, n);
  const auto cr = count_ngrams(ref, n);
  std::size_t match = 0, total = 0;
  for (const auto& [g, c] : cp) {
    total += c;
    auto it = cr.find(g);
    if (it != cr.end()) match += std::min(c, it->second);
  }
  return {match, total};
}

}  // namespace

std::optional<double> ngram_precision(std::string_view prediction, std::string_view reference, std::size_t n) {
  if (n == 0) throw ParameterError("n-gram order must be at least 1");
  const auto pred = normalize_tokens(prediction);
  if (pred.size() < n) return std::nullopt;
  const auto [match, total] = clipped(pred, normalize_tokens(reference), n);
  return static_cast<double>(match) / static_cast<double>(total);
}

double brevity_penalty(std::size_t prediction_length, std::size_t reference_length) {
  if (prediction_length == 0) return 0.0;
  if (prediction_length > reference_length) return 1.0;
  return std::exp(1.0 - static_cast<double>(reference_length) / static_cast<double>(prediction_length));
}

double sentence_bleu(std::string_view prediction, std::string_view reference) {
  const auto pred = normalize_tokens(prediction);
  const auto ref = normalize_tokens(reference);
  if (pred.empty() || ref.empty()) throw MetricError("sentence_bleu requires non-empty prediction and reference");
  constexpr double kFloor = 1e-9;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto [match, total] = clipped(pred, ref, n);
    double p = total == 0 ? 0.0 : static_cast<double>(match) / static_cast<double>(total);
    log_sum += 0.25 * std::log(std::max(p, kFloor));
  }
  return brevity_penalty(pred.size(), ref.size()) * std::exp(log_sum);
}

std::vector<std::string> tfidf_terms(std::string_view text) {
  const auto toks = normalize_tokens(text);
  std::vector<std::string> terms(toks.begin(), toks.end());
  for (std::size_t i = 0; i + 1 < toks.size(); ++i) terms.push_back(toks[i] + " " + toks[i + 1]);
  return terms;
}

TfidfSpace TfidfSpace::fit(const std::vector<std::string>& corpus) {
  if (corpus.empty()) throw MetricError("tfidf fit on empty corpus");
  std::map<std::string, std::size_t> df;
  for (const auto& doc : corpus) {
    auto terms = tfidf_terms(doc);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    for (const auto& t : terms) ++df[t];
  }
  TfidfSpace space;
  space.documents_ = corpus.size();
  const double n = static_cast<double>(corpus.size());
  for (const auto& [t, d] : df) space.idf_[t] = std::log((1.0 + n) / (1.0 + static_cast<double>(d))) + 1.0;
  return space;
}

std::optional<double> TfidfSpace::idf(const std::string& term) const {
  auto it = idf_.find(term);
  if (it == idf_.end()) return std::nullopt;
  return it->second;
}

std::map<std::string, double> TfidfSpace::vectorize(std::string_view text) const {
  std::map<std::string, double> v;
  for (const auto& t : tfidf_terms(text)) {
    auto it = idf_.find(t);
    if (it != idf_.end()) v[t] += it->second;
  }
  return v;
}

double TfidfSpace::cosine(std::string_view prediction, std::string_view reference) const {
  const auto a = vectorize(prediction);
  const auto b = vectorize(reference);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, w] : a) {
    na += w * w;
    auto it = b.find(t);
    if (it != b.end()) dot += w * it->second;
  }
  for (const auto& [t, w] : b) nb += w * w;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// ---------------------------------------------------------------------------

EmbeddingProvider EmbeddingProvider::parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  EmbeddingProvider p;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!have_header) {
      std::istringstream hs(line);
      std::string word;
      long long d = 0;
      if (!(hs >> word >> d) || word != "dim" || d <= 0) throw FormatError("embedding file: expected `dim <d>` header");
      p.dim_ = static_cast<std::size_t>(d);
      have_header = true;
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("embedding file line " + std::to_string(lineno) + ": missing tab");
    std::istringstream vs(line.substr(tab + 1));
    std::vector<double> vec;
    double x;
    while (vs >> x) vec.push_back(x);
    if (!vs.eof()) throw FormatError("embedding file line " + std::to_string(lineno) + ": bad number");
    try {
      p.add(line.substr(0, tab), std::move(vec));
    } catch (const Error& e) {
      throw FormatError("embedding file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw FormatError("embedding file: missing header");
  return p;
}

EmbeddingProvider EmbeddingProvider::load(const std::string& path) { return parse(read_file(path)); }

void EmbeddingProvider::add(const std::string& key, std::vector<double> vec) {
  if (vec.size() != dim_)
    throw ShapeError("embedding for '" + key + "' has dimension " + std::to_string(vec.size()) + ", expected " +
                     std::to_string(dim_));
  double norm = 0.0;
  for (double x : vec) norm += x * x;
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericError("embedding for '" + key + "' has zero or non-finite norm");
  vectors_[key] = std::move(vec);
}

const std::vector<double>& EmbeddingProvider::sentence(const std::string& text) const {
  auto it = vectors_.find(text);
  if (it == vectors_.end()) throw ProviderMiss("no embedding for '" + text + "'");
  return it->second;
}

const std::vector<double>& EmbeddingProvider::token(const std::string& tok) const {
  auto it = vectors_.find("token:" + tok);
  if (it == vectors_.end()) throw ProviderMiss("no token embedding for '" + tok + "'");
  return it->second;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different dimensions");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double embedding_cosine(const EmbeddingProvider& provider, const std::string& prediction,
                        const std::string& reference) {
  return cosine(provider.sentence(prediction), provider.sentence(reference));
}

BertScore bertscore_from_similarity(const std::vector<std::vector<double>>& sim) {
  if (sim.empty() || sim.front().empty()) throw MetricError("bertscore on empty token list");
  const std::size_t rows = sim.size(), cols = sim.front().size();
  std::vector<double> col_max(cols, -std::numeric_limits<double>::infinity());
  double p_sum = 0.0;
  for (const auto& row : sim) {
    if (row.size() != cols) throw ShapeError("ragged similarity matrix");
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
      row_max = std::max(row_max, row[j]);
      col_max[j] = std::max(col_max[j], row[j]);
    }
    p_sum += row_max;
  }
  double r_sum = 0.0;
  for (double c : col_max) r_sum += c;
  BertScore s;
  s.precision = p_sum / static_cast<double>(rows);
  s.recall = r_sum / static_cast<double>(cols);
  const double denom = s.precision + s.recall;
  s.f1 = denom == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / denom;
  return s;
}

BertScore bertscore(const EmbeddingProvider& provider, const std::vector<std::string>& prediction_tokens,
                    const std::vector<std::string>& reference_tokens) {
  if (prediction_tokens.empty() || reference_tokens.empty()) throw MetricError("bertscore on empty token list");
  std::vector<std::vector<double>> sim(prediction_tokens.size(), std::vector<double>(reference_tokens.size()));
  for (std::size_t i = 0; i < prediction_tokens.size(); ++i) {
    const auto& hi = provider.token(prediction_tokens[i]);
    for (std::size_t j = 0; j < reference_tokens.size(); ++j) sim[i][j] = cosine(hi, provider.token(reference_tokens[j]));
  }
  return bertscore_from_similarity(sim);
}

double bertscore_f1(const EmbeddingProvider& provider, const std::vector<std::string>& prediction_tokens,
                    const std::vector<std::string>& reference_tokens) {
  return bertscore(provider, prediction_tokens, reference_tokens).f1;
}

FilePairScorer FilePairScorer::parse(const std::string& text) {
  FilePairScorer s;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw FormatError("pair score file line " + std::to_string(lineno) + ": expected 3 fields");
    double v = 0.0;
    try {
      std::size_t used = 0;
      const std::string num = line.substr(t2 + 1);
      v = std::stod(num, &used);
      if (used != num.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError("pair score file line " + std::to_string(lineno) + ": bad score");
    }
    s.scores_[{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1)}] = v;
  }
  return s;
}

FilePairScorer FilePairScorer::load(const std::string& path) { return parse(read_file(path)); }

double FilePairScorer::score(const std::string& prediction, const std::string& reference) const {
  auto it = scores_.find({prediction, reference});
  if (it == scores_.end()) throw ProviderMiss("no learned score for pair ('" + prediction + "', '" + reference + "')");
  return it->second;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kPredOpen = "<prediction>";
constexpr const char* kPredClose = "</prediction>";
constexpr const char* kRefOpen = "<reference>";
constexpr const char* kRefClose = "</reference>";

std::string between(const std::string& s, const std::string& open, const std::string& close) {
  const auto a = s.find(open);
  if (a == std::string::npos) return {};
  const auto start = a + open.size();
  const auto b = s.find(close, start);
  if (b == std::string::npos) return {};
  return s.substr(start, b - start);
}

}  // namespace

std::string render_judge_prompt(const std::string& prediction, const std::string& reference) {
  std::ostringstream out;
  out << "You are grading a predicted vehicle repair corrective action against the reference action.\n"
         "Judge semantic alignment, not wording. Use exactly one score from this rubric:\n"
         "1.0 | Perfect Match | Predicted actions cover the reference actions fully and precisely, "
         "nothing missing or wrong.\n"
         "0.8 | Strong Match | Predicted actions cover most of the reference, only minor omissions or "
         "rewording, no major error.\n"
         "0.6 | Partial Match | Some key actions are covered but important parts are missing; still related "
         "and somewhat useful.\n"
         "0.4 | Weak Match | Very little overlap; only a few actions or fragments relate to the reference.\n"
         "0.2 | Minimal Match | Mostly irrelevant or wrong, almost no valid overlap with the reference.\n"
         "0.0 | No Match | Unrelated or invalid, no correspondence with the reference.\n\n"
      << kPredOpen << prediction << kPredClose << "\n"
      << kRefOpen << reference << kRefClose << "\n\n"
      << "Reply with a single line of the form `Score: <value>`.\n";
  return out.str();
}

double parse_judge_response(const std::string& response) {
  static const std::regex re(R"(Score:\s*([0-9]+(?:\.[0-9]+)?))", std::regex::icase);
  for (auto it = std::sregex_iterator(response.begin(), response.end(), re); it != std::sregex_iterator(); ++it) {
    const double v = std::stod((*it)[1].str());
    for (double level : kRubricLevels)
      if (std::abs(v - level) < 1e-9) return level;
  }
  throw JudgeParseError(response);
}

std::string RubricMockBackend::complete(const std::string& prompt) {
  const auto pred = normalize_tokens(between(prompt, kPredOpen, kPredClose));
  const auto ref = normalize_tokens(between(prompt, kRefOpen, kRefClose));
  if (pred == ref && !pred.empty()) return "Score: 1.0\n";
  std::map<std::string, int> counts;
  for (const auto& t : ref) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : pred)
    if (counts[t]-- > 0) ++overlap;
  double f1 = 0.0;
  if (!pred.empty() && !ref.empty() && overlap > 0) {
    const double p = static_cast<double>(overlap) / static_cast<double>(pred.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
    f1 = 2 * p * r / (p + r);
  }
  // Non-identical pairs top out at Strong Match.
  const int level = std::min(4, static_cast<int>(std::floor(f1 * 5.0 + 1e-9)));
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(1);
  out << "Score: " << level * 0.2 << "\n";
  return out.str();
}

std::string ScriptedBackend::complete(const std::string&) {
  if (calls_ >= responses_.size()) throw TransportError("scripted backend exhausted");
  return responses_[calls_++];
}

std::string HttpJudgeBackend::complete(const std::string& prompt) {
  httplib::Client client(host_, port_);
  client.set_connection_timeout(timeout_seconds_, 0);
  client.set_read_timeout(timeout_seconds_, 0);
  auto res = client.Post(path_, prompt, "text/plain");
  if (!res) throw TransportError("judge request to " + host_ + ":" + std::to_string(port_) + path_ +
                                 " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw TransportError("judge returned HTTP " + std::to_string(res->status));
  return res->body;
}

double judge_score(JudgeBackend& backend, const std::string& prediction, const std::string& reference,
                   const JudgeOptions& options) {
  const std::string prompt = render_judge_prompt(prediction, reference);
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      return parse_judge_response(backend.complete(prompt));
    } catch (const TransportError& e) {
      if (attempt >= options.max_retries) throw;
      if (options.log) options.log("judge transport error (attempt " + std::to_string(attempt + 1) + "): " + e.what());
    }
  }
}

std::vector<JudgeResult> judge_batch(JudgeBackend& backend,
                                     const std::vector<std::pair<std::string, std::string>>& pairs,
                                     const JudgeOptions& options) {
  std::vector<JudgeResult> results(pairs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  JudgeOptions local = options;
  if (options.log) {
    local.log = [&](const std::string& msg) {
      std::lock_guard lock(log_mu);
      options.log(msg);
    };
  }
  auto worker = [&] {
    for (std::size_t i = next++; i < pairs.size(); i = next++) {
      JudgeResult& r = results[i];
      std::size_t attempts = 0;
      JudgeOptions counted = local;
      counted.log = [&](const std::string& msg) {
        ++attempts;
        if (local.log) local.log("pair " + std::to_string(i) + ": " + msg);
      };
      try {
        r.score = judge_score(backend, pairs[i].first, pairs[i].second, counted);
      } catch (const Error& e) {
        r.error = e.what();
      }
      r.attempts = attempts + 1;
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.max_in_flight, pairs.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  return results;
}

// ---------------------------------------------------------------------------

std::vector<std::string> metric_columns(const SuiteOptions& options) {
  std::vector<std::string> cols = {"edit_similarity", "unigram_precision", "bigram_precision", "sentence_bleu",
                                   "tfidf_cosine"};
  if (options.embeddings) {
    cols.push_back("bert_cosine");
    cols.push_back("bertscore_f1");
  }
  if (options.learned) cols.push_back("bleurt");
  if (options.judge) cols.push_back("judge");
  return cols;
}

std::vector<PairScores> score_pairs(const std::vector<PredictionPair>& pairs, const SuiteOptions& options) {
  std::vector<std::string> corpus;
  for (const auto& p : pairs) {
    corpus.push_back(p.reference);
    corpus.push_back(p.prediction);
  }
  const TfidfSpace space = pairs.empty() ? TfidfSpace{} : TfidfSpace::fit(corpus);

  std::vector<PairScores> rows;
  for (const auto& p : pairs) {
    PairScores row;
    row.id = p.id;
    auto& s = row.scores;
    s["edit_similarity"] = edit_distance_similarity(p.prediction, p.reference);
    s["unigram_precision"] = ngram_precision(p.prediction, p.reference, 1);
    s["bigram_precision"] = ngram_precision(p.prediction, p.reference, 2);
    try {
      s["sentence_bleu"] = sentence_bleu(p.prediction, p.reference);
    } catch (const MetricError&) {
      s["sentence_bleu"] = std::nullopt;
    }
    s["tfidf_cosine"] = space.cosine(p.prediction, p.reference);
    if (options.embeddings) {
      try {
        s["bert_cosine"] = embedding_cosine(*options.embeddings, p.prediction, p.reference);
      } catch (const ProviderMiss&) {
        s["bert_cosine"] = std::nullopt;
      }
      try {
        s["bertscore_f1"] =
            bertscore_f1(*options.embeddings, normalize_tokens(p.prediction), normalize_tokens(p.reference));
      } catch (const Error&) {
        s["bertscore_f1"] = std::nullopt;
      }
    }
    if (options.learned) {
      try {
        s["bleurt"] = options.learned->score(p.prediction, p.reference);
      } catch (const ProviderMiss&) {
        s["bleurt"] = std::nullopt;
      }
    }
    rows.push_back(std::move(row));
  }

  if (options.judge) {
    std::vector<std::pair<std::string, std::string>> jp;
    for (const auto& p : pairs) jp.emplace_back(p.prediction, p.reference);
    const auto judged = judge_batch(*options.judge, jp, options.judge_options);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].scores["judge"] = judged[i].score;
  }
  return rows;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string metric_report_csv(const std::vector<PairScores>& rows, const std::vector<std::string>& columns) {
  std::ostringstream out;
  out << "id";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  out.precision(17);
  for (const auto& row : rows) {
    out << csv_field(row.id);
    for (const auto& c : columns) {
      out << ',';
      auto it = row.scores.find(c);
      if (it != row.scores.end() && it->second) out << *it->second;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace claimlm::metrics
