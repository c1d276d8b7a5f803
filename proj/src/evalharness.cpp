#include "claimlm/evalharness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "claimlm/error.hpp"
#include "claimlm/records.hpp"

namespace claimlm::eval {

namespace {

void check_sample(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ParameterError("correlation inputs differ in length (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  if (a.size() < 3) throw ParameterError("correlation needs at least 3 observations");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw NumericError("non-finite correlation input");
}

int sign(double x) { return (x > 0) - (x < 0); }

}  // namespace

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  check_sample(a, b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::optional<double> spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  check_sample(a, b);
  return pearson(average_ranks(a), average_ranks(b));
}

std::optional<double> kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  check_sample(a, b);
  long long concordant_minus_discordant = 0, n0 = 0, ties_a = 0, ties_b = 0;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      ++n0;
      const int sa = sign(a[i] - a[j]);
      const int sb = sign(b[i] - b[j]);
      if (sa == 0) ++ties_a;
      if (sb == 0) ++ties_b;
      concordant_minus_discordant += sa * sb;
    }
  }
  if (ties_a == n0 || ties_b == n0) return std::nullopt;
  const double denom = std::sqrt(static_cast<double>((n0 - ties_a) * (n0 - ties_b)));
  return static_cast<double>(concordant_minus_discordant) / denom;
}

double chatterjee_xi(const std::vector<double>& a, const std::vector<double>& b, std::size_t* a_ties) {
  check_sample(a, b);
  const std::size_t n = a.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i] < a[j]; });
  if (a_ties) {
    *a_ties = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (a[order[k]] == a[order[k - 1]]) ++*a_ties;
  }
  std::vector<double> sorted_b(b);
  std::sort(sorted_b.begin(), sorted_b.end());
  // r = #{j : b_j <= b_i}, l = #{j : b_j >= b_i}
  std::vector<double> r(n), l(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double v = b[order[k]];
    r[k] = static_cast<double>(std::upper_bound(sorted_b.begin(), sorted_b.end(), v) - sorted_b.begin());
    l[k] = static_cast<double>(sorted_b.end() - std::lower_bound(sorted_b.begin(), sorted_b.end(), v));
  }
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) num += std::abs(r[k + 1] - r[k]);
  const double nd = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) den += l[k] * (nd - l[k]);
  if (den == 0.0) return 0.0;
  return 1.0 - nd * num / (2.0 * den);
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '\'' || c == '-' || u >= 0x80;
}

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?' || c == '\n'; }

bool verb_matches(const std::string& word, const std::string& base) {
  if (word == base || word == base + "s" || word == base + "ed" || word == base + "ing") return true;
  if (!base.empty() && base.back() == 'e') {
    const std::string stem = base.substr(0, base.size() - 1);
    return word == base + "d" || word == stem + "ing";
  }
  return false;
}

}  // namespace

SchemaParse parse_corrective_action(const std::string& text) {
  static const std::regex re(R"(^[ \t]*corrective action(s)? include(d)?:[ \t]*(.*)$)", std::regex::icase);
  SchemaParse out;
  std::string line = text;
  while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
  if (line.find('\n') != std::string::npos || line.find('\r') != std::string::npos) return out;
  std::smatch m;
  if (!std::regex_match(line, m, re)) return out;
  std::string action = trim(m[3].str());
  if (action.empty()) return out;
  out.compliant = true;
  out.action = std::move(action);
  return out;
}

std::vector<std::string> default_action_lexicon() {
  return {"adjust",  "align",   "balance", "bleed",   "calibrate", "clean",     "flush",   "install",
          "lubricate", "patch", "realign", "rebuild", "recalibrate", "recharge", "reconnect", "refill",
          "reflash", "reinstall", "remove", "repair", "replace", "reprogram", "reseal", "reset",
          "resurface", "retighten", "rotate", "seal", "secure", "torque", "tighten", "update"};
}

std::optional<ExtractedAction> extract_action(const std::string& text, const std::vector<std::string>& lexicon,
                                              bool hit_budget) {
  std::optional<ExtractedAction> last_open;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = start;
    while (end < text.size() && !is_terminator(text[end])) ++end;
    const bool terminated = end < text.size();
    const std::string sentence = text.substr(start, end - start);

    // Tokenize the sentence into words with their offsets.
    std::vector<std::pair<std::size_t, std::string>> words;
    for (std::size_t i = 0; i < sentence.size();) {
      if (!is_word_char(sentence[i])) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < sentence.size() && is_word_char(sentence[j])) ++j;
      words.emplace_back(i, lower(sentence.substr(i, j - i)));
      i = j;
    }
    for (std::size_t w = 0; w + 1 < words.size(); ++w) {
      const bool is_verb = std::any_of(lexicon.begin(), lexicon.end(),
                                       [&](const std::string& base) { return verb_matches(words[w].second, base); });
      if (!is_verb) continue;
      ExtractedAction found{trim(sentence.substr(words[w].first)), terminated};
      if (terminated) return found;
      last_open = std::move(found);
      break;
    }
    start = end + 1;
  }
  if (last_open && !hit_budget) return last_open;
  return std::nullopt;
}

// ---------------------------------------------------------------------------

std::vector<EvalRecord> parse_eval_jsonl(const std::string& text) {
  std::vector<EvalRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = "evaluation record line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError(where + ": expected an object");
    EvalRecord r;
    try {
      r.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                              : std::to_string(lineno);
      r.prompt = j.value("prompt", std::string{});
      r.output = j.at("output").get<std::string>();
      r.reference = j.value("reference", std::string{});
      r.score_source = j.value("score_source", std::string{"human"});
      if (j.contains("score") && !j["score"].is_null()) r.score = j["score"].get<double>();
      r.hq = j.value("hq", false);
      if (j.contains("truncated") && !j["truncated"].is_null()) r.truncated = j["truncated"].get<bool>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (r.score_source != "human" && r.score_source != "judge")
      throw FormatError(where + ": score_source must be \"human\" or \"judge\"");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<EvalRecord> read_eval_jsonl(const std::string& path) { return parse_eval_jsonl(read_file(path)); }

std::string to_jsonl(const std::vector<EvalRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["prompt"] = r.prompt;
    j["output"] = r.output;
    j["reference"] = r.reference;
    j["score_source"] = r.score_source;
    j["score"] = r.score ? nlohmann::ordered_json(*r.score) : nlohmann::ordered_json(nullptr);
    j["hq"] = r.hq;
    if (r.truncated) j["truncated"] = *r.truncated;
    out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
  }
  return out;
}

double GovernanceReport::format_rate() const {
  return n == 0 ? 0.0 : static_cast<double>(n_format) / static_cast<double>(n);
}

double GovernanceReport::validity_rate() const {
  return n == 0 ? 0.0 : static_cast<double>(n_valid) / static_cast<double>(n);
}

std::optional<double> GovernanceReport::acc_valid() const {
  if (n_valid == 0) return std::nullopt;
  return static_cast<double>(n_valid_accurate) / static_cast<double>(n_valid);
}

std::optional<double> GovernanceReport::acc_hq() const {
  if (n_hq == 0) return std::nullopt;
  return static_cast<double>(n_hq_accurate) / static_cast<double>(n_hq);
}

GovernanceReport& GovernanceReport::operator+=(const GovernanceReport& o) {
  n += o.n;
  n_format += o.n_format;
  n_valid += o.n_valid;
  n_valid_accurate += o.n_valid_accurate;
  n_hq += o.n_hq;
  n_hq_accurate += o.n_hq_accurate;
  flags.insert(flags.end(), o.flags.begin(), o.flags.end());
  return *this;
}

GovernanceReport governance(const std::vector<EvalRecord>& records, const GovernanceOptions& options) {
  if (records.empty()) throw ParameterError("governance needs at least one record");
  GovernanceReport rep;
  rep.n = records.size();
  for (const auto& r : records) {
    RecordFlags f;
    f.id = r.id;
    f.hq = r.hq;
    const bool hit_budget = r.truncated.value_or(false);
    const SchemaParse schema = parse_corrective_action(r.output);
    f.format = schema.compliant;
    if (schema.compliant) {
      // A schema line cut off by the token budget has no terminated action.
      const bool ends_cleanly = !hit_budget || is_terminator(trim(r.output).back());
      f.valid = ends_cleanly;
      f.action = schema.action;
    }
    if (!f.valid) {
      if (auto ex = extract_action(r.output, options.lexicon, hit_budget)) {
        f.valid = true;
        f.action = ex->phrase;
      }
    }
    if (f.valid) {
      if (!r.score)
        throw DataConsistencyError("record " + r.id + " is valid but has no " + r.score_source + " score");
      f.accurate = *r.score >= options.accuracy_threshold;
      ++rep.n_valid;
      if (f.accurate) ++rep.n_valid_accurate;
    }
    if (f.format) ++rep.n_format;
    if (r.hq) {
      if (!f.valid) throw DataConsistencyError("record " + r.id + " is flagged HQ but its output is not valid");
      ++rep.n_hq;
      if (f.accurate) ++rep.n_hq_accurate;
    }
    rep.flags.push_back(std::move(f));
  }
  return rep;
}

namespace {

std::string pct(std::optional<double> v) {
  if (!v) return "n/a";
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << *v * 100.0;
  return out.str();
}

}  // namespace

std::string governance_table(const GovernanceReport& r, const std::string& model_name) {
  const std::string name = model_name.empty() ? "model" : model_name;
  const std::size_t w = std::max<std::size_t>(5, name.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(w)) << "Model" << " | Format | Validity | Acc(Valid) | Acc(HQ)\n";
  out << std::string(w, '-') << "-+--------+----------+------------+--------\n";
  out << std::setw(static_cast<int>(w)) << name << " | " << std::right << std::setw(6) << pct(r.format_rate())
      << " | " << std::setw(8) << pct(r.validity_rate()) << " | " << std::setw(10) << pct(r.acc_valid()) << " | "
      << std::setw(7) << pct(r.acc_hq()) << "\n";
  out << "N=" << r.n << " valid=" << r.n_valid << " hq=" << r.n_hq << "\n";
  return out.str();
}

std::string governance_csv(const GovernanceReport& r, const std::string& model_name) {
  std::ostringstream out;
  out << "model,n,n_format,n_valid,n_valid_accurate,n_hq,n_hq_accurate,format,validity,acc_valid,acc_hq\n";
  auto cell = [](std::optional<double> v) { return v ? pct(v) : std::string{}; };
  out << model_name << ',' << r.n << ',' << r.n_format << ',' << r.n_valid << ',' << r.n_valid_accurate << ','
      << r.n_hq << ',' << r.n_hq_accurate << ',' << cell(r.format_rate()) << ',' << cell(r.validity_rate()) << ','
      << cell(r.acc_valid()) << ',' << cell(r.acc_hq()) << '\n';
  return out.str();
}

std::string governance_flags_csv(const GovernanceReport& r) {
  std::ostringstream out;
  out << "id,format,valid,accurate,hq\n";
  for (const auto& f : r.flags)
    out << f.id << ',' << f.format << ',' << f.valid << ',' << f.accurate << ',' << f.hq << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------

double youden_j(const std::vector<double>& scores, const std::vector<int>& labels, double kappa) {
  if (scores.size() != labels.size()) throw ParameterError("scores and labels differ in length");
  std::size_t pos = 0, neg = 0, tp = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= kappa;
    if (labels[i] != 0) {
      ++pos;
      if (predicted) ++tp;
    } else {
      ++neg;
      if (predicted) ++fp;
    }
  }
  if (pos == 0 || neg == 0) throw CalibrationError("threshold calibration needs both positive and negative labels");
  return static_cast<double>(tp) / static_cast<double>(pos) - static_cast<double>(fp) / static_cast<double>(neg);
}

Threshold youden_threshold(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ParameterError("scores and labels differ in length");
  if (scores.empty()) throw CalibrationError("threshold calibration on empty sample");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("non-finite score in threshold calibration");
  Threshold t;
  t.candidates = scores;
  std::sort(t.candidates.begin(), t.candidates.end());
  t.candidates.erase(std::unique(t.candidates.begin(), t.candidates.end()), t.candidates.end());

  // Sweep cutoffs from high to low so each J costs O(1) after sorting.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });
  std::size_t pos = 0;
  for (int l : labels) pos += l != 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw CalibrationError("threshold calibration needs both positive and negative labels");

  // J * pos * neg is an integer; comparing it keeps exact ties exact.
  std::size_t tp = 0, fp = 0, k = 0;
  long long best = 0;
  bool first = true;
  for (auto c = t.candidates.rbegin(); c != t.candidates.rend(); ++c) {
    while (k < order.size() && scores[order[k]] >= *c) {
      (labels[order[k]] != 0 ? tp : fp) += 1;
      ++k;
    }
    const long long scaled = static_cast<long long>(tp * neg) - static_cast<long long>(fp * pos);
    if (first || scaled >= best) {
      best = scaled;
      t.kappa = *c;
      first = false;
    }
  }
  t.j = static_cast<double>(best) / (static_cast<double>(pos) * static_cast<double>(neg));
  t.degenerate = t.j <= 0.0;
  return t;
}

// ---------------------------------------------------------------------------

EventRate event_probability(const std::vector<std::string>& predictions,
                            const std::function<bool(const std::string&)>& predicate, double p_ref) {
  if (predictions.empty()) throw ParameterError("event probability needs at least one prediction");
  if (!(p_ref >= 0.0 && p_ref <= 1.0)) throw ParameterError("reference probability must lie in [0, 1]");
  EventRate r;
  r.total = predictions.size();
  for (const auto& p : predictions)
    if (predicate(p)) ++r.count;
  r.p_hat = static_cast<double>(r.count) / static_cast<double>(r.total);
  r.expected = static_cast<double>(r.total) * p_ref;
  return r;
}

std::function<bool(const std::string&)> keyword_predicate(std::vector<std::string> phrases) {
  for (auto& p : phrases) p = lower(p);
  return [phrases = std::move(phrases)](const std::string& text) {
    const std::string t = lower(text);
    for (const auto& p : phrases) {
      for (std::size_t pos = t.find(p); pos != std::string::npos; pos = t.find(p, pos + 1)) {
        const bool left_ok = pos == 0 || !std::isalnum(static_cast<unsigned char>(t[pos - 1]));
        const std::size_t end = pos + p.size();
        const bool right_ok = end >= t.size() || !std::isalnum(static_cast<unsigned char>(t[end]));
        if (left_ok && right_ok) return true;
      }
    }
    return false;
  };
}

}  // namespace claimlm::eval
