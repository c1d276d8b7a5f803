#include "claimlm/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "claimlm/error.hpp"

namespace claimlm::preprocess {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool is_alnum(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || u >= 0x80;
}

bool is_terminator(char c) { return c == '.' || c == '\n'; }

std::vector<std::string> non_comment_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    out.push_back(line);
  }
  return out;
}

// Whole-word occurrence of needle in hay.
bool contains_word(const std::string& hay, const std::string& needle) {
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
    const bool left = pos == 0 || !is_alnum(hay[pos - 1]) || !is_alnum(needle.front());
    const auto end = pos + needle.size();
    const bool right = end >= hay.size() || !is_alnum(hay[end]) || !is_alnum(needle.back());
    if (left && right) return true;
  }
  return false;
}

}  // namespace

RewriteDict RewriteDict::from_pairs(std::vector<std::pair<std::string, std::string>> entries) {
  std::set<std::string> seen;
  for (auto& [k, v] : entries) {
    k = lower(collapse_whitespace(k));
    v = lower(collapse_whitespace(v));
    if (k.empty()) throw ConfigError("rewrite dictionary has an empty key");
    for (const auto* s : {&k, &v})
      if (s->find_first_of(".\n") != std::string::npos)
        throw ConfigError("rewrite entry '" + k + "' contains a sentence terminator");
    if (!seen.insert(k).second) throw ConfigError("rewrite dictionary repeats key '" + k + "'");
  }
  for (const auto& [k, _] : entries)
    for (const auto& [k2, v2] : entries)
      if (contains_word(v2, k))
        throw ConfigError("cyclic rewrite dictionary: expansion of '" + k2 + "' contains key '" + k + "'");
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
  RewriteDict d;
  d.entries_ = std::move(entries);
  return d;
}

RewriteDict RewriteDict::parse(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& line : non_comment_lines(text)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ConfigError("rewrite dictionary line without tab: '" + line + "'");
    entries.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return from_pairs(std::move(entries));
}

RewriteDict RewriteDict::load(const std::string& path) { return parse(read_file(path)); }

std::string RewriteDict::apply(const std::string& s) const {
  if (entries_.empty()) return s;
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    bool replaced = false;
    if (i == 0 || !is_alnum(s[i - 1]) || !is_alnum(s[i])) {
      for (const auto& [k, v] : entries_) {
        if (s.compare(i, k.size(), k) != 0) continue;
        const auto end = i + k.size();
        const bool left = i == 0 || !is_alnum(s[i - 1]) || !is_alnum(k.front());
        const bool right = end >= s.size() || !is_alnum(s[end]) || !is_alnum(k.back());
        if (!left || !right) continue;
        out += v;
        i = end;
        replaced = true;
        break;
      }
    }
    if (!replaced) out += s[i++];
  }
  return out;
}

PatternSet::PatternSet(std::vector<std::string> patterns) {
  for (auto& p : patterns) {
    p = lower(collapse_whitespace(p));
    if (p.empty() || p == "^") throw ConfigError("empty administrative pattern");
    patterns_.push_back(std::move(p));
  }
}

PatternSet PatternSet::parse(const std::string& text) { return PatternSet(non_comment_lines(text)); }

PatternSet PatternSet::load(const std::string& path) { return parse(read_file(path)); }

bool PatternSet::matches(const std::string& sentence) const {
  for (const auto& p : patterns_) {
    if (p.front() == '^') {
      if (sentence.compare(0, p.size() - 1, p, 1) == 0) return true;
    } else if (sentence.find(p) != std::string::npos) {
      return true;
    }
  }
  return false;
}

std::string collapse_whitespace(const std::string& text) {
  std::string out;
  bool pending = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending = !out.empty();
    } else {
      if (pending) out += ' ';
      pending = false;
      out += c;
    }
  }
  return out;
}

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = start;
    while (end < text.size() && !is_terminator(text[end])) ++end;
    std::string body = collapse_whitespace(text.substr(start, end - start));
    if (!body.empty()) {
      if (end < text.size()) body += text[end];
      out.push_back(std::move(body));
    }
    start = end + 1;
  }
  return out;
}

std::string join_sentences(const std::vector<std::string>& sentences) {
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty() && out.back() == '.') out += ' ';
    out += s;
  }
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

std::string normalize_string(const std::string& text, const PipelineConfig& config) {
  std::string cur = collapse_whitespace(lower(text));
  // Rewrites are repeated to a fixed point so a replacement that lands next
  // to existing text cannot leave work for a second run.
  for (int round = 0; round < 16; ++round) {
    const std::string next = collapse_whitespace(config.misspellings.apply(config.shorthand.apply(cur)));
    if (next == cur) return cur;
    cur = next;
  }
  throw ConfigError("rewrite dictionaries do not converge on: " + text);
}

namespace {

std::string& field(ClaimRecord& r, int i) { return i == 0 ? r.complaint : i == 1 ? r.cause : r.correction; }
const std::string& field(const ClaimRecord& r, int i) {
  return i == 0 ? r.complaint : i == 1 ? r.cause : r.correction;
}
const char* field_name(int i) { return i == 0 ? "complaint" : i == 1 ? "cause" : "correction"; }

std::string sentence_key(const std::string& s) {
  std::string k = s;
  if (!k.empty() && is_terminator(k.back())) k.pop_back();
  return k;
}

std::string normalize_field(const std::string& text, const PipelineConfig& config) {
  std::vector<std::string> sentences;
  for (const auto& s : split_sentences(text)) {
    const bool term = is_terminator(s.back());
    std::string body = normalize_string(term ? s.substr(0, s.size() - 1) : s, config);
    if (body.empty()) continue;
    if (term) body += s.back();
    sentences.push_back(std::move(body));
  }
  return join_sentences(sentences);
}

}  // namespace

ClaimRecord dedup_fragments(const ClaimRecord& record, const PipelineConfig* key_config) {
  ClaimRecord out = record;
  std::set<std::string> seen;
  for (int f = 0; f < 3; ++f) {
    std::vector<std::string> kept;
    for (const auto& s : split_sentences(field(out, f))) {
      std::string key = sentence_key(s);
      if (key_config) key = normalize_string(key, *key_config);
      if (seen.insert(key).second) kept.push_back(s);
    }
    field(out, f) = join_sentences(kept);
  }
  return out;
}

ClaimRecord normalize_text(const ClaimRecord& record, const PipelineConfig& config) {
  ClaimRecord out = record;
  for (int f = 0; f < 3; ++f) field(out, f) = normalize_field(field(out, f), config);
  return out;
}

ClaimRecord strip_admin(const ClaimRecord& record, const PatternSet& patterns) {
  ClaimRecord out = record;
  for (int f = 0; f < 3; ++f) {
    std::vector<std::string> kept;
    for (const auto& s : split_sentences(field(out, f)))
      if (!patterns.matches(sentence_key(s))) kept.push_back(s);
    field(out, f) = join_sentences(kept);
  }
  return out;
}

std::optional<std::string> filter_degenerate(const ClaimRecord& record, std::size_t min_tokens) {
  if (min_tokens < 1) throw ParameterError("min_tokens must be at least 1");
  for (int f = 0; f < 3; ++f) {
    std::istringstream in(field(record, f));
    std::size_t n = 0;
    std::string tok;
    while (in >> tok) ++n;
    if (n < min_tokens) return std::string(field_name(f));
  }
  return std::nullopt;
}

PipelineResult run_pipeline(const std::vector<ClaimRecord>& records, const PipelineConfig& config) {
  if (config.min_tokens < 1) throw ParameterError("min_tokens must be at least 1");
  PipelineResult result;
  for (const auto& rec : records) {
    auto emptied = [](const ClaimRecord& before, const ClaimRecord& after) -> const char* {
      for (int f = 0; f < 3; ++f)
        if (!field(before, f).empty() && field(after, f).empty()) return field_name(f);
      return nullptr;
    };
    try {
      ClaimRecord s1 = dedup_fragments(rec, &config);
      if (const char* f = emptied(rec, s1)) {
        result.drops.push_back({rec.id, 1, std::string(f) + " emptied by duplicate removal"});
        continue;
      }
      ClaimRecord s3 = normalize_text(s1, config);
      ClaimRecord s4 = strip_admin(s3, config.admin_patterns);
      if (const char* f = emptied(s3, s4)) {
        result.drops.push_back({rec.id, 4, std::string(f) + " emptied by administrative filter"});
        continue;
      }
      if (auto f = filter_degenerate(s4, config.min_tokens)) {
        result.drops.push_back(
            {rec.id, 5, *f + " has fewer than " + std::to_string(config.min_tokens) + " tokens"});
        continue;
      }
      result.records.push_back(std::move(s4));
    } catch (const Error& e) {
      result.drops.push_back({rec.id, 2, e.what()});
    }
  }
  return result;
}

std::string drop_log_tsv(const std::vector<DropEntry>& drops) {
  std::string out;
  for (const auto& d : drops) out += d.id + "\t" + std::to_string(d.stage) + "\t" + d.reason + "\n";
  return out;
}

}  // namespace claimlm::preprocess
