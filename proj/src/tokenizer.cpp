#include "claimlm/tokenizer.hpp"

#include <fstream>
#include <sstream>
#include <tuple>

#include "claimlm/error.hpp"

namespace claimlm {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::string to_hex(const std::string& bytes) {
  static const char* kDigits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(kDigits[c >> 4]);
    out.push_back(kDigits[c & 0xF]);
  }
  return out;
}

std::string from_hex(std::string_view hex) {
  if (hex.empty() || hex.size() % 2 != 0) throw FormatError("bad hex subword '" + std::string(hex) + "'");
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw FormatError("bad hex digit in '" + std::string(hex) + "'");
  };
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2)
    out.push_back(static_cast<char>(nibble(hex[i]) * 16 + nibble(hex[i + 1])));
  return out;
}

// Merges every occurrence of (left, right) left to right.
void apply_merge(std::vector<TokenId>& seq, TokenId left, TokenId right, TokenId merged) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < seq.size();) {
    if (r + 1 < seq.size() && seq[r] == left && seq[r + 1] == right) {
      seq[w++] = merged;
      r += 2;
    } else {
      seq[w++] = seq[r++];
    }
  }
  seq.resize(w);
}

}  // namespace

Vocab::Vocab() {
  pieces_.reserve(kBaseSize);
  for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
  pieces_.emplace_back("<pad>");
  pieces_.emplace_back("<bos>");
  pieces_.emplace_back("<eos>");
}

const std::string& Vocab::piece(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
    throw VocabError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(pieces_.size()));
  }
  return pieces_[static_cast<std::size_t>(id)];
}

TokenId Vocab::add_merge(TokenId left, TokenId right) {
  const auto n = static_cast<TokenId>(pieces_.size());
  if (left < 0 || left >= n || right < 0 || right >= n || is_reserved(left) || is_reserved(right)) {
    throw VocabError("merge references undefined or reserved token");
  }
  if (ranks_.count({left, right})) throw VocabError("duplicate merge rule");
  pieces_.push_back(pieces_[static_cast<std::size_t>(left)] + pieces_[static_cast<std::size_t>(right)]);
  ranks_[{left, right}] = static_cast<int>(merges_.size());
  merges_.emplace_back(left, right);
  return n;
}

int Vocab::merge_rank(TokenId left, TokenId right) const {
  auto it = ranks_.find({left, right});
  return it == ranks_.end() ? -1 : it->second;
}

std::string Vocab::serialize() const {
  std::ostringstream os;
  os << "vocab " << size() << "\n";
  for (const auto& [l, r] : merges_) os << to_hex(piece(l)) << '\t' << to_hex(piece(r)) << '\n';
  return os.str();
}

Vocab Vocab::deserialize(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  if (!std::getline(is, line) || line.rfind("vocab ", 0) != 0) {
    throw FormatError("vocab file must start with 'vocab <size>'");
  }
  std::size_t declared = 0;
  try {
    declared = std::stoul(line.substr(6));
  } catch (const std::exception&) {
    throw FormatError("bad vocab header '" + line + "'");
  }
  Vocab v;
  std::map<std::string, TokenId> by_piece;
  for (TokenId id = 0; id < 256; ++id) by_piece[v.piece(id)] = id;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("line " + std::to_string(lineno) + ": missing tab");
    const std::string left = from_hex(std::string_view(line).substr(0, tab));
    const std::string right = from_hex(std::string_view(line).substr(tab + 1));
    auto li = by_piece.find(left), ri = by_piece.find(right);
    if (li == by_piece.end() || ri == by_piece.end()) {
      throw FormatError("line " + std::to_string(lineno) + ": merge references unknown subword");
    }
    TokenId id = v.add_merge(li->second, ri->second);
    by_piece.emplace(v.piece(id), id);
  }
  if (v.size() != declared) {
    throw FormatError("vocab header declares " + std::to_string(declared) + " entries, file has " +
                      std::to_string(v.size()));
  }
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << serialize();
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> chunks;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t start = i;
    // Leading whitespace run attaches to the following word.
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    while (i < text.size() && !is_space(static_cast<unsigned char>(text[i]))) ++i;
    chunks.push_back(text.substr(start, i - start));
  }
  return chunks;
}

Vocab train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size) {
  if (vocab_size < Vocab::kBaseSize) {
    throw ParameterError("vocab_size must be at least " + std::to_string(Vocab::kBaseSize));
  }
  if (corpus.empty()) throw TrainingError("empty corpus");

  // Unique chunks with multiplicities keep each merge pass cheap.
  std::map<std::string, std::size_t> chunk_counts;
  for (const auto& doc : corpus)
    for (auto chunk : pretokenize(doc)) ++chunk_counts[std::string(chunk)];
  std::vector<std::vector<TokenId>> words;
  std::vector<std::size_t> counts;
  for (const auto& [chunk, count] : chunk_counts) {
    std::vector<TokenId> w;
    for (unsigned char c : chunk) w.push_back(static_cast<TokenId>(c));
    words.push_back(std::move(w));
    counts.push_back(count);
  }

  Vocab vocab;
  while (vocab.size() < vocab_size) {
    std::map<std::pair<TokenId, TokenId>, std::size_t> pair_counts;
    for (std::size_t w = 0; w < words.size(); ++w)
      for (std::size_t i = 0; i + 1 < words[w].size(); ++i) pair_counts[{words[w][i], words[w][i + 1]}] += counts[w];

    const std::pair<TokenId, TokenId>* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      } else if (count == best_count && best != nullptr) {
        const auto key = std::tie(vocab.piece(pair.first), vocab.piece(pair.second));
        const auto best_key = std::tie(vocab.piece(best->first), vocab.piece(best->second));
        if (key < best_key) best = &pair;
      }
    }
    if (best == nullptr || best_count < 2) break;
    const auto [left, right] = *best;
    const TokenId merged = vocab.add_merge(left, right);
    for (auto& w : words) apply_merge(w, left, right, merged);
  }
  return vocab;
}

TokenSequence encode(const Vocab& vocab, std::string_view text) {
  TokenSequence out;
  std::vector<TokenId> seq;
  for (auto chunk : pretokenize(text)) {
    seq.clear();
    for (unsigned char c : chunk) seq.push_back(static_cast<TokenId>(c));
    // Lowest-rank pair first; equivalent to replaying merges in rule order
    // because a rule only references tokens created by earlier rules.
    while (seq.size() > 1) {
      int best_rank = -1;
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        const int r = vocab.merge_rank(seq[i], seq[i + 1]);
        if (r >= 0 && (best_rank < 0 || r < best_rank)) best_rank = r;
      }
      if (best_rank < 0) break;
      const auto [l, r] = vocab.merges()[static_cast<std::size_t>(best_rank)];
      apply_merge(seq, l, r, vocab.merge_result(best_rank));
    }
    out.insert(out.end(), seq.begin(), seq.end());
  }
  return out;
}

std::string decode(const Vocab& vocab, const TokenSequence& tokens) {
  std::string out;
  for (TokenId id : tokens) {
    const std::string& p = vocab.piece(id);
    if (!vocab.is_reserved(id)) out += p;
  }
  return out;
}

}  // namespace claimlm
