#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace claimlm {

using TokenId = int;
using TokenSequence = std::vector<TokenId>;

// Byte-level BPE vocabulary. Ids 0..255 are raw bytes, followed by the three
// reserved ids, followed by merges in training order.
class Vocab {
 public:
  static constexpr TokenId kPad = 256;
  static constexpr TokenId kBos = 257;
  static constexpr TokenId kEos = 258;
  static constexpr std::size_t kBaseSize = 259;

  Vocab();

  std::size_t size() const noexcept { return pieces_.size(); }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const noexcept { return merges_; }
  const std::string& piece(TokenId id) const;
  bool is_reserved(TokenId id) const noexcept { return id >= kPad && id <= kEos; }

  // Appends a merge of two existing ids and returns the new id.
  TokenId add_merge(TokenId left, TokenId right);
  // Merge rank of (left, right) or -1 when no such rule exists.
  int merge_rank(TokenId left, TokenId right) const;
  TokenId merge_result(int rank) const { return static_cast<TokenId>(kBaseSize) + rank; }

  // `vocab <size>` header, then one `<hex left>\t<hex right>` line per merge.
  std::string serialize() const;
  static Vocab deserialize(std::string_view text);
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> pieces_;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::map<std::pair<TokenId, TokenId>, int> ranks_;
};

// Greedy most-frequent-pair training; ties go to the lexicographically
// smallest (left bytes, right bytes) pair. Stops at vocab_size or when no
// pair occurs at least twice.
Vocab train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size);

TokenSequence encode(const Vocab& vocab, std::string_view text);
std::string decode(const Vocab& vocab, const TokenSequence& tokens);

// Whitespace-attached chunks (" word") that merges never cross.
std::vector<std::string_view> pretokenize(std::string_view text);

}  // namespace claimlm
