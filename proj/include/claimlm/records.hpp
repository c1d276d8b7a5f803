#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace claimlm {

// One Complaint / Cause / Correction tuple with opaque vehicle metadata.
struct ClaimRecord {
  std::string id;
  std::string complaint;
  std::string cause;
  std::string correction;
  std::map<std::string, std::string> metadata;
  std::optional<std::string> split;
  std::optional<bool> hq;

  friend bool operator==(const ClaimRecord&, const ClaimRecord&) = default;
};

// JSON Lines with string fields complaint, cause, correction and optional
// id, split, hq, metadata. Missing ids are filled with the 1-based line number.
std::vector<ClaimRecord> read_claims_jsonl(const std::string& path);
std::vector<ClaimRecord> parse_claims_jsonl(const std::string& text);
std::string to_jsonl(const std::vector<ClaimRecord>& records);
void write_claims_jsonl(const std::string& path, const std::vector<ClaimRecord>& records);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace claimlm
