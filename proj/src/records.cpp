#include "claimlm/records.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "claimlm/error.hpp"

namespace claimlm {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << contents;
  if (!out) throw IoError("write failed for " + path);
}

std::vector<ClaimRecord> parse_claims_jsonl(const std::string& text) {
  std::vector<ClaimRecord> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
    auto field = [&](const char* key) -> std::string {
      if (!j.contains(key) || !j[key].is_string()) {
        throw FormatError("line " + std::to_string(lineno) + ": missing string field '" + key + "'");
      }
      return j[key].get<std::string>();
    };
    ClaimRecord r;
    r.complaint = field("complaint");
    r.cause = field("cause");
    r.correction = field("correction");
    if (j.contains("id")) {
      r.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    } else {
      r.id = std::to_string(lineno);
    }
    if (j.contains("split") && j["split"].is_string()) r.split = j["split"].get<std::string>();
    if (j.contains("hq")) {
      if (!j["hq"].is_boolean()) throw FormatError("line " + std::to_string(lineno) + ": 'hq' must be boolean");
      r.hq = j["hq"].get<bool>();
    }
    if (j.contains("metadata") && j["metadata"].is_object()) {
      for (auto& [k, v] : j["metadata"].items()) r.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ClaimRecord> read_claims_jsonl(const std::string& path) { return parse_claims_jsonl(read_file(path)); }

std::string to_jsonl(const std::vector<ClaimRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["complaint"] = r.complaint;
    j["cause"] = r.cause;
    j["correction"] = r.correction;
    if (r.split) j["split"] = *r.split;
    if (r.hq) j["hq"] = *r.hq;
    if (!r.metadata.empty()) j["metadata"] = r.metadata;
    out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
  }
  return out;
}

void write_claims_jsonl(const std::string& path, const std::vector<ClaimRecord>& records) {
  write_file(path, to_jsonl(records));
}

}  // namespace claimlm
