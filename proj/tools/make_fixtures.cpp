// Writes the deterministic data fixtures used by the tests and examples.
//   make_fixtures <data dir>

#include <filesystem>
#include <iostream>

#include "claimlm/evalharness.hpp"
#include "claimlm/records.hpp"
#include "claimlm/rng.hpp"
#include "claimlm/synthetic.hpp"

namespace fs = std::filesystem;
using namespace claimlm;

namespace {

// 200 schema-conforming outputs: 163 scored >= 0.8 overall, 100 HQ records
// of which 92 are scored >= 0.8.
std::vector<eval::EvalRecord> governance_fixture() {
  const auto claims = synthetic::clean_claims(200, 11);
  CounterRng rng(11);
  const double high[] = {1.0, 0.8};
  const double low[] = {0.6, 0.4, 0.2, 0.0};
  std::vector<eval::EvalRecord> out;
  for (std::size_t i = 0; i < 200; ++i) {
    const bool hq = i < 100;
    const bool accurate = hq ? i < 92 : i < 171;  // 92 HQ + 71 other
    eval::EvalRecord r;
    r.id = claims[i].id;
    r.prompt = "Complaint: " + claims[i].complaint + "\nCause: " + claims[i].cause + "\nCorrective actions included:";
    r.reference = claims[i].correction;
    r.output = "Corrective actions included: " + (accurate ? claims[i].correction : claims[(i + 37) % 200].correction);
    r.score_source = "human";
    r.score = accurate ? high[rng.below(2)] : low[rng.below(4)];
    r.hq = hq;
    r.truncated = false;
    out.push_back(std::move(r));
  }
  return out;
}

// 2953 tire-claim reference corrections, 4 of them repair-type.
std::string sidewall_fixture() {
  const char* sides[] = {"left front", "right front", "left rear", "right rear"};
  const char* repairs[] = {"repair tire", "patch tire", "remove nail and repair tire", "patch tire"};
  const std::size_t repair_at[] = {311, 1207, 1990, 2718};
  CounterRng rng(5);
  std::string out;
  std::size_t next_repair = 0;
  for (std::size_t i = 0; i < 2953; ++i) {
    const std::string side = sides[rng.below(4)];
    if (next_repair < 4 && i == repair_at[next_repair]) {
      out += std::string(repairs[next_repair++]) + " " + side + "\n";
    } else {
      out += "replace " + side + " tire due to sidewall damage\n";
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <data dir>\n";
    return 2;
  }
  const fs::path dir = argv[1];
  try {
    fs::create_directories(dir / "fixtures");
    write_file((dir / "fixtures" / "governance_m4.jsonl").string(), eval::to_jsonl(governance_fixture()));
    write_file((dir / "fixtures" / "sidewall_corrections.txt").string(), sidewall_fixture());
    write_claims_jsonl((dir / "fixtures" / "clean_claims.jsonl").string(), synthetic::clean_claims(160, 7));
    write_claims_jsonl((dir / "fixtures" / "noisy_claims.jsonl").string(), synthetic::noisy_claims(1000, 3));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
