#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "claimlm/records.hpp"

namespace claimlm::synthetic {

// Clean, schema-regular claims: complaint -> cause -> corrective action.
// Distinct records for distinct indices; deterministic in (n, seed).
std::vector<ClaimRecord> clean_claims(std::size_t n, std::uint64_t seed);

// Clean claims with technician noise: shorthand, misspellings, repeated
// sentences, administrative notes, and occasional degenerate narratives.
std::vector<ClaimRecord> noisy_claims(std::size_t n, std::uint64_t seed);

// Plain narrative text (no prompt framing) for backbone language modeling.
std::vector<std::string> narrative_corpus(const std::vector<ClaimRecord>& records);

}  // namespace claimlm::synthetic
