#include "claimlm/synthetic.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <string>

#include "claimlm/rng.hpp"

namespace claimlm::synthetic {

namespace {

struct Component {
  const char* name;
  const char* symptom;
  bool sided;
};

constexpr std::array<Component, 16> kComponents{{
    {"tire", "vehicle pulls and tire pressure light is on", true},
    {"wheel bearing", "humming noise at highway speed", true},
    {"ball joint", "clunk over bumps", true},
    {"tie rod end", "steering wheel shakes", true},
    {"brake caliper", "grinding noise when braking", true},
    {"control arm", "knocking from suspension", true},
    {"window regulator", "window will not go up", true},
    {"door lock actuator", "door will not lock", true},
    {"battery", "vehicle will not start", false},
    {"water pump", "coolant on the ground", false},
    {"alternator", "battery light on while driving", false},
    {"starter motor", "no crank condition", false},
    {"thermostat", "engine runs hot", false},
    {"timing cover", "oil leak at front of engine", false},
    {"blower motor", "no air from vents", false},
    {"fuel pump", "engine stalls under load", false},
}};

struct Fault {
  const char* finding;
  const char* action;
};

constexpr std::array<Fault, 4> kFaults{{
    {"failed", "replace"},
    {"leaking", "reseal"},
    {"loose", "tighten"},
    {"worn", "replace"},
}};

constexpr std::array<const char*, 4> kSides{"left front", "right front", "left rear", "right rear"};

constexpr std::array<const char*, 6> kMakes{"ford", "toyota", "honda", "chevrolet", "nissan", "kia"};

std::string part_phrase(const Component& c, std::size_t side) {
  return c.sided ? std::string(kSides[side % kSides.size()]) + " " + c.name : std::string(c.name);
}

// Enumerates (component, fault, side) combinations in a seeded order so that
// the first n are distinct.
std::vector<std::array<std::size_t, 3>> combos(std::uint64_t seed) {
  std::vector<std::array<std::size_t, 3>> all;
  for (std::size_t c = 0; c < kComponents.size(); ++c)
    for (std::size_t f = 0; f < kFaults.size(); ++f)
      for (std::size_t s = 0; s < (kComponents[c].sided ? kSides.size() : 1); ++s) all.push_back({c, f, s});
  CounterRng rng(seed);
  for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng.below(i)]);
  return all;
}

}  // namespace

std::vector<ClaimRecord> clean_claims(std::size_t n, std::uint64_t seed) {
  const auto order = combos(seed);
  CounterRng rng(seed ^ 0x5851F42D4C957F2DULL);
  std::vector<ClaimRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [ci, fi, si] = order[i % order.size()];
    const Component& c = kComponents[ci];
    const Fault& f = kFaults[fi];
    const std::string part = part_phrase(c, si);
    ClaimRecord r;
    r.id = "c" + std::to_string(i + 1);
    r.complaint = std::string("customer states ") + c.symptom;
    r.cause = "technician found " + part + " " + f.finding;
    r.correction = std::string(f.action) + " " + part;
    if (i >= order.size()) r.correction += " again";
    r.metadata["make"] = kMakes[rng.below(kMakes.size())];
    r.metadata["year"] = std::to_string(2012 + rng.below(12));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ClaimRecord> noisy_claims(std::size_t n, std::uint64_t seed) {
  auto records = clean_claims(n, seed);
  CounterRng rng(seed ^ 0x2545F4914F6CDD1DULL);
  static constexpr std::array<const char*, 5> kAdmin{
      "invoice sent to warranty admin.", "billing code 4471 applied.", "routed to claims desk.",
      "see attached invoice.", "labor op billed per contract."};
  static constexpr std::array<std::pair<const char*, const char*>, 4> kShorthand{
      {{"replace", "r&r"}, {"diagnose", "diag"}, {"customer", "cust"}, {"technician", "tech"}}};
  static constexpr std::array<std::pair<const char*, const char*>, 3> kMisspell{
      {{"found", "fuond"}, {"states", "stats"}, {"noise", "noize"}}};
  auto substitute = [](std::string& s, const std::string& from, const std::string& to) {
    const auto pos = s.find(from);
    if (pos != std::string::npos) s.replace(pos, from.size(), to);
  };
  for (auto& r : records) {
    for (std::string* field : {&r.complaint, &r.cause, &r.correction}) {
      for (const auto& [full, short_form] : kShorthand)
        if (rng.uniform() < 0.3) substitute(*field, full, short_form);
      for (const auto& [right, wrong] : kMisspell)
        if (rng.uniform() < 0.3) substitute(*field, right, wrong);
      if (rng.uniform() < 0.2) {
        for (char& ch : *field)
          if (rng.uniform() < 0.3) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      }
    }
    if (rng.uniform() < 0.3) r.complaint += ". " + r.complaint;            // copied fragment
    if (rng.uniform() < 0.2) r.correction = r.cause + ". " + r.correction;  // pasted cause
    if (rng.uniform() < 0.3) r.cause += std::string(". ") + kAdmin[rng.below(kAdmin.size())];
    if (rng.uniform() < 0.15) r.correction += std::string("\n") + kAdmin[rng.below(kAdmin.size())];
    if (rng.uniform() < 0.05) r.correction = kAdmin[rng.below(kAdmin.size())];  // degenerate
    if (rng.uniform() < 0.03) r.complaint = "n/a";
    if (rng.uniform() < 0.1) r.cause = "  " + r.cause + "   ";
  }
  return records;
}

std::vector<std::string> narrative_corpus(const std::vector<ClaimRecord>& records) {
  std::vector<std::string> docs;
  docs.reserve(records.size());
  for (const auto& r : records) {
    docs.push_back(r.complaint + ". " + r.cause + ". the shop will " + r.correction + ".");
  }
  return docs;
}

}  // namespace claimlm::synthetic
