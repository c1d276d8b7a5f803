#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "claimlm/decoding.hpp"
#include "claimlm/lora.hpp"
#include "claimlm/model.hpp"
#include "claimlm/training.hpp"

namespace claimlm {

struct EvalSettings {
  double accuracy_threshold = 0.8;
  double kappa = 0.77;          // externally supplied operating threshold
  std::string judge = "none";   // none | mock | http
  std::string judge_host = "127.0.0.1";
  int judge_port = 8080;
  std::string judge_path = "/judge";
  std::size_t judge_retries = 2;
  std::size_t judge_in_flight = 4;
};

struct PreprocessSettings {
  std::size_t min_tokens = 3;
};

// Union of all per-stage settings for one command invocation.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  LoraConfig lora;
  TrainConfig train;
  DecodeConfig decode;
  EvalSettings eval;
  PreprocessSettings preprocess;
  std::map<std::string, std::string> paths;

  RunConfig();

  // `[section]` headers and `key = value` lines; `#` starts a comment line.
  // Top-level keys (before any header) belong to section `run`. Unknown
  // sections or keys and malformed values throw ConfigError naming the line.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  // Applies one `section.key=value` override (same validation as parse).
  void set(const std::string& dotted_key, const std::string& value);

  // Fully resolved configuration in the same format; parse(render()) round-trips.
  std::string render() const;

  // 16 hex digits of FNV-1a 64 over render().
  std::string hash() const;

  void validate() const;
};

// Keys accepted in the [paths] section.
const std::vector<std::string>& known_path_keys();

std::uint64_t fnv1a64(const std::string& data);

}  // namespace claimlm
