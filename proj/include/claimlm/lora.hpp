#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "claimlm/matrix.hpp"
#include "claimlm/model.hpp"

namespace claimlm {

// Projection names an adapter may target.
inline const std::vector<std::string>& lora_target_names() {
  static const std::vector<std::string> kNames{"q", "k", "v", "o", "up", "gate", "down"};
  return kNames;
}

struct LoraConfig {
  std::size_t r = 32;
  double alpha = 32.0;
  double dropout = 0.0;
  std::vector<std::string> targets{"q", "v"};

  double scale() const { return alpha / static_cast<double>(r); }

  // Query/value only.
  static LoraConfig attention_default(std::size_t r = 32, double alpha = 32.0);
  // q, k, v, o, gate, up, down.
  static LoraConfig all_projections(std::size_t r = 32, double alpha = 32.0);

  void validate(const ModelConfig& model) const;  // throws ConfigError

  std::string to_kv() const;
  static LoraConfig from_kv(const std::map<std::string, std::string>& kv);
};

// (input dim, output dim) of a projection target.
std::pair<std::size_t, std::size_t> lora_target_shape(const ModelConfig& model, const std::string& target);

struct LoraPair {
  Matrix a;  // r x d_in
  Matrix b;  // d_out x r
};

class LoraAdapter {
 public:
  LoraAdapter() = default;
  LoraAdapter(LoraConfig config, std::size_t n_layers);

  const LoraConfig& config() const noexcept { return config_; }
  bool merged() const noexcept { return merged_; }
  void mark_merged() { merged_ = true; }

  const LoraPair* find(std::size_t layer, const std::string& target) const;
  LoraPair& at(std::size_t layer, const std::string& target);

  // Tensor names are `layer.<i>.<target>.A` and `.B`.
  void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;
  Matrix& tensor(const std::string& name);
  std::size_t parameter_count() const;

  void save(const std::string& path) const;
  static LoraAdapter load(const std::string& path);

 private:
  LoraConfig config_;
  std::map<std::pair<std::size_t, std::string>, LoraPair> pairs_;
  bool merged_ = false;
};

// Creates adapters for every configured target: A ~ N(0, 1/r), B = 0.
LoraAdapter inject(const ModelParams& params, const LoraConfig& config, std::uint64_t seed);

// W_frozen + (alpha / r) * B * A, with W_frozen in d_out x d_in orientation.
Matrix effective_weight(const Matrix& w_frozen, const Matrix& a, const Matrix& b, double alpha, std::size_t r);

std::size_t trainable_parameter_count(const LoraConfig& config, const ModelConfig& model);

// Bakes the adapter into a copy of `params`. The adapter is flagged as merged;
// merging it a second time is an error.
ModelParams merge(LoraAdapter& adapter, const ModelParams& params);

}  // namespace claimlm
