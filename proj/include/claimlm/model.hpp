#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "claimlm/autodiff.hpp"
#include "claimlm/matrix.hpp"
#include "claimlm/rng.hpp"
#include "claimlm/tokenizer.hpp"

namespace claimlm {

struct ModelConfig {
  std::size_t d = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;  // total across the up and gate branches
  std::size_t vocab_size = Vocab::kBaseSize;
  std::size_t max_seq_len = 2048;
  double rope_base = 10000.0;
  double eps = 1e-6;
  double init_std = 0.02;

  std::size_t head_dim() const { return d / n_heads; }
  std::size_t ffn_hidden() const { return d_ff / 2; }
  void validate() const;  // throws ConfigError

  // key=value lines, one per field.
  std::string to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Projections are stored in x*W orientation (rows = inputs).
struct LayerParams {
  Matrix wq, wk, wv, wo;      // d x d, heads stacked along columns
  Matrix w_up, w_gate;        // d x d_ff/2
  Matrix w_down;              // d_ff/2 x d
  Matrix attn_norm, ffn_norm; // 1 x d
};

struct ModelParams {
  ModelConfig config;
  Matrix embedding;  // vocab x d
  std::vector<LayerParams> layers;
  Matrix out_norm;   // 1 x d
  Matrix w_out;      // vocab x d
  Matrix b_out;      // 1 x vocab

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  // Visits every tensor under its checkpoint name, in a fixed order.
  void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;
  Matrix& tensor(const std::string& name);
  std::size_t parameter_count() const;
};

class LoraAdapter;

// Tensors of a model (and optional adapter) placed on a tape as leaves.
// Trainable leaves are exposed by name for gradient readout.
class BoundModel {
 public:
  struct Options {
    bool train_backbone = false;
    bool train_adapter = false;
    CounterRng* dropout_rng = nullptr;  // adapter dropout active only when set
  };

  BoundModel(Tape& tape, const ModelParams& params, const LoraAdapter* adapter, Options options);
  BoundModel(Tape& tape, const ModelParams& params) : BoundModel(tape, params, nullptr, Options{}) {}

  Tape& tape() const { return tape_; }
  const ModelConfig& config() const { return params_.config; }
  const std::map<std::string, Var>& trainable() const { return trainable_; }

  Var embed(std::span<const TokenId> tokens);
  Var attention_block(std::size_t layer, Var h_in, std::size_t start_pos,
                      std::vector<Matrix>* head_weights = nullptr);
  Var ffn_block(std::size_t layer, Var h_mid);
  // Raw logits (n x vocab) for the full sequence.
  Var forward(std::span<const TokenId> tokens);

 private:
  Var bind(const std::string& name, const Matrix& m, bool trainable);
  Var project(std::size_t layer, const char* target, Var x, Var w);

  Tape& tape_;
  const ModelParams& params_;
  const LoraAdapter* adapter_;
  Options options_;
  std::map<std::string, Var> leaves_;
  std::map<std::string, Var> trainable_;
};

// Untaped conveniences.
Matrix embed(const ModelParams& params, std::span<const TokenId> tokens);
Matrix rope_rotate(const Matrix& h, std::size_t start_pos, double base);
Matrix rmsnorm(const Matrix& v, const Matrix& gamma, double eps);
Matrix attention_block(const ModelParams& params, std::size_t layer, const Matrix& h_in,
                       std::size_t start_pos = 0, std::vector<Matrix>* head_weights = nullptr);
Matrix ffn_block(const ModelParams& params, std::size_t layer, const Matrix& h_mid);
Matrix forward(const ModelParams& params, std::span<const TokenId> tokens,
               const LoraAdapter* adapter = nullptr);
std::vector<double> output_distribution(std::span<const double> logits, double temperature);

// Binary tensor container shared by checkpoints and adapters:
// "WCLM", u32 version, u64 config length + UTF-8 key=value block,
// u64 tensor count, then per tensor: u64 name length, name, u64 rank,
// u64 dims, row-major little-endian f32 data.
struct TensorFile {
  std::string config;
  std::vector<std::pair<std::string, Matrix>> tensors;

  void save(const std::string& path) const;
  static TensorFile load(const std::string& path);
};

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

std::map<std::string, std::string> parse_kv_block(const std::string& text);

}  // namespace claimlm
