#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "claimlm/autodiff.hpp"
#include "claimlm/lora.hpp"
#include "claimlm/model.hpp"
#include "claimlm/records.hpp"
#include "claimlm/tokenizer.hpp"

namespace claimlm {

// Instruction framing shared by training and generation. The prompt ends
// with the schema prefix so the model completes the action text.
inline constexpr const char* kSchemaPrefix = "Corrective actions included:";
std::string render_prompt(const std::string& complaint, const std::string& cause);
// Response text that follows the prompt; the end-of-sequence id is appended
// at the token level.
std::string render_response(const std::string& correction);

struct TrainingExample {
  TokenSequence tokens;       // z = [bos] x y [eos] [pad...]
  std::vector<double> mask;   // m_t in {0, 1}
  std::size_t instruction_length = 0;  // n, including the leading bos
  std::size_t response_length = 0;    // T after truncation

  // Length up to and including the last supervised token.
  std::size_t effective_length() const;
};

// Encodes instruction + response, appends eos, masks the instruction, right-
// truncates to max_len and pads with masked pad tokens when pad_to_max.
TrainingExample assemble(const std::string& instruction_text, const std::string& response_text,
                         const Vocab& vocab, std::size_t max_len, bool pad_to_max = true);
TrainingExample assemble(const ClaimRecord& record, const Vocab& vocab, std::size_t max_len,
                         bool pad_to_max = true);

// Plain text as [bos] text [eos] with every token after bos supervised.
TrainingExample language_model_example(const std::string& text, const Vocab& vocab, std::size_t max_len);

enum class LossReduction { kMean, kSum };

// -sum_t m_t log softmax(logits[t-1])[z_t], reduced over supervised tokens.
Var masked_nll(Var logits, const TokenSequence& z, const std::vector<double>& mask,
               LossReduction reduction = LossReduction::kMean);
double masked_nll(const Matrix& logits, const TokenSequence& z, const std::vector<double>& mask,
                  LossReduction reduction = LossReduction::kMean);

struct AdamWConfig {
  double lr = 6e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  std::size_t step = 0;
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
};

// Decoupled weight decay with bias correction. Only tensors named in `grads`
// are touched; a non-finite gradient raises DivergenceError naming the tensor.
void adamw_step(std::map<std::string, Matrix*>& params, const std::map<std::string, Matrix>& grads,
                AdamWState& state, const AdamWConfig& cfg);

struct TrainConfig {
  AdamWConfig optimizer;
  std::size_t batch_size = 8;
  std::size_t grad_accumulation = 4;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  std::size_t max_seq_len = 2048;
  LossReduction reduction = LossReduction::kMean;
  bool shuffle = true;
  // Periodic hook (e.g. validation) called after every `eval_every` steps; 0 disables.
  std::size_t eval_every = 0;
  std::function<void(std::size_t step, double loss)> on_eval;

  void validate() const;
};

struct TrainResult {
  std::vector<double> loss_trace;  // mean masked NLL per optimizer step
  std::size_t steps = 0;
};

// Adapter-only fine-tuning when `adapter` is non-null (backbone frozen);
// otherwise every backbone tensor is trained.
TrainResult train(const std::vector<TrainingExample>& dataset, ModelParams& params, LoraAdapter* adapter,
                  const TrainConfig& cfg);

std::string loss_trace_csv(const std::vector<double>& trace);

// Loss and gradients for one example, for gradient checks and diagnostics.
struct LossAndGrads {
  double loss = 0.0;
  std::map<std::string, Matrix> grads;
};
LossAndGrads example_loss_and_grads(const TrainingExample& ex, const ModelParams& params,
                                    const LoraAdapter* adapter, bool train_backbone,
                                    LossReduction reduction = LossReduction::kMean);

struct KlMleGap {
  double nll = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
};

// Expected NLL, conditional entropy and E_x KL(P_data || P_model) over a
// tabular conditional (rows = x, columns = y). `x_marginal` defaults to uniform.
KlMleGap kl_mle_gap(const Matrix& empirical, const Matrix& model,
                    const std::optional<std::vector<double>>& x_marginal = std::nullopt);

}  // namespace claimlm
