#include "claimlm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "claimlm/error.hpp"
#include "claimlm/rng.hpp"

namespace claimlm {

std::string render_prompt(const std::string& complaint, const std::string& cause) {
  return "Complaint: " + complaint + "\nCause: " + cause + "\n" + std::string(kSchemaPrefix);
}

std::string render_response(const std::string& correction) { return " " + correction; }

std::size_t TrainingExample::effective_length() const {
  std::size_t last = 0;
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (mask[t] != 0.0) last = t + 1;
  return last;
}

TrainingExample assemble(const std::string& instruction_text, const std::string& response_text,
                         const Vocab& vocab, std::size_t max_len, bool pad_to_max) {
  if (instruction_text.empty()) throw ExampleRejected("empty instruction text");
  auto first = response_text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw ExampleRejected("empty response text");

  TrainingExample ex;
  ex.tokens.push_back(Vocab::kBos);
  const TokenSequence x = encode(vocab, instruction_text);
  ex.tokens.insert(ex.tokens.end(), x.begin(), x.end());
  ex.instruction_length = ex.tokens.size();
  if (ex.instruction_length >= max_len) {
    throw ExampleRejected("instruction of " + std::to_string(ex.instruction_length) +
                          " tokens leaves no room for a response within " + std::to_string(max_len));
  }
  TokenSequence y = encode(vocab, response_text);
  y.push_back(Vocab::kEos);
  ex.tokens.insert(ex.tokens.end(), y.begin(), y.end());
  if (ex.tokens.size() > max_len) ex.tokens.resize(max_len);
  ex.response_length = ex.tokens.size() - ex.instruction_length;
  ex.mask.assign(ex.tokens.size(), 0.0);
  for (std::size_t t = ex.instruction_length; t < ex.tokens.size(); ++t) ex.mask[t] = 1.0;
  if (pad_to_max) {
    ex.tokens.resize(max_len, Vocab::kPad);
    ex.mask.resize(max_len, 0.0);
  }
  return ex;
}

TrainingExample assemble(const ClaimRecord& record, const Vocab& vocab, std::size_t max_len, bool pad_to_max) {
  if (record.correction.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ExampleRejected("record " + record.id + ": empty correction");
  }
  return assemble(render_prompt(record.complaint, record.cause), render_response(record.correction), vocab,
                  max_len, pad_to_max);
}

TrainingExample language_model_example(const std::string& text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw ExampleRejected("max_len must leave room for bos and one token");
  TrainingExample ex;
  ex.tokens.push_back(Vocab::kBos);
  const TokenSequence body = encode(vocab, text);
  if (body.empty()) throw ExampleRejected("empty language-model text");
  ex.tokens.insert(ex.tokens.end(), body.begin(), body.end());
  ex.tokens.push_back(Vocab::kEos);
  if (ex.tokens.size() > max_len) ex.tokens.resize(max_len);
  ex.mask.assign(ex.tokens.size(), 1.0);
  ex.mask[0] = 0.0;
  ex.instruction_length = 1;
  ex.response_length = ex.tokens.size() - 1;
  return ex;
}

namespace {

void check_loss_inputs(const Matrix& logits, const TokenSequence& z, const std::vector<double>& mask) {
  if (z.size() != mask.size()) throw ShapeError("masked_nll: tokens and mask lengths differ");
  if (logits.rows() < z.size()) {
    throw ShapeError("masked_nll: " + std::to_string(logits.rows()) + " logit rows for " +
                     std::to_string(z.size()) + " tokens");
  }
}

}  // namespace

Var masked_nll(Var logits, const TokenSequence& z, const std::vector<double>& mask, LossReduction reduction) {
  const Matrix& L = logits.value();
  check_loss_inputs(L, z, mask);
  const std::size_t vocab = L.cols();
  double weight_total = 0.0;
  for (std::size_t t = 1; t < z.size(); ++t) weight_total += mask[t];
  if (weight_total == 0.0) throw DegenerateExample("no supervised tokens in mask");
  const double norm = reduction == LossReduction::kMean ? 1.0 / weight_total : 1.0;

  // Softmax rows are kept for the backward pass.
  std::vector<std::size_t> rows;
  std::vector<double> flat;
  double loss = 0.0;
  for (std::size_t t = 1; t < z.size(); ++t) {
    if (mask[t] == 0.0) continue;
    const TokenId target = z[t];
    if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
      throw VocabError("target id " + std::to_string(target) + " outside vocabulary");
    }
    auto row = L.row(t - 1);
    double mx = kNegInf;
    for (double v : row) mx = std::max(mx, v);
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx);
    const double log_z = mx + std::log(total);
    loss -= mask[t] * (row[static_cast<std::size_t>(target)] - log_z);
    rows.push_back(t);
    for (double v : row) flat.push_back(std::exp(v - log_z));
  }
  loss *= norm;
  return logits.tape->push(
      Matrix(1, 1, loss), {logits},
      [logits, z, mask, rows, flat = std::move(flat), norm, vocab](Tape& t, std::size_t self) {
        const double g = t.grad(self)(0, 0);
        Matrix& gl = t.grad_buffer(logits.id);
        for (std::size_t k = 0; k < rows.size(); ++k) {
          const std::size_t pos = rows[k];
          const double w = g * norm * mask[pos];
          auto grow = gl.row(pos - 1);
          const double* p = flat.data() + k * vocab;
          for (std::size_t j = 0; j < vocab; ++j) grow[j] += w * p[j];
          grow[static_cast<std::size_t>(z[pos])] -= w;
        }
      });
}

double masked_nll(const Matrix& logits, const TokenSequence& z, const std::vector<double>& mask,
                  LossReduction reduction) {
  Tape tape(false);
  return masked_nll(tape.constant(logits), z, mask, reduction).value()(0, 0);
}

void adamw_step(std::map<std::string, Matrix*>& params, const std::map<std::string, Matrix>& grads,
                AdamWState& state, const AdamWConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw DivergenceError("non-finite gradient for tensor " + name);
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("gradient for unknown tensor " + name);
    if (!it->second->same_shape(g)) throw ShapeError("gradient shape mismatch for " + name);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Matrix& p = *params.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, p.rows(), p.cols());
    auto [vit, v_new] = state.v.try_emplace(name, p.rows(), p.cols());
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double& w = p.data()[i];
      const double gi = g.data()[i];
      w -= cfg.lr * cfg.weight_decay * w;
      m.data()[i] = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
      v.data()[i] = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m.data()[i] / bc1;
      const double vhat = v.data()[i] / bc2;
      w -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (!(optimizer.lr >= 0.0)) throw ConfigError("train: lr must be non-negative");
  if (batch_size == 0 || grad_accumulation == 0 || epochs == 0) {
    throw ConfigError("train: batch size, accumulation and epochs must be positive");
  }
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("train: betas must lie in [0, 1)");
  }
  if (!(optimizer.eps > 0.0)) throw ConfigError("train: eps must be positive");
  if (max_seq_len == 0) throw ConfigError("train: max_seq_len must be positive");
}

LossAndGrads example_loss_and_grads(const TrainingExample& ex, const ModelParams& params,
                                    const LoraAdapter* adapter, bool train_backbone, LossReduction reduction) {
  const std::size_t len = ex.effective_length();
  if (len == 0) throw DegenerateExample("example has no supervised tokens");
  const TokenSequence z(ex.tokens.begin(), ex.tokens.begin() + static_cast<long>(len));
  const std::vector<double> m(ex.mask.begin(), ex.mask.begin() + static_cast<long>(len));
  Tape tape;
  BoundModel bound(tape, params, adapter, {train_backbone, adapter != nullptr, nullptr});
  Var loss = masked_nll(bound.forward(z), z, m, reduction);
  tape.backward(loss);
  LossAndGrads out;
  out.loss = loss.value()(0, 0);
  for (const auto& [name, v] : bound.trainable()) {
    const Matrix& g = v.grad();
    out.grads[name] = g.empty() ? Matrix(v.value().rows(), v.value().cols()) : g;
  }
  return out;
}

TrainResult train(const std::vector<TrainingExample>& dataset, ModelParams& params, LoraAdapter* adapter,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw TrainingError("empty dataset");
  if (adapter != nullptr) adapter->config().validate(params.config);

  std::map<std::string, Matrix*> trainable;
  if (adapter != nullptr) {
    adapter->for_each([&](const std::string& n, Matrix& m) { trainable[n] = &m; });
  } else {
    params.for_each([&](const std::string& n, Matrix& m) { trainable[n] = &m; });
  }

  CounterRng order_rng(cfg.seed);
  CounterRng dropout_rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  const bool use_dropout = adapter != nullptr && adapter->config().dropout > 0.0;
  AdamWState state;
  TrainResult result;
  const std::size_t per_step = cfg.batch_size * cfg.grad_accumulation;

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    if (cfg.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    }
    for (std::size_t start = 0; start < order.size(); start += per_step) {
      const std::size_t end = std::min(order.size(), start + per_step);
      std::map<std::string, Matrix> grads;
      double loss_sum = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const TrainingExample& ex = dataset[order[k]];
        const std::size_t len = std::min(ex.effective_length(), cfg.max_seq_len);
        if (len == 0) throw DegenerateExample("example " + std::to_string(order[k]) + " has no supervised tokens");
        const TokenSequence z(ex.tokens.begin(), ex.tokens.begin() + static_cast<long>(len));
        const std::vector<double> m(ex.mask.begin(), ex.mask.begin() + static_cast<long>(len));
        Tape tape;
        BoundModel bound(tape, params, adapter,
                         {adapter == nullptr, adapter != nullptr, use_dropout ? &dropout_rng : nullptr});
        Var loss = masked_nll(bound.forward(z), z, m, cfg.reduction);
        const double lv = loss.value()(0, 0);
        if (!std::isfinite(lv)) {
          throw DivergenceError("non-finite loss at step " + std::to_string(result.steps + 1));
        }
        loss_sum += lv;
        tape.backward(loss);
        for (const auto& [name, v] : bound.trainable()) {
          const Matrix& g = v.grad();
          if (g.empty()) continue;
          auto [it, fresh] = grads.try_emplace(name, g);
          if (!fresh)
            for (std::size_t i = 0; i < g.size(); ++i) it->second.data()[i] += g.data()[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& [name, g] : grads)
        for (double& x : g.data()) x *= inv;
      adamw_step(trainable, grads, state, cfg.optimizer);
      ++result.steps;
      result.loss_trace.push_back(loss_sum * inv);
      if (cfg.eval_every > 0 && cfg.on_eval && result.steps % cfg.eval_every == 0) {
        cfg.on_eval(result.steps, result.loss_trace.back());
      }
    }
  }
  return result;
}

std::string loss_trace_csv(const std::vector<double>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) os << (i + 1) << "," << trace[i] << "\n";
  return os.str();
}

KlMleGap kl_mle_gap(const Matrix& empirical, const Matrix& model, const std::optional<std::vector<double>>& x_marginal) {
  if (!empirical.same_shape(model)) {
    throw ShapeError("kl_mle_gap: empirical " + empirical.shape_string() + " vs model " + model.shape_string());
  }
  const std::size_t nx = empirical.rows();
  std::vector<double> px = x_marginal.value_or(std::vector<double>(nx, nx ? 1.0 / static_cast<double>(nx) : 0.0));
  if (px.size() != nx) throw ShapeError("kl_mle_gap: marginal length does not match table rows");
  KlMleGap out;
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t y = 0; y < empirical.cols(); ++y) {
      const double p = empirical(x, y);
      if (p <= 0.0) continue;
      const double q = model(x, y);
      if (!(q > 0.0)) {
        throw InfiniteKlError("model assigns zero probability to (" + std::to_string(x) + ", " +
                              std::to_string(y) + ") where data is positive");
      }
      out.nll -= px[x] * p * std::log(q);
      out.entropy -= px[x] * p * std::log(p);
      out.kl += px[x] * p * std::log(p / q);
    }
  }
  return out;
}

}  // namespace claimlm
