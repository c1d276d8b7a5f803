#include "claimlm/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "claimlm/error.hpp"
#include "claimlm/lora.hpp"
#include "claimlm/rng.hpp"

namespace claimlm {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
  if (d == 0 || n_layers == 0 || n_heads == 0 || vocab_size == 0 || max_seq_len == 0) {
    fail("dimensions must be positive");
  }
  if (d % n_heads != 0) fail("d=" + std::to_string(d) + " not divisible by n_heads=" + std::to_string(n_heads));
  if (head_dim() % 2 != 0) fail("head dimension must be even for rotary embeddings");
  if (d_ff == 0 || d_ff % 2 != 0) fail("d_ff must be positive and even");
  if (!(rope_base > 0.0)) fail("rope_base must be positive");
  if (!(eps > 0.0)) fail("eps must be positive");
  if (!(init_std > 0.0)) fail("init_std must be positive");
}

std::string ModelConfig::to_kv() const {
  std::ostringstream os;
  os.precision(17);
  os << "d=" << d << "\nn_layers=" << n_layers << "\nn_heads=" << n_heads << "\nd_ff=" << d_ff
     << "\nvocab_size=" << vocab_size << "\nmax_seq_len=" << max_seq_len << "\nrope_base=" << rope_base
     << "\neps=" << eps << "\ninit_std=" << init_std << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) {
    try {
      if (k == "d") c.d = std::stoul(v);
      else if (k == "n_layers") c.n_layers = std::stoul(v);
      else if (k == "n_heads") c.n_heads = std::stoul(v);
      else if (k == "d_ff") c.d_ff = std::stoul(v);
      else if (k == "vocab_size") c.vocab_size = std::stoul(v);
      else if (k == "max_seq_len") c.max_seq_len = std::stoul(v);
      else if (k == "rope_base") c.rope_base = std::stod(v);
      else if (k == "eps") c.eps = std::stod(v);
      else if (k == "init_std") c.init_std = std::stod(v);
    } catch (const std::exception&) {
      throw ConfigError("model: bad value for " + k + ": '" + v + "'");
    }
  }
  c.validate();
  return c;
}

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, CounterRng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal(0.0, stddev);
  return m;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  CounterRng rng(seed);
  const double s = config.init_std;
  ModelParams p;
  p.config = config;
  p.embedding = gaussian(config.vocab_size, config.d, s, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerParams layer;
    layer.wq = gaussian(config.d, config.d, s, rng);
    layer.wk = gaussian(config.d, config.d, s, rng);
    layer.wv = gaussian(config.d, config.d, s, rng);
    layer.wo = gaussian(config.d, config.d, s, rng);
    layer.w_up = gaussian(config.d, config.ffn_hidden(), s, rng);
    layer.w_gate = gaussian(config.d, config.ffn_hidden(), s, rng);
    layer.w_down = gaussian(config.ffn_hidden(), config.d, s, rng);
    layer.attn_norm = Matrix(1, config.d, 1.0);
    layer.ffn_norm = Matrix(1, config.d, 1.0);
    p.layers.push_back(std::move(layer));
  }
  p.out_norm = Matrix(1, config.d, 1.0);
  p.w_out = gaussian(config.vocab_size, config.d, s, rng);
  p.b_out = Matrix(1, config.vocab_size, 0.0);
  return p;
}

namespace {

template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
  fn(std::string("embedding"), p.embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer." + std::to_string(l) + ".";
    fn(pre + "attn_norm", L.attn_norm);
    fn(pre + "q", L.wq);
    fn(pre + "k", L.wk);
    fn(pre + "v", L.wv);
    fn(pre + "o", L.wo);
    fn(pre + "ffn_norm", L.ffn_norm);
    fn(pre + "up", L.w_up);
    fn(pre + "gate", L.w_gate);
    fn(pre + "down", L.w_down);
  }
  fn(std::string("out_norm"), p.out_norm);
  fn(std::string("w_out"), p.w_out);
  fn(std::string("b_out"), p.b_out);
}

}  // namespace

void ModelParams::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
  visit_params(*this, fn);
}

void ModelParams::for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  visit_params(*this, fn);
}

Matrix& ModelParams::tensor(const std::string& name) {
  Matrix* found = nullptr;
  for_each([&](const std::string& n, Matrix& m) {
    if (n == name) found = &m;
  });
  if (found == nullptr) throw ConfigError("unknown tensor '" + name + "'");
  return *found;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t total = 0;
  for_each([&](const std::string&, const Matrix& m) { total += m.size(); });
  return total;
}

// ---------------------------------------------------------------------------

BoundModel::BoundModel(Tape& tape, const ModelParams& params, const LoraAdapter* adapter, Options options)
    : tape_(tape), params_(params), adapter_(adapter), options_(options) {
  if (adapter_ != nullptr && adapter_->merged()) {
    throw ConfigError("adapter has already been merged into its backbone");
  }
  params_.for_each([&](const std::string& name, const Matrix& m) { bind(name, m, options_.train_backbone); });
  if (adapter_ != nullptr) {
    adapter_->for_each([&](const std::string& name, const Matrix& m) { bind(name, m, options_.train_adapter); });
  }
}

Var BoundModel::bind(const std::string& name, const Matrix& m, bool trainable) {
  Var v = tape_.leaf(m, trainable);
  leaves_.emplace(name, v);
  if (trainable && tape_.recording()) trainable_.emplace(name, v);
  return v;
}

Var BoundModel::project(std::size_t layer, const char* target, Var x, Var w) {
  Var y = ad::matmul(x, w);
  if (adapter_ == nullptr || adapter_->find(layer, target) == nullptr) return y;
  const std::string pre = "layer." + std::to_string(layer) + "." + target;
  Var a = leaves_.at(pre + ".A");
  Var b = leaves_.at(pre + ".B");
  Var xin = x;
  const double p = adapter_->config().dropout;
  if (p > 0.0 && options_.dropout_rng != nullptr) {
    Matrix keep(x.value().rows(), x.value().cols());
    for (double& k : keep.data()) k = options_.dropout_rng->uniform() < p ? 0.0 : 1.0 / (1.0 - p);
    xin = ad::mul_constant(x, keep);
  }
  // x * (B A)^T = (x A^T) B^T
  Var delta = ad::matmul_nt(ad::matmul_nt(xin, a), b);
  return ad::add(y, ad::scale(delta, adapter_->config().scale()));
}

Var BoundModel::embed(std::span<const TokenId> tokens) {
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config().vocab_size) {
      throw VocabError("token id " + std::to_string(t) + " outside vocabulary of size " +
                       std::to_string(config().vocab_size));
    }
  }
  return ad::gather_rows(leaves_.at("embedding"), tokens);
}

Var BoundModel::attention_block(std::size_t layer, Var h_in, std::size_t start_pos,
                                std::vector<Matrix>* head_weights) {
  const ModelConfig& c = config();
  const std::string pre = "layer." + std::to_string(layer) + ".";
  Var x = ad::rmsnorm_rows(h_in, leaves_.at(pre + "attn_norm"), c.eps);
  Var q = ad::rope(project(layer, "q", x, leaves_.at(pre + "q")), c.head_dim(), start_pos, c.rope_base);
  Var k = ad::rope(project(layer, "k", x, leaves_.at(pre + "k")), c.head_dim(), start_pos, c.rope_base);
  Var v = project(layer, "v", x, leaves_.at(pre + "v"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c.head_dim()));
  std::vector<Var> heads;
  heads.reserve(c.n_heads);
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const std::size_t off = h * c.head_dim();
    Var qh = ad::slice_cols(q, off, c.head_dim());
    Var kh = ad::slice_cols(k, off, c.head_dim());
    Var vh = ad::slice_cols(v, off, c.head_dim());
    Var weights = ad::softmax_rows(ad::causal_mask(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt)));
    if (head_weights != nullptr) head_weights->push_back(weights.value());
    heads.push_back(ad::matmul(weights, vh));
  }
  Var concat = c.n_heads == 1 ? heads.front() : ad::concat_cols(heads);
  Var out = project(layer, "o", concat, leaves_.at(pre + "o"));
  return ad::add(h_in, out);
}

Var BoundModel::ffn_block(std::size_t layer, Var h_mid) {
  const std::string pre = "layer." + std::to_string(layer) + ".";
  Var x = ad::rmsnorm_rows(h_mid, leaves_.at(pre + "ffn_norm"), config().eps);
  Var a = project(layer, "up", x, leaves_.at(pre + "up"));
  Var b = project(layer, "gate", x, leaves_.at(pre + "gate"));
  Var hidden = ad::mul(ad::silu(a), b);
  return ad::add(h_mid, project(layer, "down", hidden, leaves_.at(pre + "down")));
}

Var BoundModel::forward(std::span<const TokenId> tokens) {
  if (tokens.size() > config().max_seq_len) {
    throw LengthError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len " +
                      std::to_string(config().max_seq_len));
  }
  Var h = embed(tokens);
  for (std::size_t l = 0; l < config().n_layers; ++l) {
    h = attention_block(l, h, 0);
    h = ffn_block(l, h);
  }
  Var normed = ad::rmsnorm_rows(h, leaves_.at("out_norm"), config().eps);
  return ad::add_row_vector(ad::matmul_nt(normed, leaves_.at("w_out")), leaves_.at("b_out"));
}

// ---------------------------------------------------------------------------

Matrix embed(const ModelParams& params, std::span<const TokenId> tokens) {
  Tape tape(false);
  BoundModel m(tape, params);
  return m.embed(tokens).value();
}

Matrix rope_rotate(const Matrix& h, std::size_t start_pos, double base) {
  Tape tape(false);
  return ad::rope(tape.constant(h), h.cols(), start_pos, base).value();
}

Matrix rmsnorm(const Matrix& v, const Matrix& gamma, double eps) {
  if (eps < 0.0) throw ParameterError("rmsnorm eps must be non-negative");
  Tape tape(false);
  return ad::rmsnorm_rows(tape.constant(v), tape.constant(gamma), eps).value();
}

Matrix attention_block(const ModelParams& params, std::size_t layer, const Matrix& h_in, std::size_t start_pos,
                       std::vector<Matrix>* head_weights) {
  Tape tape(false);
  BoundModel m(tape, params);
  return m.attention_block(layer, tape.constant(h_in), start_pos, head_weights).value();
}

Matrix ffn_block(const ModelParams& params, std::size_t layer, const Matrix& h_mid) {
  Tape tape(false);
  BoundModel m(tape, params);
  return m.ffn_block(layer, tape.constant(h_mid)).value();
}

Matrix forward(const ModelParams& params, std::span<const TokenId> tokens, const LoraAdapter* adapter) {
  Tape tape(false);
  BoundModel m(tape, params, adapter, {});
  return m.forward(tokens).value();
}

std::vector<double> output_distribution(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  return softmax_rows(Matrix::row_vector(logits), temperature).data();
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'W', 'C', 'L', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError("truncated tensor file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated tensor file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::string get_bytes(std::istream& is, std::uint64_t n) {
  if (n > (1ULL << 32)) throw FormatError("implausible field length");
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("truncated tensor file");
  return s;
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

void TensorFile::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write(kMagic, 4);
  put_u32(os, kFormatVersion);
  put_u64(os, config.size());
  os.write(config.data(), static_cast<std::streamsize>(config.size()));
  put_u64(os, tensors.size());
  for (const auto& [name, m] : tensors) {
    put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(os, 2);
    put_u64(os, m.rows());
    put_u64(os, m.cols());
    for (double v : m.data()) put_f32(os, static_cast<float>(v));
  }
  if (!os) throw IoError("write failed for " + path);
}

TensorFile TensorFile::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path + ": bad magic");
  const std::uint32_t version = get_u32(is);
  if (version != kFormatVersion) throw FormatError(path + ": unsupported format version " + std::to_string(version));
  TensorFile tf;
  tf.config = get_bytes(is, get_u64(is));
  const std::uint64_t count = get_u64(is);
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name = get_bytes(is, get_u64(is));
    const std::uint64_t rank = get_u64(is);
    if (rank == 0 || rank > 2) throw FormatError(path + ": tensor " + name + " has unsupported rank");
    std::uint64_t rows = 1, cols = get_u64(is);
    if (rank == 2) {
      rows = cols;
      cols = get_u64(is);
    }
    Matrix m(rows, cols);
    for (double& v : m.data()) v = static_cast<double>(get_f32(is));
    tf.tensors.emplace_back(std::move(name), std::move(m));
  }
  return tf;
}

std::map<std::string, std::string> parse_kv_block(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  TensorFile tf;
  tf.config = params.config.to_kv();
  params.for_each([&](const std::string& name, const Matrix& m) { tf.tensors.emplace_back(name, m); });
  tf.save(path);
}

ModelParams load_checkpoint(const std::string& path) {
  TensorFile tf = TensorFile::load(path);
  ModelParams p = ModelParams::init(ModelConfig::from_kv(parse_kv_block(tf.config)), 0);
  std::map<std::string, Matrix> by_name(tf.tensors.begin(), tf.tensors.end());
  p.for_each([&](const std::string& name, Matrix& m) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(path + ": missing tensor " + name);
    if (!it->second.same_shape(m)) {
      throw ShapeError(path + ": tensor " + name + " is " + it->second.shape_string() + ", expected " +
                       m.shape_string());
    }
    m = std::move(it->second);
  });
  return p;
}

}  // namespace claimlm
