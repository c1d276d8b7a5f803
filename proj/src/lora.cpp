#include "claimlm/lora.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "claimlm/error.hpp"
#include "claimlm/rng.hpp"

namespace claimlm {

LoraConfig LoraConfig::attention_default(std::size_t r, double alpha) {
  LoraConfig c;
  c.r = r;
  c.alpha = alpha;
  c.targets = {"q", "v"};
  return c;
}

LoraConfig LoraConfig::all_projections(std::size_t r, double alpha) {
  LoraConfig c;
  c.r = r;
  c.alpha = alpha;
  c.targets = {"q", "k", "v", "o", "gate", "up", "down"};
  return c;
}

std::pair<std::size_t, std::size_t> lora_target_shape(const ModelConfig& model, const std::string& target) {
  if (target == "q" || target == "k" || target == "v" || target == "o") return {model.d, model.d};
  if (target == "up" || target == "gate") return {model.d, model.ffn_hidden()};
  if (target == "down") return {model.ffn_hidden(), model.d};
  throw ConfigError("lora: unknown target '" + target + "'");
}

void LoraConfig::validate(const ModelConfig& model) const {
  if (r < 1) throw ConfigError("lora: rank r must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("lora: dropout must lie in [0, 1)");
  if (!std::isfinite(alpha)) throw ConfigError("lora: alpha must be finite");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto [din, dout] = lora_target_shape(model, targets[i]);
    if (r >= std::min(din, dout)) {
      throw ConfigError("lora: rank " + std::to_string(r) + " is not below min(d_in, d_out) for target " +
                        targets[i]);
    }
    if (std::find(targets.begin(), targets.begin() + static_cast<long>(i), targets[i]) !=
        targets.begin() + static_cast<long>(i)) {
      throw ConfigError("lora: duplicate target '" + targets[i] + "'");
    }
  }
}

std::string LoraConfig::to_kv() const {
  std::ostringstream os;
  os.precision(17);
  os << "r=" << r << "\nalpha=" << alpha << "\ndropout=" << dropout << "\ntargets=";
  for (std::size_t i = 0; i < targets.size(); ++i) os << (i ? "," : "") << targets[i];
  os << "\n";
  return os.str();
}

LoraConfig LoraConfig::from_kv(const std::map<std::string, std::string>& kv) {
  LoraConfig c;
  for (const auto& [k, v] : kv) {
    try {
      if (k == "r") {
        const long long r = std::stoll(v);
        if (r < 1) throw ConfigError("lora: rank r must be >= 1");
        c.r = static_cast<std::size_t>(r);
      } else if (k == "alpha") {
        c.alpha = std::stod(v);
      } else if (k == "dropout") {
        c.dropout = std::stod(v);
      } else if (k == "targets") {
        c.targets.clear();
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
          if (!item.empty()) c.targets.push_back(item);
        }
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("lora: bad value for " + k + ": '" + v + "'");
    }
  }
  return c;
}

LoraAdapter::LoraAdapter(LoraConfig config, std::size_t n_layers) : config_(std::move(config)) {
  for (std::size_t l = 0; l < n_layers; ++l)
    for (const auto& t : config_.targets) pairs_[{l, t}] = LoraPair{};
}

const LoraPair* LoraAdapter::find(std::size_t layer, const std::string& target) const {
  auto it = pairs_.find({layer, target});
  return it == pairs_.end() ? nullptr : &it->second;
}

LoraPair& LoraAdapter::at(std::size_t layer, const std::string& target) {
  auto it = pairs_.find({layer, target});
  if (it == pairs_.end()) throw ConfigError("no adapter for layer " + std::to_string(layer) + " target " + target);
  return it->second;
}

namespace {

std::string pair_prefix(std::size_t layer, const std::string& target) {
  return "layer." + std::to_string(layer) + "." + target;
}

}  // namespace

void LoraAdapter::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
  for (auto& [key, pair] : pairs_) {
    fn(pair_prefix(key.first, key.second) + ".A", pair.a);
    fn(pair_prefix(key.first, key.second) + ".B", pair.b);
  }
}

void LoraAdapter::for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  for (const auto& [key, pair] : pairs_) {
    fn(pair_prefix(key.first, key.second) + ".A", pair.a);
    fn(pair_prefix(key.first, key.second) + ".B", pair.b);
  }
}

Matrix& LoraAdapter::tensor(const std::string& name) {
  Matrix* found = nullptr;
  for_each([&](const std::string& n, Matrix& m) {
    if (n == name) found = &m;
  });
  if (found == nullptr) throw ConfigError("unknown adapter tensor '" + name + "'");
  return *found;
}

std::size_t LoraAdapter::parameter_count() const {
  std::size_t total = 0;
  for_each([&](const std::string&, const Matrix& m) { total += m.size(); });
  return total;
}

void LoraAdapter::save(const std::string& path) const {
  TensorFile tf;
  std::size_t layers = 0;
  for (const auto& [key, pair] : pairs_) layers = std::max(layers, key.first + 1);
  tf.config = config_.to_kv() + "n_layers=" + std::to_string(layers) + "\n";
  for_each([&](const std::string& name, const Matrix& m) { tf.tensors.emplace_back(name, m); });
  tf.save(path);
}

LoraAdapter LoraAdapter::load(const std::string& path) {
  TensorFile tf = TensorFile::load(path);
  auto kv = parse_kv_block(tf.config);
  const std::size_t layers = kv.count("n_layers") ? std::stoul(kv.at("n_layers")) : 0;
  LoraAdapter adapter(LoraConfig::from_kv(kv), layers);
  std::map<std::string, Matrix> by_name(tf.tensors.begin(), tf.tensors.end());
  adapter.for_each([&](const std::string& name, Matrix& m) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(path + ": missing adapter tensor " + name);
    m = std::move(it->second);
  });
  return adapter;
}

LoraAdapter inject(const ModelParams& params, const LoraConfig& config, std::uint64_t seed) {
  config.validate(params.config);
  LoraAdapter adapter(config, params.config.n_layers);
  CounterRng rng(seed);
  const double a_std = 1.0 / static_cast<double>(config.r);
  for (std::size_t l = 0; l < params.config.n_layers; ++l) {
    for (const auto& t : config.targets) {
      const auto [din, dout] = lora_target_shape(params.config, t);
      LoraPair& p = adapter.at(l, t);
      p.a = Matrix(config.r, din);
      for (double& v : p.a.data()) v = rng.normal(0.0, a_std);
      p.b = Matrix(dout, config.r, 0.0);
    }
  }
  return adapter;
}

Matrix effective_weight(const Matrix& w_frozen, const Matrix& a, const Matrix& b, double alpha, std::size_t r) {
  if (r == 0) throw ParameterError("lora rank must be >= 1");
  if (a.rows() != r || b.cols() != r || b.rows() != w_frozen.rows() || a.cols() != w_frozen.cols()) {
    throw ShapeError("effective_weight: W " + w_frozen.shape_string() + ", A " + a.shape_string() + ", B " +
                     b.shape_string() + ", r=" + std::to_string(r));
  }
  Matrix w = w_frozen;
  Matrix delta = matmul(b, a);
  const double s = alpha / static_cast<double>(r);
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] += s * delta.data()[i];
  return w;
}

std::size_t trainable_parameter_count(const LoraConfig& config, const ModelConfig& model) {
  std::size_t total = 0;
  for (const auto& t : config.targets) {
    const auto [din, dout] = lora_target_shape(model, t);
    total += config.r * (din + dout);
  }
  return total * model.n_layers;
}

ModelParams merge(LoraAdapter& adapter, const ModelParams& params) {
  if (adapter.merged()) throw ConfigError("adapter already merged; a second merge would apply the update twice");
  ModelParams out = params;
  const LoraConfig& cfg = adapter.config();
  for (std::size_t l = 0; l < params.config.n_layers; ++l) {
    for (const auto& t : cfg.targets) {
      const LoraPair* p = adapter.find(l, t);
      if (p == nullptr) continue;
      Matrix& stored = out.tensor("layer." + std::to_string(l) + "." + t);  // d_in x d_out
      // Stored orientation is the transpose of W_frozen.
      Matrix merged = effective_weight(stored.transposed(), p->a, p->b, cfg.alpha, cfg.r);
      stored = merged.transposed();
    }
  }
  adapter.mark_merged();
  return out;
}

}  // namespace claimlm
