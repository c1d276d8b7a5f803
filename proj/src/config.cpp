#include "claimlm/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>
#include <vector>

#include "claimlm/error.hpp"
#include "claimlm/records.hpp"

namespace claimlm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::uint64_t parse_uint(const std::string& v) {
  std::uint64_t out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty()) throw std::invalid_argument("expected an unsigned integer");
  return out;
}

double parse_double(const std::string& v) {
  double out = 0.0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty()) throw std::invalid_argument("expected a number");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false");
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Field uint_field(std::string section, std::string key, T& ref) {
  return {std::move(section), std::move(key), [&ref](const std::string& v) { ref = static_cast<T>(parse_uint(v)); },
          [&ref] { return std::to_string(ref); }};
}

Field double_field(std::string section, std::string key, double& ref) {
  return {std::move(section), std::move(key), [&ref](const std::string& v) { ref = parse_double(v); },
          [&ref] { return fmt_double(ref); }};
}

Field string_field(std::string section, std::string key, std::string& ref) {
  return {std::move(section), std::move(key), [&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  f.push_back(uint_field("run", "seed", c.seed));

  f.push_back(uint_field("model", "d", c.model.d));
  f.push_back(uint_field("model", "n_layers", c.model.n_layers));
  f.push_back(uint_field("model", "n_heads", c.model.n_heads));
  f.push_back(uint_field("model", "d_ff", c.model.d_ff));
  f.push_back(uint_field("model", "vocab_size", c.model.vocab_size));
  f.push_back(uint_field("model", "max_seq_len", c.model.max_seq_len));
  f.push_back(double_field("model", "rope_base", c.model.rope_base));
  f.push_back(double_field("model", "eps", c.model.eps));
  f.push_back(double_field("model", "init_std", c.model.init_std));

  f.push_back({"lora", "r",
               [&c](const std::string& v) {
                 const auto r = parse_uint(v);
                 if (r < 1) throw ConfigError("rank r must be >= 1");
                 c.lora.r = r;
               },
               [&c] { return std::to_string(c.lora.r); }});
  f.push_back(double_field("lora", "alpha", c.lora.alpha));
  f.push_back(double_field("lora", "dropout", c.lora.dropout));
  f.push_back({"lora", "targets",
               [&c](const std::string& v) {
                 std::vector<std::string> t;
                 std::stringstream ss(v);
                 std::string item;
                 while (std::getline(ss, item, ',')) {
                   item = trim(item);
                   if (item.empty()) throw std::invalid_argument("empty target name");
                   t.push_back(item);
                 }
                 if (t.empty()) throw std::invalid_argument("expected a comma-separated target list");
                 c.lora.targets = std::move(t);
               },
               [&c] {
                 std::string s;
                 for (const auto& t : c.lora.targets) s += (s.empty() ? "" : ",") + t;
                 return s;
               }});

  f.push_back(double_field("train", "lr", c.train.optimizer.lr));
  f.push_back(double_field("train", "beta1", c.train.optimizer.beta1));
  f.push_back(double_field("train", "beta2", c.train.optimizer.beta2));
  f.push_back(double_field("train", "adam_eps", c.train.optimizer.eps));
  f.push_back(double_field("train", "weight_decay", c.train.optimizer.weight_decay));
  f.push_back(uint_field("train", "batch_size", c.train.batch_size));
  f.push_back(uint_field("train", "grad_accumulation", c.train.grad_accumulation));
  f.push_back(uint_field("train", "epochs", c.train.epochs));
  f.push_back(uint_field("train", "max_len", c.train.max_seq_len));
  f.push_back({"train", "reduction",
               [&c](const std::string& v) {
                 if (v == "mean") c.train.reduction = LossReduction::kMean;
                 else if (v == "sum") c.train.reduction = LossReduction::kSum;
                 else throw std::invalid_argument("expected mean or sum");
               },
               [&c] { return std::string(c.train.reduction == LossReduction::kMean ? "mean" : "sum"); }});
  f.push_back({"train", "shuffle", [&c](const std::string& v) { c.train.shuffle = parse_bool(v); },
               [&c] { return std::string(c.train.shuffle ? "true" : "false"); }});

  f.push_back({"decode", "strategy", [&c](const std::string& v) { c.decode.strategy = parse_strategy(v); },
               [&c] { return to_string(c.decode.strategy); }});
  f.push_back(double_field("decode", "temperature", c.decode.temperature));
  f.push_back(uint_field("decode", "k", c.decode.k));
  f.push_back(double_field("decode", "p", c.decode.p));
  f.push_back(uint_field("decode", "max_new_tokens", c.decode.max_new_tokens));

  f.push_back(double_field("eval", "accuracy_threshold", c.eval.accuracy_threshold));
  f.push_back(double_field("eval", "kappa", c.eval.kappa));
  f.push_back({"eval", "judge",
               [&c](const std::string& v) {
                 if (v != "none" && v != "mock" && v != "http") throw std::invalid_argument("expected none, mock or http");
                 c.eval.judge = v;
               },
               [&c] { return c.eval.judge; }});
  f.push_back(string_field("eval", "judge_host", c.eval.judge_host));
  f.push_back(uint_field("eval", "judge_port", c.eval.judge_port));
  f.push_back(string_field("eval", "judge_path", c.eval.judge_path));
  f.push_back(uint_field("eval", "judge_retries", c.eval.judge_retries));
  f.push_back(uint_field("eval", "judge_in_flight", c.eval.judge_in_flight));

  f.push_back(uint_field("preprocess", "min_tokens", c.preprocess.min_tokens));

  for (const auto& key : known_path_keys()) {
    f.push_back({"paths", key, [&c, key](const std::string& v) { c.paths[key] = v; },
                 [&c, key] {
                   auto it = c.paths.find(key);
                   return it == c.paths.end() ? std::string{} : it->second;
                 }});
  }
  return f;
}

void assign(RunConfig& c, const std::string& section, const std::string& key, const std::string& value,
            const std::string& where) {
  for (auto& f : fields(c)) {
    if (f.section != section || f.key != key) continue;
    try {
      f.set(value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    } catch (const std::exception& e) {
      throw ConfigError(where + ": bad value for " + section + "." + key + " '" + value + "' (" + e.what() + ")");
    }
    return;
  }
  throw ConfigError(where + ": unknown key " + section + "." + key);
}

}  // namespace

const std::vector<std::string>& known_path_keys() {
  static const std::vector<std::string> keys = {"adapter", "bleurt", "checkpoint", "data",     "embeddings",
                                                "eval",    "misspellings", "patterns", "shorthand", "vocab"};
  return keys;
}

RunConfig::RunConfig() = default;

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  static const std::vector<std::string> sections = {"run", "model", "lora", "train", "decode", "eval", "preprocess",
                                                    "paths"};
  std::string section = "run";
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string where = "config line " + std::to_string(lineno);
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (std::find(sections.begin(), sections.end(), section) == sections.end())
        throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    assign(c, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  try {
    return parse(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  const std::string section = dot == std::string::npos ? "run" : dotted_key.substr(0, dot);
  const std::string key = dot == std::string::npos ? dotted_key : dotted_key.substr(dot + 1);
  assign(*this, section, key, value, "override " + dotted_key);
}

std::string RunConfig::render() const {
  auto& self = const_cast<RunConfig&>(*this);  // getters only read
  std::string out;
  std::string section;
  for (auto& f : fields(self)) {
    if (f.section != section) {
      section = f.section;
      if (section != "run") out += "\n[" + section + "]\n";
    }
    out += f.key + "=" + f.get() + "\n";
  }
  return out;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(render())));
  return buf;
}

void RunConfig::validate() const {
  model.validate();
  if (lora.r < 1) throw ConfigError("lora.r must be >= 1");
  if (!(lora.dropout >= 0.0 && lora.dropout < 1.0)) throw ConfigError("lora.dropout must lie in [0, 1)");
  try {
    train.validate();
    decode.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (preprocess.min_tokens < 1) throw ConfigError("preprocess.min_tokens must be >= 1");
  if (eval.judge_in_flight < 1) throw ConfigError("eval.judge_in_flight must be >= 1");
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace claimlm
