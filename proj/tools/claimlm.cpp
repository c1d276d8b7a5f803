// Command-line entry point. Every command writes its outputs and the fully
// resolved configuration into <out>/<command>-<config hash>/.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "claimlm/config.hpp"
#include "claimlm/decoding.hpp"
#include "claimlm/error.hpp"
#include "claimlm/evalharness.hpp"
#include "claimlm/metrics.hpp"
#include "claimlm/preprocess.hpp"
#include "claimlm/records.hpp"
#include "claimlm/synthetic.hpp"
#include "claimlm/training.hpp"

namespace fs = std::filesystem;
using namespace claimlm;

namespace {

struct Common {
  std::string config_path;
  std::string out = "runs";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

struct Paths {
  std::map<std::string, std::string> flags;  // path key -> flag value
};

RunConfig resolve(const std::string& command, const Common& common, const Paths& paths,
                  const std::vector<std::pair<std::string, std::string>>& extra) {
  RunConfig cfg = common.config_path.empty() ? RunConfig{} : RunConfig::load(common.config_path);
  for (const auto& [k, v] : paths.flags)
    if (!v.empty()) cfg.set("paths." + k, v);
  for (const auto& [k, v] : extra) cfg.set(k, v);
  for (const auto& o : common.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    cfg.set(o.substr(0, eq), o.substr(eq + 1));
  }
  if (common.seed) cfg.seed = *common.seed;
  cfg.decode.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  (void)command;
  return cfg;
}

std::string require_path(const RunConfig& cfg, const std::string& key) {
  auto it = cfg.paths.find(key);
  if (it == cfg.paths.end() || it->second.empty()) throw ConfigError("missing required path: paths." + key);
  return it->second;
}

std::optional<std::string> optional_path(const RunConfig& cfg, const std::string& key) {
  auto it = cfg.paths.find(key);
  if (it == cfg.paths.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

fs::path make_run_dir(const std::string& command, const Common& common, const RunConfig& cfg) {
  const std::string rendered = cfg.render();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(command + "\n" + rendered)));
  const fs::path dir = fs::path(common.out) / (command + "-" + buf);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  write_file((dir / "config.ini").string(), "# command: " + command + "\n" + rendered);
  return dir;
}

void finish(const fs::path& dir) { std::cout << dir.string() << "\n"; }

std::string eval_prediction(const std::string& output) {
  const auto parsed = eval::parse_corrective_action(output);
  if (parsed.compliant) return parsed.action;
  if (auto ex = eval::extract_action(output, eval::default_action_lexicon(), false)) return ex->phrase;
  return output;
}

// --- commands --------------------------------------------------------------

void cmd_preprocess(const RunConfig& cfg, const fs::path& dir) {
  preprocess::PipelineConfig pc;
  if (auto p = optional_path(cfg, "shorthand")) pc.shorthand = preprocess::RewriteDict::load(*p);
  if (auto p = optional_path(cfg, "misspellings")) pc.misspellings = preprocess::RewriteDict::load(*p);
  if (auto p = optional_path(cfg, "patterns")) pc.admin_patterns = preprocess::PatternSet::load(*p);
  pc.min_tokens = cfg.preprocess.min_tokens;
  const auto records = read_claims_jsonl(require_path(cfg, "data"));
  const auto result = preprocess::run_pipeline(records, pc);
  write_claims_jsonl((dir / "clean.jsonl").string(), result.records);
  write_file((dir / "drops.tsv").string(), preprocess::drop_log_tsv(result.drops));
  std::cerr << "kept " << result.records.size() << " of " << records.size() << " records\n";
}

std::vector<std::string> tokenizer_corpus(const std::vector<ClaimRecord>& records) {
  std::vector<std::string> corpus = synthetic::narrative_corpus(records);
  for (const auto& r : records) {
    corpus.push_back(render_prompt(r.complaint, r.cause));
    corpus.push_back(render_response(r.correction));
  }
  return corpus;
}

void cmd_tokenize(const RunConfig& cfg, const fs::path& dir) {
  const auto records = read_claims_jsonl(require_path(cfg, "data"));
  const Vocab vocab = train_bpe(tokenizer_corpus(records), cfg.model.vocab_size);
  vocab.save((dir / "vocab.txt").string());
  std::cerr << "vocabulary size " << vocab.size() << "\n";
}

void cmd_train(const RunConfig& cfg, const fs::path& dir, const std::string& mode) {
  const Vocab vocab = Vocab::load(require_path(cfg, "vocab"));
  const auto records = read_claims_jsonl(require_path(cfg, "data"));
  ModelParams params;
  if (auto ckpt = optional_path(cfg, "checkpoint")) {
    params = load_checkpoint(*ckpt);
    if (params.config.vocab_size != vocab.size()) throw ConfigError("checkpoint vocabulary does not match vocab file");
  } else {
    if (mode == "lora") throw ConfigError("lora training needs paths.checkpoint");
    ModelConfig mc = cfg.model;
    mc.vocab_size = vocab.size();
    params = ModelParams::init(mc, cfg.seed);
  }
  const std::size_t max_len = std::min(cfg.train.max_seq_len, params.config.max_seq_len);

  std::vector<TrainingExample> data;
  std::size_t rejected = 0;
  if (mode == "pretrain") {
    for (const auto& text : synthetic::narrative_corpus(records)) data.push_back(language_model_example(text, vocab, max_len));
  } else {
    for (const auto& r : records) {
      try {
        data.push_back(assemble(r, vocab, max_len, false));
      } catch (const ExampleRejected& e) {
        ++rejected;
        std::cerr << "skipped: " << e.what() << "\n";
      }
    }
  }
  if (data.empty()) throw TrainingError("no usable training examples");

  TrainConfig tc = cfg.train;
  tc.max_seq_len = max_len;
  TrainResult result;
  if (mode == "lora") {
    LoraAdapter adapter = inject(params, cfg.lora, cfg.seed);
    result = train(data, params, &adapter, tc);
    adapter.save((dir / "adapter.bin").string());
  } else {
    result = train(data, params, nullptr, tc);
    save_checkpoint(params, (dir / "model.ckpt").string());
  }
  write_file((dir / "loss.csv").string(), loss_trace_csv(result.loss_trace));
  std::cerr << "steps " << result.steps << ", final loss " << result.loss_trace.back() << ", rejected " << rejected
            << "\n";
}

void cmd_generate(const RunConfig& cfg, const fs::path& dir) {
  const Vocab vocab = Vocab::load(require_path(cfg, "vocab"));
  const ModelParams params = load_checkpoint(require_path(cfg, "checkpoint"));
  std::optional<LoraAdapter> adapter;
  if (auto p = optional_path(cfg, "adapter")) adapter = LoraAdapter::load(*p);
  const auto records = read_claims_jsonl(require_path(cfg, "data"));
  const Generator gen(params, vocab, adapter ? &*adapter : nullptr);

  std::string report;
  std::vector<eval::EvalRecord> evals;
  for (const auto& r : records) {
    const std::string prompt = render_prompt(r.complaint, r.cause);
    const Generation g = gen.generate(prompt, cfg.decode);
    report += generation_report_line(prompt, g, cfg.decode) + "\n";
    eval::EvalRecord e;
    e.id = r.id;
    e.prompt = prompt;
    e.output = std::string(kSchemaPrefix) + g.text;
    e.reference = r.correction;
    e.score_source = "human";
    e.hq = r.hq.value_or(false);
    e.truncated = g.hit_budget;
    evals.push_back(std::move(e));
  }
  write_file((dir / "generations.jsonl").string(), report);
  write_file((dir / "eval.jsonl").string(), eval::to_jsonl(evals));
}

void cmd_evaluate(const RunConfig& cfg, const fs::path& dir) {
  auto records = eval::read_eval_jsonl(require_path(cfg, "eval"));
  std::optional<metrics::EmbeddingProvider> embeddings;
  std::optional<metrics::FilePairScorer> learned;
  std::unique_ptr<metrics::JudgeBackend> judge;
  if (auto p = optional_path(cfg, "embeddings")) embeddings = metrics::EmbeddingProvider::load(*p);
  if (auto p = optional_path(cfg, "bleurt")) learned = metrics::FilePairScorer::load(*p);
  if (cfg.eval.judge == "mock") judge = std::make_unique<metrics::RubricMockBackend>();
  if (cfg.eval.judge == "http")
    judge = std::make_unique<metrics::HttpJudgeBackend>(cfg.eval.judge_host, cfg.eval.judge_port, cfg.eval.judge_path);

  metrics::SuiteOptions opts;
  opts.embeddings = embeddings ? &*embeddings : nullptr;
  opts.learned = learned ? &*learned : nullptr;
  opts.judge = judge.get();
  opts.judge_options.max_retries = cfg.eval.judge_retries;
  opts.judge_options.max_in_flight = cfg.eval.judge_in_flight;
  opts.judge_options.log = [](const std::string& msg) { std::cerr << msg << "\n"; };

  std::vector<metrics::PredictionPair> pairs;
  for (const auto& r : records) pairs.push_back({r.id, eval_prediction(r.output), r.reference});
  const auto rows = metrics::score_pairs(pairs, opts);
  write_file((dir / "metrics.csv").string(), metrics::metric_report_csv(rows, metrics::metric_columns(opts)));

  if (judge) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      auto it = rows[i].scores.find("judge");
      if (it != rows[i].scores.end() && it->second && !records[i].score) {
        records[i].score = *it->second;
        records[i].score_source = "judge";
      }
    }
    write_file((dir / "scored.jsonl").string(), eval::to_jsonl(records));
  }
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cell += '"', ++i;
        else if (c == '"') quoted = false;
        else cell += c;
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        cells.push_back(std::move(cell));
        cell.clear();
      } else {
        cell += c;
      }
    }
    cells.push_back(std::move(cell));
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw FormatError(path + ": empty CSV");
  return rows;
}

double parse_cell(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": not a number: '" + s + "'");
  }
}

void cmd_correlate(const RunConfig& cfg, const fs::path& dir) {
  const auto table = read_csv(require_path(cfg, "data"));
  std::map<std::string, double> human;
  for (const auto& r : eval::read_eval_jsonl(require_path(cfg, "eval")))
    if (r.score) human[r.id] = *r.score;
  const auto& header = table.front();
  std::ostringstream out;
  out << "metric,n,spearman_rho,kendall_tau,chatterjee_xi\n";
  out.precision(6);
  auto cell = [](std::optional<double> v) {
    std::ostringstream s;
    s.precision(6);
    if (v) s << *v;
    return s.str();
  };
  for (std::size_t c = 1; c < header.size(); ++c) {
    std::vector<double> a, b;
    for (std::size_t r = 1; r < table.size(); ++r) {
      const auto& row = table[r];
      if (c >= row.size() || row[c].empty()) continue;
      auto h = human.find(row[0]);
      if (h == human.end()) continue;
      a.push_back(parse_cell(row[c], "row " + std::to_string(r)));
      b.push_back(h->second);
    }
    out << header[c] << ',' << a.size() << ',';
    if (a.size() < 3) {
      out << ",,\n";
      continue;
    }
    std::size_t ties = 0;
    const double xi = eval::chatterjee_xi(a, b, &ties);
    if (ties) std::cerr << header[c] << ": " << ties << " tied metric values kept in input order\n";
    out << cell(eval::spearman_rho(a, b)) << ',' << cell(eval::kendall_tau(a, b)) << ',' << cell(xi) << '\n';
  }
  write_file((dir / "correlations.csv").string(), out.str());
  std::cout << out.str();
}

void cmd_govern(const RunConfig& cfg, const fs::path& dir, const std::string& model_name) {
  const auto records = eval::read_eval_jsonl(require_path(cfg, "eval"));
  eval::GovernanceOptions opts;
  opts.accuracy_threshold = cfg.eval.accuracy_threshold;
  const auto report = eval::governance(records, opts);
  const std::string table = eval::governance_table(report, model_name);
  write_file((dir / "governance.txt").string(), table);
  write_file((dir / "governance.csv").string(), eval::governance_csv(report, model_name));
  write_file((dir / "flags.csv").string(), eval::governance_flags_csv(report));
  std::cout << table;
}

void cmd_threshold(const RunConfig& cfg, const fs::path& dir, bool use_override) {
  const auto table = read_csv(require_path(cfg, "data"));
  const auto& header = table.front();
  const auto col = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw FormatError("threshold input needs a '" + name + "' column");
  };
  const std::size_t sc = col("score"), lc = col("label");
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t r = 1; r < table.size(); ++r) {
    const std::string where = "row " + std::to_string(r);
    if (std::max(sc, lc) >= table[r].size()) throw FormatError(where + ": missing cells");
    scores.push_back(parse_cell(table[r][sc], where));
    labels.push_back(parse_cell(table[r][lc], where) != 0.0);
  }
  std::ostringstream out;
  out.precision(6);
  const auto t = eval::youden_threshold(scores, labels);
  out << "youden_kappa=" << t.kappa << "\nyouden_j=" << t.j << "\ncandidates=" << t.candidates.size() << "\n";
  if (t.degenerate) {
    out << "warning=best J is not positive\n";
    std::cerr << "warning: best Youden J is " << t.j << "\n";
  }
  if (use_override)
    out << "override_kappa=" << cfg.eval.kappa << "\noverride_j=" << eval::youden_j(scores, labels, cfg.eval.kappa)
        << "\n";
  write_file((dir / "threshold.txt").string(), out.str());
  std::cout << out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"claimlm: warranty claim corrective-action modeling and evaluation"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--out", common.out, "Root directory for run outputs");
  app.add_option("--seed", common.seed, "Seed for every random stream");
  app.add_option("--set", common.overrides, "Override a config key, e.g. --set train.lr=1e-3");
  app.fallthrough();

  Paths paths;
  auto path_opt = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option(flag, paths.flags[key], help);
  };

  auto* pre = app.add_subcommand("preprocess", "Clean claim narratives");
  path_opt(pre, "--input", "data", "Claims JSONL");
  path_opt(pre, "--shorthand", "shorthand", "Shorthand dictionary");
  path_opt(pre, "--misspellings", "misspellings", "Misspelling dictionary");
  path_opt(pre, "--patterns", "patterns", "Administrative patterns");

  auto* tok = app.add_subcommand("tokenize", "Train a byte-level BPE vocabulary");
  path_opt(tok, "--input", "data", "Claims JSONL");
  std::optional<std::size_t> vocab_size;
  tok->add_option("--vocab-size", vocab_size, "Target vocabulary size");

  auto* trn = app.add_subcommand("train", "Pretrain, fully fine-tune, or LoRA fine-tune");
  std::string mode = "lora";
  trn->add_option("--mode", mode, "pretrain | full | lora")->check(CLI::IsMember({"pretrain", "full", "lora"}));
  path_opt(trn, "--input", "data", "Claims JSONL");
  path_opt(trn, "--vocab", "vocab", "Vocabulary file");
  path_opt(trn, "--checkpoint", "checkpoint", "Backbone checkpoint");

  auto* gen = app.add_subcommand("generate", "Generate corrective actions");
  path_opt(gen, "--input", "data", "Claims JSONL");
  path_opt(gen, "--vocab", "vocab", "Vocabulary file");
  path_opt(gen, "--checkpoint", "checkpoint", "Backbone checkpoint");
  path_opt(gen, "--adapter", "adapter", "LoRA adapter");
  std::string strategy;
  gen->add_option("--strategy", strategy, "greedy | sample | top_k | top_p");
  std::optional<std::size_t> max_new;
  gen->add_option("--max-new-tokens", max_new, "Generation budget");

  auto* evl = app.add_subcommand("evaluate", "Score predictions against references");
  path_opt(evl, "--input", "eval", "Evaluation JSONL");
  path_opt(evl, "--embeddings", "embeddings", "Embedding file");
  path_opt(evl, "--bleurt", "bleurt", "Pair score file");
  std::string judge;
  evl->add_option("--judge", judge, "none | mock | http");

  auto* cor = app.add_subcommand("correlate", "Rank correlation of metrics with human scores");
  path_opt(cor, "--metrics", "data", "Metric report CSV");
  path_opt(cor, "--human", "eval", "Evaluation JSONL with human scores");

  auto* gov = app.add_subcommand("govern", "Format / validity / accuracy report");
  path_opt(gov, "--input", "eval", "Evaluation JSONL");
  std::string model_name = "model";
  gov->add_option("--model-name", model_name, "Row label");

  auto* thr = app.add_subcommand("threshold", "Youden threshold calibration");
  path_opt(thr, "--input", "data", "CSV with score and label columns");
  std::optional<double> kappa;
  thr->add_option("--kappa", kappa, "Also report J at this operating threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    std::vector<std::pair<std::string, std::string>> extra;
    if (vocab_size) extra.emplace_back("model.vocab_size", std::to_string(*vocab_size));
    if (!strategy.empty()) extra.emplace_back("decode.strategy", strategy);
    if (max_new) extra.emplace_back("decode.max_new_tokens", std::to_string(*max_new));
    if (!judge.empty()) extra.emplace_back("eval.judge", judge);
    if (kappa) {
      std::ostringstream k;
      k.precision(17);
      k << *kappa;
      extra.emplace_back("eval.kappa", k.str());
    }
    const RunConfig cfg = resolve(command, common, paths, extra);
    const std::string run_name = command == "train" ? command + "-" + mode : command;
    const fs::path dir = make_run_dir(run_name, common, cfg);
    if (command == "preprocess") cmd_preprocess(cfg, dir);
    else if (command == "tokenize") cmd_tokenize(cfg, dir);
    else if (command == "train") cmd_train(cfg, dir, mode);
    else if (command == "generate") cmd_generate(cfg, dir);
    else if (command == "evaluate") cmd_evaluate(cfg, dir);
    else if (command == "correlate") cmd_correlate(cfg, dir);
    else if (command == "govern") cmd_govern(cfg, dir, model_name);
    else if (command == "threshold") cmd_threshold(cfg, dir, kappa.has_value());
    finish(dir);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
