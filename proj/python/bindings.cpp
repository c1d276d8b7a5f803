#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "claimlm/decoding.hpp"
#include "claimlm/error.hpp"
#include "claimlm/evalharness.hpp"
#include "claimlm/metrics.hpp"
#include "claimlm/model.hpp"
#include "claimlm/preprocess.hpp"
#include "claimlm/records.hpp"
#include "claimlm/tokenizer.hpp"
#include "claimlm/training.hpp"

namespace py = pybind11;
using namespace claimlm;

namespace {

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

py::dict report_dict(const eval::GovernanceReport& r) {
  py::dict d;
  d["n"] = r.n;
  d["n_format"] = r.n_format;
  d["n_valid"] = r.n_valid;
  d["n_valid_accurate"] = r.n_valid_accurate;
  d["n_hq"] = r.n_hq;
  d["n_hq_accurate"] = r.n_hq_accurate;
  d["format"] = r.format_rate();
  d["validity"] = r.validity_rate();
  d["acc_valid"] = r.acc_valid();
  d["acc_hq"] = r.acc_hq();
  return d;
}

}  // namespace

PYBIND11_MODULE(_claimlm, m) {
  m.doc() = "Corrective-action language modeling and evaluation core";
  static py::exception<Error> base(m, "ClaimlmError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(base.ptr(), e.what());
    }
  });

  // Tokenizer
  py::class_<Vocab>(m, "Vocab")
      .def(py::init<>())
      .def("__len__", &Vocab::size)
      .def("serialize", &Vocab::serialize)
      .def_static("deserialize", [](const std::string& s) { return Vocab::deserialize(s); })
      .def("piece", [](const Vocab& v, TokenId id) { return py::bytes(v.piece(id)); });
  m.attr("PAD") = Vocab::kPad;
  m.attr("BOS") = Vocab::kBos;
  m.attr("EOS") = Vocab::kEos;
  m.def("train_bpe", &train_bpe, py::arg("corpus"), py::arg("vocab_size"));
  m.def("encode", [](const Vocab& v, const std::string& s) { return encode(v, s); });
  m.def("decode", [](const Vocab& v, const TokenSequence& t) { return py::bytes(decode(v, t)); });

  // Model
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("d", &ModelConfig::d)
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
      .def("validate", &ModelConfig::validate);
  py::class_<ModelParams>(m, "ModelParams")
      .def_static("init", &ModelParams::init, py::arg("config"), py::arg("seed"))
      .def_readonly("config", &ModelParams::config)
      .def("forward", [](const ModelParams& p, const TokenSequence& t) { return to_numpy(forward(p, t)); })
      .def("save", [](const ModelParams& p, const std::string& path) { save_checkpoint(p, path); });
  m.def("load_checkpoint", &load_checkpoint);
  m.def("rope_rotate", [](const std::vector<double>& v, std::size_t pos, double base) {
    return to_numpy(rope_rotate(Matrix::row_vector(v), pos, base));
  }, py::arg("vector"), py::arg("position"), py::arg("base") = 10000.0);

  m.def("generate", [](const ModelParams& p, const Vocab& v, const std::string& prompt, const std::string& strategy,
                       std::size_t max_new_tokens, std::uint64_t seed) {
    DecodeConfig cfg;
    cfg.strategy = parse_strategy(strategy);
    cfg.max_new_tokens = max_new_tokens;
    cfg.seed = seed;
    const Generation g = Generator(p, v).generate(prompt, cfg);
    return py::make_tuple(py::bytes(g.text), g.tokens, g.hit_budget);
  }, py::arg("params"), py::arg("vocab"), py::arg("prompt"), py::arg("strategy") = "greedy",
        py::arg("max_new_tokens") = 32, py::arg("seed") = 0);
  m.def("render_prompt", &render_prompt);
  m.def("kl_mle_gap", [](const std::vector<std::vector<double>>& p, const std::vector<std::vector<double>>& q) {
    auto mat = [](const std::vector<std::vector<double>>& rows) {
      Matrix out(rows.size(), rows.empty() ? 0 : rows[0].size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != out.cols()) throw ShapeError("ragged table");
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = rows[r][c];
      }
      return out;
    };
    const auto g = kl_mle_gap(mat(p), mat(q));
    return py::dict(py::arg("nll") = g.nll, py::arg("entropy") = g.entropy, py::arg("kl") = g.kl);
  });

  // Metrics
  m.def("edit_distance_similarity", &metrics::edit_distance_similarity);
  m.def("ngram_precision", &metrics::ngram_precision);
  m.def("sentence_bleu", &metrics::sentence_bleu);
  m.def("tfidf_cosine", [](const std::vector<std::string>& corpus, const std::string& a, const std::string& b) {
    return metrics::TfidfSpace::fit(corpus).cosine(a, b);
  });

  // Evaluation harness
  m.def("pearson", &eval::pearson);
  m.def("spearman_rho", &eval::spearman_rho);
  m.def("kendall_tau", &eval::kendall_tau);
  m.def("chatterjee_xi", [](const std::vector<double>& a, const std::vector<double>& b) {
    return eval::chatterjee_xi(a, b);
  });
  m.def("youden_threshold", [](const std::vector<double>& s, const std::vector<int>& y) {
    const auto t = eval::youden_threshold(s, y);
    return py::dict(py::arg("kappa") = t.kappa, py::arg("j") = t.j, py::arg("degenerate") = t.degenerate);
  });
  m.def("parse_corrective_action", [](const std::string& text) -> std::optional<std::string> {
    const auto p = eval::parse_corrective_action(text);
    if (!p.compliant) return std::nullopt;
    return p.action;
  });
  m.def("governance", [](const std::string& jsonl, double threshold) {
    eval::GovernanceOptions opt;
    opt.accuracy_threshold = threshold;
    return report_dict(eval::governance(eval::parse_eval_jsonl(jsonl), opt));
  }, py::arg("jsonl"), py::arg("accuracy_threshold") = 0.8);

  // Preprocessing
  m.def("preprocess", [](const std::string& jsonl, const std::string& shorthand, const std::string& misspellings,
                         const std::string& patterns, std::size_t min_tokens) {
    preprocess::PipelineConfig cfg;
    cfg.shorthand = preprocess::RewriteDict::parse(shorthand);
    cfg.misspellings = preprocess::RewriteDict::parse(misspellings);
    cfg.admin_patterns = preprocess::PatternSet::parse(patterns);
    cfg.min_tokens = min_tokens;
    const auto res = preprocess::run_pipeline(parse_claims_jsonl(jsonl), cfg);
    return py::make_tuple(to_jsonl(res.records), preprocess::drop_log_tsv(res.drops));
  }, py::arg("jsonl"), py::arg("shorthand") = "", py::arg("misspellings") = "", py::arg("patterns") = "",
        py::arg("min_tokens") = 3);
}
