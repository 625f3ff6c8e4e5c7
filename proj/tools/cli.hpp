#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "caml/caml.hpp"

// Command-line front end: preprocess, train, evaluate, explain, gradcheck
// (plus synth, which writes a planted-trigger demo corpus).
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

namespace caml::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

inline json read_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

// A config file is either a flat training config or an object with
// "preprocess" and/or "train" sections.
inline json config_section(const std::string& path, const std::string& section) {
  if (path.empty()) return json::object();
  const json j = read_json_file(path);
  if (!j.is_object()) throw UsageError("config " + path + ": expected a JSON object");
  if (j.contains("preprocess") || j.contains("train")) return j.value(section, json::object());
  return section == "train" ? j : json::object();
}

inline std::string file_hash(const std::string& path) {
  if (path.empty() || !fs::exists(path)) return "";
  if (fs::is_directory(path)) {
    std::uint64_t h = fnv1a64("dir");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() != ".tmp") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      if (f.filename().string().find("manifest") != std::string::npos) continue;
      h = fnv1a64(f.filename().string(), h);
      h = fnv1a64(read_file(f), h);
    }
    return detail::hex64(h);
  }
  return detail::hex64(fnv1a64(read_file(path)));
}

class Manifest {
 public:
  Manifest(std::string command, std::uint64_t seed)
      : command_(std::move(command)), seed_(seed), start_(std::chrono::steady_clock::now()) {}

  void input(const std::string& name, const std::string& path) {
    inputs_[name] = {{"path", path}, {"hash", file_hash(path)}};
  }
  void output(const std::string& path) { outputs_.push_back(path); }
  void config(json c) { config_ = std::move(c); }

  void write(const fs::path& dir) const {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream ts;
    ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    json j = {{"command", command_},   {"config", config_},  {"seed", seed_},
              {"inputs", inputs_},     {"outputs", outputs_}, {"wall_time_seconds", wall},
              {"finished_at", ts.str()}};
    write_file_atomic(dir / (command_ + "_manifest.json"), j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::uint64_t seed_;
  std::chrono::steady_clock::time_point start_;
  json inputs_ = json::object();
  json outputs_ = json::array();
  json config_ = json::object();
};

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("expected a comma-separated list of positive integers, got '" + s + "'");
    }
  }
  return out;
}

inline std::array<double, 3> parse_fractions(const std::string& s) {
  std::array<double, 3> f{};
  std::stringstream ss(s);
  std::size_t i = 0;
  for (std::string item; std::getline(ss, item, ',');) {
    if (i >= 3) throw UsageError("--split-fractions needs exactly three values");
    try {
      f[i++] = std::stod(item);
    } catch (const std::exception&) {
      throw UsageError("bad fraction '" + item + "'");
    }
  }
  if (i != 3) throw UsageError("--split-fractions needs exactly three values");
  return f;
}

inline fs::path require_out_dir(const GlobalOptions& g) {
  if (g.out_dir.empty()) throw UsageError("--out-dir is required");
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir);
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessArgs {
  std::string corpus;
  std::string descriptions;
  std::string embeddings;
  std::optional<std::int64_t> min_doc_freq;
  std::optional<std::size_t> max_len;
  std::optional<std::size_t> embed_dim;
  std::string fractions;
};

inline int cmd_preprocess(const GlobalOptions& g, const PreprocessArgs& a, std::ostream& out) {
  PreprocessConfig cfg;
  apply_json(cfg, config_section(g.config_path, "preprocess"));
  if (g.seed) cfg.seed = *g.seed;
  if (a.min_doc_freq) cfg.min_doc_freq = *a.min_doc_freq;
  if (a.max_len) cfg.max_len = *a.max_len;
  if (a.embed_dim) cfg.embed_dim = *a.embed_dim;
  if (!a.fractions.empty()) cfg.fractions = parse_fractions(a.fractions);
  const fs::path dir = require_out_dir(g);

  Manifest manifest("preprocess", cfg.seed);
  manifest.config(to_json(cfg));
  manifest.input("corpus", a.corpus);
  const auto docs = read_corpus_jsonl(a.corpus);
  if (docs.empty()) throw DataError("corpus " + a.corpus + " contains no documents");
  std::vector<DescriptionEntry> descriptions;
  if (!a.descriptions.empty()) {
    manifest.input("descriptions", a.descriptions);
    descriptions = read_descriptions_csv(a.descriptions);
  }
  std::optional<std::ifstream> emb;
  if (!a.embeddings.empty()) {
    manifest.input("embeddings", a.embeddings);
    emb.emplace(a.embeddings);
    if (!*emb) throw DataError("cannot open embeddings " + a.embeddings);
  }
  const Dataset data = preprocess(docs, descriptions, cfg, emb ? &*emb : nullptr);
  write_dataset(dir, data);
  for (const char* f : {"vocab.tsv", "labels.json", "train.jsonl", "validation.jsonl", "test.jsonl", "stats.json"})
    manifest.output((dir / f).string());
  if (data.embeddings) manifest.output((dir / "embeddings.txt").string());

  const CorpusStats stats = corpus_stats(data);
  out << "documents: train=" << stats.train.documents << " validation=" << stats.validation.documents
      << " test=" << stats.test.documents << "\n"
      << "vocabulary size: " << stats.vocab_size << "\n"
      << "mean tokens per training document: " << stats.train.mean_tokens << "\n"
      << "mean labels per training document: " << stats.train.mean_labels << "\n"
      << "total labels: " << stats.total_labels << " (diagnosis " << stats.diagnosis_labels << ", procedure "
      << stats.procedure_labels << ")\n";
  if (stats.dropped_labels > 0) out << "warning: " << stats.dropped_labels << " labels outside the label space\n";
  manifest.write(dir);
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data;
  std::string model;
  std::optional<double> lambda, eta, dropout, rho;
  std::optional<std::size_t> filters, kernel, batch_size, patience, max_epochs, embed_dim;
  std::optional<std::size_t> lr_epochs;
};

inline TrainConfig resolve_train_config(const GlobalOptions& g, const TrainArgs& a) {
  const json file = config_section(g.config_path, "train");
  ModelChoice model = ModelChoice::Caml;
  if (file.contains("model")) model = parse_model_choice(file["model"].get<std::string>());
  if (!a.model.empty()) model = parse_model_choice(a.model);
  TrainConfig cfg = TrainConfig::defaults_for(model);
  apply_json(cfg, file);
  cfg.model = model;
  if (g.seed) cfg.seed = *g.seed;
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.eta) cfg.eta = *a.eta;
  if (a.dropout) cfg.dropout = *a.dropout;
  if (a.rho) cfg.rho = *a.rho;
  if (a.filters) cfg.filters = *a.filters;
  if (a.kernel) cfg.kernel = *a.kernel;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.patience) cfg.patience = *a.patience;
  if (a.max_epochs) cfg.max_epochs = *a.max_epochs;
  if (a.embed_dim) cfg.embed_dim = *a.embed_dim;
  if (a.lr_epochs) cfg.lr.epochs = *a.lr_epochs;
  cfg.validate();
  return cfg;
}

inline int cmd_train(const GlobalOptions& g, const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = resolve_train_config(g, a);
  if (!fs::is_directory(a.data)) throw DataError("dataset directory not found: " + a.data);
  const Dataset data = read_dataset(a.data);
  if (data.embeddings && !a.embed_dim && data.embeddings->dim() != cfg.embed_dim) {
    cfg.embed_dim = data.embeddings->dim();  // pretrained vectors fix d_e
  }
  const fs::path dir = require_out_dir(g);
  Manifest manifest("train", cfg.seed);
  manifest.input("data", a.data);

  const std::size_t p_n = effective_precision_n(cfg.precision_n, data.space.size());
  auto report = [&](const EpochLog& log) {
    out << "epoch " << log.epoch << " loss " << std::setprecision(6) << log.mean_train_loss << " validation P@"
        << p_n << " " << std::setprecision(4) << log.validation_score << std::endl;
  };
  const TrainResult result = train(data, cfg, report);
  if (cfg.model == ModelChoice::Lr) report(result.history.back());

  const fs::path ckpt_path = dir / "checkpoint.bin";
  save_checkpoint(ckpt_path, result.best);
  json history = json::array();
  for (const auto& h : result.history) {
    history.push_back({{"epoch", h.epoch},
                       {"mean_train_loss", h.mean_train_loss},
                       {"validation_score", h.validation_score},
                       {"batch_losses", h.batch_losses}});
  }
  write_file_atomic(dir / "train_log.json",
                    json{{"best_epoch", result.best.epoch},
                         {"best_validation_score", result.best.best_validation_score},
                         {"precision_n", p_n},
                         {"history", history}}
                            .dump(2) +
                        "\n");
  out << "best epoch " << result.best.epoch << " validation P@" << p_n << " " << result.best.best_validation_score
      << "\n";
  manifest.config(to_json(cfg));
  manifest.output(ckpt_path.string());
  manifest.output((dir / "train_log.json").string());
  manifest.write(dir);
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string ns;
  double threshold = 0.5;
};

inline int cmd_evaluate(const GlobalOptions& g, const EvaluateArgs& a, std::ostream& out) {
  const Dataset data = read_dataset(a.data);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint, data.vocab, data.space);
  const Split split = parse_split(a.split);
  std::vector<std::size_t> ns = default_precision_ns();
  if (!a.ns.empty()) {
    ns = parse_size_list(a.ns);
    for (auto n : ns) {
      if (n > data.space.size()) {
        throw UsageError("precision@" + std::to_string(n) + " requested but the label space has only " +
                         std::to_string(data.space.size()) + " labels");
      }
    }
  }
  if (!(a.threshold > 0.0 && a.threshold < 1.0)) throw UsageError("--threshold must be in (0, 1)");
  const auto& docs = data.split(split);
  if (docs.empty()) throw DataError("split " + a.split + " is empty");
  PredictionMatrix pm = score_documents(ckpt, docs, data.space.size());
  pm.threshold = a.threshold;
  const EvalReport report = evaluate(pm, &data.space, ns);
  out << "split " << to_string(split) << "\n" << format_table(report);
  if (!g.out_dir.empty()) {
    const fs::path dir = require_out_dir(g);
    Manifest manifest("evaluate", ckpt.config.seed);
    manifest.input("checkpoint", a.checkpoint);
    manifest.input("data", a.data);
    manifest.config({{"split", std::string(to_string(split))}, {"threshold", a.threshold}, {"precision_n", ns}});
    const fs::path path = dir / ("report_" + std::string(to_string(split)) + ".json");
    write_file_atomic(path, to_json(report).dump(2) + "\n");
    manifest.output(path.string());
    manifest.write(dir);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// explain

struct ExplainArgs {
  std::string checkpoint;
  std::string lr_checkpoint;
  std::string data;
  std::string split = "test";
  std::size_t sample = 100;
  std::size_t k = kDefaultSnippetK;
  std::string methods;
};

inline int cmd_explain(const GlobalOptions& g, const ExplainArgs& a, std::ostream& out) {
  const Dataset data = read_dataset(a.data);
  const Checkpoint neural = load_checkpoint(a.checkpoint, data.vocab, data.space);
  if (!neural.neural) throw UsageError("--checkpoint must hold a neural model (caml or cnn)");
  std::optional<Checkpoint> lr;
  if (!a.lr_checkpoint.empty()) {
    lr = load_checkpoint(a.lr_checkpoint, data.vocab, data.space);
    if (!lr->lr) throw UsageError("--lr-checkpoint must hold a logistic-regression model");
  }
  const bool has_descriptions = !data.space.description_text.empty();
  const ExplainMethod neural_method =
      neural.neural->kind == ModelKind::Caml ? ExplainMethod::Attention : ExplainMethod::MaxPoolImportance;

  std::vector<ExplainMethod> methods;
  if (a.methods.empty()) {
    methods.push_back(neural_method);
    if (lr) methods.push_back(ExplainMethod::LrWeights);
    if (has_descriptions) methods.push_back(ExplainMethod::CosineSim);
  } else {
    std::stringstream ss(a.methods);
    for (std::string m; std::getline(ss, m, ',');) {
      const ExplainMethod em = parse_explain_method(m);
      if ((em == ExplainMethod::Attention || em == ExplainMethod::MaxPoolImportance) && em != neural_method) {
        throw UsageError("method " + m + " does not match the neural checkpoint's model kind");
      }
      if (em == ExplainMethod::LrWeights && !lr) throw UsageError("method lr requires --lr-checkpoint");
      if (em == ExplainMethod::CosineSim && !has_descriptions) {
        throw UsageError("method cosine requires code descriptions in the dataset");
      }
      if (std::find(methods.begin(), methods.end(), em) == methods.end()) methods.push_back(em);
    }
  }
  if (methods.size() < 2) throw UsageError("explain needs at least two explanation methods for a blind comparison");
  if (a.k == 0) throw UsageError("--k must be positive");

  const std::uint64_t seed = g.seed.value_or(neural.config.seed);
  const Split split = parse_split(a.split);
  const auto& docs = data.split(split);

  // Predicted (doc, label) pairs under the neural model.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto yhat = predict(*neural.neural, docs[d].token_ids);
    for (std::size_t l = 0; l < yhat.size(); ++l)
      if (yhat[l] >= 0.5) pairs.emplace_back(d, l);
  }
  Rng sampler = Rng(seed).derive("sampling");
  sampler.shuffle(pairs);
  if (pairs.size() > a.sample) pairs.resize(a.sample);
  std::sort(pairs.begin(), pairs.end());

  IdfTable idf;
  if (std::find(methods.begin(), methods.end(), ExplainMethod::CosineSim) != methods.end()) {
    for (const auto* split_docs : {&data.train, &data.validation, &data.test})
      for (const auto& d : *split_docs) idf.add_document(d.tokens);
    for (const auto& [code, text] : data.space.description_text) idf.add_text(text);
  }

  json sheets = json::array();
  json key = json::object();
  json snippets_json = json::array();
  std::string markdown;
  std::size_t skipped = 0, cosine_absent = 0;
  for (const auto& [d, l] : pairs) {
    const auto& doc = docs[d];
    const std::string& code = data.space.labels[l];
    const ForwardTrace tr = forward(*neural.neural, doc.token_ids);
    std::vector<Snippet> snippets;
    for (auto m : methods) {
      switch (m) {
        case ExplainMethod::Attention:
          snippets.push_back(explain_attention(tr, l, neural.neural->kernel, doc.tokens, code, a.k));
          break;
        case ExplainMethod::MaxPoolImportance:
          snippets.push_back(
              explain_maxpool(tr, l, neural.neural->out_weight, neural.neural->kernel, doc.tokens, code, a.k));
          break;
        case ExplainMethod::LrWeights:
          snippets.push_back(explain_lr(doc.token_ids, doc.tokens, l, *lr->lr, code, a.k));
          break;
        case ExplainMethod::CosineSim: {
          auto it = data.space.description_text.find(code);
          if (it == data.space.description_text.end()) {
            ++cosine_absent;
            break;
          }
          if (auto s = explain_cosine(doc.tokens, code, it->second, idf, a.k)) {
            snippets.push_back(std::move(*s));
          } else {
            ++cosine_absent;
          }
          break;
        }
      }
    }
    if (snippets.size() < 2) {
      ++skipped;
      continue;
    }
    const auto desc_it = data.space.description_text.find(code);
    const std::string description = desc_it == data.space.description_text.end() ? "" : desc_it->second;
    const auto bundle = build_review_sheet(doc.doc_id, code, description, snippets, seed);
    sheets.push_back(to_json(bundle.sheet));
    key[bundle.sheet.sheet_id] = bundle.key;
    for (const auto& s : snippets) {
      json sj = to_json(s);
      sj["doc_id"] = doc.doc_id;
      snippets_json.push_back(sj);
    }
    const std::string md = render_markdown(bundle.sheet);
    markdown += md + "\n";
    out << md << "\n";
  }

  out << sheets.size() << " review sheets from " << pairs.size() << " sampled predictions";
  if (cosine_absent) out << "; cosine found no overlapping k-gram for " << cosine_absent << " pairs";
  if (skipped) out << "; " << skipped << " pairs skipped with fewer than two snippets";
  out << "\n";

  if (!g.out_dir.empty()) {
    const fs::path dir = require_out_dir(g);
    Manifest manifest("explain", seed);
    manifest.input("checkpoint", a.checkpoint);
    if (!a.lr_checkpoint.empty()) manifest.input("lr_checkpoint", a.lr_checkpoint);
    manifest.input("data", a.data);
    json methods_json = json::array();
    for (auto m : methods) methods_json.push_back(std::string(to_string(m)));
    manifest.config({{"split", std::string(to_string(split))}, {"sample", a.sample}, {"k", a.k},
                     {"methods", methods_json}});
    write_file_atomic(dir / "review_sheets.json", sheets.dump(2) + "\n");
    write_file_atomic(dir / "review_sheets.md", markdown);
    write_file_atomic(dir / "review_key.json", key.dump(2) + "\n");
    write_file_atomic(dir / "snippets.json", snippets_json.dump(2) + "\n");
    for (const char* f : {"review_sheets.json", "review_sheets.md", "review_key.json", "snippets.json"})
      manifest.output((dir / f).string());
    manifest.write(dir);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  double lambda = 0.1;
  double rho = 0.01;
  bool inject_fault = false;
  std::string model = "caml";
};

inline int cmd_gradcheck(const GlobalOptions& g, const GradcheckArgs& a, std::ostream& out) {
  const std::uint64_t seed = g.seed.value_or(1);
  const ModelKind kind = parse_model_kind(a.model);
  if (kind == ModelKind::MaxPoolCnn && a.lambda > 0.0) throw UsageError("--lambda applies to caml only");
  GradcheckSetup setup = tiny_gradcheck_setup(seed, kind, a.lambda, a.rho);
  const GradCheckReport report = run_gradcheck(setup, a.inject_fault);
  for (const auto& t : report.tensors) {
    out << std::left << std::setw(18) << t.name << " entries " << std::setw(4) << t.entries << " max rel error "
        << std::scientific << std::setprecision(3) << t.max_rel_error << std::defaultfloat
        << (t.flagged ? "  FAIL" : "  ok") << "\n";
  }
  out << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << report.tolerance << ")\n";
  if (!g.out_dir.empty()) {
    const fs::path dir = require_out_dir(g);
    Manifest manifest("gradcheck", seed);
    manifest.config({{"lambda", a.lambda}, {"rho", a.rho}, {"model", a.model}, {"inject_fault", a.inject_fault}});
    write_file_atomic(dir / "gradcheck.json", to_json(report).dump(2) + "\n");
    manifest.output((dir / "gradcheck.json").string());
    manifest.write(dir);
  }
  return report.passed() ? kOk : kNumerical;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::size_t documents = 400;
  std::size_t labels = 20;
  double noise = 0.1;
};

inline int cmd_synth(const GlobalOptions& g, const SynthArgs& a, std::ostream& out) {
  SyntheticConfig cfg;
  cfg.documents = a.documents;
  cfg.labels = a.labels;
  cfg.label_noise = a.noise;
  cfg.procedure_labels = std::min<std::size_t>(cfg.procedure_labels, a.labels / 4);
  if (g.seed) cfg.seed = *g.seed;
  if (cfg.labels == 0 || cfg.documents == 0) throw UsageError("--docs and --labels must be positive");
  const fs::path dir = require_out_dir(g);
  const SyntheticCorpus corpus = generate_planted_corpus(cfg);
  std::string jsonl;
  for (const auto& d : corpus.documents) jsonl += write_corpus_line(d) + "\n";
  write_file_atomic(dir / "corpus.jsonl", jsonl);
  std::string csv = "code,description\n";
  for (const auto& e : corpus.descriptions) csv += e.code + "," + e.description + "\n";
  write_file_atomic(dir / "descriptions.csv", csv);
  json triggers = json::object();
  for (std::size_t l = 0; l < corpus.codes.size(); ++l) triggers[corpus.codes[l]] = corpus.triggers[l];
  write_file_atomic(dir / "triggers.json", triggers.dump(2) + "\n");
  out << "wrote " << corpus.documents.size() << " documents with " << corpus.codes.size() << " labels to "
      << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"CAML: convolutional attention for multi-label text classification"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed_value, "Root random seed");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.fallthrough();

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Tokenize, split and encode a JSONL corpus");
  c_pre->add_option("--corpus", pre.corpus, "JSONL corpus (doc_id, group_id, text, labels)")->required();
  c_pre->add_option("--descriptions", pre.descriptions, "CSV with header code,description");
  c_pre->add_option("--embeddings", pre.embeddings, "Word vectors in text format");
  c_pre->add_option("--min-doc-freq", pre.min_doc_freq, "Minimum training document frequency");
  c_pre->add_option("--max-len", pre.max_len, "Truncation length in tokens");
  c_pre->add_option("--embed-dim", pre.embed_dim, "Embedding dimension d_e");
  c_pre->add_option("--split-fractions", pre.fractions, "train,validation,test fractions");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train caml, cnn or lr on a preprocessed dataset");
  c_train->add_option("--data", tr.data, "Preprocessed dataset directory")->required();
  c_train->add_option("--model", tr.model, "caml | cnn | lr");
  c_train->add_option("--lambda", tr.lambda, "Description regularizer weight (DR-CAML when > 0)");
  c_train->add_option("--eta", tr.eta, "Adam learning rate");
  c_train->add_option("--dropout", tr.dropout, "Embedding dropout probability");
  c_train->add_option("--rho", tr.rho, "L2 penalty weight");
  c_train->add_option("--filters", tr.filters, "Number of convolution filters d_c");
  c_train->add_option("--kernel", tr.kernel, "Convolution width k");
  c_train->add_option("--batch-size", tr.batch_size, "Minibatch size");
  c_train->add_option("--patience", tr.patience, "Early-stopping patience in epochs");
  c_train->add_option("--max-epochs", tr.max_epochs, "Maximum number of epochs");
  c_train->add_option("--embed-dim", tr.embed_dim, "Embedding dimension d_e");
  c_train->add_option("--lr-epochs", tr.lr_epochs, "Gradient-descent epochs for the lr baseline");

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Score a split and report metrics");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  c_eval->add_option("--data", ev.data, "Preprocessed dataset directory")->required();
  c_eval->add_option("--split", ev.split, "train | validation | test");
  c_eval->add_option("--n", ev.ns, "Comma-separated n values for precision@n");
  c_eval->add_option("--threshold", ev.threshold, "Decision threshold");

  ExplainArgs ex;
  auto* c_explain = app.add_subcommand("explain", "Extract k-gram explanations into blind review sheets");
  c_explain->add_option("--checkpoint", ex.checkpoint, "Neural (caml or cnn) checkpoint")->required();
  c_explain->add_option("--lr-checkpoint", ex.lr_checkpoint, "Logistic-regression checkpoint");
  c_explain->add_option("--data", ex.data, "Preprocessed dataset directory")->required();
  c_explain->add_option("--split", ex.split, "train | validation | test");
  c_explain->add_option("--sample", ex.sample, "Number of predicted (document, code) pairs");
  c_explain->add_option("--k", ex.k, "Snippet length in tokens");
  c_explain->add_option("--methods", ex.methods, "Comma-separated: attention, maxpool, lr, cosine");

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of all backward passes");
  c_grad->add_option("--lambda", gc.lambda, "Description regularizer weight");
  c_grad->add_option("--rho", gc.rho, "L2 penalty weight");
  c_grad->add_option("--model", gc.model, "caml | cnn");
  c_grad->add_flag("--inject-fault", gc.inject_fault, "Flip a gradient sign (tests the checker)");

  SynthArgs sy;
  auto* c_synth = app.add_subcommand("synth", "Write a planted-trigger demo corpus");
  c_synth->add_option("--docs", sy.documents, "Number of documents");
  c_synth->add_option("--labels", sy.labels, "Number of labels");
  c_synth->add_option("--noise", sy.noise, "Probability of an extra untriggered label");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (c_pre->parsed()) return cmd_preprocess(g, pre, out);
    if (c_train->parsed()) return cmd_train(g, tr, out);
    if (c_eval->parsed()) return cmd_evaluate(g, ev, out);
    if (c_explain->parsed()) return cmd_explain(g, ex, out);
    if (c_grad->parsed()) return cmd_gradcheck(g, gc, out);
    if (c_synth->parsed()) return cmd_synth(g, sy, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace caml::cli
