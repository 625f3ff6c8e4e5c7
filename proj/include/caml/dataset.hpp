#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "caml/checkpoint.hpp"
#include "caml/corpus.hpp"
#include "caml/error.hpp"
#include "caml/training.hpp"

// On-disk layout of a preprocessed dataset directory:
//   vocab.tsv                  token<TAB>doc_freq, index order
//   labels.json                ordered label codes, kinds, description texts
//   {train,validation,test}.jsonl   encoded documents
//   embeddings.txt             aligned vectors (only when supplied)
//   stats.json                 descriptive statistics

namespace caml {

struct PreprocessConfig {
  std::int64_t min_doc_freq = 3;
  std::size_t max_len = kDefaultMaxLen;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
  std::size_t embed_dim = 100;
  std::uint64_t seed = 1;
};

inline nlohmann::json to_json(const PreprocessConfig& c) {
  return {{"min_doc_freq", c.min_doc_freq},
          {"max_len", c.max_len},
          {"split_fractions", c.fractions},
          {"embed_dim", c.embed_dim},
          {"seed", c.seed}};
}

inline void apply_json(PreprocessConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("preprocess config: expected a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "min_doc_freq") c.min_doc_freq = v.get<std::int64_t>();
      else if (key == "max_len") c.max_len = v.get<std::size_t>();
      else if (key == "split_fractions") c.fractions = v.get<std::array<double, 3>>();
      else if (key == "embed_dim") c.embed_dim = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw UsageError("preprocess config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("preprocess config: ") + e.what());
  }
}

struct SplitStats {
  std::size_t documents = 0;
  double mean_tokens = 0.0;  // after truncation
  double mean_labels = 0.0;  // labels per document inside the label space
};

struct CorpusStats {
  std::size_t vocab_size = 0;
  std::size_t total_labels = 0;
  std::size_t dropped_labels = 0;
  std::size_t diagnosis_labels = 0;
  std::size_t procedure_labels = 0;
  SplitStats train, validation, test;
};

inline SplitStats split_stats(const std::vector<EncodedDocument>& docs) {
  SplitStats s;
  s.documents = docs.size();
  if (docs.empty()) return s;
  double tokens = 0.0, labels = 0.0;
  for (const auto& d : docs) {
    tokens += static_cast<double>(d.length());
    labels += static_cast<double>(count_positive(d.label_vector));
  }
  s.mean_tokens = tokens / static_cast<double>(docs.size());
  s.mean_labels = labels / static_cast<double>(docs.size());
  return s;
}

inline CorpusStats corpus_stats(const Dataset& data) {
  CorpusStats s;
  s.vocab_size = data.vocab.size();
  s.total_labels = data.space.size();
  for (std::size_t l = 0; l < data.space.size(); ++l)
    (data.space.kind(l) == LabelKind::Procedure ? s.procedure_labels : s.diagnosis_labels)++;
  for (const auto* split : {&data.train, &data.validation, &data.test})
    for (const auto& d : *split) s.dropped_labels += d.dropped_labels;
  s.train = split_stats(data.train);
  s.validation = split_stats(data.validation);
  s.test = split_stats(data.test);
  return s;
}

inline nlohmann::json to_json(const SplitStats& s) {
  return {{"documents", s.documents}, {"mean_tokens", s.mean_tokens}, {"mean_labels", s.mean_labels}};
}

inline nlohmann::json to_json(const CorpusStats& s) {
  return {{"vocab_size", s.vocab_size},
          {"total_labels", s.total_labels},
          {"dropped_labels", s.dropped_labels},
          {"diagnosis_labels", s.diagnosis_labels},
          {"procedure_labels", s.procedure_labels},
          {"train", to_json(s.train)},
          {"validation", to_json(s.validation)},
          {"test", to_json(s.test)}};
}

inline std::vector<EncodedDocument> encode_all(const std::vector<RawDocument>& docs, const Vocabulary& vocab,
                                               const LabelSpace& space, std::size_t max_len) {
  std::vector<EncodedDocument> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(encode(d, vocab, space, max_len));
  return out;
}

// Split by group, build the vocabulary from the training split, build the
// label space from every document, encode, and align embeddings.
inline Dataset preprocess(const std::vector<RawDocument>& docs, const std::vector<DescriptionEntry>& descriptions,
                          const PreprocessConfig& cfg, std::istream* embeddings = nullptr) {
  if (docs.empty()) throw DataError("preprocess: corpus is empty");
  const DatasetSplits splits = split_by_group(docs, cfg.fractions, cfg.seed);
  Dataset data;
  data.vocab = build_vocabulary(splits.train, cfg.min_doc_freq);
  data.space = build_label_space(docs, data.vocab, descriptions);
  data.train = encode_all(splits.train, data.vocab, data.space, cfg.max_len);
  data.validation = encode_all(splits.validation, data.vocab, data.space, cfg.max_len);
  data.test = encode_all(splits.test, data.vocab, data.space, cfg.max_len);
  if (embeddings) data.embeddings = load_embeddings(*embeddings, data.vocab, cfg.embed_dim, cfg.seed);
  return data;
}

inline std::string encoded_line(const EncodedDocument& d, const LabelSpace& space) {
  nlohmann::json j;
  j["doc_id"] = d.doc_id;
  j["token_ids"] = d.token_ids;
  j["tokens"] = d.tokens;
  std::vector<std::string> labels;
  for (std::size_t l = 0; l < d.label_vector.size(); ++l)
    if (d.label_vector[l]) labels.push_back(space.labels[l]);
  j["labels"] = labels;
  return j.dump();
}

inline EncodedDocument parse_encoded_line(const std::string& line, const LabelSpace& space, std::size_t vocab_size,
                                          const std::string& where) {
  EncodedDocument d;
  try {
    const auto j = nlohmann::json::parse(line);
    d.doc_id = j.at("doc_id").get<std::string>();
    d.token_ids = j.at("token_ids").get<std::vector<TokenId>>();
    d.tokens = j.at("tokens").get<std::vector<std::string>>();
    d.label_vector.assign(space.size(), 0);
    for (const auto& code : j.at("labels").get<std::vector<std::string>>()) {
      auto i = space.index(code);
      if (!i) throw DataError(where + ": label " + code + " not in label space");
      d.label_vector[*i] = 1;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  if (d.token_ids.empty() || d.token_ids.size() != d.tokens.size()) {
    throw DataError(where + ": token_ids and tokens must be non-empty and aligned");
  }
  for (auto id : d.token_ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) throw DataError(where + ": token id out of range");
  return d;
}

inline nlohmann::json label_space_json(const LabelSpace& space) {
  nlohmann::json kinds = nlohmann::json::object(), desc = nlohmann::json::object();
  for (std::size_t l = 0; l < space.size(); ++l) kinds[space.labels[l]] = std::string(to_string(space.kind(l)));
  for (const auto& [code, text] : space.description_text) desc[code] = text;
  return {{"labels", space.labels}, {"kinds", kinds}, {"descriptions", desc}};
}

inline LabelSpace label_space_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  LabelSpace space;
  try {
    space.labels = j.at("labels").get<std::vector<std::string>>();
    if (!std::is_sorted(space.labels.begin(), space.labels.end()) ||
        std::adjacent_find(space.labels.begin(), space.labels.end()) != space.labels.end()) {
      throw DataError("labels.json: labels must be sorted and unique");
    }
    for (const auto& [code, kind] : j.at("kinds").items()) space.kinds[code] = parse_label_kind(kind.get<std::string>());
    for (const auto& [code, text] : j.at("descriptions").items()) {
      space.description_text[code] = text.get<std::string>();
      std::vector<TokenId> ids;
      for (const auto& t : tokenize(space.description_text[code])) ids.push_back(vocab.index(t));
      space.descriptions[code] = std::move(ids);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("labels.json: ") + e.what());
  }
  return space;
}

inline std::string format_embeddings(const EmbeddingTable& table, const Vocabulary& vocab) {
  std::ostringstream os;
  os << table.matrix.rows() << ' ' << table.dim() << '\n';
  char buf[64];
  for (std::size_t i = 0; i < table.matrix.rows(); ++i) {
    os << vocab.token(static_cast<TokenId>(i));
    for (double x : table.matrix.row(i)) {
      std::snprintf(buf, sizeof buf, " %.17g", x);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  std::ostringstream vocab;
  data.vocab.write(vocab);
  write_file_atomic(dir / "vocab.tsv", vocab.str());
  write_file_atomic(dir / "labels.json", label_space_json(data.space).dump(2) + "\n");
  for (auto s : {Split::Train, Split::Validation, Split::Test}) {
    std::string out;
    for (const auto& d : data.split(s)) out += encoded_line(d, data.space) + "\n";
    write_file_atomic(dir / (std::string(to_string(s)) + ".jsonl"), out);
  }
  if (data.embeddings) write_file_atomic(dir / "embeddings.txt", format_embeddings(*data.embeddings, data.vocab));
  write_file_atomic(dir / "stats.json", to_json(corpus_stats(data)).dump(2) + "\n");
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  Dataset data;
  {
    std::ifstream in(dir / "vocab.tsv");
    if (!in) throw DataError("missing " + (dir / "vocab.tsv").string());
    data.vocab = Vocabulary::read(in);
  }
  try {
    data.space = label_space_from_json(nlohmann::json::parse(read_file(dir / "labels.json")), data.vocab);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("labels.json: ") + e.what());
  }
  for (auto s : {Split::Train, Split::Validation, Split::Test}) {
    const auto path = dir / (std::string(to_string(s)) + ".jsonl");
    std::ifstream in(path);
    if (!in) throw DataError("missing " + path.string());
    auto& target = s == Split::Train ? data.train : s == Split::Validation ? data.validation : data.test;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      target.push_back(parse_encoded_line(line, data.space, data.vocab.size(),
                                          path.filename().string() + " line " + std::to_string(lineno)));
    }
  }
  const auto emb = dir / "embeddings.txt";
  if (std::filesystem::exists(emb)) {
    std::ifstream in(emb);
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    std::size_t rows = 0, dim = 0;
    hs >> rows >> dim;
    in.seekg(0);
    data.embeddings = load_embeddings(in, data.vocab, dim, 0);
  }
  return data;
}

}  // namespace caml
