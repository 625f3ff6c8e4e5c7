#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "caml/error.hpp"
#include "caml/numerics.hpp"
#include "caml/text.hpp"

namespace caml {

using TokenId = std::int32_t;

struct RawDocument {
  std::string doc_id;
  std::string group_id;
  std::string text;
  std::vector<std::string> labels;
};

// ---------------------------------------------------------------------------
// Tokenization

// Splits on Unicode whitespace, lowercases, strips leading/trailing
// non-alphanumerics from each piece and drops pieces with no alphabetic
// character ("500" goes, "250mg" stays).
inline std::vector<std::string> tokenize(std::string_view input) {
  std::vector<std::string> tokens;
  const auto cps = text::decode_utf8(input);
  std::size_t i = 0;
  while (i < cps.size()) {
    while (i < cps.size() && text::is_space(cps[i])) ++i;
    std::size_t j = i;
    while (j < cps.size() && !text::is_space(cps[j])) ++j;
    std::size_t lo = i;
    std::size_t hi = j;
    while (lo < hi && !text::is_alnum(cps[lo])) ++lo;
    while (hi > lo && !text::is_alnum(cps[hi - 1])) --hi;
    bool has_alpha = false;
    for (std::size_t t = lo; t < hi; ++t) has_alpha = has_alpha || text::is_alpha(cps[t]);
    if (has_alpha) {
      std::string tok;
      for (std::size_t t = lo; t < hi; ++t) text::append_utf8(tok, text::to_lower(cps[t]));
      tokens.push_back(std::move(tok));
    }
    i = j;
  }
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens,
                               std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary() { reset(); }

  // `tokens` must be sorted and free of the special tokens.
  static Vocabulary from_tokens(const std::vector<std::pair<std::string, std::int64_t>>& tokens,
                                std::int64_t min_doc_freq) {
    Vocabulary v;
    v.min_doc_freq_ = min_doc_freq;
    for (const auto& [tok, df] : tokens) {
      if (tok == kPadToken || tok == kUnkToken) {
        throw DataError("vocabulary: reserved token in input: " + tok);
      }
      if (v.token_to_index_.count(tok)) throw DataError("vocabulary: duplicate token " + tok);
      v.token_to_index_.emplace(tok, static_cast<TokenId>(v.index_to_token_.size()));
      v.index_to_token_.push_back(tok);
      v.doc_freq_.push_back(df);
    }
    return v;
  }

  std::size_t size() const { return index_to_token_.size(); }
  std::int64_t min_doc_freq() const { return min_doc_freq_; }

  TokenId index(std::string_view token) const {
    auto it = token_to_index_.find(std::string(token));
    return it == token_to_index_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view token) const {
    return token_to_index_.count(std::string(token)) > 0;
  }
  const std::string& token(TokenId id) const { return index_to_token_.at(static_cast<std::size_t>(id)); }
  std::int64_t doc_freq(TokenId id) const { return doc_freq_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return index_to_token_; }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a64("vocab");
    for (const auto& t : index_to_token_) {
      h = fnv1a64(t, h);
      h = fnv1a64("\n", h);
    }
    return h;
  }

  // One "token<TAB>doc_freq" line per index, specials included.
  void write(std::ostream& os) const {
    os << "#min_doc_freq\t" << min_doc_freq_ << '\n';
    for (std::size_t i = 0; i < size(); ++i) os << index_to_token_[i] << '\t' << doc_freq_[i] << '\n';
  }

  static Vocabulary read(std::istream& is) {
    std::string line;
    std::int64_t min_df = 0;
    std::vector<std::pair<std::string, std::int64_t>> rows;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw DataError("vocabulary line " + std::to_string(lineno) + ": missing tab");
      }
      std::string tok = line.substr(0, tab);
      std::int64_t df = 0;
      try {
        df = std::stoll(line.substr(tab + 1));
      } catch (const std::exception&) {
        throw DataError("vocabulary line " + std::to_string(lineno) + ": bad count");
      }
      if (tok == "#min_doc_freq") {
        min_df = df;
        continue;
      }
      rows.emplace_back(std::move(tok), df);
    }
    if (rows.size() < 2 || rows[0].first != kPadToken || rows[1].first != kUnkToken) {
      throw DataError("vocabulary file must start with <pad> and <unk>");
    }
    rows.erase(rows.begin(), rows.begin() + 2);
    return from_tokens(rows, min_df);
  }

 private:
  void reset() {
    token_to_index_.clear();
    index_to_token_ = {std::string(kPadToken), std::string(kUnkToken)};
    doc_freq_ = {0, 0};
    token_to_index_.emplace(kPadToken, kPad);
    token_to_index_.emplace(kUnkToken, kUnk);
  }

  std::unordered_map<std::string, TokenId> token_to_index_;
  std::vector<std::string> index_to_token_;
  std::vector<std::int64_t> doc_freq_;
  std::int64_t min_doc_freq_ = 3;
};

// Tokens found in at least `min_doc_freq` distinct training documents, in
// lexicographic (byte) order after <pad> and <unk>.
inline Vocabulary build_vocabulary(const std::vector<RawDocument>& train_docs,
                                   std::int64_t min_doc_freq = 3) {
  if (train_docs.empty()) throw DataError("build_vocabulary: no training documents");
  std::map<std::string, std::int64_t> df;
  for (const auto& doc : train_docs) {
    auto toks = tokenize(doc.text);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (auto& t : toks) ++df[std::move(t)];
  }
  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (const auto& [tok, count] : df) {
    if (count >= min_doc_freq) kept.emplace_back(tok, count);
  }
  if (kept.empty()) {
    throw DataError("build_vocabulary: every token falls below min_doc_freq=" +
                    std::to_string(min_doc_freq));
  }
  return Vocabulary::from_tokens(kept, min_doc_freq);
}

// ---------------------------------------------------------------------------
// Label space

enum class LabelKind { Diagnosis, Procedure };

inline std::string_view to_string(LabelKind k) {
  return k == LabelKind::Procedure ? "procedure" : "diagnosis";
}

inline LabelKind parse_label_kind(std::string_view s) {
  if (s == "procedure" || s == "proc") return LabelKind::Procedure;
  if (s == "diagnosis" || s == "diag") return LabelKind::Diagnosis;
  throw DataError("unknown label kind: " + std::string(s));
}

// ICD-9 procedure codes have two digits before the decimal point ("96.04");
// diagnosis codes have three, or a V/E prefix ("428.20", "V58.61").
inline LabelKind infer_label_kind(std::string_view code) {
  const auto dot = code.find('.');
  const auto head = code.substr(0, dot);
  const bool digits = !head.empty() && std::all_of(head.begin(), head.end(),
                                                   [](char c) { return c >= '0' && c <= '9'; });
  return digits && head.size() == 2 ? LabelKind::Procedure : LabelKind::Diagnosis;
}

struct LabelSpace {
  std::vector<std::string> labels;
  std::map<std::string, std::string> description_text;
  std::map<std::string, std::vector<TokenId>> descriptions;
  std::map<std::string, LabelKind> kinds;

  std::size_t size() const { return labels.size(); }

  // `labels` is kept sorted, so lookup is a binary search.
  std::optional<std::size_t> index(std::string_view code) const {
    auto it = std::lower_bound(labels.begin(), labels.end(), code);
    if (it != labels.end() && *it == code) return static_cast<std::size_t>(it - labels.begin());
    return std::nullopt;
  }

  LabelKind kind(std::size_t i) const {
    auto it = kinds.find(labels.at(i));
    return it == kinds.end() ? infer_label_kind(labels[i]) : it->second;
  }

  bool has_description(std::size_t i) const {
    auto it = descriptions.find(labels.at(i));
    return it != descriptions.end() && !it->second.empty();
  }

  const std::vector<TokenId>& description(std::size_t i) const {
    auto it = descriptions.find(labels.at(i));
    if (it == descriptions.end() || it->second.empty()) {
      throw DataError("label " + labels.at(i) + " has no description");
    }
    return it->second;
  }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a64("labels");
    for (const auto& l : labels) {
      h = fnv1a64(l, h);
      h = fnv1a64("\n", h);
    }
    return h;
  }
};

struct DescriptionEntry {
  std::string code;
  std::string description;
  std::optional<LabelKind> kind;
};

// Sorted union of the labels of `docs`. Descriptions are tokenized and
// encoded against `vocab`; codes not in the label space are ignored.
inline LabelSpace build_label_space(const std::vector<RawDocument>& docs,
                                    const Vocabulary& vocab,
                                    const std::vector<DescriptionEntry>& descriptions = {}) {
  std::set<std::string> all;
  for (const auto& d : docs) all.insert(d.labels.begin(), d.labels.end());
  LabelSpace space;
  space.labels.assign(all.begin(), all.end());
  for (const auto& l : space.labels) space.kinds[l] = infer_label_kind(l);
  for (const auto& e : descriptions) {
    if (!all.count(e.code)) continue;
    space.description_text[e.code] = e.description;
    std::vector<TokenId> ids;
    for (const auto& t : tokenize(e.description)) ids.push_back(vocab.index(t));
    space.descriptions[e.code] = std::move(ids);
    if (e.kind) space.kinds[e.code] = *e.kind;
  }
  return space;
}

// ---------------------------------------------------------------------------
// Encoding

struct EncodedDocument {
  std::string doc_id;
  std::vector<TokenId> token_ids;
  std::vector<std::uint8_t> label_vector;
  std::vector<std::string> tokens;  // kept tokens, aligned with token_ids
  std::size_t dropped_labels = 0;   // labels outside the label space

  std::size_t length() const { return token_ids.size(); }
};

inline constexpr std::size_t kDefaultMaxLen = 2500;

// OOV tokens become <unk>; truncation keeps the first max_len tokens and
// happens after unknown-token substitution.
inline EncodedDocument encode(const RawDocument& doc, const Vocabulary& vocab,
                              const LabelSpace& space, std::size_t max_len = kDefaultMaxLen) {
  if (max_len == 0) throw UsageError("encode: max_len must be positive");
  EncodedDocument out;
  out.doc_id = doc.doc_id;
  out.tokens = tokenize(doc.text);
  if (out.tokens.empty()) {
    throw DataError("document " + doc.doc_id + " has no tokens after preprocessing");
  }
  if (out.tokens.size() > max_len) out.tokens.resize(max_len);
  out.token_ids.reserve(out.tokens.size());
  for (const auto& t : out.tokens) out.token_ids.push_back(vocab.index(t));
  out.label_vector.assign(space.size(), 0);
  for (const auto& l : doc.labels) {
    if (auto i = space.index(l)) {
      out.label_vector[*i] = 1;
    } else {
      ++out.dropped_labels;
    }
  }
  return out;
}

inline std::vector<std::string> decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(vocab.token(id));
  return out;
}

// ---------------------------------------------------------------------------
// Group-disjoint splitting

struct DatasetSplits {
  std::vector<RawDocument> train;
  std::vector<RawDocument> validation;
  std::vector<RawDocument> test;
};

enum class Split { Train = 0, Validation = 1, Test = 2 };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "validation" || s == "valid" || s == "dev") return Split::Validation;
  if (s == "test") return Split::Test;
  throw UsageError("unknown split: " + std::string(s));
}

inline Split assign_group(std::string_view group_id, std::uint64_t seed,
                          const std::array<double, 3>& fractions) {
  const std::uint64_t h = splitmix64(fnv1a64(group_id) ^ splitmix64(seed));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  if (u < fractions[0]) return Split::Train;
  if (u < fractions[0] + fractions[1]) return Split::Validation;
  return Split::Test;
}

inline DatasetSplits split_by_group(const std::vector<RawDocument>& docs,
                                    const std::array<double, 3>& fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 ||
      std::any_of(fractions.begin(), fractions.end(), [](double f) { return f < 0.0; })) {
    throw UsageError("split fractions must be non-negative and sum to 1");
  }
  DatasetSplits out;
  for (const auto& d : docs) {
    const std::string& group = d.group_id.empty() ? d.doc_id : d.group_id;
    switch (assign_group(group, seed, fractions)) {
      case Split::Train: out.train.push_back(d); break;
      case Split::Validation: out.validation.push_back(d); break;
      case Split::Test: out.test.push_back(d); break;
    }
  }
  if (out.train.empty() || out.validation.empty() || out.test.empty()) {
    throw DataError("split_by_group: a split is empty (train=" + std::to_string(out.train.size()) +
                    ", validation=" + std::to_string(out.validation.size()) +
                    ", test=" + std::to_string(out.test.size()) + ")");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embeddings

struct EmbeddingTable {
  Matrix matrix;  // |V| x d_e, row i is the vector of vocabulary index i
  std::size_t dim() const { return matrix.cols(); }
};

inline void random_init_row(std::span<double> row, Rng& rng) {
  const double bound = 0.5 / static_cast<double>(row.size());
  for (double& x : row) x = rng.uniform(-bound, bound);
}

inline EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed) {
  EmbeddingTable t{Matrix(vocab.size(), dim)};
  Rng rng = Rng(seed).derive("embeddings");
  for (std::size_t i = 1; i < vocab.size(); ++i) random_init_row(t.matrix.row(i), rng);
  return t;
}

// Word-per-line text vectors ("token v1 ... vd"). A leading "<count> <dim>"
// header is skipped. Vocabulary tokens absent from the stream are drawn
// from U(-0.5/d, 0.5/d); the <pad> row is zero.
inline EmbeddingTable load_embeddings(std::istream& is, const Vocabulary& vocab,
                                      std::size_t expected_dim, std::uint64_t seed) {
  EmbeddingTable table{Matrix(vocab.size(), expected_dim)};
  std::vector<bool> seen(vocab.size(), false);
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::size_t> file_dim;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::vector<std::string> fields;
    for (std::string f; ss >> f;) fields.push_back(std::move(f));
    if (fields.empty()) continue;
    if (lineno == 1 && fields.size() == 2 &&
        std::all_of(fields.begin(), fields.end(), [](const std::string& f) {
          return !f.empty() && std::all_of(f.begin(), f.end(), [](char c) { return c >= '0' && c <= '9'; });
        })) {
      continue;
    }
    const std::size_t dim = fields.size() - 1;
    if (!file_dim) {
      file_dim = dim;
      if (dim != expected_dim) {
        throw DataError("embeddings line " + std::to_string(lineno) + ": dimension " +
                        std::to_string(dim) + " does not match configured d_e=" +
                        std::to_string(expected_dim));
      }
    } else if (dim != *file_dim) {
      throw DataError("embeddings line " + std::to_string(lineno) + ": inconsistent dimension " +
                      std::to_string(dim) + " (expected " + std::to_string(*file_dim) + ")");
    }
    if (!vocab.contains(fields[0])) continue;
    const auto id = static_cast<std::size_t>(vocab.index(fields[0]));
    if (seen[id]) continue;
    auto row = table.matrix.row(id);
    for (std::size_t j = 0; j < dim; ++j) {
      char* end = nullptr;
      row[j] = std::strtod(fields[j + 1].c_str(), &end);
      if (end == fields[j + 1].c_str() || *end != '\0' || !std::isfinite(row[j])) {
        throw DataError("embeddings line " + std::to_string(lineno) + ": bad value '" +
                        fields[j + 1] + "'");
      }
    }
    seen[id] = true;
  }
  Rng rng = Rng(seed).derive("embeddings");
  for (std::size_t i = 1; i < vocab.size(); ++i) {
    if (!seen[i]) random_init_row(table.matrix.row(i), rng);
  }
  auto pad = table.matrix.row(Vocabulary::kPad);
  std::fill(pad.begin(), pad.end(), 0.0);
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab,
                                      std::size_t expected_dim, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings file " + path);
  return load_embeddings(in, vocab, expected_dim, seed);
}

// ---------------------------------------------------------------------------
// Input formats

inline std::vector<RawDocument> read_corpus_jsonl(std::istream& is) {
  std::vector<RawDocument> docs;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "corpus line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(where + ": expected a JSON object");
    RawDocument d;
    try {
      d.doc_id = j.at("doc_id").get<std::string>();
      d.text = j.at("text").get<std::string>();
      d.group_id = j.contains("group_id") ? j["group_id"].get<std::string>() : d.doc_id;
      if (j.contains("labels")) d.labels = j["labels"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    std::sort(d.labels.begin(), d.labels.end());
    d.labels.erase(std::unique(d.labels.begin(), d.labels.end()), d.labels.end());
    if (!ids.insert(d.doc_id).second) throw DataError(where + ": duplicate doc_id " + d.doc_id);
    docs.push_back(std::move(d));
  }
  return docs;
}

inline std::vector<RawDocument> read_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path);
  return read_corpus_jsonl(in);
}

inline std::string write_corpus_line(const RawDocument& d) {
  nlohmann::json j;
  j["doc_id"] = d.doc_id;
  j["group_id"] = d.group_id;
  j["text"] = d.text;
  j["labels"] = d.labels;
  return j.dump();
}

// RFC 4180-style field splitting (quoted fields, doubled quotes).
inline std::vector<std::string> parse_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back().push_back(c);
    }
  }
  return fields;
}

// "code,description" CSV with an optional third "kind" column.
inline std::vector<DescriptionEntry> read_descriptions_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("descriptions: empty file");
  const auto header = parse_csv_line(line);
  if (header.size() < 2 || header[0] != "code" || header[1] != "description") {
    throw DataError("descriptions: header must be \"code,description\"");
  }
  const bool has_kind = header.size() >= 3 && header[2] == "kind";
  std::vector<DescriptionEntry> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto f = parse_csv_line(line);
    if (f.size() < 2) {
      throw DataError("descriptions line " + std::to_string(lineno) + ": expected code,description");
    }
    DescriptionEntry e{f[0], f[1], std::nullopt};
    if (has_kind && f.size() >= 3 && !f[2].empty()) e.kind = parse_label_kind(f[2]);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<DescriptionEntry> read_descriptions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open descriptions " + path);
  return read_descriptions_csv(in);
}

}  // namespace caml
