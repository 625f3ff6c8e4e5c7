#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "caml/corpus.hpp"
#include "caml/error.hpp"
#include "caml/linear_baseline.hpp"
#include "caml/model.hpp"
#include "caml/numerics.hpp"
#include "caml/porter_stemmer.hpp"

namespace caml {

enum class ExplainMethod { Attention, MaxPoolImportance, LrWeights, CosineSim };

inline std::string_view to_string(ExplainMethod m) {
  switch (m) {
    case ExplainMethod::Attention: return "attention";
    case ExplainMethod::MaxPoolImportance: return "maxpool";
    case ExplainMethod::LrWeights: return "lr";
    case ExplainMethod::CosineSim: return "cosine";
  }
  return "attention";
}

inline ExplainMethod parse_explain_method(std::string_view s) {
  if (s == "attention" || s == "caml") return ExplainMethod::Attention;
  if (s == "maxpool" || s == "cnn") return ExplainMethod::MaxPoolImportance;
  if (s == "lr" || s == "logreg") return ExplainMethod::LrWeights;
  if (s == "cosine" || s == "cosinesim") return ExplainMethod::CosineSim;
  throw UsageError("unknown explanation method: " + std::string(s));
}

inline constexpr std::size_t kDefaultSnippetK = 4;
inline constexpr std::size_t kContextWords = 5;

struct Snippet {
  ExplainMethod method = ExplainMethod::Attention;
  std::string label;
  std::size_t start = 0;
  std::size_t k = kDefaultSnippetK;
  std::vector<std::string> kgram;
  std::vector<std::string> left_context;   // up to kContextWords tokens
  std::vector<std::string> right_context;  // up to kContextWords tokens
  double score = 0.0;

  std::size_t end() const { return start + kgram.size(); }  // exclusive
};

// The k-gram at `start` plus up to five tokens of context on either side.
// Documents shorter than k yield the whole document.
inline Snippet make_snippet(const std::vector<std::string>& tokens, std::size_t start, std::size_t k,
                            ExplainMethod method, std::string label, double score) {
  if (tokens.empty()) throw DataError("make_snippet: empty document");
  const std::size_t len = std::min(k, tokens.size());
  start = std::min(start, tokens.size() - len);
  Snippet s;
  s.method = method;
  s.label = std::move(label);
  s.start = start;
  s.k = k;
  s.score = score;
  s.kgram.assign(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                 tokens.begin() + static_cast<std::ptrdiff_t>(start + len));
  const std::size_t lo = start >= kContextWords ? start - kContextWords : 0;
  s.left_context.assign(tokens.begin() + static_cast<std::ptrdiff_t>(lo),
                        tokens.begin() + static_cast<std::ptrdiff_t>(start));
  const std::size_t hi = std::min(tokens.size(), start + len + kContextWords);
  s.right_context.assign(tokens.begin() + static_cast<std::ptrdiff_t>(start + len),
                         tokens.begin() + static_cast<std::ptrdiff_t>(hi));
  return s;
}

inline std::ptrdiff_t floor_div2(std::ptrdiff_t x) { return x >= 0 ? x / 2 : -((-x + 1) / 2); }

// Maps convolution position n to the start of the reported k-gram. Position
// n covers input tokens [n - left_pad, n - left_pad + kernel - 1]; the
// k-gram is the centered k tokens of that window, clipped to the document.
inline std::size_t anchor_kgram_start(std::size_t position, std::size_t conv_kernel, std::size_t k,
                                      std::size_t doc_length) {
  const auto window_start = static_cast<std::ptrdiff_t>(position) -
                            static_cast<std::ptrdiff_t>(left_padding(conv_kernel));
  const std::ptrdiff_t start =
      window_start + floor_div2(static_cast<std::ptrdiff_t>(conv_kernel) - static_cast<std::ptrdiff_t>(k));
  const std::ptrdiff_t max_start =
      doc_length > k ? static_cast<std::ptrdiff_t>(doc_length - k) : 0;
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(start, 0, max_start));
}

// k-gram around the attention argmax for `label` (ties -> first position).
inline Snippet explain_attention(const ForwardTrace& trace, std::size_t label, std::size_t conv_kernel,
                                 const std::vector<std::string>& tokens, const std::string& label_code,
                                 std::size_t k = kDefaultSnippetK) {
  if (trace.kind != ModelKind::Caml) throw UsageError("explain_attention needs a CAML forward trace");
  if (tokens.size() != trace.length()) throw DataError("explain_attention: token/trace length mismatch");
  const auto a = trace.attention.alpha.row(label);
  std::size_t best = 0;
  for (std::size_t n = 1; n < a.size(); ++n)
    if (a[n] > a[best]) best = n;
  return make_snippet(tokens, anchor_kgram_start(best, conv_kernel, k, tokens.size()), k,
                      ExplainMethod::Attention, label_code, a[best]);
}

// Importance of position i: sum of beta_{label,j} over filters j whose
// max-pool argmax is i. Positions never selected are excluded.
inline std::map<std::size_t, double> maxpool_importance(const std::vector<std::size_t>& argmax,
                                                        std::span<const double> beta) {
  std::map<std::size_t, double> imp;
  for (std::size_t j = 0; j < argmax.size(); ++j) imp[argmax[j]] += beta[j];
  return imp;
}

inline Snippet explain_maxpool(const ForwardTrace& trace, std::size_t label, const Matrix& out_weight,
                               std::size_t conv_kernel, const std::vector<std::string>& tokens,
                               const std::string& label_code, std::size_t k = kDefaultSnippetK) {
  if (trace.kind != ModelKind::MaxPoolCnn) throw UsageError("explain_maxpool needs a max-pool CNN trace");
  if (tokens.size() != trace.length()) throw DataError("explain_maxpool: token/trace length mismatch");
  const auto imp = maxpool_importance(trace.pooled.argmax, out_weight.row(label));
  auto best = imp.begin();
  for (auto it = imp.begin(); it != imp.end(); ++it)
    if (it->second > best->second) best = it;
  return make_snippet(tokens, anchor_kgram_start(best->first, conv_kernel, k, tokens.size()), k,
                      ExplainMethod::MaxPoolImportance, label_code, best->second);
}

// Window of width k maximizing the sum of the label's LR coefficients.
inline Snippet explain_lr(const std::vector<TokenId>& token_ids, const std::vector<std::string>& tokens,
                          std::size_t label, const LrParams& params, const std::string& label_code,
                          std::size_t k = kDefaultSnippetK) {
  if (token_ids.empty() || token_ids.size() != tokens.size()) {
    throw DataError("explain_lr: token ids and tokens must be non-empty and aligned");
  }
  const std::size_t len = std::min(k, token_ids.size());
  const std::size_t windows = token_ids.size() - len + 1;
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < windows; ++s) {
    double score = 0.0;
    for (std::size_t t = s; t < s + len; ++t) score += params.weight(label, token_ids[t]);
    if (score > best_score) {
      best_score = score;
      best = s;
    }
  }
  return make_snippet(tokens, best, k, ExplainMethod::LrWeights, label_code, best_score);
}

// idf(t) = ln((1 + D) / (1 + df(t))) + 1 over stemmed terms, where the D
// "documents" are all notes plus all code descriptions.
class IdfTable {
 public:
  void add_document(const std::vector<std::string>& tokens) {
    std::vector<std::string> terms;
    terms.reserve(tokens.size());
    for (const auto& t : tokens) terms.push_back(porter_stem(t));
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    for (auto& t : terms) ++df_[std::move(t)];
    ++documents_;
  }
  void add_text(std::string_view text) { add_document(tokenize(text)); }

  std::size_t documents() const { return documents_; }

  double idf(const std::string& stemmed) const {
    auto it = df_.find(stemmed);
    const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((1.0 + static_cast<double>(documents_)) / (1.0 + df)) + 1.0;
  }

 private:
  std::map<std::string, std::size_t> df_;
  std::size_t documents_ = 0;
};

using TermVector = std::map<std::string, double>;

inline TermVector idf_vector(std::span<const std::string> tokens, const IdfTable& idf) {
  TermVector v;
  for (const auto& t : tokens) v[porter_stem(t)] += 1.0;
  for (auto& [term, w] : v) w *= idf.idf(term);
  return v;
}

inline double cosine(const TermVector& a, const TermVector& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, w] : a) {
    na += w * w;
    auto it = b.find(t);
    if (it != b.end()) num += w * it->second;
  }
  for (const auto& [t, w] : b) nb += w * w;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return num / (std::sqrt(na) * std::sqrt(nb));
}

// Highest idf-weighted cosine between a stemmed k-gram and the stemmed
// description; first occurrence wins ties. Absent when no k-gram scores
// above zero.
inline std::optional<Snippet> explain_cosine(const std::vector<std::string>& tokens,
                                             const std::string& label_code, std::string_view description,
                                             const IdfTable& idf, std::size_t k = kDefaultSnippetK) {
  if (tokens.empty()) return std::nullopt;
  const auto desc_tokens = tokenize(description);
  const TermVector desc = idf_vector(desc_tokens, idf);
  const std::size_t len = std::min(k, tokens.size());
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t s = 0; s + len <= tokens.size(); ++s) {
    const double score = cosine(idf_vector(std::span(tokens).subspan(s, len), idf), desc);
    if (score > best_score) {
      best_score = score;
      best = s;
    }
  }
  if (!(best_score > 0.0)) return std::nullopt;
  return make_snippet(tokens, best, k, ExplainMethod::CosineSim, label_code, best_score);
}

// ---------------------------------------------------------------------------
// Blind review sheets

struct ReviewEntry {
  std::string entry_id;
  std::vector<std::string> left_context;
  std::vector<std::string> kgram;
  std::vector<std::string> right_context;
};

struct ReviewSheet {
  std::string sheet_id;  // "<doc_id>/<code>"
  std::string doc_id;
  std::string code;
  std::string description;
  std::vector<ReviewEntry> entries;
};

// entry_id -> method, kept apart from the sheet.
using BlindKey = std::map<std::string, std::string>;

struct ReviewSheetBundle {
  ReviewSheet sheet;
  BlindKey key;
};

inline ReviewSheetBundle build_review_sheet(const std::string& doc_id, const std::string& code,
                                            const std::string& description,
                                            const std::vector<Snippet>& snippets, std::uint64_t seed) {
  if (snippets.size() < 2) throw UsageError("build_review_sheet: need snippets from at least two methods");
  std::vector<std::size_t> order(snippets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng(seed).derive("review:" + doc_id + "/" + code);
  rng.shuffle(order);
  ReviewSheetBundle out;
  out.sheet.sheet_id = doc_id + "/" + code;
  out.sheet.doc_id = doc_id;
  out.sheet.code = code;
  out.sheet.description = description;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Snippet& s = snippets[order[i]];
    ReviewEntry e{std::string(1, static_cast<char>('A' + i)), s.left_context, s.kgram, s.right_context};
    out.key[e.entry_id] = std::string(to_string(s.method));
    out.sheet.entries.push_back(std::move(e));
  }
  return out;
}

inline nlohmann::json to_json(const Snippet& s) {
  return {{"method", std::string(to_string(s.method))},
          {"label", s.label},
          {"start", s.start},
          {"k", s.k},
          {"kgram", s.kgram},
          {"left_context", s.left_context},
          {"right_context", s.right_context},
          {"score", s.score}};
}

inline nlohmann::json to_json(const ReviewSheet& sheet) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : sheet.entries) {
    entries.push_back({{"entry_id", e.entry_id},
                       {"left_context", e.left_context},
                       {"kgram", e.kgram},
                       {"right_context", e.right_context}});
  }
  return {{"sheet_id", sheet.sheet_id},
          {"doc_id", sheet.doc_id},
          {"code", sheet.code},
          {"description", sheet.description},
          {"entries", entries}};
}

// Review block: the code and its description, then one line per
// snippet with the k-gram in bold and five words of context either side.
inline std::string render_markdown(const ReviewSheet& sheet) {
  std::ostringstream os;
  os << "**" << sheet.code << "**: \"" << sheet.description << "\" (document " << sheet.doc_id << ")\n\n";
  for (const auto& e : sheet.entries) {
    os << "- " << e.entry_id << ": *..." << join_tokens(e.left_context) << "* **" << join_tokens(e.kgram)
       << "** *" << join_tokens(e.right_context) << "...*\n";
  }
  return os.str();
}

}  // namespace caml
