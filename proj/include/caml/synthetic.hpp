#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "caml/corpus.hpp"
#include "caml/numerics.hpp"

// Planted-trigger corpora: every label is caused by one fixed 4-token
// phrase inserted into filler text, so the ground-truth evidence for each
// (document, label) pair is known exactly.

namespace caml {

struct SyntheticConfig {
  std::size_t documents = 400;
  std::size_t labels = 20;
  std::size_t filler_words = 220;
  std::size_t trigger_length = 4;
  std::size_t min_length = 60;
  std::size_t max_length = 120;
  std::size_t max_labels_per_doc = 3;
  double label_noise = 0.1;  // chance a document gets one extra, untriggered label
  std::size_t procedure_labels = 5;
  // Labels (by index) whose description is replaced by `shared_description`.
  std::vector<std::size_t> shared_description_labels;
  std::string shared_description = "alpha beta";
  std::uint64_t seed = 7;
};

struct PlantedTrigger {
  std::size_t label = 0;
  std::size_t start = 0;  // token position in the document
};

struct SyntheticCorpus {
  std::vector<RawDocument> documents;
  std::vector<std::string> codes;                   // label index -> code
  std::vector<std::vector<std::string>> triggers;   // label index -> phrase
  std::vector<DescriptionEntry> descriptions;
  std::map<std::string, std::vector<PlantedTrigger>> planted;  // doc_id -> triggers
  std::map<std::string, std::set<std::string>> noise_labels;   // doc_id -> untriggered labels
};

// Distinct pronounceable lowercase words.
inline std::vector<std::string> synthetic_words(std::size_t count, Rng& rng, std::set<std::string>& taken) {
  static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "pl"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  static const char* codas[] = {"", "n", "r", "s", "x", "l", "m"};
  std::vector<std::string> out;
  while (out.size() < count) {
    const std::size_t syllables = 2 + rng.below(2);
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w += onsets[rng.below(std::size(onsets))];
      w += vowels[rng.below(std::size(vowels))];
    }
    w += codas[rng.below(std::size(codas))];
    if (taken.insert(w).second) out.push_back(w);
  }
  return out;
}

inline SyntheticCorpus generate_planted_corpus(const SyntheticConfig& cfg) {
  Rng rng = Rng(cfg.seed).derive("synthetic");
  std::set<std::string> taken{"alpha", "beta"};
  const auto filler = synthetic_words(cfg.filler_words, rng, taken);
  SyntheticCorpus out;
  for (std::size_t l = 0; l < cfg.labels; ++l) {
    out.triggers.push_back(synthetic_words(cfg.trigger_length, rng, taken));
    char code[32];
    if (l < cfg.labels - std::min(cfg.procedure_labels, cfg.labels)) {
      std::snprintf(code, sizeof code, "%03zu.%zu", 300 + l, l % 10);
    } else {
      std::snprintf(code, sizeof code, "%02zu.%zu", 40 + l, l % 10);
    }
    out.codes.emplace_back(code);
  }
  for (std::size_t l = 0; l < cfg.labels; ++l) {
    const bool shared = std::find(cfg.shared_description_labels.begin(), cfg.shared_description_labels.end(), l) !=
                        cfg.shared_description_labels.end();
    const auto& t = out.triggers[l];
    std::string desc = shared ? cfg.shared_description : t[0] + " " + t[2] + " disorder";
    out.descriptions.push_back({out.codes[l], desc, std::nullopt});
  }

  for (std::size_t d = 0; d < cfg.documents; ++d) {
    RawDocument doc;
    char id[32];
    std::snprintf(id, sizeof id, "doc%04zu", d);
    doc.doc_id = id;
    std::snprintf(id, sizeof id, "patient%04zu", d / 2);
    doc.group_id = id;

    const std::size_t n_labels = 1 + rng.below(cfg.max_labels_per_doc);
    std::vector<std::size_t> labels(cfg.labels);
    for (std::size_t l = 0; l < cfg.labels; ++l) labels[l] = l;
    rng.shuffle(labels);
    labels.resize(n_labels);
    std::sort(labels.begin(), labels.end());

    const std::size_t length = cfg.min_length + rng.below(cfg.max_length - cfg.min_length + 1);
    const std::size_t filler_len = length - n_labels * cfg.trigger_length;
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < filler_len; ++i) tokens.push_back(filler[rng.below(filler.size())]);

    // Insertion points into the filler, then place triggers in random order.
    std::vector<std::size_t> cuts;
    for (std::size_t i = 0; i < n_labels; ++i) cuts.push_back(rng.below(filler_len + 1));
    std::sort(cuts.begin(), cuts.end());
    std::vector<std::size_t> placement = labels;
    rng.shuffle(placement);
    std::vector<std::string> text;
    std::size_t cursor = 0;
    auto& planted = out.planted[doc.doc_id];
    for (std::size_t i = 0; i < n_labels; ++i) {
      while (cursor < cuts[i]) text.push_back(tokens[cursor++]);
      planted.push_back({placement[i], text.size()});
      for (const auto& w : out.triggers[placement[i]]) text.push_back(w);
    }
    while (cursor < tokens.size()) text.push_back(tokens[cursor++]);

    for (auto l : labels) doc.labels.push_back(out.codes[l]);
    if (rng.bernoulli(cfg.label_noise) && n_labels < cfg.labels) {
      std::size_t extra;
      do {
        extra = rng.below(cfg.labels);
      } while (std::find(labels.begin(), labels.end(), extra) != labels.end());
      doc.labels.push_back(out.codes[extra]);
      out.noise_labels[doc.doc_id].insert(out.codes[extra]);
    }
    std::sort(doc.labels.begin(), doc.labels.end());
    doc.text = join_tokens(text);
    out.documents.push_back(std::move(doc));
  }
  return out;
}

}  // namespace caml
