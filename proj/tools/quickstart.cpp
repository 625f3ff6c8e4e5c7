// Library walk-through: planted-trigger corpus -> CAML -> metrics and an
// attention snippet for one test document.

#include <cstdio>

#include "caml/caml.hpp"

int main() {
  using namespace caml;

  SyntheticConfig sc;  // 400 documents, 20 labels
  const SyntheticCorpus corpus = generate_planted_corpus(sc);

  PreprocessConfig pc;
  pc.min_doc_freq = 1;
  const Dataset data = preprocess(corpus.documents, corpus.descriptions, pc);
  std::printf("vocabulary %zu, labels %zu, train/validation/test %zu/%zu/%zu\n", data.vocab.size(),
              data.space.size(), data.train.size(), data.validation.size(), data.test.size());

  TrainConfig cfg = TrainConfig::defaults_for(ModelChoice::Caml);
  cfg.filters = 16;
  cfg.kernel = 4;
  cfg.embed_dim = 32;
  cfg.eta = 0.01;
  cfg.dropout = 0.0;
  cfg.max_epochs = 100;
  const TrainResult result = train(data, cfg, [](const EpochLog& log) {
    std::printf("epoch %2zu  loss %.4f  validation P@8 %.4f\n", log.epoch, log.mean_train_loss,
                log.validation_score);
  });

  const PredictionMatrix pm = score_documents(result.best, data.test, data.space.size());
  std::printf("\n%s\n", format_table(evaluate(pm, &data.space)).c_str());

  const EncodedDocument& doc = data.test.front();
  const ForwardTrace trace = forward(*result.best.neural, doc.token_ids);
  for (std::size_t l = 0; l < data.space.size(); ++l) {
    if (trace.yhat[l] < 0.5) continue;
    const Snippet s = explain_attention(trace, l, cfg.kernel, doc.tokens, data.space.labels[l]);
    std::printf("%s %s (p=%.3f): ...%s [%s] %s...\n", doc.doc_id.c_str(), s.label.c_str(), trace.yhat[l],
                join_tokens(s.left_context).c_str(), join_tokens(s.kgram).c_str(),
                join_tokens(s.right_context).c_str());
  }
  return 0;
}
