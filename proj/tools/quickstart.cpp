// Train a small slot aligner on synthetic utterances, then ask for the
// timestamps of a few chosen tokens of a held-out utterance.
//
//   quickstart [steps]

#include <cstdlib>
#include <iostream>

#include "slotalign/aligner.hpp"
#include "slotalign/config.hpp"

using namespace slotalign;

int main(int argc, char** argv) {
  RunConfig cfg;
  cfg.corpus.vocab_size = 8;
  cfg.corpus.mix_target_range_ms = {1000, 4000};
  cfg.train.count = 200;
  cfg.train.mix_fraction = 0.0;
  cfg.aligner.model_dim = 32;
  cfg.schedule.steps = argc > 1 ? std::atoi(argv[1]) : 3000;
  cfg.schedule.warmup_steps = 100;
  cfg.schedule.peak_lr = 3e-3;
  cfg.schedule.log_every = 500;
  cfg.resolve();

  const PrototypeTable protos(cfg.corpus);
  const auto corpus = build_train_corpus(cfg.corpus, protos, cfg.train);

  AlignerModel<float> model(cfg.aligner);
  train(model, corpus, cfg.schedule, [](const TraceRow& r) {
    std::cout << "step " << r.step << "  loss " << r.loss << '\n';
  });

  Rng rng(123);
  const Utterance u = gen_utterance(cfg.corpus, protos, rng, "held-out");
  // slots only after the first and last token
  const std::vector<std::int32_t> wanted{0, static_cast<std::int32_t>(u.tokens.size()) - 1};
  const AlignmentResult r = model.align(u, wanted);

  std::cout << "\ntoken  predicted (ms)   gold (ms)\n";
  for (const auto& t : r.tokens) {
    const auto& g = u.gold_spans[static_cast<std::size_t>(t.token_index)];
    std::cout << t.token_index << "      [" << t.start_ms << ", " << t.end_ms << ")       [" << g.start_ms << ", "
              << g.end_ms << ")\n";
  }
  std::cout << "forward passes: " << r.forward_passes << ", " << r.elapsed_ms << " ms\n";
}
