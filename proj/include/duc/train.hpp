#pragma once

#include "duc/corpus.hpp"
#include "duc/model.hpp"
#include "duc/vocab.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace duc {

// Mean next-token cross-entropy over every position of every sequence in
// `batch` (sequence i predicts tokens 1..len-1 from tokens 0..len-2). When
// `grad` is non-null it receives d(loss)/d(param), overwriting its contents.
template <typename Scalar>
Scalar loss_and_grad(const ModelParams<Scalar>& p, const std::vector<TokenSeq>& batch, ModelParams<Scalar>* grad);

struct LmTrainConfig {
  int steps = 2000;
  int batch = 8;
  double lr = 3e-3;
  int warmup = 100;
  double min_lr_fraction = 0.1;  // cosine floor
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double heldout_fraction = 0.05;
  int heldout_windows = 64;
  std::uint64_t seed = 0;
};

struct LmTrainReport {
  double initial_heldout_loss = 0;
  double final_heldout_loss = 0;
  std::vector<double> train_loss;  // one entry per step
};

// Documents are split into train and held-out parts by position; training
// windows start at a document boundary and run across following documents
// up to max_seq + 1 tokens.
ModelParams<float> train_lm(const ModelConfig& config, const std::vector<TokenSeq>& documents,
                            const LmTrainConfig& train, LmTrainReport* report = nullptr,
                            const std::function<void(int, double)>& progress = {});

// Windows of up to `length` tokens, each starting at a document start.
std::vector<TokenSeq> document_windows(const std::vector<TokenSeq>& documents, int length);

struct LmCorpusOptions {
  double token_repetition_fraction = 0.10;
  double paragraph_repetition_fraction = 0.05;
  double induction_fraction = 0.10;
  std::uint64_t seed = 11;
};

// Training documents: question + answer + <eot> for each corpus record, plus
// answers rewritten by token or paragraph repetition and random-word
// sequences that cycle a group, so the model learns to copy earlier text.
std::vector<TokenSeq> build_lm_documents(const std::vector<RawSample>& corpus, const Vocabulary& vocab,
                                         const LmCorpusOptions& options);

}  // namespace duc
