#pragma once

#include "duc/corpus.hpp"
#include "duc/types.hpp"
#include "duc/vocab.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace duc {

// Frequency of every distinct n-gram in a sequence.
struct NgramProfile {
  int n = 1;
  std::map<TokenSeq, long> counts;
  long total = 0;  // number of n-grams, max(0, len - n + 1)
};

NgramProfile ngram_profile(std::span<const TokenId> seq, int n);

// Weighted repetition rate: sum of f^w over n-grams occurring more than once,
// divided by the sum of max(f, 1)^w over all distinct n-grams. Zero when the
// sequence is shorter than n.
double repeat_score(std::span<const TokenId> seq, int n = 1, double w = 1.0);

// Mean over segments of the fraction of a segment's tokens whose type occurs in
// any other segment. Zero with fewer than two segments.
double self_bleu(const std::vector<TokenSeq>& segments);

// Shannon entropy of the n-gram type distribution divided by log2 of the number
// of n-grams. Zero when there is a single n-gram or a single type.
double entropy_norm(std::span<const TokenId> seq, int n = 1);

// Breaks after tokens ending in '.', '!' or '?'. A trailing fragment becomes the
// last segment.
std::vector<Words> sentence_split(std::span<const std::string> words);
std::vector<TokenSeq> sentence_split(std::span<const TokenId> seq, const Vocabulary& vocab);

struct MetricReport {
  double repeat_score = 0.0;
  double self_bleu = 0.0;
  double entropy_norm = 0.0;
  int n = 1;
  double weight_w = 1.0;
};

MetricReport measure(std::span<const TokenId> seq, const Vocabulary& vocab, int n = 1, double w = 1.0);

enum class MetricKind { Repeat, SelfBleu, Entropy };
std::string to_string(MetricKind kind);
MetricKind metric_kind_from_string(const std::string& s);

struct CurveOptions {
  std::vector<int> ngram_sizes{1, 2, 3, 4, 5};
  double weight_w = 1.0;
  std::vector<MetricKind> metrics{MetricKind::Repeat, MetricKind::SelfBleu, MetricKind::Entropy};
};

struct CurveRow {
  std::string scenario;  // "token", "paragraph_repeated" or "paragraph_original"
  int n_start = 0;
  int group_size = 0;
  MetricKind metric = MetricKind::Repeat;
  int n = 1;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  long count = 0;
};

struct CurveTable {
  std::vector<CurveRow> rows;
  long empty_cells = 0;
};

// Per (scenario, N, M, metric, n) mean and deviation across samples. When
// `expected` is given, grid cells without samples are counted in empty_cells.
CurveTable metric_curves(const std::vector<RepetitionSample>& dataset, const CurveOptions& options,
                         const DatasetSpec* expected = nullptr);

}  // namespace duc
