#include "duc/metrics.hpp"

#include "duc/error.hpp"
#include "duc/parallel.hpp"

#include <cmath>
#include <set>
#include <tuple>

namespace duc {

NgramProfile ngram_profile(std::span<const TokenId> seq, int n) {
  if (n < 1) throw ParameterError("n: must be at least 1, got " + std::to_string(n));
  NgramProfile p;
  p.n = n;
  const auto len = static_cast<long>(seq.size());
  for (long i = 0; i + n <= len; ++i) {
    ++p.counts[TokenSeq(seq.begin() + i, seq.begin() + i + n)];
    ++p.total;
  }
  return p;
}

double repeat_score(std::span<const TokenId> seq, int n, double w) {
  if (n < 1) throw ParameterError("n: must be at least 1, got " + std::to_string(n));
  if (!(w > 0.0)) throw ParameterError("w: must be positive");
  const auto profile = ngram_profile(seq, n);
  double repeated = 0.0;
  double total = 0.0;
  for (const auto& [gram, f] : profile.counts) {
    const double weighted = std::pow(static_cast<double>(std::max(f, 1L)), w);
    total += weighted;
    if (f > 1) repeated += weighted;
  }
  return total > 0.0 ? repeated / total : 0.0;
}

double self_bleu(const std::vector<TokenSeq>& segments) {
  if (segments.size() < 2) return 0.0;
  // Number of segments each type occurs in.
  std::map<TokenId, int> segment_count;
  std::vector<std::set<TokenId>> types(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    types[i].insert(segments[i].begin(), segments[i].end());
    for (auto t : types[i]) ++segment_count[t];
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].empty()) continue;
    long matched = 0;
    for (auto t : segments[i])
      if (segment_count[t] > 1) ++matched;
    sum += static_cast<double>(matched) / static_cast<double>(segments[i].size());
  }
  return sum / static_cast<double>(segments.size());
}

double entropy_norm(std::span<const TokenId> seq, int n) {
  if (seq.empty()) throw ParameterError("entropy_norm: empty sequence");
  const auto profile = ngram_profile(seq, n);
  if (profile.total <= 1 || profile.counts.size() <= 1) return 0.0;
  const double total = static_cast<double>(profile.total);
  double h = 0.0;
  for (const auto& [gram, f] : profile.counts) {
    const double p = static_cast<double>(f) / total;
    h -= p * std::log2(p);
  }
  return h / std::log2(total);
}

namespace {

bool ends_sentence(const std::string& w) {
  if (w.empty()) return false;
  const char c = w.back();
  return c == '.' || c == '!' || c == '?';
}

template <typename T, typename IsEnd>
std::vector<std::vector<T>> split_after(std::span<const T> seq, IsEnd is_end) {
  std::vector<std::vector<T>> out;
  std::vector<T> current;
  for (const auto& t : seq) {
    current.push_back(t);
    if (is_end(t)) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

}  // namespace

std::vector<Words> sentence_split(std::span<const std::string> words) {
  return split_after(words, ends_sentence);
}

std::vector<TokenSeq> sentence_split(std::span<const TokenId> seq, const Vocabulary& vocab) {
  return split_after(seq, [&](TokenId t) { return ends_sentence(vocab.token(t)); });
}

MetricReport measure(std::span<const TokenId> seq, const Vocabulary& vocab, int n, double w) {
  MetricReport r;
  r.n = n;
  r.weight_w = w;
  r.repeat_score = repeat_score(seq, n, w);
  r.self_bleu = self_bleu(sentence_split(seq, vocab));
  r.entropy_norm = seq.empty() ? 0.0 : entropy_norm(seq, n);
  return r;
}

std::string to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::Repeat: return "repeat";
    case MetricKind::SelfBleu: return "bleu";
    case MetricKind::Entropy: return "entropy";
  }
  return "?";
}

MetricKind metric_kind_from_string(const std::string& s) {
  if (s == "repeat") return MetricKind::Repeat;
  if (s == "bleu") return MetricKind::SelfBleu;
  if (s == "entropy") return MetricKind::Entropy;
  throw ParameterError("unknown metric '" + s + "' (expected repeat, bleu or entropy)");
}

namespace {

struct CellKey {
  std::string scenario;
  int n_start;
  int group_size;
  auto operator<=>(const CellKey&) const = default;
};

double metric_value(MetricKind kind, const TokenSeq& seq, const std::vector<TokenSeq>& segments, int n, double w) {
  switch (kind) {
    case MetricKind::Repeat: return repeat_score(seq, n, w);
    case MetricKind::SelfBleu: return self_bleu(segments);
    case MetricKind::Entropy: return seq.empty() ? 0.0 : entropy_norm(seq, n);
  }
  return 0.0;
}

}  // namespace

CurveTable metric_curves(const std::vector<RepetitionSample>& dataset, const CurveOptions& options,
                         const DatasetSpec* expected) {
  Vocabulary vocab;
  std::map<CellKey, std::vector<TokenSeq>> cells;
  for (const auto& s : dataset) {
    TokenSeq ids;
    ids.reserve(s.tokens.size());
    for (const auto& w : s.tokens) ids.push_back(vocab.add(w));
    if (s.scenario == Scenario::TokenRepetition) {
      cells[{"token", s.n_start, s.group_size}].push_back(std::move(ids));
    } else {
      const auto original_len = ids.size() / static_cast<std::size_t>(std::max(1, s.repeat_count));
      cells[{"paragraph_original", 0, 0}].emplace_back(ids.begin(), ids.begin() + static_cast<long>(original_len));
      cells[{"paragraph_repeated", 0, 0}].push_back(std::move(ids));
    }
  }

  CurveTable table;
  if (expected) {
    for (int n : expected->n_grid)
      for (int m : expected->m_values)
        if (!cells.count({"token", n, m})) ++table.empty_cells;
    if (expected->paragraph_samples > 0 && !cells.count({"paragraph_repeated", 0, 0})) table.empty_cells += 2;
  }

  std::vector<std::pair<CellKey, const std::vector<TokenSeq>*>> ordered;
  for (const auto& [key, seqs] : cells) ordered.emplace_back(key, &seqs);
  // Token cells first (N, M ascending), then the paragraph variants.
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    const bool a_token = a.first.scenario == "token";
    const bool b_token = b.first.scenario == "token";
    if (a_token != b_token) return a_token;
    return a.first < b.first;
  });

  std::vector<std::vector<CurveRow>> per_cell(ordered.size());
  parallel_for(ordered.size(), [&](std::size_t c) {
    const auto& [key, seqs] = ordered[c];
    std::vector<std::vector<TokenSeq>> segments;
    segments.reserve(seqs->size());
    for (const auto& seq : *seqs) segments.push_back(sentence_split(seq, vocab));
    for (auto kind : options.metrics) {
      std::vector<int> sizes = options.ngram_sizes;
      if (kind == MetricKind::SelfBleu) sizes = {1};
      for (int n : sizes) {
        CurveRow row{key.scenario, key.n_start, key.group_size, kind, n, 0.0, 0.0, 0};
        double sum = 0.0;
        double sum_sq = 0.0;
        for (std::size_t i = 0; i < seqs->size(); ++i) {
          const double v = metric_value(kind, (*seqs)[i], segments[i], n, options.weight_w);
          sum += v;
          sum_sq += v * v;
        }
        row.count = static_cast<long>(seqs->size());
        row.mean = sum / static_cast<double>(row.count);
        row.std = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(row.count) - row.mean * row.mean));
        per_cell[c].push_back(row);
      }
    }
  });
  for (auto& rows : per_cell) table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  return table;
}

}  // namespace duc
