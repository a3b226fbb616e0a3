#include "duc/generate.hpp"

#include "duc/error.hpp"
#include "duc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace duc {

std::string to_string(DecodeStrategy s) {
  switch (s) {
    case DecodeStrategy::Greedy: return "greedy";
    case DecodeStrategy::Beam: return "beam";
    case DecodeStrategy::TopK: return "topk";
    case DecodeStrategy::TopP: return "topp";
  }
  return "greedy";
}

DecodeStrategy decode_strategy_from_string(const std::string& s) {
  if (s == "greedy") return DecodeStrategy::Greedy;
  if (s == "beam") return DecodeStrategy::Beam;
  if (s == "topk") return DecodeStrategy::TopK;
  if (s == "topp") return DecodeStrategy::TopP;
  throw ParseError("unknown decoding strategy: " + s);
}

void GenerationConfig::validate() const {
  if (max_new_tokens < 0) throw ParameterError("max_new_tokens must be nonnegative");
  if (beam_width < 1) throw ParameterError("beam_width must be at least 1");
  if (k < 1) throw ParameterError("k must be at least 1");
  if (!(p > 0.0 && p <= 1.0)) throw ParameterError("p must lie in (0, 1]");
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
}

namespace {

constexpr TokenId kEot = 1;

template <typename Row>
TokenId argmax(const Row& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits(i) > logits(best)) best = i;
  return static_cast<TokenId>(best);
}

template <typename Row>
std::vector<double> log_softmax(const Row& logits, double temperature = 1.0) {
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  double m = -INFINITY;
  for (Eigen::Index i = 0; i < logits.size(); ++i) m = std::max(m, static_cast<double>(logits(i)) / temperature);
  double z = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) z += std::exp(static_cast<double>(logits(i)) / temperature - m);
  const double lse = m + std::log(z);
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<double>(logits(i)) / temperature - lse;
  return out;
}

// Candidates sorted by descending log-probability, lower id first on ties.
std::vector<TokenId> ranked(const std::vector<double>& logp) {
  std::vector<TokenId> ids(logp.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) {
    return logp[static_cast<std::size_t>(a)] > logp[static_cast<std::size_t>(b)];
  });
  return ids;
}

template <typename Row>
TokenId sample(const Row& logits, const GenerationConfig& cfg, Rng& rng) {
  const auto logp = log_softmax(logits, cfg.temperature);
  const auto order = ranked(logp);
  std::size_t keep = order.size();
  if (cfg.strategy == DecodeStrategy::TopK) {
    keep = std::min<std::size_t>(keep, static_cast<std::size_t>(cfg.k));
  } else {
    double cum = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      cum += std::exp(logp[static_cast<std::size_t>(order[i])]);
      if (cum >= cfg.p) {
        keep = i + 1;
        break;
      }
    }
  }
  double total = 0;
  for (std::size_t i = 0; i < keep; ++i) total += std::exp(logp[static_cast<std::size_t>(order[i])]);
  const double u = rng.uniform() * total;
  double cum = 0;
  for (std::size_t i = 0; i < keep; ++i) {
    cum += std::exp(logp[static_cast<std::size_t>(order[i])]);
    if (u < cum) return order[i];
  }
  return order[keep - 1];
}

template <typename Scalar>
TokenSeq beam_search(const ModelParams<Scalar>& p, const TokenSeq& prompt, const GenerationConfig& cfg,
                     const HookSet<Scalar>& hooks) {
  struct Beam {
    TokenSeq tokens;
    double score = 0;
    bool done = false;
    KvCache<Scalar> cache;
    RowMatrix<Scalar> next_logits;
  };
  Beam root{{}, 0.0, false, KvCache<Scalar>(p.config), {}};
  root.next_logits = step(p, root.cache, prompt, hooks).bottomRows(1);
  std::vector<Beam> beams;
  beams.push_back(std::move(root));

  for (int t = 0; t < cfg.max_new_tokens; ++t) {
    struct Candidate {
      std::size_t beam;
      TokenId token;  // -1 keeps a finished beam as is
      double score;
    };
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      if (beams[b].done) {
        cands.push_back({b, -1, beams[b].score});
        continue;
      }
      const auto logp = log_softmax(beams[b].next_logits.row(0));
      const auto order = ranked(logp);
      for (std::size_t i = 0; i < std::min<std::size_t>(order.size(), static_cast<std::size_t>(cfg.beam_width)); ++i)
        cands.push_back({b, order[i], beams[b].score + logp[static_cast<std::size_t>(order[i])]});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    cands.resize(std::min<std::size_t>(cands.size(), static_cast<std::size_t>(cfg.beam_width)));

    std::vector<Beam> next;
    for (const auto& c : cands) {
      Beam nb = beams[c.beam];
      nb.score = c.score;
      if (c.token >= 0) {
        if (c.token == kEot) {
          nb.done = true;
        } else {
          nb.tokens.push_back(c.token);
          if (t + 1 < cfg.max_new_tokens) nb.next_logits = step(p, nb.cache, TokenSeq{c.token}, hooks);
        }
      }
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
    if (std::all_of(beams.begin(), beams.end(), [](const Beam& b) { return b.done; })) break;
  }
  return beams.front().tokens;
}

}  // namespace

template <typename Scalar>
TokenSeq generate(const ModelParams<Scalar>& p, const TokenSeq& prompt, const GenerationConfig& cfg,
                  const HookSet<Scalar>& hooks) {
  cfg.validate();
  if (prompt.empty()) throw ParameterError("prompt must be non-empty");
  if (static_cast<int>(prompt.size()) + cfg.max_new_tokens > p.config.max_seq)
    throw LengthError("prompt of " + std::to_string(prompt.size()) + " tokens plus " +
                      std::to_string(cfg.max_new_tokens) + " new tokens exceeds max_seq " +
                      std::to_string(p.config.max_seq));
  if (cfg.max_new_tokens == 0) return {};
  if (cfg.strategy == DecodeStrategy::Beam) return beam_search(p, prompt, cfg, hooks);

  Rng rng(cfg.rng_seed);
  KvCache<Scalar> cache(p.config);
  RowMatrix<Scalar> logits = step(p, cache, prompt, hooks).bottomRows(1);
  TokenSeq out;
  for (int t = 0; t < cfg.max_new_tokens; ++t) {
    const TokenId next = cfg.strategy == DecodeStrategy::Greedy ? argmax(logits.row(0)) : sample(logits.row(0), cfg, rng);
    if (next == kEot) break;
    out.push_back(next);
    if (t + 1 < cfg.max_new_tokens) logits = step(p, cache, TokenSeq{next}, hooks);
  }
  return out;
}

template <typename Scalar>
double perplexity(const ModelParams<Scalar>& p, const TokenSeq& tokens, int first_scored) {
  if (tokens.size() < 2) throw ParameterError("perplexity needs at least 2 tokens");
  if (first_scored < 1 || first_scored >= static_cast<int>(tokens.size()))
    throw ParameterError("first_scored must lie in [1, len - 1]");
  const auto logits = forward(p, tokens).logits;
  double nll = 0;
  for (int i = first_scored; i < static_cast<int>(tokens.size()); ++i)
    nll -= log_softmax(logits.row(i - 1))[static_cast<std::size_t>(tokens[static_cast<std::size_t>(i)])];
  return std::exp(nll / (static_cast<int>(tokens.size()) - first_scored));
}

template TokenSeq generate<float>(const ModelParams<float>&, const TokenSeq&, const GenerationConfig&,
                                  const HookSet<float>&);
template TokenSeq generate<double>(const ModelParams<double>&, const TokenSeq&, const GenerationConfig&,
                                   const HookSet<double>&);
template double perplexity<float>(const ModelParams<float>&, const TokenSeq&, int);
template double perplexity<double>(const ModelParams<double>&, const TokenSeq&, int);

}  // namespace duc
