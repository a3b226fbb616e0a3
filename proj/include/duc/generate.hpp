#pragma once

#include "duc/model.hpp"

#include <cstdint>
#include <string>

namespace duc {

enum class DecodeStrategy { Greedy, Beam, TopK, TopP };
std::string to_string(DecodeStrategy s);
DecodeStrategy decode_strategy_from_string(const std::string& s);

struct GenerationConfig {
  DecodeStrategy strategy = DecodeStrategy::Greedy;
  int max_new_tokens = 64;
  int beam_width = 4;
  int k = 50;
  double p = 0.9;
  double temperature = 1.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Returns the new tokens only. Generation stops early on <eot>, which is not
// included. Greedy and beam break ties toward the lower token id; beam
// scores are summed log-probabilities without length normalization.
// Throws LengthError when prompt + max_new_tokens exceeds max_seq.
template <typename Scalar>
TokenSeq generate(const ModelParams<Scalar>& p, const TokenSeq& prompt, const GenerationConfig& cfg,
                  const HookSet<Scalar>& hooks = {});

// exp(mean negative log-likelihood of tokens[first_scored..]) under the
// hook-free model, each token conditioned on everything before it.
template <typename Scalar>
double perplexity(const ModelParams<Scalar>& p, const TokenSeq& tokens, int first_scored = 1);

}  // namespace duc
