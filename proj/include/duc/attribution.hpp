#pragma once

#include "duc/model.hpp"
#include "duc/toy_world.hpp"
#include "duc/vocab.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace duc {

// An induction prompt whose next token should repeat the cycle (`correct`)
// rather than deviate from it (`incorrect`).
struct Template {
  TokenSeq prompt;
  TokenId correct = 0;
  TokenId incorrect = 0;
};

Template encode_template(const ToyTemplate& t, const Vocabulary& vocab);

// Line-delimited JSON {"prompt": [words], "correct": word, "incorrect": word}.
void save_templates(const std::vector<ToyTemplate>& templates, const std::string& path);
std::vector<ToyTemplate> load_templates(const std::string& path);

// Unembedding row of `correct` minus that of `incorrect` (the unembedding is
// tied to the token embedding).
Vectorf diff_direction(const ModelParams<float>& p, TokenId correct, TokenId incorrect);

enum class ResidualReading {
  Decomposed,   // what block l wrote: residual_l - residual_{l-1}
  Accumulated,  // the full residual stream after block l
};

struct AttributionOptions {
  bool apply_final_norm = true;
  ResidualReading reading = ResidualReading::Decomposed;
};

// Per-layer dot product of the last-position residual with the diff
// direction. With the final normalization, decomposed components are centered
// and scaled by the final residual's normalization (gain included, bias
// excluded), so they sum with the embedding term and the bias term to the
// logit difference.
std::vector<double> layer_contributions(const ModelParams<float>& p, const Template& t,
                                        const AttributionOptions& options = {});

struct AttributionResult {
  std::vector<double> contribution;  // mean over templates, one per layer
  std::vector<int> ranked_layers;    // descending contribution, ties to the lower layer
  int templates_used = 0;
  std::vector<std::vector<double>> per_template;
};

// Ranking by descending score, ties broken toward the lower index.
std::vector<int> rank_descending(const std::vector<double>& scores);

AttributionResult rank_layers(const ModelParams<float>& p, const std::vector<Template>& templates,
                              const AttributionOptions& options = {});

// The two highest-ranked layers, or one when the model has a single layer.
std::vector<int> repetition_layers(const AttributionResult& r);

nlohmann::json to_json(const AttributionResult& r);
AttributionResult attribution_from_json(const nlohmann::json& j);
// Columns: layer, mean_contribution, rank (1 = highest).
std::string attribution_csv(const AttributionResult& r);

}  // namespace duc
