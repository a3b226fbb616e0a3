#pragma once

#include "duc/generate.hpp"
#include "duc/sae.hpp"
#include "duc/steering.hpp"
#include "duc/toy_world.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace duc {

enum class FeatureClass { Repetition, Common };
std::string to_string(FeatureClass c);
FeatureClass feature_class_from_string(const std::string& s);

// Repetition exactly when rs >= rho.
FeatureClass classify(double rs, double rho);

struct FeatureRecord {
  int layer = 0;
  int feature_idx = 0;
  double mean_repeat_score = 0;
  FeatureClass cls = FeatureClass::Common;
  double max_activation = 0;
};

struct ScanConfig {
  double rho = 0.4;
  double lambda_scale = 2.0;
  bool lambda_absolute = false;  // lambda_scale is then the raw steering coefficient
  int questions_per_feature = 5;
  int gen_tokens = 64;
  QuestionSet question_set = QuestionSet::EQ;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Steering coefficient for a feature with the given calibrated maximum.
double feature_lambda(double lambda_scale, bool lambda_absolute, double max_activation);

struct SkippedFeature {
  int layer = 0;
  int feature_idx = 0;
  std::string reason;
};

struct ScanResult {
  std::vector<FeatureRecord> records;  // feature order
  std::vector<SkippedFeature> skipped;
};

// Activates each feature in turn (every position, greedy decoding) on
// questions drawn from (seed, feature) and records the mean 1-gram repeat
// score of the generated tokens. Features that never fired are skipped.
ScanResult scan_features(const ModelParams<float>& model, const SaeParams<float>& sae, const FeatureStats& stats,
                         const ScanConfig& cfg, const std::vector<TokenSeq>& questions,
                         const std::function<void(int done, int total)>& progress = {});

// Reclassifies records under a different threshold.
std::vector<FeatureRecord> reclassify(std::vector<FeatureRecord> records, double rho);

std::string feature_records_jsonl(const ScanResult& r);
ScanResult scan_result_from_jsonl(const std::string& text);
// Columns: layer, idx, rs, class, max_act.
std::string feature_records_csv(const std::vector<FeatureRecord>& records);

// Mean metrics of a batch of generations. Perplexity is that of the generated
// tokens (plus <eot> when generation stopped on it) given the prompt, under
// the hook-free model.
struct GenerationStats {
  double repeat_score = 0;
  double entropy = 0;
  double perplexity = 0;
  long generations = 0;
};

using HookFactory = std::function<HookSet<float>(int prompt_length)>;

GenerationStats evaluate_generations(const ModelParams<float>& model, const std::vector<TokenSeq>& prompts,
                                     const GenerationConfig& gcfg, const HookFactory& hooks = {});

struct QuestionDataset {
  std::string name;
  std::vector<TokenSeq> prompts;
};

enum class RatioCondition { Original, ActivatedCF, ActivatedRF, Deactivated };
std::string to_string(RatioCondition c);

struct RatioConfig {
  std::vector<double> ratios{0.1, 0.2, 0.5, 1.0};
  double lambda_scale = 2.0;
  bool lambda_absolute = false;
  SteeringPositions deactivate_positions = SteeringPositions::All;
  int gen_tokens = 64;
  std::uint64_t rng_seed = 0;
};

struct RatioRow {
  std::string dataset;
  int layer = 0;
  RatioCondition condition = RatioCondition::Original;
  double ratio = 0;
  int features = 0;
  GenerationStats stats;
};

struct RatioReport {
  std::vector<RatioRow> rows;
  std::vector<std::string> warnings;
};

// SAEs are looked up by layer; every record's layer needs one.
using SaeSet = std::vector<const SaeParams<float>*>;

// The ratio-r repetition subset: the top ceil(r * |RF|) repetition features
// by mean repeat score (ties to lower layer, then lower index).
std::vector<FeatureRecord> top_repetition_features(const std::vector<FeatureRecord>& records, double ratio);

// One table per SAE layer, in SaeSet order: each layer's repetition subsets
// and an equal number of that layer's common features. Layers without
// repetition features are skipped with a warning.
RatioReport ratio_experiment(const ModelParams<float>& model, const SaeSet& saes, const std::vector<FeatureRecord>& records,
                             const RatioConfig& cfg, const std::vector<QuestionDataset>& datasets);

std::string ratio_csv(const RatioReport& r);

struct MitigationMethod {
  std::string name;  // greedy, beam, topk, topp or duc
  GenerationConfig gen;
};

// Greedy, Beam, TopK and TopP baselines plus DUC (greedy with every
// repetition feature deactivated).
std::vector<MitigationMethod> default_mitigation_methods(int gen_tokens, std::uint64_t seed);

struct MitigationRow {
  std::string dataset;
  std::string method;
  GenerationStats stats;
};

std::vector<MitigationRow> mitigation_eval(const ModelParams<float>& model, const SaeSet& saes,
                                           const std::vector<FeatureRecord>& rf_records,
                                           const std::vector<QuestionDataset>& datasets,
                                           const std::vector<MitigationMethod>& methods,
                                           SteeringPositions deactivate_positions = SteeringPositions::All);

std::string mitigation_csv(const std::vector<MitigationRow>& rows);

// Deactivation hooks for a set of features, grouped per SAE.
HookSet<float> deactivation_hooks(const SaeSet& saes, const std::vector<FeatureRecord>& features,
                                  SteeringPositions positions, int prompt_length);
HookSet<float> activation_hooks(const SaeSet& saes, const std::vector<FeatureRecord>& features, double lambda_scale,
                                bool lambda_absolute);

}  // namespace duc
