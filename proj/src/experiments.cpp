#include "duc/experiments.hpp"

#include "duc/error.hpp"
#include "duc/metrics.hpp"
#include "duc/parallel.hpp"
#include "duc/report.hpp"
#include "duc/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <sstream>

namespace duc {

std::string to_string(FeatureClass c) { return c == FeatureClass::Repetition ? "repetition" : "common"; }

FeatureClass feature_class_from_string(const std::string& s) {
  if (s == "repetition") return FeatureClass::Repetition;
  if (s == "common") return FeatureClass::Common;
  throw ParseError("unknown feature class '" + s + "'");
}

FeatureClass classify(double rs, double rho) { return rs >= rho ? FeatureClass::Repetition : FeatureClass::Common; }

void ScanConfig::validate() const {
  if (!(rho > 0 && rho < 1)) throw ParameterError("rho must lie in (0, 1)");
  if (!(lambda_scale > 0)) throw ParameterError("lambda_scale must be positive");
  if (questions_per_feature < 1) throw ParameterError("questions_per_feature must be at least 1");
  if (gen_tokens < 1) throw ParameterError("gen_tokens must be at least 1");
}

double feature_lambda(double lambda_scale, bool lambda_absolute, double max_activation) {
  return lambda_absolute ? lambda_scale : lambda_scale * max_activation;
}

namespace {

struct Generated {
  TokenSeq tokens;
  bool stopped = false;  // ended on <eot>
};

Generated run_one(const ModelParams<float>& model, const TokenSeq& prompt, const GenerationConfig& gcfg,
                  const HookSet<float>& hooks) {
  Generated g;
  g.tokens = generate(model, prompt, gcfg, hooks);
  g.stopped = static_cast<int>(g.tokens.size()) < gcfg.max_new_tokens;
  return g;
}

GenerationConfig greedy(int tokens) {
  GenerationConfig g;
  g.strategy = DecodeStrategy::Greedy;
  g.max_new_tokens = tokens;
  return g;
}

}  // namespace

ScanResult scan_features(const ModelParams<float>& model, const SaeParams<float>& sae, const FeatureStats& stats,
                         const ScanConfig& cfg, const std::vector<TokenSeq>& questions,
                         const std::function<void(int, int)>& progress) {
  cfg.validate();
  if (questions.empty()) throw ParameterError("feature scan needs at least one question");
  const int F = sae.features();
  if (static_cast<int>(stats.max_activation.size()) != F)
    throw DimensionError("feature stats cover " + std::to_string(stats.max_activation.size()) + " features, SAE has " +
                         std::to_string(F));

  std::vector<std::optional<FeatureRecord>> slot(static_cast<std::size_t>(F));
  std::atomic<int> done{0};
  std::mutex progress_mutex;
  const GenerationConfig gcfg = greedy(cfg.gen_tokens);
  parallel_for(static_cast<std::size_t>(F), [&](std::size_t i) {
    const int idx = static_cast<int>(i);
    const double max_act = stats.max_activation[i];
    if (max_act > 0) {
      SteeringSpec spec;
      spec.layer = sae.layer;
      spec.feature_idx = idx;
      spec.lambda = feature_lambda(cfg.lambda_scale, cfg.lambda_absolute, max_act);
      const HookSet<float> hooks = steering_hooks(sae, {spec});
      Rng rng(derive_seed(cfg.rng_seed, 0x5ca7, i));
      double rs = 0;
      for (int q = 0; q < cfg.questions_per_feature; ++q) {
        const TokenSeq& prompt = questions[rng.below(questions.size())];
        rs += repeat_score(generate(model, prompt, gcfg, hooks), 1, 1.0);
      }
      rs /= cfg.questions_per_feature;
      slot[i] = FeatureRecord{sae.layer, idx, rs, classify(rs, cfg.rho), max_act};
    }
    if (progress) {
      const int d = ++done;
      std::lock_guard lock(progress_mutex);
      progress(d, F);
    }
  });

  ScanResult r;
  for (int i = 0; i < F; ++i) {
    if (slot[static_cast<std::size_t>(i)]) r.records.push_back(*slot[static_cast<std::size_t>(i)]);
    else r.skipped.push_back({sae.layer, i, "never fired during calibration"});
  }
  return r;
}

std::vector<FeatureRecord> reclassify(std::vector<FeatureRecord> records, double rho) {
  for (auto& r : records) r.cls = classify(r.mean_repeat_score, rho);
  return records;
}

std::string feature_records_jsonl(const ScanResult& r) {
  std::string out;
  for (const auto& f : r.records)
    out += nlohmann::json{{"layer", f.layer},
                          {"idx", f.feature_idx},
                          {"rs", f.mean_repeat_score},
                          {"class", to_string(f.cls)},
                          {"max_act", f.max_activation}}
               .dump() +
           "\n";
  for (const auto& s : r.skipped)
    out += nlohmann::json{{"layer", s.layer}, {"idx", s.feature_idx}, {"skipped", s.reason}}.dump() + "\n";
  return out;
}

ScanResult scan_result_from_jsonl(const std::string& text) {
  ScanResult r;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("skipped")) {
        r.skipped.push_back({j.at("layer").get<int>(), j.at("idx").get<int>(), j.at("skipped").get<std::string>()});
      } else {
        r.records.push_back({j.at("layer").get<int>(), j.at("idx").get<int>(), j.at("rs").get<double>(),
                             feature_class_from_string(j.at("class").get<std::string>()), j.at("max_act").get<double>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("feature records line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return r;
}

std::string feature_records_csv(const std::vector<FeatureRecord>& records) {
  CsvTable t({"layer", "idx", "rs", "class", "max_act"});
  for (const auto& f : records)
    t.add({std::to_string(f.layer), std::to_string(f.feature_idx), fmt(f.mean_repeat_score), to_string(f.cls),
           fmt(f.max_activation)});
  return t.str();
}

GenerationStats evaluate_generations(const ModelParams<float>& model, const std::vector<TokenSeq>& prompts,
                                     const GenerationConfig& gcfg, const HookFactory& hooks) {
  gcfg.validate();
  struct One {
    double rs = 0, ent = 0, ppl = 0;
  };
  std::vector<One> out(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    GenerationConfig g = gcfg;
    g.rng_seed = derive_seed(gcfg.rng_seed, 0x9e2, i);
    const TokenSeq& prompt = prompts[i];
    const Generated gen = run_one(model, prompt, g, hooks ? hooks(static_cast<int>(prompt.size())) : HookSet<float>{});
    TokenSeq full = prompt;
    full.insert(full.end(), gen.tokens.begin(), gen.tokens.end());
    if (gen.stopped) full.push_back(1);  // <eot>
    One o;
    o.rs = repeat_score(gen.tokens, 1, 1.0);
    o.ent = gen.tokens.empty() ? 0.0 : entropy_norm(gen.tokens, 1);
    o.ppl = full.size() > prompt.size() ? perplexity(model, full, static_cast<int>(prompt.size())) : 1.0;
    out[i] = o;
  });
  GenerationStats s;
  for (const auto& o : out) {
    s.repeat_score += o.rs;
    s.entropy += o.ent;
    s.perplexity += o.ppl;
  }
  s.generations = static_cast<long>(out.size());
  if (!out.empty()) {
    s.repeat_score /= static_cast<double>(out.size());
    s.entropy /= static_cast<double>(out.size());
    s.perplexity /= static_cast<double>(out.size());
  }
  return s;
}

std::string to_string(RatioCondition c) {
  switch (c) {
    case RatioCondition::Original: return "original";
    case RatioCondition::ActivatedCF: return "activated_CF";
    case RatioCondition::ActivatedRF: return "activated_RF";
    case RatioCondition::Deactivated: return "deactivated";
  }
  return "?";
}

namespace {

const SaeParams<float>& sae_for(const SaeSet& saes, int layer) {
  for (const auto* s : saes)
    if (s && s->layer == layer) return *s;
  throw ParameterError("no SAE for layer " + std::to_string(layer));
}

std::vector<int> layers_of(const std::vector<FeatureRecord>& features) {
  std::vector<int> layers;
  for (const auto& f : features)
    if (std::find(layers.begin(), layers.end(), f.layer) == layers.end()) layers.push_back(f.layer);
  std::sort(layers.begin(), layers.end());
  return layers;
}

bool stronger(const FeatureRecord& a, const FeatureRecord& b) {
  if (a.mean_repeat_score != b.mean_repeat_score) return a.mean_repeat_score > b.mean_repeat_score;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.feature_idx < b.feature_idx;
}

std::size_t subset_size(std::size_t n, double ratio) {
  return std::min(n, static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9)));
}

}  // namespace

HookSet<float> deactivation_hooks(const SaeSet& saes, const std::vector<FeatureRecord>& features,
                                  SteeringPositions positions, int prompt_length) {
  HookSet<float> hooks;
  for (int layer : layers_of(features)) {
    std::vector<SteeringSpec> specs;
    for (const auto& f : features)
      if (f.layer == layer) specs.push_back({layer, f.feature_idx, 0.0, SteeringMode::Deactivate, positions});
    auto h = steering_hooks(sae_for(saes, layer), specs, prompt_length);
    hooks.insert(hooks.end(), h.begin(), h.end());
  }
  return hooks;
}

HookSet<float> activation_hooks(const SaeSet& saes, const std::vector<FeatureRecord>& features, double lambda_scale,
                                bool lambda_absolute) {
  HookSet<float> hooks;
  for (int layer : layers_of(features)) {
    std::vector<SteeringSpec> specs;
    for (const auto& f : features)
      if (f.layer == layer)
        specs.push_back({layer, f.feature_idx, feature_lambda(lambda_scale, lambda_absolute, f.max_activation),
                         SteeringMode::Activate, SteeringPositions::All});
    auto h = steering_hooks(sae_for(saes, layer), specs, 0);
    hooks.insert(hooks.end(), h.begin(), h.end());
  }
  return hooks;
}

std::vector<FeatureRecord> top_repetition_features(const std::vector<FeatureRecord>& records, double ratio) {
  std::vector<FeatureRecord> rf;
  for (const auto& r : records)
    if (r.cls == FeatureClass::Repetition) rf.push_back(r);
  std::sort(rf.begin(), rf.end(), stronger);
  rf.resize(subset_size(rf.size(), ratio));
  return rf;
}

RatioReport ratio_experiment(const ModelParams<float>& model, const SaeSet& saes, const std::vector<FeatureRecord>& records,
                             const RatioConfig& cfg, const std::vector<QuestionDataset>& datasets) {
  if (top_repetition_features(records, 1.0).empty()) throw ParameterError("no repetition features to steer");
  const GenerationConfig gcfg = greedy(cfg.gen_tokens);
  RatioReport rep;
  std::vector<GenerationStats> original;
  for (const auto& ds : datasets) original.push_back(evaluate_generations(model, ds.prompts, gcfg));

  for (const auto* sae : saes) {
    const int layer = sae->layer;
    std::vector<FeatureRecord> own, cf;
    for (const auto& r : records)
      if (r.layer == layer) {
        own.push_back(r);
        if (r.cls == FeatureClass::Common) cf.push_back(r);
      }
    if (top_repetition_features(own, 1.0).empty()) {
      rep.warnings.push_back("layer " + std::to_string(layer) + " has no repetition features; skipped");
      continue;
    }
    // One seeded permutation per layer; every ratio takes a prefix, so subsets nest.
    Rng rng(derive_seed(cfg.rng_seed, 0xcf, static_cast<std::uint64_t>(layer)));
    rng.shuffle(cf.begin(), cf.end());

    for (std::size_t d = 0; d < datasets.size(); ++d) {
      const auto& ds = datasets[d];
      for (double ratio : cfg.ratios) {
        const auto rf = top_repetition_features(own, ratio);
        if (rf.empty()) {
          rep.warnings.push_back("layer " + std::to_string(layer) + ", ratio " + fmt(ratio) +
                                 " selects no repetition features; row skipped");
          continue;
        }
        rep.rows.push_back({ds.name, layer, RatioCondition::Original, ratio, 0, original[d]});
        if (cf.size() < rf.size())
          rep.warnings.push_back("layer " + std::to_string(layer) + ", ratio " + fmt(ratio) + ": only " +
                                 std::to_string(cf.size()) + " common features for " + std::to_string(rf.size()) +
                                 " repetition features");
        const std::vector<FeatureRecord> cf_sub(cf.begin(),
                                                cf.begin() + static_cast<long>(std::min(cf.size(), rf.size())));
        if (!cf_sub.empty()) {
          const auto h = activation_hooks(saes, cf_sub, cfg.lambda_scale, cfg.lambda_absolute);
          rep.rows.push_back({ds.name, layer, RatioCondition::ActivatedCF, ratio, static_cast<int>(cf_sub.size()),
                              evaluate_generations(model, ds.prompts, gcfg, [&](int) { return h; })});
        }
        const auto ha = activation_hooks(saes, rf, cfg.lambda_scale, cfg.lambda_absolute);
        rep.rows.push_back({ds.name, layer, RatioCondition::ActivatedRF, ratio, static_cast<int>(rf.size()),
                            evaluate_generations(model, ds.prompts, gcfg, [&](int) { return ha; })});
        rep.rows.push_back(
            {ds.name, layer, RatioCondition::Deactivated, ratio, static_cast<int>(rf.size()),
             evaluate_generations(model, ds.prompts, gcfg, [&](int prompt_length) {
               return deactivation_hooks(saes, rf, cfg.deactivate_positions, prompt_length);
             })});
      }
    }
  }
  return rep;
}

std::string ratio_csv(const RatioReport& r) {
  CsvTable t({"dataset", "layer", "condition", "ratio", "features", "repeat_score", "entropy", "perplexity",
              "generations"});
  for (const auto& row : r.rows)
    t.add({row.dataset, std::to_string(row.layer), to_string(row.condition), fmt(row.ratio), std::to_string(row.features),
           fmt(row.stats.repeat_score), fmt(row.stats.entropy), fmt(row.stats.perplexity),
           std::to_string(row.stats.generations)});
  return t.str();
}

std::vector<MitigationMethod> default_mitigation_methods(int gen_tokens, std::uint64_t seed) {
  std::vector<MitigationMethod> m;
  for (auto [name, strategy] : {std::pair{"greedy", DecodeStrategy::Greedy},
                                {"beam", DecodeStrategy::Beam},
                                {"topk", DecodeStrategy::TopK},
                                {"topp", DecodeStrategy::TopP},
                                {"duc", DecodeStrategy::Greedy}}) {
    GenerationConfig g;
    g.strategy = strategy;
    g.max_new_tokens = gen_tokens;
    g.rng_seed = derive_seed(seed, 0x317);
    m.push_back({name, g});
  }
  return m;
}

std::vector<MitigationRow> mitigation_eval(const ModelParams<float>& model, const SaeSet& saes,
                                           const std::vector<FeatureRecord>& rf_records,
                                           const std::vector<QuestionDataset>& datasets,
                                           const std::vector<MitigationMethod>& methods,
                                           SteeringPositions deactivate_positions) {
  if (rf_records.empty()) throw ParameterError("mitigation needs at least one repetition feature");
  std::vector<MitigationRow> rows;
  for (const auto& ds : datasets)
    for (const auto& m : methods) {
      HookFactory hooks;
      if (m.name == "duc")
        hooks = [&](int prompt_length) { return deactivation_hooks(saes, rf_records, deactivate_positions, prompt_length); };
      rows.push_back({ds.name, m.name, evaluate_generations(model, ds.prompts, m.gen, hooks)});
    }
  return rows;
}

std::string mitigation_csv(const std::vector<MitigationRow>& rows) {
  CsvTable t({"dataset", "method", "repeat_score", "entropy", "perplexity", "generations"});
  for (const auto& r : rows)
    t.add({r.dataset, r.method, fmt(r.stats.repeat_score), fmt(r.stats.entropy), fmt(r.stats.perplexity),
           std::to_string(r.stats.generations)});
  return t.str();
}

}  // namespace duc
