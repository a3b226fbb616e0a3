#include "duc/error.hpp"
#include "duc/experiments.hpp"
#include "duc/metrics.hpp"
#include "duc/report.hpp"
#include "duc/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace duc;

namespace {

ModelParams<float> random_model(std::uint64_t seed) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 24;
  c.max_seq = 40;
  c.rng_seed = seed;
  auto p = init_params<float>(c);
  Rng rng(seed + 3);
  p.for_each([&](const std::string& name, RowMatrixf& t) {
    const bool gain = name.find("_g") != std::string::npos;
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>((gain ? 1.0 : 0.0) + 0.5 * rng.normal());
  });
  return p;
}

SaeParams<float> random_sae(int F, int D, int layer, std::uint64_t seed) {
  Rng rng(seed);
  SaeParams<float> s;
  s.layer = layer;
  s.w_enc.resize(F, D);
  s.w_dec.resize(F, D);
  s.b_enc.resize(1, F);
  s.b_dec.resize(1, D);
  for (auto* m : {&s.w_enc, &s.w_dec, &s.b_enc, &s.b_dec})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<float>(rng.normal());
  s.w_dec.rowwise().normalize();
  return s;
}

std::vector<TokenSeq> prompts(std::uint64_t seed, int count) {
  Rng rng(seed);
  std::vector<TokenSeq> out;
  for (int i = 0; i < count; ++i) {
    TokenSeq p;
    const int len = 3 + static_cast<int>(rng.below(4));
    for (int k = 0; k < len; ++k) p.push_back(static_cast<TokenId>(2 + rng.below(22)));
    out.push_back(p);
  }
  return out;
}

std::vector<FeatureRecord> synthetic_records(std::uint64_t seed, int n, double rho) {
  Rng rng(seed);
  std::vector<FeatureRecord> out;
  for (int i = 0; i < n; ++i) {
    const double rs = std::round(rng.uniform() * 20) / 20;  // coarse grid, so ties occur
    out.push_back({i % 2, i, rs, classify(rs, rho), 1.0 + rng.uniform()});
  }
  return out;
}

std::set<std::pair<int, int>> keys(const std::vector<FeatureRecord>& rs) {
  std::set<std::pair<int, int>> out;
  for (const auto& r : rs) out.insert({r.layer, r.feature_idx});
  return out;
}

}  // namespace

TEST_CASE("classification threshold is inclusive") {
  CHECK(classify(0.40, 0.40) == FeatureClass::Repetition);
  CHECK(classify(std::nextafter(0.40, 0.0), 0.40) == FeatureClass::Common);
  CHECK(classify(1.0, 0.40) == FeatureClass::Repetition);
  CHECK(classify(0.0, 0.0) == FeatureClass::Repetition);
  CHECK(to_string(FeatureClass::Repetition) == "repetition");
  CHECK(feature_class_from_string("common") == FeatureClass::Common);
}

TEST_CASE("raising rho never adds repetition features") {
  const auto base = synthetic_records(1, 200, 0.0);
  std::set<std::pair<int, int>> prev = keys(top_repetition_features(reclassify(base, 0.0), 1.0));
  CHECK(prev.size() == 200);
  for (double rho = 0.05; rho <= 1.0001; rho += 0.05) {
    const auto cur = keys(top_repetition_features(reclassify(base, rho), 1.0));
    CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
    prev = cur;
  }
}

TEST_CASE("repetition subsets are nested prefixes ordered by score") {
  const auto recs = synthetic_records(2, 150, 0.4);
  long n_rf = 0;
  for (const auto& r : recs) n_rf += r.cls == FeatureClass::Repetition;
  std::vector<FeatureRecord> prev;
  for (double ratio : {0.1, 0.2, 0.5, 1.0}) {
    const auto cur = top_repetition_features(recs, ratio);
    CHECK(static_cast<long>(cur.size()) == static_cast<long>(std::ceil(ratio * static_cast<double>(n_rf))));
    for (std::size_t i = 0; i < prev.size(); ++i) {
      CHECK(cur[i].layer == prev[i].layer);
      CHECK(cur[i].feature_idx == prev[i].feature_idx);
    }
    for (std::size_t i = 1; i < cur.size(); ++i) {
      CHECK(cur[i - 1].mean_repeat_score >= cur[i].mean_repeat_score);
      if (cur[i - 1].mean_repeat_score == cur[i].mean_repeat_score)
        CHECK(std::make_pair(cur[i - 1].layer, cur[i - 1].feature_idx) < std::make_pair(cur[i].layer, cur[i].feature_idx));
    }
    prev = cur;
  }
}

TEST_CASE("steering strength follows the calibrated maximum unless absolute") {
  CHECK(feature_lambda(2.0, false, 3.5) == 7.0);
  CHECK(feature_lambda(2.0, true, 3.5) == 2.0);
}

TEST_CASE("scan matches a direct steered generation and is deterministic") {
  const auto model = random_model(4);
  const auto sae = random_sae(12, 16, 1, 5);
  FeatureStats st;
  st.max_activation.assign(12, 0.0);
  st.activation_rate.assign(12, 0.0);
  for (int i = 0; i < 12; ++i)
    if (i % 4 != 3) st.max_activation[static_cast<std::size_t>(i)] = 0.5 + 0.25 * i;
  ScanConfig cfg;
  cfg.gen_tokens = 20;
  cfg.questions_per_feature = 3;
  const auto qs = prompts(6, 1);

  const auto r = scan_features(model, sae, st, cfg, qs);
  REQUIRE(r.records.size() == 9);
  REQUIRE(r.skipped.size() == 3);
  CHECK(r.skipped[0].feature_idx == 3);

  GenerationConfig g;
  g.max_new_tokens = 20;
  for (const auto& rec : r.records) {
    SteeringSpec spec{1, rec.feature_idx, 2.0 * st.max_activation[static_cast<std::size_t>(rec.feature_idx)],
                      SteeringMode::Activate, SteeringPositions::All};
    const auto out = generate(model, qs[0], g, steering_hooks(sae, {spec}));
    CHECK(rec.mean_repeat_score == doctest::Approx(repeat_score(out, 1, 1.0)).epsilon(1e-12));
    CHECK(rec.cls == classify(rec.mean_repeat_score, 0.4));
  }

  const auto r2 = scan_features(model, sae, st, cfg, qs);
  CHECK(feature_records_jsonl(r) == feature_records_jsonl(r2));
}

TEST_CASE("scan records round-trip through JSONL and CSV") {
  ScanResult r;
  r.records = synthetic_records(7, 5, 0.4);
  r.skipped.push_back({1, 9, "never fired during calibration"});
  const auto back = scan_result_from_jsonl(feature_records_jsonl(r));
  REQUIRE(back.records.size() == 5);
  REQUIRE(back.skipped.size() == 1);
  CHECK(back.skipped[0].feature_idx == 9);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back.records[i].mean_repeat_score == r.records[i].mean_repeat_score);
    CHECK(back.records[i].cls == r.records[i].cls);
    CHECK(back.records[i].max_activation == r.records[i].max_activation);
  }
  const auto rows = parse_csv(feature_records_csv(r.records));
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == std::vector<std::string>{"layer", "idx", "rs", "class", "max_act"});
  CHECK_THROWS_AS(scan_result_from_jsonl("{\"layer\": 1}\n"), ParseError);
}

TEST_CASE("single-beam decoding scores like greedy") {
  const auto model = random_model(8);
  const auto qs = prompts(9, 6);
  GenerationConfig greedy_cfg;
  greedy_cfg.max_new_tokens = 16;
  GenerationConfig beam1 = greedy_cfg;
  beam1.strategy = DecodeStrategy::Beam;
  beam1.beam_width = 1;
  const auto a = evaluate_generations(model, qs, greedy_cfg);
  const auto b = evaluate_generations(model, qs, beam1);
  CHECK(a.repeat_score == b.repeat_score);
  CHECK(a.entropy == b.entropy);
  CHECK(a.perplexity == b.perplexity);
  CHECK(a.generations == 6);
  CHECK(a.perplexity >= 1.0);
}

TEST_CASE("ratio and mitigation tables have the documented shape") {
  const auto model = random_model(10);
  const auto s0 = random_sae(8, 16, 0, 11);
  const auto s1 = random_sae(8, 16, 1, 12);
  const SaeSet saes = {&s0, &s1};
  std::vector<FeatureRecord> recs;
  for (int l = 0; l < 2; ++l)
    for (int i = 0; i < 8; ++i) {
      const double rs = (i < 3) ? 0.8 - 0.1 * i : 0.1;
      recs.push_back({l, i, rs, classify(rs, 0.4), 1.5});
    }
  const std::vector<QuestionDataset> ds = {{"EQ", prompts(13, 3)}};
  RatioConfig rc;
  rc.gen_tokens = 12;
  const auto rep = ratio_experiment(model, saes, recs, rc, ds);
  REQUIRE(rep.rows.size() == 32);  // 2 layers x 4 ratios x 4 conditions
  for (std::size_t k = 0; k < 32; k += 4) {
    CHECK(rep.rows[k].condition == RatioCondition::Original);
    CHECK(rep.rows[k].layer == (k < 16 ? 0 : 1));
    CHECK(rep.rows[k].stats.repeat_score == rep.rows[0].stats.repeat_score);
    CHECK(rep.rows[k + 1].features == rep.rows[k + 2].features);
  }
  CHECK(rep.rows[14].features == 3);  // layer 0, ratio 1.0, activated RF
  const auto csv = parse_csv(ratio_csv(rep));
  CHECK(csv.size() == 33);
  CHECK(csv[0][1] == "layer");

  // a layer without repetition features is skipped with a warning
  auto only_l0 = recs;
  for (auto& r : only_l0)
    if (r.layer == 1) r.cls = FeatureClass::Common;
  const auto rep0 = ratio_experiment(model, saes, only_l0, rc, ds);
  CHECK(rep0.rows.size() == 16);
  CHECK(rep0.warnings.size() == 1);

  auto methods = default_mitigation_methods(12, 3);
  std::vector<std::string> names;
  for (const auto& m : methods) names.push_back(m.name);
  CHECK(names == std::vector<std::string>{"greedy", "beam", "topk", "topp", "duc"});
  const auto rows = mitigation_eval(model, saes, top_repetition_features(recs, 1.0), ds, methods);
  REQUIRE(rows.size() == 5);
  CHECK(parse_csv(mitigation_csv(rows)).size() == 6);

  std::vector<FeatureRecord> none = reclassify(recs, 0.95);
  CHECK_THROWS_AS(ratio_experiment(model, saes, none, rc, ds), ParameterError);
}

TEST_CASE("deactivation hooks with nothing to deactivate change nothing") {
  const auto model = random_model(14);
  const auto s0 = random_sae(8, 16, 0, 15);
  const auto qs = prompts(16, 4);
  GenerationConfig g;
  g.max_new_tokens = 12;
  const auto base = evaluate_generations(model, qs, g);
  const auto hooked = evaluate_generations(model, qs, g, [&](int pl) {
    return deactivation_hooks({&s0}, {}, SteeringPositions::All, pl);
  });
  CHECK(base.repeat_score == hooked.repeat_score);
  CHECK(base.perplexity == hooked.perplexity);
}
