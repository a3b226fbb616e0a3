// Acceptance runner: evaluates criteria 1-11 and prints one PASS/FAIL line
// for each. Criteria 5 and 7-10 use two fresh full pipeline runs under the
// work directory.
//
//   acceptance [--work DIR] [--reuse] [--strict]
//
// --reuse keeps an existing first run (stage caching applies); the second
// run is always fresh. --strict exits nonzero when any criterion fails.

#include "duc/attribution.hpp"
#include "duc/corpus.hpp"
#include "duc/error.hpp"
#include "duc/hash.hpp"
#include "duc/metrics.hpp"
#include "duc/pipeline.hpp"
#include "duc/report.hpp"
#include "duc/sae.hpp"
#include "duc/steering.hpp"
#include "duc/tensor_io.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <tuple>

using namespace duc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

Outcome criterion1() {
  const TokenSeq abab = {0, 1, 0, 1, 0, 1}, aab = {0, 0, 1}, aabb = {0, 0, 1, 1};
  const double r1 = repeat_score(abab, 1, 1), r2 = repeat_score(aab, 1, 1), e = entropy_norm(aabb, 1);
  const double b = self_bleu({{0, 1}, {0, 1}});
  const bool ok = std::abs(r1 - 1.0) <= 1e-12 && std::abs(r2 - 2.0 / 3.0) <= 1e-12 && std::abs(e - 0.5) <= 1e-12 &&
                  std::abs(b - 1.0) <= 1e-12;
  return {ok, "repeat " + num(r1) + ", " + num(r2) + "; entropy " + num(e) + "; self-bleu " + num(b)};
}

Outcome criterion2() {
  long checked = 0, mismatches = 0;
  for (int len = 0; len <= 8; ++len) {
    long total = 1;
    for (int i = 0; i < len; ++i) total *= 3;
    for (long code = 0; code < total; ++code) {
      TokenSeq s(static_cast<std::size_t>(len));
      long c = code;
      for (int i = 0; i < len; ++i, c /= 3) s[static_cast<std::size_t>(i)] = static_cast<TokenId>(c % 3);
      for (int n : {1, 2, 3})
        for (double w : {1.0, 2.0}) {
          ++checked;
          if (std::abs(repeat_score(s, n, w) - oracle::repeat_score(s, n, w)) > 1e-12) ++mismatches;
        }
    }
  }
  return {mismatches == 0, std::to_string(checked) + " cases, " + std::to_string(mismatches) + " mismatches"};
}

std::vector<RawSample> bundled_corpus() { return load_corpus(DUC_DATA_DIR "/corpus.jsonl").samples; }

double curve_mean(const CurveTable& t, const std::string& scenario, MetricKind metric, int n_start, int group,
                  int n = 1) {
  for (const auto& r : t.rows)
    if (r.scenario == scenario && r.metric == metric && r.n == n && (scenario != "token" ||
                                                                     (r.n_start == n_start && r.group_size == group)))
      return r.mean;
  throw ParameterError("curve row missing for " + scenario);
}

Outcome criterion3() {
  DatasetSpec spec;
  spec.paragraph_samples = 100;
  spec.paragraph_repeat_count = 5;
  const auto ds = build_dataset(spec, bundled_corpus());
  const auto t = metric_curves(ds.samples, CurveOptions{{1}, 1.0, {MetricKind::Repeat, MetricKind::SelfBleu, MetricKind::Entropy}});
  const double rs = curve_mean(t, "paragraph_repeated", MetricKind::Repeat, 0, 0) -
                    curve_mean(t, "paragraph_original", MetricKind::Repeat, 0, 0);
  const double en = curve_mean(t, "paragraph_repeated", MetricKind::Entropy, 0, 0) -
                    curve_mean(t, "paragraph_original", MetricKind::Entropy, 0, 0);
  const double bl = curve_mean(t, "paragraph_repeated", MetricKind::SelfBleu, 0, 0) -
                    curve_mean(t, "paragraph_original", MetricKind::SelfBleu, 0, 0);
  const bool ok = rs >= 0.6 && en <= -0.2 && std::abs(bl) < std::abs(rs) && std::abs(bl) < std::abs(en);
  return {ok, "gaps: repeat " + num(rs) + ", entropy " + num(en) + ", self-bleu " + num(bl)};
}

Outcome criterion4() {
  std::vector<RawSample> long_samples;
  for (const auto& s : bundled_corpus())
    if (tokenize(s.answer).size() >= 150) long_samples.push_back(s);
  DatasetSpec spec;
  for (int n = 0; n <= 140; n += 10) spec.n_grid.push_back(n);
  spec.m_values = {1};
  spec.samples_per_cell = 100;
  spec.paragraph_samples = 0;
  const auto ds = build_dataset(spec, long_samples);
  const auto t = metric_curves(ds.samples, CurveOptions{{1}, 1.0, {MetricKind::Repeat, MetricKind::Entropy}});
  bool ok = true;
  std::string rs_list, en_list;
  double prev_rs = INFINITY, prev_en = -INFINITY;
  for (int n : spec.n_grid) {
    const double rs = curve_mean(t, "token", MetricKind::Repeat, n, 1);
    const double en = curve_mean(t, "token", MetricKind::Entropy, n, 1);
    ok = ok && rs < prev_rs && en > prev_en;
    prev_rs = rs;
    prev_en = en;
    rs_list += (rs_list.empty() ? "" : " ") + num(rs);
    en_list += (en_list.empty() ? "" : " ") + num(en);
  }
  return {ok, std::to_string(long_samples.size()) + " sources; repeat [" + rs_list + "]; entropy [" + en_list + "]"};
}

struct Runs {
  fs::path a, b;
  RunConfig cfg_a, cfg_b;
  bool a_done = false;
};

std::vector<int> sae_layers(const RunPaths& p) {
  const auto attr = attribution_from_json(nlohmann::json::parse(read_text_file(p.attribution_json())));
  return repetition_layers(attr);
}

Outcome criterion5(const Runs& runs) {
  const RunPaths p{runs.a.string()};
  const auto report = nlohmann::json::parse(read_text_file(p.sae_report()));
  bool ok = true;
  std::string detail;
  for (const auto& r : report) {
    const long vectors = r.at("vectors").get<long>();
    const double rel = r.at("final_rel_error").get<double>(), act = r.at("active_fraction").get<double>();
    ok = ok && vectors >= 100000 && rel <= 0.15 && act <= 0.10;
    detail += "L" + std::to_string(r.at("layer").get<int>()) + ": " + std::to_string(vectors) + " vectors, rel " +
              num(rel) + ", active " + num(act) + "; ";
  }
  // sparsity sweep on the top attributed layer
  const int layer = report.at(0).at("layer").get<int>();
  const RowMatrixf acts = load_activations(p.activations(layer));
  std::string sweep;
  double prev = INFINITY;
  for (double beta : {1e-4, 5e-4, 5e-3}) {
    SaeTrainConfig tc = sae_train_config(runs.cfg_a, layer);
    tc.beta = beta;
    double act = 0;
    if (beta == 5e-4) {
      act = report.at(0).at("active_fraction").get<double>();
    } else {
      SaeTrainReport rep;
      train_sae(tc, acts, layer, &rep);
      act = rep.active_fraction;
    }
    ok = ok && act <= prev;
    prev = act;
    sweep += (sweep.empty() ? "" : " ") + num(act);
  }
  return {ok, detail + "active over beta {1e-4, 5e-4, 5e-3}: [" + sweep + "]"};
}

bool bit_equal(const RowMatrixf& a, const RowMatrixf& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

Outcome criterion6(const Runs& runs) {
  const RunPaths p{runs.a.string()};
  const int layer = sae_layers(p)[0];
  const auto sae = load_sae(p.sae(layer));
  const RowMatrixf acts = load_activations(p.activations(layer));
  const RowMatrixf x = acts.topRows(std::min<Eigen::Index>(512, acts.rows()));
  const auto stats = feature_stats_from_json(nlohmann::json::parse(read_text_file(p.feature_stats(layer))));
  long rows = 0, bad = 0;
  for (int idx = 0; idx < sae.features(); idx += 97) {
    const double lambda = feature_lambda(2.0, false, stats.max_activation[static_cast<std::size_t>(idx)]);
    const RowMatrixf y = apply_steering(sae, {layer, idx, lambda, SteeringMode::Activate, SteeringPositions::All}, x);
    // X + fl(lambda * W_dec[idx]), computed element by element
    RowMatrixf expect = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const float d = static_cast<float>(lambda) * sae.w_dec(idx, j);
      for (Eigen::Index r = 0; r < x.rows(); ++r) expect(r, j) = x(r, j) + d;
    }
    for (Eigen::Index r = 0; r < x.rows(); ++r, ++rows)
      if (std::memcmp(y.row(r).data(), expect.row(r).data(), sizeof(float) * static_cast<std::size_t>(x.cols())) != 0)
        ++bad;
    const RowMatrixf zero = apply_steering(sae, {layer, idx, 0.0, SteeringMode::Activate, SteeringPositions::All}, x);
    if (!bit_equal(zero, x)) ++bad;
  }
  return {bad == 0, std::to_string(rows) + " steered rows, " + std::to_string(bad) + " mismatches (lambda 0 included)"};
}

Outcome criterion7(const Runs& runs) {
  const RunPaths p{runs.a.string()};
  const auto model = load_model(p.lm());
  const auto vocab = load_vocabulary(p.vocab());
  int agree = 0, total = 0;
  bool zero_ok = true;
  std::string tops;
  for (const auto& tt : load_templates(DUC_DATA_DIR "/templates.jsonl")) {
    const Template t = encode_template(tt, vocab);
    const auto c = layer_contributions(model, t);
    const int ours = rank_descending(c)[0];
    const int ref = oracle::ablation_top_layer(model, t.prompt, t.correct, t.incorrect);
    agree += ours == ref;
    ++total;
    tops += (tops.empty() ? "" : " ") + std::to_string(ours) + "/" + std::to_string(ref);
    for (double v : layer_contributions(model, {t.prompt, t.correct, t.correct})) zero_ok = zero_ok && v == 0.0;
  }
  return {agree >= 6 && zero_ok, std::to_string(agree) + "/" + std::to_string(total) +
                                     " templates agree (ours/oracle: " + tops + "); zero direction " +
                                     (zero_ok ? "exact" : "NOT zero")};
}

// (layer, condition, ratio) -> mean repeat score
using RatioTable = std::map<std::tuple<int, std::string, double>, double>;

RatioTable ratio_rs(const RunPaths& p, const std::string& dataset) {
  RatioTable out;
  const auto rows = parse_csv(read_text_file(p.ratio()));
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i][0] == dataset) out[{std::stoi(rows[i][1]), rows[i][2], std::stod(rows[i][3])}] = std::stod(rows[i][5]);
  return out;
}

// Every attributed layer's table must show the pattern.
Outcome criterion8(const Runs& runs) {
  const RunPaths p{runs.a.string()};
  const auto rs = ratio_rs(p, "EQ");
  auto get = [&](int layer, const std::string& c, double r) {
    const auto it = rs.find({layer, c, r});
    if (it == rs.end())
      throw ParseError("ratio report has no layer " + std::to_string(layer) + " " + c + " row at ratio " + num(r));
    return it->second;
  };
  bool ok = true;
  std::string detail;
  for (int layer : sae_layers(p)) {
    const double gap = get(layer, "activated_RF", 1.0) - get(layer, "activated_CF", 1.0);
    bool mono = true;
    std::string rf;
    double prev = -INFINITY;
    for (double r : {0.1, 0.2, 0.5, 1.0}) {
      const double v = get(layer, "activated_RF", r);
      mono = mono && v >= prev;
      prev = v;
      rf += (rf.empty() ? "" : " ") + num(v);
    }
    const double deact = get(layer, "deactivated", 1.0), orig = get(layer, "original", 1.0);
    ok = ok && gap >= 0.10 && mono && deact <= orig;
    detail += "L" + std::to_string(layer) + ": RF-CF at 1.0 " + num(gap) + ", RF over ratios [" + rf + "], deactivated " +
              num(deact) + " vs original " + num(orig) + "; ";
  }
  return {ok, detail};
}

Outcome criterion9(const Runs& runs) {
  const auto rows = parse_csv(read_text_file(RunPaths{runs.a.string()}.mitigation()));
  std::map<std::string, std::vector<double>> m;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i][0] == "EQ") m[rows[i][1]] = {std::stod(rows[i][2]), std::stod(rows[i][3]), std::stod(rows[i][4])};
  if (!m.count("duc") || !m.count("greedy")) throw ParseError("mitigation report lacks EQ duc/greedy rows");
  const auto& d = m["duc"];
  const auto& g = m["greedy"];
  const bool ok = d[0] <= g[0] && d[1] >= g[1] && d[2] <= 3 * g[2];
  return {ok, "DUC vs greedy: repeat " + num(d[0]) + " / " + num(g[0]) + ", entropy " + num(d[1]) + " / " + num(g[1]) +
                  ", perplexity " + num(d[2]) + " / " + num(g[2])};
}

std::map<std::string, std::string> bundle(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root);
    if (*rel.begin() == "manifests") continue;
    out[rel.string()] = sha256_file(e.path().string());
  }
  return out;
}

Outcome criterion10(const Runs& runs) {
  const auto a = bundle(runs.a), b = bundle(runs.b);
  long differ = 0;
  std::string first;
  for (const auto& [k, v] : a) {
    const auto it = b.find(k);
    if (it == b.end() || it->second != v) {
      ++differ;
      if (first.empty()) first = k;
    }
  }
  for (const auto& [k, v] : b)
    if (!a.count(k)) ++differ;
  return {differ == 0 && !a.empty(), std::to_string(a.size()) + " files compared, " + std::to_string(differ) +
                                         " differ" + (first.empty() ? "" : " (first: " + first + ")")};
}

Outcome criterion11() {
  const auto samples = oracle::gradient_check(oracle::gradcheck_model(21), oracle::gradcheck_batch(22), 32, 23);
  double worst = 0;
  for (const auto& s : samples) worst = std::max(worst, s.rel_error);
  return {worst <= 1e-3, "32 parameters, worst relative error " + num(worst)};
}

void full_run(const RunConfig& cfg, const fs::path& log_path) {
  std::ofstream log(log_path);
  run_pipeline(cfg, {}, &log);
  emit_plots(cfg.get("out") + "/reports", cfg.get("out") + "/plots", {"curves.csv", "attribution.json"});
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = "acceptance_work";
  bool reuse = false, strict = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) work = argv[++i];
    else if (a == "--reuse") reuse = true;
    else if (a == "--strict") strict = true;
    else {
      std::cerr << "usage: acceptance [--work DIR] [--reuse] [--strict]\n";
      return 2;
    }
  }
  std::cout << std::unitbuf;

  Runs runs;
  runs.a = work / "run_a";
  runs.b = work / "run_b";
  if (!reuse) fs::remove_all(runs.a);
  fs::remove_all(runs.b);
  fs::create_directories(work);
  runs.cfg_a.set("out", runs.a.string());
  runs.cfg_b.set("out", runs.b.string());

  int passed = 0, total = 0;
  bool errored = false;
  // ctest hides output of passing tests, so the summary also goes to a file
  std::ofstream results(work / "results.txt");
  auto report = [&](int id, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
      errored = true;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++total;
    passed += o.pass;
    std::ostringstream line;
    line << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  [" << num(secs) << " s]\n";
    std::cout << line.str();
    results << line.str() << std::flush;
  };
  auto need_run_a = [&] {
    if (!runs.a_done) {
      full_run(runs.cfg_a, work / "run_a.log");
      runs.a_done = true;
    }
  };

  report(1, criterion1);
  report(2, criterion2);
  report(3, criterion3);
  report(4, criterion4);
  report(5, [&] {
    need_run_a();
    return criterion5(runs);
  });
  report(6, [&] {
    need_run_a();
    return criterion6(runs);
  });
  report(7, [&] {
    need_run_a();
    return criterion7(runs);
  });
  report(8, [&] {
    need_run_a();
    return criterion8(runs);
  });
  report(9, [&] {
    need_run_a();
    return criterion9(runs);
  });
  report(10, [&] {
    need_run_a();
    full_run(runs.cfg_b, work / "run_b.log");
    return criterion10(runs);
  });
  report(11, criterion11);

  std::cout << passed << "/" << total << " criteria passed\n";
  results << passed << "/" << total << " criteria passed\n";
  if (errored) return 1;
  return strict && passed != total ? 1 : 0;
}
