#include "duc/pipeline.hpp"

#include "duc/attribution.hpp"
#include "duc/error.hpp"
#include "duc/hash.hpp"
#include "duc/report.hpp"
#include "duc/rng.hpp"
#include "duc/tensor_io.hpp"
#include "duc/toy_world.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>

#ifndef DUC_DEFAULT_DATA_DIR
#define DUC_DEFAULT_DATA_DIR "data"
#endif

namespace fs = std::filesystem;

namespace duc {

const std::vector<std::pair<std::string, std::string>>& RunConfig::defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"out", "runs/default"},
      {"seed", "0"},
      {"corpus", DUC_DEFAULT_DATA_DIR "/corpus.jsonl"},
      {"questions", DUC_DEFAULT_DATA_DIR "/questions.jsonl"},
      {"templates", DUC_DEFAULT_DATA_DIR "/templates.jsonl"},
      {"stages", "all"},
      {"dataset.n_grid", "0,10,20,30,40,50,60,70,80,90,100,110,120,130,140"},
      {"dataset.m_values", "1,2,5"},
      {"dataset.samples_per_cell", "100"},
      {"dataset.paragraph_samples", "1000"},
      {"dataset.paragraph_repeat_count", "5"},
      {"curves.n", "1,2,3,4,5"},
      {"curves.w", "1"},
      {"curves.metrics", "repeat,bleu,entropy"},
      {"lm.n_layers", "4"},
      {"lm.d_model", "128"},
      {"lm.n_heads", "4"},
      {"lm.d_ff", "512"},
      {"lm.max_seq", "128"},
      {"lm.steps", "2000"},
      {"lm.batch", "8"},
      {"lm.lr", "0.003"},
      {"lm.warmup", "100"},
      {"lm.weight_decay", "0.01"},
      {"lm.token_repetition_fraction", "0.1"},
      {"lm.paragraph_repetition_fraction", "0.05"},
      {"lm.induction_fraction", "0.1"},
      {"attribution.final_norm", "true"},
      {"attribution.reading", "decomposed"},
      {"sae.layers", "2"},
      {"sae.beta", "0.0005"},
      {"sae.lr", "0.001"},
      {"sae.steps", "4000"},
      {"sae.batch", "512"},
      {"sae.expansion", "8"},
      {"scan.rho", "0.4"},
      {"scan.lambda_scale", "2"},
      {"scan.lambda_absolute", "false"},
      {"scan.questions_per_feature", "5"},
      {"scan.gen_tokens", "64"},
      {"scan.dataset", "EQ"},
      {"ratio.ratios", "0.1,0.2,0.5,1"},
      {"ratio.datasets", "EQ,AQ,NQ"},
      {"ratio.gen_tokens", "64"},
      {"mitigate.datasets", "EQ,AQ,NQ"},
      {"mitigate.gen_tokens", "64"},
      {"deactivate.positions", "all"},
      {"decode.strategy", "greedy"},
      {"decode.max_new_tokens", "64"},
      {"decode.beam_width", "4"},
      {"decode.k", "50"},
      {"decode.p", "0.9"},
      {"decode.temperature", "1"},
  };
  return d;
}

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ParameterError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ParameterError("unknown config key '" + key + "'");
  return it->second;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !(in >> std::ws).eof()) throw ParameterError("config key '" + key + "': '" + v + "' is not a number");
  return out;
}

}  // namespace

int RunConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }
long RunConfig::get_long(const std::string& key) const { return parse_number<long>(key, get(key)); }
double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParameterError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : get_list(key)) out.push_back(parse_number<double>(key, s));
  return out;
}

std::vector<int> RunConfig::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& s : get_list(key)) out.push_back(parse_number<int>(key, s));
  return out;
}

std::string RunConfig::canonical(const std::vector<std::string>& prefixes) const {
  std::string out;
  for (const auto& [k, v] : values_)
    for (const auto& p : prefixes)
      if (k.rfind(p, 0) == 0) {
        out += k + "=" + v + "\n";
        break;
      }
  return out;
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected key = value");
    try {
      cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ParameterError& e) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) { apply_config_text(cfg, read_text_file(path), path); }

namespace {

std::uint64_t global_seed(const RunConfig& cfg) {
  const std::string& v = cfg.get("seed");
  if (v.empty() || v[0] == '-') throw ParameterError("config key 'seed': '" + v + "' is not a nonnegative integer");
  std::istringstream in(v);
  std::uint64_t s = 0;
  in >> s;
  if (!in || !(in >> std::ws).eof()) throw ParameterError("config key 'seed': '" + v + "' is not a nonnegative integer");
  return s;
}

}  // namespace

DatasetSpec dataset_spec(const RunConfig& cfg) {
  DatasetSpec s;
  s.n_grid = cfg.get_ints("dataset.n_grid");
  s.m_values = cfg.get_ints("dataset.m_values");
  s.samples_per_cell = cfg.get_int("dataset.samples_per_cell");
  s.paragraph_samples = cfg.get_int("dataset.paragraph_samples");
  s.paragraph_repeat_count = cfg.get_int("dataset.paragraph_repeat_count");
  s.rng_seed = global_seed(cfg);
  s.validate();
  return s;
}

CurveOptions curve_options(const RunConfig& cfg) {
  CurveOptions o;
  o.ngram_sizes = cfg.get_ints("curves.n");
  o.weight_w = cfg.get_double("curves.w");
  o.metrics.clear();
  for (const auto& m : cfg.get_list("curves.metrics")) o.metrics.push_back(metric_kind_from_string(m));
  return o;
}

ModelConfig lm_model_config(const RunConfig& cfg, int vocab_size) {
  ModelConfig c;
  c.n_layers = cfg.get_int("lm.n_layers");
  c.d_model = cfg.get_int("lm.d_model");
  c.n_heads = cfg.get_int("lm.n_heads");
  c.d_ff = cfg.get_int("lm.d_ff");
  c.max_seq = cfg.get_int("lm.max_seq");
  c.vocab_size = vocab_size;
  c.rng_seed = derive_seed(global_seed(cfg), 1);
  c.validate();
  return c;
}

LmTrainConfig lm_train_config(const RunConfig& cfg) {
  LmTrainConfig t;
  t.steps = cfg.get_int("lm.steps");
  t.batch = cfg.get_int("lm.batch");
  t.lr = cfg.get_double("lm.lr");
  t.warmup = cfg.get_int("lm.warmup");
  t.weight_decay = cfg.get_double("lm.weight_decay");
  t.seed = derive_seed(global_seed(cfg), 2);
  return t;
}

LmCorpusOptions lm_corpus_options(const RunConfig& cfg) {
  LmCorpusOptions o;
  o.token_repetition_fraction = cfg.get_double("lm.token_repetition_fraction");
  o.paragraph_repetition_fraction = cfg.get_double("lm.paragraph_repetition_fraction");
  o.induction_fraction = cfg.get_double("lm.induction_fraction");
  o.seed = derive_seed(global_seed(cfg), 3);
  return o;
}

SaeTrainConfig sae_train_config(const RunConfig& cfg, int layer) {
  SaeTrainConfig c;
  c.beta = cfg.get_double("sae.beta");
  c.lr = cfg.get_double("sae.lr");
  c.steps = cfg.get_int("sae.steps");
  c.batch = cfg.get_int("sae.batch");
  c.expansion = cfg.get_int("sae.expansion");
  c.rng_seed = derive_seed(global_seed(cfg), 4, static_cast<std::uint64_t>(layer));
  c.validate();
  return c;
}

ScanConfig scan_config(const RunConfig& cfg) {
  ScanConfig s;
  s.rho = cfg.get_double("scan.rho");
  s.lambda_scale = cfg.get_double("scan.lambda_scale");
  s.lambda_absolute = cfg.get_bool("scan.lambda_absolute");
  s.questions_per_feature = cfg.get_int("scan.questions_per_feature");
  s.gen_tokens = cfg.get_int("scan.gen_tokens");
  s.question_set = question_set_from_string(cfg.get("scan.dataset"));
  s.rng_seed = derive_seed(global_seed(cfg), 5);
  s.validate();
  return s;
}

RatioConfig ratio_config(const RunConfig& cfg) {
  RatioConfig r;
  r.ratios = cfg.get_doubles("ratio.ratios");
  for (double x : r.ratios)
    if (!(x > 0 && x <= 1)) throw ParameterError("ratio.ratios entries must lie in (0, 1]");
  r.lambda_scale = cfg.get_double("scan.lambda_scale");
  r.lambda_absolute = cfg.get_bool("scan.lambda_absolute");
  r.deactivate_positions = steering_positions_from_string(cfg.get("deactivate.positions"));
  r.gen_tokens = cfg.get_int("ratio.gen_tokens");
  r.rng_seed = derive_seed(global_seed(cfg), 6);
  return r;
}

GenerationConfig decode_config(const RunConfig& cfg) {
  GenerationConfig g;
  g.strategy = decode_strategy_from_string(cfg.get("decode.strategy"));
  g.max_new_tokens = cfg.get_int("decode.max_new_tokens");
  g.beam_width = cfg.get_int("decode.beam_width");
  g.k = cfg.get_int("decode.k");
  g.p = cfg.get_double("decode.p");
  g.temperature = cfg.get_double("decode.temperature");
  g.rng_seed = derive_seed(global_seed(cfg), 7);
  g.validate();
  return g;
}

std::vector<QuestionDataset> question_datasets(const std::string& questions_path, const Vocabulary& vocab,
                                               const std::vector<std::string>& names) {
  const auto all = load_questions(questions_path);
  std::vector<QuestionDataset> out;
  for (const auto& name : names) {
    QuestionDataset ds;
    ds.name = name;
    for (const auto& q : filter_questions(all, question_set_from_string(name))) {
      const Words w = tokenize(q.text);
      for (const auto& t : w)
        if (!vocab.contains(t)) throw ParameterError("question word '" + t + "' is not in the vocabulary");
      ds.prompts.push_back(vocab.encode(w));
    }
    if (ds.prompts.empty()) throw EmptyCorpusError("no " + name + " questions in " + questions_path);
    out.push_back(std::move(ds));
  }
  return out;
}

Vocabulary build_run_vocabulary(const std::vector<RawSample>& corpus, const std::string& questions_path,
                                const std::string& templates_path) {
  Words words;
  for (const auto& s : corpus) {
    for (auto& w : tokenize(s.question)) words.push_back(std::move(w));
    for (auto& w : tokenize(s.answer)) words.push_back(std::move(w));
  }
  for (const auto& q : load_questions(questions_path))
    for (auto& w : tokenize(q.text)) words.push_back(std::move(w));
  for (const auto& t : load_templates(templates_path)) {
    for (auto& w : tokenize(t.prompt)) words.push_back(std::move(w));
    words.push_back(t.correct);
    words.push_back(t.incorrect);
  }
  return Vocabulary::build(words);
}

std::string curves_csv(const CurveTable& t) {
  CsvTable csv({"scenario", "N", "M", "metric", "n", "mean", "std", "count"});
  for (const auto& r : t.rows)
    csv.add({r.scenario, std::to_string(r.n_start), std::to_string(r.group_size), to_string(r.metric),
             std::to_string(r.n), fmt(r.mean), fmt(r.std), std::to_string(r.count)});
  return csv.str();
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"dataset",   "curves",   "train-lm", "attribute", "collect-acts",
                                                 "train-sae", "scan",     "ratio",    "mitigate"};
  return names;
}

namespace {

struct Context {
  const RunConfig& cfg;
  RunPaths paths;
  std::ostream* log;
};

std::vector<int> sae_layers(const Context& c) {
  const auto attr = attribution_from_json(nlohmann::json::parse(read_text_file(c.paths.attribution_json())));
  const auto n = static_cast<std::size_t>(std::max(1, c.cfg.get_int("sae.layers")));
  std::vector<int> layers(attr.ranked_layers.begin(),
                          attr.ranked_layers.begin() + static_cast<long>(std::min(n, attr.ranked_layers.size())));
  return layers;
}

std::vector<RawSample> corpus_samples(const Context& c) {
  auto loaded = load_corpus(c.cfg.get("corpus"));
  if (loaded.skipped && c.log)
    *c.log << "  corpus: skipped " << loaded.skipped << " malformed line(s) in " << c.cfg.get("corpus") << "\n";
  return std::move(loaded.samples);
}

AttributionOptions attribution_options(const RunConfig& cfg) {
  AttributionOptions o;
  o.apply_final_norm = cfg.get_bool("attribution.final_norm");
  const std::string& r = cfg.get("attribution.reading");
  if (r == "decomposed") o.reading = ResidualReading::Decomposed;
  else if (r == "accumulated") o.reading = ResidualReading::Accumulated;
  else throw ParameterError("attribution.reading must be decomposed or accumulated");
  return o;
}

void run_dataset(const Context& c) {
  const auto corpus = corpus_samples(c);
  const Dataset ds = build_dataset(dataset_spec(c.cfg), corpus);
  save_dataset(ds, c.paths.dataset(), c.paths.dataset_manifest());
}

void run_curves(const Context& c) {
  const auto samples = load_dataset(c.paths.dataset());
  const DatasetSpec spec = dataset_spec(c.cfg);
  const CurveTable t = metric_curves(samples, curve_options(c.cfg), &spec);
  if (t.empty_cells && c.log) *c.log << "  curves: " << t.empty_cells << " empty grid cell(s)\n";
  write_text_file(c.paths.curves(), curves_csv(t));
}

void run_train_lm(const Context& c) {
  const auto corpus = corpus_samples(c);
  const Vocabulary vocab = build_run_vocabulary(corpus, c.cfg.get("questions"), c.cfg.get("templates"));
  const auto docs = build_lm_documents(corpus, vocab, lm_corpus_options(c.cfg));
  const LmTrainConfig tc = lm_train_config(c.cfg);
  LmTrainReport rep;
  const int every = std::max(1, tc.steps / 10);
  const auto model = train_lm(lm_model_config(c.cfg, vocab.size()), docs, tc, &rep, [&](int step, double loss) {
    if (c.log && (step % every == 0 || step == tc.steps)) *c.log << "  step " << step << " loss " << fmt(loss) << "\n";
  });
  save_vocabulary(vocab, c.paths.vocab());
  save_model(model, c.paths.lm());
  double tail = 0;
  const std::size_t n = std::min<std::size_t>(50, rep.train_loss.size());
  for (std::size_t i = rep.train_loss.size() - n; i < rep.train_loss.size(); ++i) tail += rep.train_loss[i];
  const nlohmann::json j = {{"initial_heldout_loss", rep.initial_heldout_loss},
                            {"final_heldout_loss", rep.final_heldout_loss},
                            {"final_train_loss", n ? tail / static_cast<double>(n) : 0.0},
                            {"steps", tc.steps},
                            {"documents", docs.size()},
                            {"vocab_size", vocab.size()},
                            {"parameters", model.parameter_count()}};
  write_text_file(c.paths.lm_report(), j.dump(2) + "\n");
}

void run_attribute(const Context& c) {
  const auto model = load_model(c.paths.lm());
  const auto vocab = load_vocabulary(c.paths.vocab());
  std::vector<Template> templates;
  for (const auto& t : load_templates(c.cfg.get("templates"))) templates.push_back(encode_template(t, vocab));
  const auto r = rank_layers(model, templates, attribution_options(c.cfg));
  write_text_file(c.paths.attribution_json(), to_json(r).dump(2) + "\n");
  write_text_file(c.paths.attribution_csv(), attribution_csv(r));
}

void run_collect_acts(const Context& c) {
  const auto model = load_model(c.paths.lm());
  const auto vocab = load_vocabulary(c.paths.vocab());
  const auto docs = build_lm_documents(corpus_samples(c), vocab, lm_corpus_options(c.cfg));
  const auto windows = document_windows(docs, model.config.max_seq);
  const auto layers = sae_layers(c);
  const auto acts = collect_activations(model, windows, layers);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    save_activations(acts[i], layers[i], c.paths.activations(layers[i]));
    if (c.log) *c.log << "  layer " << layers[i] << ": " << acts[i].rows() << " vectors\n";
  }
}

void run_train_sae(const Context& c) {
  nlohmann::json report = nlohmann::json::array();
  for (int layer : sae_layers(c)) {
    const RowMatrixf acts = load_activations(c.paths.activations(layer));
    const SaeTrainConfig tc = sae_train_config(c.cfg, layer);
    SaeTrainReport rep;
    const auto sae = train_sae(tc, acts, layer, &rep);
    save_sae(sae, c.paths.sae(layer));
    const FeatureStats st = calibrate(sae, acts);
    write_text_file(c.paths.feature_stats(layer), to_json(st).dump() + "\n");
    long dead = 0;
    for (double r : st.activation_rate) dead += r == 0;
    report.push_back({{"layer", layer},
                      {"vectors", acts.rows()},
                      {"train_rows", rep.train_rows},
                      {"heldout_rows", rep.heldout_rows},
                      {"features", sae.features()},
                      {"beta", tc.beta},
                      {"initial_rel_error", rep.initial_rel_error},
                      {"final_rel_error", rep.final_rel_error},
                      {"active_fraction", rep.active_fraction},
                      {"input_scale", rep.input_scale},
                      {"dead_features", dead}});
    if (c.log)
      *c.log << "  layer " << layer << ": rel error " << fmt(rep.final_rel_error) << ", active fraction "
             << fmt(rep.active_fraction) << "\n";
  }
  write_text_file(c.paths.sae_report(), report.dump(2) + "\n");
}

struct LoadedSaes {
  std::vector<SaeParams<float>> saes;
  SaeSet set() const {
    SaeSet s;
    for (const auto& x : saes) s.push_back(&x);
    return s;
  }
};

LoadedSaes load_saes(const Context& c) {
  LoadedSaes out;
  for (int layer : sae_layers(c)) out.saes.push_back(load_sae(c.paths.sae(layer)));
  return out;
}

void run_scan(const Context& c) {
  const auto model = load_model(c.paths.lm());
  const auto vocab = load_vocabulary(c.paths.vocab());
  const ScanConfig sc = scan_config(c.cfg);
  const auto questions = question_datasets(c.cfg.get("questions"), vocab, {to_string(sc.question_set)});
  const auto saes = load_saes(c);
  ScanResult all;
  for (const auto& sae : saes.saes) {
    const FeatureStats st = feature_stats_from_json(nlohmann::json::parse(read_text_file(c.paths.feature_stats(sae.layer))));
    const ScanResult r = scan_features(model, sae, st, sc, questions[0].prompts);
    all.records.insert(all.records.end(), r.records.begin(), r.records.end());
    all.skipped.insert(all.skipped.end(), r.skipped.begin(), r.skipped.end());
    if (c.log) {
      long rf = 0;
      for (const auto& f : r.records) rf += f.cls == FeatureClass::Repetition;
      *c.log << "  layer " << sae.layer << ": " << rf << " repetition / " << r.records.size() << " scanned, "
             << r.skipped.size() << " skipped\n";
    }
  }
  write_text_file(c.paths.features_jsonl(), feature_records_jsonl(all));
  write_text_file(c.paths.features_csv(), feature_records_csv(all.records));
}

std::vector<FeatureRecord> load_records(const Context& c) {
  return scan_result_from_jsonl(read_text_file(c.paths.features_jsonl())).records;
}

void run_ratio(const Context& c) {
  const auto model = load_model(c.paths.lm());
  const auto vocab = load_vocabulary(c.paths.vocab());
  const auto saes = load_saes(c);
  const auto datasets = question_datasets(c.cfg.get("questions"), vocab, c.cfg.get_list("ratio.datasets"));
  const RatioReport r = ratio_experiment(model, saes.set(), load_records(c), ratio_config(c.cfg), datasets);
  if (c.log)
    for (const auto& w : r.warnings) *c.log << "  warning: " << w << "\n";
  write_text_file(c.paths.ratio(), ratio_csv(r));
}

void run_mitigate(const Context& c) {
  const auto model = load_model(c.paths.lm());
  const auto vocab = load_vocabulary(c.paths.vocab());
  const auto saes = load_saes(c);
  const auto datasets = question_datasets(c.cfg.get("questions"), vocab, c.cfg.get_list("mitigate.datasets"));
  const GenerationConfig base = decode_config(c.cfg);
  auto methods = default_mitigation_methods(c.cfg.get_int("mitigate.gen_tokens"), base.rng_seed);
  for (auto& m : methods) {
    m.gen.beam_width = base.beam_width;
    m.gen.k = base.k;
    m.gen.p = base.p;
    m.gen.temperature = base.temperature;
  }
  const auto rows = mitigation_eval(model, saes.set(), top_repetition_features(load_records(c), 1.0), datasets, methods,
                                    steering_positions_from_string(c.cfg.get("deactivate.positions")));
  write_text_file(c.paths.mitigation(), mitigation_csv(rows));
}

// Bump a stage's entry when its output layout changes so cached runs recompute it.
int output_format(const std::string& stage) {
  return stage == "ratio" ? 2 : 1;
}

struct Stage {
  std::string name;
  std::vector<std::string> config_prefixes;
  std::function<std::vector<std::string>(const Context&)> inputs;
  std::function<std::vector<std::string>(const Context&)> outputs;
  std::function<void(const Context&)> run;
};

std::vector<std::string> per_layer(const Context& c, std::string (RunPaths::*path)(int) const) {
  std::vector<std::string> out;
  for (int l : sae_layers(c)) out.push_back((c.paths.*path)(l));
  return out;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::vector<Stage>& stages() {
  using P = const Context&;
  static const std::vector<Stage> s = {
      {"dataset", {"seed", "dataset."}, [](P c) { return std::vector<std::string>{c.cfg.get("corpus")}; },
       [](P c) { return std::vector<std::string>{c.paths.dataset(), c.paths.dataset_manifest()}; }, run_dataset},
      {"curves", {"seed", "dataset.", "curves."}, [](P c) { return std::vector<std::string>{c.paths.dataset()}; },
       [](P c) { return std::vector<std::string>{c.paths.curves()}; }, run_curves},
      {"train-lm", {"seed", "lm."},
       [](P c) { return std::vector<std::string>{c.cfg.get("corpus"), c.cfg.get("questions"), c.cfg.get("templates")}; },
       [](P c) { return std::vector<std::string>{c.paths.vocab(), c.paths.lm(), c.paths.lm_report()}; }, run_train_lm},
      {"attribute", {"attribution."},
       [](P c) { return std::vector<std::string>{c.paths.lm(), c.paths.vocab(), c.cfg.get("templates")}; },
       [](P c) { return std::vector<std::string>{c.paths.attribution_json(), c.paths.attribution_csv()}; },
       run_attribute},
      {"collect-acts", {"seed", "lm.", "sae.layers"},
       [](P c) {
         return std::vector<std::string>{c.paths.lm(), c.paths.vocab(), c.cfg.get("corpus"), c.paths.attribution_json()};
       },
       [](P c) { return per_layer(c, &RunPaths::activations); }, run_collect_acts},
      {"train-sae", {"seed", "sae."},
       [](P c) { return concat({c.paths.attribution_json()}, per_layer(c, &RunPaths::activations)); },
       [](P c) {
         return concat(concat(per_layer(c, &RunPaths::sae), per_layer(c, &RunPaths::feature_stats)),
                       {c.paths.sae_report()});
       },
       run_train_sae},
      {"scan", {"seed", "scan."},
       [](P c) {
         return concat(concat({c.paths.lm(), c.paths.vocab(), c.cfg.get("questions"), c.paths.attribution_json()},
                              per_layer(c, &RunPaths::sae)),
                       per_layer(c, &RunPaths::feature_stats));
       },
       [](P c) { return std::vector<std::string>{c.paths.features_jsonl(), c.paths.features_csv()}; }, run_scan},
      {"ratio", {"seed", "scan.lambda", "ratio.", "deactivate."},
       [](P c) {
         return concat({c.paths.lm(), c.paths.vocab(), c.cfg.get("questions"), c.paths.attribution_json(),
                        c.paths.features_jsonl()},
                       per_layer(c, &RunPaths::sae));
       },
       [](P c) { return std::vector<std::string>{c.paths.ratio()}; }, run_ratio},
      {"mitigate", {"seed", "mitigate.", "deactivate.", "decode."},
       [](P c) {
         return concat({c.paths.lm(), c.paths.vocab(), c.cfg.get("questions"), c.paths.attribution_json(),
                        c.paths.features_jsonl()},
                       per_layer(c, &RunPaths::sae));
       },
       [](P c) { return std::vector<std::string>{c.paths.mitigation()}; }, run_mitigate},
  };
  return s;
}

std::string relative_label(const RunPaths& paths, const std::string& p) {
  const std::string prefix = paths.root + "/";
  return p.rfind(prefix, 0) == 0 ? p.substr(prefix.size()) : p;
}

bool outputs_match(const nlohmann::json& manifest, const RunPaths& paths, const std::vector<std::string>& outputs) {
  if (!manifest.contains("outputs")) return false;
  const auto& recorded = manifest["outputs"];
  if (recorded.size() != outputs.size()) return false;
  for (const auto& o : outputs) {
    const std::string label = relative_label(paths, o);
    if (!recorded.contains(label) || !fs::exists(o)) return false;
    if (recorded[label].get<std::string>() != sha256_file(o)) return false;
  }
  return true;
}

}  // namespace

std::vector<StageOutcome> run_pipeline(const RunConfig& cfg, const std::vector<std::string>& selected, std::ostream* log) {
  std::vector<std::string> wanted = selected;
  const auto listed = cfg.get_list("stages");
  if (wanted.empty() && !(listed.size() == 1 && listed[0] == "all")) wanted = listed;
  for (const auto& w : wanted)
    if (std::find(stage_names().begin(), stage_names().end(), w) == stage_names().end())
      throw ParameterError("unknown stage '" + w + "'");

  Context ctx{cfg, RunPaths{cfg.get("out")}, log};
  for (const char* sub : {"artifacts", "reports", "manifests"}) fs::create_directories(fs::path(ctx.paths.root) / sub);

  std::vector<StageOutcome> outcomes;
  for (const auto& stage : stages()) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), stage.name) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    const std::string failed = ctx.paths.failed(stage.name);
    StageOutcome outcome{stage.name, false, 0};
    try {
      const auto inputs = stage.inputs(ctx);
      nlohmann::json input_hashes = nlohmann::json::object();
      std::string key_text = "stage=" + stage.name + "\nformat=" + std::to_string(output_format(stage.name)) + "\n" +
                             cfg.canonical(stage.config_prefixes);
      for (const auto& in : inputs) {
        if (!fs::exists(in)) throw IoError("stage " + stage.name + ": missing input " + in);
        const std::string h = sha256_file(in);
        input_hashes[relative_label(ctx.paths, in)] = h;
        key_text += "input=" + h + "\n";
      }
      const std::string key = sha256_hex(key_text);
      const auto outputs = stage.outputs(ctx);

      const std::string manifest_path = ctx.paths.manifest(stage.name);
      if (fs::exists(manifest_path) && !fs::exists(failed)) {
        nlohmann::json m;
        try {
          m = nlohmann::json::parse(read_text_file(manifest_path));
        } catch (const nlohmann::json::exception&) {
          m = nlohmann::json::object();
        }
        if (m.value("key", "") == key && outputs_match(m, ctx.paths, outputs)) {
          outcome.skipped = true;
          if (log) *log << "[" << stage.name << "] unchanged, skipped\n";
          outcomes.push_back(outcome);
          continue;
        }
      }

      if (log) *log << "[" << stage.name << "] running\n";
      fs::remove(failed);
      fs::remove(manifest_path);
      stage.run(ctx);

      nlohmann::json output_hashes = nlohmann::json::object();
      for (const auto& o : stage.outputs(ctx)) output_hashes[relative_label(ctx.paths, o)] = sha256_file(o);
      outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const nlohmann::json manifest = {{"stage", stage.name},
                                       {"key", key},
                                       {"seed", cfg.get("seed")},
                                       {"inputs", input_hashes},
                                       {"outputs", output_hashes},
                                       {"duration_s", outcome.seconds}};
      write_text_file(manifest_path, manifest.dump(2) + "\n");
      if (log) *log << "[" << stage.name << "] done in " << fmt(std::round(outcome.seconds * 10) / 10) << " s\n";
    } catch (const std::exception& e) {
      try {
        write_text_file(failed, std::string(e.what()) + "\n");
      } catch (...) {
      }
      if (log) *log << "[" << stage.name << "] failed: " << e.what() << "\n";
      throw;
    }
    outcomes.push_back(outcome);
  }
  return outcomes;
}

void emit_plots(const std::string& reports_dir, const std::string& plots_dir, const std::vector<std::string>& required) {
  for (const auto& r : required)
    if (!fs::exists(fs::path(reports_dir) / r)) throw IoError("missing report " + (fs::path(reports_dir) / r).string());
  fs::create_directories(plots_dir);

  const fs::path curves = fs::path(reports_dir) / "curves.csv";
  if (fs::exists(curves)) {
    const auto rows = parse_csv(read_text_file(curves.string()));
    std::vector<PlotPoint> pts;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() != 8) throw ParseError(curves.string() + ": row " + std::to_string(i) + " has the wrong width");
      // series per (metric, n, M); the scenario keeps token and paragraph rows apart
      const std::string series = r[0] + " metric=" + r[3] + " n=" + r[4] + " M=" + r[2];
      pts.push_back({series, std::stol(r[1]), std::stod(r[5])});
    }
    write_text_file((fs::path(plots_dir) / "curves.json").string(), plot_json(pts).dump(1) + "\n");
  }

  const fs::path attr = fs::path(reports_dir) / "attribution.json";
  if (fs::exists(attr)) {
    const std::string text = read_text_file(attr.string());
    std::vector<PlotPoint> pts;
    if (!text.empty()) {
      const auto r = attribution_from_json(nlohmann::json::parse(text));
      for (std::size_t l = 0; l < r.contribution.size(); ++l) pts.push_back({"layer contribution", l, r.contribution[l]});
    }
    write_text_file((fs::path(plots_dir) / "attribution.json").string(), plot_json(pts).dump(1) + "\n");
  }

  const fs::path ratio = fs::path(reports_dir) / "ratio.csv";
  if (fs::exists(ratio)) {
    const auto rows = parse_csv(read_text_file(ratio.string()));
    std::vector<PlotPoint> pts;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() != 9) throw ParseError(ratio.string() + ": row " + std::to_string(i) + " has the wrong width");
      pts.push_back({r[0] + " layer " + r[1] + " " + r[2], std::stod(r[3]), std::stod(r[5])});
    }
    write_text_file((fs::path(plots_dir) / "ratio.json").string(), plot_json(pts).dump(1) + "\n");
  }
}

}  // namespace duc
