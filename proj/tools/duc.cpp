#include "duc/attribution.hpp"
#include "duc/error.hpp"
#include "duc/pipeline.hpp"
#include "duc/tensor_io.hpp"
#include "duc/toy_world.hpp"

#include <CLI11.hpp>

#include <deque>
#include <filesystem>
#include <iostream>

namespace {

// Command-line overrides, applied on top of the config file.
struct Overrides {
  std::deque<std::pair<std::string, std::string>> bound;  // deque: CLI11 keeps pointers into it
  std::vector<std::pair<std::string, std::string>> fixed;

  void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = bound.emplace_back(key, "");
    app->add_option(flag, slot.second, help + " [" + key + "]");
  }
  void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& value,
            const std::string& help) {
    app->add_flag_callback(name, [this, key, value] { fixed.emplace_back(key, value); }, help + " [" + key + "]");
  }
  void apply(duc::RunConfig& cfg) const {
    for (const auto& [k, v] : bound)
      if (!v.empty()) cfg.set(k, v);
    for (const auto& [k, v] : fixed) cfg.set(k, v);
  }
};

void add_decode_flags(Overrides& ov, CLI::App* app) {
  ov.bind(app, "--strategy", "decode.strategy", "greedy, beam, topk or topp");
  ov.bind(app, "--max-new-tokens", "decode.max_new_tokens", "tokens to generate");
  ov.bind(app, "--beam-width", "decode.beam_width", "beam width");
  ov.bind(app, "--top-k", "decode.k", "top-k cutoff");
  ov.bind(app, "--top-p", "decode.p", "nucleus mass");
  ov.bind(app, "--temperature", "decode.temperature", "sampling temperature");
}

void add_scan_flags(Overrides& ov, CLI::App* app) {
  ov.bind(app, "--rho", "scan.rho", "repetition threshold");
  ov.bind(app, "--lambda-scale", "scan.lambda_scale", "steering strength as a multiple of the max activation");
  ov.flag(app, "--lambda-absolute", "scan.lambda_absolute", "true", "use --lambda-scale as the raw strength");
}

duc::TokenSeq encode_text(const duc::Vocabulary& vocab, const std::string& text) {
  const auto words = duc::tokenize(text);
  for (const auto& w : words)
    if (!vocab.contains(w)) std::cerr << "warning: '" << w << "' is not in the vocabulary, encoded as <unk>\n";
  return vocab.encode(words);
}

}  // namespace

int main(int argc, char** argv) {
  std::cout << std::unitbuf;
  CLI::App app{"Repetition-feature analysis toolkit: metrics, toy LM, SAEs, attribution and steering"};
  app.require_subcommand(1);

  std::string config_path, seed, out;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "global seed");
  app.add_option("--out", out, "run directory");
  app.add_option("--set", sets, "override a config key, key=value (repeatable)");

  Overrides ov;

  auto* build = app.add_subcommand("build-dataset", "build the repetition dataset from the corpus");
  ov.bind(build, "--corpus", "corpus", "corpus JSONL");
  ov.bind(build, "--samples-per-cell", "dataset.samples_per_cell", "token-scenario samples per (N, M)");
  ov.bind(build, "--paragraph-samples", "dataset.paragraph_samples", "paragraph-scenario samples");
  ov.bind(build, "--repeat-count", "dataset.paragraph_repeat_count", "paragraph repeat count");

  auto* curves = app.add_subcommand("curves", "metric curves over the dataset");
  ov.bind(curves, "--n", "curves.n", "n-gram sizes, comma separated");
  ov.bind(curves, "--w", "curves.w", "repeat-score weight");
  std::string metric;
  curves->add_option("--metric", metric, "repeat, bleu, entropy or all");

  auto* train_lm = app.add_subcommand("train-lm", "train the toy language model");
  ov.bind(train_lm, "--steps", "lm.steps", "optimizer steps");
  ov.bind(train_lm, "--layers", "lm.n_layers", "transformer blocks");
  ov.bind(train_lm, "--d-model", "lm.d_model", "residual width");

  auto* gen = app.add_subcommand("generate", "generate a continuation with the trained model");
  std::string prompt;
  gen->add_option("--prompt", prompt, "prompt text")->required();
  add_decode_flags(ov, gen);

  auto* ppl = app.add_subcommand("ppl", "perplexity of a text under the trained model");
  std::string text;
  ppl->add_option("--text", text, "text to score")->required();

  auto* collect = app.add_subcommand("collect-acts", "collect residual activations at the attributed layers");
  ov.bind(collect, "--sae-layers", "sae.layers", "number of top attributed layers");

  auto* train_sae = app.add_subcommand("train-sae", "train one SAE per attributed layer and calibrate it");
  ov.bind(train_sae, "--beta", "sae.beta", "L1 coefficient");
  ov.bind(train_sae, "--sae-steps", "sae.steps", "optimizer steps");
  ov.bind(train_sae, "--expansion", "sae.expansion", "features per residual dimension");

  auto* calib = app.add_subcommand("calibrate", "recompute feature statistics for the trained SAEs");

  auto* attribute = app.add_subcommand("attribute", "rank layers by logit-difference attribution");
  ov.bind(attribute, "--reading", "attribution.reading", "decomposed or accumulated");
  ov.flag(attribute, "--no-final-norm", "attribution.final_norm", "false", "skip the final normalization");

  auto* scan = app.add_subcommand("scan", "classify features by steering them");
  add_scan_flags(ov, scan);
  ov.bind(scan, "--dataset", "scan.dataset", "question set: EQ, AQ or NQ");
  ov.bind(scan, "--gen-tokens", "scan.gen_tokens", "tokens generated per question");

  auto* ratio = app.add_subcommand("ratio-exp", "activate and deactivate feature subsets");
  add_scan_flags(ov, ratio);
  ov.bind(ratio, "--dataset", "ratio.datasets", "question sets, comma separated");
  ov.bind(ratio, "--ratios", "ratio.ratios", "feature ratios, comma separated");
  ov.bind(ratio, "--positions", "deactivate.positions", "deactivate at all or generated positions");

  auto* mitigate = app.add_subcommand("mitigate", "compare decoding methods with repetition-feature deactivation");
  add_scan_flags(ov, mitigate);
  ov.bind(mitigate, "--dataset", "mitigate.datasets", "question sets, comma separated");
  ov.bind(mitigate, "--positions", "deactivate.positions", "deactivate at all or generated positions");
  add_decode_flags(ov, mitigate);

  auto* plots = app.add_subcommand("plots", "emit plot series from the reports");
  std::string reports_dir;
  plots->add_option("--reports", reports_dir, "reports directory (default: <out>/reports)");

  auto* run_all = app.add_subcommand("run-all", "run every stage, skipping unchanged ones, then emit plots");

  auto* world = app.add_subcommand("make-world", "write the synthetic corpus, questions and templates");
  std::string world_dir;
  world->add_option("--dir", world_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    duc::RunConfig cfg;
    if (!config_path.empty()) duc::apply_config_file(cfg, config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw duc::ParameterError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!seed.empty()) cfg.set("seed", seed);
    if (!out.empty()) cfg.set("out", out);
    ov.apply(cfg);
    if (!metric.empty()) cfg.set("curves.metrics", metric == "all" ? "repeat,bleu,entropy" : metric);

    const duc::RunPaths paths{cfg.get("out")};
    auto stage_cmd = [&](const std::string& name) {
      duc::run_pipeline(cfg, {name}, &std::cout);
      return 0;
    };

    if (*build) return stage_cmd("dataset");
    if (*curves) return stage_cmd("curves");
    if (*train_lm) return stage_cmd("train-lm");
    if (*attribute) return stage_cmd("attribute");
    if (*collect) return stage_cmd("collect-acts");
    if (*train_sae) return stage_cmd("train-sae");
    if (*scan) return stage_cmd("scan");
    if (*ratio) return stage_cmd("ratio");
    if (*mitigate) return stage_cmd("mitigate");

    if (*gen) {
      const auto model = duc::load_model(paths.lm());
      const auto vocab = duc::load_vocabulary(paths.vocab());
      const auto ids = duc::generate(model, encode_text(vocab, prompt), duc::decode_config(cfg));
      const auto words = vocab.decode(ids);
      std::cout << duc::detokenize(words) << "\n";
      return 0;
    }
    if (*ppl) {
      const auto model = duc::load_model(paths.lm());
      const auto vocab = duc::load_vocabulary(paths.vocab());
      const auto ids = encode_text(vocab, text);
      if (ids.size() < 2) throw duc::ParameterError("perplexity needs at least two tokens");
      std::cout << duc::perplexity(model, ids) << "\n";
      return 0;
    }
    if (*calib) {
      const auto attr = duc::attribution_from_json(nlohmann::json::parse(duc::read_text_file(paths.attribution_json())));
      const auto n = static_cast<std::size_t>(std::max(1, cfg.get_int("sae.layers")));
      for (std::size_t i = 0; i < std::min(n, attr.ranked_layers.size()); ++i) {
        const int layer = attr.ranked_layers[i];
        const auto sae = duc::load_sae(paths.sae(layer));
        const auto st = duc::calibrate(sae, duc::load_activations(paths.activations(layer)));
        duc::write_text_file(paths.feature_stats(layer), duc::to_json(st).dump() + "\n");
        std::cout << "layer " << layer << ": " << st.samples << " vectors\n";
      }
      return 0;
    }
    if (*plots) {
      duc::emit_plots(reports_dir.empty() ? paths.root + "/reports" : reports_dir, paths.plots(),
                      {"curves.csv", "attribution.json"});
      return 0;
    }
    if (*run_all) {
      duc::run_pipeline(cfg, {}, &std::cout);
      duc::emit_plots(paths.root + "/reports", paths.plots(), {"curves.csv", "attribution.json"});
      std::cout << "[plots] written to " << paths.plots() << "\n";
      return 0;
    }
    if (*world) {
      const auto w = duc::make_toy_world(duc::ToyWorldOptions{});
      std::filesystem::create_directories(world_dir);
      duc::save_corpus(w.corpus, world_dir + "/corpus.jsonl");
      duc::save_questions(w.questions, world_dir + "/questions.jsonl");
      duc::save_templates(w.templates, world_dir + "/templates.jsonl");
      std::cout << w.corpus.size() << " samples, " << w.questions.size() << " questions, " << w.templates.size()
                << " templates\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
