#pragma once

#include "duc/corpus.hpp"
#include "duc/experiments.hpp"
#include "duc/generate.hpp"
#include "duc/metrics.hpp"
#include "duc/model.hpp"
#include "duc/sae.hpp"
#include "duc/train.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace duc {

// Flat key = value configuration. Every key has a default (see
// RunConfig::defaults and the README); unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();  // defaults

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  long get_long(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;

  // Canonical text of every key starting with one of the prefixes.
  std::string canonical(const std::vector<std::string>& prefixes) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  static const std::vector<std::pair<std::string, std::string>>& defaults();

 private:
  std::map<std::string, std::string> values_;
};

// Lines of "key = value"; blank lines and lines starting with '#' are ignored.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source = "config");
void apply_config_file(RunConfig& cfg, const std::string& path);

// Typed views of the configuration.
DatasetSpec dataset_spec(const RunConfig& cfg);
CurveOptions curve_options(const RunConfig& cfg);
ModelConfig lm_model_config(const RunConfig& cfg, int vocab_size);
LmTrainConfig lm_train_config(const RunConfig& cfg);
LmCorpusOptions lm_corpus_options(const RunConfig& cfg);
SaeTrainConfig sae_train_config(const RunConfig& cfg, int layer);
ScanConfig scan_config(const RunConfig& cfg);
RatioConfig ratio_config(const RunConfig& cfg);
GenerationConfig decode_config(const RunConfig& cfg);

// Artifact layout under the output directory.
struct RunPaths {
  std::string root;
  std::string dataset() const { return root + "/artifacts/dataset.jsonl"; }
  std::string dataset_manifest() const { return root + "/reports/dataset_manifest.json"; }
  std::string curves() const { return root + "/reports/curves.csv"; }
  std::string vocab() const { return root + "/artifacts/vocab.txt"; }
  std::string lm() const { return root + "/artifacts/lm.bin"; }
  std::string lm_report() const { return root + "/reports/lm_train.json"; }
  std::string attribution_json() const { return root + "/reports/attribution.json"; }
  std::string attribution_csv() const { return root + "/reports/attribution.csv"; }
  std::string activations(int layer) const { return root + "/artifacts/acts_L" + std::to_string(layer) + ".bin"; }
  std::string sae(int layer) const { return root + "/artifacts/sae_L" + std::to_string(layer) + ".bin"; }
  std::string feature_stats(int layer) const {
    return root + "/reports/feature_stats_L" + std::to_string(layer) + ".json";
  }
  std::string sae_report() const { return root + "/reports/sae_train.json"; }
  std::string features_jsonl() const { return root + "/reports/features.jsonl"; }
  std::string features_csv() const { return root + "/reports/features.csv"; }
  std::string ratio() const { return root + "/reports/ratio.csv"; }
  std::string mitigation() const { return root + "/reports/mitigation.csv"; }
  std::string plots() const { return root + "/plots"; }
  std::string manifest(const std::string& stage) const { return root + "/manifests/" + stage + ".json"; }
  std::string failed(const std::string& stage) const { return root + "/manifests/" + stage + ".failed"; }
};

// Stage names in execution order.
const std::vector<std::string>& stage_names();

struct StageOutcome {
  std::string stage;
  bool skipped = false;  // inputs, config and outputs unchanged since the last run
  double seconds = 0;
};

// Runs the selected stages in order (all when empty). A stage whose cache key
// (SHA-256 of its config and input contents) matches its manifest and whose
// outputs still hash as recorded is skipped. On failure the stage leaves a
// .failed marker next to its manifest and the exception propagates.
std::vector<StageOutcome> run_pipeline(const RunConfig& cfg, const std::vector<std::string>& stages = {},
                                       std::ostream* log = nullptr);

// Plot series from whichever reports exist in reports_dir: metric curves
// (one series per metric, n and M) and layer-attribution bars. Missing
// inputs named explicitly in `required` raise IoError; an empty report gives
// an empty series file.
void emit_plots(const std::string& reports_dir, const std::string& plots_dir,
                const std::vector<std::string>& required = {});

// Question sets as token prompts.
std::vector<QuestionDataset> question_datasets(const std::string& questions_path, const Vocabulary& vocab,
                                               const std::vector<std::string>& names);

// Vocabulary over the corpus, questions and templates.
Vocabulary build_run_vocabulary(const std::vector<RawSample>& corpus, const std::string& questions_path,
                                const std::string& templates_path);

std::string curves_csv(const CurveTable& t);

}  // namespace duc
