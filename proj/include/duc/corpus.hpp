#pragma once

#include "duc/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace duc {

struct RawSample {
  std::string id;
  std::string question;
  std::string answer;
};

struct LoadedCorpus {
  std::vector<RawSample> samples;
  long skipped = 0;
};

// Line-delimited JSON with "question" and "answer" strings. Lines missing either
// field, or with an empty answer, are skipped and counted. A missing "id"
// defaults to the line number.
LoadedCorpus load_corpus(const std::string& path);
void save_corpus(const std::vector<RawSample>& samples, const std::string& path);

enum class Scenario { TokenRepetition, ParagraphRepetition };
std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct RepetitionSample {
  std::string source_id;
  Scenario scenario = Scenario::TokenRepetition;
  int n_start = 0;
  int group_size = 1;
  int repeat_count = 1;
  Words tokens;
};

// Keeps the first n_start + group_size elements, then cycles the group until
// the input length is reached.
template <typename T>
std::vector<T> make_token_repetition(std::span<const T> sample, int n_start, int group_size);

template <typename T>
std::vector<T> make_paragraph_repetition(std::span<const T> sample, int repeat_count);

struct DatasetSpec {
  std::vector<int> n_grid;
  std::vector<int> m_values;
  int samples_per_cell = 100;
  int paragraph_samples = 1000;
  int paragraph_repeat_count = 5;
  std::uint64_t rng_seed = 0;

  // Grid used for the token-repetition scenario: N = 0, 10, ..., 140; M in {1, 2, 5}.
  static DatasetSpec standard();
  void validate() const;
};

struct Dataset {
  std::vector<RepetitionSample> samples;
  nlohmann::json manifest;
};

Dataset build_dataset(const DatasetSpec& spec, const std::vector<RawSample>& corpus);

nlohmann::json to_json(const RepetitionSample& s);
RepetitionSample repetition_sample_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

void save_dataset(const Dataset& dataset, const std::string& samples_path, const std::string& manifest_path);
std::vector<RepetitionSample> load_dataset(const std::string& samples_path);

}  // namespace duc

#include "duc/corpus_impl.hpp"
