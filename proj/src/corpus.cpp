#include "duc/corpus.hpp"

#include "duc/error.hpp"
#include "duc/parallel.hpp"
#include "duc/rng.hpp"
#include "duc/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

namespace duc {

using nlohmann::json;

LoadedCorpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read corpus " + path);
  LoadedCorpus out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object() || !j.contains("question") || !j.contains("answer") ||
        !j["question"].is_string() || !j["answer"].is_string()) {
      ++out.skipped;
      continue;
    }
    RawSample s;
    s.question = j["question"].get<std::string>();
    s.answer = j["answer"].get<std::string>();
    if (tokenize(s.answer).empty()) {
      ++out.skipped;
      continue;
    }
    if (j.contains("id") && j["id"].is_string()) {
      s.id = j["id"].get<std::string>();
    } else if (j.contains("id") && j["id"].is_number_integer()) {
      s.id = std::to_string(j["id"].get<long>());
    } else {
      s.id = "line-" + std::to_string(line_no);
    }
    out.samples.push_back(std::move(s));
  }
  if (in.bad()) throw IoError("read failure on corpus " + path);
  if (out.samples.empty()) throw EmptyCorpusError("no parseable records in " + path);
  return out;
}

void save_corpus(const std::vector<RawSample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus " + path);
  for (const auto& s : samples) {
    json j{{"id", s.id}, {"question", s.question}, {"answer", s.answer}};
    out << j.dump() << '\n';
  }
}

std::string to_string(Scenario s) {
  return s == Scenario::TokenRepetition ? "token" : "paragraph";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "token") return Scenario::TokenRepetition;
  if (s == "paragraph") return Scenario::ParagraphRepetition;
  throw ParseError("unknown scenario: " + s);
}

DatasetSpec DatasetSpec::standard() {
  DatasetSpec spec;
  for (int n = 0; n <= 140; n += 10) spec.n_grid.push_back(n);
  spec.m_values = {1, 2, 5};
  spec.samples_per_cell = 100;
  spec.paragraph_samples = 1000;
  spec.paragraph_repeat_count = 5;
  return spec;
}

void DatasetSpec::validate() const {
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (n_grid[i] < 0) throw ParameterError("n_grid: entries must be nonnegative");
    if (i > 0 && n_grid[i] <= n_grid[i - 1]) throw ParameterError("n_grid: must be strictly increasing");
  }
  for (int m : m_values)
    if (m < 1) throw ParameterError("m_values: entries must be positive");
  if (!n_grid.empty() && m_values.empty()) throw ParameterError("m_values: empty while n_grid is not");
  if (samples_per_cell < 1) throw ParameterError("samples_per_cell: must be positive");
  if (paragraph_samples < 0) throw ParameterError("paragraph_samples: must be nonnegative");
  if (paragraph_repeat_count < 1) throw ParameterError("paragraph_repeat_count: must be positive");
}

namespace {

// Draws `count` indices from `pool`: distinct when the pool is large enough,
// with replacement otherwise.
std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, int count, Rng& rng, bool& with_replacement) {
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(count));
  with_replacement = pool.size() < static_cast<std::size_t>(count);
  if (!with_replacement) {
    auto shuffled = pool;
    rng.shuffle(shuffled.begin(), shuffled.end());
    out.assign(shuffled.begin(), shuffled.begin() + count);
  } else {
    for (int i = 0; i < count; ++i) out.push_back(pool[rng.below(pool.size())]);
  }
  return out;
}

}  // namespace

Dataset build_dataset(const DatasetSpec& spec, const std::vector<RawSample>& corpus) {
  spec.validate();
  if (corpus.empty()) throw EmptyCorpusError("build_dataset: corpus is empty");

  std::vector<Words> answers;
  answers.reserve(corpus.size());
  for (const auto& s : corpus) answers.push_back(tokenize(s.answer));

  const int max_n = spec.n_grid.empty() ? 0 : spec.n_grid.back();
  const int max_m = spec.m_values.empty() ? 0 : *std::max_element(spec.m_values.begin(), spec.m_values.end());
  const auto required = static_cast<std::size_t>(max_n + max_m);
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < answers.size(); ++i)
    if (answers[i].size() >= required && !answers[i].empty()) eligible.push_back(i);

  struct Cell {
    int n_start;
    int group_size;
  };
  std::vector<Cell> cells;
  for (int n : spec.n_grid)
    for (int m : spec.m_values) cells.push_back({n, m});
  if (!cells.empty() && eligible.empty())
    throw CellInfeasibleError("no source of at least " + std::to_string(required) + " tokens for cell (N=" +
                              std::to_string(cells.front().n_start) + ", M=" +
                              std::to_string(cells.front().group_size) + ")");

  std::vector<std::vector<std::size_t>> picks(cells.size());
  std::vector<char> replaced(cells.size(), 0);
  parallel_for(cells.size(), [&](std::size_t c) {
    Rng rng(derive_seed(spec.rng_seed, static_cast<std::uint64_t>(cells[c].n_start) + 1,
                        static_cast<std::uint64_t>(cells[c].group_size)));
    bool with_replacement = false;
    picks[c] = draw(eligible, spec.samples_per_cell, rng, with_replacement);
    replaced[c] = with_replacement;
  });

  Dataset out;
  json cell_manifest = json::array();
  std::set<std::string> token_sources;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    json ids = json::array();
    for (auto idx : picks[c]) {
      const auto& words = answers[idx];
      RepetitionSample s;
      s.source_id = corpus[idx].id;
      s.scenario = Scenario::TokenRepetition;
      s.n_start = cells[c].n_start;
      s.group_size = cells[c].group_size;
      s.repeat_count = 1;
      s.tokens = make_token_repetition<std::string>(words, s.n_start, s.group_size);
      out.samples.push_back(std::move(s));
      ids.push_back(corpus[idx].id);
      token_sources.insert(corpus[idx].id);
    }
    cell_manifest.push_back({{"N", cells[c].n_start},
                             {"M", cells[c].group_size},
                             {"with_replacement", static_cast<bool>(replaced[c])},
                             {"source_ids", ids}});
  }

  json paragraph_manifest = json::object();
  if (spec.paragraph_samples > 0) {
    std::vector<std::size_t> all(answers.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    Rng rng(derive_seed(spec.rng_seed, 0x7061726167ULL));
    bool with_replacement = false;
    const auto chosen = draw(all, spec.paragraph_samples, rng, with_replacement);
    json ids = json::array();
    long overlap = 0;
    for (auto idx : chosen) {
      const auto& words = answers[idx];
      RepetitionSample s;
      s.source_id = corpus[idx].id;
      s.scenario = Scenario::ParagraphRepetition;
      s.n_start = 0;
      s.group_size = static_cast<int>(words.size());
      s.repeat_count = spec.paragraph_repeat_count;
      s.tokens = make_paragraph_repetition<std::string>(words, spec.paragraph_repeat_count);
      out.samples.push_back(std::move(s));
      ids.push_back(corpus[idx].id);
      overlap += token_sources.count(corpus[idx].id) ? 1 : 0;
    }
    paragraph_manifest = {{"with_replacement", with_replacement},
                          {"overlap_with_token_sources", overlap},
                          {"source_ids", ids}};
  }

  out.manifest = {{"spec", to_json(spec)},
                  {"seed", spec.rng_seed},
                  {"corpus_size", corpus.size()},
                  {"required_length", required},
                  {"eligible_sources", eligible.size()},
                  {"token_cells", cell_manifest},
                  {"paragraph", paragraph_manifest},
                  {"sample_count", out.samples.size()}};
  return out;
}

json to_json(const RepetitionSample& s) {
  return {{"scenario", to_string(s.scenario)}, {"n_start", s.n_start},     {"group_size", s.group_size},
          {"repeat_count", s.repeat_count},    {"tokens", s.tokens},       {"source_id", s.source_id}};
}

RepetitionSample repetition_sample_from_json(const json& j) {
  RepetitionSample s;
  s.scenario = scenario_from_string(j.at("scenario").get<std::string>());
  s.n_start = j.at("n_start").get<int>();
  s.group_size = j.at("group_size").get<int>();
  s.repeat_count = j.at("repeat_count").get<int>();
  s.tokens = j.at("tokens").get<Words>();
  s.source_id = j.at("source_id").get<std::string>();
  return s;
}

json to_json(const DatasetSpec& spec) {
  return {{"n_grid", spec.n_grid},
          {"m_values", spec.m_values},
          {"samples_per_cell", spec.samples_per_cell},
          {"paragraph_samples", spec.paragraph_samples},
          {"paragraph_repeat_count", spec.paragraph_repeat_count},
          {"rng_seed", spec.rng_seed}};
}

DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec spec;
  spec.n_grid = j.at("n_grid").get<std::vector<int>>();
  spec.m_values = j.at("m_values").get<std::vector<int>>();
  spec.samples_per_cell = j.at("samples_per_cell").get<int>();
  spec.paragraph_samples = j.at("paragraph_samples").get<int>();
  spec.paragraph_repeat_count = j.at("paragraph_repeat_count").get<int>();
  spec.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return spec;
}

void save_dataset(const Dataset& dataset, const std::string& samples_path, const std::string& manifest_path) {
  {
    std::ofstream out(samples_path, std::ios::binary);
    if (!out) throw IoError("cannot write dataset " + samples_path);
    for (const auto& s : dataset.samples) out << to_json(s).dump() << '\n';
  }
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + manifest_path);
  out << dataset.manifest.dump(2) << '\n';
}

std::vector<RepetitionSample> load_dataset(const std::string& samples_path) {
  std::ifstream in(samples_path);
  if (!in) throw IoError("cannot read dataset " + samples_path);
  std::vector<RepetitionSample> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(repetition_sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(samples_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace duc
