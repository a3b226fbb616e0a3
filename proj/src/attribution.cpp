#include "duc/attribution.hpp"

#include "duc/error.hpp"
#include "duc/parallel.hpp"
#include "duc/report.hpp"
#include "duc/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace duc {

Template encode_template(const ToyTemplate& t, const Vocabulary& vocab) {
  Template out;
  const Words words = tokenize(t.prompt);
  for (const auto& w : words)
    if (!vocab.contains(w)) throw ParameterError("template word '" + w + "' is not in the vocabulary");
  if (!vocab.contains(t.correct) || !vocab.contains(t.incorrect))
    throw ParameterError("template answer is not in the vocabulary");
  out.prompt = vocab.encode(words);
  out.correct = vocab.id(t.correct);
  out.incorrect = vocab.id(t.incorrect);
  if (out.prompt.empty()) throw ParameterError("empty template prompt");
  return out;
}

void save_templates(const std::vector<ToyTemplate>& templates, const std::string& path) {
  std::string text;
  for (const auto& t : templates)
    text += nlohmann::json{{"prompt", tokenize(t.prompt)}, {"correct", t.correct}, {"incorrect", t.incorrect}}.dump() +
            "\n";
  write_text_file(path, text);
}

std::vector<ToyTemplate> load_templates(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<ToyTemplate> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto words = j.at("prompt").get<Words>();
      out.push_back({detokenize(words), j.at("correct").get<std::string>(), j.at("incorrect").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

Vectorf diff_direction(const ModelParams<float>& p, TokenId correct, TokenId incorrect) {
  const int V = p.config.vocab_size;
  if (correct < 0 || correct >= V || incorrect < 0 || incorrect >= V)
    throw ParameterError("token id outside vocabulary");
  return (p.tok_emb.row(correct) - p.tok_emb.row(incorrect)).transpose();
}

std::vector<double> layer_contributions(const ModelParams<float>& p, const Template& t,
                                        const AttributionOptions& options) {
  const Vectorf dir = diff_direction(p, t.correct, t.incorrect);
  if (t.prompt.empty()) throw ParameterError("empty template prompt");
  const auto fr = forward(p, t.prompt);
  std::vector<double> out;
  if (options.reading == ResidualReading::Accumulated) {
    for (const auto& res : fr.trace.residual) {
      RowMatrixf last = res.bottomRows(1);
      if (options.apply_final_norm) last = final_norm(p, last);
      out.push_back(static_cast<double>(last.row(0).dot(dir.transpose())));
    }
    return out;
  }

  const auto last_pos = static_cast<Eigen::Index>(t.prompt.size() - 1);
  RowVector<float> prev = p.tok_emb.row(t.prompt.back()) + p.pos_emb.row(last_pos);
  const RowVector<float> final_row = fr.trace.residual.back().bottomRows(1);
  const float mean = final_row.mean();
  const float rstd = 1.0f / std::sqrt((final_row.array() - mean).square().mean() + static_cast<float>(kNormEps));
  for (const auto& res : fr.trace.residual) {
    const RowVector<float> cur = res.bottomRows(1);
    RowVector<float> comp = cur - prev;
    if (options.apply_final_norm)
      comp = ((comp.array() - comp.mean()) * rstd * p.lnf_g.row(0).array()).matrix();
    out.push_back(static_cast<double>(comp.dot(dir.transpose())));
    prev = cur;
  }
  return out;
}

std::vector<int> rank_descending(const std::vector<double>& scores) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  return idx;
}

AttributionResult rank_layers(const ModelParams<float>& p, const std::vector<Template>& templates,
                              const AttributionOptions& options) {
  if (templates.empty()) throw ParameterError("attribution needs at least one template");
  AttributionResult r;
  r.per_template.resize(templates.size());
  parallel_for(templates.size(), [&](std::size_t i) { r.per_template[i] = layer_contributions(p, templates[i], options); });
  const auto L = static_cast<std::size_t>(p.config.n_layers);
  r.contribution.assign(L, 0.0);
  for (const auto& c : r.per_template)
    for (std::size_t l = 0; l < L; ++l) r.contribution[l] += c[l];
  for (auto& c : r.contribution) c /= static_cast<double>(templates.size());
  r.ranked_layers = rank_descending(r.contribution);
  r.templates_used = static_cast<int>(templates.size());
  return r;
}

std::vector<int> repetition_layers(const AttributionResult& r) {
  std::vector<int> out(r.ranked_layers.begin(), r.ranked_layers.begin() + std::min<std::size_t>(2, r.ranked_layers.size()));
  return out;
}

nlohmann::json to_json(const AttributionResult& r) {
  return {{"contribution", r.contribution},
          {"ranked_layers", r.ranked_layers},
          {"templates_used", r.templates_used},
          {"per_template", r.per_template}};
}

AttributionResult attribution_from_json(const nlohmann::json& j) {
  AttributionResult r;
  try {
    r.contribution = j.at("contribution").get<std::vector<double>>();
    r.ranked_layers = j.at("ranked_layers").get<std::vector<int>>();
    r.templates_used = j.at("templates_used").get<int>();
    r.per_template = j.at("per_template").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("attribution report: ") + e.what());
  }
  return r;
}

std::string attribution_csv(const AttributionResult& r) {
  CsvTable t({"layer", "mean_contribution", "rank"});
  std::vector<int> rank(r.contribution.size());
  for (std::size_t i = 0; i < r.ranked_layers.size(); ++i) rank[static_cast<std::size_t>(r.ranked_layers[i])] = static_cast<int>(i) + 1;
  for (std::size_t l = 0; l < r.contribution.size(); ++l)
    t.add({std::to_string(l), fmt(r.contribution[l]), std::to_string(rank[l])});
  return t.str();
}

}  // namespace duc
