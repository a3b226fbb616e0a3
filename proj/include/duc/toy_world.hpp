#pragma once

#include "duc/corpus.hpp"
#include "duc/types.hpp"
#include "duc/vocab.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace duc {

// A small closed world (animals, cities, people, ...) rendered as lower-case
// text with punctuation split into its own tokens. Everything is a pure
// function of the seed.

enum class QuestionSet { EQ, AQ, NQ };
std::string to_string(QuestionSet q);
QuestionSet question_set_from_string(const std::string& s);

struct ToyWorldOptions {
  int simple_answers = 500;       // short factual answers
  int enumeration_answers = 450;  // lists of distinct items
  int explanation_answers = 300;  // multi-sentence descriptions and comparisons
  int story_answers = 250;        // long narratives, at least 150 tokens each
  int questions_per_set = 50;
  std::uint64_t seed = 7;
};

struct ToyQuestion {
  QuestionSet set = QuestionSet::EQ;
  std::string text;
};

struct ToyTemplate {
  std::string prompt;
  std::string correct;
  std::string incorrect;
};

struct ToyWorld {
  std::vector<RawSample> corpus;
  std::vector<ToyQuestion> questions;
  std::vector<ToyTemplate> templates;
  Words lexicon;  // every word the world can emit
};

ToyWorld make_toy_world(const ToyWorldOptions& options);

void save_questions(const std::vector<ToyQuestion>& questions, const std::string& path);
std::vector<ToyQuestion> load_questions(const std::string& path);
std::vector<ToyQuestion> filter_questions(const std::vector<ToyQuestion>& all, QuestionSet set);

}  // namespace duc
