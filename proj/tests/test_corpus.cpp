#include "duc/corpus.hpp"
#include "duc/attribution.hpp"

#include "duc/error.hpp"
#include "duc/rng.hpp"
#include "duc/tensor_io.hpp"
#include "duc/toy_world.hpp"
#include "duc/vocab.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>
#include <fstream>

using namespace duc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "duc_test_corpus";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::vector<RawSample> numbered_corpus(int count, int length) {
  std::vector<RawSample> out;
  for (int i = 0; i < count; ++i) {
    std::string answer;
    for (int k = 0; k < length; ++k) answer += "w" + std::to_string((i * 7 + k) % 50) + " ";
    out.push_back({"s" + std::to_string(i), "q?", answer});
  }
  return out;
}

}  // namespace

TEST_CASE("tokenize splits on unicode whitespace") {
  CHECK(tokenize("  the cat\tsat.\n") == Words{"the", "cat", "sat."});
  CHECK(tokenize("a\xC2\xA0" "b\xE3\x80\x80" "c") == Words{"a", "b", "c"});
  CHECK(tokenize("Caf\xC3\xA9 ok") == Words{"Caf\xC3\xA9", "ok"});
  CHECK(tokenize("   ").empty());
}

TEST_CASE("load_corpus keeps order and counts skipped lines") {
  const auto p = scratch("three.jsonl");
  write_file(p,
             "{\"id\":\"a\",\"question\":\"q1\",\"answer\":\"one\"}\n"
             "{\"id\":\"b\",\"question\":\"q2\",\"answer\":\"two\"}\n"
             "{\"id\":\"c\",\"question\":\"q3\",\"answer\":\"three\"}\n");
  auto c = load_corpus(p.string());
  REQUIRE(c.samples.size() == 3);
  CHECK(c.samples[0].id == "a");
  CHECK(c.samples[2].answer == "three");
  CHECK(c.skipped == 0);

  const auto q = scratch("malformed.jsonl");
  write_file(q,
             "{\"question\":\"q1\",\"answer\":\"one\"}\n"
             "{\"question\":\"q2\"}\n"
             "{\"question\":\"q3\",\"answer\":\"three\"}\n");
  c = load_corpus(q.string());
  CHECK(c.samples.size() == 2);
  CHECK(c.skipped == 1);

  const auto e = scratch("empty.jsonl");
  write_file(e, "");
  CHECK_THROWS_AS(load_corpus(e.string()), EmptyCorpusError);
  CHECK_THROWS_AS(load_corpus(scratch("missing.jsonl").string()), IoError);
}

TEST_CASE("make_token_repetition examples") {
  using W = Words;
  CHECK(make_token_repetition<std::string>(W{"a", "b", "c", "d", "e", "f"}, 2, 2) == W{"a", "b", "c", "d", "c", "d"});
  CHECK(make_token_repetition<std::string>(W{"a", "b", "c"}, 0, 1) == W{"a", "a", "a"});
  CHECK(make_token_repetition<std::string>(W{"a", "b", "c", "d", "e"}, 1, 2) == W{"a", "b", "c", "b", "c"});
  CHECK_THROWS_AS(make_token_repetition<std::string>(W{"a", "b"}, 1, 2), ParameterError);
  CHECK_THROWS_AS(make_token_repetition<std::string>(W{}, 0, 1), ParameterError);
  try {
    make_token_repetition<std::string>(W{"a"}, 0, 0);
    FAIL("expected throw");
  } catch (const ParameterError& e) {
    CHECK(std::string(e.what()).find("group_size") != std::string::npos);
  }
}

TEST_CASE("make_paragraph_repetition examples") {
  using W = Words;
  CHECK(make_paragraph_repetition<std::string>(W{"a", "b"}, 5) == W{"a", "b", "a", "b", "a", "b", "a", "b", "a", "b"});
  CHECK(make_paragraph_repetition<std::string>(W{"a"}, 1) == W{"a"});
  CHECK(make_paragraph_repetition<std::string>(W{"a", "b", "c"}, 2) == W{"a", "b", "c", "a", "b", "c"});
  CHECK_THROWS_AS(make_paragraph_repetition<std::string>(W{"a"}, 0), ParameterError);
}

TEST_CASE("repetition invariants hold on random inputs") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const int len = 1 + static_cast<int>(rng.below(60));
    TokenSeq seq(static_cast<std::size_t>(len));
    for (auto& t : seq) t = static_cast<TokenId>(rng.below(9));
    const int m = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(len)));
    const int n = static_cast<int>(rng.below(static_cast<std::uint64_t>(len - m + 1)));
    const auto out = make_token_repetition<TokenId>(seq, n, m);
    REQUIRE(out.size() == seq.size());
    for (int i = 0; i < len; ++i) {
      const auto expected = i < n ? seq[static_cast<std::size_t>(i)] : seq[static_cast<std::size_t>(n + (i - n) % m)];
      CHECK(out[static_cast<std::size_t>(i)] == expected);
    }
    const int k = 1 + static_cast<int>(rng.below(6));
    const auto para = make_paragraph_repetition<TokenId>(seq, k);
    REQUIRE(para.size() == seq.size() * static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c)
      CHECK(std::equal(seq.begin(), seq.end(), para.begin() + static_cast<long>(c) * len));
  }
}

TEST_CASE("build_dataset sizes follow the grid") {
  auto corpus = numbered_corpus(200, 160);
  DatasetSpec spec = DatasetSpec::standard();
  spec.paragraph_samples = 1000;
  const auto ds = build_dataset(spec, corpus);
  CHECK(ds.samples.size() == 5500);
  CHECK(ds.manifest["paragraph"]["with_replacement"].get<bool>());

  DatasetSpec tiny;
  tiny.n_grid = {0};
  tiny.m_values = {1};
  tiny.samples_per_cell = 1;
  tiny.paragraph_samples = 0;
  CHECK(build_dataset(tiny, corpus).samples.size() == 1);
}

TEST_CASE("build_dataset is deterministic and records sources") {
  auto corpus = numbered_corpus(60, 30);
  DatasetSpec spec;
  spec.n_grid = {0, 10, 20};
  spec.m_values = {1, 2};
  spec.samples_per_cell = 20;
  spec.paragraph_samples = 10;
  spec.rng_seed = 99;
  const auto a = build_dataset(spec, corpus);
  const auto b = build_dataset(spec, corpus);
  const auto pa = scratch("a.jsonl"), ma = scratch("a.json"), pb = scratch("b.jsonl"), mb = scratch("b.json");
  save_dataset(a, pa.string(), ma.string());
  save_dataset(b, pb.string(), mb.string());
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(pa) == slurp(pb));
  CHECK(slurp(ma) == slurp(mb));

  const auto& cells = a.manifest["token_cells"];
  REQUIRE(cells.size() == 6);
  for (const auto& c : cells) {
    CHECK_FALSE(c["with_replacement"].get<bool>());
    const auto ids = c["source_ids"].get<std::vector<std::string>>();
    CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == ids.size());
  }

  const auto loaded = load_dataset(pa.string());
  REQUIRE(loaded.size() == a.samples.size());
  CHECK(loaded[7].tokens == a.samples[7].tokens);
  CHECK(loaded.back().scenario == Scenario::ParagraphRepetition);
  CHECK(loaded.back().tokens.size() == 5 * static_cast<std::size_t>(loaded.back().group_size));
}

TEST_CASE("build_dataset resamples short sources and fails on infeasible cells") {
  auto corpus = numbered_corpus(30, 8);
  auto longer = numbered_corpus(3, 40);
  for (auto& s : longer) s.id = "long-" + s.id;
  corpus.insert(corpus.end(), longer.begin(), longer.end());

  DatasetSpec spec;
  spec.n_grid = {0, 30};
  spec.m_values = {2};
  spec.samples_per_cell = 5;
  spec.paragraph_samples = 0;
  const auto ds = build_dataset(spec, corpus);
  for (const auto& s : ds.samples) CHECK(s.source_id.rfind("long-", 0) == 0);
  CHECK(ds.manifest["token_cells"][0]["with_replacement"].get<bool>());

  spec.n_grid = {0, 100};
  try {
    build_dataset(spec, corpus);
    FAIL("expected CellInfeasibleError");
  } catch (const CellInfeasibleError& e) {
    CHECK(std::string(e.what()).find("N=0, M=2") != std::string::npos);
  }
  CHECK_THROWS_AS(build_dataset(spec, {}), EmptyCorpusError);
}

TEST_CASE("toy world is deterministic and well formed") {
  ToyWorldOptions opt;
  opt.simple_answers = 20;
  opt.enumeration_answers = 20;
  opt.explanation_answers = 20;
  opt.story_answers = 10;
  const auto a = make_toy_world(opt);
  const auto b = make_toy_world(opt);
  REQUIRE(a.corpus.size() == 70);
  for (std::size_t i = 0; i < a.corpus.size(); ++i) CHECK(a.corpus[i].answer == b.corpus[i].answer);
  long stories = 0;
  for (const auto& s : a.corpus)
    if (s.id.rfind("story", 0) == 0) {
      ++stories;
      CHECK(tokenize(s.answer).size() >= 150);
    }
  CHECK(stories == 10);
  CHECK(filter_questions(a.questions, QuestionSet::EQ).size() == 50);
  CHECK(filter_questions(a.questions, QuestionSet::NQ).size() == 50);
  CHECK(a.templates.size() == 8);
  const auto vocab = Vocabulary::build(a.lexicon);
  for (const auto& s : a.corpus)
    for (const auto& w : tokenize(s.answer)) CHECK(vocab.contains(w));
}

TEST_CASE("the bundled data files are the default toy world") {
  const auto w = make_toy_world(ToyWorldOptions{});
  const auto dir = scratch("bundle");
  fs::create_directories(dir);
  save_corpus(w.corpus, (dir / "corpus.jsonl").string());
  save_questions(w.questions, (dir / "questions.jsonl").string());
  save_templates(w.templates, (dir / "templates.jsonl").string());
  for (const char* f : {"corpus.jsonl", "questions.jsonl", "templates.jsonl"}) {
    INFO(f);
    CHECK(read_text_file((dir / f).string()) == read_text_file(std::string(DUC_DATA_DIR) + "/" + f));
  }
}
