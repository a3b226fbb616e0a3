#include "duc/metrics.hpp"

#include "duc/error.hpp"
#include "duc/rng.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace duc;

namespace {

Vocabulary abc_vocab() {
  Vocabulary v;
  for (const char* t : {"a", "b", "c", "d", "the", "cat", "sat.", "dog", "ran.", "hi!", "bye?"}) v.add(t);
  return v;
}

TokenSeq ids(const Vocabulary& v, std::initializer_list<const char*> words) {
  TokenSeq out;
  for (auto w : words) out.push_back(v.id(w));
  return out;
}

}  // namespace

TEST_CASE("repeat_score hand-counted values") {
  const auto v = abc_vocab();
  CHECK(repeat_score(ids(v, {"a", "b", "a", "b", "a", "b"}), 1, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(repeat_score(ids(v, {"a", "b", "c"}), 1, 1.0) == 0.0);
  CHECK(repeat_score(ids(v, {"a", "a", "b"}), 1, 1.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(repeat_score(ids(v, {"a", "b", "a", "b", "a", "b"}), 2, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(repeat_score(ids(v, {"a"}), 2, 1.0) == 0.0);
}

TEST_CASE("repeat_score rejects bad parameters") {
  const TokenSeq s{1, 2, 3};
  CHECK_THROWS_AS(repeat_score(s, 0, 1.0), ParameterError);
  CHECK_THROWS_AS(repeat_score(s, 1, 0.0), ParameterError);
  CHECK_THROWS_AS(repeat_score(s, 1, -1.0), ParameterError);
}

TEST_CASE("repeat_score matches brute force on every short sequence over three symbols") {
  long mismatches = 0, checked = 0;
  for (int len = 0; len <= 8; ++len) {
    long total = 1;
    for (int i = 0; i < len; ++i) total *= 3;
    for (long code = 0; code < total; ++code) {
      TokenSeq seq(static_cast<std::size_t>(len));
      long c = code;
      for (int i = 0; i < len; ++i, c /= 3) seq[static_cast<std::size_t>(i)] = static_cast<TokenId>(c % 3);
      for (int n = 1; n <= 3; ++n)
        for (double w : {1.0, 2.0}) {
          ++checked;
          if (std::abs(repeat_score(seq, n, w) - oracle::repeat_score(seq, n, w)) > 1e-12) ++mismatches;
        }
    }
  }
  CHECK(checked == 6 * (1 + 3 + 9 + 27 + 81 + 243 + 729 + 2187 + 6561));
  CHECK(mismatches == 0);
}

TEST_CASE("self_bleu membership precision") {
  const auto v = abc_vocab();
  CHECK(self_bleu({ids(v, {"a", "b"}), ids(v, {"a", "b"})}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(self_bleu({ids(v, {"a", "b"}), ids(v, {"c", "d"})}) == 0.0);
  CHECK(self_bleu({ids(v, {"a", "a", "b"}), ids(v, {"a", "c"})}) == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
  CHECK(self_bleu({ids(v, {"a", "b"})}) == 0.0);
  CHECK(self_bleu({}) == 0.0);
}

TEST_CASE("entropy_norm values and conventions") {
  const auto v = abc_vocab();
  CHECK(entropy_norm(ids(v, {"a", "a", "a", "a"})) == 0.0);
  CHECK(entropy_norm(ids(v, {"a", "b", "c", "d"})) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(entropy_norm(ids(v, {"a", "a", "b", "b"})) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(entropy_norm(ids(v, {"a"})) == 0.0);
  CHECK_THROWS_AS(entropy_norm(TokenSeq{}), ParameterError);
  // Bigram reading: (a,b) (b,a) (a,b) -> H = h(1/3), N = 3.
  const double p = 1.0 / 3.0;
  const double h = -(p * std::log2(p) + (1 - p) * std::log2(1 - p));
  CHECK(entropy_norm(ids(v, {"a", "b", "a", "b"}), 2) == doctest::Approx(h / std::log2(3.0)).epsilon(1e-12));
}

TEST_CASE("sentence_split rule") {
  auto split = sentence_split(Words{"the", "cat", "sat.", "the", "dog", "ran."});
  REQUIRE(split.size() == 2);
  CHECK(split[0] == Words{"the", "cat", "sat."});
  CHECK(split[1] == Words{"the", "dog", "ran."});
  CHECK(sentence_split(Words{"no", "terminal", "here"}) == std::vector<Words>{{"no", "terminal", "here"}});
  CHECK(sentence_split(Words{"hi!", "bye?"}) == std::vector<Words>{{"hi!"}, {"bye?"}});
  CHECK(sentence_split(Words{}).empty());
  const auto v = abc_vocab();
  CHECK(sentence_split(ids(v, {"the", "cat", "sat.", "dog"}), v).size() == 2);
}

TEST_CASE("metric properties on random sequences") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const int len = 1 + static_cast<int>(rng.below(40));
    const int alphabet = 1 + static_cast<int>(rng.below(8));
    TokenSeq seq(static_cast<std::size_t>(len));
    for (auto& t : seq) t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(alphabet)));

    const double rs = repeat_score(seq, 1, 1.0);
    const double en = entropy_norm(seq);
    CHECK(rs >= 0.0);
    CHECK(rs <= 1.0);
    CHECK(en >= 0.0);
    CHECK(en <= 1.0 + 1e-12);

    auto shuffled = seq;
    rng.shuffle(shuffled.begin(), shuffled.end());
    CHECK(repeat_score(shuffled, 1, 1.0) == doctest::Approx(rs).epsilon(1e-12));
    CHECK(entropy_norm(shuffled) == doctest::Approx(en).epsilon(1e-12));

    TokenSeq doubled = seq;
    doubled.insert(doubled.end(), seq.begin(), seq.end());
    const auto distinct = std::set<TokenId>(seq.begin(), seq.end()).size();
    if (distinct >= 2) {
      CHECK(repeat_score(doubled, 1, 1.0) >= rs);
      // Every type occurs at least twice once the text is duplicated.
      CHECK(repeat_score(doubled, 1, 1.0) == doctest::Approx(1.0));
      if (en > 0.0) CHECK(entropy_norm(doubled) < en);
    }
  }
}

TEST_CASE("metric_curves groups by cell and variant") {
  std::vector<RepetitionSample> data;
  for (int n : {0, 2}) {
    RepetitionSample s;
    s.source_id = "x";
    s.n_start = n;
    s.group_size = 1;
    s.tokens = make_token_repetition<std::string>(Words{"a", "b", "c", "d", "e", "f"}, n, 1);
    data.push_back(s);
  }
  RepetitionSample p;
  p.scenario = Scenario::ParagraphRepetition;
  p.group_size = 3;
  p.repeat_count = 2;
  p.tokens = Words{"a.", "b", "c", "a.", "b", "c"};
  data.push_back(p);

  CurveOptions opt;
  opt.ngram_sizes = {1};
  DatasetSpec expected;
  expected.n_grid = {0, 2, 4};
  expected.m_values = {1};
  expected.paragraph_samples = 1;
  const auto table = metric_curves(data, opt, &expected);
  CHECK(table.empty_cells == 1);
  REQUIRE(table.rows.size() == 4 * 3);
  CHECK(table.rows[0].scenario == "token");
  CHECK(table.rows[0].n_start == 0);
  CHECK(table.rows[0].metric == MetricKind::Repeat);
  CHECK(table.rows[0].mean == doctest::Approx(1.0));  // a a a a a a
  CHECK(table.rows[3].n_start == 2);
  CHECK(table.rows[3].mean == doctest::Approx(4.0 / 6.0));  // a b c c c c
  CHECK(table.rows[6].scenario == "paragraph_original");
  CHECK(table.rows[6].mean == 0.0);
  CHECK(table.rows[9].scenario == "paragraph_repeated");
  CHECK(table.rows[9].mean == doctest::Approx(1.0));
  CHECK(table.rows[10].metric == MetricKind::SelfBleu);
  CHECK(table.rows[10].mean == doctest::Approx(1.0));
}
