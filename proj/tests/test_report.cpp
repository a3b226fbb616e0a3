#include "duc/error.hpp"
#include "duc/report.hpp"
#include "duc/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace duc;

TEST_CASE("csv fields are quoted only when needed") {
  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("a,b") == "\"a,b\"");
  CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_field("two\nlines") == "\"two\nlines\"");
  CHECK(csv_field("") == "");
}

TEST_CASE("csv tables round-trip awkward fields") {
  CsvTable t({"id", "text"});
  const std::vector<std::vector<std::string>> rows = {
      {"1", "comma, inside"}, {"2", "\"quoted\""}, {"3", "line\r\nbreak"}, {"4", ""}, {"5", " padded "}};
  for (const auto& r : rows) t.add(r);
  CHECK(t.rows() == 5);
  const auto back = parse_csv(t.str());
  REQUIRE(back.size() == 6);
  CHECK(back[0] == std::vector<std::string>{"id", "text"});
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(back[i + 1] == rows[i]);
  CHECK_THROWS(t.add({"only one"}));
}

TEST_CASE("random fields survive a round trip") {
  Rng rng(3);
  const std::string alphabet = "ab,\"\r\n x";
  CsvTable t({"a", "b", "c"});
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < 200; ++i) {
    std::vector<std::string> r;
    for (int c = 0; c < 3; ++c) {
      std::string s;
      const auto len = rng.below(6);
      for (std::uint64_t k = 0; k < len; ++k) s += alphabet[rng.below(alphabet.size())];
      r.push_back(s);
    }
    rows.push_back(r);
    t.add(r);
  }
  const auto back = parse_csv(t.str());
  REQUIRE(back.size() == rows.size() + 1);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(back[i + 1] == rows[i]);
}

TEST_CASE("number formatting round-trips") {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double v = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.below(20)) - 10.0);
    CHECK(std::stod(fmt(v)) == v);
  }
  CHECK(fmt(0.5) == "0.5");
  CHECK(fmt(1.0) == "1");
  CHECK(fmt(0.1) == "0.1");
}
