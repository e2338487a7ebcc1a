#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>

#include <catch2/catch_amalgamated.hpp>

#include "lmprior/csvio.hpp"
#include "lmprior/errors.hpp"
#include "support/test_support.hpp"

using namespace lmprior;

TEST_CASE("format_double round-trips doubles exactly", "[csv]") {
  std::mt19937_64 engine(11);
  std::uniform_real_distribution<double> mantissa(-1.0, 1.0);
  std::uniform_int_distribution<int> exponent(-300, 300);
  for (int round = 0; round < 2000; ++round) {
    const double x = std::ldexp(mantissa(engine), exponent(engine));
    const std::string text = format_double(x);
    const double back = std::strtod(text.c_str(), nullptr);
    REQUIRE(back == x);
  }
  CHECK(std::strtod(format_double(0.1).c_str(), nullptr) == 0.1);
  CHECK(format_double(0.0) == "0");
  CHECK(format_double(-2.5) == "-2.5");
  CHECK(std::strtod(format_double(1e-308).c_str(), nullptr) == 1e-308);
}

TEST_CASE("format_double prefers the shortest faithful form", "[csv]") {
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(0.25) == "0.25");
  CHECK(format_double(1234567.0) == "1234567");
}

TEST_CASE("parse_double accepts numbers and rejects junk", "[csv]") {
  CHECK(parse_double("3.5", 1, 2) == 3.5);
  CHECK(parse_double("-1e3", 1, 2) == -1000.0);
  CHECK_THROWS_AS(parse_double("abc", 3, 4), ParseError);
  CHECK_THROWS_AS(parse_double("", 3, 4), ParseError);
  CHECK_THROWS_AS(parse_double("1.5x", 3, 4), ParseError);
  try {
    parse_double("nope", 7, 2);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 7);
    CHECK(e.column() == 2);
  }
}

TEST_CASE("split_csv_line handles quoting and embedded commas", "[csv]") {
  CHECK(split_csv_line("a,b,c") == std::vector<std::string>{"a", "b", "c"});
  CHECK(split_csv_line("a,,c") == std::vector<std::string>{"a", "", "c"});
  CHECK(split_csv_line("\"a,b\",c") == std::vector<std::string>{"a,b", "c"});
  CHECK(split_csv_line("\"he said \"\"hi\"\"\",x") ==
        std::vector<std::string>{"he said \"hi\"", "x"});
  CHECK(split_csv_line("") == std::vector<std::string>{""});
}

TEST_CASE("split_lines drops the trailing newline only", "[csv]") {
  CHECK(split_lines("a\nb\n") == std::vector<std::string>{"a", "b"});
  CHECK(split_lines("a\nb") == std::vector<std::string>{"a", "b"});
  CHECK(split_lines("a\n\nb\n") == std::vector<std::string>{"a", "", "b"});
  CHECK(split_lines("") == std::vector<std::string>{});
}

TEST_CASE("CsvWriter emits a fixed layout", "[csv]") {
  CsvWriter writer({"name", "value"});
  writer.add_row({"alpha", "1"});
  writer.add_row({"beta", "-2.5"});
  CHECK(writer.str() == "name,value\nalpha,1\nbeta,-2.5\n");
  CHECK_THROWS_AS(writer.add_row({"too", "many", "cells"}), ArgumentError);
}

TEST_CASE("text file round trip preserves bytes", "[csv]") {
  testsupport::ScratchDir dir("csvio");
  const std::string payload = "line1\nline2 with spaces\n\x01 binary-ish\n";
  write_text_file(dir.file("t.txt"), payload);
  CHECK(read_text_file(dir.file("t.txt")) == payload);
  CHECK_THROWS_AS(read_text_file(dir.file("missing.txt")), ConfigError);
}
