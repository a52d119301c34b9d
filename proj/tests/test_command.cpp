#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mvvin/command.hpp"
#include "mvvin/env.hpp"
#include "mvvin/scenegen.hpp"

using namespace mvvin;

TEST_CASE("tokenizer lowercases and splits on non-word characters") {
  CHECK(tokenize_lower("Please move to the TV!") ==
        std::vector<std::string>{"please", "move", "to", "the", "tv"});
  CHECK(tokenize_lower("  a,b;c  ") == std::vector<std::string>{"a", "b", "c"});
  CHECK(tokenize_lower("").empty());
}

TEST_CASE("parse_target extracts the commanded object class") {
  const std::vector<std::string> vocab = {"television", "sofa", "lamp", "bookshelf"};
  CHECK(parse_target("Please move to the television", vocab) == "television");
  CHECK(parse_target("move to the sofa", vocab) == "sofa");
  CHECK(parse_target("LAMP", vocab) == "lamp");
  // the last vocabulary word wins when several appear
  CHECK(parse_target("go from the sofa to the lamp", vocab) == "lamp");
  CHECK(parse_target("go to the sink", room_vocabulary("kitchen")) == "sink");
}

TEST_CASE("parse_target rejects commands without a known target") {
  const std::vector<std::string> vocab = {"television", "sofa"};
  CHECK_THROWS_AS(parse_target("hello world", vocab), CommandError);
  CHECK_THROWS_AS(parse_target("", vocab), CommandError);
  try {
    parse_target("hello world", vocab);
    FAIL("expected CommandError");
  } catch (const CommandError& e) {
    // the message should teach the user the accepted vocabulary
    CHECK(std::string(e.what()).find("television") != std::string::npos);
    CHECK(std::string(e.what()).find("sofa") != std::string::npos);
  }
}

TEST_CASE("every sampled command round-trips through parse_target") {
  const GridScene s = generate_scene("bathroom", 3, "cmd_bathroom");
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Task t = sample_task(s, seed);
    REQUIRE(parse_target(t.command, room_vocabulary(s.room_type)) == t.target);
  }
}

TEST_CASE("embedding table generates unit-norm deterministic vectors") {
  const EmbeddingTable table(300, 42);
  CHECK(table.dim() == 300);
  const auto a = table.lookup("microwave");
  REQUIRE(a.size() == 300);
  CHECK(a == table.lookup("microwave"));  // deterministic

  double norm = 0.0;
  for (double x : a) norm += x * x;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));

  const auto b = table.lookup("toaster");
  CHECK(a != b);  // distinct words, distinct vectors

  const EmbeddingTable other(300, 43);
  CHECK(a != other.lookup("microwave"));  // seed-conditioned

  const TensorPtr t = table.embed("microwave");
  CHECK(t->shape == std::vector<int>{300});
  CHECK(t->data == a);
}

TEST_CASE("embedding table loads from a plain-text file") {
  const std::string path = "/tmp/test_embeddings.txt";
  {
    std::ofstream out(path);
    out << "sofa 1.0 0.0 0.0\n";
    out << "lamp 0.0 0.5 0.5\n";
  }
  const EmbeddingTable table = EmbeddingTable::from_file(path, 3);
  CHECK(table.lookup("sofa") == std::vector<double>{1.0, 0.0, 0.0});
  CHECK(table.lookup("lamp") == std::vector<double>{0.0, 0.5, 0.5});
  CHECK_THROWS_AS(table.lookup("television"), CommandError);

  SUBCASE("too few values per line is an error") {
    std::ofstream out(path);
    out << "sofa 1.0 0.0\n";
    out.close();
    CHECK_THROWS_AS(EmbeddingTable::from_file(path, 3), CommandError);
  }
  SUBCASE("missing file is an error") {
    CHECK_THROWS_AS(EmbeddingTable::from_file("/tmp/nonexistent_embeddings.txt", 3),
                    CommandError);
  }
  std::remove(path.c_str());
}
