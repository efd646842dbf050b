#include "doctest.h"
#include "kd3a/config.hpp"

using namespace kd3a;

TEST_CASE("config text parses sections, comments, and duplicate overrides") {
  const KeyValues kv = parse_config_text(
      "# a comment\n"
      "top = 1\n"
      "[experiment]\n"
      "scenario = malicious   ; trailing comment\n"
      "seeds = 1, 2, 3\n"
      "[round]\n"
      "epochs = 30\n"
      "epochs = 40\n"
      "hidden = 32, 16\n");
  CHECK(kv.at("top") == "1");
  CHECK(kv.at("experiment.scenario") == "malicious");
  CHECK(config_int(kv, "round.epochs", 0) == 40);  // later duplicate wins
  CHECK(config_int(kv, "missing", 7) == 7);
  CHECK(config_double(kv, "top", 0.0) == 1.0);
  CHECK(config_int_list(kv, "round.hidden", {}) == std::vector<int>{32, 16});
  CHECK(config_string_list(kv, "experiment.seeds", {}) ==
        std::vector<std::string>{"1", "2", "3"});
  CHECK(config_seed_list(kv, "experiment.seeds", {}) == std::vector<uint64_t>{1, 2, 3});
}

TEST_CASE("config errors name the offending key or line") {
  CHECK_THROWS(parse_config_text("not a key value line\n"));
  CHECK_THROWS(parse_config_text("[unclosed\n"));
  const KeyValues kv = parse_config_text("a = notanumber\n");
  CHECK_THROWS(config_int(kv, "a", 0));
  CHECK_THROWS(config_double(kv, "a", 0.0));
  CHECK_THROWS(config_bool(kv, "a", false));
}

TEST_CASE("boolean spellings") {
  const KeyValues kv = parse_config_text("a = true\nb = 0\nc = yes\nd = off\n");
  CHECK(config_bool(kv, "a", false));
  CHECK_FALSE(config_bool(kv, "b", true));
  CHECK(config_bool(kv, "c", false));
  CHECK_FALSE(config_bool(kv, "d", true));
}

TEST_CASE("list splitting trims whitespace and drops empty tails") {
  CHECK(split_list("a, b ,c") == std::vector<std::string>{"a", "b", "c"});
  CHECK(split_list("solo") == std::vector<std::string>{"solo"});
  CHECK(split_list("").empty());
}
