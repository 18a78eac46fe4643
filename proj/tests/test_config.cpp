#include <doctest.h>

#include "vipguard/config.hpp"

using namespace vipguard;
using namespace vipguard::config;

TEST_CASE("key = value parsing with comments") {
  const auto kv = KeyValues::parse("# header\nseed = 7  # trailing\n\nworld.identities=10\neval.token_sweep = 4, 8\n");
  CHECK(kv.get_u64("seed", 0) == 7);
  CHECK(kv.get_int("world.identities", 0) == 10);
  CHECK(kv.get_int_list("eval.token_sweep", {}) == std::vector<int>{4, 8});
  CHECK(kv.get_int("missing", 3) == 3);
  CHECK_THROWS_AS(KeyValues::parse("a = 1\na = 2\n"), Error);
  CHECK_THROWS_AS(KeyValues::parse("no equals sign\n"), Error);
  CHECK_THROWS_AS(KeyValues::parse("x = abc").get_int("x", 0), Error);
  CHECK_THROWS_AS(KeyValues::parse("x = maybe").get_bool("x", false), Error);
}

TEST_CASE("run config: unknown keys and invalid values are rejected") {
  CHECK_THROWS_AS(RunConfig::from(KeyValues::parse("wrold.identities = 3")), Error);
  CHECK_THROWS_AS(RunConfig::from(KeyValues::parse("world.identities = 0")), Error);
  CHECK_THROWS_AS(RunConfig::from(KeyValues::parse("model.image_size = 32")), Error);
  CHECK_THROWS_AS(RunConfig::from(KeyValues::parse("did.embedder = magic")), Error);
  const auto c = RunConfig::from(KeyValues::parse("world.image_size = 32\nmodel.image_size = 32\nstage3.tokens = 4"));
  CHECK(c.world.image_size == 32);
  CHECK(c.vip_tokens == 4);
}

TEST_CASE("defaults follow the documented stage settings") {
  const RunConfig c;
  CHECK(c.stage1.effective_batch == 72);
  CHECK(c.stage3.schedule == train::Schedule::cosine);
  CHECK(c.did_general_ratio.positive == 2);
  CHECK(c.did_vip_ratio.forgery == 5);
  CHECK(c.vip_tokens == 32);
}

TEST_CASE("ratios parse and print") {
  const auto r = parse_ratio("1:5:5");
  CHECK(r.positive == 1);
  CHECK(r.different == 5);
  CHECK(r.forgery == 5);
  CHECK(format_ratio(r) == "1:5:5");
  CHECK_THROWS_AS(parse_ratio("1:5"), Error);
  CHECK_THROWS_AS(parse_ratio("0:0:0"), Error);
  CHECK_THROWS_AS(parse_ratio("a:b:c"), Error);
}

TEST_CASE("canonical text and hashes are stable and scoped by prefix") {
  const auto a = RunConfig::from(KeyValues::parse("seed = 3"));
  const auto b = RunConfig::from(KeyValues::parse("seed = 3\nstage3.lr = 0.2"));
  CHECK(a.canonical() == RunConfig::from(a.to_map().empty() ? KeyValues{} : KeyValues::parse("seed = 3")).canonical());
  CHECK(a.hash({"world", "seed"}) == b.hash({"world", "seed"}));
  CHECK(a.hash({"stage3"}) != b.hash({"stage3"}));
  CHECK(a.hash() != b.hash());
  // "stage1" must not capture "stage10"-like keys or other stages
  CHECK(a.canonical({"stage1"}).find("stage2") == std::string::npos);

  // to_map round trips through from()
  KeyValues kv;
  for (const auto& [k, v] : b.to_map()) kv.set(k, v);
  CHECK(RunConfig::from(kv).canonical() == b.canonical());
}
