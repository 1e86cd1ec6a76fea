#include "pcae/run_config.hpp"

#include <doctest.h>

#include <cstdlib>

using namespace pcae;

TEST_CASE("run config parses sections, comments and every component") {
  RunConfig c = RunConfig::parse(R"(
# tiny run
[base]
mode = vae
d_z = 7   # trailing comment
[plugin]
info_sign = penalty
n_broadcast = 3
[decoding]
strategy = greedy
top_p = 0.9
[classifier]
epochs = 2
[corpus]
labeled_per_class = 50
[paths]
corpus = data/train.txt
[run]
seed = 42
record_wall_clock = false
)");
  CHECK(c.base.mode == LatentMode::kVAE);
  CHECK(c.base.d_z == 7);
  CHECK(c.plugin.info_sign == InfoSign::kPenalty);
  CHECK(c.plugin.n_broadcast == 3);
  CHECK(c.decoding.strategy == Strategy::kGreedy);
  CHECK(c.decoding.top_p == 0.9);
  CHECK(c.classifier.epochs == 2);
  CHECK(c.labeled_per_class == 50);
  CHECK(c.corpus_path == "data/train.txt");
  CHECK_FALSE(c.record_wall_clock);
  for (std::uint64_t s : {c.seed, c.base.seed, c.plugin.seed, c.decoding.seed, c.classifier.seed}) CHECK(s == 42);
}

TEST_CASE("run config defaults") {
  RunConfig c = RunConfig::parse("");
  CHECK(c.max_vocab == 10000);
  CHECK(c.seed == 1);
  CHECK(c.record_wall_clock);
}

TEST_CASE("run config text round-trips") {
  RunConfig c = RunConfig::parse("[base]\nd_hidden = 17\n[plugin]\nlambda_info = 3.5\n");
  CHECK(RunConfig::parse(c.to_text()).to_text() == c.to_text());
  CHECK(c.to_text().find("d_hidden = 17\n") != std::string::npos);
}

TEST_CASE("run config rejects bad input") {
  CHECK_THROWS_WITH(RunConfig::parse("[nope]\n"), doctest::Contains("unknown section"));
  CHECK_THROWS_WITH(RunConfig::parse("[base]\nd_zz = 3\n"), doctest::Contains("unknown key"));
  CHECK_THROWS_WITH(RunConfig::parse("[base]\nd_z = x\n"), doctest::Contains("line 2"));
  CHECK_THROWS(RunConfig::parse("d_z = 3\n"));
  CHECK_THROWS(RunConfig::parse("[base]\nd_z\n"));
  CHECK_THROWS(RunConfig::parse("[run]\nrecord_wall_clock = maybe\n"));
  CHECK_THROWS(RunConfig::parse("[decoding]\ntop_p = 1.5\n"));
  CHECK_THROWS(RunConfig::load("/nonexistent/pcae.cfg"));
}

TEST_CASE("PCAE_SEED overrides the configured seed") {
  RunConfig c = RunConfig::parse("[run]\nseed = 3\n");
  ::setenv("PCAE_SEED", "77", 1);
  c.apply_environment();
  ::unsetenv("PCAE_SEED");
  CHECK(c.seed == 77);
  CHECK(c.plugin.seed == 77);
  RunConfig d = RunConfig::parse("[run]\nseed = 3\n");
  d.apply_environment();
  CHECK(d.seed == 3);
  ::setenv("PCAE_SEED", "abc", 1);
  CHECK_THROWS(d.apply_environment());
  ::unsetenv("PCAE_SEED");
}
