#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "dynanav/config.hpp"

using namespace dynanav;

namespace {

std::string write_temp(const std::string& contents) {
  static int counter = 0;
  std::string path = "/tmp/dynanav_cfg_" + std::to_string(::getpid()) + "_" +
                     std::to_string(counter++) + ".txt";
  std::ofstream os(path);
  os << contents;
  return path;
}

}  // namespace

TEST_CASE("default config text round-trips to the default values") {
  std::string path = write_temp(default_config_text());
  RunConfig parsed = parse_config_file(path);
  RunConfig def;
  CHECK(parsed.image_size == def.image_size);
  CHECK(parsed.feat_c == def.feat_c);
  CHECK(parsed.past_frames == def.past_frames);
  CHECK(parsed.decoder_layers == def.decoder_layers);
  CHECK(parsed.learning_rate == def.learning_rate);
  CHECK(parsed.lambda == def.lambda);
  CHECK(parsed.tau_start == def.tau_start);
  CHECK(parsed.tau_end == def.tau_end);
  CHECK(parsed.xi == def.xi);
  CHECK(parsed.train_exits == def.train_exits);
  CHECK(parsed.max_masked_obs == def.max_masked_obs);
  CHECK(parsed.max_masked_goal == def.max_masked_goal);
  CHECK(parsed.flops_budget_ratio == def.flops_budget_ratio);
  std::remove(path.c_str());
}

TEST_CASE("unknown keys, missing version and bad values are rejected") {
  CHECK_THROWS_AS(parse_config_file(write_temp("config_version=1\nno_such_key=3\n")),
                  ConfigError);
  CHECK_THROWS_AS(parse_config_file(write_temp("epochs=3\n")), ConfigError);
  CHECK_THROWS_AS(parse_config_file(write_temp("config_version=2\n")), ConfigError);
  CHECK_THROWS_AS(parse_config_file(write_temp("config_version=1\nepochs=abc\n")),
                  ConfigError);
  CHECK_THROWS_AS(parse_config_file(write_temp("config_version=1\nepochs\n")), ConfigError);
  CHECK_THROWS_AS(parse_config_file(write_temp("config_version=1\ntrain_exits=-1\n")),
                  ConfigError);
}

TEST_CASE("comments, blanks and overrides parse") {
  std::string path = write_temp(
      "config_version = 1\n"
      "# a comment\n"
      "\n"
      "epochs = 7\n"
      "xi = 1.0, 2.0, 3.0\n"
      "selector_enabled = false\n"
      "train_exits = 4\n");
  RunConfig cfg = parse_config_file(path);
  CHECK(cfg.epochs == 7);
  CHECK(cfg.xi == std::vector<double>{1.0, 2.0, 3.0});
  CHECK_FALSE(cfg.selector_enabled);
  CHECK(cfg.train_exits == std::vector<int>{4});
  std::remove(path.c_str());
}

TEST_CASE("derived dimensions are consistent") {
  RunConfig c;
  CHECK(c.window() == c.past_frames + 1);
  CHECK(c.num_pixels() == c.feat_h * c.feat_w);
  CHECK(c.mask_elems() == c.feat_h * c.feat_w * c.feat_c);
  CHECK(c.token_dim() == c.feat_c);
  // desk-scale masked-element bounds stay within the mask size
  CHECK(c.max_masked_obs <= c.mask_elems());
  CHECK(c.max_masked_goal <= c.mask_elems());
}
