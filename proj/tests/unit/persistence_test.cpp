#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <limits>
#include <sstream>

#include "cmvae/checkpoint.hpp"
#include "cmvae/error.hpp"
#include "cmvae/run_config.hpp"

using namespace cmvae;

TEST_CASE("checkpoint streams round trip bit-exactly") {
  const MultimodalModel model(FactorSpec::defaults().model_modalities(), JointKind::ExplicitJoint, {4, 1, 8}, 9);
  NamedArrays arrays = to_named_arrays(model.parameters(), "params/");
  arrays.emplace_back("odd", DenseArray(Shape{2}, std::vector<double>{-0.0, std::numeric_limits<double>::denorm_min()}));
  std::stringstream buffer;
  write_checkpoint(buffer, arrays);
  const NamedArrays back = read_checkpoint(buffer);
  REQUIRE(back.size() == arrays.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].first == arrays[i].first);
    CHECK(back[i].second == arrays[i].second);
  }
  CHECK(std::signbit(back.back().second[0]));

  MultimodalModel other(FactorSpec::defaults().model_modalities(), JointKind::ExplicitJoint, {4, 1, 8}, 10);
  CHECK_FALSE(other.parameters() == model.parameters());
  assign_from(other.parameters(), back, "params/");
  CHECK(other.parameters() == model.parameters());
}

TEST_CASE("malformed checkpoints") {
  const MultimodalModel model(FactorSpec::defaults().model_modalities(), JointKind::MixtureOfExperts, {2, 0, 4}, 1);
  std::stringstream buffer;
  write_checkpoint(buffer, to_named_arrays(model.parameters()));
  const std::string bytes = buffer.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_checkpoint(truncated), FormatError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream magic(bad_magic);
  CHECK_THROWS_AS(read_checkpoint(magic), FormatError);
  std::string bad_version = bytes;
  bad_version[5] = 7;
  std::stringstream version(bad_version);
  CHECK_THROWS_AS(read_checkpoint(version), FormatError);

  MultimodalModel bigger(FactorSpec::defaults().model_modalities(), JointKind::MixtureOfExperts, {3, 0, 4}, 1);
  CHECK_THROWS_AS(assign_from(bigger.parameters(), to_named_arrays(model.parameters())), FormatError);
  CHECK_THROWS_AS(assign_from(bigger.parameters(), NamedArrays{}), FormatError);
  CHECK_THROWS_AS(load_checkpoint(std::filesystem::path("/nonexistent/dir/x.cmvae")), FormatError);
}

TEST_CASE("run config json round trip") {
  RunConfig cfg;
  cfg.run_id = "rt";
  cfg.seed = 12345678901234ULL;
  cfg.model.joint_kind = JointKind::ProductOfExperts;
  cfg.objective.gamma = std::numeric_limits<double>::infinity();
  cfg.dataset.percent = 20.0;
  cfg.propagation.threshold_rule = ThresholdRule::MaxAccuracy;
  const RunConfig back = run_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  CHECK(back.seed == cfg.seed);
  CHECK(back.objective.gamma == cfg.objective.gamma);
  CHECK(back.model.joint_kind == JointKind::ProductOfExperts);
}

TEST_CASE("run config rejects bad documents") {
  CHECK_THROWS_AS(run_config_from_json("{\"stepz\": 3}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json("{\"optimizer\": {\"steps\": \"many\"}}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json("{\"model\": {\"joint_kind\": \"sum\"}}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json("[1, 2"), ConfigError);
  CHECK_NOTHROW(run_config_from_json("{}"));
}

TEST_CASE("seed override") {
  RunConfig cfg;
  cfg.seed = 3;
  apply_seed_override(cfg, nullptr);
  CHECK(cfg.seed == 3);
  apply_seed_override(cfg, "42");
  CHECK(cfg.seed == 42);
  CHECK_THROWS_AS(apply_seed_override(cfg, "abc"), ConfigError);
  CHECK_THROWS_AS(apply_seed_override(cfg, "-1"), ConfigError);
  CHECK_THROWS_AS(apply_seed_override(cfg, ""), ConfigError);
}
