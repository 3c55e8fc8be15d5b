#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "dmmd/config.hpp"

using namespace dmmd;

TEST_CASE("config serializes and parses back byte-identically") {
  ExperimentConfig cfg;
  cfg.data.seed = 123;
  cfg.data.shift_severity = 0.75;
  cfg.train.epochs_uda = 17;
  cfg.train.toggles.bc = false;
  cfg.train.kernel.median_heuristic = false;
  cfg.train.kernel.bandwidths = {0.5, 1.0, 2.0};
  cfg.train.supervised.lambda = 0.25;

  std::string text = cfg.serialize();
  ExperimentConfig parsed = ExperimentConfig::parse(text);
  CHECK(parsed.serialize() == text);
  CHECK(parsed.data.seed == 123);
  CHECK(parsed.data.shift_severity == 0.75);
  CHECK(parsed.train.epochs_uda == 17);
  CHECK(parsed.train.toggles.bc == false);
  CHECK(parsed.train.kernel.bandwidths == std::vector<double>{0.5, 1.0, 2.0});
}

TEST_CASE("defaults round-trip as well") {
  ExperimentConfig cfg;
  CHECK(ExperimentConfig::parse(cfg.serialize()).serialize() == cfg.serialize());
}

TEST_CASE("doubles round-trip through the shortest representation") {
  ExperimentConfig cfg;
  cfg.train.supervised.epsilon = 0.1;  // classic non-representable decimal
  cfg.data.noise_scale = 1.0 / 3.0;
  ExperimentConfig parsed = ExperimentConfig::parse(cfg.serialize());
  CHECK(parsed.train.supervised.epsilon == cfg.train.supervised.epsilon);
  CHECK(parsed.data.noise_scale == cfg.data.noise_scale);
}

TEST_CASE("unknown keys and sections are rejected") {
  CHECK_THROWS_AS(ExperimentConfig::parse("[data]\nbogus = 1\n"),
                  std::runtime_error);
  CHECK_THROWS_AS(ExperimentConfig::parse("[nonsense]\nseed = 1\n"),
                  std::runtime_error);
  CHECK_THROWS_AS(ExperimentConfig::parse("[data]\nseed has no equals sign\n"),
                  std::runtime_error);
}

TEST_CASE("malformed values report the line") {
  try {
    ExperimentConfig::parse("[data]\nseed = 1\nnoise_scale = banana\n");
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("config file save/load") {
  ExperimentConfig cfg;
  cfg.data.num_identities = 9;
  std::string path = "test_config_roundtrip.txt";
  cfg.save(path);
  ExperimentConfig loaded = ExperimentConfig::load(path);
  CHECK(loaded.serialize() == cfg.serialize());
  std::remove(path.c_str());
}

TEST_CASE("comments and blank lines are tolerated") {
  ExperimentConfig base;
  std::string text = "# a comment\n\n" + base.serialize() + "\n# trailing\n";
  ExperimentConfig parsed = ExperimentConfig::parse(text);
  CHECK(parsed.serialize() == base.serialize());
}
