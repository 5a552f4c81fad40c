#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dsekit/runconfig.hpp"

using namespace dsekit;

TEST_SUITE_BEGIN("runconfig");

TEST_CASE("defaults match the documented settings") {
  const RunConfig rc;
  CHECK(rc.area_budget == 131072);
  CHECK(rc.bandwidth == 16);
  CHECK(rc.model.d_model == 64);
  CHECK(rc.model.k_pe == 16);
  CHECK(rc.model.k_buf == 12);
  CHECK(rc.train.batch_size == 256);
  CHECK(rc.train.lr == 1e-3);
  CHECK(rc.train.epochs_stage1 == 500);
  CHECK(rc.train.epochs_stage2 == 100);
  CHECK(rc.train.use_contrastive);
}

TEST_CASE("kv document round trips") {
  RunConfig rc;
  rc.command = "train";
  rc.data = "/tmp/x.csv";
  rc.seed = 99;
  rc.sync_seeds();
  rc.train.lr = 0.00025;
  rc.model.k_pe = 8;
  rc.model.head_mode = HeadMode::kClassification;
  rc.train.use_contrastive = false;

  const std::string doc = rc.to_kv();
  const std::string path =
      (std::filesystem::temp_directory_path() / "dsekit_rc.cfg").string();
  std::ofstream(path, std::ios::binary) << doc;
  const RunConfig back = RunConfig::from_file(path);
  CHECK(back.command == "train");
  CHECK(back.data == "/tmp/x.csv");
  CHECK(back.seed == 99);
  CHECK(back.model.seed == 99);
  CHECK(back.train.seed == 99);
  CHECK(back.train.lr == 0.00025);
  CHECK(back.model.k_pe == 8);
  CHECK(back.model.head_mode == HeadMode::kClassification);
  CHECK_FALSE(back.train.use_contrastive);
  CHECK(back.to_kv() == doc);  // byte-stable echo
}

TEST_CASE("config file may use comments and blank lines") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "dsekit_rc2.cfg").string();
  std::ofstream(path, std::ios::binary) << "# a comment\n\nseed = 5\n  n = 77\n";
  const RunConfig rc = RunConfig::from_file(path);
  CHECK(rc.seed == 5);
  CHECK(rc.n == 77);
}

TEST_CASE("unknown keys and bad values are parse errors with line numbers") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "dsekit_rc3.cfg").string();
  std::ofstream(path, std::ios::binary) << "seed = 5\nbogus = 1\n";
  try {
    RunConfig::from_file(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::ofstream(path, std::ios::binary) << "n = twelve\n";
  CHECK_THROWS_AS(RunConfig::from_file(path), ParseError);
  std::ofstream(path, std::ios::binary) << "model.head = banana\n";
  CHECK_THROWS_AS(RunConfig::from_file(path), ParseError);
}

TEST_CASE("write_resolved emits a reloadable echo") {
  RunConfig rc;
  rc.command = "gen-dataset";
  rc.n = 1234;
  rc.seed = 3;
  rc.sync_seeds();
  const std::string dir =
      (std::filesystem::temp_directory_path() / "dsekit_rc_dir").string();
  rc.write_resolved(dir);
  const RunConfig back =
      RunConfig::from_file((std::filesystem::path(dir) / "run-config.resolved").string());
  CHECK(back.to_kv() == rc.to_kv());
}

TEST_SUITE_END();
