#pragma once

#include <string>

#include "dsekit/model.hpp"
#include "dsekit/trainer.hpp"

namespace dsekit {

/// Every tunable of a CLI run, resolved from defaults -> config file ->
/// command-line flags (later layers win). The resolved state is echoed to
/// `run-config.resolved` in the output directory; feeding that file back via
/// --config reproduces the run.
struct RunConfig {
  // subcommand + file arguments (echo only; flags always win for these)
  std::string command;
  std::string data;
  std::string out;
  std::string encoder;
  std::string ckpt;
  std::string model_file;
  int stage = 1;
  int method = 1;
  bool self_test = false;

  // dataset generation + cost model
  std::int64_t n = 1000;
  std::uint64_t seed = 0;
  std::int64_t area_budget = 131072;
  std::int64_t bandwidth = 16;
  int threads = 1;

  ModelConfig model;  ///< model.seed is kept equal to `seed`
  TrainConfig train;  ///< train.seed likewise

  /// The design space under these settings (default option grids, possibly
  /// overridden budget).
  DesignSpace space() const;
  CostParams cost() const;

  /// Re-synchronizes the derived seeds after `seed` changed.
  void sync_seeds();

  /// Flat `key = value` document containing every key below.
  std::string to_kv() const;
  /// Parses one key/value pair; throws ParseError (with the given line) on
  /// unknown keys or malformed values.
  void apply_kv(const std::string& key, const std::string& value, long line);

  static RunConfig from_file(const std::string& path);
  void write_resolved(const std::string& dir) const;
};

}  // namespace dsekit
