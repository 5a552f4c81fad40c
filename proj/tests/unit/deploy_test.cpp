#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "dsekit/deploy.hpp"
#include "dsekit/oracle.hpp"

using namespace dsekit;

TEST_SUITE_BEGIN("deploy");

namespace {

std::string write_temp(const char* name, const std::string& content) {
  const std::string path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

}  // namespace

TEST_CASE("load_model_workload parses the layer-list format") {
  const std::string path = write_temp("dsekit_deploy_ok.csv",
                                      "#name: toy-net\n"
                                      "4,4,4,WS\n"
                                      "16,32,8,OS\n"
                                      "100,200,300,RS\n");
  const ModelWorkload mw = load_model_workload(path);
  CHECK(mw.name == "toy-net");
  REQUIRE(mw.layers.size() == 3);
  CHECK(mw.layers[0] == Workload{4, 4, 4, Dataflow::WS});
  CHECK(mw.layers[2] == Workload{100, 200, 300, Dataflow::RS});
}

TEST_CASE("load_model_workload rejects malformed and out-of-range rows") {
  const std::string missing = write_temp("dsekit_deploy_missing.csv", "4,4,WS\n");
  CHECK_THROWS_AS(load_model_workload(missing), ParseError);

  const std::string zero = write_temp("dsekit_deploy_zero.csv", "0,4,4,WS\n");
  CHECK_THROWS_WITH_AS(load_model_workload(zero), doctest::Contains("field m"), RangeError);

  CHECK_THROWS_AS(load_model_workload("/nonexistent/file.csv"), FormatError);
}

TEST_CASE("model latency is additive and permutation invariant") {
  const CostParams p;
  const HardwareConfig cfg{16, 1024};
  const Workload a{4, 4, 4, Dataflow::WS};
  const Workload b{50, 60, 70, Dataflow::OS};
  ModelWorkload one{"one", {a}};
  CHECK(model_latency(one, cfg, p) == latency(a, cfg, p));
  ModelWorkload twice{"twice", {a, a}};
  CHECK(model_latency(twice, cfg, p) == 2 * latency(a, cfg, p));
  ModelWorkload ab{"ab", {a, b}};
  ModelWorkload ba{"ba", {b, a}};
  CHECK(model_latency(ab, cfg, p) == model_latency(ba, cfg, p));
  CHECK(model_latency(ab, cfg, p) == latency(a, cfg, p) + latency(b, cfg, p));
}

TEST_CASE("method1 picks the total-latency minimizer") {
  const DesignSpace space = default_space();
  const CostParams p;
  ModelWorkload mw{"m", {{4, 4, 4, Dataflow::WS}, {120, 800, 600, Dataflow::OS}}};
  const std::vector<HardwareConfig> recs = {{128, 256}, {2, 65536}};
  const HardwareConfig c = method1(mw, recs, space, p);
  const std::int64_t total = model_latency(mw, c, p);
  for (const HardwareConfig& hw : recs) CHECK(total <= model_latency(mw, hw, p));
  CHECK((c == recs[0] || c == recs[1]));

  // all layers recommend the same config -> that config
  const std::vector<HardwareConfig> same = {{16, 1024}, {16, 1024}};
  CHECK(method1(mw, same, space, p) == HardwareConfig{16, 1024});
}

TEST_CASE("method2 picks the bottleneck layer's recommendation") {
  const CostParams p;
  // second layer dominates its own recommendation's latency
  ModelWorkload mw{"m", {{2, 2, 2, Dataflow::WS}, {200, 900, 800, Dataflow::OS}}};
  const std::vector<HardwareConfig> recs = {{128, 65536}, {16, 1024}};
  CHECK(method2(mw, recs, p) == recs[1]);

  // equal per-layer latencies: earliest layer wins the tie
  ModelWorkload eq{"eq", {{4, 4, 4, Dataflow::WS}, {4, 4, 4, Dataflow::WS}}};
  const std::vector<HardwareConfig> recs2 = {{16, 48}, {32, 48}};
  CHECK(method2(eq, recs2, p) == recs2[0]);
}

TEST_CASE("methods may disagree; both stay inside the candidate set") {
  const DesignSpace space = default_space();
  const CostParams p;
  // tiny layer + huge layer; the huge layer's recommendation is compute-rich
  // but strictly worse in total than the tiny layer's balanced one.
  ModelWorkload mw{"d", {{4, 4, 4, Dataflow::OS}, {200, 900, 800, Dataflow::OS}}};
  const std::vector<HardwareConfig> recs = {{128, 256}, {2, 65536}};
  const HardwareConfig m1 = method1(mw, recs, space, p);
  const HardwareConfig m2 = method2(mw, recs, p);
  CHECK(m1 != m2);  // the framework tolerates disagreement
  for (const HardwareConfig& c : {m1, m2}) {
    bool member = false;
    for (const HardwareConfig& r : recs) member = member || r == c;
    CHECK(member);
  }
}

TEST_CASE("method1 optimality over random recommendation sets") {
  const DesignSpace space = default_space();
  const CostParams p;
  SplitMix64 rng(404);
  for (int trial = 0; trial < 50; ++trial) {
    ModelWorkload mw{"r", {}};
    const int layers = 2 + static_cast<int>(rng.next_below(6));
    std::vector<HardwareConfig> recs;
    for (int l = 0; l < layers; ++l) {
      mw.layers.push_back(sample_workload(rng));
      const auto [cfg, lat] = solve(mw.layers.back(), space, p);
      recs.push_back(cfg);
    }
    const HardwareConfig c1 = method1(mw, recs, space, p);
    const std::int64_t total = model_latency(mw, c1, p);
    bool member1 = false, member2 = false;
    for (const HardwareConfig& r : recs) {
      CHECK(total <= model_latency(mw, r, p));
      member1 = member1 || r == c1;
    }
    const HardwareConfig c2 = method2(mw, recs, p);
    for (const HardwareConfig& r : recs) member2 = member2 || r == c2;
    CHECK(member1);
    CHECK(member2);
    CHECK(is_feasible(c1, space));
    CHECK(is_feasible(c2, space));
  }
}

TEST_SUITE_END();
