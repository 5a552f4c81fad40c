#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dsekit/oracle.hpp"

using namespace dsekit;

TEST_SUITE_BEGIN("oracle");

namespace {

// Independent re-scan of the whole output space, written against the raw
// cost model only (kept separate from solve on purpose).
std::pair<HardwareConfig, std::int64_t> rescan(const Workload& w, const DesignSpace& s,
                                               const CostParams& p) {
  bool found = false;
  HardwareConfig best;
  std::int64_t best_lat = 0;
  for (std::int64_t pe : s.pe_options)
    for (std::int64_t buf : s.buf_options) {
      if (s.area_pe * pe + s.area_buf_per_elem * buf > s.area_budget) continue;
      const std::int64_t lat = latency(w, {pe, buf}, p);
      if (found && lat > best_lat) continue;
      if (found && lat == best_lat) {
        const std::int64_t a = s.area_pe * pe + s.area_buf_per_elem * buf;
        const std::int64_t ba = s.area_pe * best.pe + s.area_buf_per_elem * best.buf;
        if (a > ba) continue;
        if (a == ba && pe > best.pe) continue;
        if (a == ba && pe == best.pe && buf > best.buf) continue;
      }
      found = true;
      best = {pe, buf};
      best_lat = lat;
    }
  REQUIRE(found);
  return {best, best_lat};
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("solve on a toy space") {
  DesignSpace s;
  s.pe_options = {4, 16};
  s.buf_options = {12, 48};
  s.area_budget = 1 << 30;
  s.area_pe = 256;
  s.area_buf_per_elem = 1;
  const auto [cfg, lat] = solve({4, 4, 4, Dataflow::OS}, s, CostParams{});
  CHECK(cfg == HardwareConfig{16, 48});
  CHECK(lat == 4);
}

TEST_CASE("solve errors when the budget excludes everything") {
  DesignSpace s = default_space();
  s.area_budget = 0;
  CHECK_THROWS_AS(solve({1, 1, 1, Dataflow::WS}, s, CostParams{}), NoFeasibleConfigError);
}

TEST_CASE("trivial workload picks the minimal-area latency-1 config") {
  const DesignSpace s = default_space();
  const CostParams p;
  const auto [cfg, lat] = solve({1, 1, 1, Dataflow::WS}, s, p);
  CHECK(lat == 1);
  const auto [rcfg, rlat] = rescan({1, 1, 1, Dataflow::WS}, s, p);
  CHECK(rlat == 1);
  CHECK(cfg == rcfg);
}

TEST_CASE("oracle optimality: independent re-scan agrees on 100 random workloads") {
  const DesignSpace s = default_space();
  const CostParams p;
  SplitMix64 rng(202);
  for (int i = 0; i < 100; ++i) {
    const Workload w = sample_workload(rng);
    const auto [cfg, lat] = solve(w, s, p);
    const auto [rcfg, rlat] = rescan(w, s, p);
    CHECK(lat == rlat);
    CHECK(cfg == rcfg);
  }
}

TEST_CASE("chosen config is never dominated") {
  const DesignSpace s = default_space();
  const CostParams p;
  SplitMix64 rng(303);
  for (int i = 0; i < 50; ++i) {
    const Workload w = sample_workload(rng);
    const auto [cfg, lat] = solve(w, s, p);
    for (std::int64_t pe : s.pe_options)
      for (std::int64_t buf : s.buf_options) {
        if (pe < cfg.pe || buf < cfg.buf) continue;
        if (pe == cfg.pe && buf == cfg.buf) continue;
        if (!is_feasible({pe, buf}, s)) continue;
        CHECK(latency(w, {pe, buf}, p) >= lat);
      }
  }
}

TEST_CASE("sample_workload determinism and ranges") {
  SplitMix64 a(5), b(5);
  CHECK(sample_workload(a) == sample_workload(b));
  SplitMix64 rng(17);
  std::vector<std::int64_t> ms;
  for (int i = 0; i < 100000; ++i) {
    const Workload w = sample_workload(rng);
    REQUIRE(w.m >= 1);
    REQUIRE(w.m <= 256);
    REQUIRE(w.n >= 1);
    REQUIRE(w.n <= 1677);
    REQUIRE(w.k >= 1);
    REQUIRE(w.k <= 1185);
    ms.push_back(w.m);
  }
  std::nth_element(ms.begin(), ms.begin() + ms.size() / 2, ms.end());
  const std::int64_t median = ms[ms.size() / 2];
  CHECK(median >= 12);  // log-uniform median of [1,256] is 16
  CHECK(median <= 22);
}

TEST_CASE("generate determinism, seed sensitivity and manifest consistency") {
  const DesignSpace s = default_space();
  const CostParams p;
  const Dataset d1 = generate(200, 7, s, p);
  const Dataset d2 = generate(200, 7, s, p);
  CHECK(d1 == d2);
  const Dataset d3 = generate(200, 8, s, p);
  CHECK(d1.samples != d3.samples);

  const Dataset d4 = generate(1000, 1, s, p);
  CHECK(d4.manifest.count == 1000);
  Dataset recheck = d4;
  recompute_stats(recheck);
  CHECK(std::abs(recheck.manifest.log_latency_mean - d4.manifest.log_latency_mean) < 1e-12);
  CHECK(std::abs(recheck.manifest.log_latency_std - d4.manifest.log_latency_std) < 1e-12);
  CHECK(d4.manifest.log_latency_std > 0);
}

TEST_CASE("generate is order-independent across thread counts") {
  const DesignSpace s = default_space();
  const CostParams p;
  const Dataset serial = generate(500, 99, s, p, 1);
  const Dataset threaded = generate(500, 99, s, p, 4);
  CHECK(serial == threaded);
}

TEST_CASE("label histogram partitions the dataset") {
  const DesignSpace s = default_space();
  const Dataset d = generate(2000, 3, s, CostParams{});
  const BucketSpec pe_spec = make_buckets(2, 128, 16);
  const BucketSpec buf_spec = make_buckets(256, 524288, 12);
  const auto hist = label_histogram(d, pe_spec, buf_spec);
  std::int64_t total = 0;
  for (const auto& [key, c] : hist) {
    CHECK(c > 0);
    total += c;
  }
  CHECK(total == 2000);

  Dataset single;
  single.samples.push_back(d.samples[0]);
  const auto h1 = label_histogram(single, pe_spec, buf_spec);
  CHECK(h1.size() == 1);
  CHECK(h1.begin()->second == 1);

  const ImbalanceReport rep = imbalance_report(hist);
  CHECK(rep.classes == static_cast<std::int64_t>(hist.size()));
  CHECK(rep.top_decile_share > 0);
  CHECK(rep.top_decile_share <= 1.0);
}

TEST_CASE("csv round trip") {
  const std::string path = temp_path("dsekit_oracle_rt.csv");
  const Dataset d = generate(100, 21, default_space(), CostParams{});
  write_csv(d, path);
  const Dataset back = read_csv(path);
  CHECK(back == d);
}

TEST_CASE("csv header tampering is a parse error") {
  const std::string path = temp_path("dsekit_oracle_hdr.csv");
  const Dataset d = generate(5, 2, default_space(), CostParams{});
  write_csv(d, path);
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  content[0] = 'x';
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  CHECK_THROWS_AS(read_csv(path), ParseError);
}

TEST_CASE("truncated csv names the bad line") {
  const std::string path = temp_path("dsekit_oracle_trunc.csv");
  const Dataset d = generate(5, 2, default_space(), CostParams{});
  write_csv(d, path);
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  // Chop the last line right after its final comma: the latency field is
  // left empty, which must fail as a parse error on that line.
  std::ofstream out(path, std::ios::binary);
  out << content.substr(0, content.find_last_of(',') + 1);
  out.close();
  try {
    read_csv(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 6);  // header + 5 rows; the 5th row is the broken one
  }
}

TEST_CASE("manifest mismatch is an integrity error") {
  const std::string path = temp_path("dsekit_oracle_integrity.csv");
  Dataset d = generate(50, 4, default_space(), CostParams{});
  write_csv(d, path);
  DatasetManifest bad = d.manifest;
  bad.log_latency_mean += 0.5;
  std::ofstream m(manifest_path_for(path), std::ios::binary);
  m << manifest_to_json(bad);
  m.close();
  CHECK_THROWS_AS(read_csv(path), FormatError);
}

TEST_SUITE_END();
