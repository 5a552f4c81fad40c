#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dsekit/costmodel.hpp"
#include "dsekit/rng.hpp"
#include "dsekit/space.hpp"
#include "dsekit/uov.hpp"

namespace dsekit {

/// One labeled example: a workload, its latency-optimal feasible config and
/// that config's latency under the analytical model.
struct Sample {
  Workload workload;
  HardwareConfig opt;
  std::int64_t opt_latency = 0;

  bool operator==(const Sample&) const = default;
};

/// Reproducibility and normalization metadata stored beside each dataset.
struct DatasetManifest {
  std::uint64_t seed = 0;
  std::int64_t count = 0;
  DesignSpace space;
  CostParams cost;
  double log_latency_mean = 0;  ///< mean of ln(opt_latency)
  double log_latency_std = 1;   ///< std of ln(opt_latency); 1 when count < 2

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  DatasetManifest manifest;

  bool operator==(const Dataset&) const = default;
};

/// Exhaustive search over the whole output space: the feasible config with
/// minimum latency; ties break by smaller area, then smaller pe, then
/// smaller buf. Throws NoFeasibleConfigError when the budget excludes
/// everything.
std::pair<HardwareConfig, std::int64_t> solve(const Workload& w, const DesignSpace& space,
                                              const CostParams& p);

/// Random workload: m, n, k log-uniform over their valid ranges, dataflow
/// uniform. Deterministic given the generator state.
Workload sample_workload(SplitMix64& rng);

/// n labeled samples. The per-index generator is seeded with
/// stream_seed(seed, index), so output is independent of evaluation order
/// and thread count. threads <= 1 runs serially.
Dataset generate(std::int64_t n, std::uint64_t seed, const DesignSpace& space,
                 const CostParams& p, int threads = 1);

/// Recomputes mean/std of ln(opt_latency) over the samples.
void recompute_stats(Dataset& d);

/// Sample counts per (pe_bucket, buf_bucket) label under the given codecs.
std::map<std::pair<int, int>, std::int64_t> label_histogram(const Dataset& d,
                                                            const BucketSpec& pe_spec,
                                                            const BucketSpec& buf_spec);

/// Imbalance summary of a label histogram.
struct ImbalanceReport {
  std::int64_t classes = 0;          ///< nonzero classes
  std::int64_t max_count = 0;
  std::int64_t min_count = 0;        ///< over nonzero classes
  double max_min_ratio = 0;
  double top_decile_share = 0;       ///< fraction of samples in the top 10% of classes
};

ImbalanceReport imbalance_report(const std::map<std::pair<int, int>, std::int64_t>& hist);

/// CSV round trip. Header `m,n,k,dataflow,pe,buf,latency`, LF endings,
/// dataflow as WS/OS/RS. The manifest travels in a `<path>.manifest.json`
/// sidecar with reals printed to 17 significant digits.
void write_csv(const Dataset& d, const std::string& path);
Dataset read_csv(const std::string& path);

std::string manifest_path_for(const std::string& dataset_path);
std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);

}  // namespace dsekit
