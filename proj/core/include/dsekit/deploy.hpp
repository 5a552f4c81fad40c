#pragma once

#include <string>
#include <vector>

#include "dsekit/costmodel.hpp"
#include "dsekit/space.hpp"

namespace dsekit {

/// A multi-layer model expressed as a sequence of GEMM workloads.
struct ModelWorkload {
  std::string name;
  std::vector<Workload> layers;
};

/// Parses the layer-list format: optional `#name: <text>` comment header,
/// then one `m,n,k,dataflow` line per layer. Throws ParseError (with line
/// number) or RangeError via workload validation.
ModelWorkload load_model_workload(const std::string& path);

/// Sum of per-layer latencies (sequential single-accelerator execution).
std::int64_t model_latency(const ModelWorkload& mw, const HardwareConfig& cfg,
                           const CostParams& p);

/// Whole-model selection, method 1: among the distinct per-layer
/// recommendations, the config with minimum model latency; ties break by
/// smaller area, then smaller pe.
HardwareConfig method1(const ModelWorkload& mw, const std::vector<HardwareConfig>& recs,
                       const DesignSpace& space, const CostParams& p);

/// Method 2: the bottleneck layer's recommendation, where the bottleneck is
/// the layer with the largest latency on its own recommended config (ties:
/// earliest layer).
HardwareConfig method2(const ModelWorkload& mw, const std::vector<HardwareConfig>& recs,
                       const CostParams& p);

}  // namespace dsekit
