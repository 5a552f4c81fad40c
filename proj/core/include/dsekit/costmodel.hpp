#pragma once

#include <cstdint>

#include "dsekit/space.hpp"

namespace dsekit {

/// Knobs of the analytical latency model.
struct CostParams {
  std::int64_t bandwidth = 16;  ///< elements transferred per cycle

  bool operator==(const CostParams&) const = default;
};

/// Square tile side when the buffer is split equally among the three GEMM
/// operands: the largest t with 3*t^2 <= buf, floored at 1. Pure integer
/// search, so results are bit-identical across platforms.
std::int64_t tile_dim(std::int64_t buf);

/// Total element traffic of a tiled GEMM under the workload's dataflow.
/// The stationary operand moves once; partial-sum outputs are counted
/// read+write (factor 2) except under output stationarity.
std::int64_t traffic(const Workload& w, std::int64_t t);

/// Cycles to execute w on cfg: max of the compute term ceil(m*n*k /
/// min(pe, t^2)) and the memory term ceil(traffic / bandwidth). Always >= 1.
std::int64_t latency(const Workload& w, const HardwareConfig& cfg, const CostParams& p);

}  // namespace dsekit
