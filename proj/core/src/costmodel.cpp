#include "dsekit/costmodel.hpp"

#include <algorithm>

namespace dsekit {

namespace {

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace

std::int64_t tile_dim(std::int64_t buf) {
  if (buf < 1) throw RangeError("tile_dim: buf must be >= 1");
  // Binary search for the largest t with 3*t^2 <= buf.
  std::int64_t lo = 1, hi = 1;
  while (3 * hi * hi <= buf) hi *= 2;
  while (lo < hi) {
    std::int64_t mid = (lo + hi + 1) / 2;
    if (3 * mid * mid <= buf)
      lo = mid;
    else
      hi = mid - 1;
  }
  return std::max<std::int64_t>(1, lo);
}

std::int64_t traffic(const Workload& w, std::int64_t t) {
  if (t < 1) throw RangeError("traffic: t must be >= 1");
  const std::int64_t nM = ceil_div(w.m, t);
  const std::int64_t nN = ceil_div(w.n, t);
  const std::int64_t nK = ceil_div(w.k, t);
  switch (w.dataflow) {
    case Dataflow::WS:
      return w.k * w.n + w.m * w.k * nN + 2 * w.m * w.n * nK;
    case Dataflow::OS:
      return w.m * w.n + w.m * w.k * nN + w.k * w.n * nM;
    case Dataflow::RS:
      return w.m * w.k + w.k * w.n * nM + 2 * w.m * w.n * nK;
  }
  throw RangeError("traffic: invalid dataflow");
}

std::int64_t latency(const Workload& w, const HardwareConfig& cfg, const CostParams& p) {
  if (cfg.pe < 1 || cfg.buf < 1) throw RangeError("latency: pe and buf must be >= 1");
  if (p.bandwidth < 1) throw RangeError("latency: bandwidth must be >= 1");
  const std::int64_t t = tile_dim(cfg.buf);
  const std::int64_t effective_pe = std::min(cfg.pe, t * t);
  const std::int64_t compute = ceil_div(w.m * w.n * w.k, effective_pe);
  const std::int64_t mem = ceil_div(traffic(w, t), p.bandwidth);
  return std::max<std::int64_t>(1, std::max(compute, mem));
}

}  // namespace dsekit
