#include "dsekit/space.hpp"

#include <algorithm>
#include <cmath>

namespace dsekit {

const char* to_string(Dataflow df) {
  switch (df) {
    case Dataflow::WS: return "WS";
    case Dataflow::OS: return "OS";
    case Dataflow::RS: return "RS";
  }
  throw RangeError("invalid dataflow code " + std::to_string(static_cast<int>(df)));
}

Dataflow dataflow_from_string(const std::string& s) {
  if (s == "WS") return Dataflow::WS;
  if (s == "OS") return Dataflow::OS;
  if (s == "RS") return Dataflow::RS;
  throw RangeError("unknown dataflow '" + s + "' (expected WS, OS or RS)");
}

void validate(const Workload& w) {
  if (w.m < 1 || w.m > kMaxM)
    throw RangeError("workload field m=" + std::to_string(w.m) + " outside [1, " +
                     std::to_string(kMaxM) + "]");
  if (w.n < 1 || w.n > kMaxN)
    throw RangeError("workload field n=" + std::to_string(w.n) + " outside [1, " +
                     std::to_string(kMaxN) + "]");
  if (w.k < 1 || w.k > kMaxK)
    throw RangeError("workload field k=" + std::to_string(w.k) + " outside [1, " +
                     std::to_string(kMaxK) + "]");
  int code = static_cast<int>(w.dataflow);
  if (code < 0 || code > 2) throw RangeError("workload field dataflow has invalid code");
}

DesignSpace default_space() {
  DesignSpace s;
  s.pe_options.reserve(64);
  for (std::int64_t i = 1; i <= 64; ++i) s.pe_options.push_back(2 * i);
  s.buf_options.reserve(12);
  for (std::int64_t i = 0; i < 12; ++i) s.buf_options.push_back(std::int64_t{256} << i);
  s.area_budget = 131072;
  s.area_pe = 256;
  s.area_buf_per_elem = 1;
  return s;
}

void validate(const HardwareConfig& cfg, const DesignSpace& space) {
  if (!std::binary_search(space.pe_options.begin(), space.pe_options.end(), cfg.pe))
    throw RangeError("pe=" + std::to_string(cfg.pe) + " is not a design-space option");
  if (!std::binary_search(space.buf_options.begin(), space.buf_options.end(), cfg.buf))
    throw RangeError("buf=" + std::to_string(cfg.buf) + " is not a design-space option");
}

std::int64_t area(const HardwareConfig& cfg, const DesignSpace& space) {
  validate(cfg, space);
  return space.area_pe * cfg.pe + space.area_buf_per_elem * cfg.buf;
}

bool is_feasible(const HardwareConfig& cfg, const DesignSpace& space) {
  return area(cfg, space) <= space.area_budget;
}

FeatureVector normalize(const Workload& w) {
  validate(w);
  FeatureVector fv;
  fv.f[0] = std::log(static_cast<double>(w.m)) / std::log(static_cast<double>(kMaxM));
  fv.f[1] = std::log(static_cast<double>(w.n)) / std::log(static_cast<double>(kMaxN));
  fv.f[2] = std::log(static_cast<double>(w.k)) / std::log(static_cast<double>(kMaxK));
  fv.dataflow_code = static_cast<int>(w.dataflow);
  return fv;
}

std::int64_t nearest_option(double value, const std::vector<std::int64_t>& options) {
  if (options.empty()) throw ContractError("nearest_option: empty option set");
  std::int64_t best = options.front();
  double best_dist = std::abs(static_cast<double>(best) - value);
  for (std::int64_t opt : options) {
    double d = std::abs(static_cast<double>(opt) - value);
    if (d < best_dist) {  // ties keep the earlier (smaller) option
      best = opt;
      best_dist = d;
    }
  }
  return best;
}

}  // namespace dsekit
