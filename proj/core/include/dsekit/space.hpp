#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dsekit/errors.hpp"

namespace dsekit {

/// Tensor-reuse strategy of the accelerator. Integer codes are part of the
/// on-disk format and must stay stable.
enum class Dataflow : int { WS = 0, OS = 1, RS = 2 };

const char* to_string(Dataflow df);
Dataflow dataflow_from_string(const std::string& s);

/// One GEMM layer (M,K) x (K,N) = (M,N) plus its dataflow tag. This is the
/// DSE input.
struct Workload {
  std::int64_t m = 1;
  std::int64_t n = 1;
  std::int64_t k = 1;
  Dataflow dataflow = Dataflow::WS;

  bool operator==(const Workload&) const = default;
};

/// Upper bounds of the valid workload ranges (lower bound is 1 for each dim).
inline constexpr std::int64_t kMaxM = 256;
inline constexpr std::int64_t kMaxN = 1677;
inline constexpr std::int64_t kMaxK = 1185;

/// Throws RangeError naming the offending field if w violates its ranges.
void validate(const Workload& w);

/// A design point: PE count and on-chip buffer capacity (data elements).
struct HardwareConfig {
  std::int64_t pe = 1;
  std::int64_t buf = 1;

  bool operator==(const HardwareConfig&) const = default;
};

/// The discrete output domain plus a linear area budget. The budget makes
/// "max everything" infeasible so optima are nontrivial.
struct DesignSpace {
  std::vector<std::int64_t> pe_options;   ///< strictly increasing
  std::vector<std::int64_t> buf_options;  ///< strictly increasing
  std::int64_t area_budget = 0;
  std::int64_t area_pe = 0;
  std::int64_t area_buf_per_elem = 0;

  bool operator==(const DesignSpace&) const = default;
};

/// Canonical space: 64 PE options {2,4,...,128}, 12 buffer options
/// {256,512,...,524288}, budget 131072 with 256 area units per PE and one
/// per buffer element.
DesignSpace default_space();

/// Throws RangeError if cfg's options are not members of the space.
void validate(const HardwareConfig& cfg, const DesignSpace& space);

/// Silicon area of a config under the space's linear area model.
std::int64_t area(const HardwareConfig& cfg, const DesignSpace& space);

/// True iff area(cfg) fits the budget.
bool is_feasible(const HardwareConfig& cfg, const DesignSpace& space);

/// Model input encoding: log-normalized dims in [0,1] plus the dataflow code.
struct FeatureVector {
  std::array<double, 3> f{};  ///< ln m/ln 256, ln n/ln 1677, ln k/ln 1185
  int dataflow_code = 0;
};

/// Log-normalizes a workload. Throws RangeError (naming the field) when the
/// workload is out of range.
FeatureVector normalize(const Workload& w);

/// Closest option to value; ties break toward the smaller option.
std::int64_t nearest_option(double value, const std::vector<std::int64_t>& options);

}  // namespace dsekit
