#include "dsekit/uov.hpp"

#include <algorithm>
#include <cmath>

namespace dsekit {

BucketSpec make_buckets(double lo, double hi, int k) {
  if (!(lo > 0)) throw RangeError("make_buckets: lo must be > 0");
  if (!(hi > lo)) throw RangeError("make_buckets: hi must be > lo");
  if (k < 1) throw RangeError("make_buckets: k must be >= 1");
  BucketSpec spec;
  spec.lo = lo;
  spec.hi = hi;
  spec.k = k;
  spec.edges.resize(static_cast<std::size_t>(k) + 1);
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i <= k; ++i)
    spec.edges[static_cast<std::size_t>(i)] =
        std::exp(llo + (static_cast<double>(i) / k) * (lhi - llo));
  spec.edges.front() = lo;  // pin endpoints against exp/log rounding
  spec.edges.back() = hi;
  return spec;
}

double warp(double d, const BucketSpec& spec, bool* clamped) {
  bool c = false;
  if (d < spec.lo) {
    d = spec.lo;
    c = true;
  } else if (d > spec.hi) {
    d = spec.hi;
    c = true;
  }
  if (clamped) *clamped = c;
  return spec.k * (std::log(d) - std::log(spec.lo)) / (std::log(spec.hi) - std::log(spec.lo));
}

double unwarp(double s, const BucketSpec& spec) {
  if (s < 0 || s > spec.k) throw RangeError("unwarp: s outside [0, k]");
  return std::exp(std::log(spec.lo) +
                  (s / spec.k) * (std::log(spec.hi) - std::log(spec.lo)));
}

OrdinalVector encode(double d, const BucketSpec& spec) {
  const double s = warp(d, spec);
  OrdinalVector o(static_cast<std::size_t>(spec.k), 0.0);
  for (int i = 0; i < spec.k; ++i) {
    if (s >= i) o[static_cast<std::size_t>(i)] = -std::expm1(-(s - i));
  }
  return o;
}

double decode(const OrdinalVector& o, const BucketSpec& spec) {
  if (o.size() != static_cast<std::size_t>(spec.k))
    throw RangeError("decode: vector length does not match bucket count");
  std::size_t j = 0;
  for (std::size_t i = 1; i < o.size(); ++i)
    if (o[i] > o[j]) j = i;
  double s = -std::log1p(-o[j]) + static_cast<double>(j);
  s = std::clamp(s, 0.0, static_cast<double>(spec.k));
  return unwarp(s, spec);
}

int bucket_of(double d, const BucketSpec& spec) {
  const double s = warp(d, spec);
  return std::min(static_cast<int>(std::floor(s)), spec.k - 1);
}

}  // namespace dsekit
