#pragma once

#include <vector>

#include "dsekit/errors.hpp"

namespace dsekit {

/// K-length unified ordinal vector: one scalar design value encoded as a
/// nonzero strictly-decreasing prefix followed by zeros, each component a
/// saturating function of the distance to a bucket edge below the value.
using OrdinalVector = std::vector<double>;

/// Spacing-increasing bucketization of a positive range [lo, hi]: edges are
/// geometric (log-space), so bucket widths grow with the value. In warped
/// coordinates the edges are exactly the integers 0..k.
struct BucketSpec {
  double lo = 0;
  double hi = 0;
  int k = 0;
  std::vector<double> edges;  ///< k+1 strictly increasing, edges[0]=lo, edges[k]=hi

  bool operator==(const BucketSpec&) const = default;
};

/// Builds the geometric bucketization. Throws RangeError unless
/// 0 < lo < hi and k >= 1.
BucketSpec make_buckets(double lo, double hi, int k);

/// Maps d in [lo, hi] to warped coordinate s in [0, k] with warp(edges[i]) = i.
/// Out-of-range d is clamped; *clamped (when non-null) reports it.
double warp(double d, const BucketSpec& spec, bool* clamped = nullptr);

/// Exact inverse of warp on [0, k].
double unwarp(double s, const BucketSpec& spec);

/// Ordinal encoding in warped coordinates: with s = warp(d) and warped edges
/// r_i = i, o[i] = 1 - exp(-(s - i)) when s >= i, else 0.
OrdinalVector encode(double d, const BucketSpec& spec);

/// Reverse of encode: pick j = argmax o[i] (ties toward the smaller index),
/// regress s' = -ln(1 - o[j]) + j clamped to [0, k], and unwarp. Total on
/// any vector with components in [0, 1).
double decode(const OrdinalVector& o, const BucketSpec& spec);

/// Bucket index of d: min(floor(warp(d)), k-1), in [0, k-1].
int bucket_of(double d, const BucketSpec& spec);

}  // namespace dsekit
