#include <doctest.h>

#include <cmath>

#include "dsekit/rng.hpp"
#include "dsekit/space.hpp"

using namespace dsekit;

TEST_SUITE_BEGIN("space");

TEST_CASE("default space matches the documented grids") {
  const DesignSpace s = default_space();
  CHECK(s.pe_options.size() == 64);
  CHECK(s.buf_options.size() == 12);
  CHECK(s.pe_options.front() == 2);
  CHECK(s.pe_options.back() == 128);
  CHECK(s.buf_options.back() == 524288);
  CHECK(s.pe_options.size() * s.buf_options.size() == 768);
  CHECK(s.area_budget == 131072);
  CHECK(s.area_pe == 256);
  CHECK(s.area_buf_per_elem == 1);
  for (std::size_t i = 1; i < s.pe_options.size(); ++i)
    CHECK(s.pe_options[i] > s.pe_options[i - 1]);
  for (std::size_t i = 1; i < s.buf_options.size(); ++i)
    CHECK(s.buf_options[i] > s.buf_options[i - 1]);
}

TEST_CASE("input design space exceeds 1e9 points") {
  const std::int64_t points = kMaxM * kMaxN * kMaxK * 3;
  CHECK(points > 1000000000LL);
}

TEST_CASE("area arithmetic") {
  const DesignSpace s = default_space();
  CHECK(area({128, 32768}, s) == 65536);
  CHECK(area({2, 256}, s) == 768);
  CHECK_THROWS_AS(area({0, 256}, s), RangeError);
  CHECK_THROWS_AS(area({3, 256}, s), RangeError);  // not an option
}

TEST_CASE("feasibility against the budget") {
  const DesignSpace s = default_space();
  CHECK(is_feasible({128, 65536}, s));       // area 98304
  CHECK_FALSE(is_feasible({2, 262144}, s));  // area 262656
  CHECK(is_feasible({2, 256}, s));
}

TEST_CASE("normalize endpoints and midpoint") {
  const FeatureVector lo = normalize({1, 1, 1, Dataflow::WS});
  CHECK(lo.f[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(lo.f[1] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(lo.f[2] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(lo.dataflow_code == 0);

  const FeatureVector hi = normalize({256, 1677, 1185, Dataflow::RS});
  CHECK(hi.f[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(hi.f[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(hi.f[2] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(hi.dataflow_code == 2);

  CHECK(normalize({16, 1, 1, Dataflow::OS}).f[0] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("normalize rejects out-of-range fields by name") {
  CHECK_THROWS_WITH_AS(normalize({0, 1, 1, Dataflow::WS}),
                       doctest::Contains("field m"), RangeError);
  CHECK_THROWS_WITH_AS(normalize({1, 1678, 1, Dataflow::WS}),
                       doctest::Contains("field n"), RangeError);
  CHECK_THROWS_WITH_AS(normalize({1, 1, 1186, Dataflow::WS}),
                       doctest::Contains("field k"), RangeError);
}

TEST_CASE("normalize is invertible up to rounding") {
  // Exhaustive over m, random over n and k.
  const double ln_m = std::log(256.0), ln_n = std::log(1677.0), ln_k = std::log(1185.0);
  for (std::int64_t m = 1; m <= 256; ++m) {
    const FeatureVector f = normalize({m, 1, 1, Dataflow::WS});
    CHECK(std::llround(std::exp(f.f[0] * ln_m)) == m);
  }
  SplitMix64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto n = static_cast<std::int64_t>(rng.next_below(1677)) + 1;
    const auto k = static_cast<std::int64_t>(rng.next_below(1185)) + 1;
    const FeatureVector f = normalize({1, n, k, Dataflow::WS});
    CHECK(std::llround(std::exp(f.f[1] * ln_n)) == n);
    CHECK(std::llround(std::exp(f.f[2] * ln_k)) == k);
  }
}

TEST_CASE("normalize is monotone per dim") {
  double prev = -1;
  for (std::int64_t m = 1; m <= 256; ++m) {
    const double v = normalize({m, 1, 1, Dataflow::WS}).f[0];
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("nearest_option brute-force agreement") {
  const DesignSpace s = default_space();
  CHECK(nearest_option(5.1, s.pe_options) == 6);
  CHECK(nearest_option(3.0, {2, 4}) == 2);  // tie toward smaller
  CHECK(nearest_option(1000.0, s.pe_options) == 128);

  SplitMix64 rng(42);
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.next_double(-50.0, 200.0);
    const std::int64_t got = nearest_option(x, s.pe_options);
    std::int64_t best = s.pe_options.front();
    double best_d = std::abs(static_cast<double>(best) - x);
    for (std::int64_t opt : s.pe_options) {
      const double d = std::abs(static_cast<double>(opt) - x);
      if (d < best_d) {
        best = opt;
        best_d = d;
      }
    }
    CHECK(got == best);
    CHECK(std::binary_search(s.pe_options.begin(), s.pe_options.end(), got));
  }
}

TEST_CASE("dataflow codes are stable") {
  CHECK(static_cast<int>(Dataflow::WS) == 0);
  CHECK(static_cast<int>(Dataflow::OS) == 1);
  CHECK(static_cast<int>(Dataflow::RS) == 2);
  CHECK(dataflow_from_string("OS") == Dataflow::OS);
  CHECK_THROWS_AS(dataflow_from_string("XX"), RangeError);
}

TEST_SUITE_END();
