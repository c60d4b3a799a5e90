// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "tsanet/metrics.hpp"

using namespace tsanet;

namespace {

Tensor mask_from(const std::vector<double>& v, int64_t h, int64_t w) {
  return Tensor::from_data({h, w}, v, DType::f64);
}

Tensor random_mask(Rng& rng, int64_t h, int64_t w, double fg_prob) {
  std::vector<double> v(static_cast<size_t>(h * w));
  for (auto& x : v) x = rng.uniform() < fg_prob ? 1.0 : 0.0;
  return mask_from(v, h, w);
}

Tensor rect_mask(int64_t h, int64_t w, int64_t y0, int64_t x0, int64_t y1,
                 int64_t x1) {
  std::vector<double> v(static_cast<size_t>(h * w), 0.0);
  for (int64_t y = y0; y < y1; ++y)
    for (int64_t x = x0; x < x1; ++x) v[static_cast<size_t>(y * w + x)] = 1.0;
  return mask_from(v, h, w);
}

/// Brute-force boundary F: per-pixel nearest-match scan with Euclidean
/// tolerance, fully independent of the dilation implementation.
double boundary_f_oracle(const Tensor& pred, const Tensor& gt) {
  int64_t h = pred.shape()[0], w = pred.shape()[1];
  int tol = boundary_tolerance_px(h, w);
  auto boundary = [&](const Tensor& m) {
    std::vector<std::pair<int64_t, int64_t>> pts;
    auto at = [&](int64_t y, int64_t x) -> double {
      if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
      return m.data()[y * w + x];
    };
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        if (at(y, x) != 0.0 && (at(y - 1, x) == 0.0 || at(y + 1, x) == 0.0 ||
                                at(y, x - 1) == 0.0 || at(y, x + 1) == 0.0))
          pts.emplace_back(y, x);
    return pts;
  };
  auto pb = boundary(pred);
  auto gb = boundary(gt);
  if (pb.empty() && gb.empty()) return 1.0;
  if (pb.empty() || gb.empty()) return 0.0;
  auto matched = [&](const auto& from, const auto& to) {
    int64_t n = 0;
    for (const auto& [y, x] : from) {
      bool hit = false;
      for (const auto& [gy, gx] : to) {
        if ((y - gy) * (y - gy) + (x - gx) * (x - gx) <= tol * tol) {
          hit = true;
          break;
        }
      }
      n += hit;
    }
    return n;
  };
  double precision =
      static_cast<double>(matched(pb, gb)) / static_cast<double>(pb.size());
  double recall =
      static_cast<double>(matched(gb, pb)) / static_cast<double>(gb.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

TEST_CASE("region similarity") {
  SUBCASE("identical masks give 1") {
    Tensor m = rect_mask(8, 8, 2, 2, 6, 6);
    CHECK(region_similarity(m, m) == 1.0);
  }
  SUBCASE("disjoint non-empty masks give 0") {
    CHECK(region_similarity(rect_mask(8, 8, 0, 0, 2, 2),
                            rect_mask(8, 8, 5, 5, 8, 8)) == 0.0);
  }
  SUBCASE("equal rectangles overlapping half their area give 1/3") {
    // 4x4 rectangles shifted by half their width: |I|=8, |U|=24.
    Tensor a = rect_mask(8, 12, 2, 2, 6, 6);
    Tensor b = rect_mask(8, 12, 2, 4, 6, 8);
    CHECK(region_similarity(a, b) == 1.0 / 3.0);
  }
  SUBCASE("both empty gives 1") {
    Tensor e = Tensor::zeros({4, 4}, DType::f64);
    CHECK(region_similarity(e, e) == 1.0);
  }
  SUBCASE("symmetry in arguments") {
    Rng rng(3);
    for (int i = 0; i < 10; ++i) {
      Tensor a = random_mask(rng, 9, 9, 0.4);
      Tensor b = random_mask(rng, 9, 9, 0.4);
      CHECK(region_similarity(a, b) == region_similarity(b, a));
    }
  }
  SUBCASE("non-binary input rejected") {
    Tensor bad = Tensor::from_data({1, 2}, {0.0, 0.3}, DType::f64);
    Tensor ok = Tensor::zeros({1, 2}, DType::f64);
    CHECK_THROWS_AS(region_similarity(bad, ok), ValueError);
    CHECK_THROWS_AS(region_similarity(ok, rect_mask(2, 2, 0, 0, 1, 1)),
                    ShapeError);
  }
}

TEST_CASE("boundary accuracy") {
  SUBCASE("identical masks give 1") {
    Tensor m = rect_mask(16, 16, 3, 3, 10, 12);
    CHECK(boundary_accuracy(m, m) == 1.0);
  }
  SUBCASE("empty prediction against non-empty gt gives 0") {
    Tensor e = Tensor::zeros({16, 16}, DType::f64);
    CHECK(boundary_accuracy(e, rect_mask(16, 16, 2, 2, 9, 9)) == 0.0);
    CHECK(boundary_accuracy(e, e) == 1.0);
  }
  SUBCASE("square shifted by exactly the tolerance, against the oracle") {
    int tol = boundary_tolerance_px(16, 16);
    Tensor gt = rect_mask(16, 16, 4, 4, 11, 11);
    Tensor pred = rect_mask(16, 16, 4, 4 + tol, 11, 11 + tol);
    CHECK(boundary_accuracy(pred, gt) ==
          doctest::Approx(boundary_f_oracle(pred, gt)).epsilon(1e-12));
  }
  SUBCASE("matches the brute-force oracle on random masks") {
    Rng rng(7);
    for (int i = 0; i < 60; ++i) {
      Tensor a = random_mask(rng, 16, 16, rng.uniform(0.1, 0.6));
      Tensor b = random_mask(rng, 16, 16, rng.uniform(0.1, 0.6));
      CHECK(boundary_accuracy(a, b) == boundary_f_oracle(a, b));
    }
  }
  SUBCASE("swapping arguments swaps precision/recall but keeps F") {
    Rng rng(11);
    for (int i = 0; i < 10; ++i) {
      Tensor a = random_mask(rng, 12, 12, 0.3);
      Tensor b = random_mask(rng, 12, 12, 0.3);
      CHECK(boundary_accuracy(a, b) ==
            doctest::Approx(boundary_accuracy(b, a)).epsilon(1e-12));
    }
  }
}

TEST_CASE("aggregate statistics") {
  SUBCASE("constant list has zero decay and full recall above 0.5") {
    AggregateStats s = aggregate(std::vector<double>(9, 0.6));
    CHECK(s.mean == doctest::Approx(0.6));
    CHECK(s.recall == 1.0);
    CHECK(s.decay == 0.0);
  }
  SUBCASE("textbook quartile example") {
    AggregateStats s = aggregate({1.0, 0.8, 0.6, 0.4});
    CHECK(s.decay == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(s.mean == doctest::Approx(0.7));
    CHECK(s.recall == 0.75);  // 0.4 is not > 0.5
  }
  SUBCASE("uneven splits give earlier bins the extra frames") {
    // n=5: bins of sizes 2,1,1,1.
    AggregateStats s = aggregate({1.0, 0.8, 0.5, 0.4, 0.2});
    CHECK(s.decay == doctest::Approx(0.9 - 0.2).epsilon(1e-12));
  }
  SUBCASE("empty list is a validation error") {
    CHECK_THROWS_AS(aggregate({}), ValueError);
  }
}
