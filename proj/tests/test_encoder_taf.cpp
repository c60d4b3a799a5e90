// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "tsanet/encoder.hpp"
#include "tsanet/gradcheck.hpp"
#include "tsanet/ops.hpp"
#include "tsanet/taf.hpp"

using namespace tsanet;
using tsoracle::TapeReset;

namespace {

FeaturePyramid random_pyramid(Rng& rng, int64_t h1, int64_t w1, DType dt,
                              double lo = -1.0, double hi = 1.0) {
  FeaturePyramid pyr;
  for (int l = 0; l < 4; ++l)
    pyr.levels.push_back(Tensor::uniform(
        {1, kPyramidWidths[l], h1 >> l, w1 >> l}, rng, lo, hi, dt));
  return pyr;
}

}  // namespace

TEST_CASE("extract_pyramid produces the stride schedule") {
  TapeReset tr;
  Rng rng(71);
  EncoderParams params = init_encoder_params(rng, DType::f64);
  Tensor img = Tensor::uniform({1, 3, 64, 64}, rng, 0, 1, DType::f64);
  FeaturePyramid pyr = extract_pyramid(img, params, Branch::appearance);
  REQUIRE(pyr.levels.size() == 4);
  CHECK(pyr.levels[0].shape() == std::vector<int64_t>{1, 16, 16, 16});
  CHECK(pyr.levels[1].shape() == std::vector<int64_t>{1, 32, 8, 8});
  CHECK(pyr.levels[2].shape() == std::vector<int64_t>{1, 64, 4, 4});
  CHECK(pyr.levels[3].shape() == std::vector<int64_t>{1, 128, 2, 2});

  CHECK_THROWS_AS(extract_pyramid(Tensor::zeros({1, 3, 48, 64}, DType::f64),
                                  params, Branch::appearance),
                  ValueError);
}

TEST_CASE("zero image with zero biases gives all-zero features") {
  TapeReset tr;
  Rng rng(73);
  EncoderParams params = init_encoder_params(rng, DType::f64);
  Tensor img = Tensor::zeros({1, 3, 32, 32}, DType::f64);
  FeaturePyramid pyr = extract_pyramid(img, params, Branch::motion);
  for (const auto& level : pyr.levels)
    for (double v : level.data()) CHECK(v == 0.0);
}

TEST_CASE("branches are independent") {
  TapeReset tr;
  Rng rng(79);
  EncoderParams params = init_encoder_params(rng, DType::f64);
  Tensor img = Tensor::uniform({1, 3, 32, 32}, rng, 0, 1, DType::f64);
  FeaturePyramid a = extract_pyramid(img, params, Branch::appearance);
  FeaturePyramid b = extract_pyramid(img, params, Branch::motion);
  bool any_diff = false;
  for (int l = 0; l < 4; ++l)
    for (int64_t i = 0; i < a.levels[l].numel(); ++i)
      if (a.levels[l].data()[i] != b.levels[l].data()[i]) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("fusion: zero motion and pass-through weights reproduce f_i") {
  TapeReset tr;
  Rng rng(83);
  EncoderParams params = init_encoder_params(rng, DType::f64);
  // Pass-through of the first half of the concatenated channels.
  for (int l = 0; l < 4; ++l) {
    int64_t c = kPyramidWidths[l];
    std::vector<double> w(static_cast<size_t>(c * 2 * c), 0.0);
    for (int64_t i = 0; i < c; ++i) w[static_cast<size_t>(i * 2 * c + i)] = 1.0;
    params.fusion[l].weight = Tensor::from_data({c, 2 * c, 1, 1}, w, DType::f64);
    params.fusion[l].bias = Tensor::zeros({c}, DType::f64);
  }
  FeaturePyramid f_i = random_pyramid(rng, 8, 8, DType::f64, 0.0, 1.0);
  FeaturePyramid f_o;
  for (int l = 0; l < 4; ++l)
    f_o.levels.push_back(
        Tensor::zeros(f_i.levels[l].shape(), DType::f64));
  FeaturePyramid fused = fuse_appearance_motion(f_i, f_o, params);
  for (int l = 0; l < 4; ++l) {
    CHECK(fused.levels[l].shape()[1] == kPyramidWidths[l]);
    for (int64_t i = 0; i < f_i.levels[l].numel(); ++i)
      CHECK(fused.levels[l].data()[i] ==
            doctest::Approx(f_i.levels[l].data()[i]).epsilon(1e-14));
  }
}

TEST_CASE("encoder gradcheck through pyramid and fusion") {
  TapeReset tr;
  Rng rng(89);
  EncoderParams params = init_encoder_params(rng, DType::f64);
  Tensor img = Tensor::uniform({1, 3, 32, 32}, rng, 0.1, 0.9, DType::f64);

  GradcheckOptions opt;
  opt.max_elements = 40;
  double err = gradcheck(
      [&](const Tensor& t) {
        FeaturePyramid a = extract_pyramid(t, params, Branch::appearance);
        FeaturePyramid o = extract_pyramid(t, params, Branch::motion);
        FeaturePyramid fused = fuse_appearance_motion(a, o, params);
        Tensor acc;
        for (const auto& level : fused.levels) {
          Tensor s = sum(level);
          acc = acc.defined() ? add(acc, s) : s;
        }
        return acc;
      },
      img, opt);
  CHECK(err < 1e-4);
}

TEST_CASE("predict_offsets_masks zero-initialized head") {
  TapeReset tr;
  Rng rng(97);
  TafParams params = init_taf_params(rng, DType::f64);
  Tensor f_adj = Tensor::uniform({1, 16, 5, 5}, rng, -1, 1, DType::f64);
  Tensor f_tgt = Tensor::uniform({1, 16, 5, 5}, rng, -1, 1, DType::f64);
  OffsetField field = predict_offsets_masks(f_adj, f_tgt, params.levels[0]);
  CHECK(field.offsets.shape() == std::vector<int64_t>{1, 18, 5, 5});
  CHECK(field.masks.shape() == std::vector<int64_t>{1, 9, 5, 5});
  for (double v : field.offsets.data()) CHECK(v == 0.0);
  for (double v : field.masks.data()) CHECK(v == 0.5);
  // 3k = 27 channels before the split.
  CHECK(params.levels[0].predict.weight.shape()[0] == 27);
}

TEST_CASE("deformable collapse: zero offsets, unit masks equal conv2d") {
  TapeReset tr;
  Rng rng(101);
  for (int trial = 0; trial < 5; ++trial) {
    int64_t c = 4, h = 5, w = 6;
    TafLevelParams lp;
    lp.deform_w = Tensor::uniform({c, c, 3, 3}, rng, -1, 1, DType::f64);
    lp.deform_b = Tensor::uniform({c}, rng, -1, 1, DType::f64);
    Tensor feat = Tensor::uniform({1, c, h, w}, rng, -1, 1, DType::f64);
    OffsetField field{Tensor::zeros({1, 18, h, w}, DType::f64),
                      Tensor::full({1, 9, h, w}, 1.0, DType::f64)};
    Tensor aligned = deformable_align(feat, field, lp);
    Tensor ref = conv2d(feat, lp.deform_w, lp.deform_b, 1, 1);
    REQUIRE(aligned.shape() == ref.shape());
    for (int64_t i = 0; i < ref.numel(); ++i)
      CHECK(std::abs(aligned.data()[i] - ref.data()[i]) < 1e-10);
  }
}

TEST_CASE("deformable identity tap reproduces the input") {
  TapeReset tr;
  Rng rng(103);
  int64_t c = 3, h = 4, w = 4;
  TafLevelParams lp;
  std::vector<double> wv(static_cast<size_t>(c * c * 9), 0.0);
  for (int64_t i = 0; i < c; ++i)
    wv[static_cast<size_t>(((i * c + i) * 3 + 1) * 3 + 1)] = 1.0;  // center tap
  lp.deform_w = Tensor::from_data({c, c, 3, 3}, wv, DType::f64);
  lp.deform_b = Tensor::zeros({c}, DType::f64);
  Tensor feat = Tensor::uniform({1, c, h, w}, rng, -1, 1, DType::f64);
  OffsetField field{Tensor::zeros({1, 18, h, w}, DType::f64),
                    Tensor::full({1, 9, h, w}, 1.0, DType::f64)};
  Tensor aligned = deformable_align(feat, field, lp);
  for (int64_t i = 0; i < feat.numel(); ++i)
    CHECK(aligned.data()[i] == doctest::Approx(feat.data()[i]).epsilon(1e-14));
}

TEST_CASE("deformable_align matches the per-position per-tap oracle") {
  TapeReset tr;
  Rng rng(107);
  for (int trial = 0; trial < 5; ++trial) {
    int64_t c = 2, h = 5, w = 5;
    TafLevelParams lp;
    lp.deform_w = Tensor::uniform({c, c, 3, 3}, rng, -1, 1, DType::f64);
    lp.deform_b = Tensor::uniform({c}, rng, -1, 1, DType::f64);
    Tensor feat = Tensor::uniform({1, c, h, w}, rng, -1, 1, DType::f64);
    Tensor offsets = Tensor::uniform({1, 18, h, w}, rng, -2.3, 2.3, DType::f64);
    Tensor masks = Tensor::uniform({1, 9, h, w}, rng, 0.05, 0.95, DType::f64);
    Tensor aligned = deformable_align(feat, OffsetField{offsets, masks}, lp);
    auto expect = tsoracle::deformable_align_oracle(
        {feat.data().begin(), feat.data().end()}, 1, c, h, w,
        {offsets.data().begin(), offsets.data().end()},
        {masks.data().begin(), masks.data().end()},
        {lp.deform_w.data().begin(), lp.deform_w.data().end()},
        {lp.deform_b.data().begin(), lp.deform_b.data().end()});
    REQUIRE(static_cast<size_t>(aligned.numel()) == expect.size());
    for (size_t i = 0; i < expect.size(); ++i)
      CHECK(std::abs(aligned.data()[i] - expect[i]) < 1e-12);
  }
}

TEST_CASE("taps displaced fully outside the image contribute zero") {
  TapeReset tr;
  Rng rng(109);
  int64_t c = 2, h = 4, w = 4;
  TafLevelParams lp;
  lp.deform_w = Tensor::uniform({c, c, 3, 3}, rng, -1, 1, DType::f64);
  lp.deform_b = Tensor::zeros({c}, DType::f64);
  Tensor feat = Tensor::uniform({1, c, h, w}, rng, -1, 1, DType::f64);
  // Push every tap far outside: all sampled values are zero, so the output
  // reduces to the (zero) bias.
  Tensor offsets = Tensor::full({1, 18, h, w}, 100.0, DType::f64);
  Tensor masks = Tensor::full({1, 9, h, w}, 1.0, DType::f64);
  Tensor aligned = deformable_align(feat, OffsetField{offsets, masks}, lp);
  for (double v : aligned.data()) CHECK(v == 0.0);
}

TEST_CASE("aggregate_aligned symmetry and cancellation") {
  TapeReset tr;
  Rng rng(113);
  TafLevelParams lp;
  lp.aggregate = ConvParam{Tensor::uniform({3, 3, 3, 3}, rng, -1, 1, DType::f64),
                           Tensor::zeros({3}, DType::f64)};
  Tensor a = Tensor::uniform({1, 3, 6, 6}, rng, -1, 1, DType::f64);
  Tensor b = Tensor::uniform({1, 3, 6, 6}, rng, -1, 1, DType::f64);

  Tensor ab = aggregate_aligned(a, b, lp);
  Tensor ba = aggregate_aligned(b, a, lp);
  for (int64_t i = 0; i < ab.numel(); ++i)
    CHECK(ab.data()[i] == ba.data()[i]);

  Tensor neg = scale(a, -1.0);
  Tensor zero_out = aggregate_aligned(a, neg, lp);
  for (double v : zero_out.data()) CHECK(v == 0.0);
}

TEST_CASE("taf_forward preserves pyramid shapes") {
  TapeReset tr;
  Rng rng(127);
  TafParams params = init_taf_params(rng, DType::f64);
  FeaturePyramid tgt = random_pyramid(rng, 8, 8, DType::f64);
  FeaturePyramid prev = random_pyramid(rng, 8, 8, DType::f64);
  FeaturePyramid next = random_pyramid(rng, 8, 8, DType::f64);
  FeaturePyramid out = taf_forward(prev, tgt, next, params);
  REQUIRE(out.levels.size() == 4);
  for (int l = 0; l < 4; ++l)
    CHECK(out.levels[l].shape() == tgt.levels[l].shape());
}

TEST_CASE("taf gradchecks") {
  TapeReset tr;
  Rng rng(131);
  GradcheckOptions opt;
  opt.max_elements = 30;

  SUBCASE("predict_offsets_masks wrt both inputs") {
    TafParams params = init_taf_params(rng, DType::f64);
    // A zero-initialized head has zero gradient wrt inputs, so randomize it.
    params.levels[0].predict =
        ConvParam{Tensor::uniform({27, 32, 3, 3}, rng, -0.3, 0.3, DType::f64,
                                  true),
                  Tensor::uniform({27}, rng, -0.1, 0.1, DType::f64, true)};
    Tensor f_adj = Tensor::uniform({1, 16, 4, 4}, rng, -1, 1, DType::f64);
    Tensor f_tgt = Tensor::uniform({1, 16, 4, 4}, rng, -1, 1, DType::f64);
    Tensor coeff_o = Tensor::uniform({1, 18, 4, 4}, rng, 0.5, 1.5, DType::f64);
    Tensor coeff_m = Tensor::uniform({1, 9, 4, 4}, rng, 0.5, 1.5, DType::f64);
    auto loss = [&](const Tensor& adj, const Tensor& tgt) {
      OffsetField f = predict_offsets_masks(adj, tgt, params.levels[0]);
      return add(sum(mul(f.offsets, coeff_o)), sum(mul(f.masks, coeff_m)));
    };
    CHECK(gradcheck([&](const Tensor& t) { return loss(t, f_tgt); }, f_adj,
                    opt) < 1e-4);
    CHECK(gradcheck([&](const Tensor& t) { return loss(f_adj, t); }, f_tgt,
                    opt) < 1e-4);
  }

  SUBCASE("deformable_align wrt features, offsets, masks, weights") {
    int64_t c = 2, h = 4, w = 4;
    TafLevelParams lp;
    lp.deform_w = Tensor::uniform({c, c, 3, 3}, rng, -1, 1, DType::f64, true);
    lp.deform_b = Tensor::uniform({c}, rng, -1, 1, DType::f64, true);
    Tensor feat = Tensor::uniform({1, c, h, w}, rng, -1, 1, DType::f64);
    Tensor offsets = Tensor::uniform({1, 18, h, w}, rng, -1.3, 1.3, DType::f64);
    Tensor masks = Tensor::uniform({1, 9, h, w}, rng, 0.1, 0.9, DType::f64);
    Tensor coeff = Tensor::uniform({1, c, h, w}, rng, 0.5, 1.5, DType::f64);

    CHECK(gradcheck(
              [&](const Tensor& t) {
                return sum(mul(
                    deformable_align(t, OffsetField{offsets, masks}, lp),
                    coeff));
              },
              feat, opt) < 1e-4);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                return sum(mul(deformable_align(feat, OffsetField{t, masks}, lp),
                               coeff));
              },
              offsets, opt) < 1e-4);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                return sum(mul(
                    deformable_align(feat, OffsetField{offsets, t}, lp),
                    coeff));
              },
              masks, opt) < 1e-4);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                TafLevelParams lp2 = lp;
                lp2.deform_w = t;
                return sum(mul(
                    deformable_align(feat, OffsetField{offsets, masks}, lp2),
                    coeff));
              },
              lp.deform_w.clone(), opt) < 1e-4);
  }

  SUBCASE("aggregate_aligned") {
    TafLevelParams lp;
    lp.aggregate =
        ConvParam{Tensor::uniform({2, 2, 3, 3}, rng, -1, 1, DType::f64),
                  Tensor::uniform({2}, rng, -0.2, 0.2, DType::f64)};
    Tensor a = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1, DType::f64);
    Tensor b = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1, DType::f64);
    Tensor coeff = Tensor::uniform({1, 2, 5, 5}, rng, 0.5, 1.5, DType::f64);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                return sum(mul(aggregate_aligned(t, b, lp), coeff));
              },
              a, opt) < 1e-4);
  }

  SUBCASE("taf_forward end to end on an 8x8 top level") {
    TafParams params = init_taf_params(rng, DType::f64);
    FeaturePyramid tgt = random_pyramid(rng, 8, 8, DType::f64);
    FeaturePyramid prev = random_pyramid(rng, 8, 8, DType::f64);
    FeaturePyramid next = random_pyramid(rng, 8, 8, DType::f64);
    double err = gradcheck(
        [&](const Tensor& t) {
          FeaturePyramid prev2 = prev;
          prev2.levels[0] = t;
          FeaturePyramid out = taf_forward(prev2, tgt, next, params);
          Tensor acc;
          for (const auto& level : out.levels) {
            Tensor s = sum(level);
            acc = acc.defined() ? add(acc, s) : s;
          }
          return acc;
        },
        prev.levels[0], opt);
    CHECK(err < 1e-4);
  }
}
