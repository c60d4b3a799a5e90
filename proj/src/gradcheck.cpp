// SPDX-License-Identifier: Apache-2.0
#include "tsanet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <vector>

#include "tsanet/model.hpp"
#include "tsanet/ops.hpp"

namespace tsanet {

double gradcheck(const std::function<Tensor(const Tensor&)>& f,
                 const Tensor& x, const GradcheckOptions& opt) {
  if (x.dtype() != DType::f64)
    throw ValueError("gradcheck requires f64 inputs");

  Tape& tape = Tape::instance();
  tape.reset();
  tape.set_enabled(true);

  Tensor leaf = x.clone(/*requires_grad=*/true);
  Tensor y = f(leaf);
  if (y.numel() != 1) throw ValueError("gradcheck requires a scalar-valued f");
  tape.backward(y);
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
  if (analytic.empty()) analytic.assign(static_cast<size_t>(x.numel()), 0.0);
  tape.reset();

  std::vector<int64_t> elems(static_cast<size_t>(x.numel()));
  std::iota(elems.begin(), elems.end(), 0);
  if (opt.max_elements >= 0 &&
      static_cast<int64_t>(elems.size()) > opt.max_elements) {
    Rng rng(opt.seed);
    // Partial Fisher-Yates: the first max_elements entries become the sample.
    for (int i = 0; i < opt.max_elements; ++i) {
      int64_t j = i + rng.uniform_int(static_cast<int64_t>(elems.size()) - i);
      std::swap(elems[i], elems[j]);
    }
    elems.resize(static_cast<size_t>(opt.max_elements));
  }

  double max_rel = 0.0;
  {
    NoGradGuard ng;
    std::vector<double> base(x.data().begin(), x.data().end());
    for (int64_t idx : elems) {
      std::vector<double> vals = base;
      vals[static_cast<size_t>(idx)] = base[static_cast<size_t>(idx)] + opt.eps;
      double fp = f(Tensor::from_data(x.shape(), vals, DType::f64)).item();
      vals[static_cast<size_t>(idx)] = base[static_cast<size_t>(idx)] - opt.eps;
      double fm = f(Tensor::from_data(x.shape(), vals, DType::f64)).item();
      double numeric = (fp - fm) / (2.0 * opt.eps);
      double a = analytic[static_cast<size_t>(idx)];
      double rel = std::abs(a - numeric) /
                   std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  tape.reset();
  return max_rel;
}

namespace {

struct SuiteCase {
  std::string module;  // core|encoder|taf|sad
  std::string name;
  std::function<double(Rng&)> run;
};

FeaturePyramid random_pyramid(Rng& rng, int64_t h1, int64_t w1) {
  FeaturePyramid pyr;
  for (int l = 0; l < 4; ++l)
    pyr.levels.push_back(Tensor::uniform(
        {1, kPyramidWidths[l], h1 >> l, w1 >> l}, rng, -1, 1, DType::f64));
  return pyr;
}

Tensor weighted_sum(const Tensor& t, Rng& rng) {
  Tensor coeff =
      Tensor::uniform(t.shape(), rng, 0.5, 1.5, DType::f64);
  return sum(mul(t, coeff));
}

Tensor pyramid_loss(const FeaturePyramid& pyr, Rng& rng) {
  Tensor acc;
  for (const auto& level : pyr.levels) {
    Tensor s = weighted_sum(level, rng);
    acc = acc.defined() ? add(acc, s) : s;
  }
  return acc;
}

std::vector<SuiteCase> build_suite() {
  std::vector<SuiteCase> cases;
  auto add_case = [&](std::string module, std::string name,
                      std::function<double(Rng&)> fn) {
    cases.push_back(SuiteCase{std::move(module), std::move(name),
                              std::move(fn)});
  };
  GradcheckOptions subset;
  subset.max_elements = 24;

  add_case("core", "elementwise(add/mul/relu/sigmoid)", [=](Rng& rng) {
    std::vector<double> vals(18);
    for (auto& v : vals) {
      double m = 0.1 + 0.9 * rng.uniform();
      v = rng.uniform() < 0.5 ? -m : m;
    }
    Tensor x = Tensor::from_data({3, 6}, vals, DType::f64);
    Tensor other = Tensor::uniform({3, 6}, rng, 0.5, 1.5, DType::f64);
    Rng crng(rng.next_u64());
    return gradcheck(
        [&](const Tensor& t) {
          Tensor y = add(mul(sigmoid(t), other), relu(t));
          Rng r2(crng);
          return weighted_sum(y, r2);
        },
        x, subset);
  });
  add_case("core", "matmul", [=](Rng& rng) {
    Tensor a = Tensor::uniform({4, 5}, rng, -1, 1, DType::f64);
    Tensor b = Tensor::uniform({5, 3}, rng, -1, 1, DType::f64);
    Rng crng(rng.next_u64());
    double e1 = gradcheck(
        [&](const Tensor& t) { Rng r2(crng); return weighted_sum(matmul(t, b), r2); }, a,
        subset);
    double e2 = gradcheck(
        [&](const Tensor& t) { Rng r2(crng); return weighted_sum(matmul(a, t), r2); }, b,
        subset);
    return std::max(e1, e2);
  });
  add_case("core", "conv2d", [=](Rng& rng) {
    Tensor x = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1, DType::f64);
    Tensor w = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1, DType::f64);
    Tensor b = Tensor::uniform({3}, rng, -0.5, 0.5, DType::f64);
    Rng crng(rng.next_u64());
    double e1 = gradcheck(
        [&](const Tensor& t) {
          Rng r2(crng);
          return weighted_sum(conv2d(t, w, b, 1, 1), r2);
        },
        x, subset);
    double e2 = gradcheck(
        [&](const Tensor& t) {
          Rng r2(crng);
          return weighted_sum(conv2d(x, t, b, 1, 1), r2);
        },
        w, subset);
    double e3 = gradcheck(
        [&](const Tensor& t) {
          Rng r2(crng);
          return weighted_sum(conv2d(x, w, t, 1, 1), r2);
        },
        b, subset);
    return std::max({e1, e2, e3});
  });
  add_case("core", "grid_sample_bilinear", [=](Rng& rng) {
    Tensor x = Tensor::uniform({1, 2, 4, 4}, rng, -1, 1, DType::f64);
    std::vector<double> pv;
    for (int64_t gy = 0; gy < 4; ++gy)
      for (int64_t gx = 0; gx < 4; ++gx) {
        pv.push_back(gx + rng.uniform(0.1, 0.9) - 0.5);
        pv.push_back(gy + rng.uniform(0.1, 0.9) - 0.5);
      }
    Tensor pts = Tensor::from_data({1, 16, 2}, pv, DType::f64);
    Rng crng(rng.next_u64());
    double e1 = gradcheck(
        [&](const Tensor& t) {
          Rng r2(crng);
          return weighted_sum(grid_sample_bilinear(t, pts), r2);
        },
        x, subset);
    double e2 = gradcheck(
        [&](const Tensor& t) {
          Rng r2(crng);
          return weighted_sum(grid_sample_bilinear(x, t), r2);
        },
        pts, subset);
    return std::max(e1, e2);
  });
  add_case("core", "softmax_cross_entropy", [=](Rng& rng) {
    Tensor logits = Tensor::uniform({1, 2, 3, 3}, rng, -2, 2, DType::f64);
    std::vector<double> tv(9);
    for (auto& v : tv) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor target = Tensor::from_data({1, 3, 3}, tv, DType::f64);
    return gradcheck(
        [&](const Tensor& t) { return softmax_cross_entropy(t, target); },
        logits, subset);
  });
  add_case("core", "upsample_bilinear", [=](Rng& rng) {
    Tensor x = Tensor::uniform({1, 2, 3, 3}, rng, -1, 1, DType::f64);
    Rng crng(rng.next_u64());
    return gradcheck(
        [&](const Tensor& t) {
          Rng r2(crng);
          return weighted_sum(upsample_bilinear(t, 7, 5), r2);
        },
        x, subset);
  });

  add_case("encoder", "extract_pyramid", [=](Rng& rng) {
    Rng prng(rng.next_u64());
    EncoderParams params = init_encoder_params(prng, DType::f64);
    Tensor img = Tensor::uniform({1, 3, 32, 32}, rng, 0.1, 0.9, DType::f64);
    Rng crng(rng.next_u64());
    return gradcheck(
        [&](const Tensor& t) {
          Rng r2(crng);
          return pyramid_loss(extract_pyramid(t, params, Branch::appearance),
                              r2);
        },
        img, subset);
  });
  add_case("encoder", "fuse_appearance_motion", [=](Rng& rng) {
    Rng prng(rng.next_u64());
    EncoderParams params = init_encoder_params(prng, DType::f64);
    FeaturePyramid fi = random_pyramid(rng, 8, 8);
    FeaturePyramid fo = random_pyramid(rng, 8, 8);
    Rng crng(rng.next_u64());
    return gradcheck(
        [&](const Tensor& t) {
          FeaturePyramid fi2 = fi;
          fi2.levels[0] = t;
          Rng r2(crng);
          return pyramid_loss(fuse_appearance_motion(fi2, fo, params), r2);
        },
        fi.levels[0], subset);
  });

  add_case("taf", "predict_offsets_masks", [=](Rng& rng) {
    Rng prng(rng.next_u64());
    TafParams params = init_taf_params(prng, DType::f64);
    params.levels[0].predict =
        ConvParam{Tensor::uniform({27, 32, 3, 3}, prng, -0.3, 0.3, DType::f64,
                                  true),
                  Tensor::uniform({27}, prng, -0.1, 0.1, DType::f64, true)};
    Tensor f_adj = Tensor::uniform({1, 16, 4, 4}, rng, -1, 1, DType::f64);
    Tensor f_tgt = Tensor::uniform({1, 16, 4, 4}, rng, -1, 1, DType::f64);
    Rng crng(rng.next_u64());
    return gradcheck(
        [&](const Tensor& t) {
          OffsetField f = predict_offsets_masks(t, f_tgt, params.levels[0]);
          Rng r2(crng);
          return add(weighted_sum(f.offsets, r2), weighted_sum(f.masks, r2));
        },
        f_adj, subset);
  });
  add_case("taf", "deformable_align", [=](Rng& rng) {
    TafLevelParams lp;
    lp.deform_w = Tensor::uniform({2, 2, 3, 3}, rng, -1, 1, DType::f64, true);
    lp.deform_b = Tensor::uniform({2}, rng, -1, 1, DType::f64, true);
    Tensor feat = Tensor::uniform({1, 2, 4, 4}, rng, -1, 1, DType::f64);
    Tensor offsets = Tensor::uniform({1, 18, 4, 4}, rng, -1.3, 1.3, DType::f64);
    Tensor masks = Tensor::uniform({1, 9, 4, 4}, rng, 0.1, 0.9, DType::f64);
    Rng crng(rng.next_u64());
    double e1 = gradcheck(
        [&](const Tensor& t) {
          Rng r2(crng);
          return weighted_sum(
              deformable_align(t, OffsetField{offsets, masks}, lp), r2);
        },
        feat, subset);
    double e2 = gradcheck(
        [&](const Tensor& t) {
          Rng r2(crng);
          return weighted_sum(
              deformable_align(feat, OffsetField{t, masks}, lp), r2);
        },
        offsets, subset);
    double e3 = gradcheck(
        [&](const Tensor& t) {
          TafLevelParams lp2 = lp;
          lp2.deform_w = t;
          Rng r2(crng);
          return weighted_sum(
              deformable_align(feat, OffsetField{offsets, masks}, lp2), r2);
        },
        lp.deform_w.clone(), subset);
    return std::max({e1, e2, e3});
  });
  add_case("taf", "aggregate_aligned", [=](Rng& rng) {
    TafLevelParams lp;
    lp.aggregate =
        ConvParam{Tensor::uniform({2, 2, 3, 3}, rng, -1, 1, DType::f64),
                  Tensor::uniform({2}, rng, -0.2, 0.2, DType::f64)};
    Tensor a = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1, DType::f64);
    Tensor b = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1, DType::f64);
    Rng crng(rng.next_u64());
    return gradcheck(
        [&](const Tensor& t) {
          Rng r2(crng);
          return weighted_sum(aggregate_aligned(t, b, lp), r2);
        },
        a, subset);
  });
  add_case("taf", "taf_forward", [=](Rng& rng) {
    Rng prng(rng.next_u64());
    TafParams params = init_taf_params(prng, DType::f64);
    // A zero-initialized prediction head makes the output independent of the
    // target features; randomize it so the target pathway carries gradient.
    for (int l = 0; l < 4; ++l) {
      int64_t c = kPyramidWidths[l];
      params.levels[l].predict = ConvParam{
          Tensor::uniform({27, 2 * c, 3, 3}, prng, -0.1, 0.1, DType::f64, true),
          Tensor::uniform({27}, prng, -0.05, 0.05, DType::f64, true)};
    }
    FeaturePyramid tgt = random_pyramid(rng, 8, 8);
    FeaturePyramid prev = random_pyramid(rng, 8, 8);
    FeaturePyramid next = random_pyramid(rng, 8, 8);
    Rng crng(rng.next_u64());
    return gradcheck(
        [&](const Tensor& t) {
          FeaturePyramid tgt2 = tgt;
          tgt2.levels[0] = t;
          Rng r2(crng);
          return pyramid_loss(taf_forward(prev, tgt2, next, params), r2);
        },
        tgt.levels[0], subset);
  });

  add_case("sad", "positional_embed", [=](Rng& rng) {
    Tensor r = Tensor::uniform({5, 2}, rng, -0.4, 0.4, DType::f64);
    Rng crng(rng.next_u64());
    return gradcheck(
        [&](const Tensor& t) {
          Rng r2(crng);
          return weighted_sum(positional_embed(t, kEmbedFreqs), r2);
        },
        r, subset);
  });
  add_case("sad", "decode_continuous", [=](Rng& rng) {
    Rng prng(rng.next_u64());
    SadParams params = init_sad_params(prng, DType::f64);
    FeaturePyramid pyr = random_pyramid(rng, 8, 8);
    std::vector<double> qv;
    for (int i = 0; i < 12; ++i) qv.push_back(rng.uniform(-0.99, 0.99));
    Tensor q = Tensor::from_data({6, 2}, qv, DType::f64);
    Rng crng(rng.next_u64());
    double e1 = gradcheck(
        [&](const Tensor& t) {
          FeaturePyramid p2 = pyr;
          p2.levels[0] = t;
          Rng r2(crng);
          return weighted_sum(decode_continuous(q, p2, params), r2);
        },
        pyr.levels[0], subset);
    double e2 = gradcheck(
        [&](const Tensor& t) {
          SadParams p2 = params;
          p2.w1 = t;
          Rng r2(crng);
          return weighted_sum(decode_continuous(q, pyr, p2), r2);
        },
        params.w1.clone(), subset);
    return std::max(e1, e2);
  });
  add_case("sad", "predict_mask", [=](Rng& rng) {
    Rng prng(rng.next_u64());
    SadParams params = init_sad_params(prng, DType::f64);
    FeaturePyramid pyr = random_pyramid(rng, 8, 8);
    Rng crng(rng.next_u64());
    return gradcheck(
        [&](const Tensor& t) {
          FeaturePyramid p2 = pyr;
          p2.levels[1] = t;
          Rng r2(crng);
          return weighted_sum(predict_mask(p2, 16, 16, params), r2);
        },
        pyr.levels[1], subset);
  });

  add_case("core", "full_pipeline_32x32", [=](Rng& rng) {
    ModelParams model = init_model_params(rng.next_u64(), DType::f64);
    Rng prng(rng.next_u64());
    for (int l = 0; l < 4; ++l) {
      int64_t c = kPyramidWidths[l];
      model.taf.levels[l].predict = ConvParam{
          Tensor::uniform({27, 2 * c, 3, 3}, prng, -0.1, 0.1, DType::f64, true),
          Tensor::uniform({27}, prng, -0.05, 0.05, DType::f64, true)};
    }
    Rng drng(rng.next_u64());
    Tensor frame = Tensor::uniform({1, 3, 32, 32}, drng, 0.1, 0.9, DType::f64);
    Tensor frame2 = Tensor::uniform({1, 3, 32, 32}, drng, 0.1, 0.9, DType::f64);
    Tensor flow = Tensor::uniform({1, 3, 32, 32}, drng, 0.2, 0.8, DType::f64);
    std::vector<double> tv(32 * 32);
    for (auto& v : tv) v = drng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor target = Tensor::from_data({1, 32, 32}, tv, DType::f64);
    Window w{frame2, frame, frame2, flow, flow, flow};
    GradcheckOptions tight = subset;
    tight.max_elements = 8;
    return gradcheck(
        [&](const Tensor& t) {
          Window w2 = w;
          w2.frame_tgt = t;
          return softmax_cross_entropy(
              forward_segment(model, ModelFlags{}, w2, 32, 32), target);
        },
        frame, tight);
  });

  return cases;
}

}  // namespace

bool run_gradcheck_suite(const std::string& module_filter, uint64_t seed,
                         bool inject_fault, std::ostream& os) {
  if (module_filter != "all" && module_filter != "core" &&
      module_filter != "encoder" && module_filter != "taf" &&
      module_filter != "sad")
    throw ValueError("gradcheck: unknown module " + module_filter);
  std::vector<SuiteCase> cases = build_suite();
  bool all_ok = true;
  bool any_run = false;
  os << std::left << std::setw(38) << "op" << std::setw(14) << "max_rel_err"
     << "status\n";
  size_t idx = 0;
  for (auto& c : cases) {
    ++idx;
    if (module_filter != "all" && c.module != module_filter) continue;
    any_run = true;
    Rng rng(mix_seed(seed, idx));
    double err = c.run(rng);
    if (inject_fault && idx == 1) err += 1.0;  // deliberate failure path
    bool ok = err < 1e-4;
    all_ok = all_ok && ok;
    os << std::left << std::setw(38) << (c.module + "." + c.name)
       << std::setw(14) << std::scientific << std::setprecision(3) << err
       << (ok ? "PASS" : "FAIL") << "\n";
    os.unsetf(std::ios::scientific);
  }
  if (!any_run) throw ValueError("gradcheck: no ops matched the filter");
  return all_ok;
}

}  // namespace tsanet
