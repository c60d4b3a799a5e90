// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one line per criterion, [PASS]/[FAIL], nonzero exit on
// any failure. Heavier experiments (learnability, ablation, determinism)
// train real models, so the full run takes several minutes.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "test_support.hpp"
#include "tsanet/data.hpp"
#include "tsanet/gradcheck.hpp"
#include "tsanet/image_io.hpp"
#include "tsanet/metrics.hpp"
#include "tsanet/ops.hpp"
#include "tsanet/sad.hpp"
#include "tsanet/taf.hpp"
#include "tsanet/training.hpp"

using namespace tsanet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void criterion(const std::string& name, const std::function<bool()>& fn) {
  bool ok = false;
  std::string note;
  auto t0 = Clock::now();
  try {
    ok = fn();
  } catch (const std::exception& e) {
    note = std::string(" (exception: ") + e.what() + ")";
  }
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::printf("[%s] %-28s (%.1fs)%s\n", ok ? "PASS" : "FAIL", name.c_str(),
              secs, note.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

fs::path scratch_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "tsanet_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(TSANET_CLI_PATH) + " " + args + " > " +
                    (scratch_root() / "cli_out.txt").string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("missing file " + p.string());
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

// Generator configuration shared by the learnability experiment; frozen.
SyntheticConfig learn_cfg(int i) {
  SyntheticConfig cfg;
  cfg.resolution = 64;
  cfg.n_frames = 8;
  cfg.shape = static_cast<ShapeType>(i % 3);
  cfg.min_speed = 1.0;
  cfg.max_speed = 2.0;
  cfg.distractors = 2;
  return cfg;
}

SyntheticConfig occlusion_cfg(int i) {
  SyntheticConfig cfg = learn_cfg(i);
  cfg.occluder = true;
  return cfg;
}

double mean_j_over(const ModelParams& model, const ModelFlags& flags,
                   const std::vector<FrameSequence>& seqs) {
  NoGradGuard ng;
  double total = 0;
  int count = 0;
  for (const auto& seq : seqs) {
    int h = static_cast<int>(seq.height()), w = static_cast<int>(seq.width());
    for (int t = 1; t + 1 < seq.size(); ++t) {
      auto [win, target] = make_window(seq, t, 0);
      Tensor logits = forward_segment(model, flags, win, h, w);
      std::vector<double> mv(static_cast<size_t>(h) * w);
      for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
        mv[static_cast<size_t>(i)] =
            logits.data()[h * w + i] > logits.data()[i] ? 1.0 : 0.0;
      total += region_similarity(Tensor::from_data({h, w}, mv), seq.masks[t]);
      ++count;
    }
  }
  return total / count;
}

void write_dataset(const fs::path& root,
                   const std::vector<FrameSequence>& seqs) {
  for (size_t i = 0; i < seqs.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "seq_%03zu", i);
    save_sequence(seqs[i], root / buf);
  }
}

// Shared across the learnability / resolution-free criteria.
fs::path g_learn_ckpt;
double g_held_j = 0.0;

bool gradient_suite() {
  auto t0 = Clock::now();
  int rc = run_cli("gradcheck --module all --seed 0");
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::printf("       gradcheck elapsed %.1fs (budget 120s)\n", secs);
  return rc == 0 && secs < 120.0;
}

bool deformable_collapse() {
  tsoracle::TapeReset tr;
  Rng rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    int64_t c = 1 + rng.uniform_int(4);
    int64_t h = 3 + rng.uniform_int(5);
    int64_t w = 3 + rng.uniform_int(5);
    TafLevelParams lp;
    lp.deform_w = Tensor::uniform({c, c, 3, 3}, rng, -1, 1, DType::f64);
    lp.deform_b = Tensor::uniform({c}, rng, -1, 1, DType::f64);
    Tensor feat = Tensor::uniform({1, c, h, w}, rng, -1, 1, DType::f64);
    OffsetField field{Tensor::zeros({1, 18, h, w}, DType::f64),
                      Tensor::full({1, 9, h, w}, 1.0, DType::f64)};
    Tensor aligned = deformable_align(feat, field, lp);
    Tensor ref = conv2d(feat, lp.deform_w, lp.deform_b, 1, 1);
    for (int64_t i = 0; i < ref.numel(); ++i)
      worst = std::max(worst, std::abs(aligned.data()[i] - ref.data()[i]));
  }
  std::printf("       collapse max abs diff %.3e (tol 1e-10)\n", worst);
  return worst < 1e-10;
}

bool brute_force_equivalences() {
  tsoracle::TapeReset tr;
  Rng rng(203);

  // nearest_feature vs exhaustive argmin, 500 queries.
  Tensor feat = Tensor::uniform({3, 5, 7}, rng, -1, 1, DType::f64);
  std::vector<double> qv;
  for (int i = 0; i < 1000; ++i) qv.push_back(rng.uniform(-1.0, 1.0));
  Tensor query = Tensor::from_data({500, 2}, qv, DType::f64);
  auto [z, xa] = nearest_feature(query, feat);
  for (int64_t p = 0; p < 500; ++p) {
    double qx = qv[p * 2], qy = qv[p * 2 + 1];
    double best = 1e300;
    int64_t bi = -1, bj = -1;
    for (int64_t i = 0; i < 5; ++i)
      for (int64_t j = 0; j < 7; ++j) {
        double cx = (j + 0.5) / 7.0 * 2.0 - 1.0;
        double cy = (i + 0.5) / 5.0 * 2.0 - 1.0;
        double d = (qx - cx) * (qx - cx) + (qy - cy) * (qy - cy);
        if (d < best - 1e-15) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    for (int64_t c = 0; c < 3; ++c)
      if (z.at({p, c}) != feat.at({c, bi, bj})) return false;
  }

  // conv2d / matmul / grid_sample vs nested loops, < 1e-12.
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1, DType::f64);
    Tensor w = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1, DType::f64);
    Tensor b = Tensor::uniform({3}, rng, -1, 1, DType::f64);
    int stride = 1 + trial % 2;
    Tensor y = conv2d(x, w, b, stride, 1);
    auto expect = tsoracle::conv2d_oracle(
        {x.data().begin(), x.data().end()}, 1, 2, 5, 5,
        {w.data().begin(), w.data().end()}, 3, 3, 3,
        {b.data().begin(), b.data().end()}, stride, 1);
    for (size_t i = 0; i < expect.size(); ++i)
      if (std::abs(y.data()[i] - expect[i]) >= 1e-12) return false;

    Tensor ma = Tensor::uniform({4, 6}, rng, -1, 1, DType::f64);
    Tensor mb = Tensor::uniform({6, 3}, rng, -1, 1, DType::f64);
    Tensor mo = matmul(ma, mb);
    auto mexpect = tsoracle::matmul_oracle({ma.data().begin(), ma.data().end()},
                                           {mb.data().begin(), mb.data().end()},
                                           4, 6, 3);
    for (size_t i = 0; i < mexpect.size(); ++i)
      if (std::abs(mo.data()[i] - mexpect[i]) >= 1e-12) return false;

    std::vector<double> pv;
    for (int i = 0; i < 30; ++i) pv.push_back(rng.uniform(-2.0, 8.0));
    Tensor pts = Tensor::from_data({1, 15, 2}, pv, DType::f64);
    Tensor gs = grid_sample_bilinear(x, pts);
    auto gexpect = tsoracle::grid_sample_oracle(
        {x.data().begin(), x.data().end()}, 1, 2, 5, 5, pv, 15);
    for (size_t i = 0; i < gexpect.size(); ++i)
      if (std::abs(gs.data()[i] - gexpect[i]) >= 1e-12) return false;
  }

  // boundary_accuracy vs brute-force matching, 200 random 16x16 pairs.
  auto brute_f = [](const Tensor& pred, const Tensor& gt) {
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
        for (const auto& [gy, gx] : to)
          if ((y - gy) * (y - gy) + (x - gx) * (x - gx) <= tol * tol) {
            ++n;
            break;
          }
      }
      return n;
    };
    double precision = double(matched(pb, gb)) / double(pb.size());
    double recall = double(matched(gb, pb)) / double(gb.size());
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
  };
  for (int trial = 0; trial < 200; ++trial) {
    auto rand_mask = [&](double prob) {
      std::vector<double> v(256);
      for (auto& x : v) x = rng.uniform() < prob ? 1.0 : 0.0;
      return Tensor::from_data({16, 16}, v, DType::f64);
    };
    Tensor a = rand_mask(rng.uniform(0.1, 0.6));
    Tensor b = rand_mask(rng.uniform(0.1, 0.6));
    if (boundary_accuracy(a, b) != brute_f(a, b)) return false;
  }
  return true;
}

bool metric_analytics() {
  // Equal rectangles overlapping half their area.
  auto rect = [](int64_t y0, int64_t x0, int64_t y1, int64_t x1) {
    std::vector<double> v(8 * 12, 0.0);
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = x0; x < x1; ++x) v[y * 12 + x] = 1.0;
    return Tensor::from_data({8, 12}, v, DType::f64);
  };
  if (region_similarity(rect(2, 2, 6, 6), rect(2, 4, 6, 8)) != 1.0 / 3.0)
    return false;
  if (aggregate({1.0, 0.8, 0.6, 0.4}).decay != 0.6 &&
      std::abs(aggregate({1.0, 0.8, 0.6, 0.4}).decay - 0.6) > 1e-15)
    return false;
  Tensor m = rect(1, 1, 7, 9);
  return region_similarity(m, m) == 1.0 && boundary_accuracy(m, m) == 1.0;
}

bool learnability() {
  fs::path root = scratch_root() / "learn";
  std::vector<FrameSequence> train_seqs, held;
  for (int i = 0; i < 8; ++i)
    train_seqs.push_back(generate_synthetic_sequence(learn_cfg(i), 1000 + i));
  write_dataset(root / "train", train_seqs);
  for (int i = 0; i < 4; ++i)
    held.push_back(generate_synthetic_sequence(learn_cfg(i), 5000 + i));

  TrainConfig cfg;
  cfg.iterations = 1800;
  cfg.scales = {64};
  cfg.seed = 0;
  auto t0 = Clock::now();
  TrainResult res = train(cfg, {root / "train"}, root / "run");
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();

  // Loss must be monotone non-increasing under a 50-iteration moving average.
  std::vector<double> ma;
  for (size_t i = 49; i < res.losses.size(); i += 50) {
    double s = 0;
    for (size_t k = i + 1 - 50; k <= i; ++k) s += res.losses[k];
    ma.push_back(s / 50.0);
  }
  bool monotone = true;
  for (size_t i = 1; i < ma.size(); ++i)
    if (ma[i] > ma[i - 1] + 1e-9) monotone = false;

  ModelParams model = model_from_checkpoint(res.checkpoint);
  double train_j = mean_j_over(model, cfg.flags(), train_seqs);
  double held_j = mean_j_over(model, cfg.flags(), held);
  g_learn_ckpt = root / "run" / "checkpoint.tsck";
  g_held_j = held_j;
  std::printf(
      "       train_J %.4f (>=0.90), held_J %.4f (>=0.85), %.0fs (<=900), "
      "loss monotone(ma50): %s\n",
      train_j, held_j, secs, monotone ? "yes" : "no");
  return train_j >= 0.90 && held_j >= 0.85 && secs <= 900.0 && monotone;
}

bool ablation_direction() {
  fs::path root = scratch_root() / "ablation";
  std::vector<FrameSequence> train_seqs, held;
  for (int i = 0; i < 8; ++i)
    train_seqs.push_back(
        generate_synthetic_sequence(occlusion_cfg(i), 3000 + i));
  write_dataset(root / "train", train_seqs);
  for (int i = 0; i < 4; ++i)
    held.push_back(generate_synthetic_sequence(occlusion_cfg(i), 7000 + i));

  TrainConfig cfg;
  cfg.iterations = 900;
  cfg.scales = {64};
  cfg.seed = 0;
  TrainResult full = train(cfg, {root / "train"}, root / "full");

  TrainConfig no_taf_cfg = cfg;
  no_taf_cfg.taf_enabled = false;
  TrainResult ablated = train(no_taf_cfg, {root / "train"}, root / "no_taf");

  ModelParams full_model = model_from_checkpoint(full.checkpoint);
  ModelParams ablated_model = model_from_checkpoint(ablated.checkpoint);
  double j_full = mean_j_over(full_model, cfg.flags(), held);
  double j_ablated = mean_j_over(ablated_model, no_taf_cfg.flags(), held);
  std::printf("       occlusion held-out J: full %.4f vs no-TAF %.4f "
              "(margin %+.4f)\n",
              j_full, j_ablated, j_full - j_ablated);
  return j_full > j_ablated;
}

bool resolution_free() {
  if (g_learn_ckpt.empty() || !fs::exists(g_learn_ckpt)) {
    std::printf("       missing learnability checkpoint\n");
    return false;
  }
  fs::path root = scratch_root() / "resfree";
  FrameSequence seq = generate_synthetic_sequence(learn_cfg(0), 5000);
  save_sequence(seq, root / "seq");

  for (int size : {96, 128}) {
    std::string out = (root / ("masks" + std::to_string(size))).string();
    int rc = run_cli("infer --ckpt " + g_learn_ckpt.string() + " --seq " +
                     (root / "seq").string() + " --out " + out + " --size " +
                     std::to_string(size) + " " + std::to_string(size));
    if (rc != 0) return false;
    ImageU8 mask = read_png(fs::path(out) / "00001.png");
    if (mask.width != size || mask.height != size) return false;
    for (uint8_t p : mask.pixels)
      if (p != 0 && p != 255) return false;
  }

  // Coincident pixel centers: 64 and 192 share centers at (3i+1, 3j+1);
  // decoded logits there must agree bit-exactly.
  Checkpoint ckpt = load_checkpoint(g_learn_ckpt);
  ModelParams model = model_from_checkpoint(ckpt);
  NoGradGuard ng;
  auto [win, target] = make_window(seq, 2, 0);
  Tensor lo = forward_segment(model, ckpt.flags, win, 64, 64);
  Tensor hi = forward_segment(model, ckpt.flags, win, 192, 192);
  for (int64_t i = 0; i < 64; i += 5)
    for (int64_t j = 0; j < 64; j += 5)
      for (int64_t c = 0; c < 2; ++c)
        if (lo.at({0, c, i, j}) != hi.at({0, c, 3 * i + 1, 3 * j + 1}))
          return false;
  return true;
}

bool determinism() {
  fs::path root = scratch_root() / "determinism";
  int rc = run_cli("synth --out " + (root / "data").string() +
                   " --sequences 2 --frames 4 --seed 11");
  if (rc != 0) return false;
  std::string train_args = " --data " + (root / "data").string() +
                           " --iterations 40 --scales 64 --seed 7";
  if (run_cli("train --out " + (root / "run1").string() + train_args) != 0)
    return false;
  if (run_cli("train --out " + (root / "run2").string() + train_args) != 0)
    return false;
  std::string bytes1 = file_bytes(root / "run1/checkpoint.tsck");
  std::string bytes2 = file_bytes(root / "run2/checkpoint.tsck");
  if (bytes1 != bytes2) return false;

  // Checkpoint round trip is bitwise exact.
  Checkpoint ckpt = load_checkpoint(root / "run1/checkpoint.tsck");
  save_checkpoint(ckpt, root / "resaved.tsck");
  return file_bytes(root / "resaved.tsck") == bytes1;
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  criterion("gradient_suite", gradient_suite);
  criterion("deformable_collapse", deformable_collapse);
  criterion("brute_force_equivalences", brute_force_equivalences);
  criterion("metric_analytics", metric_analytics);
  criterion("learnability", learnability);
  criterion("ablation_direction", ablation_direction);
  criterion("resolution_free", resolution_free);
  criterion("determinism", determinism);
  if (g_failures == 0) {
    std::printf("all acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d acceptance criteria FAILED\n", g_failures);
  return 1;
}
