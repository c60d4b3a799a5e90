// SPDX-License-Identifier: Apache-2.0
#include "tsanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tsanet/image_io.hpp"
#include "tsanet/training.hpp"

namespace fs = std::filesystem;

namespace tsanet {

namespace {

void check_binary_pair(const char* op, const Tensor& pred, const Tensor& gt) {
  if (pred.shape().size() != 2)
    throw ShapeError(std::string(op) + ": masks must be [H,W], got " +
                     shape_str(pred.shape()));
  if (pred.shape() != gt.shape())
    throw ShapeError(std::string(op) + ": mask shapes differ: " +
                     shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  for (const Tensor* t : {&pred, &gt})
    for (double v : t->data())
      if (v != 0.0 && v != 1.0)
        throw ValueError(std::string(op) + ": masks must be binary");
}

/// Foreground pixels with a 4-neighbor outside the mask (image border
/// counts as background).
std::vector<uint8_t> boundary_of(const Tensor& mask) {
  int64_t h = mask.shape()[0], w = mask.shape()[1];
  std::vector<uint8_t> b(static_cast<size_t>(h * w), 0);
  auto at = [&](int64_t y, int64_t x) -> double {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return mask.data()[y * w + x];
  };
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      if (at(y, x) != 0.0 &&
          (at(y - 1, x) == 0.0 || at(y + 1, x) == 0.0 || at(y, x - 1) == 0.0 ||
           at(y, x + 1) == 0.0))
        b[static_cast<size_t>(y * w + x)] = 1;
  return b;
}

std::vector<uint8_t> dilate_euclidean(const std::vector<uint8_t>& src,
                                      int64_t h, int64_t w, int radius) {
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) offsets.emplace_back(dy, dx);
  std::vector<uint8_t> out(src.size(), 0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (!src[static_cast<size_t>(y * w + x)]) continue;
      for (auto [dy, dx] : offsets) {
        int64_t yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < h && xx >= 0 && xx < w)
          out[static_cast<size_t>(yy * w + xx)] = 1;
      }
    }
  return out;
}

}  // namespace

double region_similarity(const Tensor& pred, const Tensor& gt) {
  check_binary_pair("region_similarity", pred, gt);
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    bool p = pred.data()[i] != 0.0, g = gt.data()[i] != 0.0;
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

int boundary_tolerance_px(int64_t h, int64_t w) {
  return static_cast<int>(std::ceil(
      0.008 * std::hypot(static_cast<double>(h), static_cast<double>(w))));
}

double boundary_accuracy(const Tensor& pred, const Tensor& gt) {
  check_binary_pair("boundary_accuracy", pred, gt);
  int64_t h = pred.shape()[0], w = pred.shape()[1];
  int tol = boundary_tolerance_px(h, w);
  std::vector<uint8_t> pb = boundary_of(pred);
  std::vector<uint8_t> gb = boundary_of(gt);
  int64_t n_pb = std::count(pb.begin(), pb.end(), uint8_t{1});
  int64_t n_gb = std::count(gb.begin(), gb.end(), uint8_t{1});
  if (n_pb == 0 && n_gb == 0) return 1.0;
  if (n_pb == 0 || n_gb == 0) return 0.0;
  std::vector<uint8_t> gb_dil = dilate_euclidean(gb, h, w, tol);
  std::vector<uint8_t> pb_dil = dilate_euclidean(pb, h, w, tol);
  int64_t matched_p = 0, matched_g = 0;
  for (size_t i = 0; i < pb.size(); ++i) {
    matched_p += pb[i] && gb_dil[i];
    matched_g += gb[i] && pb_dil[i];
  }
  double precision = static_cast<double>(matched_p) / static_cast<double>(n_pb);
  double recall = static_cast<double>(matched_g) / static_cast<double>(n_gb);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

AggregateStats aggregate(const std::vector<double>& per_frame) {
  if (per_frame.empty())
    throw ValueError("aggregate: empty per-frame list");
  AggregateStats s;
  double total = 0.0;
  int64_t above = 0;
  for (double v : per_frame) {
    total += v;
    above += v > 0.5;
  }
  auto n = static_cast<int64_t>(per_frame.size());
  s.mean = total / static_cast<double>(n);
  s.recall = static_cast<double>(above) / static_cast<double>(n);
  if (n < 4) {
    s.decay = per_frame.front() - per_frame.back();
    return s;
  }
  int64_t base = n / 4, rem = n % 4;
  int64_t start = 0;
  double first = 0.0, last = 0.0;
  for (int bin = 0; bin < 4; ++bin) {
    int64_t len = base + (bin < rem ? 1 : 0);
    double m = 0.0;
    for (int64_t i = start; i < start + len; ++i) m += per_frame[i];
    m /= static_cast<double>(len);
    if (bin == 0) first = m;
    if (bin == 3) last = m;
    start += len;
  }
  s.decay = first - last;
  return s;
}

EvalReport evaluate(const fs::path& ckpt_path, const fs::path& data_root,
                    const fs::path& out_dir) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  ModelParams model = model_from_checkpoint(ckpt);
  std::vector<FrameSequence> sequences = load_dataset(data_root);
  fs::create_directories(out_dir);

  EvalReport report;
  NoGradGuard no_grad;
  for (const FrameSequence& seq : sequences) {
    SequenceEval se;
    se.name = seq.name;
    fs::path mask_dir = out_dir / seq.name;
    fs::create_directories(mask_dir);
    int h = static_cast<int>(seq.height()), w = static_cast<int>(seq.width());
    for (int t = 0; t < seq.size(); ++t) {
      auto [window, target] = make_window(seq, t, 0);
      Tensor logits = forward_segment(model, ckpt.flags, window, h, w);
      std::vector<double> maskv(static_cast<size_t>(h) * w);
      for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
        maskv[static_cast<size_t>(i)] =
            logits.data()[h * w + i] > logits.data()[i] ? 1.0 : 0.0;
      Tensor pred = Tensor::from_data({h, w}, std::move(maskv));
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%05d.png", t);
      write_png(mask_dir / buf, mask_to_gray8(pred));
      if (t == 0 || t == seq.size() - 1) continue;  // DAVIS-style exclusion
      se.j.push_back(region_similarity(pred, seq.masks[t]));
      se.f.push_back(boundary_accuracy(pred, seq.masks[t]));
    }
    if (se.j.empty())
      throw ValueError("evaluate: sequence " + seq.name +
                       " has no scored frames (needs >= 3 frames)");
    se.j_stats = aggregate(se.j);
    se.f_stats = aggregate(se.f);
    report.sequences.push_back(std::move(se));
  }

  auto avg = [&](auto pick) {
    AggregateStats s;
    for (const auto& se : report.sequences) {
      const AggregateStats& x = pick(se);
      s.mean += x.mean;
      s.recall += x.recall;
      s.decay += x.decay;
    }
    auto n = static_cast<double>(report.sequences.size());
    s.mean /= n;
    s.recall /= n;
    s.decay /= n;
    return s;
  };
  report.j = avg([](const SequenceEval& se) { return se.j_stats; });
  report.f = avg([](const SequenceEval& se) { return se.f_stats; });
  report.jf_mean = (report.j.mean + report.f.mean) / 2.0;

  std::ofstream rf(out_dir / "report.txt");
  if (!rf) throw IoError("cannot write " + (out_dir / "report.txt").string());
  rf << format_report(report);
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os << "sequence\tJ-mean\tF-mean\tJ&F\n";
  os.setf(std::ios::fixed);
  os.precision(4);
  for (const auto& se : report.sequences)
    os << se.name << "\t" << se.j_stats.mean << "\t" << se.f_stats.mean << "\t"
       << (se.j_stats.mean + se.f_stats.mean) / 2.0 << "\n";
  os << "--\n";
  os << "J\tMean " << report.j.mean << "\tRecall " << report.j.recall
     << "\tDecay " << report.j.decay << "\n";
  os << "F\tMean " << report.f.mean << "\tRecall " << report.f.recall
     << "\tDecay " << report.f.decay << "\n";
  os << "J&F\tMean " << report.jf_mean << "\n";
  return os.str();
}

}  // namespace tsanet
