// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tsanet/tensor.hpp"

namespace tsanet {

/// intersection / union of binary masks; 1.0 when both are empty.
double region_similarity(const Tensor& pred, const Tensor& gt);

/// Tolerance radius used by boundary matching: ceil(0.008 * image diagonal).
int boundary_tolerance_px(int64_t h, int64_t w);

/// F-measure of boundary pixels matched within the tolerance radius
/// (Euclidean dilation). 1.0 when both boundaries are empty, 0.0 when
/// precision+recall is 0.
double boundary_accuracy(const Tensor& pred, const Tensor& gt);

struct AggregateStats {
  double mean = 0.0;
  double recall = 0.0;  // fraction of frames with value > 0.5
  double decay = 0.0;   // mean(first quartile) - mean(last quartile)
};

/// Quartiles are 4 contiguous bins; uneven splits give earlier bins the
/// extra frames. Lists shorter than 4 fall back to first-minus-last.
AggregateStats aggregate(const std::vector<double>& per_frame);

struct SequenceEval {
  std::string name;
  std::vector<double> j;  // per scored frame (first/last excluded)
  std::vector<double> f;
  AggregateStats j_stats;
  AggregateStats f_stats;
};

struct EvalReport {
  std::vector<SequenceEval> sequences;
  AggregateStats j;  // averaged over sequences
  AggregateStats f;
  double jf_mean = 0.0;  // (j.mean + f.mean) / 2
};

/// Scores a model checkpoint over every sequence under data_root: predicts
/// each frame with clamped windows, excludes first/last frames from scoring,
/// writes predicted masks and a per-sequence report table under out_dir.
EvalReport evaluate(const std::filesystem::path& ckpt_path,
                    const std::filesystem::path& data_root,
                    const std::filesystem::path& out_dir);

std::string format_report(const EvalReport& report);

}  // namespace tsanet
