// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <iosfwd>
#include <string>

#include "tsanet/tensor.hpp"

namespace tsanet {

struct GradcheckOptions {
  double eps = 1e-5;
  /// Check at most this many elements (all when < 0); elements are chosen
  /// by a seeded draw so large tensors stay tractable.
  int max_elements = -1;
  uint64_t seed = 17;
};

/// Central-difference check of reverse-mode gradients: evaluates
/// (f(x+eps*e) - f(x-eps*e)) / (2*eps) per checked element and compares
/// against backward(). Returns max over elements of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Requires f64 inputs and a deterministic scalar-valued f. Owns the tape
/// for the duration of the call and leaves it reset.
double gradcheck(const std::function<Tensor(const Tensor&)>& f,
                 const Tensor& x, const GradcheckOptions& opt = {});

/// Runs the per-operation gradient suite and prints one line per op.
/// `module_filter` is one of all|taf|sad|encoder. Returns true iff every
/// max relative error is < 1e-4. `inject_fault` deliberately corrupts one
/// analytic gradient to exercise the failure path.
bool run_gradcheck_suite(const std::string& module_filter, uint64_t seed,
                         bool inject_fault, std::ostream& os);

}  // namespace tsanet
