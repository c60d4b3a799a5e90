// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tsanet/common.hpp"

namespace tsanet {

/// Element type of a tensor. Data is always held in doubles; f32 tensors
/// round every produced value through IEEE binary32, which gives exact
/// 32-bit storage semantics while all accumulation stays in 64-bit.
enum class DType { f32, f64 };

inline double quantize(double v, DType dt) {
  return dt == DType::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

struct TensorImpl {
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated by Tape::backward when needed
  DType dtype = DType::f32;
  bool requires_grad = false;
  bool from_op = false;  // true when produced by a recorded operation
};

/// Dense row-major tensor (1..4 axes). Value handle with shared storage;
/// immutable after creation except for the grad buffer, which is owned by
/// the tape that populates it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, DType dt = DType::f32,
                      bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value,
                     DType dt = DType::f32, bool requires_grad = false);
  static Tensor from_data(std::vector<int64_t> shape, std::vector<double> values,
                          DType dt = DType::f32, bool requires_grad = false);
  /// Elements drawn i.i.d. uniform in [lo, hi).
  static Tensor uniform(std::vector<int64_t> shape, Rng& rng, double lo,
                        double hi, DType dt = DType::f32,
                        bool requires_grad = false);
  /// Elements drawn i.i.d. normal(0, stddev).
  static Tensor normal(std::vector<int64_t> shape, Rng& rng, double stddev,
                       DType dt = DType::f32, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const;
  int64_t dim() const { return static_cast<int64_t>(shape().size()); }
  int64_t extent(int axis) const { return shape().at(axis); }
  int64_t numel() const;
  DType dtype() const;
  bool requires_grad() const;

  std::span<const double> data() const;
  std::span<const double> grad() const;  // empty until backward populates it

  double item() const;  // single-element tensors only
  double at(std::initializer_list<int64_t> idx) const;

  /// Same values, different dtype (re-quantized); drops grad tracking.
  Tensor astype(DType dt) const;
  /// Deep copy of data; optionally a fresh grad-tracked leaf.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor wrap_impl(std::shared_ptr<TensorImpl>);
  std::shared_ptr<TensorImpl> impl_;
};

Tensor wrap_impl(std::shared_ptr<TensorImpl> impl);

/// Reverse-mode tape. Records one backward closure per executed operation
/// in forward order; backward() replays them once, in reverse.
class Tape {
 public:
  static Tape& instance();

  bool enabled() const { return enabled_; }
  void set_enabled(bool e) { enabled_ = e; }

  /// Register an executed op. `touched` lists every impl whose grad buffer
  /// backward() must allocate and zero (the output plus grad-requiring
  /// inputs); `fn` propagates output grad to input grads.
  void record(std::vector<std::shared_ptr<TensorImpl>> touched,
              std::function<void()> fn);

  /// Populates grad on every grad-requiring tensor reachable from `loss`.
  /// The loss must be a scalar produced by recorded operations. A second
  /// call without reset() is an error.
  void backward(const Tensor& loss);

  /// Drops all recorded entries and re-arms backward().
  void reset();

  size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::vector<std::shared_ptr<TensorImpl>> touched;
    std::function<void()> fn;
  };
  std::vector<Entry> entries_;
  bool enabled_ = true;
  bool used_ = false;
};

/// Scoped guard that suspends tape recording.
struct NoGradGuard {
  NoGradGuard() : prev_(Tape::instance().enabled()) {
    Tape::instance().set_enabled(false);
  }
  ~NoGradGuard() { Tape::instance().set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

std::string shape_str(const std::vector<int64_t>& shape);
int64_t numel_of(const std::vector<int64_t>& shape);

}  // namespace tsanet
