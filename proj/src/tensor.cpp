// SPDX-License-Identifier: Apache-2.0
#include "tsanet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace tsanet {

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

static void validate_shape(const std::vector<int64_t>& shape) {
  if (shape.empty() || shape.size() > 4)
    throw ShapeError("tensor rank must be 1..4, got shape " + shape_str(shape));
  for (int64_t e : shape)
    if (e < 1)
      throw ShapeError("tensor extents must be >= 1, got shape " +
                       shape_str(shape));
}

Tensor wrap_impl(std::shared_ptr<TensorImpl> impl) {
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(std::vector<int64_t> shape, DType dt, bool requires_grad) {
  validate_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  impl->shape = std::move(shape);
  impl->dtype = dt;
  impl->requires_grad = requires_grad;
  return wrap_impl(std::move(impl));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, DType dt,
                    bool requires_grad) {
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  double v = quantize(value, dt);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), v);
  return t;
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> values,
                         DType dt, bool requires_grad) {
  validate_shape(shape);
  if (static_cast<int64_t>(values.size()) != numel_of(shape))
    throw ShapeError("from_data: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->dtype = dt;
  impl->requires_grad = requires_grad;
  if (dt == DType::f32)
    for (double& v : impl->data) v = quantize(v, DType::f32);
  return wrap_impl(std::move(impl));
}

Tensor Tensor::uniform(std::vector<int64_t> shape, Rng& rng, double lo,
                       double hi, DType dt, bool requires_grad) {
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  for (double& v : t.impl_->data) v = quantize(rng.uniform(lo, hi), dt);
  return t;
}

Tensor Tensor::normal(std::vector<int64_t> shape, Rng& rng, double stddev,
                      DType dt, bool requires_grad) {
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  for (double& v : t.impl_->data) v = quantize(rng.normal() * stddev, dt);
  return t;
}

const std::vector<int64_t>& Tensor::shape() const {
  if (!impl_) throw UsageError("shape() on undefined tensor");
  return impl_->shape;
}

int64_t Tensor::numel() const {
  return static_cast<int64_t>(impl_ ? impl_->data.size() : 0);
}

DType Tensor::dtype() const {
  if (!impl_) throw UsageError("dtype() on undefined tensor");
  return impl_->dtype;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw UsageError("data() on undefined tensor");
  return impl_->data;
}

std::span<const double> Tensor::grad() const {
  if (!impl_) throw UsageError("grad() on undefined tensor");
  return impl_->grad;
}

double Tensor::item() const {
  if (numel() != 1)
    throw UsageError("item() requires a single-element tensor, shape " +
                     shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const auto& s = shape();
  if (idx.size() != s.size())
    throw UsageError("at(): " + std::to_string(idx.size()) +
                     " indices for shape " + shape_str(s));
  int64_t off = 0;
  size_t axis = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= s[axis])
      throw UsageError("at(): index " + std::to_string(i) +
                       " out of range on axis " + std::to_string(axis));
    off = off * s[axis] + i;
    ++axis;
  }
  return impl_->data[static_cast<size_t>(off)];
}

Tensor Tensor::astype(DType dt) const {
  std::vector<double> vals(impl_->data);
  return from_data(impl_->shape, std::move(vals), dt, false);
}

Tensor Tensor::clone(bool requires_grad) const {
  std::vector<double> vals(impl_->data);
  return from_data(impl_->shape, std::move(vals), impl_->dtype, requires_grad);
}

Tape& Tape::instance() {
  static Tape tape;
  return tape;
}

void Tape::record(std::vector<std::shared_ptr<TensorImpl>> touched,
                  std::function<void()> fn) {
  entries_.push_back(Entry{std::move(touched), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (used_)
    throw UsageError("backward() called twice; reset the tape first");
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward() requires a scalar loss");
  const TensorImpl* target = loss.impl().get();
  bool recorded = false;
  for (const auto& e : entries_) {
    for (const auto& t : e.touched) {
      if (t.get() == target) {
        recorded = true;
        break;
      }
    }
    if (recorded) break;
  }
  if (!recorded)
    throw UsageError(
        "backward() loss was not produced by tape-recorded operations");

  std::unordered_set<TensorImpl*> prepared;
  for (auto& e : entries_) {
    for (auto& t : e.touched) {
      if (prepared.insert(t.get()).second)
        t->grad.assign(t->data.size(), 0.0);
    }
  }
  loss.impl()->grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->fn();
  used_ = true;
}

void Tape::reset() {
  entries_.clear();
  used_ = false;
}

}  // namespace tsanet
