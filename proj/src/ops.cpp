// SPDX-License-Identifier: Apache-2.0
#include "tsanet/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include <Eigen/Core>

namespace {
using EMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using EMutMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
}  // namespace

namespace tsanet {

namespace {

DType promote(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->defined() && t->dtype() == DType::f64) return DType::f64;
  return DType::f32;
}

std::shared_ptr<TensorImpl> make_impl(std::vector<int64_t> shape, DType dt) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  impl->shape = std::move(shape);
  impl->dtype = dt;
  return impl;
}

/// Quantizes f32 outputs, propagates requires_grad and registers the
/// backward closure. `grad_inputs` holds only the inputs that require grad.
Tensor finish(std::shared_ptr<TensorImpl> out,
              std::vector<std::shared_ptr<TensorImpl>> grad_inputs,
              std::function<void()> bwd) {
  if (out->dtype == DType::f32)
    for (double& v : out->data) v = quantize(v, DType::f32);
  bool rg = Tape::instance().enabled() && !grad_inputs.empty();
  out->requires_grad = rg;
  if (rg) {
    out->from_op = true;
    auto touched = std::move(grad_inputs);
    touched.push_back(out);
    Tape::instance().record(std::move(touched), std::move(bwd));
  }
  return wrap_impl(std::move(out));
}

// Right-aligned 4-axis view of an equal-rank broadcast pair.
struct Bcast {
  std::array<int64_t, 4> ext{1, 1, 1, 1};
  std::array<int64_t, 4> sa{0, 0, 0, 0};
  std::array<int64_t, 4> sb{0, 0, 0, 0};
  int64_t n = 1;
};

Bcast bcast_plan(const char* op, const std::vector<int64_t>& a,
                 const std::vector<int64_t>& b) {
  if (a.size() != b.size())
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
  Bcast p;
  int off = static_cast<int>(4 - a.size());
  std::array<int64_t, 4> ea{1, 1, 1, 1}, eb{1, 1, 1, 1};
  for (size_t i = 0; i < a.size(); ++i) {
    ea[off + i] = a[i];
    eb[off + i] = b[i];
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
      throw ShapeError(std::string(op) + ": incompatible extents on axis " +
                       std::to_string(i) + ": " + shape_str(a) + " vs " +
                       shape_str(b));
    p.ext[off + i] = std::max(a[i], b[i]);
  }
  int64_t stra = 1, strb = 1;
  for (int i = 3; i >= 0; --i) {
    p.sa[i] = (ea[i] == 1 && p.ext[i] > 1) ? 0 : stra;
    p.sb[i] = (eb[i] == 1 && p.ext[i] > 1) ? 0 : strb;
    stra *= ea[i];
    strb *= eb[i];
  }
  p.n = p.ext[0] * p.ext[1] * p.ext[2] * p.ext[3];
  return p;
}

std::vector<int64_t> bcast_shape(const Bcast& p, size_t rank) {
  std::vector<int64_t> s(rank);
  for (size_t i = 0; i < rank; ++i) s[i] = p.ext[4 - rank + i];
  return s;
}

template <class Fn>
void bcast_for_each(const Bcast& p, Fn&& fn) {
  int64_t o = 0;
  for (int64_t i0 = 0; i0 < p.ext[0]; ++i0)
    for (int64_t i1 = 0; i1 < p.ext[1]; ++i1)
      for (int64_t i2 = 0; i2 < p.ext[2]; ++i2)
        for (int64_t i3 = 0; i3 < p.ext[3]; ++i3) {
          int64_t oa = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2] + i3 * p.sa[3];
          int64_t ob = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2] + i3 * p.sb[3];
          fn(o++, oa, ob);
        }
}

std::vector<std::shared_ptr<TensorImpl>> grad_inputs_of(
    std::initializer_list<const Tensor*> ts) {
  std::vector<std::shared_ptr<TensorImpl>> out;
  for (const Tensor* t : ts)
    if (t->defined() && t->requires_grad()) out.push_back(t->impl());
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Bcast p = bcast_plan("add", a.shape(), b.shape());
  auto out = make_impl(bcast_shape(p, a.shape().size()), promote({&a, &b}));
  const auto ai = a.impl();
  const auto bi = b.impl();
  bcast_for_each(p, [&](int64_t o, int64_t oa, int64_t ob) {
    out->data[o] = ai->data[oa] + bi->data[ob];
  });
  auto oi = out;
  return finish(out, grad_inputs_of({&a, &b}), [ai, bi, oi, p]() {
    bcast_for_each(p, [&](int64_t o, int64_t oa, int64_t ob) {
      double g = oi->grad[o];
      if (ai->requires_grad) ai->grad[oa] += g;
      if (bi->requires_grad) bi->grad[ob] += g;
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Bcast p = bcast_plan("sub", a.shape(), b.shape());
  auto out = make_impl(bcast_shape(p, a.shape().size()), promote({&a, &b}));
  const auto ai = a.impl();
  const auto bi = b.impl();
  bcast_for_each(p, [&](int64_t o, int64_t oa, int64_t ob) {
    out->data[o] = ai->data[oa] - bi->data[ob];
  });
  auto oi = out;
  return finish(out, grad_inputs_of({&a, &b}), [ai, bi, oi, p]() {
    bcast_for_each(p, [&](int64_t o, int64_t oa, int64_t ob) {
      double g = oi->grad[o];
      if (ai->requires_grad) ai->grad[oa] += g;
      if (bi->requires_grad) bi->grad[ob] -= g;
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Bcast p = bcast_plan("mul", a.shape(), b.shape());
  auto out = make_impl(bcast_shape(p, a.shape().size()), promote({&a, &b}));
  const auto ai = a.impl();
  const auto bi = b.impl();
  bcast_for_each(p, [&](int64_t o, int64_t oa, int64_t ob) {
    out->data[o] = ai->data[oa] * bi->data[ob];
  });
  auto oi = out;
  return finish(out, grad_inputs_of({&a, &b}), [ai, bi, oi, p]() {
    bcast_for_each(p, [&](int64_t o, int64_t oa, int64_t ob) {
      double g = oi->grad[o];
      if (ai->requires_grad) ai->grad[oa] += g * bi->data[ob];
      if (bi->requires_grad) bi->grad[ob] += g * ai->data[oa];
    });
  });
}

Tensor scale(const Tensor& a, double s) {
  auto out = make_impl(a.shape(), a.dtype());
  const auto ai = a.impl();
  for (size_t i = 0; i < ai->data.size(); ++i) out->data[i] = ai->data[i] * s;
  auto oi = out;
  return finish(out, grad_inputs_of({&a}), [ai, oi, s]() {
    for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i] * s;
  });
}

Tensor relu(const Tensor& a) {
  auto out = make_impl(a.shape(), a.dtype());
  const auto ai = a.impl();
  for (size_t i = 0; i < ai->data.size(); ++i)
    out->data[i] = ai->data[i] > 0.0 ? ai->data[i] : 0.0;
  auto oi = out;
  return finish(out, grad_inputs_of({&a}), [ai, oi]() {
    for (size_t i = 0; i < ai->grad.size(); ++i)
      if (ai->data[i] > 0.0) ai->grad[i] += oi->grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  auto out = make_impl(a.shape(), a.dtype());
  const auto ai = a.impl();
  for (size_t i = 0; i < ai->data.size(); ++i) {
    double x = ai->data[i];
    out->data[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
  }
  auto oi = out;
  return finish(out, grad_inputs_of({&a}), [ai, oi]() {
    for (size_t i = 0; i < ai->grad.size(); ++i) {
      double s = oi->data[i];
      ai->grad[i] += oi->grad[i] * s * (1.0 - s);
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ValueError("concat: no inputs");
  const auto& s0 = parts[0].shape();
  size_t rank = s0.size();
  if (axis < 0 || static_cast<size_t>(axis) >= rank)
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  int64_t axis_total = 0;
  DType dt = DType::f32;
  for (const Tensor& t : parts) {
    const auto& s = t.shape();
    if (s.size() != rank)
      throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " +
                       shape_str(s));
    for (size_t i = 0; i < rank; ++i)
      if (static_cast<int>(i) != axis && s[i] != s0[i])
        throw ShapeError("concat: extent mismatch on axis " +
                         std::to_string(i) + ": " + shape_str(s0) + " vs " +
                         shape_str(s));
    axis_total += s[axis];
    if (t.dtype() == DType::f64) dt = DType::f64;
  }
  std::vector<int64_t> oshape = s0;
  oshape[axis] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (size_t i = axis + 1; i < rank; ++i) inner *= s0[i];

  auto out = make_impl(oshape, dt);
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<int64_t> extents;
  for (const Tensor& t : parts) {
    impls.push_back(t.impl());
    extents.push_back(t.shape()[axis]);
  }
  int64_t pos = 0;
  for (size_t k = 0; k < impls.size(); ++k) {
    int64_t e = extents[k];
    for (int64_t ou = 0; ou < outer; ++ou) {
      const double* src = impls[k]->data.data() + ou * e * inner;
      double* dst = out->data.data() + (ou * axis_total + pos) * inner;
      std::copy(src, src + e * inner, dst);
    }
    pos += e;
  }

  std::vector<const Tensor*> refs;
  for (const Tensor& t : parts) refs.push_back(&t);
  std::vector<std::shared_ptr<TensorImpl>> gin;
  for (const Tensor& t : parts)
    if (t.requires_grad()) gin.push_back(t.impl());
  auto oi = out;
  return finish(out, std::move(gin),
                [impls, extents, outer, inner, axis_total, oi]() {
                  int64_t pos = 0;
                  for (size_t k = 0; k < impls.size(); ++k) {
                    int64_t e = extents[k];
                    if (impls[k]->requires_grad) {
                      for (int64_t ou = 0; ou < outer; ++ou) {
                        const double* g =
                            oi->grad.data() + (ou * axis_total + pos) * inner;
                        double* dst = impls[k]->grad.data() + ou * e * inner;
                        for (int64_t i = 0; i < e * inner; ++i) dst[i] += g[i];
                      }
                    }
                    pos += e;
                  }
                });
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  const auto& s = a.shape();
  if (axis < 0 || static_cast<size_t>(axis) >= s.size())
    throw ShapeError("slice: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s));
  if (start < 0 || len < 1 || start + len > s[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") invalid on axis " +
                     std::to_string(axis) + " of " + shape_str(s));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  int64_t e = s[axis];

  std::vector<int64_t> oshape = s;
  oshape[axis] = len;
  auto out = make_impl(oshape, a.dtype());
  const auto ai = a.impl();
  for (int64_t ou = 0; ou < outer; ++ou) {
    const double* src = ai->data.data() + (ou * e + start) * inner;
    std::copy(src, src + len * inner, out->data.data() + ou * len * inner);
  }
  auto oi = out;
  return finish(out, grad_inputs_of({&a}),
                [ai, oi, outer, inner, e, start, len]() {
                  for (int64_t ou = 0; ou < outer; ++ou) {
                    const double* g = oi->grad.data() + ou * len * inner;
                    double* dst = ai->grad.data() + (ou * e + start) * inner;
                    for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                  }
                });
}

Tensor reshape(const Tensor& a, std::vector<int64_t> shape) {
  if (numel_of(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  auto out = make_impl(std::move(shape), a.dtype());
  const auto ai = a.impl();
  out->data = ai->data;
  auto oi = out;
  return finish(out, grad_inputs_of({&a}), [ai, oi]() {
    for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i];
  });
}

Tensor transpose2d(const Tensor& a) {
  const auto& s = a.shape();
  if (s.size() != 2)
    throw ShapeError("transpose2d: expected rank 2, got " + shape_str(s));
  int64_t m = s[0], n = s[1];
  auto out = make_impl({n, m}, a.dtype());
  const auto ai = a.impl();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out->data[j * m + i] = ai->data[i * n + j];
  auto oi = out;
  return finish(out, grad_inputs_of({&a}), [ai, oi, m, n]() {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) ai->grad[i * n + j] += oi->grad[j * m + i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2)
    throw ShapeError("matmul: expected rank-2 inputs, got " + shape_str(sa) +
                     " and " + shape_str(sb));
  if (sa[1] != sb[0])
    throw ShapeError("matmul: inner extents differ on axis 1 of a vs axis 0 "
                     "of b: " +
                     shape_str(sa) + " x " + shape_str(sb));
  int64_t m = sa[0], k = sa[1], p = sb[1];
  auto out = make_impl({m, p}, promote({&a, &b}));
  const auto ai = a.impl();
  const auto bi = b.impl();
  {
    EMap A(ai->data.data(), m, k);
    EMap B(bi->data.data(), k, p);
    EMutMap O(out->data.data(), m, p);
    O.noalias() = A * B;
  }
  auto oi = out;
  return finish(out, grad_inputs_of({&a, &b}), [ai, bi, oi, m, k, p]() {
    EMap A(ai->data.data(), m, k);
    EMap B(bi->data.data(), k, p);
    EMap G(oi->grad.data(), m, p);
    if (ai->requires_grad) {
      EMutMap GA(ai->grad.data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (bi->requires_grad) {
      EMutMap GB(bi->grad.data(), k, p);
      GB.noalias() += A.transpose() * G;
    }
  });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad) {
  const auto& si = input.shape();
  const auto& sw = weight.shape();
  if (si.size() != 4)
    throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(si));
  if (sw.size() != 4)
    throw ShapeError("conv2d: weight must be [Cout,Cin,kh,kw], got " +
                     shape_str(sw));
  if (si[1] != sw[1])
    throw ShapeError("conv2d: input channel axis 1 extent " +
                     std::to_string(si[1]) + " does not match weight axis 1 "
                     "extent " +
                     std::to_string(sw[1]));
  if (sw[2] % 2 == 0 || sw[3] % 2 == 0)
    throw ValueError("conv2d: kernel extents must be odd, got " +
                     shape_str(sw));
  if (pad < 0 || stride < 1)
    throw ValueError("conv2d: pad must be >= 0 and stride >= 1");
  if (bias.defined() &&
      (bias.shape().size() != 1 || bias.shape()[0] != sw[0]))
    throw ShapeError("conv2d: bias axis 0 extent must be " +
                     std::to_string(sw[0]) + ", got " +
                     shape_str(bias.shape()));
  int64_t N = si[0], C = si[1], H = si[2], W = si[3];
  int64_t Co = sw[0], kh = sw[2], kw = sw[3];
  int64_t th = H + 2 * pad - kh, tw = W + 2 * pad - kw;
  if (th < 0 || tw < 0)
    throw ShapeError("conv2d: kernel larger than padded input on spatial "
                     "axes: input " +
                     shape_str(si) + ", kernel " + shape_str(sw) + ", pad " +
                     std::to_string(pad));
  // Positions that do not fit a full stride step are dropped (floor), the
  // standard convention; a stride-2 3x3/pad-1 block then halves even extents.
  int64_t OH = th / stride + 1, OW = tw / stride + 1;

  auto out =
      make_impl({N, Co, OH, OW},
                bias.defined() ? promote({&input, &weight, &bias})
                               : promote({&input, &weight}));
  const auto xi = input.impl();
  const auto wi = weight.impl();
  const auto bi = bias.defined() ? bias.impl() : nullptr;
  {
    const double* X = xi->data.data();
    const double* Wt = wi->data.data();
    double* O = out->data.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t co = 0; co < Co; ++co) {
        for (int64_t oy = 0; oy < OH; ++oy) {
          for (int64_t ox = 0; ox < OW; ++ox) {
            double acc = bi ? bi->data[co] : 0.0;
            for (int64_t ci = 0; ci < C; ++ci) {
              for (int64_t ky = 0; ky < kh; ++ky) {
                int64_t iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                for (int64_t kx = 0; kx < kw; ++kx) {
                  int64_t ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= W) continue;
                  acc += X[((n * C + ci) * H + iy) * W + ix] *
                         Wt[((co * C + ci) * kh + ky) * kw + kx];
                }
              }
            }
            O[((n * Co + co) * OH + oy) * OW + ox] = acc;
          }
        }
      }
    }
  }
  auto oi = out;
  std::vector<std::shared_ptr<TensorImpl>> gin =
      bias.defined() ? grad_inputs_of({&input, &weight, &bias})
                     : grad_inputs_of({&input, &weight});
  return finish(out, std::move(gin),
                [xi, wi, bi, oi, N, C, H, W, Co, kh, kw, OH, OW, stride,
                 pad]() {
    const double* X = xi->data.data();
    const double* Wt = wi->data.data();
    const double* G = oi->grad.data();
    if (wi->requires_grad) {
      double* GW = wi->grad.data();
#pragma omp parallel for schedule(static)
      for (int64_t co = 0; co < Co; ++co) {
        for (int64_t ci = 0; ci < C; ++ci) {
          for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
              double acc = 0.0;
              for (int64_t n = 0; n < N; ++n) {
                for (int64_t oy = 0; oy < OH; ++oy) {
                  int64_t iy = oy * stride - pad + ky;
                  if (iy < 0 || iy >= H) continue;
                  for (int64_t ox = 0; ox < OW; ++ox) {
                    int64_t ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= W) continue;
                    acc += G[((n * Co + co) * OH + oy) * OW + ox] *
                           X[((n * C + ci) * H + iy) * W + ix];
                  }
                }
              }
              GW[((co * C + ci) * kh + ky) * kw + kx] += acc;
            }
          }
        }
      }
    }
    if (bi && bi->requires_grad) {
      for (int64_t co = 0; co < Co; ++co) {
        double acc = 0.0;
        for (int64_t n = 0; n < N; ++n)
          for (int64_t oy = 0; oy < OH; ++oy)
            for (int64_t ox = 0; ox < OW; ++ox)
              acc += G[((n * Co + co) * OH + oy) * OW + ox];
        bi->grad[co] += acc;
      }
    }
    if (xi->requires_grad) {
      double* GX = xi->grad.data();
#pragma omp parallel for collapse(2) schedule(static)
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t ci = 0; ci < C; ++ci) {
          for (int64_t iy = 0; iy < H; ++iy) {
            for (int64_t ix = 0; ix < W; ++ix) {
              double acc = 0.0;
              for (int64_t ky = 0; ky < kh; ++ky) {
                int64_t ty = iy + pad - ky;
                if (ty < 0 || ty % stride != 0) continue;
                int64_t oy = ty / stride;
                if (oy >= OH) continue;
                for (int64_t kx = 0; kx < kw; ++kx) {
                  int64_t tx = ix + pad - kx;
                  if (tx < 0 || tx % stride != 0) continue;
                  int64_t ox = tx / stride;
                  if (ox >= OW) continue;
                  for (int64_t co = 0; co < Co; ++co)
                    acc += G[((n * Co + co) * OH + oy) * OW + ox] *
                           Wt[((co * C + ci) * kh + ky) * kw + kx];
                }
              }
              GX[((n * C + ci) * H + iy) * W + ix] += acc;
            }
          }
        }
      }
    }
  });
}

Tensor grid_sample_bilinear(const Tensor& input, const Tensor& points) {
  const auto& si = input.shape();
  const auto& sp = points.shape();
  if (si.size() != 4)
    throw ShapeError("grid_sample_bilinear: input must be [N,C,H,W], got " +
                     shape_str(si));
  if (sp.size() != 3 || sp[2] != 2)
    throw ShapeError("grid_sample_bilinear: points must be [N,P,2], got " +
                     shape_str(sp));
  if (sp[0] != si[0])
    throw ShapeError("grid_sample_bilinear: batch axis 0 mismatch: " +
                     shape_str(si) + " vs " + shape_str(sp));
  int64_t N = si[0], C = si[1], H = si[2], W = si[3], P = sp[1];
  auto out = make_impl({N, C, P}, promote({&input, &points}));
  const auto xi = input.impl();
  const auto pi = points.impl();

  auto corner = [&](const double* X, int64_t n, int64_t c, int64_t y,
                    int64_t x) -> double {
    if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
    return X[((n * C + c) * H + y) * W + x];
  };

  {
    const double* X = xi->data.data();
    double* O = out->data.data();
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t p = 0; p < P; ++p) {
        double x = pi->data[(n * P + p) * 2 + 0];
        double y = pi->data[(n * P + p) * 2 + 1];
        int64_t x0 = static_cast<int64_t>(std::floor(x));
        int64_t y0 = static_cast<int64_t>(std::floor(y));
        double fx = x - static_cast<double>(x0);
        double fy = y - static_cast<double>(y0);
        double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
        double w01 = (1 - fx) * fy, w11 = fx * fy;
        for (int64_t c = 0; c < C; ++c) {
          double v = w00 * corner(X, n, c, y0, x0) +
                     w10 * corner(X, n, c, y0, x0 + 1) +
                     w01 * corner(X, n, c, y0 + 1, x0) +
                     w11 * corner(X, n, c, y0 + 1, x0 + 1);
          O[(n * C + c) * P + p] = v;
        }
      }
    }
  }
  auto oi = out;
  return finish(out, grad_inputs_of({&input, &points}),
                [xi, pi, oi, N, C, H, W, P]() {
    const double* X = xi->data.data();
    const double* G = oi->grad.data();
    auto corner = [&](const double* buf, int64_t n, int64_t c, int64_t y,
                      int64_t x) -> double {
      if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
      return buf[((n * C + c) * H + y) * W + x];
    };
    auto scatter = [&](int64_t n, int64_t c, int64_t y, int64_t x, double v) {
      if (y < 0 || y >= H || x < 0 || x >= W) return;
      xi->grad[((n * C + c) * H + y) * W + x] += v;
    };
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t p = 0; p < P; ++p) {
        double x = pi->data[(n * P + p) * 2 + 0];
        double y = pi->data[(n * P + p) * 2 + 1];
        int64_t x0 = static_cast<int64_t>(std::floor(x));
        int64_t y0 = static_cast<int64_t>(std::floor(y));
        double fx = x - static_cast<double>(x0);
        double fy = y - static_cast<double>(y0);
        double gx = 0.0, gy = 0.0;
        for (int64_t c = 0; c < C; ++c) {
          double g = G[(n * C + c) * P + p];
          if (xi->requires_grad) {
            scatter(n, c, y0, x0, g * (1 - fx) * (1 - fy));
            scatter(n, c, y0, x0 + 1, g * fx * (1 - fy));
            scatter(n, c, y0 + 1, x0, g * (1 - fx) * fy);
            scatter(n, c, y0 + 1, x0 + 1, g * fx * fy);
          }
          if (pi->requires_grad) {
            double v00 = corner(X, n, c, y0, x0);
            double v10 = corner(X, n, c, y0, x0 + 1);
            double v01 = corner(X, n, c, y0 + 1, x0);
            double v11 = corner(X, n, c, y0 + 1, x0 + 1);
            gx += g * ((v10 - v00) * (1 - fy) + (v11 - v01) * fy);
            gy += g * ((v01 - v00) * (1 - fx) + (v11 - v10) * fx);
          }
        }
        if (pi->requires_grad) {
          pi->grad[(n * P + p) * 2 + 0] += gx;
          pi->grad[(n * P + p) * 2 + 1] += gy;
        }
      }
    }
  });
}

Tensor gather_pixels(const Tensor& feat, const std::vector<int64_t>& rows,
                     const std::vector<int64_t>& cols) {
  const auto& s = feat.shape();
  if (s.size() != 3)
    throw ShapeError("gather_pixels: feat must be [C,H,W], got " +
                     shape_str(s));
  if (rows.size() != cols.size())
    throw ValueError("gather_pixels: rows/cols length mismatch");
  int64_t C = s[0], H = s[1], W = s[2];
  int64_t P = static_cast<int64_t>(rows.size());
  for (int64_t p = 0; p < P; ++p)
    if (rows[p] < 0 || rows[p] >= H || cols[p] < 0 || cols[p] >= W)
      throw ValueError("gather_pixels: cell index out of range at point " +
                       std::to_string(p));
  auto out = make_impl({P, C}, feat.dtype());
  const auto fi = feat.impl();
  for (int64_t p = 0; p < P; ++p)
    for (int64_t c = 0; c < C; ++c)
      out->data[p * C + c] = fi->data[(c * H + rows[p]) * W + cols[p]];
  auto oi = out;
  return finish(out, grad_inputs_of({&feat}), [fi, oi, rows, cols, C, H, W]() {
    int64_t P = static_cast<int64_t>(rows.size());
    for (int64_t p = 0; p < P; ++p)
      for (int64_t c = 0; c < C; ++c)
        fi->grad[(c * H + rows[p]) * W + cols[p]] += oi->grad[p * C + c];
  });
}

Tensor sum(const Tensor& a) {
  auto out = make_impl({1}, a.dtype());
  const auto ai = a.impl();
  double acc = 0.0;
  for (double v : ai->data) acc += v;
  out->data[0] = acc;
  auto oi = out;
  return finish(out, grad_inputs_of({&a}), [ai, oi]() {
    double g = oi->grad[0];
    for (double& gv : ai->grad) gv += g;
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& target) {
  const auto& sl = logits.shape();
  const auto& st = target.shape();
  if (sl.size() != 4 || sl[1] != 2)
    throw ShapeError("softmax_cross_entropy: logits must be [N,2,H,W], got " +
                     shape_str(sl));
  if (st.size() != 3 || st[0] != sl[0] || st[1] != sl[2] || st[2] != sl[3])
    throw ShapeError("softmax_cross_entropy: target must be [N,H,W] matching "
                     "logits, got " +
                     shape_str(st) + " vs logits " + shape_str(sl));
  const auto ti = target.impl();
  for (double v : ti->data)
    if (v != 0.0 && v != 1.0)
      throw ValueError("softmax_cross_entropy: target values must be 0 or 1");

  int64_t N = sl[0], H = sl[2], W = sl[3];
  int64_t pixels = N * H * W;
  const auto li = logits.impl();
  auto out = make_impl({1}, logits.dtype());
  double acc = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        double l0 = li->data[((n * 2 + 0) * H + y) * W + x];
        double l1 = li->data[((n * 2 + 1) * H + y) * W + x];
        double m = std::max(l0, l1);
        double z = std::exp(l0 - m) + std::exp(l1 - m);
        int t = ti->data[(n * H + y) * W + x] != 0.0 ? 1 : 0;
        double lt = t == 1 ? l1 : l0;
        acc += -(lt - m - std::log(z));
      }
    }
  }
  out->data[0] = acc / static_cast<double>(pixels);
  auto oi = out;
  return finish(out, grad_inputs_of({&logits}), [li, ti, oi, N, H, W,
                                                 pixels]() {
    double g = oi->grad[0] / static_cast<double>(pixels);
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
          double l0 = li->data[((n * 2 + 0) * H + y) * W + x];
          double l1 = li->data[((n * 2 + 1) * H + y) * W + x];
          double m = std::max(l0, l1);
          double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
          double z = e0 + e1;
          int t = ti->data[(n * H + y) * W + x] != 0.0 ? 1 : 0;
          li->grad[((n * 2 + 0) * H + y) * W + x] +=
              g * (e0 / z - (t == 0 ? 1.0 : 0.0));
          li->grad[((n * 2 + 1) * H + y) * W + x] +=
              g * (e1 / z - (t == 1 ? 1.0 : 0.0));
        }
      }
    }
  });
}

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  const auto& s = x.shape();
  if (s.size() != 4)
    throw ShapeError("upsample_bilinear: input must be [N,C,H,W], got " +
                     shape_str(s));
  if (out_h < 1 || out_w < 1)
    throw ValueError("upsample_bilinear: output extents must be >= 1");
  int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  int64_t OH = out_h, OW = out_w;
  auto out = make_impl({N, C, OH, OW}, x.dtype());
  const auto xi = x.impl();

  // Half-pixel source coordinates, clamped to the border.
  std::vector<int64_t> x0s(OW), x1s(OW), y0s(OH), y1s(OH);
  std::vector<double> fxs(OW), fys(OH);
  for (int64_t ox = 0; ox < OW; ++ox) {
    double sx = (static_cast<double>(ox) + 0.5) * static_cast<double>(W) /
                    static_cast<double>(OW) -
                0.5;
    sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
    int64_t x0 = static_cast<int64_t>(std::floor(sx));
    x0 = std::min(x0, W - 1);
    x0s[ox] = x0;
    x1s[ox] = std::min(x0 + 1, W - 1);
    fxs[ox] = sx - static_cast<double>(x0);
  }
  for (int64_t oy = 0; oy < OH; ++oy) {
    double sy = (static_cast<double>(oy) + 0.5) * static_cast<double>(H) /
                    static_cast<double>(OH) -
                0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
    int64_t y0 = static_cast<int64_t>(std::floor(sy));
    y0 = std::min(y0, H - 1);
    y0s[oy] = y0;
    y1s[oy] = std::min(y0 + 1, H - 1);
    fys[oy] = sy - static_cast<double>(y0);
  }

  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const double* plane = xi->data.data() + (n * C + c) * H * W;
      double* oplane = out->data.data() + (n * C + c) * OH * OW;
      for (int64_t oy = 0; oy < OH; ++oy) {
        for (int64_t ox = 0; ox < OW; ++ox) {
          double fy = fys[oy], fx = fxs[ox];
          double v = (1 - fy) * ((1 - fx) * plane[y0s[oy] * W + x0s[ox]] +
                                 fx * plane[y0s[oy] * W + x1s[ox]]) +
                     fy * ((1 - fx) * plane[y1s[oy] * W + x0s[ox]] +
                           fx * plane[y1s[oy] * W + x1s[ox]]);
          oplane[oy * OW + ox] = v;
        }
      }
    }
  }
  auto oi = out;
  return finish(out, grad_inputs_of({&x}),
                [xi, oi, N, C, H, W, OH, OW, x0s, x1s, y0s, y1s, fxs, fys]() {
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        double* gplane = xi->grad.data() + (n * C + c) * H * W;
        const double* g = oi->grad.data() + (n * C + c) * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
          for (int64_t ox = 0; ox < OW; ++ox) {
            double fy = fys[oy], fx = fxs[ox];
            double gv = g[oy * OW + ox];
            gplane[y0s[oy] * W + x0s[ox]] += gv * (1 - fy) * (1 - fx);
            gplane[y0s[oy] * W + x1s[ox]] += gv * (1 - fy) * fx;
            gplane[y1s[oy] * W + x0s[ox]] += gv * fy * (1 - fx);
            gplane[y1s[oy] * W + x1s[ox]] += gv * fy * fx;
          }
        }
      }
    }
  });
}

Tensor positional_embed(const Tensor& r, int n_freq) {
  const auto& s = r.shape();
  if (s.size() != 2 || s[1] != 2)
    throw ShapeError("positional_embed: expected [P,2], got " + shape_str(s));
  if (n_freq < 1) throw ValueError("positional_embed: n_freq must be >= 1");
  int64_t P = s[0];
  int64_t width = 2 + 4 * static_cast<int64_t>(n_freq);
  auto out = make_impl({P, width}, r.dtype());
  const auto ri = r.impl();
  for (int64_t p = 0; p < P; ++p) {
    double rx = ri->data[p * 2 + 0];
    double ry = ri->data[p * 2 + 1];
    double* row = out->data.data() + p * width;
    row[0] = rx;
    row[1] = ry;
    for (int j = 0; j < n_freq; ++j) {
      double f = std::ldexp(M_PI, j);  // 2^j * pi
      row[2 + 4 * j + 0] = std::sin(f * rx);
      row[2 + 4 * j + 1] = std::cos(f * rx);
      row[2 + 4 * j + 2] = std::sin(f * ry);
      row[2 + 4 * j + 3] = std::cos(f * ry);
    }
  }
  auto oi = out;
  return finish(out, grad_inputs_of({&r}), [ri, oi, P, width, n_freq]() {
    for (int64_t p = 0; p < P; ++p) {
      double rx = ri->data[p * 2 + 0];
      double ry = ri->data[p * 2 + 1];
      const double* g = oi->grad.data() + p * width;
      double gx = g[0], gy = g[1];
      for (int j = 0; j < n_freq; ++j) {
        double f = std::ldexp(M_PI, j);
        gx += g[2 + 4 * j + 0] * f * std::cos(f * rx);
        gx -= g[2 + 4 * j + 1] * f * std::sin(f * rx);
        gy += g[2 + 4 * j + 2] * f * std::cos(f * ry);
        gy -= g[2 + 4 * j + 3] * f * std::sin(f * ry);
      }
      ri->grad[p * 2 + 0] += gx;
      ri->grad[p * 2 + 1] += gy;
    }
  });
}

}  // namespace tsanet
