#pragma once

// Convolution, transposed convolution, pooling, and the cross-entropy head.
// Convolutions run as im2col + dense GEMM; patch rows are ordered
// (ky, kx, c_in) to match the (KH, KW, Cin, Cout) weight layout.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <vector>

#include "normkit/autograd.hpp"
#include "normkit/tensor.hpp"

namespace normkit {

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

template <typename T>
std::vector<T>& conv_scratch(int which) {
  thread_local std::vector<T> bufs[2];
  return bufs[which];
}

// Same-padding patch gather for odd square kernels, stride 1.
template <typename T>
void im2col(const Tensor<T>& x, int64_t k, std::vector<T>& cols) {
  const Shape& s = x.shape();
  const int64_t pad = k / 2;
  const int64_t patch = k * k * s.c;
  cols.assign(static_cast<size_t>(s.n * s.h * s.w * patch), T(0));
  const T* xd = x.data().data();
  int64_t r = 0;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t xw = 0; xw < s.w; ++xw, ++r) {
        T* dst = cols.data() + r * patch;
        for (int64_t dy = 0; dy < k; ++dy) {
          const int64_t sy = y + dy - pad;
          if (sy < 0 || sy >= s.h) {
            dst += k * s.c;
            continue;
          }
          for (int64_t dx = 0; dx < k; ++dx) {
            const int64_t sx = xw + dx - pad;
            if (sx >= 0 && sx < s.w) {
              const T* src = xd + ((n * s.h + sy) * s.w + sx) * s.c;
              std::copy(src, src + s.c, dst);
            }
            dst += s.c;
          }
        }
      }
}

// Adjoint of im2col: scatter-add patch gradients back onto the input grid.
template <typename T>
void col2im_add(const std::vector<T>& cols, int64_t k, const Shape& s, std::vector<T>& dx) {
  const int64_t pad = k / 2;
  const int64_t patch = k * k * s.c;
  int64_t r = 0;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t xw = 0; xw < s.w; ++xw, ++r) {
        const T* src = cols.data() + r * patch;
        for (int64_t dy = 0; dy < k; ++dy) {
          const int64_t sy = y + dy - pad;
          if (sy < 0 || sy >= s.h) {
            src += k * s.c;
            continue;
          }
          for (int64_t dx = 0; dx < k; ++dx) {
            const int64_t sx = xw + dx - pad;
            if (sx >= 0 && sx < s.w) {
              T* dst = dx.data() + ((n * s.h + sy) * s.w + sx) * s.c;
              for (int64_t c = 0; c < s.c; ++c) dst[c] += src[c];
            }
            src += s.c;
          }
        }
      }
}

}  // namespace detail

// Same-padding convolution, stride 1, odd square kernel.
// x: (N,H,W,Cin), w: (K,K,Cin,Cout), b: (1,1,1,Cout) -> (N,H,W,Cout).
template <typename T>
VarPtr<T> conv2d(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b, int64_t stride = 1) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  if (stride != 1) throw ValueError("conv2d: only stride 1 is supported");
  if (ws.n != ws.h || ws.n % 2 == 0)
    throw ShapeError("conv2d: kernel must be square with odd extent, got " + ws.str());
  if (ws.w != xs.c) {
    std::ostringstream os;
    os << "conv2d: input has " << xs.c << " channels but weights expect " << ws.w;
    throw ShapeError(os.str());
  }
  if (!(b->value.shape() == Shape(1, 1, 1, ws.c)))
    detail::throw_shape_mismatch("conv2d bias", Shape(1, 1, 1, ws.c), b->value.shape());

  const int64_t k = ws.n, cout = ws.c;
  const int64_t patch = k * k * xs.c;
  const int64_t rows = xs.n * xs.h * xs.w;

  auto& cols = detail::conv_scratch<T>(0);
  detail::im2col(x->value, k, cols);
  std::vector<T> out(static_cast<size_t>(rows * cout));
  {
    detail::CMapM<T> pm(cols.data(), rows, patch);
    detail::CMapM<T> wm(w->value.data().data(), patch, cout);
    detail::MapM<T> om(out.data(), rows, cout);
    om.noalias() = pm * wm;
  }
  const T* bias = b->value.data().data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t co = 0; co < cout; ++co) out[r * cout + co] += bias[co];

  return make_op<T>(Tensor<T>(Shape(xs.n, xs.h, xs.w, cout), std::move(out)), {x, w, b},
                    [k](Node<T>& self) {
                      auto& px = *self.parents[0];
                      auto& pw = *self.parents[1];
                      auto& pb = *self.parents[2];
                      const Shape& xs = px.value.shape();
                      const int64_t cout = pw.value.shape().c;
                      const int64_t patch = k * k * xs.c;
                      const int64_t rows = xs.n * xs.h * xs.w;
                      detail::CMapM<T> gm(self.grad.data(), rows, cout);
                      if (pb.requires_grad) {
                        auto& db = pb.grad_buf();
                        for (int64_t r = 0; r < rows; ++r)
                          for (int64_t co = 0; co < cout; ++co) db[co] += self.grad[r * cout + co];
                      }
                      if (pw.requires_grad) {
                        auto& cols = detail::conv_scratch<T>(0);
                        detail::im2col(px.value, k, cols);
                        detail::CMapM<T> pm(cols.data(), rows, patch);
                        detail::MapM<T> dwm(pw.grad_buf().data(), patch, cout);
                        dwm.noalias() += pm.transpose() * gm;
                      }
                      if (px.requires_grad) {
                        auto& dcols = detail::conv_scratch<T>(1);
                        dcols.assign(static_cast<size_t>(rows * patch), T(0));
                        detail::CMapM<T> wm(pw.value.data().data(), patch, cout);
                        detail::MapM<T> dpm(dcols.data(), rows, patch);
                        dpm.noalias() = gm * wm.transpose();
                        detail::col2im_add(dcols, k, xs, px.grad_buf());
                      }
                    });
}

// Learned 2x up-convolution: 2x2 kernel, stride 2.
// x: (N,H,W,Cin), w: (2,2,Cin,Cout), b: (1,1,1,Cout) -> (N,2H,2W,Cout).
template <typename T>
VarPtr<T> conv_transpose2(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  if (ws.n != 2 || ws.h != 2)
    throw ShapeError("conv_transpose2: kernel must be 2x2, got " + ws.str());
  if (ws.w != xs.c) {
    std::ostringstream os;
    os << "conv_transpose2: input has " << xs.c << " channels but weights expect " << ws.w;
    throw ShapeError(os.str());
  }
  if (!(b->value.shape() == Shape(1, 1, 1, ws.c)))
    detail::throw_shape_mismatch("conv_transpose2 bias", Shape(1, 1, 1, ws.c), b->value.shape());

  const int64_t cin = xs.c, cout = ws.c;
  const int64_t rows = xs.n * xs.h * xs.w;
  const Shape os(xs.n, 2 * xs.h, 2 * xs.w, cout);
  std::vector<T> out(static_cast<size_t>(os.numel()));
  auto& block = detail::conv_scratch<T>(0);
  block.resize(static_cast<size_t>(rows * cout));
  const T* bias = b->value.data().data();
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 2; ++j) {
      detail::CMapM<T> xm(x->value.data().data(), rows, cin);
      detail::CMapM<T> wm(w->value.data().data() + (i * 2 + j) * cin * cout, cin, cout);
      detail::MapM<T> bm(block.data(), rows, cout);
      bm.noalias() = xm * wm;
      int64_t r = 0;
      for (int64_t n = 0; n < xs.n; ++n)
        for (int64_t y = 0; y < xs.h; ++y)
          for (int64_t xw = 0; xw < xs.w; ++xw, ++r) {
            T* dst = out.data() + ((n * os.h + 2 * y + i) * os.w + 2 * xw + j) * cout;
            const T* src = block.data() + r * cout;
            for (int64_t co = 0; co < cout; ++co) dst[co] = src[co] + bias[co];
          }
    }

  return make_op<T>(Tensor<T>(os, std::move(out)), {x, w, b}, [](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    const Shape& xs = px.value.shape();
    const Shape& os = self.value.shape();
    const int64_t cin = xs.c, cout = os.c;
    const int64_t rows = xs.n * xs.h * xs.w;
    if (pb.requires_grad) {
      auto& db = pb.grad_buf();
      const int64_t on = os.n * os.h * os.w;
      for (int64_t r = 0; r < on; ++r)
        for (int64_t co = 0; co < cout; ++co) db[co] += self.grad[r * cout + co];
    }
    auto& dblock = detail::conv_scratch<T>(0);
    dblock.resize(static_cast<size_t>(rows * cout));
    for (int64_t i = 0; i < 2; ++i)
      for (int64_t j = 0; j < 2; ++j) {
        int64_t r = 0;
        for (int64_t n = 0; n < xs.n; ++n)
          for (int64_t y = 0; y < xs.h; ++y)
            for (int64_t xw = 0; xw < xs.w; ++xw, ++r) {
              const T* src = self.grad.data() + ((n * os.h + 2 * y + i) * os.w + 2 * xw + j) * cout;
              std::copy(src, src + cout, dblock.data() + r * cout);
            }
        detail::CMapM<T> gm(dblock.data(), rows, cout);
        if (px.requires_grad) {
          detail::CMapM<T> wm(pw.value.data().data() + (i * 2 + j) * cin * cout, cin, cout);
          detail::MapM<T> dxm(px.grad_buf().data(), rows, cin);
          dxm.noalias() += gm * wm.transpose();
        }
        if (pw.requires_grad) {
          detail::CMapM<T> xm(px.value.data().data(), rows, cin);
          detail::MapM<T> dwm(pw.grad_buf().data() + (i * 2 + j) * cin * cout, cin, cout);
          dwm.noalias() += xm.transpose() * gm;
        }
      }
  });
}

// 2x2 max pooling, stride 2. Ties route gradient to the first maximum in
// (y, x) scan order.
template <typename T>
VarPtr<T> max_pool2(const VarPtr<T>& x) {
  const Shape& xs = x->value.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0)
    throw ShapeError("max_pool2: spatial extents must be even, got " + xs.str());
  const Shape os(xs.n, xs.h / 2, xs.w / 2, xs.c);
  std::vector<T> out(static_cast<size_t>(os.numel()));
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(os.numel()));
  const auto& xv = x->value;
  int64_t o = 0;
  for (int64_t n = 0; n < os.n; ++n)
    for (int64_t y = 0; y < os.h; ++y)
      for (int64_t w = 0; w < os.w; ++w)
        for (int64_t c = 0; c < os.c; ++c, ++o) {
          T best = xv(n, 2 * y, 2 * w, c);
          int64_t besti = xv.index(n, 2 * y, 2 * w, c);
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx) {
              const T v = xv(n, 2 * y + dy, 2 * w + dx, c);
              if (v > best) {
                best = v;
                besti = xv.index(n, 2 * y + dy, 2 * w + dx, c);
              }
            }
          out[o] = best;
          (*argmax)[o] = besti;
        }
  return make_op<T>(Tensor<T>(os, std::move(out)), {x}, [argmax](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& dx = px.grad_buf();
    for (int64_t i = 0; i < self.value.numel(); ++i) dx[(*argmax)[i]] += self.grad[i];
  });
}

// Mean per-pixel softmax cross-entropy. labels: (N,H,W,1) integer class map.
template <typename T>
VarPtr<T> cross_entropy(const VarPtr<T>& logits, const Tensor<T>& labels) {
  const Shape& ls = logits->value.shape();
  if (!(labels.shape() == Shape(ls.n, ls.h, ls.w, 1)))
    detail::throw_shape_mismatch("cross_entropy labels", Shape(ls.n, ls.h, ls.w, 1), labels.shape());
  const int64_t k = ls.c;
  const int64_t rows = ls.n * ls.h * ls.w;

  auto idx = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T lv = labels.at(r);
    const int64_t li = static_cast<int64_t>(std::llround(lv));
    if (static_cast<T>(li) != lv || li < 0 || li >= k) {
      std::ostringstream os;
      os << "cross_entropy: label " << lv << " at pixel " << r << " outside [0," << k << ")";
      throw ValueError(os.str());
    }
    (*idx)[r] = static_cast<int32_t>(li);
  }

  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * k));
  const T* lg = logits->value.data().data();
  double loss_acc = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = lg + r * k;
    T m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    T denom = 0;
    for (int64_t j = 0; j < k; ++j) {
      const T e = std::exp(row[j] - m);
      (*probs)[r * k + j] = e;
      denom += e;
    }
    for (int64_t j = 0; j < k; ++j) (*probs)[r * k + j] /= denom;
    loss_acc += static_cast<double>(std::log(denom) + m - row[(*idx)[r]]);
  }
  const T loss = static_cast<T>(loss_acc / static_cast<double>(rows));

  return make_op<T>(Tensor<T>::scalar(loss), {logits}, [idx, probs, rows, k](Node<T>& self) {
    auto& pl = *self.parents[0];
    if (!pl.requires_grad) return;
    auto& dl = pl.grad_buf();
    const T g = self.grad[0] / static_cast<T>(rows);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < k; ++j)
        dl[r * k + j] += g * ((*probs)[r * k + j] - ((*idx)[r] == j ? T(1) : T(0)));
  });
}

}  // namespace normkit
