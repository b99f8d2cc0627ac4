#pragma once

// Differentiable arithmetic, activation, reduction, and channel-shape ops.
// Binary ops follow the tensor broadcast rule: equal shapes, scalar (1,1,1,1),
// or per-channel (1,1,1,C) second operand.

#include <cmath>

#include "normkit/autograd.hpp"
#include "normkit/tensor.hpp"

namespace normkit {

namespace detail {

enum class Bcast { Same, Scalar, Channel };

inline Bcast bcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (b == a) return Bcast::Same;
  if (b == Shape(1, 1, 1, 1)) return Bcast::Scalar;
  if (b == Shape(1, 1, 1, a.c)) return Bcast::Channel;
  throw_shape_mismatch(op, a, b);
  return Bcast::Same;
}

template <typename T>
T bval(const Tensor<T>& b, Bcast k, int64_t i, int64_t c) {
  return k == Bcast::Same ? b.at(i) : k == Bcast::Scalar ? b.at(0) : b.at(i % c);
}

// dst[i] (resp. broadcast-reduced slot) += src term; src given per out element.
template <typename T, typename Fn>
void accum_bcast(std::vector<T>& dst, Bcast k, int64_t n_out, int64_t c, Fn&& term) {
  switch (k) {
    case Bcast::Same:
      for (int64_t i = 0; i < n_out; ++i) dst[i] += term(i);
      break;
    case Bcast::Scalar: {
      T acc = 0;
      for (int64_t i = 0; i < n_out; ++i) acc += term(i);
      dst[0] += acc;
      break;
    }
    case Bcast::Channel:
      for (int64_t i = 0; i < n_out; ++i) dst[i % c] += term(i);
      break;
  }
}

}  // namespace detail

template <typename T>
VarPtr<T> add(const VarPtr<T>& a, const VarPtr<T>& b) {
  const auto kb = detail::bcast_kind("add", a->value.shape(), b->value.shape());
  Tensor<T> out = add(a->value, b->value);
  return make_op<T>(std::move(out), {a, b}, [kb](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    const int64_t n = self.value.numel(), c = pa.value.shape().c;
    if (pa.requires_grad) {
      auto& da = pa.grad_buf();
      for (int64_t i = 0; i < n; ++i) da[i] += g[i];
    }
    if (pb.requires_grad)
      detail::accum_bcast(pb.grad_buf(), kb, n, c, [&](int64_t i) { return g[i]; });
  });
}

template <typename T>
VarPtr<T> sub(const VarPtr<T>& a, const VarPtr<T>& b) {
  const auto kb = detail::bcast_kind("sub", a->value.shape(), b->value.shape());
  Tensor<T> out = sub(a->value, b->value);
  return make_op<T>(std::move(out), {a, b}, [kb](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    const int64_t n = self.value.numel(), c = pa.value.shape().c;
    if (pa.requires_grad) {
      auto& da = pa.grad_buf();
      for (int64_t i = 0; i < n; ++i) da[i] += g[i];
    }
    if (pb.requires_grad)
      detail::accum_bcast(pb.grad_buf(), kb, n, c, [&](int64_t i) { return -g[i]; });
  });
}

template <typename T>
VarPtr<T> mul(const VarPtr<T>& a, const VarPtr<T>& b) {
  const auto kb = detail::bcast_kind("mul", a->value.shape(), b->value.shape());
  Tensor<T> out = mul(a->value, b->value);
  return make_op<T>(std::move(out), {a, b}, [kb](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    const auto& av = pa.value;
    const auto& bv = pb.value;
    const int64_t n = self.value.numel(), c = av.shape().c;
    if (pa.requires_grad) {
      auto& da = pa.grad_buf();
      for (int64_t i = 0; i < n; ++i) da[i] += g[i] * detail::bval(bv, kb, i, c);
    }
    if (pb.requires_grad)
      detail::accum_bcast(pb.grad_buf(), kb, n, c, [&](int64_t i) { return g[i] * av.at(i); });
  });
}

template <typename T>
VarPtr<T> div(const VarPtr<T>& a, const VarPtr<T>& b) {
  const auto kb = detail::bcast_kind("div", a->value.shape(), b->value.shape());
  Tensor<T> out = div(a->value, b->value);
  return make_op<T>(std::move(out), {a, b}, [kb](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    const auto& av = pa.value;
    const auto& bv = pb.value;
    const int64_t n = self.value.numel(), c = av.shape().c;
    if (pa.requires_grad) {
      auto& da = pa.grad_buf();
      for (int64_t i = 0; i < n; ++i) da[i] += g[i] / detail::bval(bv, kb, i, c);
    }
    if (pb.requires_grad)
      detail::accum_bcast(pb.grad_buf(), kb, n, c, [&](int64_t i) {
        const T d = detail::bval(bv, kb, i, c);
        return -g[i] * av.at(i) / (d * d);
      });
  });
}

template <typename T>
VarPtr<T> scale(const VarPtr<T>& a, T k) {
  Tensor<T> out = mul(a->value, k);
  return make_op<T>(std::move(out), {a}, [k](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& da = pa.grad_buf();
    for (int64_t i = 0; i < self.value.numel(); ++i) da[i] += k * self.grad[i];
  });
}

template <typename T>
VarPtr<T> add_scalar(const VarPtr<T>& a, T k) {
  Tensor<T> out = add(a->value, k);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& da = pa.grad_buf();
    for (int64_t i = 0; i < self.value.numel(); ++i) da[i] += self.grad[i];
  });
}

template <typename T>
VarPtr<T> neg(const VarPtr<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
VarPtr<T> exp(const VarPtr<T>& a) {
  Tensor<T> out = exp(a->value);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& da = pa.grad_buf();
    for (int64_t i = 0; i < self.value.numel(); ++i) da[i] += self.grad[i] * self.value.at(i);
  });
}

template <typename T>
VarPtr<T> relu(const VarPtr<T>& a) {
  const auto& x = a->value;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x.at(i) > T(0) ? x.at(i) : T(0);
  return make_op<T>(Tensor<T>(x.shape(), std::move(out)), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& da = pa.grad_buf();
    const auto& xv = pa.value;
    for (int64_t i = 0; i < self.value.numel(); ++i)
      if (xv.at(i) > T(0)) da[i] += self.grad[i];
  });
}

// Elementwise logistic sigmoid.
template <typename T>
VarPtr<T> sigmoid(const VarPtr<T>& a) {
  const auto& x = a->value;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-x.at(i)));
  return make_op<T>(Tensor<T>(x.shape(), std::move(out)), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& da = pa.grad_buf();
    for (int64_t i = 0; i < self.value.numel(); ++i) {
      const T y = self.value.at(i);
      da[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
VarPtr<T> sum_all(const VarPtr<T>& a) {
  T acc = 0;
  for (int64_t i = 0; i < a->value.numel(); ++i) acc += a->value.at(i);
  return make_op<T>(Tensor<T>::scalar(acc), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& da = pa.grad_buf();
    const T g = self.grad[0];
    for (auto& v : da) v += g;
  });
}

template <typename T>
VarPtr<T> mean_all(const VarPtr<T>& a) {
  T acc = 0;
  const int64_t n = a->value.numel();
  for (int64_t i = 0; i < n; ++i) acc += a->value.at(i);
  return make_op<T>(Tensor<T>::scalar(acc / static_cast<T>(n)), {a}, [n](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& da = pa.grad_buf();
    const T g = self.grad[0] / static_cast<T>(n);
    for (auto& v : da) v += g;
  });
}

template <typename T>
VarPtr<T> concat_channels(const VarPtr<T>& a, const VarPtr<T>& b) {
  Tensor<T> out = concat_channels(a->value, b->value);
  const int64_t ca = a->value.shape().c, cb = b->value.shape().c;
  return make_op<T>(std::move(out), {a, b}, [ca, cb](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const Shape& os = self.value.shape();
    const int64_t pixels = os.n * os.h * os.w;
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& da = pa.grad_buf();
      for (int64_t p = 0; p < pixels; ++p)
        for (int64_t c = 0; c < ca; ++c) da[p * ca + c] += g[p * os.c + c];
    }
    if (pb.requires_grad) {
      auto& db = pb.grad_buf();
      for (int64_t p = 0; p < pixels; ++p)
        for (int64_t c = 0; c < cb; ++c) db[p * cb + c] += g[p * os.c + ca + c];
    }
  });
}

template <typename T>
VarPtr<T> slice_channels(const VarPtr<T>& a, int64_t c_begin, int64_t c_end) {
  Tensor<T> out = slice_channels(a->value, c_begin, c_end);
  return make_op<T>(std::move(out), {a}, [c_begin, c_end](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& da = pa.grad_buf();
    const Shape& is = pa.value.shape();
    const Shape& os = self.value.shape();
    const int64_t pixels = os.n * os.h * os.w;
    for (int64_t p = 0; p < pixels; ++p)
      for (int64_t c = c_begin; c < c_end; ++c)
        da[p * is.c + c] += self.grad[p * os.c + (c - c_begin)];
  });
}

}  // namespace normkit
