#pragma once

// Dense 4-D tensors in (N, H, W, C) layout. Tensors are immutable values
// after construction; every operation returns a fresh tensor.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace normkit {

class ShapeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ValueError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  int64_t n = 0, h = 0, w = 0, c = 0;

  Shape() = default;
  Shape(int64_t n_, int64_t h_, int64_t w_, int64_t c_) : n(n_), h(h_), w(w_), c(c_) {}

  int64_t numel() const { return n * h * w * c; }
  int64_t extent(int axis) const {
    switch (axis) {
      case 0: return n;
      case 1: return h;
      case 2: return w;
      default: return c;
    }
  }

  bool operator==(const Shape& o) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << h << "," << w << "," << c << ")";
    return os.str();
  }
};

enum class Axis { N = 0, H = 1, W = 2, C = 3 };

// Reduction axis set over {N, H, W, C}.
struct AxisSet {
  bool n = false, h = false, w = false, c = false;

  static AxisSet over(std::initializer_list<Axis> axes) {
    AxisSet s;
    for (Axis a : axes) {
      switch (a) {
        case Axis::N: s.n = true; break;
        case Axis::H: s.h = true; break;
        case Axis::W: s.w = true; break;
        case Axis::C: s.c = true; break;
      }
    }
    return s;
  }

  bool empty() const { return !(n || h || w || c); }
  bool has(int axis) const { return axis == 0 ? n : axis == 1 ? h : axis == 2 ? w : c; }
};

template <typename T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "Tensor supports single and double precision only");

public:
  Tensor() = default;

  explicit Tensor(Shape s) : shape_(s), data_(check_extents(s), T(0)) {}

  Tensor(Shape s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != check_extents(s)) {
      std::ostringstream os;
      os << "tensor data length " << data_.size() << " does not match shape " << s.str();
      throw ShapeError(os.str());
    }
  }

  static Tensor full(Shape s, T v) {
    Tensor t(s);
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor zeros(Shape s) { return Tensor(s); }

  static Tensor scalar(T v) { return full(Shape(1, 1, 1, 1), v); }

  // Builds a tensor by evaluating fn at every (n, h, w, c) coordinate.
  template <typename Fn>
  static Tensor from_fn(Shape s, Fn&& fn) {
    Tensor t(s);
    int64_t i = 0;
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t h = 0; h < s.h; ++h)
        for (int64_t w = 0; w < s.w; ++w)
          for (int64_t c = 0; c < s.c; ++c) t.data_[i++] = fn(n, h, w, c);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T operator()(int64_t n, int64_t h, int64_t w, int64_t c) const {
    return data_[index(n, h, w, c)];
  }
  T at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() requires a one-element tensor, got " + shape_.str());
    return data_[0];
  }

  const std::vector<T>& data() const { return data_; }

  int64_t index(int64_t n, int64_t h, int64_t w, int64_t c) const {
    return ((n * shape_.h + h) * shape_.w + w) * shape_.c + c;
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

private:
  static int64_t check_extents(const Shape& s) {
    if (s.n <= 0 || s.h <= 0 || s.w <= 0 || s.c <= 0)
      throw ShapeError("tensor extents must be positive, got " + s.str());
    return s.numel();
  }

  Shape shape_;
  std::vector<T> data_;
};

namespace detail {

inline void throw_shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  std::ostringstream os;
  os << op << ": operand shapes " << a.str() << " and " << b.str() << " are incompatible";
  throw ShapeError(os.str());
}

template <typename T>
inline void ensure_finite(const char* op, const std::vector<T>& v) {
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream os;
      os << op << ": non-finite result at flat index " << i;
      throw NumericError(os.str());
    }
  }
}

}  // namespace detail

enum class EwOp { Add, Sub, Mul, Div, Exp, Neg };

// Pointwise binary op. b must have the same shape as a, be a single scalar
// (1,1,1,1), or be a per-channel vector (1,1,1,C) matching a's channel count.
template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>& b) {
  enum class Bc { Same, Scalar, Channel };
  Bc bc;
  if (b.shape() == a.shape()) {
    bc = Bc::Same;
  } else if (b.shape() == Shape(1, 1, 1, 1)) {
    bc = Bc::Scalar;
  } else if (b.shape() == Shape(1, 1, 1, a.shape().c)) {
    bc = Bc::Channel;
  } else {
    detail::throw_shape_mismatch("elementwise", a.shape(), b.shape());
    bc = Bc::Same;  // unreachable
  }

  if (op == EwOp::Div) {
    for (int64_t i = 0; i < b.numel(); ++i)
      if (b.at(i) == T(0)) throw ValueError("elementwise div: divisor contains exact zero");
  }

  const int64_t c = a.shape().c;
  std::vector<T> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) {
    T rhs = bc == Bc::Same ? b.at(i) : bc == Bc::Scalar ? b.at(0) : b.at(i % c);
    T lhs = a.at(i);
    switch (op) {
      case EwOp::Add: out[i] = lhs + rhs; break;
      case EwOp::Sub: out[i] = lhs - rhs; break;
      case EwOp::Mul: out[i] = lhs * rhs; break;
      case EwOp::Div: out[i] = lhs / rhs; break;
      default: throw ValueError("elementwise: Exp/Neg are unary");
    }
  }
  detail::ensure_finite("elementwise", out);
  return Tensor<T>(a.shape(), std::move(out));
}

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a) {
  if (op != EwOp::Exp && op != EwOp::Neg)
    throw ValueError("elementwise: binary op invoked without second operand");
  std::vector<T> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i)
    out[i] = op == EwOp::Exp ? std::exp(a.at(i)) : -a.at(i);
  detail::ensure_finite("elementwise", out);
  return Tensor<T>(a.shape(), std::move(out));
}

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, T b) {
  return elementwise(op, a, Tensor<T>::scalar(b));
}

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Add, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Sub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Mul, a, b); }
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Div, a, b); }
template <typename T> Tensor<T> add(const Tensor<T>& a, T b) { return elementwise(EwOp::Add, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, T b) { return elementwise(EwOp::Sub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, T b) { return elementwise(EwOp::Mul, a, b); }
template <typename T> Tensor<T> div(const Tensor<T>& a, T b) { return elementwise(EwOp::Div, a, b); }
template <typename T> Tensor<T> exp(const Tensor<T>& a) { return elementwise(EwOp::Exp, a); }
template <typename T> Tensor<T> neg(const Tensor<T>& a) { return elementwise(EwOp::Neg, a); }

struct ChannelGroup {
  int64_t index = 0;  // group index
  int64_t size = 0;   // channels per group
};

// Population mean and variance over the given axis set. Reduced axes collapse
// to extent 1. With a channel group, the C reduction is restricted to the
// group's channel span [index*size, (index+1)*size).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> reduce_moments(const Tensor<T>& x, AxisSet axes,
                                               const ChannelGroup* group = nullptr) {
  if (axes.empty()) throw ValueError("reduce_moments: empty reduction span");
  const Shape& s = x.shape();

  int64_t c_lo = 0, c_hi = s.c;
  if (group != nullptr) {
    if (!axes.c) throw ValueError("reduce_moments: channel group given but C not reduced");
    c_lo = group->index * group->size;
    c_hi = c_lo + group->size;
    if (group->size <= 0 || c_lo < 0 || c_hi > s.c) {
      std::ostringstream os;
      os << "reduce_moments: channel group [" << c_lo << "," << c_hi << ") outside [0," << s.c << ")";
      throw ValueError(os.str());
    }
  }

  Shape os(axes.n ? 1 : s.n, axes.h ? 1 : s.h, axes.w ? 1 : s.w, axes.c ? 1 : s.c);
  std::vector<T> sum(static_cast<size_t>(os.numel()), T(0));
  std::vector<T> sq(static_cast<size_t>(os.numel()), T(0));

  const int64_t count = (axes.n ? s.n : 1) * (axes.h ? s.h : 1) * (axes.w ? s.w : 1) *
                        (axes.c ? (c_hi - c_lo) : 1);

  auto out_index = [&](int64_t n, int64_t h, int64_t w, int64_t c) {
    return ((((axes.n ? 0 : n) * os.h + (axes.h ? 0 : h)) * os.w + (axes.w ? 0 : w)) * os.c +
            (axes.c ? 0 : c));
  };

  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t h = 0; h < s.h; ++h)
      for (int64_t w = 0; w < s.w; ++w)
        for (int64_t c = c_lo; c < (axes.c ? c_hi : s.c); ++c)
          sum[out_index(n, h, w, c)] += x(n, h, w, c);

  std::vector<T> mu(sum.size());
  for (size_t i = 0; i < sum.size(); ++i) mu[i] = sum[i] / static_cast<T>(count);

  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t h = 0; h < s.h; ++h)
      for (int64_t w = 0; w < s.w; ++w)
        for (int64_t c = c_lo; c < (axes.c ? c_hi : s.c); ++c) {
          const int64_t o = out_index(n, h, w, c);
          const T d = x(n, h, w, c) - mu[o];
          sq[o] += d * d;
        }

  std::vector<T> v(sq.size());
  for (size_t i = 0; i < sq.size(); ++i) v[i] = sq[i] / static_cast<T>(count);

  return {Tensor<T>(os, std::move(mu)), Tensor<T>(os, std::move(v))};
}

// Channel concatenation; operands must agree on N, H, W.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ValueError("concat_channels: no operands");
  const Shape& s0 = parts[0].shape();
  int64_t c_total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      detail::throw_shape_mismatch("concat_channels", s0, s);
    c_total += s.c;
  }
  Shape os(s0.n, s0.h, s0.w, c_total);
  std::vector<T> out(static_cast<size_t>(os.numel()));
  int64_t o = 0;
  for (int64_t n = 0; n < s0.n; ++n)
    for (int64_t h = 0; h < s0.h; ++h)
      for (int64_t w = 0; w < s0.w; ++w)
        for (const auto& p : parts)
          for (int64_t c = 0; c < p.shape().c; ++c) out[o++] = p(n, h, w, c);
  return Tensor<T>(os, std::move(out));
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_channels(std::vector<Tensor<T>>{a, b});
}

// Channel slice [c_begin, c_end).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int64_t c_begin, int64_t c_end) {
  const Shape& s = x.shape();
  if (c_begin < 0 || c_end <= c_begin || c_end > s.c) {
    std::ostringstream os;
    os << "slice_channels: range [" << c_begin << "," << c_end << ") invalid for C=" << s.c;
    throw ShapeError(os.str());
  }
  Shape osh(s.n, s.h, s.w, c_end - c_begin);
  std::vector<T> out(static_cast<size_t>(osh.numel()));
  int64_t o = 0;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t h = 0; h < s.h; ++h)
      for (int64_t w = 0; w < s.w; ++w)
        for (int64_t c = c_begin; c < c_end; ++c) out[o++] = x(n, h, w, c);
  return Tensor<T>(osh, std::move(out));
}

// Center pad (with zeros) or crop to the target spatial extents.
template <typename T>
Tensor<T> pad_crop(const Tensor<T>& x, int64_t target_h, int64_t target_w) {
  const Shape& s = x.shape();
  if (target_h <= 0 || target_w <= 0)
    throw ShapeError("pad_crop: target extents must be positive");
  Shape os(s.n, target_h, target_w, s.c);
  std::vector<T> buf(static_cast<size_t>(os.numel()), T(0));
  const int64_t dh = (target_h - s.h) / 2;  // >0 pad, <0 crop
  const int64_t dw = (target_w - s.w) / 2;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t h = 0; h < s.h; ++h) {
      const int64_t th = h + dh;
      if (th < 0 || th >= target_h) continue;
      for (int64_t w = 0; w < s.w; ++w) {
        const int64_t tw = w + dw;
        if (tw < 0 || tw >= target_w) continue;
        for (int64_t c = 0; c < s.c; ++c)
          buf[((n * target_h + th) * target_w + tw) * s.c + c] = x(n, h, w, c);
      }
    }
  return Tensor<T>(os, std::move(buf));
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && a.data() == b.data();
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) detail::throw_shape_mismatch("max_abs_diff", a.shape(), b.shape());
  T m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

}  // namespace normkit
