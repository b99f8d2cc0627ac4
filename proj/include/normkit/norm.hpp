#pragma once

// Normalization layers: IN, LN, GN, train-mode BN, the Clip/Sigmoid/Softmax
// feature-map combiners, the per-channel affine, and the composed ILN layer
// (combine IN and LN, re-normalize with GN16, then scale/shift).
//
// All four normalizers share one grouped-statistics kernel; the group id of
// an element depends only on (n, c):
//   instance  gid = n*C + c        statistics over (H, W)
//   layer     gid = n              statistics over (H, W, C)
//   group(g)  gid = n*g + c/M      statistics over (H, W, M), M = C/g
//   batch     gid = c              statistics over (N, H, W)

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "normkit/autograd.hpp"
#include "normkit/ops.hpp"
#include "normkit/tensor.hpp"

namespace normkit {

enum class NormKind { None, Instance, Layer, Group, Batch, Iln, CombinerOnly };
enum class CombinerKind { Clip, Sigmoid, Softmax };

inline const char* to_string(NormKind k) {
  switch (k) {
    case NormKind::None: return "none";
    case NormKind::Instance: return "IN";
    case NormKind::Layer: return "LN";
    case NormKind::Group: return "GN";
    case NormKind::Batch: return "BN";
    case NormKind::Iln: return "ILN";
    case NormKind::CombinerOnly: return "combiner";
  }
  return "?";
}

inline const char* to_string(CombinerKind k) {
  switch (k) {
    case CombinerKind::Clip: return "clip";
    case CombinerKind::Sigmoid: return "sigmoid";
    case CombinerKind::Softmax: return "softmax";
  }
  return "?";
}

struct NormConfig {
  NormKind kind = NormKind::Iln;
  double epsilon = 1e-5;
  int64_t groups = 16;  // GN only
  CombinerKind combiner = CombinerKind::Sigmoid;
  bool strict_groups = false;  // reject instead of gcd fallback inside ILN

  void validate() const {
    if (epsilon <= 0) throw ValueError("NormConfig: epsilon must be positive");
    if (kind == NormKind::Group && groups <= 0)
      throw ValueError("NormConfig: group count must be positive");
  }

  bool has_combiner() const { return kind == NormKind::Iln || kind == NormKind::CombinerOnly; }
  bool has_affine() const { return kind != NormKind::None; }
};

enum class StatScope { Instance, Layer, Group, Batch };

namespace detail {

struct Grouping {
  int64_t num_groups = 0;
  int64_t group_elems = 0;
  std::shared_ptr<std::vector<int32_t>> gid_nc;  // (n, c) -> group id
};

inline Grouping make_grouping(const char* op, const Shape& s, StatScope scope, int64_t groups) {
  Grouping g;
  switch (scope) {
    case StatScope::Instance:
      g.num_groups = s.n * s.c;
      break;
    case StatScope::Layer:
      g.num_groups = s.n;
      break;
    case StatScope::Group: {
      if (groups <= 0 || s.c % groups != 0) {
        std::ostringstream os;
        os << op << ": " << groups << " groups do not divide C=" << s.c << " channels";
        throw ShapeError(os.str());
      }
      g.num_groups = s.n * groups;
      break;
    }
    case StatScope::Batch:
      if (s.n * s.h * s.w < 2) {
        std::ostringstream os;
        os << op << ": N*H*W=" << s.n * s.h * s.w << " is too small for batch statistics";
        throw ValueError(os.str());
      }
      g.num_groups = s.c;
      break;
  }
  g.group_elems = s.numel() / g.num_groups;
  g.gid_nc = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(s.n * s.c));
  const int64_t m = scope == StatScope::Group ? s.c / groups : 1;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      int64_t gid = 0;
      switch (scope) {
        case StatScope::Instance: gid = n * s.c + c; break;
        case StatScope::Layer: gid = n; break;
        case StatScope::Group: gid = n * groups + c / m; break;
        case StatScope::Batch: gid = c; break;
      }
      (*g.gid_nc)[n * s.c + c] = static_cast<int32_t>(gid);
    }
  return g;
}

// y = (x - mu_g) / sqrt(var_g + eps); fills per-group inverse std.
template <typename T>
std::vector<T> normalize_forward(const Tensor<T>& x, const Grouping& g, T eps,
                                 std::vector<T>& inv_std) {
  const Shape& s = x.shape();
  const int64_t nc = s.c, hw = s.h * s.w;
  std::vector<T> sum(static_cast<size_t>(g.num_groups), T(0));
  const T* xd = x.data().data();
  const auto& gid = *g.gid_nc;
  for (int64_t n = 0; n < s.n; ++n) {
    const int32_t* gn = gid.data() + n * nc;
    const T* row = xd + n * hw * nc;
    for (int64_t p = 0; p < hw; ++p)
      for (int64_t c = 0; c < nc; ++c) sum[gn[c]] += row[p * nc + c];
  }
  const T inv_m = T(1) / static_cast<T>(g.group_elems);
  std::vector<T> mu(sum.size());
  for (size_t i = 0; i < sum.size(); ++i) mu[i] = sum[i] * inv_m;

  std::vector<T> sq(static_cast<size_t>(g.num_groups), T(0));
  for (int64_t n = 0; n < s.n; ++n) {
    const int32_t* gn = gid.data() + n * nc;
    const T* row = xd + n * hw * nc;
    for (int64_t p = 0; p < hw; ++p)
      for (int64_t c = 0; c < nc; ++c) {
        const T d = row[p * nc + c] - mu[gn[c]];
        sq[gn[c]] += d * d;
      }
  }
  inv_std.resize(sq.size());
  for (size_t i = 0; i < sq.size(); ++i) inv_std[i] = T(1) / std::sqrt(sq[i] * inv_m + eps);

  std::vector<T> y(static_cast<size_t>(x.numel()));
  for (int64_t n = 0; n < s.n; ++n) {
    const int32_t* gn = gid.data() + n * nc;
    const T* row = xd + n * hw * nc;
    T* yr = y.data() + n * hw * nc;
    for (int64_t p = 0; p < hw; ++p)
      for (int64_t c = 0; c < nc; ++c) {
        const int32_t gg = gn[c];
        yr[p * nc + c] = (row[p * nc + c] - mu[gg]) * inv_std[gg];
      }
  }
  return y;
}

template <typename T>
VarPtr<T> normalize_op(const char* op, const VarPtr<T>& x, StatScope scope, int64_t groups, T eps) {
  const Grouping g = make_grouping(op, x->value.shape(), scope, groups);
  auto inv_std = std::make_shared<std::vector<T>>();
  std::vector<T> y = normalize_forward(x->value, g, eps, *inv_std);
  return make_op<T>(Tensor<T>(x->value.shape(), std::move(y)), {x},
                    [g, inv_std](Node<T>& self) {
                      auto& px = *self.parents[0];
                      if (!px.requires_grad) return;
                      const Shape& s = px.value.shape();
                      const int64_t nc = s.c, hw = s.h * s.w;
                      const auto& gid = *g.gid_nc;
                      const auto& y = self.value;
                      const auto& gr = self.grad;
                      std::vector<T> s1(static_cast<size_t>(g.num_groups), T(0));
                      std::vector<T> s2(static_cast<size_t>(g.num_groups), T(0));
                      for (int64_t n = 0; n < s.n; ++n) {
                        const int32_t* gn = gid.data() + n * nc;
                        for (int64_t p = 0; p < hw; ++p)
                          for (int64_t c = 0; c < nc; ++c) {
                            const int64_t i = (n * hw + p) * nc + c;
                            s1[gn[c]] += gr[i];
                            s2[gn[c]] += gr[i] * y.at(i);
                          }
                      }
                      const T inv_m = T(1) / static_cast<T>(g.group_elems);
                      auto& dx = px.grad_buf();
                      for (int64_t n = 0; n < s.n; ++n) {
                        const int32_t* gn = gid.data() + n * nc;
                        for (int64_t p = 0; p < hw; ++p)
                          for (int64_t c = 0; c < nc; ++c) {
                            const int64_t i = (n * hw + p) * nc + c;
                            const int32_t gg = gn[c];
                            dx[i] += (*inv_std)[gg] *
                                     (gr[i] - s1[gg] * inv_m - y.at(i) * s2[gg] * inv_m);
                          }
                      }
                    });
}

}  // namespace detail

// --- Graph-building normalizers ---

template <typename T>
VarPtr<T> instance_norm(const VarPtr<T>& x, T eps) {
  return detail::normalize_op("instance_norm", x, StatScope::Instance, 0, eps);
}

template <typename T>
VarPtr<T> layer_norm(const VarPtr<T>& x, T eps) {
  return detail::normalize_op("layer_norm", x, StatScope::Layer, 0, eps);
}

template <typename T>
VarPtr<T> group_norm(const VarPtr<T>& x, int64_t groups, T eps) {
  return detail::normalize_op("group_norm", x, StatScope::Group, groups, eps);
}

template <typename T>
VarPtr<T> batch_norm_train(const VarPtr<T>& x, T eps) {
  return detail::normalize_op("batch_norm_train", x, StatScope::Batch, 0, eps);
}

// --- Pure tensor versions (same kernel, no graph) ---

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps) {
  std::vector<T> r;
  const auto g = detail::make_grouping("instance_norm", x.shape(), StatScope::Instance, 0);
  return Tensor<T>(x.shape(), detail::normalize_forward(x, g, eps, r));
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps) {
  std::vector<T> r;
  const auto g = detail::make_grouping("layer_norm", x.shape(), StatScope::Layer, 0);
  return Tensor<T>(x.shape(), detail::normalize_forward(x, g, eps, r));
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int64_t groups, T eps) {
  std::vector<T> r;
  const auto g = detail::make_grouping("group_norm", x.shape(), StatScope::Group, groups);
  return Tensor<T>(x.shape(), detail::normalize_forward(x, g, eps, r));
}

template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, T eps) {
  std::vector<T> r;
  const auto g = detail::make_grouping("batch_norm_train", x.shape(), StatScope::Batch, 0);
  return Tensor<T>(x.shape(), detail::normalize_forward(x, g, eps, r));
}

// --- Combiners ---

template <typename T>
T combiner_weight(CombinerKind kind, T rho, T rho2 = T(0)) {
  switch (kind) {
    case CombinerKind::Clip: return std::min(std::max(rho, T(0)), T(1));
    case CombinerKind::Sigmoid: return T(1) / (T(1) + std::exp(-rho));
    case CombinerKind::Softmax: return T(1) / (T(1) + std::exp(rho2 - rho));
  }
  return T(0);
}

// dw/drho. Clip's subgradient at the breakpoints 0 and 1 is 0 (saturated).
template <typename T>
T combiner_weight_grad(CombinerKind kind, T rho, T rho2 = T(0)) {
  switch (kind) {
    case CombinerKind::Clip: return (rho > T(0) && rho < T(1)) ? T(1) : T(0);
    case CombinerKind::Sigmoid:
    case CombinerKind::Softmax: {
      const T w = combiner_weight(kind, rho, rho2);
      return w * (T(1) - w);
    }
  }
  return T(0);
}

// w*f_in + (1-w)*f_ln with w derived from the trainable rho parameter(s).
// rho2 participates only for the Softmax combiner and may be null otherwise.
template <typename T>
VarPtr<T> combine(const VarPtr<T>& f_in, const VarPtr<T>& f_ln, const VarPtr<T>& rho,
                  const VarPtr<T>& rho2, CombinerKind kind) {
  if (!(f_in->value.shape() == f_ln->value.shape()))
    detail::throw_shape_mismatch("combine", f_in->value.shape(), f_ln->value.shape());
  if (kind == CombinerKind::Softmax && !rho2)
    throw ValueError("combine: softmax combiner needs two parameters");
  const T r1 = rho->value.item();
  const T r2 = rho2 ? rho2->value.item() : T(0);
  const T w = combiner_weight(kind, r1, r2);

  const auto& a = f_in->value;
  const auto& b = f_ln->value;
  std::vector<T> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = w * a.at(i) + (T(1) - w) * b.at(i);

  std::vector<VarPtr<T>> parents{f_in, f_ln, rho};
  if (kind == CombinerKind::Softmax) parents.push_back(rho2);
  return make_op<T>(Tensor<T>(a.shape(), std::move(out)), std::move(parents),
                    [w, kind, r1, r2](Node<T>& self) {
                      auto& pa = *self.parents[0];
                      auto& pb = *self.parents[1];
                      auto& pr = *self.parents[2];
                      const auto& g = self.grad;
                      const int64_t n = self.value.numel();
                      if (pa.requires_grad) {
                        auto& da = pa.grad_buf();
                        for (int64_t i = 0; i < n; ++i) da[i] += w * g[i];
                      }
                      if (pb.requires_grad) {
                        auto& db = pb.grad_buf();
                        for (int64_t i = 0; i < n; ++i) db[i] += (T(1) - w) * g[i];
                      }
                      const bool need_rho = pr.requires_grad ||
                                            (self.parents.size() > 3 && self.parents[3]->requires_grad);
                      if (need_rho) {
                        T s = 0;
                        for (int64_t i = 0; i < n; ++i)
                          s += (pa.value.at(i) - pb.value.at(i)) * g[i];
                        const T dw = combiner_weight_grad(kind, r1, r2);
                        if (pr.requires_grad) pr.grad_buf()[0] += dw * s;
                        if (self.parents.size() > 3 && self.parents[3]->requires_grad)
                          self.parents[3]->grad_buf()[0] -= dw * s;
                      }
                    });
}

template <typename T>
VarPtr<T> combine(const VarPtr<T>& f_in, const VarPtr<T>& f_ln, const VarPtr<T>& rho,
                  CombinerKind kind) {
  return combine(f_in, f_ln, rho, VarPtr<T>(), kind);
}

// Pure version over tensors.
template <typename T>
Tensor<T> combine(const Tensor<T>& f_in, const Tensor<T>& f_ln, T rho, T rho2, CombinerKind kind) {
  NoGradGuard ng;
  return combine(make_constant(f_in), make_constant(f_ln), make_constant(Tensor<T>::scalar(rho)),
                 make_constant(Tensor<T>::scalar(rho2)), kind)
      ->value;
}

// --- Per-channel affine f' = gamma_c * f + beta_c ---

template <typename T>
VarPtr<T> affine_channel(const VarPtr<T>& x, const VarPtr<T>& gamma, const VarPtr<T>& beta) {
  const Shape& s = x->value.shape();
  if (!(gamma->value.shape() == Shape(1, 1, 1, s.c)))
    detail::throw_shape_mismatch("affine_channel gamma", Shape(1, 1, 1, s.c), gamma->value.shape());
  if (!(beta->value.shape() == Shape(1, 1, 1, s.c)))
    detail::throw_shape_mismatch("affine_channel beta", Shape(1, 1, 1, s.c), beta->value.shape());
  const int64_t c = s.c;
  const auto& xv = x->value;
  const T* gm = gamma->value.data().data();
  const T* bt = beta->value.data().data();
  std::vector<T> out(static_cast<size_t>(xv.numel()));
  for (int64_t i = 0; i < xv.numel(); ++i) out[i] = gm[i % c] * xv.at(i) + bt[i % c];
  return make_op<T>(Tensor<T>(s, std::move(out)), {x, gamma, beta}, [c](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const auto& g = self.grad;
    const int64_t n = self.value.numel();
    if (px.requires_grad) {
      auto& dx = px.grad_buf();
      const T* gm = pg.value.data().data();
      for (int64_t i = 0; i < n; ++i) dx[i] += gm[i % c] * g[i];
    }
    if (pg.requires_grad) {
      auto& dg = pg.grad_buf();
      const auto& xv = px.value;
      for (int64_t i = 0; i < n; ++i) dg[i % c] += xv.at(i) * g[i];
    }
    if (pb.requires_grad) {
      auto& db = pb.grad_buf();
      for (int64_t i = 0; i < n; ++i) db[i % c] += g[i];
    }
  });
}

// --- Norm sites ---

// Parameter bundle for one normalization site. Unused slots stay null.
template <typename T>
struct NormSiteParams {
  VarPtr<T> rho;
  VarPtr<T> rho2;  // softmax combiner only
  VarPtr<T> gamma;
  VarPtr<T> beta;
};

// Group count for the GN16 cascade inside ILN. Falls back to gcd(16, C) when
// 16 does not divide C, unless strict mode rejects.
inline int64_t iln_group_count(int64_t channels, bool strict,
                               const std::function<void(const std::string&)>& warn = nullptr) {
  if (channels % 16 == 0) return 16;
  if (strict) {
    std::ostringstream os;
    os << "iln: 16 groups do not divide C=" << channels << " channels (strict mode)";
    throw ShapeError(os.str());
  }
  const int64_t g = std::gcd<int64_t>(16, channels);
  if (warn) {
    std::ostringstream os;
    os << "iln: 16 does not divide C=" << channels << "; falling back to GN" << g;
    warn(os.str());
  }
  return g;
}

// Applies one normalization site: x -> normalized/combined/affined output.
template <typename T>
VarPtr<T> apply_norm_site(const VarPtr<T>& x, const NormConfig& cfg, const NormSiteParams<T>& p,
                          const std::function<void(const std::string&)>& warn = nullptr) {
  cfg.validate();
  const T eps = static_cast<T>(cfg.epsilon);
  switch (cfg.kind) {
    case NormKind::None:
      return x;
    case NormKind::Instance:
      return affine_channel(instance_norm(x, eps), p.gamma, p.beta);
    case NormKind::Layer:
      return affine_channel(layer_norm(x, eps), p.gamma, p.beta);
    case NormKind::Group:
      return affine_channel(group_norm(x, cfg.groups, eps), p.gamma, p.beta);
    case NormKind::Batch:
      return affine_channel(batch_norm_train(x, eps), p.gamma, p.beta);
    case NormKind::CombinerOnly: {
      auto mixed = combine(instance_norm(x, eps), layer_norm(x, eps), p.rho, p.rho2, cfg.combiner);
      return affine_channel(mixed, p.gamma, p.beta);
    }
    case NormKind::Iln: {
      auto mixed = combine(instance_norm(x, eps), layer_norm(x, eps), p.rho, p.rho2, cfg.combiner);
      const int64_t g = iln_group_count(x->value.shape().c, cfg.strict_groups, warn);
      return affine_channel(group_norm(mixed, g, eps), p.gamma, p.beta);
    }
  }
  throw ValueError("apply_norm_site: unknown norm kind");
}

// Module-level ILN forward over plain tensors (sigmoid combiner).
template <typename T>
Tensor<T> iln_forward(const Tensor<T>& x, T rho, const Tensor<T>& gamma, const Tensor<T>& beta,
                      T eps, bool strict_groups = false) {
  NoGradGuard ng;
  NormConfig cfg;
  cfg.kind = NormKind::Iln;
  cfg.epsilon = static_cast<double>(eps);
  cfg.combiner = CombinerKind::Sigmoid;
  cfg.strict_groups = strict_groups;
  NormSiteParams<T> p;
  p.rho = make_constant(Tensor<T>::scalar(rho));
  p.gamma = make_constant(gamma);
  p.beta = make_constant(beta);
  return apply_norm_site(make_constant(x), cfg, p)->value;
}

}  // namespace normkit
