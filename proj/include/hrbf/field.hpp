#pragma once

// Closed-form HRBF quasi-interpolant
//
//   f(x) = - sum_j < r_j^2 / (20 + eta r_j^2) n_j , grad psi(x - p_j) >
//
// positive on the side the normals point to. Derivatives are exact sums of
// the per-kernel Hessian and third-derivative contractions.

#include "hrbf/csrbf.hpp"
#include "hrbf/kernel_set.hpp"

#include <optional>
#include <ranges>

namespace hrbf {

inline constexpr double kDefaultEta = 1.0e6;

struct FieldSample {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
  Mat3 hessian = Mat3::Zero();
  int support_count = 0;
};

enum class FieldOrder { kValue = 0, kGradient = 1, kHessian = 2 };

struct FieldOptions {
  double eta = kDefaultEta;
  /// Core radius, as a fraction of each support, inside which a kernel's
  /// third-derivative term is faded out with a smoothstep. 0 gives the exact
  /// Hessian; curvature maps use a positive value to suppress the jump of
  /// D3 psi at kernel centers.
  double hessian_core = 0.0;
};

inline double hermite_coefficient(double support, double eta) {
  return support * support / (20.0 + eta * support * support);
}

/// Accumulates one kernel into `s`. Returns false if x lies outside its support.
inline bool accumulate_kernel(const Vec3& x, const Kernel& k, const FieldOptions& opt, FieldOrder order,
                              FieldSample& s) {
  const Vec3 o = x - k.center;
  const double r = k.support;
  const double d2 = o.squaredNorm();
  if (d2 >= r * r) return false;
  const double d = std::sqrt(d2);
  const double u = d / r;
  const double sm = 1.0 - u;
  const double w = hermite_coefficient(r, opt.eta);
  const double a = -20.0 * sm * sm * sm / (r * r);
  const double on = o.dot(k.normal);
  s.value -= w * a * on;
  ++s.support_count;
  if (order == FieldOrder::kValue) return true;

  // Hess psi . n = a n + B o (o.n)
  const double r3 = r * r * r;
  const double bd = 60.0 * sm * sm / r3;  // B * d
  Vec3 hn = a * k.normal;
  if (d > 0.0) hn += (bd / d) * on * o;
  s.gradient -= w * hn;
  if (order == FieldOrder::kGradient || d == 0.0) return true;

  double fade = 1.0;
  if (opt.hessian_core > 0.0) fade = smoothstep01(u / opt.hessian_core);
  if (fade == 0.0) return true;
  const double c = -60.0 * (1.0 - u * u) / r3;
  const Vec3 e = o / d;
  const double en = e.dot(k.normal);
  const double scale = -w * fade;
  s.hessian.diagonal().array() += scale * bd * en;
  s.hessian.noalias() += (scale * bd) * (k.normal * e.transpose() + e * k.normal.transpose());
  s.hessian.noalias() += (scale * c * en) * e * e.transpose();
  return true;
}

/// Evaluates the field over every kernel in `kernels` (a range of Kernel);
/// nullopt when no kernel's support covers x.
template <std::ranges::input_range R>
std::optional<FieldSample> sample_field(const Vec3& x, R&& kernels, const FieldOptions& opt = {},
                                        FieldOrder order = FieldOrder::kHessian) {
  FieldSample s;
  for (const Kernel& k : kernels) accumulate_kernel(x, k, opt, order, s);
  if (s.support_count == 0) return std::nullopt;
  return s;
}

/// Same, restricted to `ids` of `all`.
inline std::optional<FieldSample> sample_field(const Vec3& x, std::span<const Kernel> all,
                                               std::span<const std::uint32_t> ids, const FieldOptions& opt,
                                               FieldOrder order) {
  FieldSample s;
  for (std::uint32_t id : ids) accumulate_kernel(x, all[id], opt, order, s);
  if (s.support_count == 0) return std::nullopt;
  return s;
}

inline std::optional<FieldSample> sample_field(const Vec3& x, const KernelSet& ks, const FieldOptions& opt = {},
                                               FieldOrder order = FieldOrder::kHessian) {
  const auto ids = ks.covering(x);
  return sample_field(x, ks.kernels(), ids, opt, order);
}

inline std::optional<double> hrbf_value(const Vec3& x, const KernelSet& ks, double eta = kDefaultEta) {
  auto s = sample_field(x, ks, FieldOptions{eta}, FieldOrder::kValue);
  if (!s) return std::nullopt;
  return s->value;
}

inline std::optional<Vec3> hrbf_gradient(const Vec3& x, const KernelSet& ks, double eta = kDefaultEta) {
  auto s = sample_field(x, ks, FieldOptions{eta}, FieldOrder::kGradient);
  if (!s) return std::nullopt;
  return s->gradient;
}

inline std::optional<Mat3> hrbf_hessian(const Vec3& x, const KernelSet& ks, double eta = kDefaultEta) {
  auto s = sample_field(x, ks, FieldOptions{eta}, FieldOrder::kHessian);
  if (!s) return std::nullopt;
  return s->hessian;
}

}  // namespace hrbf
