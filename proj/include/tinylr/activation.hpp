#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tinylr {

enum class ActKind : int { identity = 0, tanh = 1, scaled_erf = 2 };

inline std::string_view to_string(ActKind k) {
  switch (k) {
    case ActKind::identity: return "identity";
    case ActKind::tanh: return "tanh";
    case ActKind::scaled_erf: return "scaled-erf";
  }
  return "?";
}

inline ActKind parse_activation(std::string_view s) {
  if (s == "identity") return ActKind::identity;
  if (s == "tanh") return ActKind::tanh;
  if (s == "scaled-erf" || s == "erf") return ActKind::scaled_erf;
  throw std::invalid_argument("unknown activation: " + std::string(s));
}

// erf(sqrt(pi)/2 * a) has unit slope at the origin, like tanh.
inline constexpr double kErfScale = 0.88622692545275801365;

inline double activate(ActKind k, double a) {
  switch (k) {
    case ActKind::identity: return a;
    case ActKind::tanh: return std::tanh(a);
    case ActKind::scaled_erf: return std::erf(kErfScale * a);
  }
  return a;
}

struct Activation {
  ActKind kind = ActKind::tanh;

  double lipschitz() const { return 1.0; }
  // Finite for the saturating kinds; identity is bounded only through the
  // compact input space, see RandomFeatureModel::feature_bound.
  double sup_bound() const {
    return kind == ActKind::identity ? std::numeric_limits<double>::infinity() : 1.0;
  }
  double operator()(double a) const { return activate(kind, a); }
};

namespace detail {

// Rational approximation near zero, exp form elsewhere. Agrees with std::tanh
// to a few ulp and vectorizes.
inline void tanh_inplace(double* z, Eigen::Index n) {
  constexpr double P0 = -9.64399179425052238628E-1, P1 = -9.92877231001918586564E1,
                   P2 = -1.61468768441708447952E3;
  constexpr double Q0 = 1.12811678491632931402E2, Q1 = 2.23548839060100448583E3,
                   Q2 = 4.84406305325125486048E3;
  constexpr Eigen::Index kChunk = 1024;
  alignas(64) double e[kChunk];
  for (Eigen::Index off = 0; off < n; off += kChunk) {
    const Eigen::Index len = std::min(kChunk, n - off);
    double* zz = z + off;
    // Pad to whole packets so every entry takes the same code path no matter
    // where it sits in the buffer.
    const Eigen::Index padded = (len + 7) / 8 * 8;
    for (Eigen::Index i = 0; i < len; ++i) e[i] = 2.0 * std::min(std::abs(zz[i]), 40.0);
    for (Eigen::Index i = len; i < padded; ++i) e[i] = 0.0;
    Eigen::Map<Eigen::ArrayXd, Eigen::Aligned64> E(e, padded);
    E = E.exp();
    for (Eigen::Index i = 0; i < len; ++i) {
      const double x = zz[i];
      const double x2 = x * x;
      const double small = x + x * x2 * (((P0 * x2 + P1) * x2 + P2) / (((x2 + Q0) * x2 + Q1) * x2 + Q2));
      double big = 1.0 - 2.0 / (e[i] + 1.0);
      big = x < 0 ? -big : big;
      zz[i] = x2 < 0.390625 ? small : big;
    }
  }
}

}  // namespace detail

// Applies the activation to every entry of a contiguous buffer.
inline void activate_inplace(ActKind k, double* z, Eigen::Index n) {
  switch (k) {
    case ActKind::identity: return;
    case ActKind::tanh: detail::tanh_inplace(z, n); return;
    case ActKind::scaled_erf:
      for (Eigen::Index i = 0; i < n; ++i) z[i] = std::erf(kErfScale * z[i]);
      return;
  }
}

template <class Derived>
void activate_inplace(ActKind k, Eigen::PlainObjectBase<Derived>& m) {
  activate_inplace(k, m.derived().data(), m.size());
}

}  // namespace tinylr
