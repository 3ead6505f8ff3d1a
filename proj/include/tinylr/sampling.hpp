#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

#include "tinylr/rng.hpp"

namespace tinylr {

enum class WeightDist : int { sphere = 0, box = 1 };

inline std::string_view to_string(WeightDist w) { return w == WeightDist::sphere ? "sphere" : "box"; }

inline WeightDist parse_weight_dist(std::string_view s) {
  if (s == "sphere" || s == "uniform-on-unit-sphere") return WeightDist::sphere;
  if (s == "box" || s == "uniform-on-box") return WeightDist::box;
  throw std::invalid_argument("unknown weight distribution: " + std::string(s));
}

// Second moment E[u_k^2] of one coordinate.
inline double coord_second_moment(WeightDist w, int d) { return w == WeightDist::sphere ? 1.0 / d : 1.0 / 3.0; }

template <class V>
void sample_sphere(Stream& s, V&& out) {
  const Eigen::Index d = out.size();
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      out[i] = s.normal();
      n2 += out[i] * out[i];
    }
  } while (n2 == 0.0);
  const double inv = 1.0 / std::sqrt(n2);
  for (Eigen::Index i = 0; i < d; ++i) out[i] *= inv;
}

template <class V>
void sample_box(Stream& s, V&& out) {
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = 2.0 * s.uniform() - 1.0;
}

template <class V>
void sample_weight(WeightDist w, Stream& s, V&& out) {
  if (w == WeightDist::sphere)
    sample_sphere(s, out);
  else
    sample_box(s, out);
}

// Uniform draw from the cap {x on the sphere : angle(x, center) <= width}.
// A width of pi or more is the whole sphere.
template <class V>
void sample_cap(Stream& s, const Eigen::VectorXd& center, double width, V&& out) {
  const Eigen::Index d = center.size();
  if (width >= std::numbers::pi) {
    sample_sphere(s, out);
    return;
  }
  if (d == 1) {
    for (Eigen::Index i = 0; i < d; ++i) out[i] = center[i];
    return;
  }
  // Polar angle has density proportional to sin^(d-2) on [0, width].
  const double smax = std::sin(std::min(width, std::numbers::pi / 2));
  double psi = 0.0;
  for (;;) {
    psi = width * s.uniform();
    if (d == 2 || smax == 0.0) break;
    if (s.uniform() <= std::pow(std::sin(psi) / smax, static_cast<double>(d - 2))) break;
  }
  Eigen::VectorXd g(d);
  double n2 = 0.0;
  do {
    for (Eigen::Index i = 0; i < d; ++i) g[i] = s.normal();
    g -= g.dot(center) * center;
    n2 = g.squaredNorm();
  } while (n2 < 1e-24);
  g /= std::sqrt(n2);
  const double c = std::cos(psi), sn = std::sin(psi);
  for (Eigen::Index i = 0; i < d; ++i) out[i] = c * center[i] + sn * g[i];
}

// Fraction of the sphere's surface covered by a cap of the given width.
inline double cap_area_fraction(int d, double width) {
  if (width >= std::numbers::pi) return 1.0;
  if (width <= 0.0) return 0.0;
  if (d == 1) return 0.5;
  if (d == 2) return width / std::numbers::pi;
  // Integral of sin^(d-2) by composite Simpson; smooth integrand.
  auto integ = [d](double w) {
    const int n = 4096;
    const double h = w / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double f = std::pow(std::sin(i * h), d - 2);
      acc += f * (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0));
    }
    return acc * h / 3.0;
  };
  return integ(width) / integ(std::numbers::pi);
}

}  // namespace tinylr
