#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "tinylr/rng.hpp"

namespace tinylr {

struct QuadRule {
  std::vector<double> t, w;  // nodes and probability weights (sum to 1)
};

// Gauss rule for the symmetric weight (1 - t^2)^alpha on [-1, 1], alpha > -1,
// built from the Gegenbauer recurrence (Golub-Welsch).
inline QuadRule gauss_gegenbauer(int n, double alpha) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b2 = k == 1 ? 1.0 / (3.0 + 2.0 * alpha)
                             : k * (k + 2.0 * alpha) / ((2.0 * k + 2.0 * alpha + 1.0) * (2.0 * k + 2.0 * alpha - 1.0));
    J(k, k - 1) = J(k - 1, k) = std::sqrt(b2);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  QuadRule q;
  q.t.resize(n);
  q.w.resize(n);
  double tot = 0.0;
  for (int i = 0; i < n; ++i) {
    q.t[i] = es.eigenvalues()[i];
    q.w[i] = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
    tot += q.w[i];
  }
  for (double& w : q.w) w /= tot;
  // Symmetrize so odd integrands cancel to rounding.
  for (int i = 0; i < n / 2; ++i) {
    const double t = 0.5 * (q.t[n - 1 - i] - q.t[i]);
    const double w = 0.5 * (q.w[n - 1 - i] + q.w[i]);
    q.t[i] = -t;
    q.t[n - 1 - i] = t;
    q.w[i] = q.w[n - 1 - i] = w;
  }
  if (n % 2) q.t[n / 2] = 0.0;
  return q;
}

// Law of t = <u, e> for u uniform on the unit sphere in R^d.
inline QuadRule sphere_projection_rule(int d, int n = 64) {
  if (d == 1) return QuadRule{{-1.0, 1.0}, {0.5, 0.5}};
  return gauss_gegenbauer(n, 0.5 * (d - 3));
}

inline double radical_inverse(std::uint64_t i, int base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

inline int nth_prime(int k) {
  static const int p[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
                          59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131};
  if (k < 32) return p[k];
  int c = p[31];
  for (int found = 31; found < k;) {
    c += 2;
    bool prime = true;
    for (int q = 3; q * q <= c; q += 2)
      if (c % q == 0) { prime = false; break; }
    if (prime) ++found;
  }
  return c;
}

// Randomly shifted Halton points in [0,1)^d, one per row.
inline Eigen::MatrixXd shifted_halton(int n, int d, std::uint64_t seed) {
  Stream s(seed);
  Eigen::VectorXd shift(d);
  for (int k = 0; k < d; ++k) shift[k] = s.uniform();
  Eigen::MatrixXd P(n, d);
  for (int k = 0; k < d; ++k) {
    const int b = nth_prime(k);
    for (int i = 0; i < n; ++i) {
      double v = radical_inverse(static_cast<std::uint64_t>(i) + 1, b) + shift[k];
      P(i, k) = v - std::floor(v);
    }
  }
  return P;
}

}  // namespace tinylr
