#pragma once
// Infinite-width kernel K(x, x') = E_u[s(<u,x>) s(<u,x'>)] estimated over a
// fixed bank of n_u weight draws, or in closed form for the identity.

#include <Eigen/Dense>
#include <cstdint>
#include <memory>

#include "tinylr/activation.hpp"
#include "tinylr/rng.hpp"
#include "tinylr/sampling.hpp"

namespace tinylr {

struct KernelSpec {
  ActKind act = ActKind::tanh;
  WeightDist wdist = WeightDist::sphere;
  int n_u = 1 << 16;
  std::uint64_t seed = 0x6b65726e656cULL;
};

struct KernelEstimate {
  double value = 0.0;
  double std_err = 0.0;
};

class KernelBank {
 public:
  KernelBank(const KernelSpec& spec, int d) : spec_(spec), d_(d) {
    if (spec.act == ActKind::identity) return;
    U_.resize(spec.n_u, d);
    Stream s = Stream(spec.seed).child("kernel-bank").child(static_cast<std::uint64_t>(d));
    Eigen::VectorXd u(d);
    for (int j = 0; j < spec.n_u; ++j) {
      sample_weight(spec.wdist, s, u);
      U_.row(j) = u.transpose();
    }
  }

  const KernelSpec& spec() const { return spec_; }
  int dim() const { return d_; }
  bool closed_form() const { return spec_.act == ActKind::identity; }

  // Rows of X mapped to bank features sigma(U x), one row per input.
  Eigen::MatrixXd features(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd F = X * U_.transpose();
    activate_inplace(spec_.act, F);
    return F;
  }

  KernelEstimate value(const Eigen::VectorXd& x, const Eigen::VectorXd& xp) const {
    if (closed_form()) return {coord_second_moment(spec_.wdist, d_) * x.dot(xp), 0.0};
    Eigen::VectorXd a = U_ * x, b = U_ * xp;
    activate_inplace(spec_.act, a);
    activate_inplace(spec_.act, b);
    const Eigen::ArrayXd p = a.array() * b.array();
    const double n = static_cast<double>(p.size());
    const double mean = p.sum() / n;
    const double var = (p - mean).square().sum() / (n - 1.0);
    return {mean, std::sqrt(var / n)};
  }

  // Gram matrix over the rows of X, written as a product of feature factors
  // so it is exactly symmetric and positive semidefinite up to rounding.
  Eigen::MatrixXd gram(const Eigen::MatrixXd& X) const {
    if (closed_form()) return coord_second_moment(spec_.wdist, d_) * (X * X.transpose());
    const Eigen::MatrixXd F = features(X);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(X.rows(), X.rows());
    G.selfadjointView<Eigen::Lower>().rankUpdate(F, 1.0 / spec_.n_u);
    return G.selfadjointView<Eigen::Lower>();
  }

 private:
  KernelSpec spec_;
  int d_;
  Eigen::MatrixXd U_;
};

}  // namespace tinylr
