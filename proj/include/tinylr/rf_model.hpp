#pragma once
// Two-layer random feature network f(x) = <theta, phi(x)> / sqrt(m) with a
// frozen first layer phi_i(x) = s(<u_i, x>).

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "tinylr/activation.hpp"
#include "tinylr/recipes.hpp"
#include "tinylr/rng.hpp"
#include "tinylr/sampling.hpp"

namespace tinylr {

struct FeatureBank {
  Eigen::MatrixXd U;  // d x m, column i is u_i
  WeightDist dist = WeightDist::sphere;
  std::uint64_t seed = 0;

  int d() const { return static_cast<int>(U.rows()); }
  int m() const { return static_cast<int>(U.cols()); }
};

inline FeatureBank init_features(int d, int m, WeightDist dist, std::uint64_t seed) {
  if (d < 1 || m < 1) throw std::invalid_argument("init_features: d and m must be positive");
  FeatureBank b;
  b.dist = dist;
  b.seed = seed;
  b.U.resize(d, m);
  Stream s = Stream(seed).child("bank");
  for (int i = 0; i < m; ++i) sample_weight(dist, s, b.U.col(i));
  return b;
}

struct RandomFeatureModel {
  FeatureBank bank;
  Activation act;
  Eigen::VectorXd theta;

  RandomFeatureModel() = default;
  RandomFeatureModel(FeatureBank b, ActKind k) : bank(std::move(b)), act{k}, theta(Eigen::VectorXd::Zero(bank.m())) {}

  int d() const { return bank.d(); }
  int m() const { return bank.m(); }
  double inv_sqrt_m() const { return 1.0 / std::sqrt(static_cast<double>(m())); }
};

// Bound R on |phi_i(x)| over the input space and the weight support.
inline double feature_bound(ActKind act, WeightDist w, const InputLaw& law) {
  if (act != ActKind::identity) return 1.0;
  const double umax = w == WeightDist::sphere ? 1.0 : std::sqrt(static_cast<double>(law.d));
  const double xmax = law.on_box() ? std::sqrt(static_cast<double>(law.d)) : 1.0;
  return umax * xmax;
}

inline Eigen::VectorXd featurize(const FeatureBank& bank, const Activation& act, const Eigen::VectorXd& x) {
  if (x.size() != bank.d()) throw std::invalid_argument("featurize: dimension mismatch");
  Eigen::VectorXd phi = bank.U.transpose() * x;
  activate_inplace(act.kind, phi);
  return phi;
}

// Phi(i, k) = phi_k(x_i) for the rows of X.
inline Eigen::MatrixXd featurize_rows(const FeatureBank& bank, const Activation& act, const Eigen::MatrixXd& X) {
  if (X.cols() != bank.d()) throw std::invalid_argument("featurize: dimension mismatch");
  Eigen::MatrixXd P = X * bank.U;
  activate_inplace(act.kind, P);
  return P;
}

inline double forward(const RandomFeatureModel& model, const Eigen::VectorXd& x) {
  return model.inv_sqrt_m() * model.theta.dot(featurize(model.bank, model.act, x));
}

inline Eigen::VectorXd batch_forward(const RandomFeatureModel& model, const Eigen::MatrixXd& X) {
  return model.inv_sqrt_m() * (featurize_rows(model.bank, model.act, X) * model.theta);
}

struct LossGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

// Batch-mean loss 0.5 (f - y)^2 and its exact gradient in theta.
inline LossGrad loss_and_grad(const RandomFeatureModel& model, const LabeledBatch& batch) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  const Eigen::MatrixXd P = featurize_rows(model.bank, model.act, batch.X);
  const double s = model.inv_sqrt_m();
  const Eigen::VectorXd r = s * (P * model.theta) - batch.y;
  LossGrad out;
  out.loss = 0.5 * r.squaredNorm() / static_cast<double>(n);
  out.grad = (s / static_cast<double>(n)) * (P.transpose() * r);
  return out;
}

// ------------------------------------------------------------ precision

enum class Precision : int { f64 = 0, f32 = 1, f16 = 2 };

// Gap between 1.0 and the next representable value.
inline double machine_gap(Precision p) {
  switch (p) {
    case Precision::f64: return 0x1.0p-52;
    case Precision::f32: return 0x1.0p-23;
    case Precision::f16: return 0x1.0p-10;
  }
  return 0x1.0p-52;
}

// Round to nearest (ties to even) keeping the mantissa width of the mode.
// Half precision is emulated for the mantissa only; its exponent range is not.
inline double round_to(Precision p, double x) {
  switch (p) {
    case Precision::f64: return x;
    case Precision::f32: return static_cast<double>(static_cast<float>(x));
    case Precision::f16: {
      if (x == 0.0 || !std::isfinite(x)) return x;
      int e = 0;
      const double f = std::frexp(x, &e);
      return std::ldexp(std::nearbyint(std::ldexp(f, 11)), e - 11);
    }
  }
  return x;
}

// ------------------------------------------------------------ checkpoints

// Layout, little endian: u64 d, u64 m, u32 activation, u32 weight law,
// u64 seed, then m doubles of theta. The bank is regenerated from the seed.
namespace detail {
template <class T>
void put_le(std::ostream& os, T v) {
  std::array<unsigned char, sizeof(T)> b{};
  std::uint64_t u = 0;
  std::memcpy(&u, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b.data()), sizeof(T));
}
template <class T>
T get_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> b{};
  is.read(reinterpret_cast<char*>(b.data()), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated stream");
  std::uint64_t u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  T v;
  std::memcpy(&v, &u, sizeof(T));
  return v;
}
}  // namespace detail

inline void save_checkpoint(const RandomFeatureModel& model, std::ostream& os) {
  detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(model.d()));
  detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(model.m()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.act.kind));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.bank.dist));
  detail::put_le<std::uint64_t>(os, model.bank.seed);
  for (Eigen::Index i = 0; i < model.theta.size(); ++i) detail::put_le<double>(os, model.theta[i]);
}

inline RandomFeatureModel load_checkpoint(std::istream& is) {
  const auto d = detail::get_le<std::uint64_t>(is);
  const auto m = detail::get_le<std::uint64_t>(is);
  const auto act = detail::get_le<std::uint32_t>(is);
  const auto dist = detail::get_le<std::uint32_t>(is);
  const auto seed = detail::get_le<std::uint64_t>(is);
  if (act > 2 || dist > 1 || d == 0 || m == 0 || d > (1u << 20) || m > (1u << 26))
    throw std::runtime_error("checkpoint: bad header");
  RandomFeatureModel model(init_features(static_cast<int>(d), static_cast<int>(m), static_cast<WeightDist>(dist), seed),
                           static_cast<ActKind>(act));
  for (std::uint64_t i = 0; i < m; ++i) model.theta[static_cast<Eigen::Index>(i)] = detail::get_le<double>(is);
  return model;
}

}  // namespace tinylr
