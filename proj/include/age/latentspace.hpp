#pragma once

// The latent prior: uniform distribution on the unit sphere S^{M-1}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "age/error.hpp"
#include "age/ndcore.hpp"

namespace age {

using Rng = std::mt19937_64;

enum class Prior { Sphere, Gaussian };

inline const char* prior_name(Prior p) { return p == Prior::Sphere ? "sphere" : "gaussian"; }

inline Prior parse_prior(const std::string& s) {
  if (s == "sphere") return Prior::Sphere;
  if (s == "gaussian") return Prior::Gaussian;
  throw InputError("unknown prior '" + s + "' (expected sphere|gaussian)");
}

namespace latent {

using nd::Tensor;

// n x M batch of i.i.d. standard normals.
inline Tensor sample_gaussian(std::size_t n, std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out(n, dim);
  for (double& v : out.data()) v = normal(rng);
  return out;
}

// Normalized Gaussians: exactly uniform on S^{dim-1}.
inline Tensor sample_uniform_sphere(std::size_t n, std::size_t dim, Rng& rng) {
  if (dim < 2) throw DomainError("sample_uniform_sphere: M must be >= 2, got " + std::to_string(dim));
  if (n == 0) throw DomainError("sample_uniform_sphere: n must be >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out(n, dim);
  for (std::size_t r = 0; r < n; ++r) {
    double ss = 0.0;
    do {
      ss = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        out(r, c) = normal(rng);
        ss += out(r, c) * out(r, c);
      }
    } while (ss < 1e-24);
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t c = 0; c < dim; ++c) out(r, c) *= inv;
  }
  return out;
}

inline Tensor sample_uniform_sphere(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  return sample_uniform_sphere(n, dim, rng);
}

inline Tensor sample_prior(Prior prior, std::size_t n, std::size_t dim, Rng& rng) {
  return prior == Prior::Sphere ? sample_uniform_sphere(n, dim, rng) : sample_gaussian(n, dim, rng);
}

// Differentiable row normalization; see nd::row_normalize.
inline nd::Var project_to_sphere(nd::Var x) { return nd::row_normalize(x); }

inline Tensor project_to_sphere(const Tensor& x) {
  nd::Tape tape;
  return project_to_sphere(tape.constant(x)).value();
}

inline double norm(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

// Great-circle interpolation between unit vectors.
inline std::vector<double> slerp(std::span<const double> z1, std::span<const double> z2, double t) {
  if (z1.size() != z2.size()) throw ShapeError("slerp: endpoint dimensions differ");
  if (t < 0.0 || t > 1.0) throw DomainError("slerp: t must lie in [0,1]");
  for (auto z : {z1, z2}) {
    if (std::abs(norm(z) - 1.0) > 1e-6) throw DomainError("slerp: endpoints must be unit vectors");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < z1.size(); ++i) dot += z1[i] * z2[i];
  dot = std::clamp(dot, -1.0, 1.0);
  if (dot < -1.0 + 1e-12) throw GeometryError("slerp: antipodal endpoints, arc is ambiguous");
  const double omega = std::acos(dot);
  std::vector<double> out(z1.size());
  if (omega < 1e-9) {
    for (std::size_t i = 0; i < z1.size(); ++i) out[i] = (1.0 - t) * z1[i] + t * z2[i];
  } else {
    const double so = std::sin(omega);
    const double a = std::sin((1.0 - t) * omega) / so;
    const double b = std::sin(t * omega) / so;
    for (std::size_t i = 0; i < z1.size(); ++i) out[i] = a * z1[i] + b * z2[i];
  }
  // Renormalize away the rounding drift of the sine weights.
  const double n = norm(out);
  for (double& v : out) v /= n;
  return out;
}

}  // namespace latent
}  // namespace age
