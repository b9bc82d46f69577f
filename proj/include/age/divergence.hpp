#pragma once

// Divergence of an empirical latent batch from a reference distribution.
//
// Two routes: a parametric one that fits a diagonal Gaussian to the batch and
// evaluates its closed-form KL from N(0, I) (differentiable, used for
// training), and a nonparametric one built on the Kozachenko-Leonenko k-NN
// entropy estimator (monitoring only).

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "age/error.hpp"
#include "age/latentspace.hpp"
#include "age/ndcore.hpp"

namespace age::divergence {

using nd::Tensor;
using nd::Var;

inline constexpr double kStdFloor = 1e-6;

enum class Method {
  ParametricKl,
  // The printed normalization: -M/2 + (1/M) sum[(s^2+m^2)/2 - log s].
  PaperNormalization,
  KnnKl,
};

inline const char* method_name(Method m) {
  switch (m) {
    case Method::ParametricKl: return "parametric-kl";
    case Method::PaperNormalization: return "paper-normalization";
    case Method::KnnKl: return "knn-kl";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "parametric-kl") return Method::ParametricKl;
  if (s == "paper-normalization") return Method::PaperNormalization;
  if (s == "knn-kl") return Method::KnnKl;
  throw InputError("unknown divergence method '" + s +
                   "' (expected parametric-kl|paper-normalization|knn-kl)");
}

struct DivergenceEstimate {
  double value = 0.0;
  Method method = Method::ParametricKl;
  std::vector<double> per_dim_mean;
  std::vector<double> per_dim_std;  // parametric only
  std::size_t k = 0;                // knn only
};

struct GaussianFit {
  Var mean;  // (1, M)
  Var std;   // (1, M)
};

// Column means and population standard deviations, std floored at 1e-6.
inline GaussianFit fit_diag_gaussian(Var batch) {
  const std::size_t n = batch.rows();
  if (n < 2) throw DomainError("fit_diag_gaussian: need at least 2 rows, got " + std::to_string(n));
  Var m = nd::mean_over_rows(batch);
  Var centered = batch - nd::broadcast_row(m, n);
  Var var = nd::mean_over_rows(nd::square(centered));
  Var s = nd::sqrt(nd::clamp_min(var, kStdFloor * kStdFloor));
  return {m, s};
}

// sum_j [(s_j^2 + m_j^2)/2 - 1/2 - log s_j]: exact KL(prod N(m_j, s_j^2) || N(0, I)).
inline Var kl_vs_unit_gaussian(Var m, Var s) {
  Var per_dim = (nd::square(s) + nd::square(m)) * 0.5 - 0.5 - nd::log(s);
  return nd::sum(per_dim);
}

inline Var paper_normalized_kl(Var m, Var s) {
  const double dim = static_cast<double>(m.cols());
  Var per_dim = (nd::square(s) + nd::square(m)) * 0.5 - nd::log(s);
  return nd::sum(per_dim) * (1.0 / dim) - dim / 2.0;
}

// KL(prod N(m1, s1^2) || prod N(m2, s2^2)).
inline Var kl_between_diag_gaussians(const GaussianFit& p, const GaussianFit& q) {
  if (p.mean.cols() != q.mean.cols()) throw ShapeError("kl_between_diag_gaussians: dimension mismatch");
  Var diff = p.mean - q.mean;
  Var ratio = (nd::square(p.std) + nd::square(diff)) / (nd::square(q.std) * 2.0);
  Var per_dim = nd::log(q.std) - nd::log(p.std) + ratio - 0.5;
  return nd::sum(per_dim);
}

inline DivergenceEstimate kl_vs_unit_gaussian(const std::vector<double>& m, const std::vector<double>& s) {
  if (m.size() != s.size() || m.empty()) throw ShapeError("kl_vs_unit_gaussian: m and s must have equal nonzero length");
  for (double v : s) {
    if (!(v > 0.0)) throw DomainError("kl_vs_unit_gaussian: s_j must be positive");
  }
  nd::Tape tape;
  Var mv = tape.constant(Tensor(1, m.size(), m));
  Var sv = tape.constant(Tensor(1, s.size(), s));
  return {kl_vs_unit_gaussian(mv, sv).item(), Method::ParametricKl, m, s, 0};
}

// Parametric estimate straight from a batch (no gradients).
inline DivergenceEstimate parametric_estimate(const Tensor& batch, Method method = Method::ParametricKl) {
  nd::Tape tape;
  GaussianFit fit = fit_diag_gaussian(tape.constant(batch));
  Var value = method == Method::PaperNormalization ? paper_normalized_kl(fit.mean, fit.std)
                                                   : kl_vs_unit_gaussian(fit.mean, fit.std);
  return {value.item(), method, fit.mean.value().values(), fit.std.value().values(), 0};
}

// The game statistic Delta(codes || prior). Codes from the sphere prior are
// rescaled by sqrt(M) so the reference is the prior's moment-matched Gaussian
// N(0, I/M); on sphere-supported batches this differs from the unscaled
// unit-Gaussian KL by the constant 1/2 - M/2 + (M/2) log M.
inline Var prior_divergence(Var codes, Prior prior, Method method = Method::ParametricKl) {
  if (method == Method::KnnKl) throw std::invalid_argument("prior_divergence: knn-kl is not differentiable");
  Var standardized = prior == Prior::Sphere
                         ? codes * std::sqrt(static_cast<double>(codes.cols()))
                         : codes;
  GaussianFit fit = fit_diag_gaussian(standardized);
  return method == Method::PaperNormalization ? paper_normalized_kl(fit.mean, fit.std)
                                              : kl_vs_unit_gaussian(fit.mean, fit.std);
}

inline double prior_divergence(const Tensor& codes, Prior prior, Method method = Method::ParametricKl) {
  nd::Tape tape;
  return prior_divergence(tape.constant(codes), prior, method).item();
}

// ---- nonparametric route ----

// psi(x) for x > 0; recurrence up to x >= 10 then the asymptotic series.
inline double digamma(double x) {
  if (!(x > 0.0)) throw DomainError("digamma: argument must be positive");
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv -
            inv2 * (1.0 / 12.0 -
                    inv2 * (1.0 / 120.0 -
                            inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
  return result;
}

// log volume of the unit ball in R^dim.
inline double log_unit_ball_volume(std::size_t dim) {
  const double d = static_cast<double>(dim);
  return 0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d + 1.0);
}

namespace detail {

// Exact duplicate rows get a deterministic 1e-9 offset per repeat so that no
// k-NN distance is zero.
inline Tensor jitter_duplicates(const Tensor& batch) {
  const std::size_t n = batch.rows();
  const std::size_t dim = batch.cols();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto row_less = [&](std::size_t a, std::size_t b) {
    auto ra = batch.row_span(a), rb = batch.row_span(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(order.begin(), order.end(), row_less);
  Tensor out = batch;
  std::size_t repeat = 0;
  for (std::size_t i = 1; i < n; ++i) {
    auto prev = batch.row_span(order[i - 1]);
    auto cur = batch.row_span(order[i]);
    if (std::equal(prev.begin(), prev.end(), cur.begin())) {
      ++repeat;
      for (std::size_t c = 0; c < dim; ++c)
        out(order[i], c) += 1e-9 * static_cast<double>(repeat) * (c % 2 == 0 ? 1.0 : -1.0);
    } else {
      repeat = 0;
    }
  }
  return out;
}

}  // namespace detail

// Kozachenko-Leonenko differential entropy estimate in nats:
// psi(n) - psi(k) + log V_M + (M/n) sum_i log rho_{i,k}.
inline double knn_entropy(const Tensor& batch, std::size_t k) {
  const std::size_t n = batch.rows();
  const std::size_t dim = batch.cols();
  if (k < 1) throw DomainError("knn_entropy: k must be >= 1");
  if (n <= k) {
    throw DomainError("knn_entropy: need n > k, got n=" + std::to_string(n) + " k=" + std::to_string(k));
  }
  const Tensor pts = detail::jitter_duplicates(batch);
  std::vector<double> dist2(n - 1);
  double log_rho_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto pi = pts.row_span(i);
    std::size_t w = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      auto pj = pts.row_span(j);
      double d2 = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double d = pi[c] - pj[c];
        d2 += d * d;
      }
      dist2[w++] = d2;
    }
    std::nth_element(dist2.begin(), dist2.begin() + static_cast<std::ptrdiff_t>(k - 1), dist2.end());
    log_rho_sum += 0.5 * std::log(dist2[k - 1]);
  }
  const double nd_ = static_cast<double>(n);
  return digamma(nd_) - digamma(static_cast<double>(k)) + log_unit_ball_volume(dim) +
         static_cast<double>(dim) / nd_ * log_rho_sum;
}

// KL(batch || N(0, I)) = -H(batch) - E[log phi(x)], entropy by k-NN and the
// cross-entropy term evaluated analytically on the sample.
inline DivergenceEstimate knn_kl_vs_unit_gaussian(const Tensor& batch, std::size_t k) {
  const double entropy = knn_entropy(batch, k);
  const std::size_t n = batch.rows();
  const std::size_t dim = batch.cols();
  const double log_norm = -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi);
  double mean_log_density = 0.0;
  std::vector<double> means(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      ss += batch(i, c) * batch(i, c);
      means[c] += batch(i, c);
    }
    mean_log_density += log_norm - 0.5 * ss;
  }
  mean_log_density /= static_cast<double>(n);
  for (double& m : means) m /= static_cast<double>(n);
  DivergenceEstimate est;
  est.value = -entropy - mean_log_density;
  est.method = Method::KnnKl;
  est.per_dim_mean = std::move(means);
  est.k = k;
  return est;
}

}  // namespace age::divergence
