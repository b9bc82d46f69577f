#pragma once

// Exact checks of the equilibrium and reciprocity results on finite spaces.
// Strategies are deterministic maps between finite sets, the divergence is
// total variation unless a test injects another one, and a saddle point is a
// pure-strategy equilibrium over the fully enumerated strategy sets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "age/error.hpp"
#include "age/latentspace.hpp"

namespace age::theory {

inline constexpr double kTol = 1e-12;

struct FiniteDistribution {
  std::vector<double> probs;

  FiniteDistribution() = default;
  explicit FiniteDistribution(std::vector<double> p) : probs(std::move(p)) { validate(); }

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }

  void validate() const {
    if (probs.empty()) throw ShapeError("FiniteDistribution: K must be >= 1");
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) throw DomainError("FiniteDistribution: negative or NaN mass");
      total += p;
    }
    if (std::abs(total - 1.0) > kTol) {
      throw DomainError("FiniteDistribution: masses sum to " + std::to_string(total));
    }
  }

  bool in_support(std::size_t i) const { return probs[i] > kTol; }
};

inline bool approx_equal(const FiniteDistribution& a, const FiniteDistribution& b, double tol = 1e-9) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > tol) return false;
  return true;
}

inline std::string to_string(const FiniteDistribution& d) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < d.size(); ++i) os << (i ? "," : "") << d[i];
  os << ")";
  return os.str();
}

struct FiniteMap {
  std::vector<std::size_t> targets;  // targets[i] in [0, dst_size)
  std::size_t dst_size = 0;

  FiniteMap() = default;
  FiniteMap(std::vector<std::size_t> t, std::size_t dst) : targets(std::move(t)), dst_size(dst) {
    for (std::size_t v : targets) {
      if (v >= dst_size) {
        throw ShapeError("FiniteMap: target " + std::to_string(v) + " out of range [0," + std::to_string(dst_size) + ")");
      }
    }
  }

  std::size_t src_size() const { return targets.size(); }
  std::size_t operator()(std::size_t i) const { return targets[i]; }

  static FiniteMap identity(std::size_t k) {
    std::vector<std::size_t> t(k);
    std::iota(t.begin(), t.end(), 0);
    return {t, k};
  }
  static FiniteMap constant(std::size_t src, std::size_t dst, std::size_t value) {
    return {std::vector<std::size_t>(src, value), dst};
  }
};

inline std::string to_string(const FiniteMap& f) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < f.src_size(); ++i) os << (i ? "," : "") << f(i);
  os << "]";
  return os.str();
}

// (h o f)(i) = h(f(i))
inline FiniteMap compose(const FiniteMap& h, const FiniteMap& f) {
  if (f.dst_size != h.src_size()) throw ShapeError("compose: dimensions do not chain");
  std::vector<std::size_t> t(f.src_size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = h(f(i));
  return {t, h.dst_size};
}

inline FiniteDistribution pushforward(const FiniteDistribution& d, const FiniteMap& f) {
  if (d.size() != f.src_size()) {
    throw ShapeError("pushforward: distribution has " + std::to_string(d.size()) + " atoms, map domain has " +
                     std::to_string(f.src_size()));
  }
  FiniteDistribution out;
  out.probs.assign(f.dst_size, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (f(i) >= f.dst_size) throw ShapeError("pushforward: target index out of range");
    out.probs[f(i)] += d[i];
  }
  return out;
}

inline double total_variation(const FiniteDistribution& p, const FiniteDistribution& q) {
  if (p.size() != q.size()) {
    throw ShapeError("finite_divergence: sizes " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

using FiniteDivergence = std::function<double(const FiniteDistribution&, const FiniteDistribution&)>;

inline double finite_divergence(const FiniteDistribution& p, const FiniteDistribution& q) {
  return total_variation(p, q);
}

// All dst^src maps, in lexicographic order of (f(0), f(1), ...).
inline std::vector<FiniteMap> enumerate_maps(std::size_t src, std::size_t dst) {
  std::size_t count = 1;
  for (std::size_t i = 0; i < src; ++i) count *= dst;
  std::vector<FiniteMap> maps;
  maps.reserve(count);
  for (std::size_t code = 0; code < count; ++code) {
    std::vector<std::size_t> t(src);
    std::size_t c = code;
    for (std::size_t i = src; i-- > 0;) {
      t[i] = c % dst;
      c /= dst;
    }
    maps.emplace_back(std::move(t), dst);
  }
  return maps;
}

inline bool injective_on(const FiniteMap& f, const std::vector<std::size_t>& atoms) {
  std::set<std::size_t> seen;
  for (std::size_t a : atoms)
    if (!seen.insert(f(a)).second) return false;
  return true;
}

inline std::vector<std::size_t> support(const FiniteDistribution& d) {
  std::vector<std::size_t> s;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.in_support(i)) s.push_back(i);
  return s;
}

// ---- Lemma: X = Y iff e#X = e#Y for every map e ----

struct LemmaReport {
  bool distributions_equal = false;
  std::size_t maps_checked = 0;
  std::vector<FiniteMap> separating;  // maps with e#X != e#Y
  std::vector<std::string> violations;
};

inline LemmaReport verify_lemma_all_e(const FiniteDistribution& x, const FiniteDistribution& y,
                                      const FiniteDivergence& div = finite_divergence) {
  if (x.size() != y.size()) throw ShapeError("verify_lemma_all_e: X and Y must share K");
  if (x.size() > 6) throw DomainError("verify_lemma_all_e: K must be <= 6");
  LemmaReport r;
  r.distributions_equal = div(x, y) <= kTol;
  for (const FiniteMap& e : enumerate_maps(x.size(), x.size())) {
    ++r.maps_checked;
    if (div(pushforward(x, e), pushforward(y, e)) > kTol) r.separating.push_back(e);
  }
  if (r.distributions_equal && !r.separating.empty()) {
    r.violations.push_back("X = Y but map " + to_string(r.separating.front()) + " separates them");
  }
  if (!r.distributions_equal && r.separating.empty()) {
    r.violations.push_back("X != Y but no map separates them");
  }
  return r;
}

// ---- games ----

struct Saddle {
  std::size_t generator = 0;  // index into the enumerated generators
  std::size_t encoder = 0;
  double value = 0.0;
};

struct GameReport {
  bool feasible = true;
  std::string flag;  // why the theorem's assumption fails, when it does
  std::size_t generators = 0;
  std::size_t encoders = 0;
  std::vector<Saddle> saddles;
  std::set<std::size_t> saddle_generators;
  std::set<std::size_t> aligned_generators;
  bool all_aligned = true;
  bool aligned_admit_saddle = true;
  bool equal_values = true;
  double value = 0.0;
  // Encoders at a saddle whose pushforward of X differs from Y (game 2 only).
  std::vector<std::size_t> optimal_encoders_off_reference;
  std::vector<std::string> violations;
};

namespace detail {

// payoff[g * E + e]; the generator minimizes, the encoder maximizes.
inline std::vector<Saddle> pure_saddles(const std::vector<double>& payoff, std::size_t G, std::size_t E) {
  std::vector<double> col_min(E, INFINITY), row_max(G, -INFINITY);
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t e = 0; e < E; ++e) {
      const double v = payoff[g * E + e];
      col_min[e] = std::min(col_min[e], v);
      row_max[g] = std::max(row_max[g], v);
    }
  }
  std::vector<Saddle> out;
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t e = 0; e < E; ++e) {
      const double v = payoff[g * E + e];
      if (v <= col_min[e] + kTol && v >= row_max[g] - kTol) out.push_back({g, e, v});
    }
  }
  return out;
}

inline void summarize(GameReport& r, const std::vector<FiniteMap>& gens, const FiniteDistribution& x,
                      const FiniteDistribution& z) {
  for (std::size_t g = 0; g < gens.size(); ++g) {
    if (approx_equal(pushforward(z, gens[g]), x)) r.aligned_generators.insert(g);
  }
  for (const Saddle& s : r.saddles) r.saddle_generators.insert(s.generator);
  for (std::size_t g : r.saddle_generators) {
    if (!r.aligned_generators.contains(g)) r.all_aligned = false;
  }
  for (std::size_t g : r.aligned_generators) {
    if (!r.saddle_generators.contains(g)) r.aligned_admit_saddle = false;
  }
  if (!r.saddles.empty()) {
    r.value = r.saddles.front().value;
    for (const Saddle& s : r.saddles)
      if (std::abs(s.value - r.value) > 1e-9) r.equal_values = false;
  }
  // Pure saddles of a zero-sum game always share one value.
  if (!r.equal_values) r.violations.push_back("saddle values differ");
}

inline void check_sizes(const FiniteDistribution& x, const FiniteDistribution& z) {
  if (x.size() > 4 || z.size() > 4) throw DomainError("saddle certification needs K_x, K_z <= 4");
  if (z.size() < 2) throw DomainError("saddle certification needs K_z >= 2");
}

}  // namespace detail

// Some deterministic g: [K_z] -> [K_x] with g#Z = X.
inline bool perfect_generator_exists(const FiniteDistribution& x, const FiniteDistribution& z) {
  for (const FiniteMap& g : enumerate_maps(z.size(), x.size()))
    if (approx_equal(pushforward(z, g), x)) return true;
  return false;
}

// Some e: [K_x] -> [K_z], injective on supp(X), with e#X = Y.
inline bool invertible_encoder_exists(const FiniteDistribution& x, const FiniteDistribution& y) {
  const auto sx = support(x);
  for (const FiniteMap& e : enumerate_maps(x.size(), y.size()))
    if (injective_on(e, sx) && approx_equal(pushforward(x, e), y)) return true;
  return false;
}

// V1(g, e) = Delta(e#(g#Z) || e#X).
inline GameReport certify_game1_saddles(const FiniteDistribution& x, const FiniteDistribution& z,
                                        const FiniteDivergence& div = finite_divergence) {
  detail::check_sizes(x, z);
  GameReport r;
  const auto gens = enumerate_maps(z.size(), x.size());
  const auto encs = enumerate_maps(x.size(), z.size());
  r.generators = gens.size();
  r.encoders = encs.size();
  std::vector<FiniteDistribution> fake(gens.size());
  for (std::size_t g = 0; g < gens.size(); ++g) fake[g] = pushforward(z, gens[g]);
  std::vector<FiniteDistribution> real_codes(encs.size());
  for (std::size_t e = 0; e < encs.size(); ++e) real_codes[e] = pushforward(x, encs[e]);
  std::vector<double> payoff(gens.size() * encs.size());
  for (std::size_t g = 0; g < gens.size(); ++g)
    for (std::size_t e = 0; e < encs.size(); ++e)
      payoff[g * encs.size() + e] = div(pushforward(fake[g], encs[e]), real_codes[e]);
  r.saddles = detail::pure_saddles(payoff, gens.size(), encs.size());
  detail::summarize(r, gens, x, z);

  r.feasible = !r.aligned_generators.empty();
  if (!r.feasible) {
    r.flag = "perfect-generator assumption violated";
    return r;
  }
  if (!r.all_aligned) r.violations.push_back("game 1: a saddle generator does not satisfy g#Z = X");
  // Every aligned g pairs with every e.
  for (std::size_t g : r.aligned_generators) {
    std::size_t with_g = 0;
    for (const Saddle& s : r.saddles) with_g += s.generator == g;
    if (with_g != encs.size()) {
      r.violations.push_back("game 1: aligned generator " + to_string(gens[g]) + " is not a saddle against every encoder");
      break;
    }
  }
  if (r.saddles.empty()) r.violations.push_back("game 1: no saddle point despite a perfect generator");
  return r;
}

// V2(g, e) = Delta(e#(g#Z) || Y) - Delta(e#X || Y).
inline GameReport certify_game2_saddles(const FiniteDistribution& x, const FiniteDistribution& z,
                                        const FiniteDistribution& y,
                                        const FiniteDivergence& div = finite_divergence) {
  detail::check_sizes(x, z);
  if (y.size() != z.size()) throw ShapeError("certify_game2_saddles: Y must live on the latent space");
  GameReport r;
  const auto gens = enumerate_maps(z.size(), x.size());
  const auto encs = enumerate_maps(x.size(), z.size());
  r.generators = gens.size();
  r.encoders = encs.size();
  std::vector<FiniteDistribution> fake(gens.size());
  for (std::size_t g = 0; g < gens.size(); ++g) fake[g] = pushforward(z, gens[g]);
  std::vector<double> real_term(encs.size());
  for (std::size_t e = 0; e < encs.size(); ++e) real_term[e] = div(pushforward(x, encs[e]), y);
  std::vector<double> payoff(gens.size() * encs.size());
  for (std::size_t g = 0; g < gens.size(); ++g)
    for (std::size_t e = 0; e < encs.size(); ++e)
      payoff[g * encs.size() + e] = div(pushforward(fake[g], encs[e]), y) - real_term[e];
  r.saddles = detail::pure_saddles(payoff, gens.size(), encs.size());
  detail::summarize(r, gens, x, z);

  std::set<std::size_t> off;
  for (const Saddle& s : r.saddles)
    if (!approx_equal(pushforward(x, encs[s.encoder]), y)) off.insert(s.encoder);
  r.optimal_encoders_off_reference.assign(off.begin(), off.end());

  if (r.aligned_generators.empty()) {
    r.feasible = false;
    r.flag = "perfect-generator assumption violated";
    return r;
  }
  if (!invertible_encoder_exists(x, y)) {
    r.feasible = false;
    r.flag = "invertible-encoder assumption violated";
    return r;
  }
  if (!r.all_aligned) r.violations.push_back("game 2: a saddle generator does not satisfy g#Z = X");
  if (!r.aligned_admit_saddle) r.violations.push_back("game 2: an aligned generator admits no saddle encoder");
  if (r.saddles.empty()) r.violations.push_back("game 2: no saddle point");
  if (!r.saddles.empty() && std::abs(r.value) > 1e-9) {
    r.violations.push_back("game 2: saddle value " + std::to_string(r.value) + " is not 0");
  }
  return r;
}

// Checks for every g and every e injective on supp(X) u supp(g#Z) that
// e#(g#Z) = e#X forces g#Z = X.
inline std::vector<std::string> verify_invertible_separation(const FiniteDistribution& x, const FiniteDistribution& z,
                                                             std::size_t latent_size) {
  std::vector<std::string> violations;
  const auto sx = support(x);
  for (const FiniteMap& g : enumerate_maps(z.size(), x.size())) {
    const FiniteDistribution fake = pushforward(z, g);
    std::vector<std::size_t> atoms = sx;
    for (std::size_t a : support(fake))
      if (!x.in_support(a)) atoms.push_back(a);
    for (const FiniteMap& e : enumerate_maps(x.size(), latent_size)) {
      if (!injective_on(e, atoms)) continue;
      if (approx_equal(pushforward(fake, e), pushforward(x, e)) && !approx_equal(fake, x)) {
        violations.push_back("injective e " + to_string(e) + " equates g#Z and X for g " + to_string(g));
      }
    }
  }
  return violations;
}

// ---- reciprocity ----

struct ReciprocityReport {
  bool hypothesis_holds = false;  // h(f(w)) = w on supp(W)
  bool inverse_on_q = false;      // f(h(q)) = q on supp(Q)
  bool pushforward_matches = false;  // h#Q = W
  std::string note;
  std::vector<std::string> violations;
};

inline ReciprocityReport verify_reciprocity(const FiniteDistribution& w, const FiniteMap& f, const FiniteMap& h) {
  if (f.src_size() != w.size() || h.src_size() != f.dst_size || h.dst_size != w.size()) {
    throw ShapeError("verify_reciprocity: need f: [K_w] -> [K_q] and h: [K_q] -> [K_w]");
  }
  ReciprocityReport r;
  r.hypothesis_holds = true;
  for (std::size_t a : support(w)) {
    if (h(f(a)) != a) {
      r.hypothesis_holds = false;
      r.note = "hypothesis failed: h(f(" + std::to_string(a) + ")) = " + std::to_string(h(f(a)));
      break;
    }
  }
  const FiniteDistribution q = pushforward(w, f);
  r.inverse_on_q = true;
  for (std::size_t b : support(q))
    if (f(h(b)) != b) r.inverse_on_q = false;
  r.pushforward_matches = approx_equal(pushforward(q, h), w);
  if (r.hypothesis_holds) {
    if (!r.inverse_on_q) r.violations.push_back("f(h(q)) != q on supp(Q)");
    if (!r.pushforward_matches) r.violations.push_back("h#Q != W");
  }
  return r;
}

// ---- suite ----

struct Certificate {
  std::string instance;
  std::string kind;  // lemma | game1 | game2 | separation | reciprocity
  bool feasible = true;
  std::string flag;
  std::size_t saddle_count = 0;
  bool all_aligned = true;
  double value = 0.0;
  std::vector<std::string> violations;
  std::string detail;
};

inline Certificate certificate(const std::string& name, const std::string& kind, const GameReport& r) {
  Certificate c{name, kind, r.feasible, r.flag, r.saddles.size(), r.all_aligned, r.value, r.violations, ""};
  std::ostringstream os;
  os << r.generators << " generators x " << r.encoders << " encoders, " << r.saddles.size() << " saddles, "
     << r.aligned_generators.size() << " aligned generators";
  if (kind == "game2") os << ", " << r.optimal_encoders_off_reference.size() << " saddle encoders with e#X != Y";
  c.detail = os.str();
  return c;
}

inline FiniteDistribution random_distribution(std::size_t k, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (double& v : p) total += (v = u(rng));
  for (double& v : p) v /= total;
  // Renormalise so the masses sum to 1 as exactly as doubles allow.
  double rest = 1.0;
  for (std::size_t i = 0; i + 1 < k; ++i) rest -= p[i];
  p.back() = rest;
  return FiniteDistribution(p);
}

inline FiniteMap random_map(std::size_t src, std::size_t dst, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, dst - 1);
  std::vector<std::size_t> t(src);
  for (auto& v : t) v = pick(rng);
  return {t, dst};
}

inline FiniteMap random_injection(std::size_t src, std::size_t dst, Rng& rng) {
  if (src > dst) throw DomainError("random_injection: src > dst");
  std::vector<std::size_t> perm(dst);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  perm.resize(src);
  return {perm, dst};
}

// The fixed examples plus `trials` random feasible instances with K <= max_k.
inline std::vector<Certificate> run_suite(std::size_t max_k, std::size_t trials, std::uint64_t seed,
                                          const FiniteDivergence& div = finite_divergence) {
  if (max_k < 2 || max_k > 4) throw DomainError("verify-theory: max_K must be in [2, 4]");
  std::vector<Certificate> out;
  auto add_lemma = [&](const std::string& name, const FiniteDistribution& a, const FiniteDistribution& b) {
    LemmaReport l = verify_lemma_all_e(a, b, div);
    Certificate c{name, "lemma", true, "", 0, true, 0.0, l.violations, ""};
    c.detail = std::to_string(l.maps_checked) + " maps, " + std::to_string(l.separating.size()) + " separating";
    out.push_back(c);
  };
  auto add_reciprocity = [&](const std::string& name, const FiniteDistribution& w, const FiniteMap& f,
                             const FiniteMap& h) {
    ReciprocityReport rr = verify_reciprocity(w, f, h);
    Certificate c{name, "reciprocity", rr.hypothesis_holds, rr.note, 0, true, 0.0, rr.violations, ""};
    c.detail = std::string("hypothesis ") + (rr.hypothesis_holds ? "holds" : "fails") + ", inverse on Q " +
               (rr.inverse_on_q ? "yes" : "no") + ", h#Q = W " + (rr.pushforward_matches ? "yes" : "no");
    out.push_back(c);
  };

  const FiniteDistribution half({0.5, 0.5});
  const FiniteDistribution point({1.0, 0.0});
  add_lemma("fixed/lemma-equal", half, half);
  add_lemma("fixed/lemma-unequal", FiniteDistribution({0.6, 0.4}), half);
  out.push_back(certificate("fixed/game1-uniform", "game1", certify_game1_saddles(half, half, div)));
  out.push_back(certificate("fixed/game1-point", "game1", certify_game1_saddles(point, half, div)));
  out.push_back(certificate("fixed/game1-infeasible", "game1",
                            certify_game1_saddles(FiniteDistribution({0.7, 0.3}), half, div)));
  out.push_back(certificate("fixed/game2-uniform", "game2", certify_game2_saddles(half, half, half, div)));
  out.push_back(certificate("fixed/game2-point", "game2", certify_game2_saddles(point, half, half, div)));
  const FiniteDistribution third({1.0 / 3.0, 1.0 / 3.0, 1.0 - 2.0 / 3.0});
  add_reciprocity("fixed/reciprocity-bijection", third, FiniteMap({2, 0, 1}, 3), FiniteMap({1, 2, 0}, 3));
  add_reciprocity("fixed/reciprocity-support", FiniteDistribution({0.5, 0.5, 0.0}), FiniteMap({1, 2, 2}, 3),
                  FiniteMap({0, 0, 1}, 3));

  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::string name = "trial/" + std::to_string(t);
    std::uniform_int_distribution<std::size_t> kz_pick(2, max_k);
    const std::size_t kz = kz_pick(rng);
    std::uniform_int_distribution<std::size_t> kx_pick(2, kz);
    const std::size_t kx = kx_pick(rng);
    // X = g0#Z guarantees a perfect generator; Y = e0#X with e0 injective
    // guarantees an invertible encoder.
    const FiniteDistribution z = random_distribution(kz, rng);
    const FiniteDistribution x = pushforward(z, random_map(kz, kx, rng));
    const FiniteDistribution y = pushforward(x, random_injection(kx, kz, rng));

    add_lemma(name + "/lemma", x, random_distribution(kx, rng));
    const GameReport g1 = certify_game1_saddles(x, z, div);
    GameReport g2 = certify_game2_saddles(x, z, y, div);
    // Both games must single out the same saddle generators.
    if (g1.feasible && g2.feasible && g1.saddle_generators != g2.saddle_generators) {
      g2.violations.push_back("games 1 and 2 disagree on the set of saddle generators");
    }
    out.push_back(certificate(name + "/game1", "game1", g1));
    out.push_back(certificate(name + "/game2", "game2", g2));

    Certificate sep{name + "/separation", "separation", true, "", 0, true, 0.0,
                    verify_invertible_separation(x, z, kz), ""};
    out.push_back(sep);

    // f injective on supp(W), h a left inverse on the image.
    const FiniteDistribution w = x;
    const FiniteMap f = random_injection(kx, kz, rng);
    std::vector<std::size_t> h_targets = random_map(kz, kx, rng).targets;
    for (std::size_t a = 0; a < kx; ++a) h_targets[f(a)] = a;
    add_reciprocity(name + "/reciprocity", w, f, FiniteMap(h_targets, kx));
  }

  return out;
}

inline std::size_t count_violations(const std::vector<Certificate>& certs) {
  std::size_t n = 0;
  for (const Certificate& c : certs) n += c.violations.size();
  return n;
}

}  // namespace age::theory
