#pragma once

// The encoder-generator game: objectives, reconstruction losses and the
// alternating trainer.
//
// Generator step (encoder frozen):   minimize  Delta(e(g(z)) || Z) + lambda * L_Z
// Encoder step (generator frozen):   maximize  Delta(e(g(z)) || Z) - Delta(e(x) || Z) - mu * L_X
//
// L_Z = mean ||z - e(g(z))||_2^2, L_X = mean ||x - g(e(x))||_1. Each step sees
// only its own reconstruction loss.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "age/datagen.hpp"
#include "age/divergence.hpp"
#include "age/error.hpp"
#include "age/latentspace.hpp"
#include "age/ndcore.hpp"
#include "age/nets.hpp"

namespace age::game {

using nd::Tape;
using nd::Tensor;
using nd::Var;
using nets::Network;

struct GameConfig {
  std::size_t latent_dim = 2;
  double lambda = 1000.0;
  double mu = 10.0;
  std::size_t gen_updates_per_enc = 2;
  std::size_t batch_size = 64;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  divergence::Method divergence_method = divergence::Method::ParametricKl;
  Prior prior = Prior::Sphere;
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::vector<std::size_t> generator_hidden{64, 64};
  nets::Activation activation = nets::Activation::LeakyRelu;
  double leaky_slope = 0.2;
  bool condition = false;

  void validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (!(mu >= 0.0)) throw std::invalid_argument("mu must be >= 0");
    if (gen_updates_per_enc < 1) throw std::invalid_argument("gen_updates_per_enc must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (prior == Prior::Sphere && latent_dim < 2) throw std::invalid_argument("latent_dim must be >= 2 for the sphere prior");
    if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
    if (divergence_method == divergence::Method::KnnKl) {
      throw std::invalid_argument("divergence_method must be parametric-kl or paper-normalization");
    }
  }
};

struct TrainMetrics {
  std::size_t iter = 0;
  double div_real = 0.0;
  double div_fake = 0.0;
  double loss_latent = 0.0;
  double loss_data = 0.0;
  double v2 = 0.0;
};

inline nets::MlpSpec encoder_spec(const GameConfig& cfg, std::size_t data_dim, std::size_t condition_dim) {
  auto spec = nets::make_spec(data_dim, condition_dim, cfg.encoder_hidden, cfg.latent_dim,
                              cfg.prior == Prior::Sphere ? nets::OutputTransform::SphereProjection
                                                         : nets::OutputTransform::Identity,
                              cfg.activation);
  spec.leaky_slope = cfg.leaky_slope;
  return spec;
}

inline nets::MlpSpec generator_spec(const GameConfig& cfg, std::size_t data_dim, std::size_t condition_dim) {
  auto spec = nets::make_spec(cfg.latent_dim, condition_dim, cfg.generator_hidden, data_dim,
                              nets::OutputTransform::Identity, cfg.activation);
  spec.leaky_slope = cfg.leaky_slope;
  return spec;
}

// Which players' parameters receive gradients on a tape.
struct Tracking {
  bool generator = false;
  bool encoder = false;
};

namespace detail {
inline std::optional<Var> maybe_const(Tape& tape, const Tensor* t) {
  if (t == nullptr) return std::nullopt;
  return tape.constant(*t);
}
}  // namespace detail

// mean_i ||x_i - g(e(x_i))||_1
inline Var data_reconstruction_loss(Tape& tape, Network& g, Network& e, const Tensor& x,
                                    const Tensor* condition, Tracking track) {
  auto c = detail::maybe_const(tape, condition);
  Var xv = tape.constant(x);
  Var codes = e.forward(tape, xv, c, track.encoder);
  Var recon = g.forward(tape, codes, c, track.generator);
  return nd::sum(nd::abs(xv - recon)) * (1.0 / static_cast<double>(x.rows()));
}

// mean_i ||z_i - e(g(z_i))||_2^2
inline Var latent_reconstruction_loss(Tape& tape, Network& g, Network& e, const Tensor& z,
                                      const Tensor* condition, Tracking track) {
  auto c = detail::maybe_const(tape, condition);
  Var zv = tape.constant(z);
  Var fake = g.forward(tape, zv, c, track.generator);
  Var codes = e.forward(tape, fake, c, track.encoder);
  return nd::sum(nd::square(zv - codes)) * (1.0 / static_cast<double>(z.rows()));
}

inline double data_reconstruction_loss(Network& g, Network& e, const Tensor& x, const Tensor* condition = nullptr) {
  Tape tape;
  return data_reconstruction_loss(tape, g, e, x, condition, {}).item();
}

inline double latent_reconstruction_loss(Network& g, Network& e, const Tensor& z, const Tensor* condition = nullptr) {
  Tape tape;
  return latent_reconstruction_loss(tape, g, e, z, condition, {}).item();
}

struct GeneratorTerms {
  Var objective;  // minimized
  Var div_fake;
  Var loss_latent;
};

// Delta(e(g(z)) || Z) + lambda * L_Z with the encoder frozen. The
// -Delta(e(X) || Z) term of V2 is constant in the generator and omitted.
inline GeneratorTerms generator_objective(Tape& tape, Network& g, Network& e, const Tensor& z,
                                          const Tensor* condition, const GameConfig& cfg) {
  if (z.rows() < 2) throw DomainError("generator_objective: batch size must be >= 2");
  auto c = detail::maybe_const(tape, condition);
  Var zv = tape.constant(z);
  Var fake = g.forward(tape, zv, c, true);
  Var codes = e.forward(tape, fake, c, false);
  Var div_fake = divergence::prior_divergence(codes, cfg.prior, cfg.divergence_method);
  Var loss_latent = nd::sum(nd::square(zv - codes)) * (1.0 / static_cast<double>(z.rows()));
  Var objective = cfg.lambda == 0.0 ? div_fake : div_fake + loss_latent * cfg.lambda;
  return {objective, div_fake, loss_latent};
}

struct EncoderTerms {
  Var objective;  // maximized
  Var div_fake;
  Var div_real;
  Var loss_data;
};

// Delta(e(g(z)) || Z) - Delta(e(x) || Z) - mu * L_X with the generator frozen.
inline EncoderTerms encoder_objective(Tape& tape, Network& g, Network& e, const Tensor& x, const Tensor& z,
                                      const Tensor* condition_x, const Tensor* condition_z,
                                      const GameConfig& cfg) {
  if (x.rows() < 2 || z.rows() < 2) throw DomainError("encoder_objective: batch size must be >= 2");
  auto cx = detail::maybe_const(tape, condition_x);
  auto cz = detail::maybe_const(tape, condition_z);
  Var xv = tape.constant(x);
  Var fake = g.forward(tape, tape.constant(z), cz, false);
  Var fake_codes = e.forward(tape, fake, cz, true);
  Var real_codes = e.forward(tape, xv, cx, true);
  Var div_fake = divergence::prior_divergence(fake_codes, cfg.prior, cfg.divergence_method);
  Var div_real = divergence::prior_divergence(real_codes, cfg.prior, cfg.divergence_method);
  Var recon = g.forward(tape, real_codes, cx, false);
  Var loss_data = nd::sum(nd::abs(xv - recon)) * (1.0 / static_cast<double>(x.rows()));
  Var objective = div_fake - div_real;
  if (cfg.mu != 0.0) objective = objective - loss_data * cfg.mu;
  return {objective, div_fake, div_real, loss_data};
}

// Delta(e(g(z)) || e(x)) as the KL between the two fitted diagonal Gaussians.
inline Var v1_objective(Tape& tape, Network& g, Network& e, const Tensor& z, const Tensor& x,
                        const Tensor* condition_z = nullptr, const Tensor* condition_x = nullptr) {
  auto cz = detail::maybe_const(tape, condition_z);
  auto cx = detail::maybe_const(tape, condition_x);
  Var fake_codes = e.forward(tape, g.forward(tape, tape.constant(z), cz, false), cz, false);
  Var real_codes = e.forward(tape, tape.constant(x), cx, false);
  return divergence::kl_between_diag_gaussians(divergence::fit_diag_gaussian(fake_codes),
                                               divergence::fit_diag_gaussian(real_codes));
}

inline double v1_objective(Network& g, Network& e, const Tensor& z, const Tensor& x) {
  Tape tape;
  return v1_objective(tape, g, e, z, x).item();
}

// V1 on already-encoded batches.
inline double v1_from_codes(const Tensor& fake_codes, const Tensor& real_codes) {
  Tape tape;
  return divergence::kl_between_diag_gaussians(divergence::fit_diag_gaussian(tape.constant(fake_codes)),
                                               divergence::fit_diag_gaussian(tape.constant(real_codes)))
      .item();
}

// ---- trainer ----

// Epoch-wise shuffled minibatches without replacement.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t n, std::size_t batch, Rng& rng) : order_(n), batch_(batch), rng_(&rng) {
    if (n < batch) {
      throw DomainError("dataset has " + std::to_string(n) + " samples, fewer than batch size " + std::to_string(batch));
    }
    std::iota(order_.begin(), order_.end(), 0);
    reshuffle();
  }

  std::vector<std::size_t> next() {
    if (pos_ + batch_ > order_.size()) reshuffle();
    std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return idx;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), *rng_);
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  Rng* rng_;
};

inline Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& idx) {
  Tensor out(idx.size(), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto row = src.row_span(idx[i]);
    std::copy(row.begin(), row.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * src.cols()));
  }
  return out;
}

struct Players {
  Network encoder;
  Network generator;
};

// Deterministic per-seed initialization of both networks.
inline Players init_players(const GameConfig& cfg, std::size_t data_dim, std::size_t condition_dim,
                            std::uint64_t seed) {
  std::seed_seq seq{seed, std::uint64_t{0x41474531}};
  std::uint64_t seeds[2];
  seq.generate(seeds, seeds + 2);
  return {nets::init_network(encoder_spec(cfg, data_dim, condition_dim), seeds[0]),
          nets::init_network(generator_spec(cfg, data_dim, condition_dim), seeds[1])};
}

struct TrainResult {
  Network encoder;
  Network generator;
  std::vector<TrainMetrics> log;
  bool aborted = false;
  std::string diagnostic;
};

using MetricsSink = std::function<void(const TrainMetrics&)>;

class Trainer {
 public:
  Trainer(const data::Dataset& data, GameConfig cfg, std::uint64_t seed)
      : data_(&data), cfg_(std::move(cfg)), rng_(seed), sampler_(data.size(), cfg_.batch_size, rng_) {
    cfg_.validate();
    if (cfg_.condition) {
      if (!data.has_labels()) throw std::invalid_argument("conditional training needs a labelled dataset");
      classes_ = data.num_classes();
    }
    Players p = init_players(cfg_, data.dim(), classes_, seed);
    encoder_ = std::move(p.encoder);
    generator_ = std::move(p.generator);
    for (auto* st : {&enc_opt_, &gen_opt_}) st->config = {cfg_.lr, cfg_.beta1, cfg_.beta2, 1e-8};
  }

  Network& encoder() { return encoder_; }
  Network& generator() { return generator_; }
  const GameConfig& config() const { return cfg_; }
  std::size_t condition_dim() const { return classes_; }

  // One encoder ascent step followed by gen_updates_per_enc generator descent
  // steps. Returns false (parameters restored) if any loss is non-finite.
  bool step(TrainMetrics& m, std::string* diagnostic = nullptr) {
    const auto enc_backup = encoder_.params();
    const auto gen_backup = generator_.params();
    auto fail = [&](const std::string& what) {
      encoder_.params() = enc_backup;
      generator_.params() = gen_backup;
      if (diagnostic != nullptr) *diagnostic = what;
      return false;
    };

    {
      const auto idx = sampler_.next();
      const Tensor x = gather_rows(data_->samples, idx);
      const Tensor z = latent::sample_prior(cfg_.prior, cfg_.batch_size, cfg_.latent_dim, rng_);
      std::optional<Tensor> cx, cz;
      if (classes_ > 0) {
        cx = data::one_hot(gather_labels(idx), classes_);
        cz = random_conditions();
      }
      Tape tape;
      EncoderTerms t = encoder_objective(tape, generator_, encoder_, x, z, cx ? &*cx : nullptr,
                                         cz ? &*cz : nullptr, cfg_);
      m.div_fake = t.div_fake.item();
      m.div_real = t.div_real.item();
      m.loss_data = t.loss_data.item();
      m.v2 = m.div_fake - m.div_real;
      if (!std::isfinite(t.objective.item())) {
        return fail("non-finite encoder objective at iteration " + std::to_string(iter_ + 1));
      }
      encoder_.zero_grad();
      tape.backward(-t.objective);
      auto ps = encoder_.param_ptrs();
      nd::adam_step(ps, enc_opt_);
    }

    for (std::size_t k = 0; k < cfg_.gen_updates_per_enc; ++k) {
      const Tensor z = latent::sample_prior(cfg_.prior, cfg_.batch_size, cfg_.latent_dim, rng_);
      std::optional<Tensor> cz;
      if (classes_ > 0) cz = random_conditions();
      Tape tape;
      GeneratorTerms t = generator_objective(tape, generator_, encoder_, z, cz ? &*cz : nullptr, cfg_);
      m.loss_latent = t.loss_latent.item();
      if (!std::isfinite(t.objective.item())) {
        return fail("non-finite generator objective at iteration " + std::to_string(iter_ + 1));
      }
      generator_.zero_grad();
      tape.backward(t.objective);
      auto ps = generator_.param_ptrs();
      nd::adam_step(ps, gen_opt_);
    }
    m.iter = ++iter_;
    return true;
  }

  Tensor random_conditions() {
    std::uniform_int_distribution<std::size_t> pick(0, data_->size() - 1);
    std::vector<std::size_t> labels(cfg_.batch_size);
    for (auto& l : labels) l = data_->labels[pick(rng_)];
    return data::one_hot(labels, classes_);
  }

 private:
  std::vector<std::size_t> gather_labels(const std::vector<std::size_t>& idx) const {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(data_->labels[i]);
    return out;
  }

  const data::Dataset* data_;
  GameConfig cfg_;
  Rng rng_;
  MinibatchSampler sampler_;
  std::size_t classes_ = 0;
  Network encoder_;
  Network generator_;
  nd::AdamState enc_opt_;
  nd::AdamState gen_opt_;
  std::size_t iter_ = 0;
};

inline TrainResult train(const data::Dataset& data, const GameConfig& cfg, std::size_t iters,
                         std::uint64_t seed, const MetricsSink& sink = {}) {
  Trainer trainer(data, cfg, seed);
  TrainResult result;
  result.log.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    TrainMetrics m;
    std::string diag;
    if (!trainer.step(m, &diag)) {
      result.aborted = true;
      result.diagnostic = diag;
      break;
    }
    result.log.push_back(m);
    if (sink) sink(m);
  }
  result.encoder = trainer.encoder();
  result.generator = trainer.generator();
  return result;
}

// Samples n points from the generator; conditional generators need labels.
inline Tensor generate(Network& g, const Tensor& z, const Tensor* condition = nullptr) {
  return g.forward(z, condition);
}

}  // namespace age::game
