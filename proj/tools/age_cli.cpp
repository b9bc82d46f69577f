// age: train, sample, reconstruct, interpolate, eval-divergence, verify-theory.
//
// Exit codes: 0 ok, 1 verification violation, 2 bad input, 3 numeric abort,
// 4 geometric degeneracy.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "age/agegame.hpp"
#include "age/datagen.hpp"
#include "age/divergence.hpp"
#include "age/error.hpp"
#include "age/latentspace.hpp"
#include "age/nets.hpp"
#include "age/runconfig.hpp"
#include "age/theorycheck.hpp"

namespace fs = std::filesystem;
using age::nd::Tensor;
using nlohmann::json;

namespace {

enum class LogLevel { Quiet, Info, Debug };

LogLevel g_log = LogLevel::Info;

void init_log() {
  const char* env = std::getenv("AGE_LOG");
  if (env == nullptr) return;
  const std::string v = env;
  if (v == "quiet") g_log = LogLevel::Quiet;
  else if (v == "info") g_log = LogLevel::Info;
  else if (v == "debug") g_log = LogLevel::Debug;
  else std::fprintf(stderr, "warning: AGE_LOG='%s' not one of quiet|info|debug, using info\n", env);
}

template <typename... Args>
void log_at(LogLevel level, const char* fmt, Args... args) {
  if (g_log < level) return;
  std::fprintf(stderr, fmt, args...);
  std::fputc('\n', stderr);
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

std::vector<double> parse_point(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw age::InputError(flag + ": '" + s + "' is not a comma-separated list of numbers");
    }
  }
  if (out.empty()) throw age::InputError(flag + ": empty point");
  return out;
}

std::string format9(double v) { return age::data::format_double(v, 9); }

void write_metrics_row(std::ostream& os, const age::game::TrainMetrics& m) {
  os << m.iter << ',' << format9(m.div_real) << ',' << format9(m.div_fake) << ',' << format9(m.loss_latent) << ','
     << format9(m.loss_data) << ',' << format9(m.v2) << '\n';
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw age::InputError("cannot create output directory " + dir + ": " + ec.message());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw age::InputError("cannot open for writing: " + path);
  return os;
}

// Loads a checkpoint and checks its role.
age::nets::Network load_role(const std::string& path, const std::string& role, age::nets::CheckpointMeta& meta) {
  auto net = age::nets::load_checkpoint(path, &meta);
  if (!meta.role.empty() && meta.role != role) {
    throw age::InputError(path + ": checkpoint holds a " + meta.role + ", expected a " + role);
  }
  return net;
}

Tensor conditions_for(const age::nets::Network& net, std::size_t n, std::optional<std::size_t> label,
                      std::vector<std::size_t>* labels_out = nullptr) {
  const std::size_t k = net.spec().condition_dim;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = label ? *label : i % k;
  if (label && *label >= k) throw age::InputError("--label " + std::to_string(*label) + " out of range for " + std::to_string(k) + " classes");
  if (labels_out != nullptr) *labels_out = labels;
  return age::data::one_hot(labels, k);
}

// ---- train ----

struct TrainFlags {
  std::optional<std::size_t> iters, batch_size, latent_dim, gen_updates;
  std::optional<double> lr, lambda, mu;
};

int cmd_train(const Globals& g, const TrainFlags& f) {
  age::config::RunConfig rc;
  if (!g.config.empty()) rc = age::config::load(g.config);
  if (g.seed) rc.seed = *g.seed;
  if (!g.out.empty()) rc.out_dir = g.out;
  if (f.iters) rc.iters = *f.iters;
  if (f.batch_size) rc.game.batch_size = *f.batch_size;
  if (f.latent_dim) rc.game.latent_dim = *f.latent_dim;
  if (f.gen_updates) rc.game.gen_updates_per_enc = *f.gen_updates;
  if (f.lr) rc.game.lr = *f.lr;
  if (f.lambda) rc.game.lambda = *f.lambda;
  if (f.mu) rc.game.mu = *f.mu;
  age::config::validate(rc);

  const auto ds = age::config::build_dataset(rc.data);
  ensure_dir(rc.out_dir);
  const fs::path out = rc.out_dir;
  {
    auto os = open_out((out / "config.resolved.json").string());
    os << age::config::resolved(rc).dump(2) << '\n';
  }

  age::game::Trainer trainer(ds, rc.game, rc.seed);
  auto metrics = open_out((out / "metrics.csv").string());
  metrics << "iter,div_real,div_fake,loss_latent,loss_data,v2\n";
  log_at(LogLevel::Info, "train: %zu samples, D=%zu, M=%zu, %zu iterations", ds.size(), ds.dim(),
         rc.game.latent_dim, rc.iters);

  std::string diagnostic;
  bool aborted = false;
  for (std::size_t i = 0; i < rc.iters; ++i) {
    age::game::TrainMetrics m;
    if (!trainer.step(m, &diagnostic)) {
      aborted = true;
      break;
    }
    write_metrics_row(metrics, m);
    const bool report = g_log == LogLevel::Debug || (g_log == LogLevel::Info && (m.iter % 1000 == 0 || m.iter == rc.iters));
    if (report) {
      log_at(LogLevel::Info, "iter %zu div_real=%.4f div_fake=%.4f L_Z=%.4f L_X=%.4f", m.iter, m.div_real,
             m.div_fake, m.loss_latent, m.loss_data);
    }
  }
  metrics.flush();

  const age::nets::CheckpointMeta enc_meta{"encoder", rc.game.prior};
  const age::nets::CheckpointMeta gen_meta{"generator", rc.game.prior};
  age::nets::save_checkpoint(trainer.encoder(), (out / "encoder.age").string(), enc_meta);
  age::nets::save_checkpoint(trainer.generator(), (out / "generator.age").string(), gen_meta);
  if (aborted) {
    std::fprintf(stderr, "error: %s; last good parameters saved in %s\n", diagnostic.c_str(), rc.out_dir.c_str());
    return 3;
  }
  return 0;
}

// ---- sample ----

struct SampleFlags {
  std::string ckpt;
  std::size_t n = 1000;
  std::optional<std::size_t> label;
  std::string prior;
  std::size_t height = 0, width = 0, grid_cols = 0;
};

int cmd_sample(const Globals& g, const SampleFlags& f) {
  age::nets::CheckpointMeta meta;
  auto gen = load_role(f.ckpt, "generator", meta);
  if (!f.prior.empty() && age::parse_prior(f.prior) != meta.prior) {
    throw age::InputError("--prior " + f.prior + " does not match checkpoint prior " + age::prior_name(meta.prior));
  }
  const std::size_t dim = gen.spec().output_dim;
  const bool raster = f.height > 0 || f.width > 0;
  if (raster && f.height * f.width != dim) {
    throw age::InputError("--height x --width = " + std::to_string(f.height * f.width) + " but generator outputs " +
                          std::to_string(dim) + " values");
  }
  const std::string out = g.out.empty() ? (raster ? "samples.ppm" : "samples.csv") : g.out;
  std::vector<std::size_t> labels;
  if (f.n == 0) {
    if (raster) throw age::InputError("sample: n must be >= 1 for raster output");
    auto os = open_out(out);
    age::data::write_csv(os, nullptr, gen.spec().condition_dim > 0 ? std::vector<std::size_t>{0} : labels, dim);
    return 0;
  }
  age::Rng rng(g.seed.value_or(0));
  const Tensor z = age::latent::sample_prior(meta.prior, f.n, gen.spec().input_dim, rng);
  std::optional<Tensor> cond;
  if (gen.spec().condition_dim > 0) cond = conditions_for(gen, f.n, f.label, &labels);
  const Tensor x = gen.forward(z, cond ? &*cond : nullptr);
  if (raster) {
    const std::size_t cols = f.grid_cols > 0 ? f.grid_cols : static_cast<std::size_t>(std::ceil(std::sqrt(double(f.n))));
    Tensor clipped = x;
    for (double& v : clipped.data()) v = std::clamp(v, -1.0, 1.0);
    age::data::render_raster_grid(clipped, f.height, f.width, cols, out);
  } else {
    auto os = open_out(out);
    age::data::write_csv(os, &x, labels, dim);
  }
  log_at(LogLevel::Info, "sample: wrote %zu samples to %s", f.n, out.c_str());
  return 0;
}

// ---- reconstruct ----

struct ReconstructFlags {
  std::string encoder, generator, data;
  bool identity_stubs = false;
};

int cmd_reconstruct(const Globals& g, const ReconstructFlags& f) {
  const auto ds = age::data::load_csv(f.data);
  Tensor recon;
  if (f.identity_stubs) {
    recon = ds.samples;
  } else {
    age::nets::CheckpointMeta em, gm;
    auto enc = load_role(f.encoder, "encoder", em);
    auto gen = load_role(f.generator, "generator", gm);
    if (enc.spec().input_dim != ds.dim() || gen.spec().output_dim != ds.dim()) {
      throw age::ShapeError("reconstruct: data has D=" + std::to_string(ds.dim()) + ", encoder expects " +
                            std::to_string(enc.spec().input_dim) + ", generator produces " +
                            std::to_string(gen.spec().output_dim));
    }
    if (enc.spec().output_dim != gen.spec().input_dim) throw age::ShapeError("reconstruct: encoder and generator latent sizes differ");
    std::optional<Tensor> cond;
    if (enc.spec().condition_dim > 0) {
      if (!ds.has_labels()) throw age::InputError("reconstruct: conditional model needs a label column");
      cond = age::data::one_hot(ds.labels, enc.spec().condition_dim);
    }
    recon = gen.forward(enc.forward(ds.samples, cond ? &*cond : nullptr), cond ? &*cond : nullptr);
  }
  Tensor interleaved(2 * ds.size(), ds.dim());
  std::vector<std::size_t> labels;
  double l1 = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t c = 0; c < ds.dim(); ++c) {
      interleaved(2 * i, c) = ds.samples(i, c);
      interleaved(2 * i + 1, c) = recon(i, c);
      l1 += std::abs(ds.samples(i, c) - recon(i, c));
    }
    if (ds.has_labels()) {
      labels.push_back(ds.labels[i]);
      labels.push_back(ds.labels[i]);
    }
  }
  l1 /= static_cast<double>(ds.size());
  const std::string out = g.out.empty() ? "reconstructions.csv" : g.out;
  auto os = open_out(out);
  age::data::write_csv(os, &interleaved, labels, ds.dim());
  std::printf("{\"mean_l1\": %s, \"n\": %zu}\n", age::data::format_double(l1).c_str(), ds.size());
  return 0;
}

// ---- interpolate ----

struct InterpolateFlags {
  std::string encoder, generator, x1, x2, codes_out;
  std::size_t steps = 11;
  std::optional<std::size_t> label;
  bool identity_stubs = false;
};

int cmd_interpolate(const Globals& g, const InterpolateFlags& f) {
  if (f.steps < 2) throw age::InputError("--steps must be >= 2");
  const auto p1 = parse_point(f.x1, "--x1");
  const auto p2 = parse_point(f.x2, "--x2");
  if (p1.size() != p2.size()) throw age::ShapeError("--x1 and --x2 have different dimensions");
  Tensor ends(2, p1.size());
  for (std::size_t c = 0; c < p1.size(); ++c) {
    ends(0, c) = p1[c];
    ends(1, c) = p2[c];
  }

  std::optional<age::nets::Network> enc, gen;
  std::optional<Tensor> cond1, cond_all;
  Tensor codes;
  if (f.identity_stubs) {
    codes = age::latent::project_to_sphere(ends);
  } else {
    age::nets::CheckpointMeta em, gm;
    enc = load_role(f.encoder, "encoder", em);
    gen = load_role(f.generator, "generator", gm);
    if (enc->spec().input_dim != p1.size()) throw age::ShapeError("interpolate: endpoints do not match encoder input");
    if (enc->spec().condition_dim > 0) {
      if (!f.label) throw age::InputError("interpolate: conditional model needs --label");
      cond1 = conditions_for(*enc, 2, f.label);
      cond_all = conditions_for(*gen, f.steps, f.label);
    }
    codes = enc->forward(ends, cond1 ? &*cond1 : nullptr);
  }
  const std::size_t m = codes.cols();
  Tensor path(f.steps, m);
  for (std::size_t s = 0; s < f.steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(f.steps - 1);
    const auto z = age::latent::slerp(codes.row_span(0), codes.row_span(1), t);
    for (std::size_t c = 0; c < m; ++c) path(s, c) = z[c];
  }
  const Tensor decoded = f.identity_stubs ? path : gen->forward(path, cond_all ? &*cond_all : nullptr);
  const std::string out = g.out.empty() ? "interpolation.csv" : g.out;
  {
    auto os = open_out(out);
    age::data::write_csv(os, &decoded, {}, decoded.cols());
  }
  if (!f.codes_out.empty()) {
    auto os = open_out(f.codes_out);
    age::data::write_csv(os, &path, {}, m);
  }
  log_at(LogLevel::Info, "interpolate: wrote %zu steps to %s", f.steps, out.c_str());
  return 0;
}

// ---- eval-divergence ----

struct EvalFlags {
  std::string input;
  std::string method = "parametric-kl";
  std::size_t k = 5;
};

int cmd_eval_divergence(const Globals&, const EvalFlags& f) {
  const auto method = age::divergence::parse_method(f.method);
  const auto ds = age::data::load_csv(f.input);
  age::divergence::DivergenceEstimate est =
      method == age::divergence::Method::KnnKl ? age::divergence::knn_kl_vs_unit_gaussian(ds.samples, f.k)
                                               : age::divergence::parametric_estimate(ds.samples, method);
  json j = {{"method", f.method}, {"value", est.value}, {"n", ds.size()}, {"M", ds.dim()}};
  if (method == age::divergence::Method::KnnKl) j["k"] = f.k;
  std::cout << j.dump() << '\n';
  return 0;
}

// ---- verify-theory ----

struct TheoryFlags {
  std::size_t max_k = 3;
  std::size_t trials = 50;
  bool negate = false;
};

int cmd_verify_theory(const Globals& g, const TheoryFlags& f) {
  namespace th = age::theory;
  th::FiniteDivergence div = th::finite_divergence;
  if (f.negate) div = [](const th::FiniteDistribution& p, const th::FiniteDistribution& q) { return -th::total_variation(p, q); };
  const auto certs = th::run_suite(f.max_k, f.trials, g.seed.value_or(0), div);
  json arr = json::array();
  for (const auto& c : certs) {
    arr.push_back({{"instance", c.instance},
                   {"kind", c.kind},
                   {"feasible", c.feasible},
                   {"flag", c.flag},
                   {"saddle_count", c.saddle_count},
                   {"all_aligned", c.all_aligned},
                   {"value", c.value},
                   {"violations", c.violations}});
    if (g_log != LogLevel::Quiet) {
      std::fprintf(stderr, "[%s] %s: %s%s%s\n", c.violations.empty() ? "ok" : "VIOLATION", c.instance.c_str(),
                   c.detail.c_str(), c.feasible ? "" : "; ", c.feasible ? "" : c.flag.c_str());
      for (const auto& v : c.violations) std::fprintf(stderr, "    %s\n", v.c_str());
    }
  }
  const std::size_t violations = th::count_violations(certs);
  std::cout << arr.dump(2) << '\n';
  log_at(LogLevel::Info, "verify-theory: %zu certificates, %zu violations", certs.size(), violations);
  return violations == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  init_log();
  CLI::App app{"Adversarial generator-encoder toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output directory (train) or file");

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train an encoder/generator pair");
  train->add_option("--iters", tf.iters, "Outer iterations");
  train->add_option("--batch-size", tf.batch_size, "Minibatch size");
  train->add_option("--latent-dim", tf.latent_dim, "Latent dimension M");
  train->add_option("--gen-updates", tf.gen_updates, "Generator steps per encoder step");
  train->add_option("--lr", tf.lr, "ADAM learning rate");
  train->add_option("--lambda", tf.lambda, "Latent reconstruction weight");
  train->add_option("--mu", tf.mu, "Data reconstruction weight");

  SampleFlags sf;
  auto* sample = app.add_subcommand("sample", "Draw samples from a generator checkpoint");
  sample->add_option("--ckpt", sf.ckpt, "Generator checkpoint")->required();
  sample->add_option("-n,--n", sf.n, "Number of samples");
  sample->add_option("--label", sf.label, "Condition label (conditional models)");
  sample->add_option("--prior", sf.prior, "Expected latent prior (sphere|gaussian)");
  sample->add_option("--height", sf.height, "Raster height (PPM output)");
  sample->add_option("--width", sf.width, "Raster width (PPM output)");
  sample->add_option("--grid-cols", sf.grid_cols, "Tiles per PPM row");

  ReconstructFlags rf;
  auto* recon = app.add_subcommand("reconstruct", "Encode and decode a dataset");
  recon->add_option("--encoder", rf.encoder, "Encoder checkpoint");
  recon->add_option("--generator", rf.generator, "Generator checkpoint");
  recon->add_option("--data", rf.data, "Input CSV")->required();
  recon->add_flag("--identity-stubs", rf.identity_stubs, "Replace both nets by the identity")->group("");

  InterpolateFlags inf;
  auto* interp = app.add_subcommand("interpolate", "Slerp between the codes of two points");
  interp->add_option("--encoder", inf.encoder, "Encoder checkpoint");
  interp->add_option("--generator", inf.generator, "Generator checkpoint");
  interp->add_option("--x1", inf.x1, "First endpoint, comma separated")->required();
  interp->add_option("--x2", inf.x2, "Second endpoint, comma separated")->required();
  interp->add_option("--steps", inf.steps, "Number of points including endpoints");
  interp->add_option("--label", inf.label, "Condition label (conditional models)");
  interp->add_option("--codes-out", inf.codes_out, "Also write the latent path as CSV");
  interp->add_flag("--identity-stubs", inf.identity_stubs, "Replace both nets by the identity")->group("");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval-divergence", "Divergence of a sample set from N(0, I)");
  eval->add_option("--input", ef.input, "Input CSV")->required();
  eval->add_option("--method", ef.method, "parametric-kl|paper-normalization|knn-kl");
  eval->add_option("--k", ef.k, "Neighbour rank for knn-kl");

  TheoryFlags thf;
  auto* theory = app.add_subcommand("verify-theory", "Certify the finite-space equilibrium results");
  theory->add_option("--max-k", thf.max_k, "Largest support size for random instances");
  theory->add_option("--trials", thf.trials, "Random feasible instances");
  theory->add_flag("--inject-negated-divergence", thf.negate, "Mutation canary")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(g, tf);
    if (*sample) return cmd_sample(g, sf);
    if (*recon) {
      if (!rf.identity_stubs && (rf.encoder.empty() || rf.generator.empty())) {
        throw age::InputError("reconstruct: --encoder and --generator are required");
      }
      return cmd_reconstruct(g, rf);
    }
    if (*interp) {
      if (!inf.identity_stubs && (inf.encoder.empty() || inf.generator.empty())) {
        throw age::InputError("interpolate: --encoder and --generator are required");
      }
      return cmd_interpolate(g, inf);
    }
    if (*eval) return cmd_eval_divergence(g, ef);
    if (*theory) return cmd_verify_theory(g, thf);
  } catch (const age::GeometryError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const age::NumericAbort& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
