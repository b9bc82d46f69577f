#pragma once

// Strict JSON run configuration for the command-line tool. Unknown keys and
// ill-typed values are rejected with the offending field path.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "age/agegame.hpp"
#include "age/datagen.hpp"
#include "age/error.hpp"

namespace age::config {

using nlohmann::json;

// Raised for any invalid configuration; `field` is a dotted path.
class ConfigError : public InputError {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : InputError("config: " + field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct DataConfig {
  std::string kind = "ring";  // ring | checkerboard | point-mass | csv
  std::size_t n_modes = 8;
  double radius = 2.0;
  double std = 0.02;
  std::size_t n = 8000;
  std::uint64_t seed = 0;
  std::vector<double> x0{0.0, 0.0};
  std::string path;
};

struct RunConfig {
  DataConfig data;
  game::GameConfig game;
  std::size_t iters = 20000;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
};

namespace detail {

inline void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.contains(key)) throw ConfigError(path.empty() ? key : path + "." + key, "unknown key");
  }
}

inline double get_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  return v.get<double>();
}

inline std::uint64_t get_count(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(path, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::string get_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path, "expected a string");
  return v.get<std::string>();
}

inline bool get_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
  return v.get<bool>();
}

inline std::vector<std::size_t> get_widths(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array of widths");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto w = get_count(v[i], path + "[" + std::to_string(i) + "]");
    if (w == 0) throw ConfigError(path + "[" + std::to_string(i) + "]", "width must be >= 1");
    out.push_back(w);
  }
  return out;
}

}  // namespace detail

inline void apply_data(DataConfig& d, const json& j) {
  using namespace detail;
  check_keys(j, "data", {"kind", "params", "path"});
  if (j.contains("kind")) d.kind = get_string(j["kind"], "data.kind");
  if (d.kind != "ring" && d.kind != "checkerboard" && d.kind != "point-mass" && d.kind != "csv") {
    throw ConfigError("data.kind", "expected ring|checkerboard|point-mass|csv, got '" + d.kind + "'");
  }
  if (j.contains("path")) d.path = get_string(j["path"], "data.path");
  if (d.kind == "csv" && d.path.empty()) throw ConfigError("data.path", "required for kind csv");
  if (!j.contains("params")) return;
  const json& p = j["params"];
  if (d.kind == "ring") check_keys(p, "data.params", {"n_modes", "radius", "std", "n", "seed"});
  if (d.kind == "checkerboard") check_keys(p, "data.params", {"n", "seed"});
  if (d.kind == "point-mass") check_keys(p, "data.params", {"x0", "n"});
  if (d.kind == "csv") check_keys(p, "data.params", {});
  if (p.contains("n_modes")) d.n_modes = get_count(p["n_modes"], "data.params.n_modes");
  if (p.contains("radius")) d.radius = get_number(p["radius"], "data.params.radius");
  if (p.contains("std")) d.std = get_number(p["std"], "data.params.std");
  if (p.contains("n")) d.n = get_count(p["n"], "data.params.n");
  if (p.contains("seed")) d.seed = get_count(p["seed"], "data.params.seed");
  if (p.contains("x0")) {
    if (!p["x0"].is_array() || p["x0"].empty()) throw ConfigError("data.params.x0", "expected a nonempty array");
    d.x0.clear();
    for (std::size_t i = 0; i < p["x0"].size(); ++i)
      d.x0.push_back(get_number(p["x0"][i], "data.params.x0[" + std::to_string(i) + "]"));
  }
  if (d.n_modes < 1) throw ConfigError("data.params.n_modes", "must be >= 1");
  if (!(d.std > 0.0)) throw ConfigError("data.params.std", "must be > 0");
  if (d.n < 1) throw ConfigError("data.params.n", "must be >= 1");
}

inline void apply_model(game::GameConfig& g, const json& j) {
  using namespace detail;
  check_keys(j, "model", {"M", "encoder_widths", "generator_widths", "prior", "condition", "activation", "leaky_slope"});
  if (j.contains("M")) g.latent_dim = get_count(j["M"], "model.M");
  if (j.contains("encoder_widths")) g.encoder_hidden = get_widths(j["encoder_widths"], "model.encoder_widths");
  if (j.contains("generator_widths")) g.generator_hidden = get_widths(j["generator_widths"], "model.generator_widths");
  if (j.contains("prior")) {
    const auto s = get_string(j["prior"], "model.prior");
    if (s != "sphere" && s != "gaussian") throw ConfigError("model.prior", "expected sphere|gaussian");
    g.prior = parse_prior(s);
  }
  if (j.contains("condition")) g.condition = get_bool(j["condition"], "model.condition");
  if (j.contains("activation")) {
    const auto s = get_string(j["activation"], "model.activation");
    if (s == "tanh") g.activation = nets::Activation::Tanh;
    else if (s == "leaky-relu") g.activation = nets::Activation::LeakyRelu;
    else throw ConfigError("model.activation", "expected tanh|leaky-relu");
  }
  if (j.contains("leaky_slope")) g.leaky_slope = get_number(j["leaky_slope"], "model.leaky_slope");
  if (g.latent_dim < 1) throw ConfigError("model.M", "must be >= 1");
  if (g.prior == Prior::Sphere && g.latent_dim < 2) throw ConfigError("model.M", "must be >= 2 for the sphere prior");
}

inline void apply_train(RunConfig& rc, const json& j) {
  using namespace detail;
  check_keys(j, "train",
             {"iters", "batch_size", "lr", "beta1", "beta2", "lambda", "mu", "gen_updates_per_enc", "seed",
              "divergence_method"});
  game::GameConfig& g = rc.game;
  if (j.contains("iters")) rc.iters = get_count(j["iters"], "train.iters");
  if (j.contains("batch_size")) g.batch_size = get_count(j["batch_size"], "train.batch_size");
  if (j.contains("lr")) g.lr = get_number(j["lr"], "train.lr");
  if (j.contains("beta1")) g.beta1 = get_number(j["beta1"], "train.beta1");
  if (j.contains("beta2")) g.beta2 = get_number(j["beta2"], "train.beta2");
  if (j.contains("lambda")) g.lambda = get_number(j["lambda"], "train.lambda");
  if (j.contains("mu")) g.mu = get_number(j["mu"], "train.mu");
  if (j.contains("gen_updates_per_enc")) g.gen_updates_per_enc = get_count(j["gen_updates_per_enc"], "train.gen_updates_per_enc");
  if (j.contains("seed")) rc.seed = get_count(j["seed"], "train.seed");
  if (j.contains("divergence_method")) {
    const auto s = get_string(j["divergence_method"], "train.divergence_method");
    if (s != "parametric-kl" && s != "paper-normalization") {
      throw ConfigError("train.divergence_method", "expected parametric-kl|paper-normalization");
    }
    g.divergence_method = divergence::parse_method(s);
  }
}

// Field-path validation of the game settings.
inline void validate(const RunConfig& rc) {
  const game::GameConfig& g = rc.game;
  if (!(g.lambda >= 0.0)) throw ConfigError("train.lambda", "must be >= 0");
  if (!(g.mu >= 0.0)) throw ConfigError("train.mu", "must be >= 0");
  if (g.gen_updates_per_enc < 1) throw ConfigError("train.gen_updates_per_enc", "must be >= 1");
  if (g.batch_size < 2) throw ConfigError("train.batch_size", "must be >= 2");
  if (!(g.lr > 0.0)) throw ConfigError("train.lr", "must be > 0");
  if (!(g.beta1 >= 0.0 && g.beta1 < 1.0)) throw ConfigError("train.beta1", "must be in [0, 1)");
  if (!(g.beta2 >= 0.0 && g.beta2 < 1.0)) throw ConfigError("train.beta2", "must be in [0, 1)");
  if (g.prior == Prior::Sphere && g.latent_dim < 2) throw ConfigError("model.M", "must be >= 2 for the sphere prior");
  if (rc.data.kind != "csv" && rc.data.kind != "point-mass" && g.batch_size > rc.data.n) {
    throw ConfigError("train.batch_size", "exceeds dataset size " + std::to_string(rc.data.n));
  }
}

inline RunConfig parse(const json& j, RunConfig rc = {}) {
  detail::check_keys(j, "", {"data", "model", "train", "out_dir"});
  if (j.contains("data")) apply_data(rc.data, j["data"]);
  if (j.contains("model")) apply_model(rc.game, j["model"]);
  if (j.contains("train")) apply_train(rc, j["train"]);
  if (j.contains("out_dir")) rc.out_dir = detail::get_string(j["out_dir"], "out_dir");
  validate(rc);
  return rc;
}

inline RunConfig load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("<file>", "cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
  }
  return parse(j);
}

// Every setting actually used, in the same schema `parse` accepts.
inline json resolved(const RunConfig& rc) {
  const game::GameConfig& g = rc.game;
  json data = {{"kind", rc.data.kind}};
  if (rc.data.kind == "ring") {
    data["params"] = {{"n_modes", rc.data.n_modes}, {"radius", rc.data.radius}, {"std", rc.data.std},
                      {"n", rc.data.n}, {"seed", rc.data.seed}};
  } else if (rc.data.kind == "checkerboard") {
    data["params"] = {{"n", rc.data.n}, {"seed", rc.data.seed}};
  } else if (rc.data.kind == "point-mass") {
    data["params"] = {{"x0", rc.data.x0}, {"n", rc.data.n}};
  } else {
    data["path"] = rc.data.path;
  }
  return {
      {"data", data},
      {"model",
       {{"M", g.latent_dim},
        {"encoder_widths", g.encoder_hidden},
        {"generator_widths", g.generator_hidden},
        {"prior", prior_name(g.prior)},
        {"condition", g.condition},
        {"activation", nets::activation_name(g.activation)},
        {"leaky_slope", g.leaky_slope}}},
      {"train",
       {{"iters", rc.iters},
        {"batch_size", g.batch_size},
        {"lr", g.lr},
        {"beta1", g.beta1},
        {"beta2", g.beta2},
        {"lambda", g.lambda},
        {"mu", g.mu},
        {"gen_updates_per_enc", g.gen_updates_per_enc},
        {"seed", rc.seed},
        {"divergence_method", divergence::method_name(g.divergence_method)}}},
      {"out_dir", rc.out_dir},
  };
}

inline data::Dataset build_dataset(const DataConfig& d) {
  if (d.kind == "ring") return data::make_gaussian_ring(d.n_modes, d.radius, d.std, d.n, d.seed);
  if (d.kind == "checkerboard") return data::make_checkerboard(d.n, d.seed);
  if (d.kind == "point-mass") return data::make_point_mass(d.x0, d.n);
  return data::load_csv(d.path);
}

}  // namespace age::config
