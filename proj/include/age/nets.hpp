#pragma once

// MLP encoder e: X -> Z and generator g: Z -> X, with an optional condition
// vector concatenated to the input of both.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "age/error.hpp"
#include "age/latentspace.hpp"
#include "age/ndcore.hpp"

namespace age::nets {

using nd::Tensor;
using nd::Var;

enum class Activation { Tanh, LeakyRelu };
enum class OutputTransform { Identity, SphereProjection, Tanh };

inline const char* activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "leaky-relu"; }
inline const char* transform_name(OutputTransform t) {
  switch (t) {
    case OutputTransform::Identity: return "identity";
    case OutputTransform::SphereProjection: return "sphere-projection";
    case OutputTransform::Tanh: return "tanh";
  }
  return "?";
}

struct MlpSpec {
  // Full width list: input_dim + condition_dim, hidden..., output_dim.
  std::vector<std::size_t> layer_widths;
  Activation activation = Activation::LeakyRelu;
  double leaky_slope = 0.2;
  OutputTransform output_transform = OutputTransform::Identity;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::size_t condition_dim = 0;

  void validate() const {
    if (layer_widths.size() < 2) throw std::invalid_argument("MlpSpec: need at least input and output widths");
    for (std::size_t w : layer_widths) {
      if (w == 0) throw std::invalid_argument("MlpSpec: zero-width layer");
    }
    if (layer_widths.front() != input_dim + condition_dim) {
      throw std::invalid_argument("MlpSpec: first width must equal input_dim + condition_dim");
    }
    if (layer_widths.back() != output_dim) {
      throw std::invalid_argument("MlpSpec: last width must equal output_dim");
    }
  }

  bool operator==(const MlpSpec&) const = default;
};

inline MlpSpec make_spec(std::size_t input_dim, std::size_t condition_dim,
                         const std::vector<std::size_t>& hidden, std::size_t output_dim,
                         OutputTransform out, Activation act = Activation::LeakyRelu) {
  MlpSpec spec;
  spec.input_dim = input_dim;
  spec.condition_dim = condition_dim;
  spec.output_dim = output_dim;
  spec.activation = act;
  spec.output_transform = out;
  spec.layer_widths.push_back(input_dim + condition_dim);
  spec.layer_widths.insert(spec.layer_widths.end(), hidden.begin(), hidden.end());
  spec.layer_widths.push_back(output_dim);
  spec.validate();
  return spec;
}

class Network {
 public:
  Network() = default;
  explicit Network(MlpSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    for (std::size_t l = 0; l + 1 < spec_.layer_widths.size(); ++l) {
      params_.emplace_back(spec_.layer_widths[l], spec_.layer_widths[l + 1]);
      params_.emplace_back(1, spec_.layer_widths[l + 1]);
    }
    for (Tensor& p : params_) p.set_requires_grad(true);
  }

  const MlpSpec& spec() const { return spec_; }
  std::size_t num_layers() const { return params_.size() / 2; }
  Tensor& weight(std::size_t layer) { return params_.at(2 * layer); }
  Tensor& bias(std::size_t layer) { return params_.at(2 * layer + 1); }
  const Tensor& weight(std::size_t layer) const { return params_.at(2 * layer); }
  const Tensor& bias(std::size_t layer) const { return params_.at(2 * layer + 1); }

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::vector<Tensor*> param_ptrs() {
    std::vector<Tensor*> out;
    for (Tensor& p : params_) out.push_back(&p);
    return out;
  }
  std::size_t num_params() const {
    std::size_t n = 0;
    for (const Tensor& p : params_) n += p.size();
    return n;
  }
  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  // Records the forward pass on `tape`. With track_params=false the
  // parameters enter as constants and receive no gradient.
  Var forward(nd::Tape& tape, Var input, std::optional<Var> condition = std::nullopt,
              bool track_params = true) {
    if (input.cols() != spec_.input_dim) {
      throw ShapeError("forward: input has " + std::to_string(input.cols()) + " columns, network expects " +
                       std::to_string(spec_.input_dim));
    }
    Var h = input;
    if (spec_.condition_dim > 0) {
      if (!condition) throw ShapeError("forward: network expects a condition of width " + std::to_string(spec_.condition_dim));
      if (condition->cols() != spec_.condition_dim || condition->rows() != input.rows()) {
        throw ShapeError("forward: condition shape " + condition->value().shape_string() + " does not match");
      }
      h = nd::concat_cols(h, *condition);
    } else if (condition) {
      throw ShapeError("forward: network takes no condition");
    }
    const std::size_t n = input.rows();
    const std::size_t layers = num_layers();
    for (std::size_t l = 0; l < layers; ++l) {
      Var w = track_params ? tape.leaf(weight(l)) : tape.constant(weight(l));
      Var b = track_params ? tape.leaf(bias(l)) : tape.constant(bias(l));
      h = nd::matmul(h, w) + nd::broadcast_row(b, n);
      if (l + 1 < layers) {
        h = spec_.activation == Activation::Tanh ? nd::tanh(h) : nd::leaky_relu(h, spec_.leaky_slope);
      }
    }
    switch (spec_.output_transform) {
      case OutputTransform::SphereProjection: return latent::project_to_sphere(h);
      case OutputTransform::Tanh: return nd::tanh(h);
      case OutputTransform::Identity: return h;
    }
    return h;
  }

  Tensor forward(const Tensor& input, const Tensor* condition = nullptr) {
    nd::Tape tape;
    std::optional<Var> c;
    if (condition != nullptr) c = tape.constant(*condition);
    return forward(tape, tape.constant(input), c, false).value();
  }

 private:
  MlpSpec spec_;
  std::vector<Tensor> params_;
};

// He-scaled Gaussian weights N(0, 2/fan_in), zero biases.
inline Network init_network(const MlpSpec& spec, std::uint64_t seed) {
  Network net(spec);
  Rng rng(seed);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Tensor& w = net.weight(l);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(w.rows())));
    for (double& v : w.data()) v = normal(rng);
  }
  return net;
}

// ---- checkpoints ----
//
// "AGE1\n", one JSON line with the spec and metadata, then every parameter
// tensor (W0, b0, W1, b1, ...) as little-endian IEEE-754 doubles.

struct CheckpointMeta {
  std::string role;  // "encoder" | "generator" | ""
  Prior prior = Prior::Sphere;
};

inline nlohmann::json spec_to_json(const MlpSpec& s) {
  return {{"layer_widths", s.layer_widths},
          {"activation", activation_name(s.activation)},
          {"leaky_slope", s.leaky_slope},
          {"output_transform", transform_name(s.output_transform)},
          {"input_dim", s.input_dim},
          {"output_dim", s.output_dim},
          {"condition_dim", s.condition_dim}};
}

inline MlpSpec spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.layer_widths = j.at("layer_widths").get<std::vector<std::size_t>>();
  const auto act = j.at("activation").get<std::string>();
  if (act == "tanh") s.activation = Activation::Tanh;
  else if (act == "leaky-relu") s.activation = Activation::LeakyRelu;
  else throw InputError("checkpoint: unknown activation '" + act + "'");
  s.leaky_slope = j.at("leaky_slope").get<double>();
  const auto out = j.at("output_transform").get<std::string>();
  if (out == "identity") s.output_transform = OutputTransform::Identity;
  else if (out == "sphere-projection") s.output_transform = OutputTransform::SphereProjection;
  else if (out == "tanh") s.output_transform = OutputTransform::Tanh;
  else throw InputError("checkpoint: unknown output transform '" + out + "'");
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.output_dim = j.at("output_dim").get<std::size_t>();
  s.condition_dim = j.at("condition_dim").get<std::size_t>();
  return s;
}

namespace detail {
static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline void write_le_double(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline double read_le_double(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw InputError("checkpoint: truncated parameter data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}
}  // namespace detail

inline void save_checkpoint(const Network& net, const std::string& path, const CheckpointMeta& meta = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open checkpoint for writing: " + path);
  nlohmann::json header = spec_to_json(net.spec());
  header["role"] = meta.role;
  header["prior"] = prior_name(meta.prior);
  os << "AGE1\n" << header.dump() << "\n";
  for (const Tensor& p : net.params())
    for (double v : p.data()) detail::write_le_double(os, v);
  if (!os) throw InputError("failed writing checkpoint: " + path);
}

inline Network load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint: " + path);
  std::string magic, line;
  if (!std::getline(is, magic) || magic != "AGE1") throw InputError("checkpoint: bad magic in " + path);
  if (!std::getline(is, line)) throw InputError("checkpoint: missing header line in " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint: malformed header: ") + e.what());
  }
  MlpSpec spec;
  try {
    spec = spec_from_json(header);
    spec.validate();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint: bad spec: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("checkpoint: bad spec: ") + e.what());
  }
  if (meta != nullptr) {
    meta->role = header.value("role", "");
    meta->prior = parse_prior(header.value("prior", "sphere"));
  }
  Network net(spec);
  for (Tensor& p : net.params())
    for (double& v : p.data()) v = detail::read_le_double(is);
  if (is.peek() != std::char_traits<char>::eof()) throw InputError("checkpoint: trailing bytes in " + path);
  return net;
}

}  // namespace age::nets
