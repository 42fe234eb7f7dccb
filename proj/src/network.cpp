/*
 * Copyright 2026 The newton-forge Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "newton_forge/network.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "newton_forge/error.hpp"
#include "newton_forge/random.hpp"

namespace nforge {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  return "?";
}

std::string_view to_string(LossKind l) {
  return l == LossKind::kSumSquaredError ? "sse" : "cross_entropy";
}

Activation parse_activation(std::string_view s) {
  for (auto a : {Activation::kIdentity, Activation::kRelu, Activation::kTanh,
                 Activation::kSigmoid, Activation::kSoftmax}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

LossKind parse_loss(std::string_view s) {
  if (s == "sse") return LossKind::kSumSquaredError;
  if (s == "cross_entropy") return LossKind::kCrossEntropy;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

Network build_mlp(std::size_t input_dim, std::vector<LayerSpec> layers, LossKind loss) {
  if (input_dim == 0) throw ConfigError("network: input_dim must be >= 1");
  if (layers.empty()) throw ConfigError("network: at least one layer is required");
  for (std::size_t d = 0; d < layers.size(); ++d) {
    if (layers[d].width == 0) {
      throw ConfigError("network: layer " + std::to_string(d + 1) + " has zero width");
    }
    if (layers[d].activation == Activation::kSoftmax && d + 1 != layers.size()) {
      throw ConfigError("network: softmax is only allowed on the final layer");
    }
  }
  const bool softmax_out = layers.back().activation == Activation::kSoftmax;
  if (loss == LossKind::kCrossEntropy && !softmax_out) {
    throw ConfigError("network: cross_entropy requires a softmax output layer");
  }

  Network net;
  net.input_dim_ = input_dim;
  net.loss_ = loss;
  std::size_t fan_in = input_dim;
  for (const auto& layer : layers) {
    net.offsets_.push_back(net.weight_count_);
    net.weight_count_ += (fan_in + 1) * layer.width;
    fan_in = layer.width;
  }
  net.layers_ = std::move(layers);
  return net;
}

std::string Network::arch() const {
  std::ostringstream s;
  s << input_dim_;
  for (const auto& l : layers_) s << ':' << l.width << to_string(l.activation);
  s << ':' << to_string(loss_);
  return s.str();
}

Network parse_arch(std::string_view arch) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (true) {
    const auto next = arch.find(':', pos);
    parts.push_back(arch.substr(pos, next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  if (parts.size() < 3) {
    throw ConfigError("arch '" + std::string(arch) +
                      "': expected <input_dim>:<width><activation>...:<loss>");
  }
  auto parse_size = [&](std::string_view s, std::string_view& rest) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr == s.data()) {
      throw ConfigError("arch '" + std::string(arch) + "': bad number in '" +
                        std::string(s) + "'");
    }
    rest = s.substr(static_cast<std::size_t>(ptr - s.data()));
    return v;
  };
  std::string_view rest;
  const std::size_t input_dim = parse_size(parts.front(), rest);
  if (!rest.empty()) throw ConfigError("arch: trailing text after input_dim");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 1; i + 1 < parts.size(); ++i) {
    const std::size_t width = parse_size(parts[i], rest);
    layers.push_back({width, parse_activation(rest)});
  }
  return build_mlp(input_dim, std::move(layers), parse_loss(parts.back()));
}

void validate_batch(const Network& network, const Batch& batch) {
  if (batch.features.rows() < 1) throw DimensionError("batch is empty");
  if (static_cast<std::size_t>(batch.features.cols()) != network.input_dim()) {
    throw DimensionError("batch has " + std::to_string(batch.features.cols()) +
                         " feature columns, input layer expects " +
                         std::to_string(network.input_dim()));
  }
  if (batch.targets.rows() != batch.features.rows()) {
    throw DimensionError("batch features and targets have different row counts");
  }
  if (static_cast<std::size_t>(batch.targets.cols()) != network.output_dim()) {
    throw DimensionError("batch has " + std::to_string(batch.targets.cols()) +
                         " target columns, output layer has " +
                         std::to_string(network.output_dim()));
  }
  if (network.loss() == LossKind::kCrossEntropy) {
    for (Eigen::Index i = 0; i < batch.targets.rows(); ++i) {
      const auto row = batch.targets.row(i);
      const auto ones = (row.array() == 1.0).count();
      const auto zeros = (row.array() == 0.0).count();
      if (ones != 1 || ones + zeros != row.size()) {
        throw DataError("cross_entropy target row " + std::to_string(i) +
                        " is not one-hot");
      }
    }
  }
}

WeightVector init_weights(const Network& network, std::uint64_t seed) {
  Rng rng(seed);
  WeightVector w = WeightVector::Zero(static_cast<Eigen::Index>(network.weight_count()));
  std::size_t fan_in = network.input_dim();
  for (std::size_t d = 0; d < network.layers().size(); ++d) {
    const std::size_t fan_out = network.layers()[d].width;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Eigen::Map<Matrix> block(w.data() + network.layer_offset(d),
                             static_cast<Eigen::Index>(fan_in + 1),
                             static_cast<Eigen::Index>(fan_out));
    for (Eigen::Index j = 0; j < block.cols(); ++j) {
      for (Eigen::Index i = 0; i + 1 < block.rows(); ++i) {
        block(i, j) = rng.uniform(-limit, limit);
      }
    }
    fan_in = fan_out;
  }
  return w;
}

NetworkObjective::NetworkObjective(const Network& network, const Batch& batch)
    : network_(&network), batch_(&batch) {
  validate_batch(network, batch);
  augmented_.resize(batch.features.rows(), batch.features.cols() + 1);
  augmented_.leftCols(batch.features.cols()) = batch.features;
  augmented_.col(batch.features.cols()).setOnes();
}

autodiff::Recording NetworkObjective::record(autodiff::Tape& tape,
                                             const WeightVector& weights) const {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  std::size_t fan_in = network_->input_dim();
  for (const auto& layer : network_->layers()) {
    shapes.emplace_back(static_cast<Eigen::Index>(fan_in + 1),
                        static_cast<Eigen::Index>(layer.width));
    fan_in = layer.width;
  }
  autodiff::Recording rec;
  rec.params = autodiff::bind_parameters(tape, weights, shapes);

  autodiff::NodeId x = tape.constant(augmented_);
  const auto& layers = network_->layers();
  for (std::size_t d = 0; d < layers.size(); ++d) {
    const autodiff::NodeId z = tape.matmul(x, rec.params[d].node);
    const bool last = d + 1 == layers.size();
    if (last && network_->loss() == LossKind::kCrossEntropy) {
      rec.loss = tape.softmax_cross_entropy(z, tape.constant(batch_->targets));
      return rec;
    }
    autodiff::NodeId a = z;
    switch (layers[d].activation) {
      case Activation::kIdentity: break;
      case Activation::kRelu: a = tape.relu(z); break;
      case Activation::kTanh: a = tape.tanh(z); break;
      case Activation::kSigmoid: a = tape.sigmoid(z); break;
      case Activation::kSoftmax: a = tape.softmax(z); break;
    }
    if (last) {
      const autodiff::NodeId r = tape.sub(a, tape.constant(batch_->targets));
      rec.loss = tape.dot(r, r);
      return rec;
    }
    x = tape.append_ones_col(a);
  }
  return rec;
}

autodiff::ForwardPass record_forward(const Network& network, const WeightVector& weights,
                                     const Batch& batch) {
  const NetworkObjective objective(network, batch);
  return autodiff::record_forward(objective, weights);
}

GradVector hvp(const Network& network, const WeightVector& weights, const Batch& batch,
               const Vector& direction) {
  const NetworkObjective objective(network, batch);
  return autodiff::hvp(objective, weights, direction);
}

double loss_value(const Network& network, const WeightVector& weights,
                  const Batch& batch) {
  return record_forward(network, weights, batch).loss;
}

Matrix predict(const Network& network, const WeightVector& weights,
               const Matrix& features) {
  if (static_cast<std::size_t>(features.cols()) != network.input_dim()) {
    throw DimensionError("predict: feature width does not match the input layer");
  }
  if (static_cast<std::size_t>(weights.size()) != network.weight_count()) {
    throw DimensionError("predict: weight vector length does not match the network");
  }
  Matrix a = features;
  std::size_t fan_in = network.input_dim();
  for (std::size_t d = 0; d < network.layers().size(); ++d) {
    const auto& layer = network.layers()[d];
    Eigen::Map<const Matrix> block(weights.data() + network.layer_offset(d),
                                   static_cast<Eigen::Index>(fan_in + 1),
                                   static_cast<Eigen::Index>(layer.width));
    Matrix z = a * block.topRows(static_cast<Eigen::Index>(fan_in));
    z.rowwise() += block.row(static_cast<Eigen::Index>(fan_in));
    switch (layer.activation) {
      case Activation::kIdentity: break;
      case Activation::kRelu: z = z.cwiseMax(0.0); break;
      case Activation::kTanh: z = z.array().tanh().matrix(); break;
      case Activation::kSigmoid: z = (1.0 / (1.0 + (-z.array()).exp())).matrix(); break;
      case Activation::kSoftmax:
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
          z.row(i) = (z.row(i).array() - z.row(i).maxCoeff()).exp().matrix();
          z.row(i) /= z.row(i).sum();
        }
        break;
    }
    a = std::move(z);
    fan_in = layer.width;
  }
  return a;
}

double accuracy(const Network& network, const WeightVector& weights,
                const Batch& batch) {
  if (batch.size() == 0) return 0.0;
  const Matrix out = predict(network, weights, batch.features);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::Index p = 0;
    Eigen::Index t = 0;
    out.row(i).maxCoeff(&p);
    batch.targets.row(i).maxCoeff(&t);
    if (p == t) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(out.rows());
}

namespace {

constexpr std::string_view kMagic = "newton-forge-model";

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0x00000000000000ffULL) << 56) | ((v & 0x000000000000ff00ULL) << 40) |
        ((v & 0x0000000000ff0000ULL) << 24) | ((v & 0x00000000ff000000ULL) << 8) |
        ((v & 0x000000ff00000000ULL) >> 8) | ((v & 0x0000ff0000000000ULL) >> 24) |
        ((v & 0x00ff000000000000ULL) >> 40) | ((v & 0xff00000000000000ULL) >> 56);
  }
  return v;
}

}  // namespace

void save_model(std::ostream& out, const Network& network, const WeightVector& weights) {
  if (static_cast<std::size_t>(weights.size()) != network.weight_count()) {
    throw DimensionError("save_model: weight vector length does not match the network");
  }
  out << kMagic << " v1 n=" << network.weight_count() << " arch=" << network.arch()
      << '\n';
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(weights[i]));
    char buf[8];
    std::memcpy(buf, &bits, sizeof buf);
    out.write(buf, sizeof buf);
  }
  if (!out) throw DataError("save_model: write failed");
}

void save_model(const std::string& path, const Network& network,
                const WeightVector& weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_model: cannot open '" + path + "'");
  save_model(out, network, weights);
}

Model load_model(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw DataError("load_model: missing header line");
  std::istringstream fields(header);
  std::string magic, version, n_field, arch_field;
  fields >> magic >> version >> n_field >> arch_field;
  if (magic != kMagic || version != "v1") {
    throw DataError("load_model: not a newton-forge-model v1 file");
  }
  if (n_field.rfind("n=", 0) != 0 || arch_field.rfind("arch=", 0) != 0) {
    throw DataError("load_model: malformed header '" + header + "'");
  }
  std::size_t n = 0;
  const std::string_view n_text = std::string_view(n_field).substr(2);
  auto [ptr, ec] = std::from_chars(n_text.data(), n_text.data() + n_text.size(), n);
  if (ec != std::errc{} || ptr != n_text.data() + n_text.size()) {
    throw DataError("load_model: bad weight count '" + n_field + "'");
  }
  Model model{parse_arch(std::string_view(arch_field).substr(5)), {}};
  if (model.network.weight_count() != n) {
    throw DataError("load_model: header n=" + std::to_string(n) +
                    " disagrees with arch weight count " +
                    std::to_string(model.network.weight_count()));
  }
  model.weights.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    char buf[8];
    if (!in.read(buf, sizeof buf)) {
      throw DataError("load_model: truncated after " + std::to_string(i) + " weights");
    }
    std::uint64_t bits = 0;
    std::memcpy(&bits, buf, sizeof buf);
    model.weights[static_cast<Eigen::Index>(i)] =
        std::bit_cast<double>(to_little_endian(bits));
  }
  return model;
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_model: cannot open '" + path + "'");
  return load_model(in);
}

}  // namespace nforge
